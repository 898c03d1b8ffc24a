"""JSON persistence for :class:`~flowqmc.flows.FlowModel`.

Document layout::

    {"schema_version": 1, "d": 2, "base": "standard_normal",
     "layers": [{"kind": "affine" | "rq_spline",
                 "mask": [true, false],
                 "spline": {"K": 8, "B": 4.0},          # rq_spline only
                 "conditioner": {"sizes": [1, 32, 32, 46],
                                 "activation": "tanh",
                                 "weights": [...],       # all matrices, row-major, in layer order
                                 "biases": [...]}}]}

Floats are written with Python's shortest round-trip representation, so a
save/load cycle reproduces every parameter bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path
from importlib import resources
from typing import Optional, Union

import numpy as np

from .flows import ConditionerMLP, CouplingLayer, FlowModel

__all__ = ["SCHEMA_VERSION", "FlowSchemaError", "UnsupportedVersionError",
           "flow_to_dict", "flow_from_dict", "flow_save", "flow_load",
           "shipped_flow_path", "shipped_flow"]

SCHEMA_VERSION = 1


class FlowSchemaError(ValueError):
    def __init__(self, field: str, problem: str):
        super().__init__(f"flow file field {field!r}: {problem}")
        self.field = field


class UnsupportedVersionError(FlowSchemaError):
    pass


def flow_to_dict(flow: FlowModel) -> dict:
    layers = []
    for layer in flow.layers:
        c = layer.conditioner
        entry = {
            "kind": layer.kind,
            "mask": list(layer.mask),
        }
        if layer.kind == "rq_spline":
            entry["spline"] = {"K": layer.bins, "B": float(layer.bound)}
        entry["conditioner"] = {
            "sizes": list(c.sizes),
            "activation": c.activation,
            "weights": np.concatenate([np.ravel(w) for w in c.weights]).tolist(),
            "biases": np.concatenate([np.ravel(b) for b in c.biases]).tolist(),
        }
        layers.append(entry)
    return {"schema_version": SCHEMA_VERSION, "d": flow.d, "base": flow.base, "layers": layers}


def _require(obj: dict, key: str, where: str):
    if not isinstance(obj, dict) or key not in obj:
        raise FlowSchemaError(f"{where}{key}", "missing")
    return obj[key]


def _conditioner(raw: dict, where: str) -> ConditionerMLP:
    sizes = [int(s) for s in _require(raw, "sizes", where)]
    weights = np.asarray(_require(raw, "weights", where), dtype=float)
    biases = np.asarray(_require(raw, "biases", where), dtype=float)
    activation = raw.get("activation", "tanh")
    n_w = sum(a * b for a, b in zip(sizes[:-1], sizes[1:]))
    n_b = sum(sizes[1:])
    if weights.size != n_w:
        raise FlowSchemaError(f"{where}weights", f"expected {n_w} values, got {weights.size}")
    if biases.size != n_b:
        raise FlowSchemaError(f"{where}biases", f"expected {n_b} values, got {biases.size}")
    ws, bs, pw, pb = [], [], 0, 0
    for a, b in zip(sizes[:-1], sizes[1:]):
        ws.append(weights[pw:pw + a * b].reshape(a, b))
        bs.append(biases[pb:pb + b].copy())
        pw += a * b
        pb += b
    try:
        return ConditionerMLP(tuple(sizes), tuple(ws), tuple(bs), activation)
    except ValueError as exc:
        raise FlowSchemaError(f"{where}activation", str(exc)) from exc


def flow_from_dict(doc: dict) -> FlowModel:
    version = _require(doc, "schema_version", "")
    if version != SCHEMA_VERSION:
        raise UnsupportedVersionError("schema_version", f"unsupported version {version!r}")
    d = int(_require(doc, "d", ""))
    base = doc.get("base", "standard_normal")
    if base != "standard_normal":
        raise FlowSchemaError("base", f"unsupported base {base!r}")
    raw_layers = _require(doc, "layers", "")
    if not isinstance(raw_layers, list) or not raw_layers:
        raise FlowSchemaError("layers", "must be a non-empty list")
    layers = []
    for k, raw in enumerate(raw_layers):
        where = f"layers[{k}]."
        kind = _require(raw, "kind", where)
        mask = [bool(m) for m in _require(raw, "mask", where)]
        if len(mask) != d:
            raise FlowSchemaError(f"{where}mask", f"length {len(mask)} != d={d}")
        bins, bound = 8, 4.0
        if kind == "rq_spline":
            spline = _require(raw, "spline", where)
            bins = int(_require(spline, "K", where + "spline."))
            bound = float(_require(spline, "B", where + "spline."))
        cond = _conditioner(_require(raw, "conditioner", where), where + "conditioner.")
        try:
            layers.append(CouplingLayer(tuple(mask), kind, cond, bins, bound))
        except ValueError as exc:
            raise FlowSchemaError(where.rstrip("."), str(exc)) from exc
    return FlowModel(d, tuple(layers))


def flow_save(flow: FlowModel, path: Union[str, Path], meta: Optional[dict] = None) -> None:
    """Write ``flow`` as JSON. ``meta`` (e.g. the training recipe) is stored
    alongside and ignored by :func:`flow_load`."""
    doc = flow_to_dict(flow)
    if meta is not None:
        doc["meta"] = meta
    Path(path).write_text(json.dumps(doc))


def flow_load(path: Union[str, Path]) -> FlowModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FlowSchemaError("<document>", f"invalid JSON: {exc}") from exc
    return flow_from_dict(doc)


def shipped_flow_path(name: str) -> Path:
    """Path of a pre-trained flow bundled with the package, e.g. ``"gmm_d2"``."""
    path = Path(str(resources.files("flowqmc") / "data" / "flows" / f"{name}.json"))
    if not path.is_file():
        raise FileNotFoundError(
            f"no shipped flow {name!r} at {path}; train one with scripts/train_flows.py "
            "or pass --train"
        )
    return path


def shipped_flow(name: str) -> FlowModel:
    return flow_load(shipped_flow_path(name))
