import json

import numpy as np
import pytest

from flowqmc.flows import init_flow, log_density
from flowqmc.persist import (
    FlowSchemaError,
    UnsupportedVersionError,
    flow_from_dict,
    flow_load,
    flow_save,
    flow_to_dict,
)

from .helpers import perturbed


@pytest.mark.parametrize("kind", ["affine", "rq_spline"])
def test_round_trip_is_bit_exact(tmp_path, kind):
    flow = perturbed(init_flow(3, 3, kind, hidden=(7, 5), bins=5, bound=3.5), 0.7, seed=1)
    path = tmp_path / "flow.json"
    flow_save(flow, path, meta={"note": "test"})
    back = flow_load(path)
    for a, b in zip(flow.parameters(), back.parameters()):
        assert np.array_equal(a, b)
    x = np.random.default_rng(2).normal(size=(100, 3)) * 2
    assert np.array_equal(log_density(flow, x), log_density(back, x))
    if kind == "rq_spline":
        assert back.layers[0].bins == 5 and back.layers[0].bound == 3.5


def test_missing_layers_field():
    doc = flow_to_dict(init_flow(2, 2, "affine", hidden=(3,)))
    del doc["layers"]
    with pytest.raises(FlowSchemaError) as err:
        flow_from_dict(doc)
    assert err.value.field == "layers"


def test_version_mismatch():
    doc = flow_to_dict(init_flow(2, 2, "affine", hidden=(3,)))
    doc["schema_version"] = 2
    with pytest.raises(UnsupportedVersionError):
        flow_from_dict(doc)


@pytest.mark.parametrize("mutate,field", [
    (lambda d: d["layers"][1]["conditioner"]["weights"].pop(), "layers[1].conditioner.weights"),
    (lambda d: d["layers"][0].pop("mask"), "layers[0].mask"),
    (lambda d: d["layers"][0]["mask"].append(True), "layers[0].mask"),
    (lambda d: d["layers"][0]["spline"].pop("K"), "layers[0].spline.K"),
])
def test_malformed_fields_are_named(mutate, field):
    doc = flow_to_dict(init_flow(2, 2, "rq_spline", hidden=(3,), bins=4))
    mutate(doc)
    with pytest.raises(FlowSchemaError) as err:
        flow_from_dict(doc)
    assert err.value.field == field


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(FlowSchemaError):
        flow_load(p)


def test_document_layout(tmp_path):
    flow = init_flow(2, 1, "rq_spline", hidden=(4,), bins=3)
    p = tmp_path / "f.json"
    flow_save(flow, p)
    doc = json.loads(p.read_text())
    assert doc["schema_version"] == 1 and doc["d"] == 2
    layer = doc["layers"][0]
    assert layer["spline"] == {"K": 3, "B": 4.0}
    assert layer["conditioner"]["sizes"] == [1, 4, 8]
    assert len(layer["conditioner"]["weights"]) == 1 * 4 + 4 * 8
