"""Replicated MC versus RQMC experiments on trained flows.

Every experiment is a pure function of its :class:`RunConfig`. Replication
``r`` of a stream tagged ``tag`` is randomized with the seed
``replication_seed(master, tag, r)``, derived with
``numpy.random.SeedSequence([master, crc32(tag), r])``, so no two
replications or streams share randomness. Outputs are CSV files with a
header row and floats written with 17 significant digits.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .estimators import (
    UndefinedESSError,
    ess,
    iimc_chain,
    imrth_chain,
    is_estimate,
    make_report,
    make_weighted_sample,
    ratio_report,
    snis_estimate,
)
from .flows import FlowModel, init_flow
from .persist import flow_load, flow_save, shipped_flow_path
from .qmc import (
    FIBONACCI_LATTICES,
    GeneratorConfig,
    PointSet,
    generate,
    halton_points,
    lattice_points,
    mc_points,
    sobol_points,
)
from .targets import (
    TargetDensity,
    dualmoon_reference_samples,
    dualmoon_target,
    gmm40_target,
    test_function,
)
from .training import TrainConfig, train, write_loss_trace

__all__ = [
    "ConfigError",
    "RunConfig",
    "FlowRecipe",
    "default_recipe",
    "train_recipe",
    "replication_seed",
    "point_set",
    "resolve_flow",
    "run_gmm_experiment",
    "run_dimension_sweep",
    "run_sequence_comparison",
    "run_markov_comparison",
    "run_experiment",
    "SEQUENCE_VARIANTS",
    "GMM_PHIS",
]

log = logging.getLogger(__name__)

EXPERIMENTS = ("gmm", "dim_sweep", "seq_compare", "markov")
SEQUENCES = ("mc", "sobol", "halton", "lattice")
MAPS = ("inverse", "box_muller")
GMM_PHIS = tuple(f"gmm:phi{k}" for k in range(1, 8))
DUALMOON_PHIS = ("dualmoon:phi1", "dualmoon:phi2")
#: proposal variants compared on dualmoon
SEQUENCE_VARIANTS = (
    ("mc", "inverse"),
    ("sobol", "inverse"),
    ("sobol", "box_muller"),
    ("halton", "inverse"),
    ("halton", "box_muller"),
)


class ConfigError(ValueError):
    """Invalid experiment or training configuration."""


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer, str)):
        return str(v)
    return format(float(v), ".17g")


def _write_csv(path: Path, header: Sequence[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _norm_map(map_kind: str) -> str:
    m = map_kind.replace("-", "_")
    if m == "inv":
        m = "inverse"
    if m not in MAPS:
        raise ConfigError(f"unknown map {map_kind!r}; choose from {MAPS}")
    return m


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RunConfig:
    """One experiment run.

    ``seq`` and ``map_kind`` name the RQMC side of MC-versus-RQMC
    comparisons (the MC side always uses the inverse map).
    ``log2_n_range`` is the inclusive range of ``log2 n`` swept by the
    sequence comparison.
    """

    experiment: str
    seq: str = "sobol"
    map_kind: str = "inverse"
    n: int = 2**14
    reps: int = 100
    dims: tuple[int, ...] = (2, 3, 4, 5, 6, 7, 8, 9, 10)
    flow: Optional[str] = None
    seed: int = 0
    out: str = "results"
    train: bool = False
    log2_n_range: tuple[int, int] = (8, 17)
    phi: str = "dualmoon:phi1"

    def __post_init__(self):
        exp = self.experiment.replace("-", "_")
        if exp == "dim_sweep" or exp == "seq_compare" or exp in EXPERIMENTS:
            object.__setattr__(self, "experiment", exp)
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if self.seq not in SEQUENCES:
            raise ConfigError(f"unknown sequence {self.seq!r}; choose from {SEQUENCES}")
        object.__setattr__(self, "map_kind", _norm_map(self.map_kind))
        if self.n < 2:
            raise ConfigError("n must be >= 2")
        if self.reps < 2:
            raise ConfigError("reps must be >= 2 to compute standard deviations")
        dims = tuple(int(d) for d in self.dims)
        if not dims or min(dims) < 2:
            raise ConfigError("dimensions must be >= 2")
        object.__setattr__(self, "dims", dims)
        lo, hi = self.log2_n_range
        if not 1 <= lo <= hi:
            raise ConfigError("log2_n_range must satisfy 1 <= lo <= hi")
        if self.phi not in DUALMOON_PHIS:
            raise ConfigError(f"phi must be one of {DUALMOON_PHIS}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.seq == "sobol" and self.n & (self.n - 1):
            warnings.warn(f"sobol with n={self.n}: use a power of 2", stacklevel=2)


def replication_seed(master: int, tag: str, r: int) -> int:
    """64-bit seed for replication ``r`` of stream ``tag``."""
    ss = np.random.SeedSequence([int(master), zlib.crc32(tag.encode()), int(r)])
    return int(ss.generate_state(1, np.uint64)[0])


def lattice_vector(n: int, d: int) -> tuple[int, ...]:
    if d == 2 and n in FIBONACCI_LATTICES:
        return FIBONACCI_LATTICES[n]
    raise ConfigError(
        f"no shipped lattice for n={n}, d={d}: lattices are available for d=2 with n in "
        f"{sorted(FIBONACCI_LATTICES)}; call lattice_points with your own z otherwise"
    )


def point_set(seq: str, n: int, d: int, seed: int) -> PointSet:
    """Randomized point set of kind ``seq``."""
    if seq == "mc":
        return mc_points(n, d, seed)
    if seq == "sobol":
        if n & (n - 1):
            return generate(GeneratorConfig("sobol", d, seed=seed), n)
        return sobol_points(n.bit_length() - 1, d, seed)
    if seq == "halton":
        return halton_points(n, d, seed)
    if seq == "lattice":
        return lattice_points(n, lattice_vector(n, d), seed)
    raise ConfigError(f"unknown sequence {seq!r}")


# ---------------------------------------------------------------------------
# flows


@dataclass(frozen=True)
class FlowRecipe:
    """Architecture and maximum-likelihood fit of a shipped flow.

    GMM flows are fit on exact mixture draws; dualmoon flows on
    ``n_reference`` draws from :func:`dualmoon_reference_samples`.
    """

    target: str
    d: int
    kind: str = "rq_spline"
    n_layers: int = 6
    hidden: tuple[int, ...] = (32, 32)
    bins: int = 8
    bound: float = 4.0
    steps: int = 3000
    batch_size: int = 512
    learning_rate: float = 1e-3
    final_lr_fraction: float = 0.05
    n_reference: int = 200_000
    seed: int = 0

    @property
    def name(self) -> str:
        return f"{self.target}_d{self.d}"


def default_recipe(target: str, d: int) -> FlowRecipe:
    if target == "gmm":
        if d != 2:
            raise ConfigError("the GMM benchmark is two-dimensional")
        # the modes span [-40, 40], so the spline box must cover them
        return FlowRecipe("gmm", 2, n_layers=10, hidden=(64, 64), bins=16, bound=50.0,
                          steps=10000, batch_size=1024, final_lr_fraction=0.02)
    if target == "dualmoon":
        return FlowRecipe("dualmoon", d)
    raise ConfigError(f"unknown target {target!r}")


def target_for(name: str, d: int) -> TargetDensity:
    if name == "gmm":
        return gmm40_target()
    if name == "dualmoon":
        return dualmoon_target(d)
    raise ConfigError(f"unknown target {name!r}")


def train_recipe(recipe: FlowRecipe, loss_trace: Optional[Path] = None) -> FlowModel:
    flow = init_flow(recipe.d, recipe.n_layers, recipe.kind, recipe.hidden,
                     recipe.bins, recipe.bound, seed=recipe.seed)
    cfg = TrainConfig("forward_kl", batch_size=recipe.batch_size, steps=recipe.steps,
                      learning_rate=recipe.learning_rate, seed=recipe.seed,
                      final_lr_fraction=recipe.final_lr_fraction)
    if recipe.target == "gmm":
        data = gmm40_target()
    else:
        data = dualmoon_reference_samples(recipe.d, recipe.n_reference, seed=recipe.seed)
    log.info("training %s (%d steps)", recipe.name, recipe.steps)
    result = train(flow, data, cfg)
    if loss_trace is not None:
        write_loss_trace(result.losses, loss_trace)
    return result.flow


def resolve_flow(config: RunConfig, target: str, d: int) -> FlowModel:
    """Flow for ``(target, d)``: from ``config.flow`` (a file, or a directory
    of ``<target>_d<d>.json``), trained on the spot with ``config.train``
    (cached under ``<out>/flows``), or the shipped one."""
    name = f"{target}_d{d}"
    if config.flow is not None:
        p = Path(config.flow)
        if p.is_dir():
            p = p / f"{name}.json"
        if not p.is_file():
            raise FileNotFoundError(f"flow file {p} not found; pass --train to fit one")
        return flow_load(p)
    if config.train:
        cache = Path(config.out) / "flows" / f"{name}.json"
        if cache.is_file():
            return flow_load(cache)
        recipe = default_recipe(target, d)
        cache.parent.mkdir(parents=True, exist_ok=True)
        flow = train_recipe(recipe, cache.with_suffix(".loss.csv"))
        flow_save(flow, cache, meta={"recipe": asdict(recipe)})
        return flow
    return flow_load(shipped_flow_path(name))


# ---------------------------------------------------------------------------
# experiments


def run_gmm_experiment(config: RunConfig) -> dict[str, Path]:
    """IS estimates of the seven GMM test functions, MC versus RQMC."""
    target = gmm40_target()
    flow = resolve_flow(config, "gmm", 2)
    phis = [test_function(p) for p in GMM_PHIS]
    sides = (("mc", "inverse"), (config.seq, config.map_kind))
    est = {}
    rows = []
    for seq, map_kind in sides:
        tag = f"gmm/{seq}/{map_kind}"
        vals = np.empty((config.reps, len(phis)))
        for r in range(config.reps):
            pts = point_set(seq, config.n, 2, replication_seed(config.seed, tag, r))
            ws = make_weighted_sample(flow, target, pts, map_kind)
            vals[r] = [is_estimate(ws, f) for f in phis]
            rows.append([seq, map_kind, r, *vals[r]])
        est[seq, map_kind] = vals
    out = Path(config.out)
    names = [p.split(":")[1] for p in GMM_PHIS]
    paths = {"estimates": _write_csv(out / "gmm_estimates.csv", ["seq", "map", "rep", *names], rows)}
    mc, rq = est[sides[0]], est[sides[1]]
    ratios = [ratio_report(make_report(n, mc[:, k]), make_report(n, rq[:, k]))
              for k, n in enumerate(names)]
    paths["ratios"] = _write_csv(out / "gmm_ratios.csv", names, [ratios])
    # per function: subtract the pooled mean and divide by the pooled sd
    pooled = np.concatenate([mc, rq])
    mu, sd = pooled.mean(axis=0), pooled.std(axis=0, ddof=1)
    sd = np.where(sd > 0, sd, 1.0)
    box = []
    for (seq, map_kind), vals in est.items():
        z = (vals - mu) / sd
        for r in range(config.reps):
            box.extend([seq, map_kind, names[k], r, z[r, k]] for k in range(len(names)))
    paths["boxplot"] = _write_csv(out / "gmm_boxplot.csv", ["seq", "map", "phi", "rep", "value"], box)
    return paths


def _snis_replications(flow, target, seq, map_kind, n, reps, seed, tag, phis):
    vals = np.empty((reps, len(phis)))
    for r in range(reps):
        pts = point_set(seq, n, target.d, replication_seed(seed, tag, r))
        ws = make_weighted_sample(flow, target, pts, map_kind)
        vals[r] = [snis_estimate(ws, f) for f in phis]
    return vals


def run_dimension_sweep(config: RunConfig) -> dict[str, Path]:
    """Dualmoon SNIS of the two odd test functions per dimension; the exact
    value is 0 by symmetry."""
    phis = [test_function(p) for p in DUALMOON_PHIS]
    rows = []
    for d in config.dims:
        target = dualmoon_target(d)
        flow = resolve_flow(config, "dualmoon", d)
        mc = _snis_replications(flow, target, "mc", "inverse", config.n, config.reps,
                                config.seed, f"dim/{d}/mc/inverse", phis)
        rq = _snis_replications(flow, target, config.seq, config.map_kind, config.n, config.reps,
                                config.seed, f"dim/{d}/{config.seq}/{config.map_kind}", phis)
        for k, name in enumerate(DUALMOON_PHIS):
            std_ratio = ratio_report(make_report(name, mc[:, k]), make_report(name, rq[:, k]))
            err_ratio = np.mean(np.abs(mc[:, k])) / np.mean(np.abs(rq[:, k]))
            rows.append([d, name.split(":")[1], std_ratio, err_ratio])
        log.info("dim %d done", d)
    path = _write_csv(Path(config.out) / "dim_sweep.csv",
                      ["dim", "phi", "std_ratio", "err_ratio"], rows)
    return {"dim_sweep": path}


def run_sequence_comparison(config: RunConfig) -> dict[str, Path]:
    """Mean absolute SNIS error on dualmoon d=2 against ``n``; each
    replication draws ``2**hi`` points and evaluates the nested prefixes."""
    target = dualmoon_target(2)
    flow = resolve_flow(config, "dualmoon", 2)
    phi = test_function(config.phi)
    lo, hi = config.log2_n_range
    ns = [2**m for m in range(lo, hi + 1)]
    rows = []
    for seq, map_kind in SEQUENCE_VARIANTS:
        errs = np.empty((config.reps, len(ns)))
        tag = f"seq/{seq}/{map_kind}"
        for r in range(config.reps):
            pts = point_set(seq, ns[-1], 2, replication_seed(config.seed, tag, r))
            ws = make_weighted_sample(flow, target, pts, map_kind)
            fx = phi(ws.points)
            lw = ws.log_weights
            for j, n in enumerate(ns):
                w = np.exp(lw[:n] - lw[:n].max())
                errs[r, j] = abs(np.sum(w * fx[:n]) / np.sum(w))
        rows.extend([seq, map_kind, n, errs[:, j].mean()] for j, n in enumerate(ns))
    path = _write_csv(Path(config.out) / "seq_compare.csv", ["seq", "map", "n", "mean_abs_err"], rows)
    return {"seq_compare": path}


def _chain_ess(values: np.ndarray) -> Optional[float]:
    try:
        return ess(values)
    except UndefinedESSError:
        return None


def run_markov_comparison(config: RunConfig) -> dict[str, Path]:
    """iMRTH and iIMC chains driven by the five proposal variants on
    dualmoon d=2, with SNIS on the same proposals as reference."""
    target = dualmoon_target(2)
    flow = resolve_flow(config, "dualmoon", 2)
    phi = test_function(config.phi)
    reps_rows, summary = [], []
    for seq, map_kind in SEQUENCE_VARIANTS:
        tag = f"markov/{seq}/{map_kind}"
        res = {m: ([], []) for m in ("imrth", "iimc", "snis")}
        for r in range(config.reps):
            pts = point_set(seq, config.n, 2, replication_seed(config.seed, tag, r))
            ws = make_weighted_sample(flow, target, pts, map_kind)
            accept_seed = replication_seed(config.seed, tag + "/accept", r)
            for method, chain in (("imrth", imrth_chain(ws, accept_seed)),
                                  ("iimc", iimc_chain(ws, "auto", accept_seed))):
                fx = phi(chain.states)
                res[method][0].append(fx.mean())
                res[method][1].append(_chain_ess(fx))
            res["snis"][0].append(snis_estimate(ws, phi))
            res["snis"][1].append(None)
            for method in res:
                v, e = res[method][0][-1], res[method][1][-1]
                reps_rows.append([seq, map_kind, method, r, v, e])
        for method, (vals, esses) in res.items():
            vals = np.asarray(vals)
            e = [x for x in esses if x is not None]
            summary.append([seq, map_kind, method, config.n, vals.mean(),
                            vals.std(ddof=1) / math.sqrt(vals.size), np.mean(np.abs(vals)),
                            np.mean(e) if e else None])
    out = Path(config.out)
    return {
        "markov": _write_csv(out / "markov.csv",
                             ["seq", "map", "method", "n", "mean", "stderr", "mean_abs_err", "mean_ess"],
                             summary),
        "markov_replications": _write_csv(out / "markov_replications.csv",
                                          ["seq", "map", "method", "rep", "estimate", "ess"],
                                          reps_rows),
    }


_RUNNERS = {
    "gmm": run_gmm_experiment,
    "dim_sweep": run_dimension_sweep,
    "seq_compare": run_sequence_comparison,
    "markov": run_markov_comparison,
}


def run_experiment(config: RunConfig) -> dict[str, Path]:
    return _RUNNERS[config.experiment](config)
