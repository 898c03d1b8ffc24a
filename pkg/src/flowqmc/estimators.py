"""Importance sampling and independent-proposal Markov chain estimators
driven by flow samples, plus effective sample size and MC/RQMC ratios."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .flows import FlowModel, forward, standard_normal_logpdf
from .normal import gaussian_map
from .qmc import PointSet
from .targets import TargetDensity

__all__ = [
    "WeightedSample",
    "ChainOutput",
    "EstimateReport",
    "UnnormalizedWeightsError",
    "DegenerateSampleError",
    "DegenerateChainError",
    "UndefinedESSError",
    "DegenerateRatioError",
    "make_weighted_sample",
    "is_estimate",
    "snis_estimate",
    "acceptance_probability",
    "imrth_chain",
    "replication_counts",
    "iimc_chain",
    "ess",
    "make_report",
    "ratio_report",
]


class UnnormalizedWeightsError(ValueError):
    pass


class DegenerateSampleError(ArithmeticError):
    pass


class DegenerateChainError(ArithmeticError):
    pass


class UndefinedESSError(ArithmeticError):
    pass


class DegenerateRatioError(ArithmeticError):
    pass


@dataclass(frozen=True)
class WeightedSample:
    """Points with log importance weights ``log pi~ - log rho``.

    When ``normalized`` is set the target's normalizing constant has been
    removed and ``exp(log_weights)`` are the exact weights ``pi / rho``.
    """

    points: np.ndarray
    log_weights: np.ndarray
    normalized: bool
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.points.shape[0] != self.log_weights.shape[0]:
            raise ValueError("points and log_weights lengths differ")

    @property
    def n(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class ChainOutput:
    states: np.ndarray
    record: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.states.shape[0] < 1:
            raise DegenerateChainError("chain is empty")

    def __len__(self):
        return self.states.shape[0]


@dataclass(frozen=True)
class EstimateReport:
    name: str
    values: np.ndarray
    truth: Optional[float] = None
    ess: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.size < 1:
            raise ValueError("report needs at least one replication")
        object.__setattr__(self, "values", v)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def std(self) -> float:
        return float(np.std(self.values, ddof=1)) if self.values.size > 1 else float("nan")

    @property
    def stderr(self) -> float:
        return self.std / np.sqrt(self.values.size)

    @property
    def abs_errors(self) -> Optional[np.ndarray]:
        return None if self.truth is None else np.abs(self.values - self.truth)


def make_report(name, values, truth=None, ess=None) -> EstimateReport:
    return EstimateReport(name, np.asarray(values, float), truth,
                          None if ess is None else np.asarray(ess, float))


# ---------------------------------------------------------------------------
# importance sampling


def make_weighted_sample(flow: FlowModel, target: TargetDensity, points: PointSet,
                         map_kind: str = "inverse") -> WeightedSample:
    """Push uniform points through the Gaussian map and the flow and weight
    them against the target.

    The flow log-density at ``x = T(z)`` is ``log mu(z) - log|det J_T(z)|``,
    taken from the forward pass instead of inverting ``x``.
    """
    if points.d != flow.d or target.d != flow.d:
        raise ValueError(
            f"dimension mismatch: points d={points.d}, flow d={flow.d}, target d={target.d}"
        )
    z = gaussian_map(points, map_kind).values
    x, log_det = forward(flow, z)
    log_rho = standard_normal_logpdf(z) - log_det
    log_w = np.asarray(target.log_unnorm_density(x), dtype=float) - log_rho
    normalized = target.log_norm_const is not None
    if normalized:
        log_w = log_w - target.log_norm_const
    return WeightedSample(x, log_w, normalized,
                          {"seq": points.kind, "map": map_kind, "seed": points.seed})


def is_estimate(ws: WeightedSample, f) -> float:
    """Plain importance sampling mean of ``f * w``; needs normalized weights."""
    if not ws.normalized:
        raise UnnormalizedWeightsError(
            "weights are only known up to a constant; use snis_estimate instead"
        )
    return float(np.mean(f(ws.points) * np.exp(ws.log_weights)))


def _shifted_weights(log_w: np.ndarray) -> np.ndarray:
    finite = np.isfinite(log_w)
    if not finite.any():
        raise DegenerateSampleError("no point has a finite log-weight")
    m = np.max(log_w[finite])
    return np.where(finite, np.exp(log_w - m), 0.0)


def snis_estimate(ws: WeightedSample, f) -> float:
    """Self-normalized estimate ``sum w~ f / sum w~`` with a max shift in log space."""
    w = _shifted_weights(ws.log_weights)
    fx = f(ws.points)
    keep = w > 0
    return float(np.sum(w[keep] * fx[keep]) / np.sum(w[keep]))


# ---------------------------------------------------------------------------
# Markov chains


def acceptance_probability(log_w_current: float, log_w_proposal: float) -> float:
    """``min(1, w(y)/w(x))`` for an independent proposal."""
    return float(min(1.0, np.exp(min(0.0, log_w_proposal - log_w_current))))


def imrth_chain(ws: WeightedSample, seed: int) -> ChainOutput:
    """Independent Metropolis chain consuming proposals in sequence order.

    State 0 is the first proposal; no burn-in. Acceptance uniforms come from
    their own generator seeded by ``seed``.
    """
    n = ws.n
    if n < 2:
        raise ValueError("iMRTH needs at least two proposals")
    log_u = np.log(np.random.default_rng(seed).random(n - 1))
    lw = ws.log_weights.tolist()
    idx = np.empty(n, dtype=np.int64)
    accepted = np.zeros(n, dtype=bool)
    accepted[0] = True
    cur = 0
    cur_lw = lw[0]
    for t in range(1, n):
        if log_u[t - 1] < lw[t] - cur_lw:
            cur = t
            cur_lw = lw[t]
            accepted[t] = True
        idx[t] = cur
    idx[0] = 0
    return ChainOutput(ws.points[idx], accepted, dict(ws.provenance, kernel="imrth", seed=seed))


def replication_counts(kappa_w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Stochastic rounding: ``floor(k) + Bernoulli(frac(k))``, so ``E[N] = k``."""
    kappa_w = np.asarray(kappa_w, dtype=float)
    base = np.floor(kappa_w)
    return (base + (rng.random(kappa_w.shape) < (kappa_w - base))).astype(np.int64)


def iimc_chain(ws: WeightedSample, kappa: Union[float, str] = "auto", seed: int = 0) -> ChainOutput:
    """Independent importance Markov chain: point ``i`` repeated ``N_i`` times
    with ``E[N_i] = kappa * w~_i``.

    ``kappa="auto"`` uses ``n / sum(w~)`` from the same sample so that the
    expected chain length is ``n``.
    """
    if ws.n < 1:
        raise ValueError("empty sample")
    w = _shifted_weights(ws.log_weights)
    if kappa == "auto":
        kw = w * (ws.n / np.sum(w))
    else:
        if not kappa > 0:
            raise ValueError("kappa must be positive")
        m = np.max(ws.log_weights[np.isfinite(ws.log_weights)])
        kw = kappa * w * np.exp(m)
    counts = replication_counts(kw, np.random.default_rng(seed))
    if counts.sum() == 0:
        raise DegenerateChainError("every replication count is zero")
    states = np.repeat(ws.points, counts, axis=0)
    return ChainOutput(states, counts, dict(ws.provenance, kernel="iimc", seed=seed))


# ---------------------------------------------------------------------------
# diagnostics


def _autocorrelation(x: np.ndarray) -> np.ndarray:
    n = x.size
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    return acov / acov[0]


def ess(values: Sequence[float]) -> float:
    """Effective sample size ``n / (1 + 2 sum rho_k)`` with Geyer's initial
    positive sequence truncation, clamped to ``(0, n]``."""
    x = np.asarray(values, dtype=float)
    n = x.size
    if n < 10:
        raise ValueError("ess needs at least 10 values")
    if np.var(x) == 0.0:
        raise UndefinedESSError("zero-variance sequence")
    rho = _autocorrelation(x)
    pairs = rho[: 2 * (n // 2)].reshape(-1, 2).sum(axis=1)
    stop = np.flatnonzero(pairs <= 0.0)
    pairs = pairs[: stop[0]] if stop.size else pairs
    tau = -1.0 + 2.0 * pairs.sum()
    if tau <= 0.0:
        return float(n)
    return float(min(n, n / tau))


def ratio_report(mc: EstimateReport, rqmc: EstimateReport) -> float:
    """Ratio of empirical standard deviations, MC over RQMC."""
    if mc.values.size < 2 or rqmc.values.size < 2:
        raise ValueError("ratio needs at least two replications on each side")
    denom = rqmc.std
    if denom == 0.0:
        raise DegenerateRatioError("RQMC replications have zero spread")
    return mc.std / denom
