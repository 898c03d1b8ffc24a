"""Maps from uniform points on ``[0,1)^d`` to standard Gaussian points."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .qmc import PointSet

__all__ = [
    "GaussianPoints",
    "DimensionParityError",
    "U_MIN",
    "norm_ppf",
    "inv_cdf_map",
    "box_muller_map",
    "gaussian_map",
]

U_MIN = 2.0**-53

# Acklam's rational approximation, relative error < 1.2e-9 before refinement
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


class DimensionParityError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianPoints:
    values: np.ndarray
    map_kind: str

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


def _lower_half(p: np.ndarray) -> np.ndarray:
    """Quantile for ``p <= 0.5``."""
    x = np.empty_like(p)
    tail = p < _P_LOW
    q = np.sqrt(-2.0 * np.log(p[tail]))
    x[tail] = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
        (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
    )
    c = ~tail
    q = p[c] - 0.5
    r = q * q
    x[c] = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / (
        ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    )
    # one Halley step against the complementary error function
    e = 0.5 * erfc(-x / np.sqrt(2.0)) - p
    u = e * np.sqrt(2.0 * np.pi) * np.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def norm_ppf(u) -> np.ndarray:
    """Standard normal quantile with inputs clamped to ``[2**-53, 1 - 2**-53]``."""
    p = np.clip(np.asarray(u, dtype=np.float64), U_MIN, 1.0 - U_MIN)
    upper = p > 0.5
    # 1 - p is exact for p >= 0.5
    q = np.where(upper, 1.0 - p, p)
    x = _lower_half(q.ravel()).reshape(q.shape)
    return np.where(upper, -x, x)


def inv_cdf_map(points: PointSet) -> GaussianPoints:
    return GaussianPoints(norm_ppf(points.values), "inverse")


def box_muller_map(points: PointSet) -> GaussianPoints:
    """Pairs ``(u1, u2)`` map to ``r (cos 2 pi u2, sin 2 pi u2)``, ``r = sqrt(-2 log u1)``."""
    u = points.values
    if u.shape[1] % 2:
        raise DimensionParityError(f"box-muller needs an even dimension, got d={u.shape[1]}")
    u1 = np.maximum(u[:, 0::2], U_MIN)
    theta = 2.0 * np.pi * u[:, 1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    out = np.empty_like(u)
    out[:, 0::2] = r * np.cos(theta)
    out[:, 1::2] = r * np.sin(theta)
    return GaussianPoints(out, "box_muller")


def gaussian_map(points: PointSet, map_kind: str) -> GaussianPoints:
    if map_kind in ("inverse", "inv"):
        return inv_cdf_map(points)
    if map_kind in ("box_muller", "box-muller"):
        return box_muller_map(points)
    raise ValueError(f"unknown map kind {map_kind!r}")
