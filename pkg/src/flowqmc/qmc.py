"""Uniform point sets on the unit cube: plain MC, scrambled Sobol',
randomized Halton and shifted rank-1 lattices, plus an exact star
discrepancy for small instances.

Sobol' points use 32-bit digital arithmetic with the Joe--Kuo direction
numbers and are returned in Gray-code order. Gray-code order is a
permutation of natural order within every block of ``2**m`` leading points,
so the first ``2**m`` points form the same net in either ordering.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from ._joe_kuo import JOE_KUO_TABLE

__all__ = [
    "PointSet",
    "GeneratorConfig",
    "DimensionUnsupportedError",
    "DiscrepancySizeError",
    "MAX_SOBOL_DIM",
    "FIBONACCI_LATTICES",
    "mc_points",
    "sobol_points",
    "halton_points",
    "lattice_points",
    "generate",
    "first_primes",
    "star_discrepancy",
]

SOBOL_BITS = 32
HALTON_MAX_DIGITS = 64


class DimensionUnsupportedError(ValueError):
    pass


class DiscrepancySizeError(ValueError):
    pass


@dataclass(frozen=True)
class PointSet:
    """An ``n x d`` block of points in ``[0, 1)``.

    ``seed`` is ``None`` for deterministic (unrandomized) sequences.
    """

    values: np.ndarray
    kind: str
    seed: Optional[int] = None

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"point set must be a non-empty 2-D array, got shape {v.shape}")
        if not (np.all(v >= 0.0) and np.all(v < 1.0)):
            raise ValueError("point coordinates must lie in [0, 1)")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class GeneratorConfig:
    kind: str
    d: int
    randomize: bool = True
    seed: int = 0
    z: Optional[Sequence[int]] = None
    n: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("mc", "sobol", "halton", "lattice"):
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.kind == "sobol" and self.d > MAX_SOBOL_DIM:
            raise DimensionUnsupportedError(
                f"sobol supports d <= {MAX_SOBOL_DIM}, got {self.d}"
            )
        if self.kind == "lattice":
            if self.z is None or self.n is None:
                raise ValueError("lattice requires an explicit n and generating vector z")
            if len(self.z) != self.d:
                raise ValueError("generating vector length must equal d")


# ---------------------------------------------------------------------------
# Plain Monte Carlo


def mc_points(n: int, d: int, seed: int) -> PointSet:
    """i.i.d. uniform points from a PCG64 stream seeded by ``seed``."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    rng = np.random.default_rng(seed)
    return PointSet(rng.random((n, d)), kind="mc", seed=seed)


# ---------------------------------------------------------------------------
# Sobol'


def _parse_joe_kuo(table: str):
    rows = []
    for line in table.strip().splitlines()[1:]:
        parts = [int(t) for t in line.split()]
        _, s, a, *m = parts
        rows.append((s, a, m))
    return rows


_JOE_KUO_ROWS = _parse_joe_kuo(JOE_KUO_TABLE)
MAX_SOBOL_DIM = len(_JOE_KUO_ROWS) + 1


@lru_cache(maxsize=None)
def _direction_numbers(d: int) -> np.ndarray:
    """``(d, 32)`` array of direction integers ``v_k = m_k * 2**(32-k)``."""
    v = np.zeros((d, SOBOL_BITS), dtype=np.uint64)
    v[0] = [1 << (SOBOL_BITS - 1 - k) for k in range(SOBOL_BITS)]
    for j in range(1, d):
        s, a, m = _JOE_KUO_ROWS[j - 1]
        vj = [0] * SOBOL_BITS
        for k in range(min(s, SOBOL_BITS)):
            vj[k] = m[k] << (SOBOL_BITS - 1 - k)
        for k in range(s, SOBOL_BITS):
            x = vj[k - s] ^ (vj[k - s] >> s)
            for i in range(1, s):
                if (a >> (s - 1 - i)) & 1:
                    x ^= vj[k - i]
            vj[k] = x
        v[j] = vj
    v.setflags(write=False)
    return v


def _parity(x: np.ndarray) -> np.ndarray:
    x = x.copy()
    for shift in (32, 16, 8, 4, 2, 1):
        x ^= x >> np.uint64(shift)
    return x & np.uint64(1)


def _lms_scramble(v: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Left-multiply each direction number (as a column of bits, most
    significant first) by a random lower-triangular unit-diagonal matrix."""
    d, nbits = v.shape
    weights = np.uint64(1) << np.arange(nbits - 1, -1, -1, dtype=np.uint64)
    out = np.zeros_like(v)
    for j in range(d):
        # row i keeps the diagonal bit and random bits at more significant positions
        bits = np.tril(rng.integers(0, 2, size=(nbits, nbits), dtype=np.uint64), k=-1)
        bits[np.diag_indices(nbits)] = 1
        rows = (bits * weights[None, :]).sum(axis=1, dtype=np.uint64)
        par = _parity(rows[:, None] & v[j][None, :])
        out[j] = (par * weights[:, None]).sum(axis=0, dtype=np.uint64)
    return out


def _sobol_integers(n: int, v: np.ndarray) -> np.ndarray:
    idx = np.arange(n, dtype=np.uint64)
    gray = idx ^ (idx >> np.uint64(1))
    nbits = max(1, int(n - 1).bit_length())
    x = np.zeros((n, v.shape[0]), dtype=np.uint64)
    for k in range(nbits):
        bit = ((gray >> np.uint64(k)) & np.uint64(1)).astype(bool)
        x[bit] ^= v[:, k]
    return x


def sobol_points(m: int, d: int, seed: Optional[int] = None) -> PointSet:
    """First ``2**m`` Sobol' points in Gray-code order, including the origin.

    With ``seed`` the net is randomized by a linear matrix scramble followed
    by a digital shift, both drawn from ``seed``.
    """
    if m < 0:
        raise ValueError("m must be >= 0")
    if m > SOBOL_BITS:
        raise ValueError(f"at most 2**{SOBOL_BITS} points are supported")
    return _sobol(1 << m, d, seed)


def _sobol(n: int, d: int, seed: Optional[int]) -> PointSet:
    if d < 1:
        raise ValueError("d must be >= 1")
    if d > MAX_SOBOL_DIM:
        raise DimensionUnsupportedError(f"sobol supports d <= {MAX_SOBOL_DIM}, got {d}")
    v = _direction_numbers(d)
    shift = np.zeros(d, dtype=np.uint64)
    if seed is not None:
        rng = np.random.default_rng(seed)
        v = _lms_scramble(v, rng)
        shift = rng.integers(0, 1 << SOBOL_BITS, size=d, dtype=np.uint64)
    x = _sobol_integers(n, v) ^ shift
    return PointSet(x.astype(np.float64) * 2.0**-SOBOL_BITS, kind="sobol", seed=seed)


# ---------------------------------------------------------------------------
# Halton


def first_primes(k: int) -> list[int]:
    primes: list[int] = []
    c = 2
    while len(primes) < k:
        if all(c % p for p in primes if p * p <= c):
            primes.append(c)
        c += 1
    return primes


def _halton_digits(base: int) -> int:
    # enough digits to resolve double precision, leaving 1 - base**-K < 1
    return min(HALTON_MAX_DIGITS, int(52 / np.log2(base)))


def halton_points(n: int, d: int, seed: Optional[int] = None) -> PointSet:
    """Halton points for indices ``0..n-1`` in bases given by the first ``d`` primes.

    With ``seed`` every (dimension, digit position) pair receives its own
    uniform random permutation of the digits, shared by all points.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    rng = np.random.default_rng(seed) if seed is not None else None
    idx = np.arange(n, dtype=np.int64)
    out = np.empty((n, d))
    for j, b in enumerate(first_primes(d)):
        if rng is None:
            ndig = max(1, int(np.ceil(np.log(max(n, 2)) / np.log(b))) + 1)
            perms = None
        else:
            ndig = _halton_digits(b)
            perms = np.stack([rng.permutation(b) for _ in range(ndig)])
        val = np.zeros(n)
        q = idx.copy()
        scale = 1.0 / b
        for k in range(ndig):
            digit = q % b
            q //= b
            if perms is not None:
                digit = perms[k][digit]
            val += digit * scale
            scale /= b
        out[:, j] = val
    np.minimum(out, np.nextafter(1.0, 0.0), out=out)
    return PointSet(out, kind="halton", seed=seed)


# ---------------------------------------------------------------------------
# Rank-1 lattices


def _fibonacci(k: int) -> int:
    a, b = 0, 1
    for _ in range(k):
        a, b = b, a + b
    return a


#: Fibonacci lattices ``n = F_k, z = (1, F_{k-1})`` keyed by ``n``.
FIBONACCI_LATTICES = {
    _fibonacci(k): (1, _fibonacci(k - 1)) for k in range(10, 31)
}

def lattice_points(n: int, z: Sequence[int], seed: Optional[int] = None) -> PointSet:
    """Rank-1 lattice ``x_i = i z / n mod 1`` for ``i = 0..n-1``.

    With ``seed`` a single uniform shift is added to every point modulo 1.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    z = np.asarray(z, dtype=np.int64)
    if z.ndim != 1 or z.size < 1:
        raise ValueError("generating vector must be a non-empty 1-D sequence")
    i = np.arange(n, dtype=np.int64)[:, None]
    x = ((i * (z[None, :] % n)) % n) / n
    if seed is not None:
        shift = np.random.default_rng(seed).random(z.size)
        x = x + shift
        x -= np.floor(x)
        np.minimum(x, np.nextafter(1.0, 0.0), out=x)
    return PointSet(x, kind="lattice", seed=seed)


# ---------------------------------------------------------------------------


def generate(config: GeneratorConfig, n: Optional[int] = None) -> PointSet:
    """Dispatch on ``config.kind``; ``n`` is ignored for lattices."""
    seed = config.seed if config.randomize else None
    if config.kind == "lattice":
        return lattice_points(config.n, config.z, seed)
    if n is None:
        raise ValueError("n is required for non-lattice generators")
    if config.kind == "mc":
        return mc_points(n, config.d, config.seed)
    if config.kind == "sobol":
        if n & (n - 1):
            warnings.warn(
                f"sobol with n={n} points: use a power of 2 to keep the net balanced",
                stacklevel=2,
            )
        return _sobol(n, config.d, seed)
    return halton_points(n, config.d, seed)


# ---------------------------------------------------------------------------
# Star discrepancy


def star_discrepancy(points: PointSet | np.ndarray, max_corners: int = 10**7) -> float:
    """Exact star discrepancy by enumerating all candidate corners.

    Candidate coordinates per axis are the point coordinates plus 1. At each
    corner both the open box count (left limit) and the closed box count
    (right limit) are compared to the box volume.
    """
    x = points.values if isinstance(points, PointSet) else np.atleast_2d(np.asarray(points, float))
    n, d = x.shape
    if float(n + 1) ** d > max_corners:
        raise DiscrepancySizeError(
            f"(n+1)^d = {(n + 1) ** d} candidate corners exceeds {max_corners}"
        )
    grids = [np.unique(np.append(x[:, j], 1.0)) for j in range(d)]
    # per axis: which points are < a (open) and <= a (closed), shape (n, len(grid))
    lt = [x[:, j][:, None] < g[None, :] for j, g in enumerate(grids)]
    le = [x[:, j][:, None] <= g[None, :] for j, g in enumerate(grids)]

    best = 0.0

    def recurse(axis, open_mask, closed_mask, vol):
        nonlocal best
        if axis == d:
            return
        g = grids[axis]
        om = open_mask[:, None] & lt[axis]
        cm = closed_mask[:, None] & le[axis]
        v = vol * g
        if axis == d - 1:
            open_cnt = om.sum(axis=0) / n
            closed_cnt = cm.sum(axis=0) / n
            best = max(best, float(np.max(v - open_cnt)), float(np.max(closed_cnt - v)))
            return
        for k in range(g.size):
            recurse(axis + 1, om[:, k], cm[:, k], v[k])

    recurse(0, np.ones(n, bool), np.ones(n, bool), 1.0)
    return best
