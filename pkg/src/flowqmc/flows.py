"""Coupling normalizing flows with affine (RealNVP) or rational quadratic
spline (RQ-NSF) elementwise transforms.

All model arithmetic goes through :mod:`flowqmc.autodiff`, so the same code
evaluates a flow on plain arrays and records it on a tape when the
parameters are :class:`~flowqmc.autodiff.Var` objects.

Parameter layout
----------------
A conditioner with ``sizes = (n_0, ..., n_L)`` has weight matrices of shape
``(n_k, n_{k+1})`` applied as ``h @ W + b``. Its output for a batch of
``n`` inputs is reshaped row-major to ``(n, m, p)``, ``m`` being the number
of transformed coordinates and ``p`` the parameters per coordinate:

* affine: ``p = 2``, slot 0 is the raw log-scale, slot 1 the shift;
* spline: ``p = 3K - 1``, slots ``[0, K)`` raw widths, ``[K, 2K)`` raw heights,
  ``[2K, 3K-1)`` raw interior derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad

__all__ = [
    "ConditionerMLP",
    "CouplingLayer",
    "FlowModel",
    "SplineParams",
    "FlowNumericError",
    "AFFINE_SCALE_BOUND",
    "MIN_BIN_FRACTION",
    "MIN_DERIVATIVE",
    "alternating_mask",
    "init_flow",
    "identity_flow",
    "forward",
    "inverse",
    "log_density",
    "standard_normal_logpdf",
    "spline_params_from_raw",
    "rq_spline_eval",
    "rq_spline_inverse",
]

AFFINE_SCALE_BOUND = 5.0
MIN_BIN_FRACTION = 1e-3
MIN_DERIVATIVE = 1e-3
# softplus(_DERIV_SHIFT) + MIN_DERIVATIVE == 1, so zero raw outputs give unit slopes
_DERIV_SHIFT = float(np.log(np.expm1(1.0 - MIN_DERIVATIVE)))
_LOG_2PI = float(np.log(2.0 * np.pi))


class FlowNumericError(ArithmeticError):
    def __init__(self, layer: int, direction: str):
        super().__init__(f"non-finite values after layer {layer} ({direction} pass)")
        self.layer = layer


# ---------------------------------------------------------------------------
# conditioner


@dataclass(frozen=True)
class ConditionerMLP:
    sizes: tuple[int, ...]
    weights: tuple
    biases: tuple
    activation: str = "tanh"

    def __post_init__(self):
        if len(self.sizes) < 2:
            raise ValueError("conditioner needs at least input and output sizes")
        if self.activation not in ("tanh", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("weight/bias count does not match sizes")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.sizes[k], self.sizes[k + 1])
            if tuple(np.shape(ad.value(w))) != shape or tuple(np.shape(ad.value(b))) != shape[1:]:
                raise ValueError(f"conditioner layer {k} has inconsistent shapes")

    @classmethod
    def init(cls, sizes: Sequence[int], rng: np.random.Generator,
             activation: str = "tanh", zero_last: bool = True) -> "ConditionerMLP":
        """Glorot-uniform hidden layers; the output layer is zero by default
        so a freshly built flow is the identity."""
        sizes = tuple(int(s) for s in sizes)
        ws, bs = [], []
        for k in range(len(sizes) - 1):
            fan_in, fan_out = sizes[k], sizes[k + 1]
            if zero_last and k == len(sizes) - 2:
                w = np.zeros((fan_in, fan_out))
            else:
                lim = np.sqrt(6.0 / (fan_in + fan_out))
                w = rng.uniform(-lim, lim, size=(fan_in, fan_out))
            ws.append(w)
            bs.append(np.zeros(fan_out))
        return cls(sizes, tuple(ws), tuple(bs), activation)

    def __call__(self, x):
        act = ad.tanh if self.activation == "tanh" else ad.relu
        h = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.matmul(h, w) + b
            if k < last:
                h = act(h)
        return h

    def parameters(self) -> list:
        return list(self.weights) + list(self.biases)

    def with_parameters(self, params: Sequence) -> "ConditionerMLP":
        k = len(self.weights)
        return replace(self, weights=tuple(params[:k]), biases=tuple(params[k:2 * k]))


# ---------------------------------------------------------------------------
# rational quadratic spline


@dataclass(frozen=True)
class SplineParams:
    """Monotone rational quadratic spline on ``[-bound, bound]``, identity outside.

    ``widths`` and ``heights`` have ``K`` entries summing to ``2*bound``;
    ``derivatives`` holds the ``K - 1`` interior knot slopes (boundary slopes
    are 1). Leading batch dimensions are allowed.
    """

    widths: object
    heights: object
    derivatives: object
    bound: float

    @property
    def bins(self) -> int:
        return np.shape(ad.value(self.widths))[-1]

    def knots(self):
        return _knots(self.widths, self.bound), _knots(self.heights, self.bound)

    def full_derivatives(self):
        dv = self.derivatives
        ones = np.ones(np.shape(ad.value(dv))[:-1] + (1,))
        return ad.concatenate([ones, dv, ones], axis=-1)


def _knots(sizes, bound: float):
    shape = np.shape(ad.value(sizes))
    edge = np.full(shape[:-1] + (1,), float(bound))
    inner = ad.cumsum(sizes, axis=-1)[..., :-1] - bound
    return ad.concatenate([-edge, inner, edge], axis=-1)


def spline_params_from_raw(raw, bins: int, bound: float) -> SplineParams:
    """Map unconstrained conditioner outputs ``(..., 3K-1)`` to valid spline
    parameters. All-zero raw outputs give the identity spline."""
    K = bins
    scale = 2.0 * bound
    frac_w = MIN_BIN_FRACTION + (1.0 - K * MIN_BIN_FRACTION) * ad.softmax(raw[..., :K], axis=-1)
    frac_h = MIN_BIN_FRACTION + (1.0 - K * MIN_BIN_FRACTION) * ad.softmax(raw[..., K:2 * K], axis=-1)
    derivs = MIN_DERIVATIVE + ad.softplus(raw[..., 2 * K:] + _DERIV_SHIFT)
    return SplineParams(frac_w * scale, frac_h * scale, derivs, float(bound))


def _gather(a, idx):
    return ad.take_along_axis(a, idx, axis=-1)[..., 0]


def _spline_core(params: SplineParams, x, inverse: bool):
    B = params.bound
    K = params.bins
    xv = ad.value(x)
    inside = (xv >= -B) & (xv <= B)
    x_in = ad.where(inside, x, 0.0)
    kx, ky = params.knots()
    d = params.full_derivatives()
    search = ad.value(ky if inverse else kx)[..., 1:K]
    idx = np.sum(search <= ad.value(x_in)[..., None], axis=-1)[..., None]

    xk, yk = _gather(kx, idx), _gather(ky, idx)
    wk, hk = _gather(params.widths, idx), _gather(params.heights, idx)
    dk, dk1 = _gather(d, idx), _gather(d, idx + 1)
    s = hk / wk
    curv = dk1 + dk - 2.0 * s

    if inverse:
        dy = x_in - yk
        a = hk * (s - dk) + dy * curv
        b = hk * dk - dy * curv
        c = -s * dy
        disc = b * b - 4.0 * a * c
        disc = ad.where(ad.value(disc) > 0.0, disc, 0.0)
        xi = (2.0 * c) / (-b - ad.sqrt(disc))
        out = xi * wk + xk
    else:
        xi = (x_in - xk) / wk
        xi1m = xi * (1.0 - xi)
        out = yk + hk * (s * xi * xi + dk * xi1m) / (s + curv * xi1m)

    xi1m = xi * (1.0 - xi)
    den = s + curv * xi1m
    log_deriv = (2.0 * ad.log(s)
                 + ad.log(dk1 * xi * xi + 2.0 * s * xi1m + dk * (1.0 - xi) * (1.0 - xi))
                 - 2.0 * ad.log(den))
    if inverse:
        log_deriv = -log_deriv
    return ad.where(inside, out, x), ad.where(inside, log_deriv, 0.0)


def _broadcast_params(params: SplineParams, shape) -> SplineParams:
    def grow(a):
        a = np.asarray(a)
        return np.broadcast_to(a, tuple(shape) + a.shape[-1:])
    return SplineParams(grow(params.widths), grow(params.heights),
                        grow(params.derivatives), params.bound)


def rq_spline_eval(params: SplineParams, u):
    """Spline value and derivative at ``u``.

    Parameter arrays broadcast against ``u`` along their leading axes.
    """
    u = np.asarray(u, dtype=float)
    y, ld = _spline_core(_broadcast_params(params, u.shape), u, inverse=False)
    return y, np.exp(ld)


def rq_spline_inverse(params: SplineParams, y):
    """Inverse spline value and derivative of the inverse at ``y``."""
    y = np.asarray(y, dtype=float)
    x, ld = _spline_core(_broadcast_params(params, y.shape), y, inverse=True)
    return x, np.exp(ld)


# ---------------------------------------------------------------------------
# coupling layers and flows


def alternating_mask(d: int, layer: int) -> tuple[bool, ...]:
    """Even layers pass even coordinates through (``ceil(d/2)`` of them),
    odd layers pass odd coordinates."""
    return tuple((i % 2) == (layer % 2) for i in range(d))


@dataclass(frozen=True)
class CouplingLayer:
    mask: tuple[bool, ...]
    kind: str
    conditioner: ConditionerMLP
    bins: int = 8
    bound: float = 4.0

    def __post_init__(self):
        mask = tuple(bool(m) for m in self.mask)
        object.__setattr__(self, "mask", mask)
        if not any(mask) or all(mask):
            raise ValueError("mask needs at least one pass-through and one transformed coordinate")
        if self.kind not in ("affine", "rq_spline"):
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.kind == "rq_spline" and (self.bins < 1 or self.bound <= 0):
            raise ValueError("spline needs bins >= 1 and bound > 0")
        n_pass = sum(mask)
        m = len(mask) - n_pass
        if self.conditioner.sizes[0] != n_pass or self.conditioner.sizes[-1] != m * self.params_per_coord:
            raise ValueError("conditioner sizes do not match the mask and transform kind")

    @property
    def params_per_coord(self) -> int:
        return 2 if self.kind == "affine" else 3 * self.bins - 1

    @property
    def d(self) -> int:
        return len(self.mask)

    def _split(self):
        mask = np.asarray(self.mask)
        pass_idx = np.flatnonzero(mask)
        trans_idx = np.flatnonzero(~mask)
        order = np.argsort(np.concatenate([pass_idx, trans_idx]))
        return pass_idx, trans_idx, order

    def apply(self, x, inverse: bool = False):
        """Returns ``(y, log|det J|)`` of the layer (or of its inverse)."""
        pass_idx, trans_idx, order = self._split()
        n = np.shape(ad.value(x))[0]
        xa = x[:, pass_idx]
        xb = x[:, trans_idx]
        m = trans_idx.size
        raw = ad.reshape(self.conditioner(xa), (n, m, self.params_per_coord))
        if self.kind == "affine":
            s = AFFINE_SCALE_BOUND * ad.tanh(raw[..., 0] * (1.0 / AFFINE_SCALE_BOUND))
            t = raw[..., 1]
            if inverse:
                yb = (xb - t) * ad.exp(-s)
                ld = -ad.sum(s, axis=1)
            else:
                yb = xb * ad.exp(s) + t
                ld = ad.sum(s, axis=1)
        else:
            sp = spline_params_from_raw(raw, self.bins, self.bound)
            yb, ld_elem = _spline_core(sp, xb, inverse)
            ld = ad.sum(ld_elem, axis=1)
        y = ad.concatenate([xa, yb], axis=1)[:, order]
        return y, ld

    def parameters(self) -> list:
        return self.conditioner.parameters()

    def with_parameters(self, params) -> "CouplingLayer":
        return replace(self, conditioner=self.conditioner.with_parameters(params))


@dataclass(frozen=True)
class FlowModel:
    """Composition of coupling layers over a standard normal base."""

    d: int
    layers: tuple[CouplingLayer, ...]
    base: str = field(default="standard_normal")

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        for k, layer in enumerate(self.layers):
            if layer.d != self.d:
                raise ValueError(f"layer {k} has dimension {layer.d}, flow has {self.d}")
            if k and any(a == b for a, b in zip(layer.mask, self.layers[k - 1].mask)):
                raise ValueError(f"layer {k} mask must complement layer {k - 1}'s")
        if self.base != "standard_normal":
            raise ValueError("only the standard normal base is supported")

    def parameters(self) -> list:
        """Flat parameter list: per layer, weights then biases."""
        return [p for layer in self.layers for p in layer.parameters()]

    def with_parameters(self, params: Sequence) -> "FlowModel":
        layers, pos = [], 0
        for layer in self.layers:
            k = len(layer.parameters())
            layers.append(layer.with_parameters(list(params[pos:pos + k])))
            pos += k
        if pos != len(params):
            raise ValueError("parameter count mismatch")
        return replace(self, layers=tuple(layers))

    @property
    def n_parameters(self) -> int:
        return int(np.sum([np.size(ad.value(p)) for p in self.parameters()]))


def init_flow(d: int, n_layers: int, kind: str = "rq_spline", hidden: Sequence[int] = (32, 32),
              bins: int = 8, bound: float = 4.0, activation: str = "tanh",
              seed: int = 0) -> FlowModel:
    """A fresh flow equal to the identity map (zero output layers)."""
    if d < 2:
        raise ValueError("coupling flows need d >= 2")
    rng = np.random.default_rng(seed)
    layers = []
    for k in range(n_layers):
        mask = alternating_mask(d, k)
        n_pass = sum(mask)
        p = 2 if kind == "affine" else 3 * bins - 1
        cond = ConditionerMLP.init((n_pass, *hidden, (d - n_pass) * p), rng, activation)
        layers.append(CouplingLayer(mask, kind, cond, bins, bound))
    return FlowModel(d, tuple(layers))


def identity_flow(d: int, kind: str = "affine", n_layers: int = 2) -> FlowModel:
    return init_flow(d, n_layers, kind=kind, hidden=(4,), seed=0)


# ---------------------------------------------------------------------------


def _as_batch(x):
    if ad.is_var(x):
        return x, False
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        return arr[None, :], True
    return arr, False


def _check_finite(y, ld, layer: int, direction: str):
    if ad.is_var(y) or ad.is_var(ld):
        yv, lv = ad.value(y), ad.value(ld)
    else:
        yv, lv = y, ld
    if not (np.all(np.isfinite(yv)) and np.all(np.isfinite(lv))):
        raise FlowNumericError(layer, direction)


def forward(flow: FlowModel, z):
    """Push base points through the flow. Returns ``(x, log|det J_T(z)|)``."""
    x, single = _as_batch(z)
    if np.shape(ad.value(x))[1] != flow.d:
        raise ValueError(f"expected points of dimension {flow.d}")
    log_det = np.zeros(np.shape(ad.value(x))[0])
    for k, layer in enumerate(flow.layers):
        with np.errstate(over="ignore", invalid="ignore"):
            x, ld = layer.apply(x)
        _check_finite(x, ld, k, "forward")
        log_det = log_det + ld
    if single:
        return x[0], log_det[0]
    return x, log_det


def inverse(flow: FlowModel, x):
    """Invert the flow. Returns ``(z, log|det J_{T^-1}(x)|)``."""
    z, single = _as_batch(x)
    if np.shape(ad.value(z))[1] != flow.d:
        raise ValueError(f"expected points of dimension {flow.d}")
    log_det = np.zeros(np.shape(ad.value(z))[0])
    for k in range(len(flow.layers) - 1, -1, -1):
        with np.errstate(over="ignore", invalid="ignore"):
            z, ld = flow.layers[k].apply(z, inverse=True)
        _check_finite(z, ld, k, "inverse")
        log_det = log_det + ld
    if single:
        return z[0], log_det[0]
    return z, log_det


def standard_normal_logpdf(z):
    d = np.shape(ad.value(z))[-1]
    return -0.5 * ad.sum(ad.square(z), axis=-1) - 0.5 * d * _LOG_2PI


def log_density(flow: FlowModel, x):
    """``log nu(x) = log mu(T^-1(x)) + log|det J_{T^-1}(x)|``."""
    z, ld = inverse(flow, x)
    return standard_normal_logpdf(z) + ld
