"""Fitting flow parameters by maximum likelihood on samples (forward KL) or
by the reparametrized reverse KL against an unnormalized target."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from .flows import FlowModel, FlowNumericError, forward, log_density
from .targets import TargetDensity

__all__ = [
    "TrainConfig",
    "TrainResult",
    "TrainingDivergenceError",
    "Adam",
    "forward_kl_loss",
    "reverse_kl_loss",
    "train",
    "write_loss_trace",
]

log = logging.getLogger(__name__)


class TrainingDivergenceError(ArithmeticError):
    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "reverse_kl"
    batch_size: int = 256
    steps: int = 1000
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    # cosine decay of the learning rate down to this fraction; 1.0 disables it
    final_lr_fraction: float = 1.0
    # reverse KL only: target log-density is scaled by an inverse temperature
    # rising linearly from anneal_start to 1 over anneal_steps
    anneal_steps: int = 0
    anneal_start: float = 1.0

    def __post_init__(self):
        if self.objective not in ("forward_kl", "reverse_kl"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.batch_size <= 0 or self.steps <= 0 or self.learning_rate <= 0:
            raise ValueError("batch_size, steps and learning_rate must be positive")

    def lr_at(self, step: int) -> float:
        if self.final_lr_fraction >= 1.0:
            return self.learning_rate
        c = 0.5 * (1.0 + np.cos(np.pi * step / self.steps))
        return self.learning_rate * (self.final_lr_fraction + (1.0 - self.final_lr_fraction) * c)

    def beta_at(self, step: int) -> float:
        if self.anneal_steps <= 0 or step >= self.anneal_steps:
            return 1.0
        return self.anneal_start + (1.0 - self.anneal_start) * step / self.anneal_steps


@dataclass
class TrainResult:
    flow: FlowModel
    losses: np.ndarray


class Adam:
    def __init__(self, params: Sequence[np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
             lr: Optional[float] = None) -> list[np.ndarray]:
        lr = self.lr if lr is None else lr
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        out = []
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            out.append(p - lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps))
        return out


def _taped(flow: FlowModel):
    tape = ad.Tape()
    leaves = [tape.variable(p) for p in flow.parameters()]
    return tape, leaves, flow.with_parameters(leaves)


def _finish(tape, loss, leaves):
    value = float(ad.value(loss))
    if not np.isfinite(value):
        raise TrainingDivergenceError(f"non-finite loss {value}")
    grads = tape.gradients(loss, leaves)
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise TrainingDivergenceError("non-finite gradient")
    return value, grads


def forward_kl_loss(flow: FlowModel, samples: np.ndarray):
    """``-mean log nu(x)`` over target samples, with gradients for every
    parameter in :meth:`FlowModel.parameters` order."""
    samples = np.asarray(samples, dtype=float)
    if not np.all(np.isfinite(samples)):
        raise ValueError("samples must be finite")
    tape, leaves, tflow = _taped(flow)
    try:
        loss = -ad.mean(log_density(tflow, samples))
    except FlowNumericError as exc:
        raise TrainingDivergenceError(str(exc)) from exc
    return _finish(tape, loss, leaves)


def reverse_kl_loss(flow: FlowModel, target: TargetDensity, z: np.ndarray, beta: float = 1.0):
    """Pathwise estimate of ``KL(nu || pi)`` up to constants:
    ``mean(-log|det J_T(z)| - log pi~(T(z)))`` over base samples ``z``.

    Samples whose target log-density is not finite are masked; more than half
    masked is a divergence.
    """
    tape, leaves, tflow = _taped(flow)
    try:
        x, log_det = forward(tflow, np.asarray(z, dtype=float))
    except FlowNumericError as exc:
        raise TrainingDivergenceError(str(exc)) from exc
    log_p = target.log_unnorm_density(x)
    ok = np.isfinite(ad.value(log_p))
    if ok.mean() < 0.5:
        raise TrainingDivergenceError(f"{np.sum(~ok)} of {ok.size} target evaluations non-finite")
    terms = -log_det - beta * log_p
    if not ok.all():
        terms = ad.where(ok, terms, 0.0)
    loss = ad.sum(terms) * (1.0 / ok.sum())
    return _finish(tape, loss, leaves)


def train(flow: FlowModel, data: Union[TargetDensity, np.ndarray], config: TrainConfig,
          callback: Optional[Callable[[int, float], None]] = None) -> TrainResult:
    """Run ``config.steps`` Adam steps; deterministic given ``config.seed``.

    ``data`` is a target (reverse KL, or forward KL through its exact
    sampler) or an array of samples (forward KL, minibatches drawn with
    replacement).
    """
    rng = np.random.default_rng(config.seed)
    params = [np.array(p, dtype=float) for p in flow.parameters()]
    opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps)
    losses = np.empty(config.steps)
    if config.objective == "reverse_kl" and not isinstance(data, TargetDensity):
        raise ValueError("reverse KL needs a target density")
    if config.objective == "forward_kl" and isinstance(data, TargetDensity) and data.sampler is None:
        raise ValueError("forward KL on a target needs an exact sampler")

    current = flow
    for step in range(config.steps):
        try:
            if config.objective == "reverse_kl":
                z = rng.standard_normal((config.batch_size, flow.d))
                loss, grads = reverse_kl_loss(current, data, z, config.beta_at(step))
            else:
                if isinstance(data, TargetDensity):
                    batch = data.sampler(config.batch_size, rng)
                else:
                    batch = data[rng.integers(0, data.shape[0], size=config.batch_size)]
                loss, grads = forward_kl_loss(current, batch)
        except TrainingDivergenceError as exc:
            raise TrainingDivergenceError(str(exc), step) from exc
        losses[step] = loss
        params = opt.step(params, grads, config.lr_at(step))
        current = flow.with_parameters(params)
        if callback is not None:
            callback(step, loss)
        if step % 500 == 0:
            log.debug("step %d loss %.6f", step, loss)
    return TrainResult(current, losses)


def write_loss_trace(losses: Sequence[float], path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for k, v in enumerate(losses):
            w.writerow([k, f"{v:.17g}"])
