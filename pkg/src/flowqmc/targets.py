"""Benchmark targets and the test functions evaluated on them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad

__all__ = [
    "TargetDensity",
    "TestFunction",
    "GMM40_SEED",
    "gmm40_target",
    "dualmoon_target",
    "test_function",
    "TEST_FUNCTIONS",
    "dualmoon_reference_samples",
    "gmm40_exact_expectations",
    "gmm40_oracle",
]

#: Seed that fixes the 40 component means of the shipped GMM benchmark.
GMM40_SEED = 0
_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class TargetDensity:
    """Unnormalized log-density ``log pi~`` on R^d.

    ``log_norm_const`` is ``log c`` with ``pi = pi~ / c`` when known, and
    ``sampler(n, rng)`` draws exact samples when available.
    """

    name: str
    d: int
    log_unnorm_density: Callable
    log_norm_const: Optional[float] = None
    sampler: Optional[Callable[[int, np.random.Generator], np.ndarray]] = None
    info: Optional[dict] = None

    def __call__(self, x):
        return self.log_unnorm_density(x)


@dataclass(frozen=True)
class TestFunction:
    name: str
    evaluator: Callable[[np.ndarray], np.ndarray]

    __test__ = False  # not a pytest class

    def __call__(self, x):
        return self.evaluator(np.atleast_2d(x))


def gmm40_target(seed: int = GMM40_SEED) -> TargetDensity:
    """Equal-weight mixture of 40 unit-covariance Gaussians on R^2 with means
    uniform on ``[-40, 40]^2``. The density is normalized."""
    rng = np.random.default_rng(seed)
    means = rng.uniform(-40.0, 40.0, size=(40, 2))
    log_w = -np.log(40.0)

    def log_density(x):
        # (n, 1, 2) - (40, 2) -> (n, 40)
        n = np.shape(ad.value(x))[0]
        diff = ad.reshape(x, (n, 1, 2)) - means[None, :, :]
        comp = -0.5 * ad.sum(ad.square(diff), axis=-1) - _LOG_2PI + log_w
        return ad.logsumexp(comp, axis=-1)

    def sample(n: int, rng: np.random.Generator) -> np.ndarray:
        k = rng.integers(0, 40, size=n)
        return means[k] + rng.standard_normal((n, 2))

    return TargetDensity("gmm40", 2, log_density, 0.0, sample, {"means": means, "seed": seed})


def dualmoon_target(d: int) -> TargetDensity:
    """Ring of radius 2 times two Gaussian bumps at +-3 per coordinate;
    ``2**d`` modes, unnormalized."""
    if d < 1:
        raise ValueError("d must be >= 1")

    def log_density(x):
        r = ad.sqrt(ad.sum(ad.square(x), axis=-1))
        ring = -0.5 * ad.square((r - 2.0) * 10.0)
        left = -0.5 * ad.square((x + 3.0) * (1.0 / 0.6))
        right = -0.5 * ad.square((x - 3.0) * (1.0 / 0.6))
        return ring + ad.sum(ad.logaddexp(left, right), axis=-1)

    return TargetDensity(f"dualmoon{d}", d, log_density)


TEST_FUNCTIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "gmm:phi1": lambda x: x[:, 0],
    "gmm:phi2": lambda x: x[:, 1],
    "gmm:phi3": lambda x: x[:, 0] ** 2,
    "gmm:phi4": lambda x: x[:, 1] ** 6,
    "gmm:phi5": lambda x: x[:, 0] * x[:, 1],
    "gmm:phi6": lambda x: np.sin(x[:, 0]) * np.cos(-x[:, 1] / 10.0),
    "gmm:phi7": lambda x: (x[:, 0] > 30.0).astype(float),
    "dualmoon:phi1": lambda x: x[:, 0],
    "dualmoon:phi2": lambda x: np.sin(10.0 * x[:, 0]) * x[:, 0] ** 4,
}


def test_function(name: str) -> TestFunction:
    try:
        return TestFunction(name, TEST_FUNCTIONS[name])
    except KeyError:
        raise KeyError(f"unknown test function {name!r}; known: {sorted(TEST_FUNCTIONS)}") from None


test_function.__test__ = False


def dualmoon_reference_samples(d: int, n: int, seed: int = 0, chains: int = 2000,
                               burn_in: int = 1500, thin: int = 25) -> np.ndarray:
    """Approximate dualmoon draws for fitting flows by maximum likelihood.

    Random-walk Metropolis on many parallel chains, started at the ``2**d``
    modes ``+-2/sqrt(d)``, with the step adapted during burn-in. The density
    is even in every coordinate, so signs are re-drawn uniformly at
    collection, which balances the modes exactly. Residual bias only affects
    the fitted proposal, never the weighted estimates built on it.
    """
    rng = np.random.default_rng(seed)
    log_p = dualmoon_target(d).log_unnorm_density
    x = rng.choice([-1.0, 1.0], size=(chains, d)) * (2.0 / np.sqrt(d))
    x = x + 0.05 * rng.standard_normal(x.shape)
    lp = log_p(x)
    step = 0.1
    per_round = chains
    rounds = -(-n // per_round)
    out = []
    for t in range(burn_in + rounds * thin):
        prop = x + step * rng.standard_normal(x.shape)
        lq = log_p(prop)
        acc = np.log(rng.random(chains)) < lq - lp
        x[acc], lp[acc] = prop[acc], lq[acc]
        if t < burn_in and t % 50 == 49:
            step *= np.exp(np.clip(acc.mean() - 0.3, -0.5, 0.5))
        elif t >= burn_in and (t - burn_in) % thin == thin - 1:
            out.append(x * rng.choice([-1.0, 1.0], size=x.shape))
    return np.concatenate(out)[:n]


def gmm40_exact_expectations(seed: int = GMM40_SEED) -> dict[str, float]:
    """Closed-form ``pi(phi)`` for the seven GMM test functions.

    Each component is ``N(m, I)``, so every expectation factorizes over the
    two coordinates and uses Gaussian moments and characteristic functions.
    """
    from scipy.special import ndtr

    m = gmm40_target(seed).info["means"]
    a, b = m[:, 0], m[:, 1]
    vals = {
        "gmm:phi1": a.mean(),
        "gmm:phi2": b.mean(),
        "gmm:phi3": np.mean(a**2 + 1.0),
        "gmm:phi4": np.mean(b**6 + 15 * b**4 + 45 * b**2 + 15),
        "gmm:phi5": np.mean(a * b),
        # E sin(a + Z) = sin(a) e^{-1/2};  E cos((b + Z)/10) = cos(b/10) e^{-1/200}
        "gmm:phi6": np.mean(np.sin(a) * np.exp(-0.5) * np.cos(b / 10.0) * np.exp(-0.005)),
        "gmm:phi7": np.mean(ndtr(a - 30.0)),
    }
    return {k: float(v) for k, v in vals.items()}


def gmm40_oracle(names=None, n_draws: int = 10**7, seed: int = 0, chunk: int = 10**6,
                 target_seed: int = GMM40_SEED) -> dict[str, tuple[float, float]]:
    """Exact-sampler Monte Carlo ground truth: ``{name: (mean, standard error)}``."""
    names = list(names or [k for k in TEST_FUNCTIONS if k.startswith("gmm:")])
    t = gmm40_target(target_seed)
    rng = np.random.default_rng(seed)
    s1 = np.zeros(len(names))
    s2 = np.zeros(len(names))
    done = 0
    while done < n_draws:
        k = min(chunk, n_draws - done)
        x = t.sampler(k, rng)
        for j, name in enumerate(names):
            v = TEST_FUNCTIONS[name](x)
            s1[j] += v.sum()
            s2[j] += np.dot(v, v)
        done += k
    mean = s1 / n_draws
    var = (s2 - n_draws * mean**2) / (n_draws - 1)
    return {name: (float(mean[j]), float(np.sqrt(max(var[j], 0.0) / n_draws)))
            for j, name in enumerate(names)}
