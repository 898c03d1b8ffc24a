import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowqmc.targets import GMM40_SEED, TEST_FUNCTIONS, dualmoon_target, gmm40_target, test_function


def test_gmm_integrates_to_one():
    t = gmm40_target()
    h = 0.1
    g = np.arange(-45, 45, h) + h / 2
    total = 0.0
    for row in g:
        pts = np.column_stack([np.full_like(g, row), g])
        total += np.exp(t(pts)).sum()
    assert total * h * h == pytest.approx(1.0, abs=1e-3)


def test_gmm_sampler_mean():
    t = gmm40_target()
    x = t.sampler(10**5, np.random.default_rng(0))
    means = t.info["means"]
    # mixture covariance: spread of the means plus the unit component covariance
    sd = np.sqrt(means.var(axis=0) + 1.0)
    assert np.all(np.abs(x.mean(axis=0) - means.mean(axis=0)) < 3 * sd / math.sqrt(x.shape[0]))


def test_gmm_density_at_component_means():
    t = gmm40_target()
    assert np.all(t(t.info["means"]) >= math.log(1 / 40) - math.log(2 * math.pi) - 1e-12)


def test_gmm_structure():
    t = gmm40_target()
    assert t.d == 2 and t.log_norm_const == 0.0 and t.info["seed"] == GMM40_SEED
    means = t.info["means"]
    assert means.shape == (40, 2) and np.all(np.abs(means) <= 40)
    # the x1 > 30 indicator has mass under the shipped seed
    assert np.sum(means[:, 0] > 30) >= 1
    assert not np.array_equal(gmm40_target(1).info["means"], means)


def test_gmm_finite_far_away():
    x = np.random.default_rng(0).uniform(-1000, 1000, size=(1000, 2))
    assert np.all(np.isfinite(gmm40_target()(x)))


def test_dualmoon_origin():
    assert dualmoon_target(2)(np.zeros((1, 2)))[0] == pytest.approx(-200 + 2 * math.log(2) - 25, abs=1e-6)
    assert dualmoon_target(2)(np.zeros((1, 2)))[0] == pytest.approx(-223.613706, abs=1e-6)


def reference_dualmoon(x):
    r = np.linalg.norm(x)
    bumps = np.log(np.exp(-0.5 * ((x + 3) / 0.6) ** 2) + np.exp(-0.5 * ((x - 3) / 0.6) ** 2))
    return -0.5 * ((r - 2) / 0.1) ** 2 + bumps.sum()


@settings(max_examples=50, deadline=None)
@given(d=st.integers(1, 8), seed=st.integers(0, 10**6))
def test_dualmoon_formula_and_symmetries(d, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(scale=1.5, size=(5, d))
    t = dualmoon_target(d)
    v = t(x)
    np.testing.assert_allclose(v, [reference_dualmoon(p) for p in x], rtol=1e-12)
    np.testing.assert_allclose(t(-x), v, rtol=1e-12)
    np.testing.assert_allclose(t(x[:, rng.permutation(d)]), v, rtol=1e-12)


def test_dualmoon_has_no_normalizer_or_sampler():
    t = dualmoon_target(3)
    assert t.log_norm_const is None and t.sampler is None
    with pytest.raises(ValueError):
        dualmoon_target(0)


def test_test_function_values():
    assert test_function("gmm:phi5")(np.array([2.0, 3.0]))[0] == 6.0
    assert test_function("gmm:phi7")(np.array([31.0, 0.0]))[0] == 1.0
    assert test_function("gmm:phi7")(np.array([29.0, 0.0]))[0] == 0.0
    assert test_function("dualmoon:phi2")(np.array([0.0, 1.0]))[0] == 0.0
    x = np.array([[1.5, -2.0]])
    expected = [1.5, -2.0, 2.25, 64.0, -3.0, math.sin(1.5) * math.cos(0.2), 0.0]
    for k, e in enumerate(expected, start=1):
        assert test_function(f"gmm:phi{k}")(x)[0] == pytest.approx(e)


def test_dualmoon_functions_are_odd():
    x = np.random.default_rng(0).normal(size=(20, 3))
    for name in ("dualmoon:phi1", "dualmoon:phi2"):
        f = test_function(name)
        np.testing.assert_allclose(f(-x), -f(x))


def test_registry_and_unknown_name():
    assert len(TEST_FUNCTIONS) == 9
    with pytest.raises(KeyError):
        test_function("gmm:phi8")
