import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowqmc import autodiff as ad
from flowqmc.estimators import (
    DegenerateChainError,
    DegenerateRatioError,
    DegenerateSampleError,
    UndefinedESSError,
    UnnormalizedWeightsError,
    WeightedSample,
    acceptance_probability,
    ess,
    iimc_chain,
    imrth_chain,
    is_estimate,
    make_report,
    make_weighted_sample,
    ratio_report,
    replication_counts,
    snis_estimate,
)
from flowqmc.flows import identity_flow, init_flow
from flowqmc.qmc import mc_points, sobol_points
from flowqmc.targets import TargetDensity, dualmoon_target, gmm40_exact_expectations, gmm40_oracle, test_function

from .helpers import perturbed

LOG_2PI = math.log(2 * math.pi)


def normal_target(d, shift=0.0):
    def log_p(x):
        return -0.5 * ad.sum(ad.square(x), axis=-1) - 0.5 * d * LOG_2PI + shift
    return TargetDensity("normal", d, log_p, shift)


def first_coord(x):
    return x[:, 0]


def sample(log_w, d=2, seed=0, normalized=False):
    log_w = np.asarray(log_w, float)
    pts = np.random.default_rng(seed).normal(size=(log_w.size, d))
    return WeightedSample(pts, log_w, normalized)


# --- weighted samples and IS ----------------------------------------------


def test_identity_flow_on_standard_normal_gives_zero_weights():
    ws = make_weighted_sample(identity_flow(2), normal_target(2), sobol_points(8, 2, seed=1), "inverse")
    assert ws.normalized
    np.testing.assert_allclose(ws.log_weights, 0.0, atol=1e-12)
    assert is_estimate(ws, lambda x: np.ones(len(x))) == pytest.approx(1.0, abs=1e-12)
    assert ws.provenance == {"seq": "sobol", "map": "inverse", "seed": 1}


def test_weights_invariant_to_shifting_target_and_constant():
    flow = perturbed(init_flow(2, 2, "affine", hidden=(4,)), 0.3, seed=0)
    pts = mc_points(64, 2, 3)
    a = make_weighted_sample(flow, normal_target(2), pts)
    b = make_weighted_sample(flow, normal_target(2, shift=7.5), pts)
    np.testing.assert_allclose(a.log_weights, b.log_weights, atol=1e-12)


def test_box_muller_map_accepted():
    ws = make_weighted_sample(identity_flow(2), normal_target(2), mc_points(64, 2, 0), "box_muller")
    np.testing.assert_allclose(ws.log_weights, 0.0, atol=1e-12)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        make_weighted_sample(identity_flow(2), normal_target(2), mc_points(4, 3, 0))
    with pytest.raises(ValueError):
        make_weighted_sample(identity_flow(3), normal_target(2), mc_points(4, 3, 0))


def test_is_with_unit_weights_is_sample_mean():
    ws = sample(np.zeros(50), normalized=True)
    assert is_estimate(ws, first_coord) == pytest.approx(ws.points[:, 0].mean())


def test_is_refuses_unnormalized():
    with pytest.raises(UnnormalizedWeightsError, match="snis"):
        is_estimate(sample(np.zeros(5)), first_coord)


@pytest.fixture(scope="module")
def gmm_oracle():
    return gmm40_oracle(n_draws=10**7)


def test_gmm_oracle_matches_closed_form(gmm_oracle):
    exact = gmm40_exact_expectations()
    for name, (mean, se) in gmm_oracle.items():
        assert abs(mean - exact[name]) < 4 * se


def test_is_unbiased_for_a_mismatched_proposal():
    # proposal N(0, I) pushed through a fixed affine map, target N(0, I)
    flow = perturbed(init_flow(2, 2, "affine", hidden=(4,)), 0.15, seed=5)
    target = normal_target(2)
    for seq, make in (("mc", lambda r: mc_points(2**10, 2, r)),
                      ("sobol", lambda r: sobol_points(10, 2, seed=r))):
        vals = [is_estimate(make_weighted_sample(flow, target, make(r)), first_coord) for r in range(200)]
        rep = make_report(seq, vals, truth=0.0)
        assert abs(rep.mean) < 4 * rep.stderr


# --- SNIS -----------------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(log_c=st.floats(-500, 500), seed=st.integers(0, 10**6))
def test_snis_scale_invariant(log_c, seed):
    lw = np.random.default_rng(seed).normal(scale=20.0, size=64)
    a = snis_estimate(sample(lw, seed=seed), first_coord)
    b = snis_estimate(sample(lw + log_c, seed=seed), first_coord)
    assert abs(a - b) <= 1e-12 * max(1.0, abs(a))


def test_snis_single_point_and_extreme_weights():
    ws = sample([-1234.5])
    assert snis_estimate(ws, first_coord) == ws.points[0, 0]
    ws = sample([-1000.0, 0.0, -np.inf])
    assert snis_estimate(ws, first_coord) == pytest.approx(ws.points[1, 0])


def test_snis_degenerate():
    with pytest.raises(DegenerateSampleError):
        snis_estimate(sample([-np.inf, -np.inf]), first_coord)


# --- iMRTH ----------------------------------------------------------------


def test_acceptance_probability():
    assert acceptance_probability(1.3, 1.3) == 1.0
    assert acceptance_probability(0.0, 5.0) == 1.0
    assert acceptance_probability(0.0, math.log(0.25)) == pytest.approx(0.25)
    assert acceptance_probability(0.0, -1e6) == 0.0


def test_imrth_constant_weights_accepts_everything():
    ws = sample(np.full(30, -3.0))
    chain = imrth_chain(ws, seed=0)
    np.testing.assert_array_equal(chain.states, ws.points)
    assert chain.record.all()
    assert chain.provenance["kernel"] == "imrth"


def test_imrth_rejects_zero_weight_proposals():
    ws = sample([0.0, -np.inf, 0.0, -np.inf])
    chain = imrth_chain(ws, seed=1)
    np.testing.assert_array_equal(chain.states, ws.points[[0, 0, 2, 2]])


def test_imrth_acceptance_rate_matches_ratio():
    # alternating weights 1, 1/4: from the heavy state we accept w.p. 1/4
    n = 40001
    lw = np.where(np.arange(n) % 2 == 0, 0.0, math.log(0.25))
    chain = imrth_chain(sample(lw), seed=3)
    rate = chain.record[1::2].mean()
    assert abs(rate - 0.25) < 4 * math.sqrt(0.25 * 0.75 / (n // 2))


def test_imrth_determinism_and_seed_independence():
    ws = sample(np.random.default_rng(0).normal(size=100))
    a, b = imrth_chain(ws, 5), imrth_chain(ws, 5)
    np.testing.assert_array_equal(a.states, b.states)
    assert not np.array_equal(a.record, imrth_chain(ws, 6).record)
    with pytest.raises(ValueError):
        imrth_chain(sample([0.0]), 0)


def test_imrth_preserves_target_with_iid_proposals():
    # target N(1, 1) in d=1 style via first coordinate, proposal N(0, 1.5^2)
    rng = np.random.default_rng(11)
    means = []
    for r in range(100):
        x = rng.normal(scale=1.5, size=(4000, 1))
        lw = -0.5 * (x[:, 0] - 1) ** 2 + 0.5 * (x[:, 0] / 1.5) ** 2
        means.append(imrth_chain(WeightedSample(x, lw, False), seed=r).states[:, 0].mean())
    rep = make_report("imrth", means, truth=1.0)
    assert abs(rep.mean - 1.0) < 3 * rep.stderr


# --- iIMC -----------------------------------------------------------------


def test_iimc_constant_weights_reproduce_input():
    ws = sample(np.full(25, 4.2))
    chain = iimc_chain(ws, "auto", seed=0)
    np.testing.assert_array_equal(chain.states, ws.points)
    np.testing.assert_array_equal(chain.record, 1)


def test_replication_counts_integer_is_deterministic():
    rng = np.random.default_rng(0)
    np.testing.assert_array_equal(replication_counts(np.full(1000, 2.0), rng), 2)


def test_replication_counts_mean():
    counts = replication_counts(np.full(10**5, 0.3), np.random.default_rng(1))
    assert set(np.unique(counts)) <= {0, 1}
    assert abs(counts.mean() - 0.3) < 0.005


def test_iimc_explicit_kappa():
    ws = sample(np.log([1.0, 2.0, 0.5]))
    chain = iimc_chain(ws, kappa=2.0, seed=0)
    np.testing.assert_array_equal(chain.record, [2, 4, 1])
    assert len(chain) == 7


def test_iimc_degenerate_and_invalid():
    with pytest.raises(DegenerateChainError):
        iimc_chain(sample(np.log([1e-9, 1e-9])), kappa=1.0, seed=0)
    with pytest.raises(ValueError):
        iimc_chain(sample([0.0]), kappa=-1.0)


def test_iimc_unbiased_ratio():
    rng = np.random.default_rng(4)
    means = []
    for r in range(100):
        x = rng.normal(scale=1.5, size=(4000, 1))
        lw = -0.5 * (x[:, 0] - 1) ** 2 + 0.5 * (x[:, 0] / 1.5) ** 2
        means.append(iimc_chain(WeightedSample(x, lw, False), "auto", seed=r).states[:, 0].mean())
    rep = make_report("iimc", means)
    assert abs(rep.mean - 1.0) < 3 * rep.stderr


# --- ESS and reports ------------------------------------------------------


def test_ess_iid():
    for seed in range(50):
        x = np.random.default_rng(seed).normal(size=10**4)
        assert 0.8 <= ess(x) / x.size <= 1.2


def test_ess_pairwise_repeats():
    x = np.repeat(np.random.default_rng(0).normal(size=5000), 2)
    assert ess(x) == pytest.approx(x.size / 2, rel=0.2)


def test_ess_ar1():
    rng = np.random.default_rng(2)
    phi, n = 0.8, 200_000
    e = rng.normal(size=n)
    x = np.empty(n)
    x[0] = e[0]
    for t in range(1, n):
        x[t] = phi * x[t - 1] + e[t]
    assert ess(x) / n == pytest.approx((1 - phi) / (1 + phi), rel=0.1)


def test_ess_errors():
    with pytest.raises(UndefinedESSError):
        ess(np.ones(20))
    with pytest.raises(ValueError):
        ess(np.arange(5.0))


def test_ratio_report():
    vals = np.random.default_rng(0).normal(size=20)
    assert ratio_report(make_report("a", vals), make_report("b", vals)) == 1.0
    assert ratio_report(make_report("a", 3 * vals), make_report("b", vals)) == pytest.approx(3.0)
    with pytest.raises(DegenerateRatioError):
        ratio_report(make_report("a", vals), make_report("b", np.ones(5)))
    with pytest.raises(ValueError):
        ratio_report(make_report("a", vals[:1]), make_report("b", vals))


def test_report_fields():
    rep = make_report("x", [1.0, 2.0, 3.0], truth=2.0)
    assert rep.mean == 2.0 and rep.std == 1.0
    assert rep.stderr == pytest.approx(1 / math.sqrt(3))
    np.testing.assert_array_equal(rep.abs_errors, [1.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        make_report("x", [])


# --- with the shipped dualmoon flow -------------------------------------


@pytest.fixture(scope="module")
def dualmoon_flow():
    from flowqmc.persist import shipped_flow
    return shipped_flow("dualmoon_d2")


def test_snis_dualmoon_symmetry(dualmoon_flow):
    target = dualmoon_target(2)
    phi = test_function("dualmoon:phi1")
    vals = [snis_estimate(make_weighted_sample(dualmoon_flow, target, sobol_points(16, 2, seed=r)), phi)
            for r in range(10)]
    rep = make_report("snis", vals, truth=0.0)
    assert abs(rep.values[0]) < 3 * rep.std
    assert abs(rep.mean) < 3 * rep.stderr


def test_imrth_mc_dualmoon_unbiased(dualmoon_flow):
    target = dualmoon_target(2)
    phi = test_function("dualmoon:phi1")
    vals = [phi(imrth_chain(make_weighted_sample(dualmoon_flow, target, mc_points(2**12, 2, r)),
                            seed=1000 + r).states).mean() for r in range(100)]
    rep = make_report("imrth", vals, truth=0.0)
    assert abs(rep.mean) < 3 * rep.stderr
