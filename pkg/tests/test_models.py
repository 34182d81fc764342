import math

import numpy as np
from numpy.testing import assert_allclose
import pytest
from hypothesis import given, settings, strategies as st

from gatedvol.errors import NonpositiveVariance, UnstableRegion
from gatedvol.features import FeatureMatrix
from gatedvol.models import (
    FAMILIES,
    Family,
    ModelSpec,
    ParamVector,
    admissibility_check,
    ar1_features,
    filter_variance,
    forecast_next,
    iid_features,
    score_terms,
    simulate_path,
    unconditional_mean,
)

from conftest import FRACTIONAL, TRUTHS, make_spec


@pytest.fixture
def features(rng):
    return rng.standard_normal((600, 2))


@pytest.fixture
def returns(rng):
    return rng.standard_normal(600)


def test_garch_hand_trace():
    spec = ModelSpec(Family.GARCH, burn_in=0)
    p = ParamVector(omega=0.1, alpha=0.1, beta=0.8)
    r = np.array([1.0, 0.0, 2.0, 0.0])
    vp, _ = filter_variance(spec, p, r, h0=1.0)
    # h1 = .1 + .1*1 + .8*1; h2 = .1 + 0 + .8*1; h3 = .1 + .1*4 + .8*.9
    assert_allclose(vp.h, [1.0, 1.0, 0.9, 1.22], rtol=1e-14)


def test_loglik_terms_match_direct_formula(returns):
    spec = ModelSpec(Family.GARCH)
    vp, _ = filter_variance(spec, TRUTHS[Family.GARCH], returns)
    direct = -0.5 * (np.log(vp.h) + returns ** 2 / vp.h)
    assert_allclose(vp.loglik_terms, direct, rtol=1e-14)
    assert vp.loglik == pytest.approx(direct[vp.mask].sum(), rel=1e-13)
    assert vp.n_obs == 600 - 272


def test_mask_respects_burn_in_and_feature_availability(returns, features):
    z = features.copy()
    z[300:310, 1] = np.nan
    spec = make_spec(Family.RSM)
    vp, _ = filter_variance(spec, TRUTHS[Family.RSM], returns, z)
    assert not vp.mask[:272].any()
    assert not vp.mask[301:311].any()
    assert vp.mask[311:].all() and vp.mask[272:301].all()


def test_gates_read_previous_row(returns, features):
    spec = make_spec(Family.RSM, p_features=(0,))
    p = ParamVector(omega=0.05, alpha=0.08, beta_low=0.7, beta_high=0.9, gamma_p=np.array([1.0]))
    _, gp = filter_variance(spec, p, returns, features)
    assert_allclose(gp.p[1:], 1 / (1 + np.exp(-features[:-1, 0])), rtol=1e-14)


def test_future_features_do_not_move_past_variances(returns, features):
    spec = make_spec(Family.TGVOL)
    vp1, _ = filter_variance(spec, TRUTHS[Family.TGVOL], returns, features)
    z = features.copy()
    z[400:] = 5.0
    vp2, _ = filter_variance(spec, TRUTHS[Family.TGVOL], returns, z)
    np.testing.assert_array_equal(vp2.h[:401], vp1.h[:401])
    assert not np.array_equal(vp2.h[401:], vp1.h[401:])


def test_rsm_collapses_to_garch(returns, features):
    garch = ModelSpec(Family.GARCH)
    ref, _ = filter_variance(garch, ParamVector(omega=0.05, alpha=0.08, beta=0.85), returns)
    rsm = make_spec(Family.RSM)
    zero_gate = ParamVector(omega=0.05, alpha=0.08, beta_low=0.85, beta_high=0.9, gamma_p=np.zeros(2))
    equal_anchor = ParamVector(omega=0.05, alpha=0.08, beta_low=0.85, beta_high=0.85, gamma_p=np.array([3.0, -1.0]))
    vp1, _ = filter_variance(rsm, zero_gate, returns, features)
    vp2, _ = filter_variance(rsm, equal_anchor, returns, features)
    half, _ = filter_variance(garch, ParamVector(omega=0.05, alpha=0.08, beta=0.875), returns)
    assert_allclose(vp1.h, half.h, rtol=1e-13)
    assert_allclose(vp2.h, ref.h, rtol=1e-13)


def test_zero_order_removes_fractional_term(returns, features):
    gf = make_spec(Family.GFIGARCH)
    p = ParamVector(omega=0.05, alpha=0.1, beta=0.8, dbar=1e-300, gamma_d=np.array([1.0, 0.0]))
    vp, _ = filter_variance(gf, p, returns, features)
    ref, _ = filter_variance(ModelSpec(Family.GARCH), ParamVector(omega=0.05, alpha=0.1, beta=0.8), returns)
    assert_allclose(vp.h, ref.h, rtol=1e-12)


def test_tgvol_gate_collapse(returns, features):
    # gamma_p = 0, d -> 0 and eta = 0: a clock model with blend (b_low + b_high)/2
    tg = make_spec(Family.TGVOL)
    p = ParamVector(omega=0.05, alpha0=0.3, beta_low=0.8, beta_high=0.9, gamma_p=np.zeros(2),
                    dbar=1e-300, gamma_d=np.zeros(2), kappa=0.1, eta=np.zeros(2))
    vp, gp = filter_variance(tg, p, returns, features)
    b = math.exp(-0.1)
    ref, _ = filter_variance(ModelSpec(Family.GARCH),
                             ParamVector(omega=0.05, alpha=0.3 * (1 - b), beta=0.85 * b), returns)
    assert_allclose(vp.h, ref.h, rtol=1e-12)
    assert_allclose(gp.beta_clk, b, rtol=1e-15)


def test_zero_shock_loading_fixed_point():
    spec = ModelSpec(Family.GARCH)
    p = ParamVector(omega=0.1, alpha=0.0, beta=0.8)
    r = np.random.default_rng(0).standard_normal(400)
    vp, _ = filter_variance(spec, p, r, h0=0.5)
    assert_allclose(vp.h[-1], 0.5, rtol=1e-12)


def test_filter_is_deterministic(returns, features):
    spec = make_spec(Family.TGVOL)
    a, _ = filter_variance(spec, TRUTHS[Family.TGVOL], returns, features)
    b, _ = filter_variance(spec, TRUTHS[Family.TGVOL], returns, features)
    np.testing.assert_array_equal(a.h, b.h)


def test_gjr_leverage_uses_sign_of_previous_return():
    spec = ModelSpec(Family.GJR, burn_in=0)
    p = ParamVector(omega=0.1, alpha=0.05, leverage=0.1, beta=0.8)
    r = np.array([-1.0, 1.0, 0.0])
    vp, gp = filter_variance(spec, p, r, h0=1.0)
    assert gp.alpha_t[1] == pytest.approx(0.15)
    assert gp.alpha_t[2] == pytest.approx(0.05)
    assert vp.h[1] == pytest.approx(0.1 + 0.15 + 0.8)


def test_gclock_persistence_monotone_in_dtau(returns):
    spec = make_spec(Family.GCLOCK, clock_features=(0,))
    p = ParamVector(omega=0.05, alpha0=0.2, kappa=0.3, eta=np.array([0.7]))
    z = np.linspace(-2, 2, 600)[:, None]
    _, gp = filter_variance(spec, p, returns, z)
    assert np.all(np.diff(gp.dtau[1:]) > 0)
    assert np.all(np.diff(gp.beta_clk[1:]) < 0)
    assert np.all((gp.beta_clk > 0) & (gp.beta_clk < 1))


def test_rsm_gamma_derivative_hand_trace():
    spec = ModelSpec(Family.RSM, p_features=(0,), burn_in=0)
    p = ParamVector(omega=0.1, alpha=0.1, beta_low=0.5, beta_high=0.9, gamma_p=np.array([0.7]))
    r = np.array([1.0, -0.5, 0.3])
    z = np.array([[0.4], [-1.2], [0.0]])
    _, h, dh, _ = score_terms(spec, p, r, z, h0=1.0)
    j = spec.slices()["gamma_p"].start
    p1 = 1 / (1 + math.exp(-0.7 * 0.4))
    p2 = 1 / (1 + math.exp(0.7 * 1.2))
    b1 = 0.5 + 0.4 * p1
    b2 = 0.5 + 0.4 * p2
    d1 = 0.4 * p1 * (1 - p1) * 0.4 * 1.0
    d2 = 0.4 * p2 * (1 - p2) * (-1.2) * h[1] + b2 * d1
    assert h[1] == pytest.approx(0.1 + 0.1 + b1)
    assert dh[1, j] == pytest.approx(d1, rel=1e-13)
    assert dh[2, j] == pytest.approx(d2, rel=1e-13)


def test_nonpositive_variance_carries_context():
    spec = make_spec(Family.GFIGARCH, K=5)
    p = ParamVector(omega=1e-6, alpha=0.0, beta=0.1, dbar=0.45, gamma_d=np.array([5.0, 0.0]))
    r = np.r_[np.zeros(3), 10.0, np.zeros(20)]
    z = np.ones((r.size, 2))
    with pytest.raises(NonpositiveVariance) as info:
        filter_variance(spec, p, r, z, h0=1.0)
    assert info.value.t == 4
    assert info.value.params is p


def test_forecast_next_matches_filter(returns):
    spec = ModelSpec(Family.GARCH)
    p = TRUTHS[Family.GARCH]
    vp, _ = filter_variance(spec, p, returns, h0=1.0)
    expected = p.omega + p.alpha * returns[-1] ** 2 + p.beta * vp.h[-1]
    assert forecast_next(spec, p, returns, h0=1.0) == pytest.approx(expected, rel=1e-14)


def test_unconditional_mean_example():
    # omega / (1 - alpha - beta) = 0.05 / 0.02
    p = ParamVector(omega=0.05, alpha=0.08, beta=0.9)
    assert unconditional_mean(ModelSpec(Family.GARCH), p) == pytest.approx(2.5, rel=1e-12)


def test_unconditional_mean_gjr_uses_half_leverage():
    p = ParamVector(omega=0.05, alpha=0.05, leverage=0.06, beta=0.88)
    assert unconditional_mean(ModelSpec(Family.GJR), p) == pytest.approx(0.05 / (1 - 0.05 - 0.03 - 0.88))


def test_unconditional_mean_unstable():
    with pytest.raises(UnstableRegion):
        unconditional_mean(ModelSpec(Family.GARCH), ParamVector(omega=0.05, alpha=0.2, beta=0.8))


def test_unconditional_mean_from_gate_stats():
    p = TRUTHS[Family.RSM]
    assert unconditional_mean(make_spec(Family.RSM), p, {"mean_alpha_psi": 0.9}) == pytest.approx(0.5)


@pytest.mark.parametrize("fam", FAMILIES, ids=str)
def test_truths_are_admissible(fam):
    rep = admissibility_check(make_spec(fam), TRUTHS[fam])
    assert rep.passed, rep.failures


@pytest.mark.parametrize(
    "fam, bad, failing",
    [
        (Family.GARCH, dict(alpha=0.15), "alpha + beta < 1"),
        (Family.RSM, dict(beta_low=0.95), "0 < beta_low < beta_high < 1"),
        (Family.GFIGARCH, dict(dbar=0.6), "0 < dbar < 0.5"),
        (Family.GCLOCK, dict(kappa=-0.1), "kappa > 0"),
        (Family.RSM_GC, dict(alpha0=0.2), "alpha0 + beta_high < 1"),
        (Family.GJR, dict(leverage=0.2), "alpha + leverage/2 + beta < 1"),
    ],
)
def test_admissibility_names_failures(fam, bad, failing):
    rep = admissibility_check(make_spec(fam), TRUTHS[fam].replace(**bad))
    assert not rep.passed
    assert failing in rep.failures


def test_admissibility_contraction_from_path():
    spec = make_spec(Family.GCLOCK)
    sim = simulate_path(spec, TRUTHS[Family.GCLOCK], 3000, seed=1)
    rep = admissibility_check(spec, TRUTHS[Family.GCLOCK], sim.gates)
    assert rep.log_contraction < 0
    assert rep.log_contraction_se > 0


@pytest.mark.parametrize("fam", FAMILIES, ids=str)
def test_simulation_reproduced_by_filter(fam):
    spec = make_spec(fam)
    sim = simulate_path(spec, TRUTHS[fam], 2000, seed=5, presample=0)
    vp, gp = filter_variance(spec, TRUTHS[fam], sim.series, sim.features, h0=sim.variance.h[0])
    assert_allclose(vp.h, sim.variance.h, rtol=1e-10)
    # period 0 has no lagged feature row in the filter
    assert_allclose(gp.alpha_t[1:], sim.gates.alpha_t[1:], rtol=1e-12)
    assert_allclose(gp.psi[1:], sim.gates.psi[1:], rtol=1e-12)


def test_simulation_seed_determinism():
    spec = make_spec(Family.RSM)
    a = simulate_path(spec, TRUTHS[Family.RSM], 500, seed=3)
    b = simulate_path(spec, TRUTHS[Family.RSM], 500, seed=3)
    c = simulate_path(spec, TRUTHS[Family.RSM], 500, seed=4)
    np.testing.assert_array_equal(a.series.returns, b.series.returns)
    assert not np.array_equal(a.series.returns, c.series.returns)
    assert isinstance(a.features, FeatureMatrix)
    assert a.series.percent


def test_feature_generators_are_clipped(rng):
    z = ar1_features(0.9)(rng, 5000, 2)
    assert np.abs(z).max() <= 2.576
    assert abs(np.corrcoef(z[1:, 0], z[:-1, 0])[0, 1] - 0.9) < 0.05
    w = iid_features()(rng, 5000, 1)
    assert abs(np.corrcoef(w[1:, 0], w[:-1, 0])[0, 1]) < 0.05


def test_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec(Family.GFIGARCH)
    with pytest.raises(ValueError):
        ModelSpec(Family.GARCH, K=10)
    with pytest.raises(ValueError):
        ModelSpec(Family.RSM, p_features=(0, 0))
    assert ModelSpec("rsm").family is Family.RSM


def test_param_vector_array_roundtrip():
    spec = make_spec(Family.TGVOL)
    x = TRUTHS[Family.TGVOL].to_array(spec)
    assert x.size == spec.n_params
    back = ParamVector.from_array(spec, x)
    np.testing.assert_array_equal(back.to_array(spec), x)


@settings(max_examples=30, deadline=None)
@given(alpha=st.floats(0.0, 0.3), beta=st.floats(0.0, 0.69), scale=st.floats(0.1, 10.0))
def test_variance_scales_with_returns(alpha, beta, scale):
    # h is homogeneous of degree one in (omega, h0, r^2)
    r = np.random.default_rng(9).standard_normal(50)
    spec = ModelSpec(Family.GARCH)
    p = ParamVector(omega=0.1, alpha=alpha, beta=beta)
    a, _ = filter_variance(spec, p, r, h0=1.0)
    b, _ = filter_variance(spec, p.replace(omega=0.1 * scale), r * math.sqrt(scale), h0=scale)
    assert_allclose(b.h, scale * a.h, rtol=1e-12)
