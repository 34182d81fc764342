import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gatedvol.diagnostics import (acf, gate_summary, gate_surface_grid, ljung_box, residual_diagnostics,
                                  rolling_ljung_box)
from gatedvol.errors import SampleTooShort
from gatedvol.models import Family, GatePath, ModelSpec, ParamVector, VariancePath, filter_variance, simulate_path

from conftest import TRUTHS, make_spec


def _vp(z):
    z = np.asarray(z, dtype=float)
    h = np.ones_like(z)
    return VariancePath(h=h, loglik_terms=-0.5 * z * z, std_resid=z, mask=np.ones(z.size, dtype=bool))


def _gp(n, **kw):
    base = dict(p=None, d=None, beta_clk=None, dtau=None, alpha_t=np.full(n, 0.1), psi=np.full(n, 0.8))
    base.update(kw)
    return GatePath(**base)


def test_acf_lag_zero_and_bounds(rng):
    a = acf(rng.standard_normal(500), 40)
    assert a[0] == 1.0 and np.all(np.abs(a) <= 1)


def test_acf_direct_formula(rng):
    x = rng.standard_normal(100)
    u = x - x.mean()
    assert acf(x, 3)[3] == pytest.approx(np.sum(u[3:] * u[:-3]) / np.sum(u * u), rel=1e-13)


def test_ljung_box_formula(rng):
    x = rng.standard_normal(300)
    rho = acf(x, 10)
    q = 300 * 302 * sum(rho[k] ** 2 / (300 - k) for k in range(1, 11))
    Q, p = ljung_box(x, (10,))[10]
    assert Q == pytest.approx(q, rel=1e-12) and 0 <= p <= 1


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_ljung_box_monotone_in_lags(seed):
    x = np.random.default_rng(seed).standard_normal(200)
    lb = ljung_box(x, tuple(range(1, 21)))
    q = [lb[m][0] for m in range(1, 21)]
    assert np.all(np.diff(q) >= 0)


def test_ljung_box_size():
    rej = [residual_diagnostics(_vp(np.random.default_rng(s).standard_normal(5000)), window=None)
           .ljungbox["z"][10][1] < 0.05 for s in range(200)]
    assert 0.02 <= np.mean(rej) <= 0.09


def test_unfiltered_garch_squares_rejected():
    spec = ModelSpec(Family.GARCH)
    sim = simulate_path(spec, TRUTHS[Family.GARCH], 5000, seed=8)
    r = sim.series.returns
    rep = residual_diagnostics(_vp(r / r.std()), window=None)
    assert rep.ljungbox["z2"][10][1] < 0.01
    vp, _ = filter_variance(spec, TRUTHS[Family.GARCH], sim.series)
    assert residual_diagnostics(vp, window=None).ljungbox["z2"][10][1] > 0.01


def test_constant_residuals_degenerate():
    rep = residual_diagnostics(_vp(np.ones(200)), window=None)
    assert rep.degenerate and np.isnan(rep.acf_z[1])
    json.dumps(rep.to_dict())


def test_sample_too_short():
    with pytest.raises(SampleTooShort):
        residual_diagnostics(_vp(np.zeros(50)))


def test_rolling_ljung_box_windows(rng):
    x = rng.standard_normal(400)
    out = rolling_ljung_box(x, (10, 20), 250)
    assert out["end"][0] == 249 and out["end"].size == 151
    assert out[10][0] == ljung_box(x[:250], (10,))[10][1]


def test_report_contents(rng):
    rep = residual_diagnostics(_vp(rng.standard_normal(600)), window=250, bins=30)
    assert rep.acf_z.size == 41 and rep.band == pytest.approx(1.96 / np.sqrt(600))
    assert rep.histogram["counts"].sum() == 600 and rep.histogram["edges"].size == 31
    assert rep.rolling["z"]["end"].size == 351
    d = json.loads(json.dumps(rep.to_dict()))
    assert set(d["ljungbox"]["z2"]) == {"10", "20"}


def test_gate_summary_ranges():
    spec = make_spec(Family.TGVOL)
    sim = simulate_path(spec, TRUTHS[Family.TGVOL], 2000, seed=1)
    vp, gp = filter_variance(spec, TRUTHS[Family.TGVOL], sim.series, sim.features)
    gs = gate_summary(gp, sim.features, vp.mask)
    assert 0 < gs["p"]["min"] and gs["p"]["max"] < 1
    assert 0 < gs["d"]["min"] and gs["d"]["max"] < TRUTHS[Family.TGVOL].dbar
    assert 0 < gs["beta_clk"]["min"] and gs["beta_clk"]["max"] < 1
    # p rises with the lagged first feature (positive loading)
    assert gs["p"]["feature_corr"][0] > 0.5


def test_surface_constant_gates():
    n = 100
    gp = _gp(n, p=np.full(n, 0.3), beta_clk=np.full(n, 0.9))
    g = gate_surface_grid(gp, _vp(np.ones(n)), bins=5)
    assert np.sum(g.table[:, 5] > 0) == 1
    assert g.empty_fraction == pytest.approx(24 / 25)


def test_surface_reproduces_plane(rng):
    n = 20000
    x, y = rng.random(n), rng.random(n)
    vp = VariancePath(h=x + y, loglik_terms=np.zeros(n), std_resid=np.zeros(n), mask=np.ones(n, bool))
    g = gate_surface_grid(_gp(n, p=x, beta_clk=y), vp, bins=10)
    ok = g.table[:, 5] > 0
    err = np.abs(g.table[ok, 4] - (g.table[ok, 2] + g.table[ok, 3]))
    assert err.max() < 0.1 + 0.1
    assert 0 <= g.empty_fraction <= 1
    assert g.mean_grid().shape == (10, 10)


def test_surface_rejects_inactive_gate():
    with pytest.raises(ValueError):
        gate_surface_grid(_gp(10), _vp(np.ones(10)), x_var="p")
