import numpy as np
from numpy.testing import assert_allclose
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from gatedvol.errors import InsufficientHistory, NonmonotoneDates
from gatedvol.features import (
    COLUMNS,
    FeatureConfig,
    FeatureMatrix,
    ReturnSeries,
    build_feature_matrix,
    rolling_rank_quantile,
    rolling_zscore,
    winsorize,
)


@pytest.fixture
def series(rng):
    T = 800
    r = 0.01 * rng.standard_t(5, T)
    vol = rng.lognormal(10, 0.3, T)
    return ReturnSeries(np.datetime64("2010-01-01") + np.arange(T), r, volume=vol)


def test_dates_must_increase():
    d = np.array(["2020-01-01", "2020-01-02", "2020-01-02"], dtype="datetime64[D]")
    with pytest.raises(NonmonotoneDates):
        ReturnSeries(d, np.zeros(3))


def test_return_sanity():
    with pytest.raises(ValueError):
        ReturnSeries(None, np.array([0.0, 1.5]))
    with pytest.raises(ValueError):
        ReturnSeries(None, np.array([0.0, np.nan]))


def test_zscore_window_mean_is_zero():
    x = np.r_[np.arange(24.0), 11.5]
    assert rolling_zscore(x, 25)[-1] == pytest.approx(0.0, abs=1e-14)


def test_zscore_ramp():
    x = np.arange(300.0)
    z = rolling_zscore(x, 20)
    expected = 9.5 / np.std(np.arange(20.0), ddof=1)
    assert np.all(np.isnan(z[:19]))
    assert_allclose(z[19:], expected, rtol=1e-12)


def test_zscore_ramp_hand_value():
    # window {t-4..t} of a ramp: deviation 2, sample std sqrt(2.5)
    x = np.arange(40.0)
    win = x[-5:]
    assert (win[-1] - win.mean()) / win.std(ddof=1) == pytest.approx(1.2649, abs=1e-4)


def test_zscore_constant_guard():
    z = rolling_zscore(np.full(100, 3.7), 20)
    assert np.all(z[19:] == 0.0)


def test_zscore_window_too_small():
    with pytest.raises(ValueError):
        rolling_zscore(np.arange(50.0), 10)


@settings(max_examples=40, deadline=None)
@given(
    x=arrays(np.float64, 80, elements=st.floats(-10, 10)),
    a=st.floats(0.01, 100),
    b=st.floats(-100, 100),
)
def test_zscore_affine_invariance(x, a, b):
    z1 = rolling_zscore(x, 20)
    z2 = rolling_zscore(a * x + b, 20)
    # windows with tiny spread lose relative precision under the shift
    ok = np.isfinite(z1) & (np.abs(z1) < 1e3)
    win = np.lib.stride_tricks.sliding_window_view(x, 20)
    spread = np.r_[np.full(19, 0.0), np.ptp(win, axis=1)]
    ok &= spread > 1e-3
    assert_allclose(z2[ok], z1[ok], atol=1e-9)


def test_winsorize_identity_band(rng):
    x = rng.standard_normal(300)
    assert_allclose(winsorize(x, 0.0, 1.0), x)


def test_winsorize_constant():
    x = np.full(400, 2.5)
    assert_allclose(winsorize(x), x)


def test_winsorize_outlier_clipped(rng):
    x = np.abs(rng.standard_normal(400))
    x[350] = 100 * x.std()
    y = winsorize(x, 0.005, 0.995, 252)
    seg = np.r_[y[99:350], x[350]]
    # order statistic ceil(0.995 n) of the window
    expected = np.sort(seg)[int(np.ceil(0.995 * seg.size)) - 1]
    assert y[350] == expected
    assert y[350] < x[350]


def test_winsorize_idempotent(rng):
    x = rng.standard_t(2, 1000)
    y = winsorize(x)
    assert_allclose(winsorize(y), y, rtol=0, atol=0)


def test_winsorize_bad_quantiles():
    with pytest.raises(ValueError):
        winsorize(np.zeros(10), 0.6, 0.4)


def test_rank_quantile_increasing():
    q = rolling_rank_quantile(np.arange(600.0), 252)
    assert np.all(np.isnan(q[:251]))
    assert np.all(q[251:] == 1.0)


def test_rank_quantile_ties():
    q = rolling_rank_quantile(np.ones(300), 252)
    assert_allclose(q[251:], 0.5)


def test_build_shapes(series):
    fm = build_feature_matrix(series)
    assert fm.columns == COLUMNS
    assert fm.z.shape == (800, 4)
    ok = fm.available([0, 1])
    assert not ok[:270].any()
    assert ok[270:].all()
    # rank and proxy columns are standardized after their own window fills
    late = fm.available([2, 3])
    assert not late[:501].any()
    assert late[521:].all()


def test_rv20_direct_sum():
    r = np.full(300, 0.01)
    fm = build_feature_matrix(ReturnSeries(None, r), FeatureConfig(winsorize=False))
    assert_allclose(fm.raw[19:, 1], 2e-3, rtol=1e-12)
    assert np.isnan(fm.raw[18, 1])


def test_constant_returns_zero_scores():
    fm = build_feature_matrix(ReturnSeries(None, np.full(400, 0.002)))
    assert np.all(fm.z[251:, 0] == 0.0)
    assert np.all(fm.z[270:, 1] == 0.0)


def test_missing_volume_marked_unavailable(series):
    s = ReturnSeries(series.dates, series.returns)
    fm = build_feature_matrix(s)
    assert np.all(np.isnan(fm.z[:, 3]))
    assert not fm.available([3]).any()


def test_supplied_iv_used(series, rng):
    iv = 0.2 + 0.05 * rng.random(len(series))
    s = ReturnSeries(series.dates, series.returns, implied_vol=iv)
    fm = build_feature_matrix(s, FeatureConfig(winsorize=False))
    assert_allclose(fm.raw[:, 2], iv)
    assert_allclose(fm.z[:, 2], rolling_zscore(iv, 252), equal_nan=True)


def test_insufficient_history():
    with pytest.raises(InsufficientHistory):
        build_feature_matrix(ReturnSeries(None, np.zeros(271)))


def test_no_lookahead(series, rng):
    fm = build_feature_matrix(series)
    cut = 600
    r2 = series.returns.copy()
    v2 = series.volume.copy()
    perm = rng.permutation(np.arange(cut + 1, len(series)))
    r2[cut + 1:] = r2[perm]
    v2[cut + 1:] = v2[perm]
    fm2 = build_feature_matrix(ReturnSeries(series.dates, r2, volume=v2))
    assert_allclose(fm2.z[:cut + 1], fm.z[:cut + 1], equal_nan=True, rtol=0, atol=0)
    assert_allclose(fm2.raw[:cut + 1], fm.raw[:cut + 1], equal_nan=True, rtol=0, atol=0)


def test_winsorized_within_band(series):
    fm = build_feature_matrix(series)
    x = fm.raw[:, 0]
    for t in range(260, 800, 37):
        seg = x[t - 251:t + 1]
        lo, hi = np.quantile(seg, [0.005, 0.995], method="inverted_cdf")
        assert lo <= x[t] <= hi


def test_from_array_and_slice():
    fm = FeatureMatrix.from_array(np.arange(10.0))
    assert fm.n_features == 1
    assert len(fm.slice(2, 5)) == 3
    with pytest.raises(IndexError):
        fm.gate_inputs([1])
