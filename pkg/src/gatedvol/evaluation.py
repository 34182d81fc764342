"""
Forecast evaluation: variance losses, VaR/ES, coverage tests and
non-nested model comparison over rolling one-step-ahead forecasts.

Losses follow the positive-loss convention ``L_t = -r_t``; a VaR
exceedance is ``L_t > VaR_t``.  Long-run variances for the Diebold-Mariano
and Vuong statistics use Bartlett weights with bandwidth
``floor(1.2 N**(1/3))`` unless given.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
import logging
import math
import os
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy import stats
from scipy.special import xlogy

from .errors import EmptySample, GatedVolError, InsufficientHistory, NonpositiveES
from .estimation import FitOptions, fit_qmle
from .models import ModelSpec, _as_returns, filter_variance

__all__ = [
    "LEVELS",
    "TestResult",
    "ForecastRecord",
    "BacktestReport",
    "qlike_loss",
    "qlike_terms",
    "variance_rmse",
    "var_es_forecast",
    "fz_loss",
    "fz_terms",
    "kupiec_test",
    "christoffersen_test",
    "hac_variance",
    "default_bandwidth",
    "dm_test",
    "vuong_test",
    "rolling_backtest",
    "thread_cap",
]

log = logging.getLogger(__name__)

LEVELS = (0.01, 0.05)
EPS = np.finfo(float).eps


class TestResult(NamedTuple):
    """Statistic, p-value and a flag for degenerate inputs."""

    stat: float
    pvalue: float
    degenerate: bool = False


def _aligned(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("series must be aligned")
    if a.size == 0:
        raise EmptySample("no observations")
    return a, b


# --------------------------------------------------------------------------
# variance losses

def qlike_terms(h_hat, r, eps: float = EPS):
    """Per-period QLIKE ``x - log x - 1`` with ``x = r**2 / h``.

    Zero squared returns are floored at ``eps``.  Returns the terms and the
    number of floored observations.
    """
    h, r = _aligned(h_hat, r)
    if np.any(h <= 0):
        raise ValueError("variance forecasts must be positive")
    r2 = r * r
    low = r2 < eps
    x = np.where(low, eps, r2) / h
    return x - np.log(x) - 1.0, int(low.sum())


def qlike_loss(h_hat, r, eps: float = EPS, return_count: bool = False):
    """Mean QLIKE loss ``mean(r**2/h - log(r**2/h) - 1)``.

    Raises
    ------
    EmptySample
    """
    terms, n_floor = qlike_terms(h_hat, r, eps)
    m = float(terms.mean())
    return (m, n_floor) if return_count else m


def variance_rmse(h_hat, r) -> float:
    """``sqrt(mean((r**2 - h)**2))``.

    Raises
    ------
    EmptySample
    """
    h, r = _aligned(h_hat, r)
    e = r * r - h
    return float(np.sqrt(np.mean(e * e)))


# --------------------------------------------------------------------------
# tail risk

def var_es_forecast(h_hat, level: float, method: str = "gaussian", std_resid=None):
    """VaR and ES as positive loss magnitudes.

    ``gaussian``: ``VaR = -z_level sqrt(h)``, ``ES = phi(z_level)/level sqrt(h)``.
    ``historical``: the same with the empirical ``level`` quantile and tail
    mean of the standardized residuals ``std_resid`` (filtered historical
    simulation).
    """
    if not 0 < level < 0.5:
        raise ValueError("level must lie in (0, 0.5)")
    s = np.sqrt(np.asarray(h_hat, dtype=float))
    if method == "gaussian":
        z = stats.norm.ppf(level)
        q, tail = -z, stats.norm.pdf(z) / level
    elif method == "historical":
        e = np.asarray(std_resid, dtype=float)
        e = e[np.isfinite(e)]
        if e.size == 0:
            raise EmptySample("no standardized residuals")
        zq = np.quantile(e, level, method="inverted_cdf")
        q, tail = -zq, -float(np.mean(e[e <= zq]))
    else:
        raise ValueError("method must be 'gaussian' or 'historical'")
    return q * s, tail * s


def fz_terms(var, es, r, level: float) -> np.ndarray:
    """Per-period FZ0 score with loss ``L = -r``.

    ``1{L > v}(L - v)/(level e) + v/e + log(e) - 1``.
    """
    v = np.asarray(var, dtype=float)
    e = np.asarray(es, dtype=float)
    L = -np.asarray(r, dtype=float)
    if np.any(~(e > 0)):
        raise NonpositiveES("ES must be positive")
    hit = L > v
    return hit * (L - v) / (level * e) + v / e + np.log(e) - 1.0


def fz_loss(var, es, r, level: float) -> float:
    """Mean FZ0 joint (VaR, ES) score; lower is better.

    Raises
    ------
    NonpositiveES
    EmptySample
    """
    t = fz_terms(var, es, r, level)
    if t.size == 0:
        raise EmptySample("no observations")
    return float(np.mean(t))


def kupiec_test(exceed_count: int, N: int, level: float) -> TestResult:
    """Unconditional coverage LR test, chi-squared with one degree of freedom."""
    if N <= 0:
        raise ValueError("N must be positive")
    x = int(exceed_count)
    if not 0 <= x <= N:
        raise ValueError("exceed_count must lie in [0, N]")
    ph = x / N
    l0 = xlogy(N - x, 1 - level) + xlogy(x, level)
    l1 = xlogy(N - x, 1 - ph) + xlogy(x, ph)
    lr = max(-2.0 * (l0 - l1), 0.0)
    return TestResult(float(lr), float(stats.chi2.sf(lr, 1)))


def christoffersen_test(hits) -> TestResult:
    """Markov independence LR test on an exceedance indicator series.

    Without any exceedance (or without any non-exceedance) the table is
    degenerate and ``p = 1`` is returned with ``degenerate=True``.
    """
    I = np.asarray(hits).astype(bool)
    if I.size < 2:
        raise ValueError("need at least two indicators")
    prev, cur = I[:-1], I[1:]
    n00 = int(np.sum(~prev & ~cur))
    n01 = int(np.sum(~prev & cur))
    n10 = int(np.sum(prev & ~cur))
    n11 = int(np.sum(prev & cur))
    if n01 + n11 == 0 or n00 + n10 == 0:
        return TestResult(0.0, 1.0, True)
    pi = (n01 + n11) / (n00 + n01 + n10 + n11)
    p0 = n01 / (n00 + n01) if n00 + n01 else 0.0
    p1 = n11 / (n10 + n11) if n10 + n11 else 0.0
    l0 = xlogy(n00 + n10, 1 - pi) + xlogy(n01 + n11, pi)
    l1 = xlogy(n00, 1 - p0) + xlogy(n01, p0) + xlogy(n10, 1 - p1) + xlogy(n11, p1)
    lr = max(-2.0 * (l0 - l1), 0.0)
    return TestResult(float(lr), float(stats.chi2.sf(lr, 1)))


# --------------------------------------------------------------------------
# comparison statistics

def default_bandwidth(n: int) -> int:
    """Bartlett bandwidth ``floor(1.2 N**(1/3))``."""
    return int(math.floor(1.2 * float(np.cbrt(n))))


def hac_variance(x, lags: Optional[int] = None) -> float:
    """Bartlett-weighted long-run variance of ``x`` (demeaned)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    L = default_bandwidth(n) if lags is None else int(lags)
    u = x - x.mean()
    v = np.dot(u, u) / n
    for j in range(1, min(L, n - 1) + 1):
        v += 2.0 * (1.0 - j / (L + 1.0)) * np.dot(u[j:], u[:-j]) / n
    return float(v)


def _mean_test(diff, lags) -> TestResult:
    n = diff.size
    if np.all(diff == diff[0]) and diff[0] == 0:
        return TestResult(0.0, 1.0, True)
    lrv = hac_variance(diff, lags)
    if not lrv > 0:
        return TestResult(0.0, 1.0, True)
    stat = float(diff.mean() / math.sqrt(lrv / n))
    return TestResult(stat, float(2.0 * stats.norm.sf(abs(stat))))


def dm_test(loss_a, loss_b, hac_lags: Optional[int] = None) -> TestResult:
    """Diebold-Mariano test on ``loss_a - loss_b``.

    Positive statistics mean model ``a`` has the larger average loss.  A
    constant zero differential gives ``(0, 1)`` flagged degenerate.
    """
    a, b = _aligned(loss_a, loss_b)
    if a.size < 30:
        raise ValueError("DM test needs at least 30 observations")
    return _mean_test(a - b, hac_lags)


def vuong_test(ll_a, ll_b, hac_lags: Optional[int] = None) -> TestResult:
    """Vuong statistic ``sqrt(T) mean(m) / s`` with ``m = ll_a - ll_b``.

    Positive values favor model ``a``; ``s`` is the HAC long-run standard
    deviation of ``m``.
    """
    a, b = _aligned(ll_a, ll_b)
    return _mean_test(a - b, hac_lags)


# --------------------------------------------------------------------------
# rolling backtest

@dataclass
class ForecastRecord:
    """Column table of one-step-ahead forecasts for one model."""

    dates: np.ndarray
    h_hat: np.ndarray
    r_realized: np.ndarray
    var_1: np.ndarray
    var_5: np.ndarray
    es_1: np.ndarray
    es_5: np.ndarray
    loglik: np.ndarray

    COLUMNS = ("date", "h_hat", "r_realized", "var_1", "var_5", "es_1", "es_5", "loglik")

    def __len__(self) -> int:
        return self.h_hat.size

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.h_hat)

    def rows(self):
        for i in range(len(self)):
            yield (str(self.dates[i]), self.h_hat[i], self.r_realized[i], self.var_1[i],
                   self.var_5[i], self.es_1[i], self.es_5[i], self.loglik[i])


@dataclass
class BacktestReport:
    """Per-model metrics, pairwise comparisons and the forecast tables."""

    models: dict
    pairwise: list
    forecasts: dict = field(repr=False)
    errors: dict
    window: int
    refit_every: int

    def to_dict(self) -> dict:
        return {
            "window": self.window,
            "refit_every": self.refit_every,
            "models": self.models,
            "pairwise": self.pairwise,
            "errors": self.errors,
        }


def thread_cap(default: int = 1) -> int:
    """Parallelism cap from ``GATEDVOL_THREADS``."""
    try:
        return max(1, int(os.environ.get("GATEDVOL_THREADS", default)))
    except ValueError:
        return default


def _rows(features, start, stop):
    if features is None:
        return None
    z = getattr(features, "z", features)
    return np.asarray(z, dtype=float)[start:stop]


def _forecast_model(spec, r, features, window, refit_every, var_method, opts):
    T = r.size
    n = T - window
    h = np.full(n, np.nan)
    v = {lv: np.full(n, np.nan) for lv in LEVELS}
    e = {lv: np.full(n, np.nan) for lv in LEVELS}
    errors = []
    params = None
    n_fits = 0
    for s in range(window, T, refit_every):
        stop = min(s + refit_every, T)
        lo = s - window
        fit_r = r[lo:s]
        fit_z = _rows(features, lo, s)
        h0 = float(np.var(fit_r))
        try:
            o = opts if params is None else replace(opts, start=params, compute_cov=False)
            res = fit_qmle(spec, fit_r, fit_z, o)
            params = res.params
            n_fits += 1
        except GatedVolError as exc:
            errors.append(f"refit at {s}: {exc}")
            if params is None:
                continue
        try:
            vp, _ = filter_variance(spec, params, r[lo:stop], _rows(features, lo, stop), h0=h0)
        except GatedVolError as exc:
            errors.append(f"filter at {s}: {exc}")
            continue
        hb = vp.h[window:]
        h[s - window:stop - window] = hb
        resid = vp.std_resid[:window][vp.mask[:window]] if var_method == "historical" else None
        for lv in LEVELS:
            v[lv][s - window:stop - window], e[lv][s - window:stop - window] = var_es_forecast(
                hb, lv, var_method, resid)
    return h, v, e, errors, n_fits


def _metrics(rec: ForecastRecord) -> dict:
    ok = rec.valid
    out = {"n_forecasts": int(ok.sum())}
    if not ok.any():
        return out
    h, r = rec.h_hat[ok], rec.r_realized[ok]
    q, n_floor = qlike_loss(h, r, return_count=True)
    out.update(qlike=q, qlike_floored=n_floor, rmse=variance_rmse(h, r))
    L = -r
    for lv, tag in zip(LEVELS, ("1", "5")):
        var = getattr(rec, f"var_{tag}")[ok]
        es = getattr(rec, f"es_{tag}")[ok]
        hits = L > var
        out[f"fz_{tag}"] = fz_loss(var, es, r, lv)
        out[f"exceed_rate_{tag}"] = float(hits.mean())
        out[f"kupiec_p_{tag}"] = kupiec_test(int(hits.sum()), hits.size, lv).pvalue
        if tag == "5":
            ch = christoffersen_test(hits) if hits.size >= 2 else TestResult(0.0, 1.0, True)
            out["christoffersen_p"] = ch.pvalue
            out["christoffersen_degenerate"] = ch.degenerate
    return out


def rolling_backtest(specs: Sequence[ModelSpec], returns, features=None, window: int = 1500,
                     refit_every: int = 21, names: Optional[Sequence[str]] = None,
                     var_method: str = "gaussian", fit_options: Optional[FitOptions] = None,
                     n_jobs: Optional[int] = None) -> BacktestReport:
    """Rolling-window one-step-ahead forecasting and evaluation.

    Every ``refit_every`` observations each model is refit on the trailing
    ``window`` returns (warm-started from the previous estimate) and the
    parameters are held until the next refit.  The forecast for period
    ``t`` uses returns through ``t - 1`` and the filter is started at the
    fit window's sample variance.  A failed refit keeps the previous
    parameters; every failure is recorded in ``errors`` and never aborts
    the run.

    Raises
    ------
    InsufficientHistory
        If ``window`` leaves fewer than 250 fitting periods after burn-in
        or no forecast period remains.
    """
    specs = list(specs)
    names = list(names) if names is not None else [str(s.family) for s in specs]
    if len(set(names)) != len(names):
        names = [f"{n}_{i}" for i, n in enumerate(names)]
    r = _as_returns(returns)
    dates = getattr(returns, "dates", np.arange(r.size))
    T = r.size
    if T <= window:
        raise InsufficientHistory(f"sample of {T} leaves no forecast beyond window {window}")
    for s in specs:
        if window < s.effective_burn_in + 250:
            raise InsufficientHistory(f"window {window} < burn-in {s.effective_burn_in} + 250 for {s.family}")
    opts = fit_options or FitOptions(compute_cov=False)
    workers = min(len(specs), n_jobs or thread_cap())

    def run(spec):
        try:
            return _forecast_model(spec, r, features, window, refit_every, var_method, opts)
        except Exception as exc:  # a broken model must not abort the others
            n = T - window
            nan = {lv: np.full(n, np.nan) for lv in LEVELS}
            return np.full(n, np.nan), nan, dict(nan), [f"{type(exc).__name__}: {exc}"], 0

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            outs = list(ex.map(run, specs))
    else:
        outs = [run(s) for s in specs]

    rr = r[window:]
    forecasts, models, errors = {}, {}, {}
    for name, (h, v, e, errs, n_fits) in zip(names, outs):
        with np.errstate(divide="ignore", invalid="ignore"):
            ll = -0.5 * (np.log(h) + rr * rr / h)
        rec = ForecastRecord(dates[window:], h, rr, v[0.01], v[0.05], e[0.01], e[0.05], ll)
        forecasts[name] = rec
        m = _metrics(rec)
        m["n_fits"] = n_fits
        models[name] = m
        errors[name] = errs

    pairwise = []
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            a, b = forecasts[names[i]], forecasts[names[j]]
            ok = a.valid & b.valid
            entry = {"model_a": names[i], "model_b": names[j], "n": int(ok.sum())}
            if ok.sum() >= 30:
                qa, _ = qlike_terms(a.h_hat[ok], rr[ok])
                qb, _ = qlike_terms(b.h_hat[ok], rr[ok])
                ea = (rr[ok] ** 2 - a.h_hat[ok]) ** 2
                eb = (rr[ok] ** 2 - b.h_hat[ok]) ** 2
                dq = dm_test(qa, qb)
                de = dm_test(ea, eb)
                vu = vuong_test(a.loglik[ok], b.loglik[ok])
                entry.update(dm_qlike_stat=dq.stat, dm_qlike_p=dq.pvalue,
                             dm_rmse_stat=de.stat, dm_rmse_p=de.pvalue,
                             vuong_stat=vu.stat, vuong_p=vu.pvalue)
            pairwise.append(entry)
    return BacktestReport(models, pairwise, forecasts, errors, int(window), int(refit_every))
