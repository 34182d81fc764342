"""
Residual diagnostics and gate-trajectory summaries.

Everything here returns plot-ready numbers (arrays, dicts and long-format
tables); nothing is rendered.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .errors import SampleTooShort
from .models import GatePath, VariancePath

__all__ = [
    "DiagnosticsReport",
    "SurfaceGrid",
    "acf",
    "ljung_box",
    "rolling_ljung_box",
    "gate_summary",
    "residual_diagnostics",
    "gate_surface_grid",
]

GATE_FIELDS = ("p", "d", "beta_clk")
QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


def acf(x, nlags: int = 40) -> np.ndarray:
    """Sample autocorrelations ``rho_0..rho_nlags`` (biased denominator).

    A series without variation returns ``NaN`` beyond lag 0.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    u = x - x.mean()
    c0 = np.dot(u, u)
    out = np.full(nlags + 1, np.nan)
    out[0] = 1.0
    if c0 <= 0:
        return out
    for k in range(1, min(nlags, n - 1) + 1):
        out[k] = np.dot(u[k:], u[:-k]) / c0
    return out


def ljung_box(x, lags: Sequence[int] = (10, 20)) -> dict:
    """``Q = N(N+2) sum_{k<=m} rho_k**2/(N-k)`` with chi-squared(m) p-values.

    Returns ``{m: (Q, p)}``; a constant series gives ``(nan, nan)``.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    m_max = max(lags)
    rho = acf(x, m_max)
    k = np.arange(1, m_max + 1)
    q = n * (n + 2) * np.cumsum(rho[1:] ** 2 / (n - k))
    return {int(m): (float(q[m - 1]), float(stats.chi2.sf(q[m - 1], m))) for m in lags}


def rolling_ljung_box(x, lags: Sequence[int] = (10, 20), window: int = 250) -> dict:
    """Ljung-Box p-values on every trailing window of length ``window``.

    Returns ``{"end": window-end indices, m: p-values}``.
    """
    x = np.asarray(x, dtype=float)
    ends = np.arange(window - 1, x.size)
    out = {"end": ends}
    for m in lags:
        out[int(m)] = np.empty(ends.size)
    for i, e in enumerate(ends):
        lb = ljung_box(x[e - window + 1:e + 1], lags)
        for m in lags:
            out[int(m)][i] = lb[int(m)][1]
    return out


def gate_summary(gp: GatePath, features=None, mask=None) -> dict:
    """Mean, range and quantiles of each active gate.

    With ``features`` (rows aligned with the sample) the correlation of
    each gate with every lagged feature column is added; gates at ``t``
    are driven by row ``t - 1``.
    """
    out = {}
    z = None
    if features is not None:
        z = np.asarray(getattr(features, "z", features), dtype=float)
        if z.ndim == 1:
            z = z[:, None]
    for name in GATE_FIELDS:
        g = getattr(gp, name)
        if g is None:
            continue
        g = np.asarray(g, dtype=float)
        sel = np.ones(g.size, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        v = g[sel]
        entry = {
            "mean": float(v.mean()),
            "min": float(v.min()),
            "max": float(v.max()),
            "quantiles": dict(zip([str(q) for q in QUANTILES], np.quantile(v, QUANTILES).tolist())),
        }
        if z is not None:
            corr = []
            zl = np.full_like(z, np.nan)
            zl[1:] = z[:-1]
            for j in range(z.shape[1]):
                ok = sel & np.isfinite(zl[:, j])
                if ok.sum() > 2 and np.ptp(g[ok]) > 0 and np.ptp(zl[ok, j]) > 0:
                    corr.append(float(np.corrcoef(g[ok], zl[ok, j])[0, 1]))
                else:
                    corr.append(float("nan"))
            entry["feature_corr"] = corr
        out[name] = entry
    return out


@dataclass
class DiagnosticsReport:
    """Residual diagnostics.

    Attributes
    ----------
    acf_z, acf_z2 : ndarray
        Autocorrelations of standardized residuals and their squares,
        lags 0..max_lag.
    band : float
        Half-width ``1.96 / sqrt(N)`` of the 95% white-noise band.
    ljungbox : dict
        ``{"z": {m: (Q, p)}, "z2": {m: (Q, p)}}``.
    rolling : dict or None
        Trailing-window Ljung-Box p-values for ``z`` and ``z2``.
    histogram : dict
        ``{"edges": ..., "counts": ...}`` of the standardized residuals.
    gate_summary : dict
    n : int
    degenerate : bool
        Residuals without variation (ACF undefined).
    """

    acf_z: np.ndarray
    acf_z2: np.ndarray
    band: float
    ljungbox: dict
    rolling: Optional[dict]
    histogram: dict
    gate_summary: dict = field(default_factory=dict)
    n: int = 0
    degenerate: bool = False

    def to_dict(self) -> dict:
        def arr(a):
            return [None if not np.isfinite(v) else float(v) for v in np.asarray(a, dtype=float)]

        lb = {k: {str(m): {"Q": q, "p": p} for m, (q, p) in v.items()} for k, v in self.ljungbox.items()}
        out = {
            "n": self.n,
            "degenerate": self.degenerate,
            "band": self.band,
            "acf_z": arr(self.acf_z),
            "acf_z2": arr(self.acf_z2),
            "ljungbox": lb,
            "histogram": {"edges": arr(self.histogram["edges"]),
                          "counts": [int(c) for c in self.histogram["counts"]]},
            "gate_summary": self.gate_summary,
        }
        if self.rolling is not None:
            out["rolling"] = {
                k: {str(m): arr(v) if m != "end" else [int(e) for e in v] for m, v in d.items()}
                for k, d in self.rolling.items()
            }
        return out


def residual_diagnostics(vp: VariancePath, lags: Sequence[int] = (10, 20), window: Optional[int] = 250,
                         max_lag: int = 40, bins: int = 50, gate_path: Optional[GatePath] = None,
                         features=None) -> DiagnosticsReport:
    """ACF, Ljung-Box and histogram of standardized residuals.

    Uses the residuals inside ``vp.mask``.  ``window=None`` skips the
    rolling Ljung-Box variant.

    Raises
    ------
    SampleTooShort
        If at most ``max_lag + 10`` residuals are available.
    """
    z = np.asarray(vp.std_resid, dtype=float)[vp.mask]
    n = z.size
    need = max(max_lag, max(lags)) + 10
    if n <= need:
        raise SampleTooShort(f"{n} residuals; need more than {need}")
    z2 = z * z
    degenerate = bool(np.ptp(z) == 0)
    lb = {"z": ljung_box(z, lags), "z2": ljung_box(z2, lags)}
    rolling = None
    if window is not None and n >= window:
        rolling = {"z": rolling_ljung_box(z, lags, window), "z2": rolling_ljung_box(z2, lags, window)}
    counts, edges = np.histogram(z, bins=bins)
    gs = gate_summary(gate_path, features, vp.mask) if gate_path is not None else {}
    return DiagnosticsReport(acf(z, max_lag), acf(z2, max_lag), float(1.96 / np.sqrt(n)), lb, rolling,
                             {"edges": edges, "counts": counts}, gs, int(n), degenerate)


@dataclass
class SurfaceGrid:
    """Binned means of ``z_var`` over a ``bins x bins`` grid of (x, y).

    ``table`` is long format: one row per cell with
    ``(ix, iy, x_center, y_center, z_mean, count)``; empty cells carry
    ``NaN`` means and zero counts.
    """

    x_var: str
    y_var: str
    z_var: str
    x_edges: np.ndarray
    y_edges: np.ndarray
    table: np.ndarray
    empty_fraction: float

    COLUMNS = ("ix", "iy", "x_center", "y_center", "z_mean", "count")

    def mean_grid(self) -> np.ndarray:
        nb = self.x_edges.size - 1
        return self.table[:, 4].reshape(nb, nb)


def _series(name, gp: GatePath, vp: VariancePath):
    if name in ("h", "std_resid", "loglik_terms"):
        return np.asarray(getattr(vp, name), dtype=float)
    if name in ("p", "d", "beta_clk", "dtau", "alpha_t", "psi"):
        v = getattr(gp, name)
        if v is None:
            raise ValueError(f"gate '{name}' is not active in this model")
        return np.asarray(v, dtype=float)
    raise ValueError(f"unknown variable '{name}'")


def _edges(v, bins):
    lo, hi = float(v.min()), float(v.max())
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    return np.linspace(lo, hi, bins + 1)


def gate_surface_grid(gp: GatePath, vp: VariancePath, x_var: str = "p", y_var: str = "beta_clk",
                      z_var: str = "h", bins: int = 20, mask=None) -> SurfaceGrid:
    """Grid the joint effect of two gates on a third quantity.

    ``x_var``/``y_var``/``z_var`` name :class:`GatePath` fields or ``h``,
    ``std_resid``, ``loglik_terms``.  ``mask`` defaults to ``vp.mask``.
    """
    x = _series(x_var, gp, vp)
    y = _series(y_var, gp, vp)
    z = _series(z_var, gp, vp)
    sel = np.asarray(vp.mask if mask is None else mask, dtype=bool)
    sel = sel & np.isfinite(x) & np.isfinite(y) & np.isfinite(z)
    x, y, z = x[sel], y[sel], z[sel]
    xe, ye = _edges(x, bins), _edges(y, bins)
    ix = np.clip(np.searchsorted(xe, x, side="right") - 1, 0, bins - 1)
    iy = np.clip(np.searchsorted(ye, y, side="right") - 1, 0, bins - 1)
    cell = ix * bins + iy
    cnt = np.bincount(cell, minlength=bins * bins)
    tot = np.bincount(cell, weights=z, minlength=bins * bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(cnt > 0, tot / np.maximum(cnt, 1), np.nan)
    gi, gj = np.divmod(np.arange(bins * bins), bins)
    xc = 0.5 * (xe[:-1] + xe[1:])
    yc = 0.5 * (ye[:-1] + ye[1:])
    table = np.column_stack([gi, gj, xc[gi], yc[gj], mean, cnt]).astype(float)
    return SurfaceGrid(x_var, y_var, z_var, xe, ye, table, float(np.mean(cnt == 0)))
