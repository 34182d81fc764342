"""
Gate-input features built from a daily return series.

Row ``t`` of a :class:`FeatureMatrix` only uses information dated ``t`` or
earlier.  Models read row ``t - 1`` when forming the gates for period
``t``, so the standardized inputs are always predetermined.  Rows whose
trailing windows are incomplete hold ``NaN`` and are reported through
:meth:`FeatureMatrix.available`.

Column order is fixed: ``abs_ret``, ``rv20``, ``iv``, ``vol_quantile``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InsufficientHistory, NonmonotoneDates

__all__ = [
    "COLUMNS",
    "ReturnSeries",
    "FeatureConfig",
    "FeatureMatrix",
    "build_feature_matrix",
    "rolling_zscore",
    "winsorize",
    "rolling_rank_quantile",
]

COLUMNS = ("abs_ret", "rv20", "iv", "vol_quantile")
RV_WINDOW = 20


def _as_dates(dates, n: int) -> np.ndarray:
    if dates is None:
        return np.arange(n).astype("datetime64[D]")
    return np.asarray(dates).astype("datetime64[D]")


@dataclass(frozen=True)
class ReturnSeries:
    """Dated daily log-returns with optional volume and implied volatility.

    Parameters
    ----------
    dates : array_like
        Strictly increasing calendar dates (anything numpy can cast to
        ``datetime64[D]``).  ``None`` assigns consecutive integer days.
    returns : array_like
        Log-returns, finite with ``|r| < 1``.
    volume, implied_vol : array_like, optional
        Nonnegative auxiliary columns; ``NaN`` entries mark missing values.
    percent : bool
        Returns are in percent, so the sanity bound becomes ``|r| < 100``.
    """

    dates: np.ndarray
    returns: np.ndarray
    volume: Optional[np.ndarray] = None
    implied_vol: Optional[np.ndarray] = None
    percent: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        r = np.asarray(self.returns, dtype=float)
        if r.ndim != 1:
            raise ValueError("returns must be one-dimensional")
        d = _as_dates(self.dates, r.size)
        if d.shape != r.shape:
            raise ValueError("dates and returns must have the same length")
        if d.size > 1:
            bad = np.nonzero(np.diff(d) <= np.timedelta64(0, "D"))[0]
            if bad.size:
                raise NonmonotoneDates(f"dates not strictly increasing at position {bad[0] + 1} ({d[bad[0] + 1]})")
        if not np.all(np.isfinite(r)):
            raise ValueError("returns must be finite")
        bound = 100.0 if self.percent else 1.0
        if np.any(np.abs(r) >= bound):
            raise ValueError(f"daily log-returns must satisfy |r| < {bound:g}")
        object.__setattr__(self, "dates", d)
        object.__setattr__(self, "returns", r)
        for name in ("volume", "implied_vol"):
            col = getattr(self, name)
            if col is not None:
                col = np.asarray(col, dtype=float)
                if col.shape != r.shape:
                    raise ValueError(f"{name} must align with returns")
                if np.any(col[np.isfinite(col)] < 0):
                    raise ValueError(f"{name} must be nonnegative")
                object.__setattr__(self, name, col)

    def __len__(self) -> int:
        return self.returns.size

    def slice(self, start: int, stop: int) -> "ReturnSeries":
        sl = slice(start, stop)
        vol = None if self.volume is None else self.volume[sl]
        iv = None if self.implied_vol is None else self.implied_vol[sl]
        return ReturnSeries(self.dates[sl], self.returns[sl], vol, iv, self.percent, dict(self.meta))


@dataclass(frozen=True)
class FeatureConfig:
    zscore_window: int = 252
    quantile_window: int = 252
    winsor_lo: float = 0.005
    winsor_hi: float = 0.995
    winsor_window: int = 252
    winsorize: bool = True


@dataclass(frozen=True)
class FeatureMatrix:
    """Raw and standardized gate inputs aligned with a return series.

    Attributes
    ----------
    dates : ndarray
    raw : ndarray, shape (T, 4)
        Winsorized raw features (``NaN`` where undefined).
    z : ndarray, shape (T, q)
        Rolling z-scores (``NaN`` while the window fills or when the
        source column is missing).
    columns : tuple of str
    """

    dates: np.ndarray
    raw: np.ndarray
    z: np.ndarray
    columns: tuple = COLUMNS

    def __post_init__(self):
        for name in ("raw", "z"):
            a = np.array(getattr(self, name), dtype=float)
            if a.ndim == 1:
                a = a[:, None]
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @classmethod
    def from_array(cls, z, dates=None, columns=None) -> "FeatureMatrix":
        """Wrap already-standardized inputs (e.g. simulated features)."""
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        cols = tuple(columns) if columns is not None else tuple(f"z{i}" for i in range(z.shape[1]))
        return cls(_as_dates(dates, z.shape[0]), z.copy(), z, cols)

    def __len__(self) -> int:
        return self.z.shape[0]

    @property
    def n_features(self) -> int:
        return self.z.shape[1]

    def gate_inputs(self, indices: Sequence[int]) -> np.ndarray:
        """Standardized columns ``indices`` (``NaN`` where unavailable)."""
        idx = list(indices)
        if any(i < 0 or i >= self.n_features for i in idx):
            raise IndexError(f"feature index out of range for {self.n_features} columns")
        return np.ascontiguousarray(self.z[:, idx])

    def available(self, indices: Sequence[int]) -> np.ndarray:
        """Rows where every requested column is defined."""
        idx = list(indices)
        if not idx:
            return np.ones(len(self), dtype=bool)
        return np.all(np.isfinite(self.z[:, idx]), axis=1)

    def slice(self, start: int, stop: int) -> "FeatureMatrix":
        return FeatureMatrix(self.dates[start:stop], self.raw[start:stop], self.z[start:stop], self.columns)


def rolling_zscore(x, window: int = 252) -> np.ndarray:
    """Trailing z-score ``(x_t - mean) / std`` over ``x_{t-w+1..t}``.

    The standard deviation uses ``ddof=1``.  Windows with no spread map to
    zero; incomplete windows and windows containing ``NaN`` give ``NaN``.
    """
    if window < 20:
        raise ValueError("window must be at least 20")
    x = np.asarray(x, dtype=float)
    out = np.full(x.shape, np.nan)
    if x.size < window:
        return out
    win = sliding_window_view(x, window)
    mean = win.mean(axis=1)
    sd = win.std(axis=1, ddof=1)
    flat = np.ptp(win, axis=1) == 0
    with np.errstate(invalid="ignore", divide="ignore"):
        z = (x[window - 1:] - mean) / sd
    z[flat] = 0.0
    out[window - 1:] = z
    return out


def winsorize(x, lo_q: float = 0.005, hi_q: float = 0.995, window: int = 252) -> np.ndarray:
    """Clip each value to trailing empirical quantiles.

    The band at ``t`` is the pair of order statistics (inverse-CDF
    quantiles) of the already-winsorized values ``y_{t-w+1..t-1}`` together
    with the incoming ``x_t``.  Using the cleaned history makes the
    operation idempotent, and order statistics keep clipped values on
    observed data points.  ``NaN`` entries pass through and are ignored in
    later windows.
    """
    if not 0 <= lo_q < hi_q <= 1:
        raise ValueError("need 0 <= lo_q < hi_q <= 1")
    x = np.asarray(x, dtype=float)
    y = x.copy()
    if lo_q == 0 and hi_q == 1:
        return y
    for t in range(x.size):
        if not np.isfinite(x[t]):
            continue
        seg = y[max(0, t - window + 1):t + 1]
        seg = seg[np.isfinite(seg)]
        lo, hi = np.quantile(seg, [lo_q, hi_q], method="inverted_cdf")
        y[t] = min(max(x[t], lo), hi)
    return y


def rolling_rank_quantile(x, window: int = 252) -> np.ndarray:
    """Average-rank position of ``x_t`` in its trailing window, in [0, 1]."""
    x = np.asarray(x, dtype=float)
    out = np.full(x.shape, np.nan)
    if x.size < window:
        return out
    win = sliding_window_view(x, window)
    cur = x[window - 1:, None]
    less = np.sum(win < cur, axis=1)
    equal = np.sum(win == cur, axis=1)
    rank = less + 0.5 * (equal + 1)
    q = (rank - 1.0) / (window - 1.0)
    q[~np.all(np.isfinite(win), axis=1)] = np.nan
    out[window - 1:] = q
    return out


def build_feature_matrix(s: ReturnSeries, cfg: Optional[FeatureConfig] = None) -> FeatureMatrix:
    """Build the four standardized gate inputs.

    ``abs_ret = |r_t|`` and ``rv20 = sum_{i=t-19..t} r_i**2`` are winsorized
    then z-scored.  ``iv`` is the supplied implied volatility when present,
    otherwise the proxy ``0.5 z(|r|) + 0.5 z(sqrt(rv20))``.  ``vol_quantile``
    is the trailing rank of volume; without volume the column is all
    ``NaN``.

    Raises
    ------
    InsufficientHistory
        If the series is shorter than ``zscore_window + 20``.
    """
    cfg = cfg or FeatureConfig()
    r = s.returns
    T = r.size
    need = cfg.zscore_window + RV_WINDOW
    if T < need:
        raise InsufficientHistory(f"need at least {need} observations, got {T}")

    def clean(col):
        if not cfg.winsorize:
            return col
        return winsorize(col, cfg.winsor_lo, cfg.winsor_hi, cfg.winsor_window)

    w = cfg.zscore_window
    abs_ret = clean(np.abs(r))
    rv = np.full(T, np.nan)
    rv[RV_WINDOW - 1:] = sliding_window_view(r * r, RV_WINDOW).sum(axis=1)
    rv = clean(rv)
    z_abs = rolling_zscore(abs_ret, w)
    z_rv = rolling_zscore(rv, w)

    if s.implied_vol is not None:
        iv = clean(s.implied_vol)
    else:
        iv = 0.5 * z_abs + 0.5 * rolling_zscore(np.sqrt(rv), w)
    z_iv = rolling_zscore(iv, w)

    if s.volume is not None:
        vq = rolling_rank_quantile(s.volume, cfg.quantile_window)
        z_vq = rolling_zscore(vq, w)
    else:
        vq = np.full(T, np.nan)
        z_vq = np.full(T, np.nan)

    raw = np.column_stack([abs_ret, rv, iv, vq])
    z = np.column_stack([z_abs, z_rv, z_iv, z_vq])
    return FeatureMatrix(s.dates.copy(), raw, z, COLUMNS)
