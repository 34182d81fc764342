"""
Conditional-variance filters for the gated GARCH family.

Every model is a special case of

    h_t = omega + A_t r_{t-1}**2 + Psi_t h_{t-1}
          + sum_{k=1}^{min(K, t)} pi_k(d_t) (r_{t-k}**2 - h_{t-k})

where the shock loading ``A_t``, persistence ``Psi_t`` and fractional
order ``d_t`` are functions of the lagged features ``z_{t-1}``:

=========  =====================  =========================  ==========
family     A_t                    Psi_t                      d_t
=========  =====================  =========================  ==========
GARCH      alpha                  beta                       --
GJR        alpha + lev 1[r<0]     beta                       --
RSM        alpha                  (1-p) b_low + p b_high     --
GFIGARCH   alpha                  beta                       gated
GCLOCK     a0 (1 - b_clk)         b_clk                      --
RSM_GF     alpha                  (1-p) b_low + p b_high     gated
RSM_GC     a0 (1 - b_clk)         (1-p) b_low + p b_high     --
GF_GC      a0 (1 - b_clk)         b_clk                      gated
TGVOL      a0 (1 - b_clk)         [(1-p) b_low + p b_high]   gated
                                  * b_clk
=========  =====================  =========================  ==========

with ``p = sigmoid(gamma_p' z)``, ``d = dbar sigmoid(gamma_d' z)``,
``dtau = exp(eta' z)`` and ``b_clk = exp(-kappa dtau)``.  Gates have no
intercept.  ``pi_k(d) = (-1)**k binom(d, k)`` is used with its literal
(negative) sign, so positivity of ``h_t`` is checked rather than assumed.

The recursion starts from ``h_0`` (the sample variance by default); lags
before the sample contribute nothing to the fractional sum.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from enum import Enum
import math
from typing import Callable, Iterable, NamedTuple, Optional, Sequence, Union

import numpy as np
from numba import njit

from .errors import NonpositiveVariance, UnstableRegion
from .features import FeatureMatrix, ReturnSeries

__all__ = [
    "Family",
    "FAMILIES",
    "ModelSpec",
    "ParamVector",
    "GatePath",
    "VariancePath",
    "AdmissibilityReport",
    "Simulation",
    "DEFAULT_BURN_IN",
    "compute_gates",
    "filter_variance",
    "forecast_next",
    "unconditional_mean",
    "admissibility_check",
    "simulate_path",
    "ar1_features",
    "iid_features",
]

DEFAULT_BURN_IN = 252 + 20


class Family(str, Enum):
    GARCH = "GARCH"
    GJR = "GJR"
    RSM = "RSM"
    GFIGARCH = "GFIGARCH"
    GCLOCK = "GCLOCK"
    RSM_GF = "RSM_GF"
    RSM_GC = "RSM_GC"
    GF_GC = "GF_GC"
    TGVOL = "TGVOL"

    def __str__(self) -> str:
        return self.value


FAMILIES = tuple(Family)

_REGIME = {Family.RSM, Family.RSM_GF, Family.RSM_GC, Family.TGVOL}
_FRACTIONAL = {Family.GFIGARCH, Family.RSM_GF, Family.GF_GC, Family.TGVOL}
_CLOCK = {Family.GCLOCK, Family.RSM_GC, Family.GF_GC, Family.TGVOL}
_CLOCK_PERSISTENCE = {Family.GCLOCK, Family.GF_GC, Family.TGVOL}


@dataclass(frozen=True)
class ModelSpec:
    """Model family, fractional truncation and per-gate feature columns.

    Parameters
    ----------
    family : Family or str
    K : int, optional
        Fractional truncation.  Required for families with a fractional
        gate and forbidden otherwise.
    p_features, d_features, clock_features : sequence of int
        Feature columns feeding the regime, fractional and clock gates.
        Gates may use disjoint subsets.
    burn_in : int, optional
        Periods excluded from the likelihood; defaults to
        ``max(K, 272)``.
    """

    family: Family
    K: Optional[int] = None
    p_features: tuple = (0, 1)
    d_features: tuple = (0, 1)
    clock_features: tuple = (0, 1)
    burn_in: Optional[int] = None

    def __post_init__(self):
        fam = Family(str(self.family).upper())
        object.__setattr__(self, "family", fam)
        for name in ("p_features", "d_features", "clock_features"):
            idx = tuple(int(i) for i in getattr(self, name))
            if any(i < 0 for i in idx) or len(set(idx)) != len(idx):
                raise ValueError(f"{name} must be distinct nonnegative column indices")
            object.__setattr__(self, name, idx)
        if fam in _FRACTIONAL:
            if self.K is None or int(self.K) < 1:
                raise ValueError(f"{fam} needs a truncation K >= 1")
            object.__setattr__(self, "K", int(self.K))
        elif self.K is not None:
            raise ValueError(f"{fam} has no fractional gate; K must be None")
        if self.burn_in is not None and self.burn_in < 0:
            raise ValueError("burn_in must be nonnegative")

    @property
    def has_regime(self) -> bool:
        return self.family in _REGIME

    @property
    def has_fractional(self) -> bool:
        return self.family in _FRACTIONAL

    @property
    def has_clock(self) -> bool:
        return self.family in _CLOCK

    @property
    def uses_alpha0(self) -> bool:
        return self.has_clock

    @property
    def feature_indices(self) -> tuple:
        """Union of the columns used by active gates."""
        cols: set = set()
        if self.has_regime:
            cols.update(self.p_features)
        if self.has_fractional:
            cols.update(self.d_features)
        if self.has_clock:
            cols.update(self.clock_features)
        return tuple(sorted(cols))

    @property
    def effective_burn_in(self) -> int:
        if self.burn_in is not None:
            return int(self.burn_in)
        return max(self.K or 0, DEFAULT_BURN_IN)

    def blocks(self) -> list[tuple[str, int]]:
        """Natural parameter layout as ``(name, size)`` pairs."""
        out = [("omega", 1), ("alpha0" if self.uses_alpha0 else "alpha", 1)]
        if self.family is Family.GJR:
            out.append(("leverage", 1))
        if self.has_regime:
            out += [("beta_low", 1), ("beta_high", 1), ("gamma_p", len(self.p_features))]
        elif self.family not in _CLOCK_PERSISTENCE:
            out.append(("beta", 1))
        if self.has_fractional:
            out += [("dbar", 1), ("gamma_d", len(self.d_features))]
        if self.has_clock:
            out += [("kappa", 1), ("eta", len(self.clock_features))]
        return out

    @property
    def param_names(self) -> list[str]:
        names = []
        for name, size in self.blocks():
            if name in ("gamma_p", "gamma_d", "eta"):
                names += [f"{name}[{i}]" for i in range(size)]
            else:
                names.append(name)
        return names

    @property
    def n_params(self) -> int:
        return sum(size for _, size in self.blocks())

    def slices(self) -> dict[str, slice]:
        out, pos = {}, 0
        for name, size in self.blocks():
            out[name] = slice(pos, pos + size)
            pos += size
        return out


_VECTOR_FIELDS = ("gamma_p", "gamma_d", "eta")


@dataclass(frozen=True)
class ParamVector:
    """Natural-scale parameters; fields not used by a family stay ``None``."""

    omega: Optional[float] = None
    alpha: Optional[float] = None
    alpha0: Optional[float] = None
    leverage: Optional[float] = None
    beta: Optional[float] = None
    beta_low: Optional[float] = None
    beta_high: Optional[float] = None
    gamma_p: Optional[np.ndarray] = None
    gamma_d: Optional[np.ndarray] = None
    dbar: Optional[float] = None
    kappa: Optional[float] = None
    eta: Optional[np.ndarray] = None

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if f.name in _VECTOR_FIELDS:
                v = np.atleast_1d(np.asarray(v, dtype=float)).copy()
                v.flags.writeable = False
            else:
                v = float(v)
            object.__setattr__(self, f.name, v)

    def to_array(self, spec: ModelSpec) -> np.ndarray:
        parts = []
        for name, size in spec.blocks():
            v = getattr(self, name)
            if v is None:
                raise ValueError(f"{spec.family} requires parameter {name!r}")
            v = np.atleast_1d(v)
            if v.size != size:
                raise ValueError(f"{name} has length {v.size}, expected {size}")
            parts.append(v)
        return np.concatenate(parts).astype(float)

    @classmethod
    def from_array(cls, spec: ModelSpec, x) -> "ParamVector":
        x = np.asarray(x, dtype=float)
        if x.shape != (spec.n_params,):
            raise ValueError(f"expected {spec.n_params} parameters, got shape {x.shape}")
        kw = {}
        for name, sl in spec.slices().items():
            kw[name] = x[sl] if name in _VECTOR_FIELDS else x[sl][0]
        return cls(**kw)

    def as_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None:
                out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    def replace(self, **kw) -> "ParamVector":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return ParamVector(**d)


@dataclass(frozen=True)
class GatePath:
    """Realized gate trajectories; inactive gates are ``None``.

    ``alpha_t`` and ``psi`` hold the resulting shock loading and
    persistence for every period.
    """

    p: Optional[np.ndarray]
    d: Optional[np.ndarray]
    beta_clk: Optional[np.ndarray]
    dtau: Optional[np.ndarray]
    alpha_t: np.ndarray
    psi: np.ndarray


@dataclass(frozen=True)
class VariancePath:
    """Filtered variances with per-period Gaussian quasi log-likelihood.

    All arrays span the full sample; ``mask`` marks the periods that enter
    the likelihood (after burn-in and with available lagged features).
    """

    h: np.ndarray
    loglik_terms: np.ndarray
    std_resid: np.ndarray
    mask: np.ndarray

    @property
    def loglik(self) -> float:
        return float(np.sum(self.loglik_terms[self.mask]))

    @property
    def n_obs(self) -> int:
        return int(self.mask.sum())


# --------------------------------------------------------------------------
# numba kernels

@njit(cache=True, nogil=True)
def _frac_weights(d, K, pi, dpi):
    pi[0] = -d
    dpi[0] = -1.0
    for k in range(2, K + 1):
        ratio = (k - 1 - d) / k
        pi[k - 1] = pi[k - 2] * ratio
        dpi[k - 1] = dpi[k - 2] * ratio - pi[k - 2] / k


@njit(cache=True, nogil=True)
def _variance_recursion(r2, h0, omega, A, Psi, d, K, h):
    """Fill ``h`` in place; return the first bad index or -1."""
    T = r2.shape[0]
    pi = np.empty(max(K, 1))
    dpi = np.empty(max(K, 1))
    h[0] = h0
    if not (h0 > 0.0) or not np.isfinite(h0):
        return 0
    for t in range(1, T):
        ht = omega + A[t] * r2[t - 1] + Psi[t] * h[t - 1]
        if K > 0 and d[t] != 0.0:
            _frac_weights(d[t], K, pi, dpi)
            kmax = min(K, t)
            acc = 0.0
            for k in range(1, kmax + 1):
                acc += pi[k - 1] * (r2[t - k] - h[t - k])
            ht += acc
        h[t] = ht
        if not (ht > 0.0) or not np.isfinite(ht):
            return t
    return -1


@njit(cache=True, nogil=True)
def _score_recursion(r2, h0, omega, omega_idx, A, Psi, d, K, dA, dPsi, dd, h, dh):
    """Variance recursion with forward-accumulated derivatives.

    ``dA``, ``dPsi`` and ``dd`` hold the derivatives of ``A_t``, ``Psi_t``
    and ``d_t`` with respect to each natural parameter; ``omega_idx`` is the
    position of ``omega``.  Returns the first bad index or -1.
    """
    T, P = dA.shape
    pi = np.empty(max(K, 1))
    dpi = np.empty(max(K, 1))
    h[0] = h0
    for j in range(P):
        dh[0, j] = 0.0
    if not (h0 > 0.0) or not np.isfinite(h0):
        return 0
    for t in range(1, T):
        ht = omega + A[t] * r2[t - 1] + Psi[t] * h[t - 1]
        for j in range(P):
            dh[t, j] = dA[t, j] * r2[t - 1] + dPsi[t, j] * h[t - 1] + Psi[t] * dh[t - 1, j]
        dh[t, omega_idx] += 1.0
        if K > 0 and d[t] != 0.0:
            _frac_weights(d[t], K, pi, dpi)
            kmax = min(K, t)
            acc = 0.0
            acc_d = 0.0
            for k in range(1, kmax + 1):
                e = r2[t - k] - h[t - k]
                acc += pi[k - 1] * e
                acc_d += dpi[k - 1] * e
                pk = pi[k - 1]
                for j in range(P):
                    dh[t, j] -= pk * dh[t - k, j]
            ht += acc
            for j in range(P):
                dh[t, j] += acc_d * dd[t, j]
        h[t] = ht
        if not (ht > 0.0) or not np.isfinite(ht):
            return t
    return -1


@njit(cache=True, nogil=True)
def _simulate_recursion(eps, h0, omega, A, lev, Psi, d, K, h, r):
    T = eps.shape[0]
    pi = np.empty(max(K, 1))
    dpi = np.empty(max(K, 1))
    r2 = np.empty(T)
    h[0] = h0
    r[0] = math.sqrt(h0) * eps[0]
    r2[0] = r[0] * r[0]
    for t in range(1, T):
        at = A[t]
        if r[t - 1] < 0.0:
            at += lev
        ht = omega + at * r2[t - 1] + Psi[t] * h[t - 1]
        if K > 0 and d[t] != 0.0:
            _frac_weights(d[t], K, pi, dpi)
            kmax = min(K, t)
            acc = 0.0
            for k in range(1, kmax + 1):
                acc += pi[k - 1] * (r2[t - k] - h[t - k])
            ht += acc
        h[t] = ht
        if not (ht > 0.0) or not np.isfinite(ht):
            return t
        r[t] = math.sqrt(ht) * eps[t]
        r2[t] = r[t] * r[t]
    return -1


# --------------------------------------------------------------------------
# gates

def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _as_returns(returns) -> np.ndarray:
    if isinstance(returns, ReturnSeries):
        return returns.returns
    r = np.asarray(returns, dtype=float)
    if r.ndim != 1:
        raise ValueError("returns must be one-dimensional")
    return r


def _lagged_inputs(spec: ModelSpec, features, T: int):
    """Lagged feature matrix ``Z[t] = z_{t-1}`` (``NaN`` -> 0) and the
    availability of ``z_{t-1}`` per period."""
    cols = spec.feature_indices
    if not cols:
        return np.zeros((T, 0)), np.ones(T, dtype=bool)
    if features is None:
        raise ValueError(f"{spec.family} needs features for its gates")
    if isinstance(features, FeatureMatrix):
        width = features.n_features
        z = features.z
    else:
        z = np.asarray(features, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        width = z.shape[1]
    if z.shape[0] != T:
        raise ValueError(f"features have {z.shape[0]} rows, returns have {T}")
    if max(cols) >= width:
        raise IndexError(f"{spec.family} uses feature column {max(cols)} but only {width} exist")
    Z = np.zeros((T, width))
    Z[1:] = z[:-1]
    avail = np.ones(T, dtype=bool)
    avail[1:] = np.all(np.isfinite(z[:-1][:, list(cols)]), axis=1)
    Z[~np.isfinite(Z)] = 0.0
    return Z, avail


class _Gates(NamedTuple):
    A: np.ndarray
    Psi: np.ndarray
    d: np.ndarray
    path: GatePath
    # derivative arrays (T, P) or None
    dA: Optional[np.ndarray]
    dPsi: Optional[np.ndarray]
    dd: Optional[np.ndarray]


def compute_gates(spec: ModelSpec, params: ParamVector, Z: np.ndarray, returns=None,
                  derivatives: bool = False) -> _Gates:
    """Evaluate ``A_t``, ``Psi_t`` and ``d_t`` from lagged inputs ``Z``.

    ``Z[t]`` must already hold ``z_{t-1}``.  With ``derivatives=True`` the
    partial derivatives with respect to the natural parameters (in
    ``spec.param_names`` order) are returned as ``(T, P)`` arrays.
    """
    T = Z.shape[0]
    fam = spec.family
    sl = spec.slices()
    P = spec.n_params
    dA = dPsi = dd = None
    if derivatives:
        dA = np.zeros((T, P))
        dPsi = np.zeros((T, P))
        dd = np.zeros((T, P))

    p = d = bclk = dtau = None
    if spec.has_regime:
        zp = Z[:, list(spec.p_features)]
        p = _sigmoid(zp @ params.gamma_p)
        blend = (1.0 - p) * params.beta_low + p * params.beta_high
    if spec.has_clock:
        zc = Z[:, list(spec.clock_features)]
        dtau = np.exp(zc @ params.eta)
        bclk = np.exp(-params.kappa * dtau)
    if spec.has_fractional:
        zd = Z[:, list(spec.d_features)]
        sd = _sigmoid(zd @ params.gamma_d)
        d = params.dbar * sd
        if derivatives:
            dd[:, sl["dbar"]] = sd[:, None]
            dd[:, sl["gamma_d"]] = (params.dbar * sd * (1.0 - sd))[:, None] * zd

    # shock loading
    if spec.uses_alpha0:
        A = params.alpha0 * (1.0 - bclk)
        if derivatives:
            dA[:, sl["alpha0"]] = (1.0 - bclk)[:, None]
    else:
        A = np.full(T, params.alpha)
        if derivatives:
            dA[:, sl["alpha"]] = 1.0
    if fam is Family.GJR:
        r = _as_returns(returns)
        neg = np.zeros(T)
        neg[1:] = r[:-1] < 0
        A = A + params.leverage * neg
        if derivatives:
            dA[:, sl["leverage"]] = neg[:, None]

    # persistence
    if spec.has_regime:
        Psi = blend
        if derivatives:
            dPsi[:, sl["beta_low"]] = (1.0 - p)[:, None]
            dPsi[:, sl["beta_high"]] = p[:, None]
            dPsi[:, sl["gamma_p"]] = ((params.beta_high - params.beta_low) * p * (1.0 - p))[:, None] * zp
        if fam is Family.TGVOL:
            Psi = blend * bclk
            if derivatives:
                dPsi[:, sl["beta_low"]] *= bclk[:, None]
                dPsi[:, sl["beta_high"]] *= bclk[:, None]
                dPsi[:, sl["gamma_p"]] *= bclk[:, None]
    elif fam in _CLOCK_PERSISTENCE:
        Psi = bclk
    else:
        Psi = np.full(T, params.beta)
        if derivatives:
            dPsi[:, sl["beta"]] = 1.0

    if spec.has_clock and derivatives:
        dbk_dkappa = -dtau * bclk
        dbk_deta = (-params.kappa * dtau * bclk)[:, None] * zc
        # A = alpha0 (1 - bclk)
        dA[:, sl["kappa"]] = -params.alpha0 * dbk_dkappa[:, None]
        dA[:, sl["eta"]] = -params.alpha0 * dbk_deta
        if fam in _CLOCK_PERSISTENCE:
            scale = blend if fam is Family.TGVOL else 1.0
            if np.ndim(scale):
                dPsi[:, sl["kappa"]] = (scale * dbk_dkappa)[:, None]
                dPsi[:, sl["eta"]] = scale[:, None] * dbk_deta
            else:
                dPsi[:, sl["kappa"]] = dbk_dkappa[:, None]
                dPsi[:, sl["eta"]] = dbk_deta

    if d is None:
        d_arr = np.zeros(T)
    else:
        d_arr = d
    path = GatePath(p=p, d=d, beta_clk=bclk, dtau=dtau, alpha_t=A, psi=Psi)
    return _Gates(np.ascontiguousarray(A), np.ascontiguousarray(Psi), np.ascontiguousarray(d_arr),
                  path, dA, dPsi, dd)


# --------------------------------------------------------------------------
# filtering

def _loglik_terms(r2, h):
    return -0.5 * (np.log(h) + r2 / h)


def _likelihood_mask(spec: ModelSpec, avail: np.ndarray) -> np.ndarray:
    mask = avail.copy()
    mask[: max(spec.effective_burn_in, 1)] = False
    return mask


def filter_variance(spec: ModelSpec, params: ParamVector, returns, features=None,
                    h0: Optional[float] = None) -> tuple[VariancePath, GatePath]:
    """Run the model recursion over a return sample.

    Parameters
    ----------
    spec : ModelSpec
    params : ParamVector
    returns : ReturnSeries or array_like
    features : FeatureMatrix or array_like, optional
        Row ``t`` holds information through ``t``; period ``t`` uses row
        ``t - 1``.  Not needed for GARCH and GJR.
    h0 : float, optional
        Initial variance; defaults to the sample variance of ``returns``.

    Returns
    -------
    VariancePath, GatePath

    Raises
    ------
    NonpositiveVariance
        At the first ``t`` where ``h_t <= 0`` or is not finite.
    """
    r = _as_returns(returns)
    T = r.size
    if T < 2:
        raise ValueError("need at least two returns")
    Z, avail = _lagged_inputs(spec, features, T)
    g = compute_gates(spec, params, Z, r)
    r2 = r * r
    if h0 is None:
        h0 = float(np.var(r))
    K = spec.K if spec.has_fractional else 0
    h = np.empty(T)
    bad = _variance_recursion(r2, float(h0), float(params.omega), g.A, g.Psi, g.d, K, h)
    if bad >= 0:
        raise NonpositiveVariance(
            f"{spec.family}: h_t = {h[bad]!r} at t={bad}"
            + (" (negative fractional weights)" if spec.has_fractional else ""),
            t=int(bad), params=params)
    vp = VariancePath(h=h, loglik_terms=_loglik_terms(r2, h), std_resid=r / np.sqrt(h),
                      mask=_likelihood_mask(spec, avail))
    return vp, g.path


def forecast_next(spec: ModelSpec, params: ParamVector, returns, features=None,
                  h0: Optional[float] = None) -> float:
    """One-step-ahead variance ``h_{T|T-1}`` after the last observation."""
    r = np.append(_as_returns(returns), 0.0)
    if features is not None:
        z = features.z if isinstance(features, FeatureMatrix) else np.asarray(features, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        features = np.vstack([z, np.full((1, z.shape[1]), np.nan)])
    if h0 is None:
        h0 = float(np.var(r[:-1]))
    vp, _ = filter_variance(spec, params, r, features, h0=h0)
    return float(vp.h[-1])


def score_terms(spec: ModelSpec, params: ParamVector, returns, features=None,
                h0: Optional[float] = None):
    """Variances, their natural-parameter derivatives and the mask.

    Returns ``(r2, h, dh, mask)`` with ``dh`` of shape ``(T, P)``.
    """
    r = _as_returns(returns)
    T = r.size
    Z, avail = _lagged_inputs(spec, features, T)
    g = compute_gates(spec, params, Z, r, derivatives=True)
    r2 = r * r
    if h0 is None:
        h0 = float(np.var(r))
    K = spec.K if spec.has_fractional else 0
    h = np.empty(T)
    dh = np.empty((T, spec.n_params))
    omega_idx = spec.slices()["omega"].start
    bad = _score_recursion(r2, float(h0), float(params.omega), omega_idx, g.A, g.Psi, g.d, K,
                           g.dA, g.dPsi, g.dd, h, dh)
    if bad >= 0:
        raise NonpositiveVariance(f"{spec.family}: h_t = {h[bad]!r} at t={bad}", t=int(bad), params=params)
    return r2, h, dh, _likelihood_mask(spec, avail)


# --------------------------------------------------------------------------
# moments and admissibility

def _constant_gates(spec: ModelSpec, params: ParamVector) -> GatePath:
    q = max(spec.feature_indices, default=-1) + 1
    g = compute_gates(spec, params, np.zeros((1, q)), np.zeros(1))
    if spec.family is Family.GJR:
        # symmetric innovations: the indicator averages to 1/2
        A = g.A + 0.5 * params.leverage
        return GatePath(g.path.p, g.path.d, g.path.beta_clk, g.path.dtau, A, g.Psi)
    return g.path


def unconditional_mean(spec: ModelSpec, params: ParamVector,
                       gate_stats: Union[GatePath, None, dict] = None) -> float:
    """Closed-form ``E[h_t] = omega / (1 - E[A_t + Psi_t])``.

    The fractional term has mean zero and does not enter.  ``E[A_t + Psi_t]``
    comes from ``gate_stats``: a realized :class:`GatePath` (empirical
    mean), a mapping with key ``"mean_alpha_psi"``, or ``None`` for gates
    evaluated at ``z = 0`` (and a symmetric leverage indicator for GJR).

    Raises
    ------
    UnstableRegion
        If the denominator is not positive.
    """
    if gate_stats is None:
        gp = _constant_gates(spec, params)
        m = float(np.mean(gp.alpha_t + gp.psi))
    elif isinstance(gate_stats, GatePath):
        m = float(np.mean(gate_stats.alpha_t + gate_stats.psi))
    else:
        m = float(gate_stats["mean_alpha_psi"])
    denom = 1.0 - m
    if not denom > 0:
        raise UnstableRegion(f"1 - E[A_t + Psi_t] = {denom:.6g} <= 0")
    return float(params.omega / denom)


@dataclass
class AdmissibilityReport:
    """Outcome of the parameter-box and contraction checks.

    ``checks`` maps a human-readable constraint to whether it holds.
    ``log_contraction`` is the sample mean of ``log(A_t + Psi_t)`` over a
    supplied gate path with its standard error.
    """

    passed: bool
    checks: dict
    failures: list
    log_contraction: Optional[float] = None
    log_contraction_se: Optional[float] = None

    def __bool__(self) -> bool:
        return self.passed


def admissibility_check(spec: ModelSpec, params: ParamVector,
                        gate_path: Optional[GatePath] = None) -> AdmissibilityReport:
    """Check the parameter constraints of ``spec.family`` without raising."""
    checks: dict = {}
    P = params

    def add(name, fn):
        try:
            checks[name] = bool(fn())
        except (TypeError, ValueError):
            checks[name] = False

    add("omega > 0", lambda: P.omega > 0 and math.isfinite(P.omega))
    fam = spec.family
    if spec.uses_alpha0:
        add("0 < alpha0 < 1", lambda: 0 < P.alpha0 < 1)
    else:
        add("alpha >= 0", lambda: P.alpha >= 0)
    if fam is Family.GJR:
        add("leverage >= 0", lambda: P.leverage >= 0)
        add("alpha + leverage/2 + beta < 1", lambda: P.alpha + 0.5 * P.leverage + P.beta < 1)
    if spec.has_regime:
        add("0 < beta_low < beta_high < 1", lambda: 0 < P.beta_low < P.beta_high < 1)
        if spec.uses_alpha0:
            if fam is Family.RSM_GC:
                add("alpha0 + beta_high < 1", lambda: P.alpha0 + P.beta_high < 1)
        else:
            add("alpha + beta_high < 1", lambda: P.alpha + P.beta_high < 1)
        add("gamma_p finite", lambda: P.gamma_p.size == len(spec.p_features) and np.all(np.isfinite(P.gamma_p)))
    elif fam not in _CLOCK_PERSISTENCE:
        add("0 < beta < 1", lambda: 0 < P.beta < 1)
        if fam is not Family.GJR:
            add("alpha + beta < 1", lambda: P.alpha + P.beta < 1)
    if spec.has_fractional:
        add("0 < dbar < 0.5", lambda: 0 < P.dbar < 0.5)
        add("gamma_d finite", lambda: P.gamma_d.size == len(spec.d_features) and np.all(np.isfinite(P.gamma_d)))
    if spec.has_clock:
        add("kappa > 0", lambda: P.kappa > 0 and math.isfinite(P.kappa))
        add("eta finite", lambda: P.eta.size == len(spec.clock_features) and np.all(np.isfinite(P.eta)))
    lc = se = None
    if gate_path is not None:
        x = np.log(gate_path.alpha_t + gate_path.psi)
        lc = float(np.mean(x))
        se = float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else float("nan")
        checks["E[log(alpha_t + Psi_t)] < 0"] = lc < 0
    failures = [k for k, ok in checks.items() if not ok]
    return AdmissibilityReport(not failures, checks, failures, lc, se)


# --------------------------------------------------------------------------
# simulation

FEATURE_CLIP = 2.576  # two-sided 99% normal quantile


def ar1_features(phi: float = 0.9, clip: float = FEATURE_CLIP) -> Callable:
    """Generator of independent stationary AR(1) feature columns.

    Each column has unit innovation variance, is standardized by its
    stationary standard deviation and clipped at ``+/- clip``.
    """
    if not -1 < phi < 1:
        raise ValueError("need |phi| < 1")

    def gen(rng: np.random.Generator, n: int, q: int) -> np.ndarray:
        e = rng.standard_normal((n, q))
        x = np.empty((n, q))
        sd = 1.0 / math.sqrt(1.0 - phi * phi)
        x[0] = e[0] * sd
        for t in range(1, n):
            x[t] = phi * x[t - 1] + e[t]
        return np.clip(x / sd, -clip, clip)

    return gen


def iid_features(clip: float = FEATURE_CLIP) -> Callable:
    """Independent standard normal features clipped at ``+/- clip``."""
    return ar1_features(0.0, clip)


class Simulation(NamedTuple):
    series: ReturnSeries
    variance: VariancePath
    gates: GatePath
    features: FeatureMatrix


PRESAMPLE = 500


def simulate_path(spec: ModelSpec, params: ParamVector, T: int, seed=None,
                  feature_generator: Optional[Callable] = None,
                  n_features: Optional[int] = None, presample: int = PRESAMPLE) -> Simulation:
    """Simulate returns ``r_t = sqrt(h_t) eps_t`` with Gaussian ``eps_t``.

    Features are drawn first from ``feature_generator(rng, n, q)`` (default
    :func:`ar1_features` with coefficient 0.9), then the innovations, both
    from ``numpy.random.default_rng(seed)``.  A presample of ``presample``
    periods (default 500) is discarded; with ``presample=0`` the path can be
    reproduced exactly by :func:`filter_variance` started at ``h[0]``.
    Returned series are on the scale implied by ``omega`` (unit-scale
    parameters produce percent returns).
    """
    T = int(T)
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = np.random.default_rng(seed)
    q = n_features if n_features is not None else max(spec.feature_indices, default=1) + 1
    gen = feature_generator or ar1_features()
    if presample < 0:
        raise ValueError("presample must be nonnegative")
    n = T + presample
    z = np.asarray(gen(rng, n, q), dtype=float) if q > 0 else np.zeros((n, 0))
    eps = rng.standard_normal(n)
    Z = np.zeros_like(z)
    Z[1:] = z[:-1]
    lev = params.leverage if spec.family is Family.GJR else 0.0
    base = spec if spec.family is not Family.GJR else ModelSpec(Family.GARCH, burn_in=spec.burn_in)
    base_params = params if spec.family is not Family.GJR else params.replace(leverage=None)
    g = compute_gates(base, base_params, Z)
    try:
        h0 = unconditional_mean(spec, params)
    except UnstableRegion:
        h0 = params.omega / 0.01
    K = spec.K if spec.has_fractional else 0
    h = np.empty(n)
    r = np.empty(n)
    bad = _simulate_recursion(eps, float(h0), float(params.omega), g.A, float(lev), g.Psi, g.d, K, h, r)
    if bad >= 0:
        raise NonpositiveVariance(f"{spec.family}: simulated h_t = {h[bad]!r} at t={bad - presample}",
                                  t=int(bad - presample), params=params)
    keep = slice(presample, n)
    r, h, z = r[keep], h[keep], z[keep]
    A = g.A[keep].copy()
    if lev:
        neg = np.r_[r[:1] * 0, r[:-1] < 0]
        A = A + lev * neg
    p = g.path
    cut = lambda a: None if a is None else a[keep].copy()
    gp = GatePath(cut(p.p), cut(p.d), cut(p.beta_clk), cut(p.dtau), A, g.Psi[keep].copy())
    r2 = r * r
    mask = np.ones(T, dtype=bool)
    mask[: min(max(spec.effective_burn_in, 1), T)] = False
    vp = VariancePath(h, _loglik_terms(r2, h), r / np.sqrt(h), mask)
    dates = np.datetime64("2000-01-03") + np.arange(T)
    series = ReturnSeries(dates, r, percent=True, meta={"family": str(spec.family),
                                          "params": params.as_dict(), "seed": seed})
    fm = FeatureMatrix.from_array(z, dates)
    return Simulation(series, vp, gp, fm)
