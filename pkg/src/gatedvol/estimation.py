"""
Gaussian quasi-maximum likelihood for the gated variance models.

The objective is ``l_T = -1/2 sum_t (log h_t + r_t**2 / h_t)`` over the
likelihood mask of :class:`~gatedvol.models.VariancePath`.  Scores are
forward-accumulated in the numba kernels of :mod:`gatedvol.models` and
mapped to an unconstrained parameterization for optimization with
L-BFGS-B.  Standard errors use the Godambe sandwich with the
outer-product information ``E[grad h grad h' / (2 h**2)]``.

A frequency-domain anchor for the fractional gate is available through
:func:`local_whittle` and :func:`hybrid_loglik`.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
import logging
import math
from typing import NamedTuple, Optional

import numpy as np
from scipy import optimize
from scipy.special import expit, logit

from .errors import (
    DegenerateHessian,
    InsufficientHistory,
    NonpositiveVariance,
    NoConvergence,
    SpecHasNoFractionalGate,
    WindowTooShort,
)
from .models import (
    Family,
    ModelSpec,
    ParamVector,
    _as_returns,
    _lagged_inputs,
    _likelihood_mask,
    compute_gates,
    filter_variance,
    score_terms,
)

__all__ = [
    "MARGIN",
    "FitOptions",
    "FitResult",
    "QuasiLoglik",
    "Sandwich",
    "WhittleEstimate",
    "quasi_loglik",
    "analytic_score",
    "transform_params",
    "inverse_transform",
    "transform_jacobian",
    "fit_qmle",
    "sandwich_covariance",
    "whittle_objective",
    "local_whittle_d",
    "local_whittle",
    "hybrid_loglik",
    "hybrid_score",
    "default_start",
    "unconstrained_bounds",
]

log = logging.getLogger(__name__)

MARGIN = 1e-4
MIN_FIT_OBS = 250
COND_PINV = 1e8
COND_MAX = 1e12


# --------------------------------------------------------------------------
# likelihood and score

class QuasiLoglik(NamedTuple):
    total: float
    terms: np.ndarray
    mask: np.ndarray


def quasi_loglik(spec: ModelSpec, params: ParamVector, returns, features=None,
                 h0: Optional[float] = None) -> QuasiLoglik:
    """Gaussian quasi log-likelihood.

    Returns the total over the likelihood mask together with the
    full-length per-period terms ``-(log h_t + r_t**2 / h_t) / 2`` and the
    mask itself.
    """
    vp, _ = filter_variance(spec, params, returns, features, h0=h0)
    return QuasiLoglik(vp.loglik, vp.loglik_terms, vp.mask)


def _period_scores(spec, params, returns, features, h0):
    r2, h, dh, mask = score_terms(spec, params, returns, features, h0)
    r2, h, dh = r2[mask], h[mask], dh[mask]
    w = 0.5 * (r2 - h) / (h * h)
    return w[:, None] * dh, h, dh, mask


def analytic_score(spec: ModelSpec, params: ParamVector, returns, features=None,
                   h0: Optional[float] = None, per_period: bool = False):
    """Gradient of ``l_T`` with respect to the natural parameters.

    Uses ``grad l_t = (r_t**2 - h_t) / (2 h_t**2) grad h_t`` with
    ``grad h_t`` from the forward recursion.  With ``per_period=True`` the
    ``(n, P)`` matrix of masked per-period scores is returned as well.
    """
    s, _, _, _ = _period_scores(spec, params, returns, features, h0)
    g = s.sum(axis=0)
    return (g, s) if per_period else g


# --------------------------------------------------------------------------
# reparameterization

def _persistence_name(spec: ModelSpec) -> Optional[str]:
    if spec.has_regime:
        return "beta_high"
    if "beta" in spec.slices():
        return "beta"
    return None


def transform_params(spec: ModelSpec, u, margin: float = MARGIN) -> ParamVector:
    """Map unconstrained reals to a :class:`ParamVector`.

    ``omega = exp``; ``beta_low = (1 - 2m) sigmoid`` (same for ``beta``);
    ``beta_high = beta_low + (1 - beta_low - 2m) sigmoid``;
    ``alpha = sigmoid (1 - B - m)`` with ``B`` the (upper) persistence;
    ``leverage = 2 sigmoid (1 - beta - alpha - m)``;
    ``alpha0 = sigmoid`` (times ``1 - beta_high - m`` for RSM_GC, whose
    regime blend is not discounted by the clock); ``dbar = sigmoid / 2``;
    ``kappa = exp``; gate coefficients are unrestricted.
    """
    return ParamVector.from_array(spec, _forward(spec, np.asarray(u, dtype=float), margin)[0])


def transform_jacobian(spec: ModelSpec, u, margin: float = MARGIN) -> np.ndarray:
    """``J[i, j] = d theta_i / d u_j`` of :func:`transform_params`."""
    return _forward(spec, np.asarray(u, dtype=float), margin)[1]


def _forward(spec, u, m):
    P = spec.n_params
    if u.shape != (P,):
        raise ValueError(f"expected {P} unconstrained values")
    sl = spec.slices()
    th = np.empty(P)
    J = np.zeros((P, P))

    def idx(name):
        return sl[name].start

    i = idx("omega")
    th[i] = math.exp(u[i])
    J[i, i] = th[i]
    B = None  # index of the persistence bound entering alpha
    if spec.has_regime:
        il, ih = idx("beta_low"), idx("beta_high")
        sl_ = expit(u[il])
        bl = (1 - 2 * m) * sl_
        th[il] = bl
        J[il, il] = (1 - 2 * m) * sl_ * (1 - sl_)
        s = expit(u[ih])
        th[ih] = bl + (1 - bl - 2 * m) * s
        J[ih, il] = (1 - s) * J[il, il]
        J[ih, ih] = (1 - bl - 2 * m) * s * (1 - s)
        B = ih
    elif "beta" in sl:
        ib = idx("beta")
        s = expit(u[ib])
        th[ib] = (1 - 2 * m) * s
        J[ib, ib] = (1 - 2 * m) * s * (1 - s)
        B = ib
    shock = "alpha0" if spec.uses_alpha0 else "alpha"
    ia = idx(shock)
    s = expit(u[ia])
    bounded = not spec.uses_alpha0 or spec.family is Family.RSM_GC
    if bounded:
        room = 1 - th[B] - m
        th[ia] = s * room
        J[ia, ia] = s * (1 - s) * room
        J[ia, :] += -s * J[B, :] * (np.arange(P) != ia)
    else:
        th[ia] = s
        J[ia, ia] = s * (1 - s)
    if spec.family is Family.GJR:
        il = idx("leverage")
        s = expit(u[il])
        room = 1 - th[B] - th[ia] - m
        th[il] = 2 * s * room
        dro = -(J[B, :] + J[ia, :])
        J[il, :] = 2 * s * dro
        J[il, il] = 2 * s * (1 - s) * room
    if spec.has_fractional:
        i = idx("dbar")
        s = expit(u[i])
        th[i] = 0.5 * s
        J[i, i] = 0.5 * s * (1 - s)
        g = sl["gamma_d"]
        th[g] = u[g]
        J[g, g] = np.eye(g.stop - g.start)
    if spec.has_regime:
        g = sl["gamma_p"]
        th[g] = u[g]
        J[g, g] = np.eye(g.stop - g.start)
    if spec.has_clock:
        i = idx("kappa")
        th[i] = math.exp(u[i])
        J[i, i] = th[i]
        g = sl["eta"]
        th[g] = u[g]
        J[g, g] = np.eye(g.stop - g.start)
    return th, J


def inverse_transform(spec: ModelSpec, params: ParamVector, margin: float = MARGIN) -> np.ndarray:
    """Unconstrained coordinates of ``params`` (inverse of
    :func:`transform_params`)."""
    th = params.to_array(spec)
    sl = spec.slices()
    u = np.empty_like(th)
    m = margin

    def idx(name):
        return sl[name].start

    u[idx("omega")] = math.log(th[idx("omega")])
    B = None
    if spec.has_regime:
        il, ih = idx("beta_low"), idx("beta_high")
        u[il] = logit(th[il] / (1 - 2 * m))
        u[ih] = logit((th[ih] - th[il]) / (1 - th[il] - 2 * m))
        B = ih
    elif "beta" in sl:
        u[idx("beta")] = logit(th[idx("beta")] / (1 - 2 * m))
        B = idx("beta")
    ia = idx("alpha0" if spec.uses_alpha0 else "alpha")
    bounded = not spec.uses_alpha0 or spec.family is Family.RSM_GC
    if bounded:
        u[ia] = logit(th[ia] / (1 - th[B] - m))
    else:
        u[ia] = logit(th[ia])
    if spec.family is Family.GJR:
        il = idx("leverage")
        u[il] = logit(th[il] / (2 * (1 - th[B] - th[ia] - m)))
    if spec.has_fractional:
        u[idx("dbar")] = logit(2 * th[idx("dbar")])
        u[sl["gamma_d"]] = th[sl["gamma_d"]]
    if spec.has_regime:
        u[sl["gamma_p"]] = th[sl["gamma_p"]]
    if spec.has_clock:
        u[idx("kappa")] = math.log(th[idx("kappa")])
        u[sl["eta"]] = th[sl["eta"]]
    return u


# --------------------------------------------------------------------------
# sandwich

class Sandwich(NamedTuple):
    cov: np.ndarray
    information: np.ndarray
    outer: np.ndarray
    condition: float
    pinv_used: bool
    n_obs: int


def _scaled_condition(I):
    d = np.sqrt(np.clip(np.diag(I), 1e-300, None))
    C = I / np.outer(d, d)
    try:
        return float(np.linalg.cond(C))
    except np.linalg.LinAlgError:
        return float("inf")


def _sandwich_from_terms(s, h, dh) -> Sandwich:
    n = s.shape[0]
    I = (dh / (2 * h * h)[:, None]).T @ dh / n
    Jm = s.T @ s / n
    cond = _scaled_condition(I)
    if not np.isfinite(cond) or cond > COND_MAX:
        raise DegenerateHessian(f"information matrix condition number {cond:.3g} exceeds {COND_MAX:g}")
    use_pinv = cond > COND_PINV
    Iinv = np.linalg.pinv(I, hermitian=True) if use_pinv else np.linalg.inv(I)
    V = Iinv @ Jm @ Iinv / n
    V = 0.5 * (V + V.T)
    return Sandwich(V, I, Jm, cond, use_pinv, n)


def sandwich_covariance(spec: ModelSpec, params: ParamVector, returns, features=None,
                        h0: Optional[float] = None) -> Sandwich:
    """Godambe covariance ``V = I^-1 J I^-1 / n`` in natural parameters.

    ``I`` is the outer-product information ``mean(grad h grad h' / (2 h**2))``
    and ``J`` the mean outer product of the per-period scores.  The
    condition number is measured on the unit-diagonal rescaling of ``I``.
    A pseudo-inverse is used (and reported) above 1e8.

    Raises
    ------
    DegenerateHessian
        If the condition number exceeds 1e12.
    """
    s, h, dh, _ = _period_scores(spec, params, returns, features, h0)
    return _sandwich_from_terms(s, h, dh)


# --------------------------------------------------------------------------
# local Whittle

@dataclass(frozen=True)
class WhittleEstimate:
    """Rolling local-Whittle orders.

    Attributes
    ----------
    d_tilde : ndarray
        Per-period order held constant after each anchor (``NaN`` before
        the first anchor).
    anchors : ndarray of int
        Window-end indices at which an estimate was made.
    anchor_d : ndarray
        Estimates at ``anchors``.
    band : ndarray
        Fourier frequencies used in each window.
    window : int
    degenerate : ndarray of bool
        Anchors whose periodogram vanished (estimate set to 0).
    """

    d_tilde: np.ndarray
    anchors: np.ndarray
    anchor_d: np.ndarray
    band: np.ndarray
    window: int
    degenerate: np.ndarray


def _band(n: int, band_fraction: float) -> np.ndarray:
    m = int(math.floor(band_fraction * n / 2))
    if m < 1:
        raise WindowTooShort(f"band of {m} frequencies is empty")
    return 2 * np.pi * np.arange(1, m + 1) / n


def _periodogram(x: np.ndarray, m: int) -> np.ndarray:
    n = x.size
    f = np.fft.rfft(x - x.mean())
    return (np.abs(f[1:m + 1]) ** 2) / (2 * np.pi * n)


def whittle_objective(d: float, lam: np.ndarray, I: np.ndarray) -> float:
    """``Q(d) = log(mean(lam**(2d) I)) - 2d mean(log lam)``."""
    return float(np.log(np.mean(lam ** (2 * d) * I)) - 2 * d * np.mean(np.log(lam)))


_GOLD = (math.sqrt(5) - 1) / 2
D_MAX = 0.49


def _golden(f, a, b, tol=1e-8):
    c = b - _GOLD * (b - a)
    d = a + _GOLD * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLD * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLD * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def local_whittle_d(x, band_fraction: float = 0.1) -> tuple[float, bool]:
    """Local-Whittle order of one window ``x``.

    Minimizes :func:`whittle_objective` on ``[0, 0.49]`` by golden-section
    search, falling back to a 491-point grid when the search ends on the
    boundary or fails to improve on it.  Returns ``(d_hat, degenerate)``;
    a vanishing periodogram gives ``(0.0, True)``.
    """
    x = np.asarray(x, dtype=float)
    lam = _band(x.size, band_fraction)
    I = _periodogram(x, lam.size)
    if not np.any(I > 0) or not np.all(np.isfinite(I)):
        return 0.0, True
    f = lambda d: whittle_objective(d, lam, I)
    d_star, q_star = _golden(f, 0.0, D_MAX)
    q0, q1 = f(0.0), f(D_MAX)
    if q_star > min(q0, q1) or d_star < 1e-6 or d_star > D_MAX - 1e-6:
        grid = np.linspace(0.0, D_MAX, 491)
        vals = np.array([f(g) for g in grid])
        d_star = float(grid[np.argmin(vals)])
    return float(d_star), False


def local_whittle(series, window: int = 512, band_fraction: float = 0.1, step: int = 21,
                  transform: str = "square") -> WhittleEstimate:
    """Rolling local-Whittle orders on trailing windows.

    Parameters
    ----------
    series : array_like or ReturnSeries
    window : int
        Window length (at least 256).
    band_fraction : float
        The band holds the lowest ``floor(band_fraction * window / 2)``
        nonzero Fourier frequencies.
    step : int
        Anchor spacing; anchors are window-end indices
        ``window - 1, window - 1 + step, ...``.
    transform : {"square", "none"}
        ``"square"`` applies the estimator to squared window-demeaned
        values; ``"none"`` uses the series as is.

    Raises
    ------
    WindowTooShort
        If ``window < 256`` or the series is shorter than ``window``.
    """
    x = _as_returns(series) if not isinstance(series, np.ndarray) else np.asarray(series, dtype=float)
    if window < 256:
        raise WindowTooShort(f"window {window} < 256")
    if x.size < window:
        raise WindowTooShort(f"series of length {x.size} shorter than window {window}")
    if transform not in ("square", "none"):
        raise ValueError("transform must be 'square' or 'none'")
    anchors = np.arange(window - 1, x.size, int(step))
    est = np.empty(anchors.size)
    degen = np.zeros(anchors.size, dtype=bool)
    for j, e in enumerate(anchors):
        w = x[e - window + 1:e + 1]
        if transform == "square":
            w = (w - w.mean()) ** 2
        est[j], degen[j] = local_whittle_d(w, band_fraction)
    d_tilde = np.full(x.size, np.nan)
    for j, e in enumerate(anchors):
        stop = anchors[j + 1] if j + 1 < anchors.size else x.size
        d_tilde[e:stop] = est[j]
    return WhittleEstimate(d_tilde, anchors, est, _band(window, band_fraction), int(window), degen)


def _penalty_parts(spec, params, returns, features, whittle: WhittleEstimate, derivatives=False):
    if not spec.has_fractional:
        raise SpecHasNoFractionalGate(f"{spec.family} has no fractional gate")
    r = _as_returns(returns)
    T = r.size
    Z, _ = _lagged_inputs(spec, features, T)
    g = compute_gates(spec, params, Z, r, derivatives=derivatives)
    a = whittle.anchors[whittle.anchors < T]
    diff = g.d[a] - whittle.anchor_d[: a.size]
    return diff, (g.dd[a] if derivatives else None)


def hybrid_loglik(spec: ModelSpec, params: ParamVector, returns, features, whittle: WhittleEstimate,
                  lam_pen: Optional[float] = None, h0: Optional[float] = None) -> float:
    """``l_T - lam_pen * sum_anchors (d_t - d_tilde_t)**2``.

    ``lam_pen`` defaults to ``T / 100``.

    Raises
    ------
    SpecHasNoFractionalGate
    """
    diff, _ = _penalty_parts(spec, params, returns, features, whittle)
    if lam_pen is None:
        lam_pen = _as_returns(returns).size / 100.0
    if lam_pen < 0:
        raise ValueError("lam_pen must be nonnegative")
    ll = quasi_loglik(spec, params, returns, features, h0).total
    return float(ll - lam_pen * np.sum(diff * diff))


def hybrid_score(spec: ModelSpec, params: ParamVector, returns, features, whittle: WhittleEstimate,
                 lam_pen: Optional[float] = None, h0: Optional[float] = None) -> np.ndarray:
    """Natural-parameter gradient of :func:`hybrid_loglik`."""
    diff, dd = _penalty_parts(spec, params, returns, features, whittle, derivatives=True)
    if lam_pen is None:
        lam_pen = _as_returns(returns).size / 100.0
    g = analytic_score(spec, params, returns, features, h0)
    return g - 2 * lam_pen * (diff @ dd)


# --------------------------------------------------------------------------
# fitting

@dataclass(frozen=True)
class FitOptions:
    """Optimizer settings.

    ``start`` warm-starts a single run (no jitter, no clipped stage).
    ``whittle`` and ``lam_pen`` switch the objective to the hybrid
    penalized likelihood.  ``bounds`` maps parameter names to natural
    ``(lower, upper)`` pairs (``None`` for open ends); see
    :func:`unconstrained_bounds`.
    """

    n_starts: int = 5
    seed: int = 0
    jitter: float = 0.5
    maxiter: int = 1000
    clip_quantile: float = 0.99
    clip_iter: int = 25
    ftol: float = 1e-10
    gtol: float = 1e-8
    compute_cov: bool = True
    raise_on_degenerate: bool = True
    start: Optional[ParamVector] = None
    h0: Optional[float] = None
    whittle: Optional[WhittleEstimate] = None
    lam_pen: Optional[float] = None
    bounds: Optional[dict] = None


@dataclass
class Convergence:
    converged: bool
    message: str
    iterations: int
    n_starts: int
    objective_evals: int = 0


@dataclass
class FitResult:
    """Output of :func:`fit_qmle`."""

    spec: ModelSpec
    params: ParamVector
    params_unconstrained: np.ndarray
    loglik: float
    score_norm: float
    cov_sandwich: Optional[np.ndarray]
    convergence: Convergence
    K_used: Optional[int]
    n_obs: int
    h0: float
    objective: float = float("nan")
    sandwich: Optional[Sandwich] = None
    penalized: bool = False

    @property
    def se(self) -> Optional[np.ndarray]:
        if self.cov_sandwich is None:
            return None
        return np.sqrt(np.clip(np.diag(self.cov_sandwich), 0, None))

    @property
    def param_names(self) -> list[str]:
        return self.spec.param_names

    def summary(self) -> dict:
        out = {
            "family": str(self.spec.family),
            "loglik": self.loglik,
            "n_obs": self.n_obs,
            "converged": self.convergence.converged,
            "iterations": self.convergence.iterations,
            "score_norm": self.score_norm,
            "K_used": self.K_used,
            "params": dict(zip(self.param_names, self.params.to_array(self.spec).tolist())),
        }
        if self.se is not None:
            out["se"] = dict(zip(self.param_names, self.se.tolist()))
        return out


def default_start(spec: ModelSpec, returns) -> ParamVector:
    """Method-of-moments-informed starting values.

    Total persistence is read off the decay of the squared-return
    autocorrelations (``rho_2 / rho_1``, clipped to [0.8, 0.98]); ``omega``
    matches the sample variance.  Gates start neutral.
    """
    r = _as_returns(returns)
    x = r * r - np.mean(r * r)
    denom = np.dot(x, x)
    if denom > 0:
        rho1 = np.dot(x[1:], x[:-1]) / denom
        rho2 = np.dot(x[2:], x[:-2]) / denom
        phi = rho2 / rho1 if rho1 > 1e-3 else 0.9
    else:
        phi = 0.9
    phi = float(np.clip(phi, 0.8, 0.98))
    var = float(np.var(r)) or 1e-4
    alpha = 0.08
    kw: dict = {"omega": var * (1 - phi)}
    fam = spec.family
    q_p, q_d, q_c = len(spec.p_features), len(spec.d_features), len(spec.clock_features)
    if spec.has_regime:
        blend = phi - alpha
        kw.update(beta_low=blend - 0.05, beta_high=min(blend + 0.05, 0.99 - alpha), gamma_p=np.zeros(q_p))
    elif fam not in (Family.GCLOCK, Family.GF_GC, Family.TGVOL):
        kw["beta"] = phi - alpha
    if spec.uses_alpha0:
        if fam in (Family.GCLOCK, Family.GF_GC):
            a0 = 0.1
            bc = (phi - a0) / (1 - a0)
            kw.update(alpha0=a0, kappa=-math.log(bc))
        elif fam is Family.RSM_GC:
            kw.update(alpha0=2 * alpha, kappa=math.log(2.0))
        else:  # TGVOL: A + Psi is a b_clk-weighted average of alpha0 and the blend
            bc = 0.85
            bh = min((phi - alpha) / bc + 0.02, 0.98)
            kw.update(alpha0=alpha / (1 - bc), kappa=-math.log(bc), beta_low=bh - 0.07, beta_high=bh)
        kw["eta"] = np.zeros(q_c)
    else:
        kw["alpha"] = alpha
    if fam is Family.GJR:
        kw["alpha"] = alpha / 2
        kw["leverage"] = alpha
        kw["beta"] = phi - alpha
    if spec.has_fractional:
        # small order keeps A_t above the first fractional weight
        kw.update(dbar=0.03, gamma_d=np.zeros(q_d))
    return ParamVector(**kw)


_BAD = 1e10


class _Objective:
    """Negative mean (penalized) log-likelihood in unconstrained space."""

    def __init__(self, spec, returns, features, h0, whittle, lam_pen):
        self.spec = spec
        self.r = _as_returns(returns)
        self.features = features
        self.h0 = float(np.var(self.r)) if h0 is None else float(h0)
        self.whittle = whittle
        self.lam_pen = (self.r.size / 100.0 if lam_pen is None else float(lam_pen)) if whittle is not None else 0.0
        _, avail = _lagged_inputs(spec, features, self.r.size)
        self.n = int(_likelihood_mask(spec, avail).sum())
        self.evals = 0
        self.clip = None

    def _parts(self, u):
        p = transform_params(self.spec, u)
        J = transform_jacobian(self.spec, u)
        s, h, dh, mask = _period_scores(self.spec, p, self.r, self.features, self.h0)
        r2 = (self.r * self.r)[mask]
        ll = -0.5 * np.sum(np.log(h) + r2 / h)
        return p, J, s, ll

    def __call__(self, u):
        self.evals += 1
        try:
            p, J, s, ll = self._parts(u)
        except (NonpositiveVariance, FloatingPointError, ValueError, OverflowError):
            return _BAD, np.zeros_like(u)
        if self.clip is not None:
            norms = np.linalg.norm(s @ J, axis=1)
            scale = np.minimum(1.0, self.clip / np.maximum(norms, 1e-300))
            g = (scale[:, None] * s).sum(axis=0)
        else:
            g = s.sum(axis=0)
        val = ll
        if self.whittle is not None and self.lam_pen > 0:
            diff, dd = _penalty_parts(self.spec, p, self.r, self.features, self.whittle, derivatives=True)
            val = ll - self.lam_pen * np.sum(diff * diff)
            g = g - 2 * self.lam_pen * (diff @ dd)
        if not np.isfinite(val) or not np.all(np.isfinite(g)):
            return _BAD, np.zeros_like(u)
        return -val / self.n, -(J.T @ g) / self.n

    def set_clip(self, u, q):
        p, J, s, _ = self._parts(u)
        norms = np.linalg.norm(s @ J, axis=1)
        self.clip = float(np.quantile(norms, q))


_BOUNDABLE = {
    "omega": np.log,
    "kappa": np.log,
    "dbar": lambda x: logit(2 * x),
    "beta_low": logit,
    "gamma_p": lambda x: x,
    "gamma_d": lambda x: x,
    "eta": lambda x: x,
}


def unconstrained_bounds(spec: ModelSpec, bounds: Optional[dict]):
    """Translate natural-parameter bounds to L-BFGS-B bounds on ``u``.

    Only coordinates whose transform is a monotone map of a single
    unconstrained value can be bounded: ``omega``, ``kappa``, ``dbar``,
    ``beta_low``, ``alpha0`` (GCLOCK, GF_GC, TGVOL) and the gate
    coefficients.

    Raises
    ------
    ValueError
        For coupled or unknown parameters.
    """
    P = spec.n_params
    if not bounds:
        return None
    out = [(None, None)] * P
    sl = spec.slices()
    maps = dict(_BOUNDABLE)
    if spec.uses_alpha0 and spec.family is not Family.RSM_GC:
        maps["alpha0"] = logit
    for name, (lo, hi) in bounds.items():
        if name not in sl:
            raise ValueError(f"{spec.family} has no parameter '{name}'")
        if name not in maps:
            raise ValueError(f"'{name}' is coupled to other parameters and cannot be bounded")
        f = maps[name]
        with np.errstate(divide="ignore", invalid="ignore"):
            ulo = None if lo is None else float(f(lo))
            uhi = None if hi is None else float(f(hi))
        for i in range(sl[name].start, sl[name].stop):
            out[i] = (ulo if ulo is None or np.isfinite(ulo) else None,
                      uhi if uhi is None or np.isfinite(uhi) else None)
    return out


def _clip_to(u, bnds):
    if bnds is None:
        return u
    u = u.copy()
    for i, (lo, hi) in enumerate(bnds):
        if lo is not None:
            u[i] = max(u[i], lo)
        if hi is not None:
            u[i] = min(u[i], hi)
    return u


def _lbfgs(obj, u0, maxiter, ftol, gtol, bnds=None):
    return optimize.minimize(obj, u0, jac=True, method="L-BFGS-B", bounds=bnds,
                             options={"maxiter": maxiter, "ftol": ftol, "gtol": gtol, "maxcor": 20})


def fit_qmle(spec: ModelSpec, returns, features=None, opts: Optional[FitOptions] = None) -> FitResult:
    """Gaussian QMLE with analytic gradients and multiple starts.

    Each start runs a short L-BFGS-B stage on per-period scores clipped at
    the ``clip_quantile`` of their norms at the start point, then an
    unclipped L-BFGS-B polish to ``ftol``/``gtol``.  The best start is
    returned.  Failure to converge sets ``convergence.converged = False``
    instead of raising; :class:`NoConvergence` is raised only if every
    start fails to produce a finite likelihood.

    Raises
    ------
    InsufficientHistory
        If fewer than 250 periods remain after burn-in.
    DegenerateHessian
        When ``compute_cov`` is set and the information matrix is
        singular (unless ``raise_on_degenerate=False``).
    """
    opts = opts or FitOptions()
    r = _as_returns(returns)
    obj = _Objective(spec, r, features, opts.h0, opts.whittle, opts.lam_pen)
    if obj.n < MIN_FIT_OBS:
        raise InsufficientHistory(f"{obj.n} usable periods after burn-in; need {MIN_FIT_OBS}")

    if opts.start is not None:
        starts = [inverse_transform(spec, opts.start)]
        warm = True
    else:
        u0 = inverse_transform(spec, default_start(spec, r))
        rng = np.random.default_rng(opts.seed)
        starts = [u0] + [u0 + opts.jitter * rng.standard_normal(u0.size) for _ in range(opts.n_starts - 1)]
        warm = False

    bnds = unconstrained_bounds(spec, opts.bounds)
    best = None
    total_iter = 0
    for u in starts:
        u = _clip_to(u, bnds)
        f0, _ = obj(u)
        if f0 >= _BAD and spec.has_fractional:
            # shrink the order until the recursion stays positive
            i = spec.slices()["dbar"].start
            for dbar in (0.01, 0.003, 0.001):
                u = u.copy()
                u[i] = logit(2 * dbar)
                f0, _ = obj(u)
                if f0 < _BAD:
                    break
        if f0 >= _BAD:
            continue
        if not warm and opts.clip_iter > 0:
            obj.set_clip(u, opts.clip_quantile)
            res = _lbfgs(obj, u, opts.clip_iter, opts.ftol, opts.gtol, bnds)
            obj.clip = None
            total_iter += res.nit
            if obj(res.x)[0] < f0:
                u = res.x
        res = _lbfgs(obj, u, opts.maxiter, opts.ftol, opts.gtol, bnds)
        total_iter += res.nit
        if res.fun >= _BAD:
            continue
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise NoConvergence(f"{spec.family}: no start produced a finite likelihood")

    params = transform_params(spec, best.x)
    s, h, dh, mask = _period_scores(spec, params, r, features, obj.h0)
    ll = float(-0.5 * np.sum(np.log(h) + (r * r)[mask] / h))
    g = s.sum(axis=0)
    if opts.whittle is not None:
        diff, dd = _penalty_parts(spec, params, r, features, opts.whittle, derivatives=True)
        g = g - 2 * obj.lam_pen * (diff @ dd)
    score_norm = float(np.max(np.abs(g)) / obj.n)
    sw = None
    if opts.compute_cov:
        try:
            sw = _sandwich_from_terms(s, h, dh)
        except DegenerateHessian:
            if opts.raise_on_degenerate:
                raise
    conv = Convergence(bool(best.success), str(best.message), int(total_iter), len(starts), obj.evals)
    if not best.success:
        log.warning("%s: optimizer stopped without convergence (%s)", spec.family, best.message)
    return FitResult(
        spec=spec,
        params=params,
        params_unconstrained=np.asarray(best.x),
        loglik=ll,
        score_norm=score_norm,
        cov_sandwich=None if sw is None else sw.cov,
        convergence=conv,
        K_used=spec.K if spec.has_fractional else None,
        n_obs=obj.n,
        h0=obj.h0,
        objective=float(best.fun),
        sandwich=sw,
        penalized=opts.whittle is not None,
    )
