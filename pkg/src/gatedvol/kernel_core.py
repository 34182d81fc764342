"""
Level / tempo / shape decomposition of volatility memory kernels.

A nonnegative kernel ``f`` with finite mass and first moment factors
uniquely as ``f(u) = M / mu * g(u / mu)`` where ``M`` is the total mass,
``mu`` the mean lag and ``g`` a shape with unit mass and unit first
moment.  Shapes are stored as samples on a uniform grid.  Two sample
layouts are used:

* ``nodes`` -- samples at ``v_i = i h`` (``v_0 = 0``), integrated with the
  composite Simpson rule (trapezoid when the node count is even) and
  interpolated linearly;
* ``cells`` -- cell values on ``[i h, (i + 1) h)`` recorded at the centres,
  integrated with the midpoint rule.  This is exact for the step-function
  embedding of discrete lag weights.

``decompose_kernel`` places the shape on the grid ``u / mu`` so that both
normalizations hold to rounding error under the same quadrature rule that
produced ``M`` and ``mu``.
"""
from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Callable, Union
import warnings

import numpy as np
from scipy import integrate

from .errors import DivergentMoment, GridTooCoarse, ZeroMass
from .frac_kernel import _recurrence

__all__ = [
    "DiscreteKernel",
    "SampledKernel",
    "CanonicalTriple",
    "decompose_kernel",
    "reconstruct_kernel",
    "discrete_weights",
    "transfer_spectrum",
    "shape_spectrum",
    "spectral_scaling_check",
    "low_frequency_slope",
    "STANDARD_FREQS",
    "exponential_shape",
    "power_law_shape",
    "garch_kernel",
    "garch_canonical",
    "figarch_kernel",
    "gjr_kernel",
    "rsm_kernel",
    "gclock_kernel",
]

NORMALIZATION_TOL = 1e-8
STANDARD_FREQS = np.linspace(0.01, np.pi, 500)


def _uniform_spacing(grid: np.ndarray) -> float:
    h = grid[1] - grid[0]
    if h <= 0 or not np.allclose(np.diff(grid), h, rtol=1e-9, atol=0.0):
        raise ValueError("grid must be uniform and increasing")
    return float(h)


def _node_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    if n % 2 == 1 and n >= 3:
        w[1:-1:2] = 4.0 * h / 3.0
        w[2:-1:2] = 2.0 * h / 3.0
        w[0] = w[-1] = h / 3.0
    else:
        w[0] = w[-1] = h / 2.0
    return w


@dataclass(frozen=True)
class DiscreteKernel:
    """Nonnegative lag weights ``psi_1..psi_K`` (one lag per ``lag_unit``)."""

    weights: np.ndarray
    lag_unit: str = "days"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty 1-d array")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if np.any(w < 0):
            raise ValueError("kernel weights must be nonnegative")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def K(self) -> int:
        return self.weights.size

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @property
    def first_moment(self) -> float:
        """Step-embedding first moment ``sum (2k - 1)/2 psi_k``."""
        k = np.arange(1, self.K + 1)
        return float(np.sum((k - 0.5) * self.weights))

    def step(self, u) -> np.ndarray:
        """Evaluate the step embedding ``sum psi_k 1[k-1, k)(u)``."""
        u = np.asarray(u, dtype=float)
        idx = np.floor(u).astype(int)
        out = np.zeros_like(u)
        ok = (idx >= 0) & (idx < self.K)
        out[ok] = self.weights[idx[ok]]
        return out

    @classmethod
    def from_sequence(cls, psi: Callable[[np.ndarray], np.ndarray],
                      k_max: int = 10**6, tol: float = 1e-10) -> "DiscreteKernel":
        """Build a kernel from an infinite weight sequence ``psi(k)``.

        A Cauchy test on the partial sums over ``(k_max/2, k_max]`` guards
        against non-summable mass or first moment; trailing weights that
        carry less than ``tol`` of either sum are dropped.
        """
        k = np.arange(1, k_max + 1, dtype=float)
        w = np.asarray(psi(k), dtype=float)
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("sequence must be finite and nonnegative")
        mass = w.sum()
        if mass == 0:
            raise ZeroMass("sequence has zero mass")
        half = k_max // 2
        moment = np.sum((k - 0.5) * w)
        if w[half:].sum() > tol * mass:
            raise DivergentMoment("partial sums of the mass fail the Cauchy test")
        if np.sum((k[half:] - 0.5) * w[half:]) > tol * moment:
            raise DivergentMoment("partial sums of the first moment fail the Cauchy test")
        cum_m = np.cumsum(w[::-1])[::-1]
        cum_1 = np.cumsum(((k - 0.5) * w)[::-1])[::-1]
        keep = np.nonzero((cum_m > tol * mass) | (cum_1 > tol * moment))[0]
        K = int(keep[-1]) + 1 if keep.size else 1
        return cls(w[:K])


@dataclass(frozen=True)
class SampledKernel:
    """Kernel values on a uniform grid starting at zero (``nodes``) or at
    half a spacing (``cells``)."""

    grid: np.ndarray
    values: np.ndarray
    cells: bool = False

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if g.shape != v.shape or g.ndim != 1 or g.size < 2:
            raise ValueError("grid and values must be 1-d arrays of equal length >= 2")
        h = _uniform_spacing(g)
        start = h / 2.0 if self.cells else 0.0
        if abs(g[0] - start) > 1e-9 * h:
            raise ValueError("nodes grids start at 0, cells grids at h/2")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("kernel values must be finite and nonnegative")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)

    @property
    def spacing(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def quad_weights(self) -> np.ndarray:
        if self.cells:
            return np.full(self.grid.size, self.spacing)
        return _node_weights(self.grid.size, self.spacing)

    def integral(self) -> float:
        return float(np.dot(self.quad_weights(), self.values))

    def moment(self) -> float:
        return float(np.dot(self.quad_weights(), self.grid * self.values))

    @classmethod
    def from_discrete(cls, kernel: DiscreteKernel) -> "SampledKernel":
        k = np.arange(1, kernel.K + 1, dtype=float)
        return cls(k - 0.5, kernel.weights.copy(), cells=True)


@dataclass(frozen=True)
class CanonicalTriple:
    """``(M, mu, g)`` with ``g`` sampled on a uniform grid over ``[0, U_max]``."""

    level_M: float
    tempo_mu: float
    grid: np.ndarray
    shape_g: np.ndarray
    cells: bool = False

    def __post_init__(self):
        if not (self.level_M > 0 and self.tempo_mu > 0):
            raise ValueError("level and tempo must be positive")
        object.__setattr__(self, "_shape", SampledKernel(self.grid, self.shape_g, self.cells))

    @property
    def shape(self) -> SampledKernel:
        return self._shape

    @property
    def spacing(self) -> float:
        return self._shape.spacing

    @property
    def u_max(self) -> float:
        return float(self.grid[-1] + (self.spacing / 2 if self.cells else 0.0))

    def normalization_errors(self) -> tuple[float, float]:
        """Deviations of ``int g`` and ``int u g`` from one."""
        return abs(self._shape.integral() - 1.0), abs(self._shape.moment() - 1.0)

    def with_level(self, M: float) -> "CanonicalTriple":
        return CanonicalTriple(M, self.tempo_mu, self.grid, self.shape_g, self.cells)

    def with_tempo(self, mu: float) -> "CanonicalTriple":
        return CanonicalTriple(self.level_M, mu, self.grid, self.shape_g, self.cells)

    def shape_at(self, v) -> np.ndarray:
        """Evaluate the interpolated shape (linear for nodes, step for cells)."""
        v = np.asarray(v, dtype=float)
        h = self.spacing
        if self.cells:
            idx = np.floor(v / h).astype(int)
            out = np.zeros_like(v)
            ok = (idx >= 0) & (idx < self.grid.size) & (v >= 0)
            out[ok] = self.shape_g[idx[ok]]
            return out
        return np.interp(v, self.grid, self.shape_g, left=0.0, right=0.0)

    def cumulative(self, v) -> np.ndarray:
        """Exact integral of the interpolated shape over ``[0, v]``."""
        v = np.clip(np.asarray(v, dtype=float), 0.0, self.u_max)
        h = self.spacing
        g = self.shape_g
        if self.cells:
            cum = np.concatenate(([0.0], np.cumsum(g) * h))
            idx = np.minimum(np.floor(v / h).astype(int), g.size - 1)
            return cum[idx] + g[idx] * (v - idx * h)
        seg = 0.5 * h * (g[1:] + g[:-1])
        cum = np.concatenate(([0.0], np.cumsum(seg)))
        idx = np.minimum(np.floor(v / h).astype(int), g.size - 2)
        s = v - idx * h
        slope = (g[idx + 1] - g[idx]) / h
        return cum[idx] + g[idx] * s + 0.5 * slope * s * s


KernelLike = Union[DiscreteKernel, SampledKernel, Callable[[np.ndarray], np.ndarray]]


def _find_support(f, mass: float, scale: float, tol: float) -> float:
    # search in units of the mean lag so the grid is scale-equivariant
    upper = scale
    for _ in range(200):
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                tail, _ = integrate.quad(f, upper, np.inf, limit=200)
            except integrate.IntegrationWarning as exc:
                raise DivergentMoment(f"tail integral failed: {exc}") from exc
        if tail < tol * mass:
            return upper
        upper *= 1.5
    raise DivergentMoment("could not bracket the kernel support")


def _sample_callable(f, n: int, tail_tol: float) -> SampledKernel:
    def safe_f(u):
        return float(f(np.asarray(u, dtype=float)))

    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            mass, _ = integrate.quad(safe_f, 0.0, np.inf, limit=400)
            first, _ = integrate.quad(lambda u: u * safe_f(u), 0.0, np.inf, limit=400)
        except integrate.IntegrationWarning as exc:
            raise DivergentMoment(f"kernel quadrature did not converge: {exc}") from exc
    if not np.isfinite(mass) or not np.isfinite(first):
        raise DivergentMoment("kernel mass or first moment is not finite")
    if mass <= 0:
        raise ZeroMass("kernel has zero mass")
    upper = _find_support(safe_f, mass, first / mass, tail_tol)
    if n % 2 == 0:
        n += 1
    grid = np.linspace(0.0, upper, n)
    values = np.asarray(f(grid), dtype=float)
    return SampledKernel(grid, values, cells=False)


def decompose_kernel(f: KernelLike, *, n: int = 20001,
                     tail_tol: float = NORMALIZATION_TOL) -> CanonicalTriple:
    """Canonical level / tempo / shape decomposition.

    Parameters
    ----------
    f : DiscreteKernel, SampledKernel or callable
        Discrete lag weights (step embedding), sampled kernel values, or a
        vectorised function on ``[0, inf)``.  Callables are sampled on ``n``
        nodes over a support whose truncated tail mass is below
        ``tail_tol`` times the total mass.

    Returns
    -------
    CanonicalTriple
        ``M = int f``, ``mu = int u f / M`` and ``g(v) = mu / M f(mu v)``.

    Raises
    ------
    ZeroMass
        If the kernel has no mass.
    DivergentMoment
        If the mass or first moment of a callable kernel cannot be
        integrated (non-summable or IGARCH-like input).
    """
    if isinstance(f, DiscreteKernel):
        sk = SampledKernel.from_discrete(f)
    elif isinstance(f, SampledKernel):
        sk = f
    elif callable(f):
        sk = _sample_callable(f, n, tail_tol)
    else:
        raise TypeError("expected DiscreteKernel, SampledKernel or a callable")
    M = sk.integral()
    if not M > 0:
        raise ZeroMass("kernel has zero mass")
    first = sk.moment()
    if not np.isfinite(first):
        raise DivergentMoment("first moment is not finite")
    mu = first / M
    grid = sk.grid / mu
    shape = sk.values * (mu / M)
    return CanonicalTriple(M, mu, grid, shape, sk.cells)


def reconstruct_kernel(t: CanonicalTriple, grid=None, *, tol: float = 1e-6) -> SampledKernel:
    """Kernel ``f(u) = M / mu * g(u / mu)``.

    Without ``grid`` the kernel is produced on the natural grid ``mu * v``
    where it is exact.  On a user grid the shape is interpolated and
    ``GridTooCoarse`` is raised when the recovered mass or first moment
    differs from ``M`` or ``M mu`` by more than ``tol`` (relative).
    """
    M, mu = t.level_M, t.tempo_mu
    if grid is None:
        return SampledKernel(t.grid * mu, t.shape_g * (M / mu), t.cells)
    grid = np.asarray(grid, dtype=float)
    values = (M / mu) * t.shape_at(grid / mu)
    try:
        sk = SampledKernel(grid, values, t.cells)
        m_hat, f_hat = sk.integral(), sk.moment()
    except ValueError:
        m_hat = integrate.trapezoid(values, grid)
        f_hat = integrate.trapezoid(grid * values, grid)
        sk = None
    err = max(abs(m_hat / M - 1.0), abs(f_hat / (M * mu) - 1.0))
    if not np.isfinite(err) or err > tol:
        raise GridTooCoarse(f"quadrature error {err:.3g} exceeds tolerance {tol:.3g}")
    if sk is None:
        raise GridTooCoarse("reconstruction requires a uniform grid starting at 0")
    return sk


def discrete_weights(t: CanonicalTriple, K: int) -> DiscreteKernel:
    """Lag weights ``psi_k = M int_{(k-1)/mu}^{k/mu} g(v) dv``, ``k = 1..K``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    edges = np.arange(K + 1, dtype=float) / t.tempo_mu
    cum = t.cumulative(edges)
    w = t.level_M * np.diff(cum)
    return DiscreteKernel(np.maximum(w, 0.0))


def transfer_spectrum(f: DiscreteKernel, freqs) -> np.ndarray:
    """``|sum_k psi_k exp(-i k lambda)|**2`` on ``freqs``."""
    lam = np.asarray(freqs, dtype=float)
    k = np.arange(1, f.K + 1, dtype=float)
    out = np.empty(lam.size)
    chunk = max(1, 2_000_000 // f.K)
    for s in range(0, lam.size, chunk):
        ph = np.exp(-1j * np.outer(lam[s:s + chunk], k))
        out[s:s + chunk] = np.abs(ph @ f.weights) ** 2
    return out


def _half_hat(a: np.ndarray) -> np.ndarray:
    # int_0^1 (1 - s) exp(-a s) ds for complex a
    out = np.empty_like(a)
    small = np.abs(a) < 1e-3
    s = a[small]
    out[small] = 0.5 - s / 6.0 + s * s / 24.0 - s ** 3 / 120.0
    b = a[~small]
    out[~small] = 1.0 / b - (1.0 - np.exp(-b)) / (b * b)
    return out


def shape_spectrum(t: CanonicalTriple, freqs) -> np.ndarray:
    """``|int g(v) exp(-i w v) dv|**2`` of the interpolated shape."""
    w = np.asarray(freqs, dtype=float)
    h = t.spacing
    v = t.grid
    g = t.shape_g
    out = np.empty(w.size)
    chunk = max(1, 2_000_000 // v.size)
    for s in range(0, w.size, chunk):
        ws = w[s:s + chunk]
        ph = np.exp(-1j * np.outer(ws, v))
        if t.cells:
            ft = (ph @ g) * h * np.sinc(ws * h / (2 * np.pi))
        else:
            inner = (ph[:, 1:-1] @ g[1:-1]) * h * np.sinc(ws * h / (2 * np.pi)) ** 2
            a = 1j * ws * h
            left = g[0] * h * _half_hat(a)
            right = g[-1] * h * ph[:, -1] * _half_hat(-a)
            ft = inner + left + right
        out[s:s + chunk] = np.abs(ft) ** 2
    return out


def spectral_scaling_check(f: DiscreteKernel, t: CanonicalTriple, freqs=STANDARD_FREQS) -> float:
    """Largest deviation between ``S_f(lambda)`` and ``M**2 S_g(mu lambda)``.

    ``S_f`` is the discrete transfer spectrum of the lag weights and
    ``S_g`` the continuous-time spectrum of the shape.  Deviations are
    measured relative to the spectral peak ``max S_f`` on the grid; the
    pointwise ratio is dominated at high frequencies by the unit-step
    embedding (a ``sinc**2(lambda/2)`` factor) and aliasing.
    """
    lam = np.asarray(freqs, dtype=float)
    s_f = transfer_spectrum(f, lam)
    s_g = t.level_M ** 2 * shape_spectrum(t, t.tempo_mu * lam)
    return float(np.max(np.abs(s_f - s_g)) / np.max(s_f))


def low_frequency_slope(f: DiscreteKernel, freqs=STANDARD_FREQS, fraction: float = 0.1) -> float:
    """Least-squares slope of ``log S_f`` on ``log lambda`` over the lowest
    ``fraction`` of ``freqs``."""
    lam = np.sort(np.asarray(freqs, dtype=float))
    m = max(int(math.floor(fraction * lam.size)), 2)
    lam = lam[:m]
    s = transfer_spectrum(f, lam)
    slope, _ = np.polyfit(np.log(lam), np.log(s), 1)
    return float(slope)


# --- shapes and classical embeddings ---------------------------------------

def exponential_shape(n: int = 20001, tail_tol: float = NORMALIZATION_TOL) -> CanonicalTriple:
    """``g(v) = exp(-v)`` (already normalized) on a nodes grid."""
    return decompose_kernel(lambda u: np.exp(-np.asarray(u)), n=n, tail_tol=tail_tol)


def power_law_shape(d: float, n_cells: int = 20000) -> CanonicalTriple:
    """Step shape with cell masses ``k**d - (k-1)**d``.

    The underlying density is proportional to ``v**(d - 1)`` on a bounded
    support, whose transfer spectrum behaves like ``lambda**(-2d)`` at low
    frequencies.
    """
    if not 0 < d < 0.5:
        raise ValueError("d must lie in (0, 0.5)")
    k = np.arange(1, n_cells + 1, dtype=float)
    return decompose_kernel(DiscreteKernel(k ** d - (k - 1) ** d))


def garch_kernel(alpha: float, beta: float, K: int = 2000) -> DiscreteKernel:
    """ARCH(inf) weights ``alpha beta**(k-1)`` of GARCH(1,1)."""
    k = np.arange(K)
    return DiscreteKernel(alpha * beta ** k)


def garch_canonical(alpha: float, beta: float, continuous: bool = False) -> tuple[float, float]:
    """``(M, mu)`` of GARCH(1,1).

    ``continuous=True`` gives the exponential approximation
    ``(alpha / lam, 1 / lam)`` with ``lam = -log beta``; otherwise the exact
    step embedding ``(alpha / (1 - beta), 1 / (1 - beta) - 1/2)``.
    """
    if continuous:
        lam = -math.log(beta)
        return alpha / lam, 1.0 / lam
    return alpha / (1.0 - beta), 1.0 / (1.0 - beta) - 0.5


def figarch_kernel(d: float, K: int = 200) -> DiscreteKernel:
    """Positive ARCH weights ``|pi_k(d)|`` truncated at ``K``."""
    pi, _ = _recurrence(float(d), int(K))
    return DiscreteKernel(np.abs(pi))


def gjr_kernel(alpha: float, leverage: float, beta: float, K: int = 2000,
               neg_prob: float = 0.5) -> DiscreteKernel:
    """Sign-averaged GJR weights ``(alpha + leverage P(eps < 0)) beta**(k-1)``."""
    return garch_kernel(alpha + leverage * neg_prob, beta, K)


def rsm_kernel(alpha: float, beta_t: float, K: int = 2000) -> DiscreteKernel:
    """Local kernel of the regime gate at persistence ``beta_t``."""
    return garch_kernel(alpha, beta_t, K)


def gclock_kernel(alpha0: float, kappa: float, dtau: float, K: int = 2000) -> DiscreteKernel:
    """Local kernel of the clock gate at business-time increment ``dtau``."""
    beta = math.exp(-kappa * dtau)
    return garch_kernel(alpha0 * (1.0 - beta), beta, K)
