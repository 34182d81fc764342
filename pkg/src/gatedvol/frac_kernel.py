"""
Fractional differencing weights and truncation schedules.

The weights follow the variance-side convention

    pi_k(d) = (-1)**k * binom(d, k),   k >= 1,

so ``pi_1 = -d`` and every ``pi_k`` is negative for ``0 < d < 1``.  The
model recursions consume them exactly with this sign.  Since
``sum_{k>=1} pi_k(d) = (1 - 1)**d - 1 = -1`` the discarded tail after a
truncation at ``K`` is known in closed form, ``1 - sum_{k<=K} |pi_k|``.
"""
from __future__ import annotations

from dataclasses import dataclass
import math
from typing import NamedTuple

import numpy as np
from scipy.special import digamma, gamma as gamma_fn

from .errors import OrderOutOfRange

__all__ = [
    "FracWeights",
    "TruncationChoice",
    "pi_weights",
    "pi_weight_grads",
    "pi_tail",
    "pi_tail_bound",
    "select_truncation",
    "DEFAULT_C",
    "DEFAULT_ZETA",
    "DEFAULT_TAIL_TOL",
    "K_CAP",
]

DEFAULT_C = 10.0
DEFAULT_ZETA = 0.4
DEFAULT_TAIL_TOL = 1e-6
K_CAP = 200


@dataclass(frozen=True)
class FracWeights:
    """Weights ``pi_1..pi_K`` for one fractional order together with their
    derivatives in ``d``."""

    d: float
    K: int
    pi: np.ndarray
    dpi_dd: np.ndarray

    @property
    def abs_sum(self) -> float:
        return float(np.abs(self.pi).sum())

    @property
    def tail(self) -> float:
        """Exact mass of the discarded weights, ``sum_{k>K} |pi_k|``."""
        return pi_tail(self.d, self.K)


class TruncationChoice(NamedTuple):
    K: int
    schedule_K: int
    tail: float
    tail_ok: bool


def _check_order(d: float) -> float:
    d = float(d)
    if not (0.0 < d < 0.5) or not math.isfinite(d):
        raise OrderOutOfRange(f"fractional order d={d!r} outside (0, 0.5)")
    return d


def _check_lags(K: int) -> int:
    K = int(K)
    if K < 1:
        raise ValueError("K must be >= 1")
    return K


def _recurrence(d: float, K: int) -> tuple[np.ndarray, np.ndarray]:
    # pi_k = pi_{k-1} (k-1-d)/k, differentiated term by term
    pi = np.empty(K)
    dpi = np.empty(K)
    pi[0] = -d
    dpi[0] = -1.0
    for k in range(2, K + 1):
        ratio = (k - 1 - d) / k
        pi[k - 1] = pi[k - 2] * ratio
        dpi[k - 1] = dpi[k - 2] * ratio - pi[k - 2] / k
    return pi, dpi


def pi_weights(d: float, K: int) -> FracWeights:
    """Fractional kernel weights by the stable product recurrence.

    Parameters
    ----------
    d : float
        Fractional order in (0, 0.5).
    K : int
        Number of lags.

    Returns
    -------
    FracWeights
        ``pi`` from the recurrence ``pi_k = pi_{k-1} (k-1-d)/k`` and
        ``dpi_dd`` from the digamma identity.
    """
    d = _check_order(d)
    K = _check_lags(K)
    pi, _ = _recurrence(d, K)
    return FracWeights(d=d, K=K, pi=pi, dpi_dd=pi_weight_grads(d, K))


def pi_weight_grads(d: float, K: int) -> np.ndarray:
    """``d pi_k / d d = pi_k (psi(d+1) - psi(d-k+1))`` with ``psi`` the
    digamma function."""
    d = _check_order(d)
    K = _check_lags(K)
    pi, _ = _recurrence(d, K)
    k = np.arange(1, K + 1)
    return pi * (digamma(d + 1.0) - digamma(d - k + 1.0))


def pi_tail(d: float, K: int) -> float:
    """Exact discarded mass ``sum_{k>K} |pi_k(d)| = 1 - sum_{k<=K} |pi_k(d)|``.

    ``d = 0`` is accepted and gives zero (all weights vanish).
    """
    d = float(d)
    if d == 0.0:
        return 0.0
    _check_order(d)
    pi, _ = _recurrence(d, _check_lags(K))
    # sum of negative terms; accumulate small-to-large
    return float(max(1.0 + np.sum(pi[::-1]), 0.0))


def pi_tail_bound(d: float, K: int) -> float:
    """Integral bound on the discarded tail.

    Uses ``|pi_k| ~ k**(-1-d) / |Gamma(-d)|`` so that
    ``sum_{k>K} |pi_k| <= K**(-d) / (d |Gamma(-d)|)``.
    """
    d = float(d)
    if d == 0.0:
        return 0.0
    _check_order(d)
    K = _check_lags(K)
    return float(K ** (-d) / (d * abs(gamma_fn(-d))))


def select_truncation(
    T: int,
    c: float = DEFAULT_C,
    zeta: float = DEFAULT_ZETA,
    tail_tol: float = DEFAULT_TAIL_TOL,
    dbar: float = 0.45,
    cap: int = K_CAP,
) -> TruncationChoice:
    """Truncation length ``K = max(floor(c T**zeta), K_tail)`` capped at ``cap``.

    ``K_tail`` is the smallest lag count whose integral tail bound for
    ``pi_k(dbar)`` is below ``tail_tol``.  The returned ``tail_ok`` flag is
    False when the cap binds before the tolerance is met, which is the
    normal situation for ``dbar`` bounded away from zero: the tail decays
    only like ``K**(-dbar)``.
    """
    if c <= 0 or not (0.0 < zeta < 0.5) or not tail_tol > 0:
        raise ValueError("need c > 0, 0 < zeta < 0.5 and tail_tol > 0")
    schedule = max(int(math.floor(c * float(T) ** zeta)), 1)
    if math.isinf(tail_tol):
        K = min(schedule, cap)
        tail = pi_tail_bound(dbar, K) if dbar > 0 else 0.0
        return TruncationChoice(K, schedule, tail, True)
    if dbar == 0.0:
        k_tail = 1
    else:
        _check_order(dbar)
        # invert the bound: K**(-d) <= tol * d |Gamma(-d)|
        target = tail_tol * dbar * abs(gamma_fn(-dbar))
        log_k = -math.log(target) / dbar
        if log_k <= 0:
            k_tail = 1
        elif log_k > math.log(cap + 1.0):
            k_tail = cap + 1
        else:
            k_tail = int(math.ceil(math.exp(log_k)))
    K = min(max(schedule, k_tail), cap)
    tail = pi_tail_bound(dbar, K) if dbar > 0 else 0.0
    return TruncationChoice(K, schedule, tail, tail < tail_tol)
