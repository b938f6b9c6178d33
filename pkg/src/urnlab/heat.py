"""Continuous-time heat kernels by uniformization.

A rate-1 chain with jump matrix ``P`` has transition function
``H_t = exp(t (P - I)) = sum_k Pois_t(k) P^k``.  The sum is truncated on both
sides once the discarded Poisson mass is below ``tol``.  Matrices that are
mostly zero are switched to CSR so the power iteration costs O(nnz) per row.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse, stats

from .errors import DegenerateModel

DEFAULT_TOL = 1e-12

__all__ = [
    "DEFAULT_TOL",
    "as_operator",
    "poisson_window",
    "heat_apply",
    "heat_matrix",
    "first_time_below",
]


def as_operator(P):
    """Return ``P`` as a CSR array when it is large and sparse, else as a dense array."""
    if sparse.issparse(P):
        return sparse.csr_array(P)
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    if n > 64 and np.count_nonzero(P) < 0.25 * n * n:
        return sparse.csr_array(P)
    return P


def poisson_window(t: float, tol: float = DEFAULT_TOL):
    """Indices ``k0..k1`` and weights of a Poisson(t) law with tail mass below ``tol``."""
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    if t == 0:
        return 0, np.ones(1)
    k0 = int(stats.poisson.ppf(tol / 2, t))
    k0 = max(k0 - 1, 0)
    k1 = int(stats.poisson.isf(tol / 2, t)) + 1
    ks = np.arange(k0, k1 + 1)
    return k0, stats.poisson.pmf(ks, t)


def _right_mul(V, P):
    if sparse.issparse(P):
        return np.asarray((P.T @ V.T).T)
    return V @ P


def heat_apply(P, V, t: float, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Compute ``V @ exp(t (P - I))`` for row vector(s) ``V``."""
    P = as_operator(P)
    V = np.array(V, dtype=float)
    k0, w = poisson_window(t, tol)
    out = np.zeros_like(V)
    cur = V
    for _ in range(k0):
        cur = _right_mul(cur, P)
    for weight in w:
        out += weight * cur
        cur = _right_mul(cur, P)
    return out


def heat_matrix(P, t: float, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Dense ``exp(t (P - I))``."""
    n = P.shape[0]
    return heat_apply(P, np.eye(n), t, tol)


def first_time_below(P, distance, eps: float, rel_tol: float, tol: float = DEFAULT_TOL,
                     max_doublings: int = 60) -> float:
    """Smallest ``t`` with ``distance(H_t) <= eps`` for a nonincreasing ``distance``.

    The bracket grows from ``t = 1`` by squaring ``H_t``; bisection then reuses
    the heat matrix at the lower end, ``H_mid = H_lo @ H_{mid - lo}``, so each
    step only uniformizes over the current bracket width.
    """
    P = as_operator(P)
    n = P.shape[0]
    H_lo = np.eye(n)
    if distance(H_lo) <= eps:
        return 0.0
    lo, hi = 0.0, 1.0
    H_hi = heat_matrix(P, hi, tol)
    doublings = 0
    while distance(H_hi) > eps:
        doublings += 1
        if doublings > max_doublings:
            raise DegenerateModel(
                f"distance still above {eps} at t={hi:g}; chain is probably reducible"
            )
        lo, H_lo = hi, H_hi
        H_hi = H_hi @ H_hi
        hi *= 2.0
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        H_mid = H_lo @ heat_matrix(P, mid - lo, tol)
        if distance(H_mid) <= eps:
            hi, H_hi = mid, H_mid
        else:
            lo, H_lo = mid, H_mid
    return hi
