"""Exact mixing quantities for enumerated chains.

Everything here works on a dense kernel ``P`` and a stationary table ``pi``
and treats the chain as running in continuous time at rate 1.
"""

from __future__ import annotations

import csv
import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import linalg, optimize

from .errors import CapExceeded, ConfigError, DegenerateModel
from .heat import DEFAULT_TOL, as_operator, first_time_below, heat_apply, heat_matrix
from .kernels import (
    ChainSpec,
    additive_reversibilization,
    build_kernel,
    edge_measure,
    kernel_irreducible,
    reversibility_check,
    stationarity_residual,
)
from .perms import single_ball_matrix, single_ball_mixing_time, spectral_gap
from .statespace import enumerate_states, stationary_table

PROFILE_CAP = 18

__all__ = [
    "TVCurve",
    "MixingReport",
    "ComparisonReport",
    "ProfilePoint",
    "heat_kernel_row",
    "heat_kernel",
    "worst_case_tv",
    "tv_curve",
    "mixing_time",
    "linf_mixing_time",
    "relaxation_time",
    "reversible_gap",
    "mixing_report",
    "cutoff_ratio_scan",
    "dirichlet_form",
    "symmetrized_kernel",
    "spectral_profile_set",
    "spectral_profile",
    "spectral_profile_table",
    "shortest_paths",
    "congestion_ratio",
    "stationary_from_kernel",
]


def heat_kernel_row(P, x: int, t: float, tol: float = DEFAULT_TOL) -> np.ndarray:
    N = P.shape[0]
    start = np.zeros(N)
    start[x] = 1.0
    return heat_apply(P, start, t, tol)


def heat_kernel(P, t: float, tol: float = DEFAULT_TOL) -> np.ndarray:
    return heat_matrix(P, t, tol)


def _tv_rows(H: np.ndarray, pi: np.ndarray) -> float:
    return float(0.5 * np.abs(H - pi[None, :]).sum(axis=1).max())


def worst_case_tv(P, pi, t: float, tol: float = DEFAULT_TOL) -> float:
    pi = np.asarray(pi, dtype=float)
    return _tv_rows(heat_matrix(P, t, tol), pi)


@dataclass(frozen=True)
class TVCurve:
    times: np.ndarray
    worst_case_tv: np.ndarray

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "d_tv"])
            w.writerows((repr(float(t)), repr(float(v))) for t, v in zip(self.times, self.worst_case_tv))


def tv_curve(P, pi, times: Sequence[float], tol: float = DEFAULT_TOL) -> TVCurve:
    """Worst-case TV on an increasing grid, stepping ``H_{t_k} = H_{t_{k-1}} H_{t_k - t_{k-1}}``."""
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise ConfigError("time grid is empty")
    if (np.diff(times) <= 0).any() or times[0] < 0:
        raise ConfigError("time grid must be nonnegative and strictly increasing")
    pi = np.asarray(pi, dtype=float)
    op = as_operator(P)
    H = np.eye(P.shape[0])
    prev = 0.0
    values = []
    for t in times:
        if t > prev:
            H = H @ heat_matrix(op, t - prev, tol)
        values.append(_tv_rows(H, pi))
        prev = t
    return TVCurve(times, np.array(values))


def _check_mixing_args(P, eps):
    if not 0 < eps < 1:
        raise ConfigError(f"eps must lie in (0, 1), got {eps}")
    if not kernel_irreducible(P):
        raise DegenerateModel("kernel is reducible; mixing time is infinite")


def mixing_time(P, pi, eps: float, rel_tol: float = 1e-4, tol: float = DEFAULT_TOL) -> float:
    """``inf{t : d(t) <= eps}`` by bracketing and bisection on the monotone ``d``."""
    _check_mixing_args(P, eps)
    pi = np.asarray(pi, dtype=float)
    return first_time_below(P, lambda H: _tv_rows(H, pi), eps, rel_tol, tol)


def linf_mixing_time(P, pi, eps: float, rel_tol: float = 1e-4, tol: float = DEFAULT_TOL) -> float:
    """``inf{t : max_{x,y} |H_t(x,y)/pi(y) - 1| <= eps}``."""
    if eps <= 0:
        raise ConfigError("eps must be positive")
    if not kernel_irreducible(P):
        raise DegenerateModel("kernel is reducible; mixing time is infinite")
    pi = np.asarray(pi, dtype=float)

    def sup_ratio(H):
        return float(np.abs(H / pi[None, :] - 1.0).max())

    return first_time_below(P, sup_ratio, eps, rel_tol, tol)


def _symmetric_form(P, pi) -> np.ndarray:
    s = np.sqrt(np.asarray(pi, dtype=float))
    S = s[:, None] * np.asarray(P, dtype=float) / s[None, :]
    return 0.5 * (S + S.T)


def reversible_gap(P, pi) -> float:
    """Spectral gap ``1 - lambda_2`` of a kernel reversible with respect to ``pi``."""
    if not reversibility_check(P, pi, tol=1e-12):
        raise ConfigError("kernel is not reversible with respect to pi; reversibilize it first")
    lam = np.sort(np.linalg.eigvalsh(_symmetric_form(P, pi)))[::-1]
    if lam.size < 2:
        raise DegenerateModel("a one-state chain has no spectral gap")
    gap = 1.0 - lam[1]
    if gap <= 1e-14:
        raise DegenerateModel("spectral gap is zero; chain is reducible")
    return float(gap)


def relaxation_time(P, pi) -> float:
    return 1.0 / reversible_gap(P, pi)


@dataclass(frozen=True)
class MixingReport:
    t_mix: dict
    t_rel: float | None
    t_mix_inf: dict
    gap: float | None

    def to_doc(self) -> dict:
        return {
            "t_mix": {str(k): v for k, v in self.t_mix.items()},
            "t_rel": self.t_rel,
            "t_mix_inf": {str(k): v for k, v in self.t_mix_inf.items()},
            "gap": self.gap,
        }


def mixing_report(P, pi, eps_values: Iterable[float] = (0.25,), rel_tol: float = 1e-4) -> MixingReport:
    eps_values = sorted(set(float(e) for e in eps_values))
    t_mix = {e: mixing_time(P, pi, e, rel_tol) for e in eps_values}
    t_inf = {e: linf_mixing_time(P, pi, e, rel_tol) for e in eps_values}
    if reversibility_check(P, pi, tol=1e-12):
        gap = reversible_gap(P, pi)
        return MixingReport(t_mix, 1.0 / gap, t_inf, gap)
    return MixingReport(t_mix, None, t_inf, None)


def cutoff_ratio_scan(specs: Mapping[int, ChainSpec] | Iterable[tuple[int, ChainSpec]], eps: float = 0.25,
                      rel_tol: float = 1e-5, cap: int = 20_000) -> list[dict]:
    """Rows ``n, states, t_mix(eps), t_mix(1-eps), ratio, predicted, location_ratio``.

    ``predicted`` is ``urn_size * t_single(1/sqrt(n))``; ``location_ratio`` is
    ``t_mix(1/4) / predicted`` (informational).
    """
    items = specs.items() if isinstance(specs, Mapping) else specs
    lo, hi = sorted((eps, 1 - eps))
    rows = []
    for n, spec in items:
        space = enumerate_states(spec.margins, cap=cap)
        pi = stationary_table(space)
        P = build_kernel(spec, space)
        t_lo = mixing_time(P, pi, lo, rel_tol)
        t_hi = mixing_time(P, pi, hi, rel_tol)
        t_quarter = t_lo if lo == 0.25 else mixing_time(P, pi, 0.25, rel_tol)
        t_single = single_ball_mixing_time(single_ball_matrix(spec.mu), 1.0, 1 / math.sqrt(n))
        predicted = spec.margins.urn_size * t_single
        rows.append({
            "n": n,
            "states": len(space),
            "t_mix_eps": t_lo,
            "t_mix_1_minus_eps": t_hi,
            "ratio": t_lo / t_hi if t_hi > 0 else math.inf,
            "predicted": predicted,
            "location_ratio": t_quarter / predicted if predicted > 0 else math.nan,
        })
    return rows


def dirichlet_form(P, pi, f, g=None) -> float:
    """``<(I - P) f, g>_pi``."""
    f = np.asarray(f, dtype=float)
    g = f if g is None else np.asarray(g, dtype=float)
    pi = np.asarray(pi, dtype=float)
    return float(np.sum(pi * (f - np.asarray(P) @ f) * g))


def symmetrized_kernel(P, pi) -> np.ndarray:
    """Additive reversibilization; returns ``P`` unchanged when already reversible."""
    if reversibility_check(P, pi, tol=1e-13):
        return np.asarray(P, dtype=float)
    return additive_reversibilization(P, pi)


def _subset_mask(A, N):
    A = np.asarray(A)
    if A.dtype == bool:
        return A
    mask = np.zeros(N, dtype=bool)
    mask[A.astype(np.int64)] = True
    return mask


def spectral_profile_set(P, pi, A) -> float:
    """Smallest eigenvalue of the pi-symmetrized Dirichlet operator on functions supported in ``A``."""
    pi = np.asarray(pi, dtype=float)
    mask = _subset_mask(A, len(pi))
    if not mask.any():
        raise ConfigError("set must be nonempty")
    S = np.eye(len(pi)) - _symmetric_form(P, pi)
    return float(np.linalg.eigvalsh(S[np.ix_(mask, mask)])[0])


def _has_signed_vector(V: np.ndarray, tol: float = 1e-10) -> bool:
    """Whether the column span of ``V`` contains a nonzero nonnegative vector."""
    if V.shape[1] == 1:
        v = V[:, 0] / np.abs(V[:, 0]).max()
        return bool((v >= -tol).all() or (v <= tol).all())
    # LP feasibility: V c >= 0 with sum(V c) = 1
    k = V.shape[1]
    res = optimize.linprog(np.zeros(k), A_ub=-V, b_ub=np.full(V.shape[0], tol),
                           A_eq=V.sum(axis=0)[None, :], b_eq=[1.0], bounds=[(None, None)] * k)
    return bool(res.status == 0)


def _modified_value(L_A: np.ndarray, pi_A: np.ndarray) -> float:
    """``min E(f)/Var(f)`` over nonnegative ``f`` positive on all of ``A`` and zero elsewhere.

    Such minimizers are generalized eigenvectors of
    ``(K_A, diag(pi_A) - pi_A pi_A^T)`` with a single sign; minimizers that
    vanish somewhere in ``A`` belong to smaller supports, which the caller
    enumerates.  Repeated eigenvalues are handled by checking whether the
    whole eigenspace contains a single-signed vector.
    """
    K = pi_A[:, None] * L_A
    K = 0.5 * (K + K.T)
    B = np.diag(pi_A) - np.outer(pi_A, pi_A)
    lam, vecs = linalg.eigh(K, B)
    start = 0
    while start < lam.size:
        stop = start + 1
        while stop < lam.size and lam[stop] - lam[start] <= 1e-9 * max(1.0, abs(lam[start])):
            stop += 1
        if _has_signed_vector(vecs[:, start:stop]):
            return float(lam[start])
        start = stop
    return math.inf


@dataclass(frozen=True)
class ProfilePoint:
    delta: float
    lam: float
    lam_modified: float | None = None


def spectral_profile_table(P, pi, delta_max: float, cap: int = PROFILE_CAP):
    """Per admissible support ``A`` (``pi(A) <= delta_max``): ``(pi(A), Lambda(A), modified value)``."""
    pi = np.asarray(pi, dtype=float)
    N = len(pi)
    if N > cap:
        raise CapExceeded(f"spectral profile enumerates 2^{N} supports; cap is |states| <= {cap}")
    L = np.eye(N) - np.asarray(symmetrized_kernel(P, pi))
    S = np.eye(N) - _symmetric_form(P, pi)
    rows = []
    for code in range(1, 1 << N):
        mask = ((code >> np.arange(N)) & 1).astype(bool)
        mass = pi[mask].sum()
        if mass > delta_max + 1e-15:
            continue
        lam = float(np.linalg.eigvalsh(S[np.ix_(mask, mask)])[0])
        lam_mod = _modified_value(L[np.ix_(mask, mask)], pi[mask]) if mass < 1 - 1e-12 else math.inf
        rows.append((mass, lam, lam_mod))
    return rows


def spectral_profile(P, pi, delta: float, cap: int = PROFILE_CAP, table=None) -> ProfilePoint:
    """Spectral profile and modified spectral profile at ``delta`` by exhaustive support search."""
    if delta >= 1:
        return ProfilePoint(delta, 0.0, None)
    rows = table if table is not None else spectral_profile_table(P, pi, delta, cap)
    admissible = [r for r in rows if r[0] <= delta + 1e-15]
    if not admissible:
        return ProfilePoint(delta, math.inf, math.inf)
    return ProfilePoint(delta, min(r[1] for r in admissible), min(r[2] for r in admissible))


def shortest_paths(P_target, pairs: Iterable[tuple[int, int]]) -> dict:
    """Deterministic BFS shortest paths on the positive-entry graph of ``P_target``.

    Neighbours are visited in increasing index order, so ties resolve to the
    lexicographically earliest discovery.
    """
    P = np.asarray(P_target)
    N = P.shape[0]
    nbrs = [np.flatnonzero((P[x] > 0) & (np.arange(N) != x)) for x in range(N)]
    by_source: dict[int, list[int]] = {}
    for x, y in pairs:
        by_source.setdefault(x, []).append(y)
    paths = {}
    for x, ys in by_source.items():
        parent = np.full(N, -1)
        parent[x] = x
        queue = deque([x])
        while queue:
            u = queue.popleft()
            for v in nbrs[u]:
                if parent[v] < 0:
                    parent[v] = u
                    queue.append(v)
        for y in ys:
            if parent[y] < 0:
                raise DegenerateModel(f"state {y} is unreachable from {x} in the target graph")
            path = [y]
            while path[-1] != x:
                path.append(int(parent[path[-1]]))
            paths[(x, y)] = path[::-1]
    return paths


@dataclass(frozen=True)
class ComparisonReport:
    congestion: float
    max_path_length: int
    max_load: int
    dirichlet_residual: float
    worst_ratio: float

    def to_doc(self) -> dict:
        return {
            "congestion": self.congestion,
            "max_path_length": self.max_path_length,
            "max_load": self.max_load,
            "dirichlet_residual": self.dirichlet_residual,
            "worst_ratio": self.worst_ratio,
        }


def _normalize_paths(paths) -> dict:
    if isinstance(paths, Mapping):
        items = list(paths.items())
    else:
        items = [((p[0], p[-1]), p) for p in paths]
    out = {}
    for key, path in items:
        key = (int(key[0]), int(key[1]))
        if key in out:
            raise ConfigError(f"duplicate path for pair {key}")
        path = [int(v) for v in path]
        if (path[0], path[-1]) != key:
            raise ConfigError(f"path {path} does not join {key}")
        out[key] = path
    return out


def congestion_ratio(P_target, P_source, pi, paths=None, pi_source=None, probes: int = 100,
                     rng: np.random.Generator | None = None) -> ComparisonReport:
    """Canonical-path congestion ``B`` bounding the source Dirichlet form by ``B`` times the target's.

    ``B = max_e (1/Q_t(e)) sum_{(x,y): e in path(x,y)} Q_s(x, y) |path(x,y)|``
    over directed target edges ``e``.  The inequality
    ``E_source(f) <= B E_target(f)`` is then checked on ``probes`` random
    functions.
    """
    P_t = np.asarray(P_target, dtype=float)
    P_s = np.asarray(P_source, dtype=float)
    pi = np.asarray(pi, dtype=float)
    pi_s = pi if pi_source is None else np.asarray(pi_source, dtype=float)
    Q_t, Q_s = edge_measure(P_t, pi), edge_measure(P_s, pi_s)
    N = P_t.shape[0]
    src_edges = [(x, y) for x, y in zip(*np.nonzero(Q_s > 0)) if x != y]
    src_edges = [(int(x), int(y)) for x, y in src_edges]
    if paths is None:
        paths = shortest_paths(P_t, src_edges)
    else:
        paths = _normalize_paths(paths)
        missing = [e for e in src_edges if e not in paths]
        if missing:
            raise ConfigError(f"no path supplied for source edges {missing[:5]}")
    load = np.zeros((N, N))
    count = np.zeros((N, N), dtype=np.int64)
    max_len = 0
    for (x, y) in src_edges:
        path = paths[(x, y)]
        length = len(path) - 1
        max_len = max(max_len, length)
        for u, v in zip(path, path[1:]):
            if Q_t[u, v] <= 0:
                raise ConfigError(f"path step {u}->{v} is not a target edge")
            load[u, v] += Q_s[x, y] * length
            count[u, v] += 1
    used = load > 0
    B = float((load[used] / Q_t[used]).max()) if used.any() else 0.0
    max_load = int(count.max()) if count.size else 0

    rng = rng or np.random.default_rng(0)
    worst = -math.inf
    worst_ratio = 0.0
    for _ in range(probes):
        f = rng.standard_normal(N)
        e_s, e_t = dirichlet_form(P_s, pi_s, f), dirichlet_form(P_t, pi, f)
        worst = max(worst, e_s - B * e_t)
        if e_t > 0:
            worst_ratio = max(worst_ratio, e_s / e_t)
    return ComparisonReport(B, max_len, max_load, max(0.0, worst), worst_ratio)


def stationary_from_kernel(P) -> np.ndarray:
    """Left fixed point of ``P`` by a dense solve with one equation replaced by normalization."""
    P = np.asarray(P, dtype=float)
    if not kernel_irreducible(P):
        raise DegenerateModel("kernel is reducible; stationary distribution is not unique")
    N = P.shape[0]
    A = P.T - np.eye(N)
    A[-1, :] = 1.0
    b = np.zeros(N)
    b[-1] = 1.0
    pi = np.linalg.solve(A, b)
    if stationarity_residual(P, pi) > 1e-12 * max(1.0, N / 100):
        pi = pi + np.linalg.solve(A, b - A @ pi)  # one refinement step
    return pi
