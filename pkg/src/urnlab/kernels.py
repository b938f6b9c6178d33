"""Exact transition matrices for the urn chains and the set-localizing transforms.

Kernels are dense ``numpy`` arrays indexed by the canonical order of the
corresponding state space.  Stationary tables are 1-d arrays in the same
order.  A "state subset" is either a boolean mask or an array of indices.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import CapExceeded, ConfigError, DegenerateModel
from .perms import PermutationMeasure
from .statespace import LabeledSpace, Margins, OrderedSpace, StateSpace

DEFAULT_WORK_CAP = 50_000_000
VARIANTS = ("generalised", "balanced", "labeled", "mean_field", "shuffle", "restricted_shuffle")

__all__ = [
    "ChainSpec",
    "build_kernel",
    "build_labeled_kernel",
    "build_shuffle_kernel",
    "restrict",
    "induce",
    "collapse",
    "modify",
    "additive_reversibilization",
    "reversibility_check",
    "detailed_balance_residual",
    "stationarity_residual",
    "kernel_irreducible",
    "lumping_check",
    "labeled_to_balanced_projection",
    "forget_order_projection",
    "edge_measure",
    "edge_flow",
    "write_kernel_csv",
    "read_kernel_csv",
]


@dataclass(frozen=True)
class ChainSpec:
    margins: Margins
    mu: PermutationMeasure
    variant: str = "generalised"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.mu.d != self.margins.d:
            raise ConfigError(f"measure acts on S_{self.mu.d} but there are {self.margins.d} urns")
        if self.variant == "mean_field" and self.mu != PermutationMeasure.transpositions(self.margins.d):
            raise ConfigError("mean_field variant requires the uniform transposition measure")
        if self.variant in ("balanced", "labeled", "shuffle", "restricted_shuffle"):
            if not (self.margins.m == self.margins.d and self.margins.urn_size == self.margins.colour_count):
                raise ConfigError(f"{self.variant} variant needs balanced margins (d = m, urn size = colour count)")

    @classmethod
    def generalised(cls, d: int, m: int, n: int, mu: PermutationMeasure) -> "ChainSpec":
        return cls(Margins.generalised(d, m, n), mu, "generalised")

    @classmethod
    def balanced(cls, d: int, n: int, mu: PermutationMeasure) -> "ChainSpec":
        return cls(Margins.balanced(d, n), mu, "balanced")

    @classmethod
    def mean_field(cls, d: int, m: int, n: int) -> "ChainSpec":
        return cls(Margins.generalised(d, m, n), PermutationMeasure.transpositions(d), "mean_field")

    @classmethod
    def labeled(cls, d: int, n: int, mu: PermutationMeasure) -> "ChainSpec":
        return cls(Margins.balanced(d, n), mu, "labeled")

    @classmethod
    def shuffle(cls, d: int, n: int, mu: PermutationMeasure, restricted: bool = False) -> "ChainSpec":
        return cls(Margins.balanced(d, n), mu, "restricted_shuffle" if restricted else "shuffle")

    @property
    def n(self) -> int:
        """Per-urn ``n``: urn size over ``m`` (generalised) or urn size (balanced family)."""
        if self.variant in ("generalised", "mean_field"):
            return self.margins.urn_size // self.margins.m
        return self.margins.urn_size


def _colour_moves(spec_margins: Margins, mu: PermutationMeasure):
    """Colour choices ``(m^d, d)`` and, per atom, the count deltas ``(k, m^d, d, m)``."""
    d, m = spec_margins.d, spec_margins.m
    choices = np.array(list(itertools.product(range(m), repeat=d)), dtype=np.int64)
    perms = mu.permutations
    deltas = np.zeros((len(perms), len(choices), d, m), dtype=np.int64)
    urns = np.arange(d)
    for s, sigma in enumerate(perms):
        for c, colours in enumerate(choices):
            np.add.at(deltas[s, c], (urns, colours), -1)
            np.add.at(deltas[s, c], (sigma, colours), 1)
    return choices, deltas


def build_kernel(spec: ChainSpec, space: StateSpace, work_cap: int = DEFAULT_WORK_CAP) -> np.ndarray:
    """Kernel of the count chain: one ball per urn, colours drawn by urn composition, moved by ``sigma``.

    Removals and additions happen simultaneously, so a cell may lose one ball
    and gain another in the same step.
    """
    if spec.margins != space.margins:
        raise ConfigError("state space margins differ from the chain's margins")
    if spec.variant in ("labeled", "shuffle", "restricted_shuffle"):
        raise ConfigError(f"use the dedicated builder for the {spec.variant} variant")
    d, m = space.margins.d, space.margins.m
    N = len(space)
    work = N * m**d * len(spec.mu.atoms)
    if work > work_cap:
        raise CapExceeded(f"kernel work estimate {work} exceeds cap {work_cap}")
    choices, deltas = _colour_moves(space.margins, spec.mu)
    urn_size = space.margins.urn_size
    P = np.zeros((N, N))
    urns = np.arange(d)
    for k, x in enumerate(space.states):
        w = np.prod(x[urns, choices] / urn_size, axis=1)  # (m^d,)
        live = w > 0
        for s, mass in enumerate(spec.mu.weights):
            ys = x[None] + deltas[s, live]
            np.add.at(P[k], space.indices_of(ys), mass * w[live])
    return P


def build_labeled_kernel(mu: PermutationMeasure, space: LabeledSpace) -> np.ndarray:
    """One labeled ball drawn uniformly from each urn, ball from urn ``i`` sent to urn ``sigma(i)``."""
    d, n = space.d, space.n
    if mu.d != d:
        raise ConfigError("measure degree does not match the number of urns")
    N = len(space)
    P = np.zeros((N, N))
    picks = list(itertools.product(range(n), repeat=d))
    p_pick = 1.0 / n**d
    for k, state in enumerate(space.states):
        for sigma, w in zip(mu.permutations, mu.weights):
            for pick in picks:
                moved = [state[i][pick[i]] for i in range(d)]
                urns = [list(state[i][:pick[i]] + state[i][pick[i] + 1:]) for i in range(d)]
                for i in range(d):
                    urns[sigma[i]].append(moved[i])
                target = tuple(tuple(sorted(u)) for u in urns)
                P[k, space.index[target]] += w * p_pick
    return P


def build_shuffle_kernel(mu: PermutationMeasure, space: OrderedSpace, restricted: bool = False) -> np.ndarray:
    """Multi-stack random-to-random shuffle.

    For each drawn stack ``i`` a uniform card is removed and inserted at a
    uniform position (``n`` slots, both ends included) of stack ``sigma(i)``;
    untouched cards keep their relative order.  The restricted variant draws
    only from stacks with ``sigma(i) != i``.
    """
    d, n = space.d, space.n
    N = len(space)
    P = np.zeros((N, N))
    for sigma, w in zip(mu.permutations, mu.weights):
        active = [i for i in range(d) if not restricted or sigma[i] != i]
        if not active:
            P[np.arange(N), np.arange(N)] += w
            continue
        k = len(active)
        p_move = w / n ** (2 * k)
        draws = list(itertools.product(range(n), repeat=k))
        for s, state in enumerate(space.states):
            for draw in draws:
                stacks = [list(st) for st in state]
                cards = {}
                for i, pos in zip(active, draw):
                    cards[sigma[i]] = stacks[i].pop(pos)
                for slots in draws:
                    new = [list(st) for st in stacks]
                    for tgt, slot in zip((sigma[i] for i in active), slots):
                        new[tgt].insert(slot, cards[tgt])
                    P[s, space.index[tuple(tuple(st) for st in new)]] += p_move
    return P


def _mask(A, N: int) -> np.ndarray:
    A = np.asarray(A)
    if A.dtype == bool:
        if A.shape != (N,):
            raise ConfigError(f"subset mask has shape {A.shape}, expected ({N},)")
        return A.copy()
    mask = np.zeros(N, dtype=bool)
    mask[A.astype(np.int64)] = True
    return mask


def restrict(P, A) -> np.ndarray:
    """Chain that stays put whenever ``P`` would leave ``A``."""
    P = np.asarray(P, dtype=float)
    mask = _mask(A, P.shape[0])
    if not mask.any():
        raise ConfigError("cannot restrict to an empty set")
    R = P[np.ix_(mask, mask)].copy()
    R[np.diag_indices_from(R)] += P[mask][:, ~mask].sum(axis=1)
    return R


def induce(P, pi, A) -> np.ndarray:
    """Chain watched only while inside ``A`` (first return after one jump).

    ``P_ind = P_AA + P_AC h`` with ``h`` the hitting distribution on ``A``
    from outside: ``(I - P_CC) h = P_CA``.
    """
    P = np.asarray(P, dtype=float)
    mask = _mask(A, P.shape[0])
    if not mask.any():
        raise ConfigError("cannot induce on an empty set")
    if mask.all():
        return P.copy()
    inside, outside = np.ix_(mask, mask), np.ix_(~mask, ~mask)
    P_cc = P[outside]
    P_ca = P[np.ix_(~mask, mask)]
    M = np.eye(P_cc.shape[0]) - P_cc
    try:
        h = np.linalg.solve(M, P_ca)
    except np.linalg.LinAlgError as exc:
        raise DegenerateModel("complement of the set traps the chain; induced chain undefined") from exc
    if np.abs(M @ h - P_ca).max() > 1e-10:
        raise DegenerateModel("hitting-distribution system is ill-conditioned")
    return P[inside] + P[np.ix_(mask, ~mask)] @ h


def collapse(P, pi, A):
    """Merge ``A`` into one state appended after the states of the complement.

    Returns ``(R, pi_collapsed)``; the collapsed state is the last index.
    """
    P = np.asarray(P, dtype=float)
    pi = np.asarray(pi, dtype=float)
    N = P.shape[0]
    mask = _mask(A, N)
    if not mask.any() or mask.all():
        raise ConfigError("collapsed set must be nonempty and proper")
    rest = ~mask
    k = int(rest.sum())
    pi_A = pi[mask] / pi[mask].sum()
    R = np.zeros((k + 1, k + 1))
    R[:k, :k] = P[np.ix_(rest, rest)]
    R[:k, k] = P[np.ix_(rest, mask)].sum(axis=1)
    R[k, :k] = pi_A @ P[np.ix_(mask, rest)]
    R[k, k] = pi_A @ P[np.ix_(mask, mask)].sum(axis=1)
    return R, np.append(pi[rest], pi[mask].sum())


def modify(P, pi, macro) -> np.ndarray:
    """Keep the chain inside ``macro``: exits jump to ``pi`` conditioned on ``macro``.

    With ``p`` the stationary one-step exit probability from ``macro``, all
    moves are damped by ``1/(p+1)`` and every state gains edges into the
    in-boundary of weight ``Q(macro^c, y) / ((p+1) pi(macro))``.
    """
    P = np.asarray(P, dtype=float)
    pi = np.asarray(pi, dtype=float)
    mask = _mask(macro, P.shape[0])
    if not mask.any():
        raise ConfigError("macro set is empty")
    pi_M = pi[mask].sum()
    cond = pi[mask] / pi_M
    exit_prob = P[np.ix_(mask, ~mask)].sum(axis=1)
    P_prime = P[np.ix_(mask, mask)] + np.outer(exit_prob, cond)
    p = float(cond @ exit_prob)
    inflow = (pi[~mask] @ P[np.ix_(~mask, mask)]) / pi_M
    return (P_prime + inflow[None, :]) / (p + 1.0)


def stationarity_residual(P, pi) -> float:
    pi = np.asarray(pi, dtype=float)
    return float(np.abs(pi @ np.asarray(P) - pi).sum())


def additive_reversibilization(P, pi) -> np.ndarray:
    """``(P + P~)/2`` with the time reversal ``P~(x, y) = pi(y) P(y, x) / pi(x)``."""
    P = np.asarray(P, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if (pi <= 0).any():
        raise ConfigError("stationary table must be strictly positive")
    if stationarity_residual(P, pi) > 1e-9:
        raise ConfigError("pi is not stationary for P")
    reversal = (P.T * pi[None, :]) / pi[:, None]
    return 0.5 * (P + reversal)


def detailed_balance_residual(P, pi) -> float:
    Q = edge_measure(P, pi)
    return float(np.abs(Q - Q.T).max())


def reversibility_check(P, pi, tol: float = 1e-12) -> bool:
    return detailed_balance_residual(P, pi) <= tol


def kernel_irreducible(P) -> bool:
    n_comp, _ = connected_components(np.asarray(P) > 0, directed=True, connection="strong")
    return n_comp == 1


def lumping_check(P_fine, projection, P_coarse) -> float:
    """Largest deviation between aggregated fine rows and the coarse kernel."""
    P_fine = np.asarray(P_fine, dtype=float)
    P_coarse = np.asarray(P_coarse, dtype=float)
    proj = np.asarray(projection, dtype=np.int64)
    n_coarse = P_coarse.shape[0]
    if proj.shape != (P_fine.shape[0],):
        raise ConfigError("projection must map every fine state")
    if set(np.unique(proj).tolist()) != set(range(n_coarse)):
        raise ConfigError("projection is not surjective onto the coarse states")
    indicator = np.zeros((P_fine.shape[0], n_coarse))
    indicator[np.arange(len(proj)), proj] = 1.0
    return float(np.abs(P_fine @ indicator - P_coarse[proj]).max())


def labeled_to_balanced_projection(labeled: LabeledSpace, balanced: StateSpace) -> np.ndarray:
    counts = np.stack([labeled.colour_counts(s) for s in labeled.states])
    return balanced.indices_of(counts)


def forget_order_projection(ordered: OrderedSpace, labeled: LabeledSpace) -> np.ndarray:
    return np.array([labeled.index[tuple(tuple(sorted(st)) for st in s)] for s in ordered.states])


def edge_measure(P, pi) -> np.ndarray:
    return np.asarray(pi, dtype=float)[:, None] * np.asarray(P, dtype=float)


def edge_flow(P, pi, A, B) -> float:
    Q = edge_measure(P, pi)
    N = Q.shape[0]
    return float(Q[np.ix_(_mask(A, N), _mask(B, N))].sum())


def write_kernel_csv(path, P, tol: float = 0.0) -> None:
    """Triple list ``row, col, prob`` over entries above ``tol``; probabilities in ``repr`` precision."""
    P = np.asarray(P)
    rows, cols = np.nonzero(P > tol)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "prob"])
        w.writerows((int(r), int(c), repr(float(P[r, c]))) for r, c in zip(rows, cols))


def read_kernel_csv(path, size: int | None = None) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        triples = [(int(r["row"]), int(r["col"]), float(r["prob"])) for r in reader]
    n = size if size is not None else 1 + max(max(r, c) for r, c, _ in triples)
    P = np.zeros((n, n))
    for r, c, p in triples:
        P[r, c] += p
    return P
