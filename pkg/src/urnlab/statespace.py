"""Configuration spaces with fixed urn and colour margins.

A configuration is a ``d x m`` count matrix ``x`` where ``x[i, j]`` is the
number of balls of colour ``j`` in urn ``i``.  Every row sums to
``urn_size`` and every column to ``colour_count``.  The generalised model
uses ``urn_size = m n`` and ``colour_count = d n``; the balanced model uses
``n`` for both.

States are enumerated in lexicographic order of the free coordinates
``x[i, j]`` for ``i < d - 1, j < m - 1`` (row-major).  That order is the
canonical order for every kernel and every CSV file.
"""

from __future__ import annotations

import csv
import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator

import numpy as np
from scipy.special import gammaln

from .errors import CapExceeded, ConfigError

DEFAULT_CAP = 2_000_000

__all__ = [
    "Margins",
    "Configuration",
    "StateSpace",
    "CentreSpec",
    "LabeledSpace",
    "OrderedSpace",
    "enumerate_states",
    "stationary_probability",
    "stationary_table",
    "in_centre",
    "centre_mask",
    "centre_mass",
    "l1_distance",
    "enumerate_labeled_states",
    "enumerate_ordered_states",
    "mean_field_graph_distances",
]


@dataclass(frozen=True)
class Margins:
    d: int
    m: int
    urn_size: int
    colour_count: int

    def __post_init__(self):
        for name in ("d", "m", "urn_size", "colour_count"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.d * self.urn_size != self.m * self.colour_count:
            raise ConfigError(
                f"infeasible margins: {self.d} urns x {self.urn_size} != {self.m} colours x {self.colour_count}"
            )

    @classmethod
    def generalised(cls, d: int, m: int, n: int) -> "Margins":
        return cls(d, m, m * n, d * n)

    @classmethod
    def balanced(cls, d: int, n: int) -> "Margins":
        return cls(d, d, n, n)

    @property
    def total(self) -> int:
        return self.d * self.urn_size

    @property
    def target(self) -> float:
        """Expected count per cell under stationarity; equals ``n`` for the generalised model."""
        return self.urn_size * self.colour_count / self.total

    @property
    def free_dim(self) -> int:
        return (self.d - 1) * (self.m - 1)

    def check(self, counts) -> np.ndarray:
        x = np.asarray(counts, dtype=np.int64)
        if x.shape != (self.d, self.m):
            raise ConfigError(f"configuration shape {x.shape} does not match ({self.d}, {self.m})")
        if (x < 0).any() or (x.sum(axis=1) != self.urn_size).any() or (x.sum(axis=0) != self.colour_count).any():
            raise ConfigError(f"configuration violates margins {self}: {x.tolist()}")
        return x

    def to_doc(self) -> dict:
        return {"d": self.d, "m": self.m, "urn_size": self.urn_size, "colour_count": self.colour_count}


@dataclass(frozen=True)
class Configuration:
    counts: tuple[tuple[int, ...], ...]

    @classmethod
    def of(cls, counts) -> "Configuration":
        return cls(tuple(tuple(int(v) for v in row) for row in np.asarray(counts)))

    @property
    def array(self) -> np.ndarray:
        return np.array(self.counts, dtype=np.int64)

    def flat(self) -> list[int]:
        """Row-major serialization."""
        return [v for row in self.counts for v in row]


def _row_compositions(total: int, caps: np.ndarray) -> Iterator[tuple[int, ...]]:
    """Compositions of ``total`` into ``len(caps)`` parts bounded by ``caps``, lexicographic."""
    m = len(caps)
    if m == 1:
        if total <= caps[0]:
            yield (total,)
        return
    rest_cap = int(caps[1:].sum())
    for v in range(max(0, total - rest_cap), min(int(caps[0]), total) + 1):
        for tail in _row_compositions(total - v, caps[1:]):
            yield (v,) + tail


@dataclass(frozen=True, eq=False)
class StateSpace:
    margins: Margins
    states: np.ndarray  # (N, d, m), canonical order

    def __len__(self) -> int:
        return self.states.shape[0]

    def __getitem__(self, k: int) -> Configuration:
        return Configuration.of(self.states[k])

    def __iter__(self):
        return (Configuration.of(s) for s in self.states)

    @cached_property
    def _radix(self) -> int:
        return max(self.margins.urn_size, self.margins.colour_count) + 1

    def keys(self, arrays: np.ndarray) -> np.ndarray:
        """Integer keys of count arrays; increasing keys follow the canonical order."""
        arrays = np.asarray(arrays, dtype=np.int64)
        free = arrays[..., : self.margins.d - 1, : self.margins.m - 1].reshape(*arrays.shape[:-2], -1)
        key = np.zeros(free.shape[:-1], dtype=np.int64)
        for k in range(free.shape[-1]):
            key = key * self._radix + free[..., k]
        return key

    @cached_property
    def _sorted_keys(self) -> np.ndarray:
        return self.keys(self.states)

    def index_of(self, x) -> int:
        counts = x.array if isinstance(x, Configuration) else np.asarray(x)
        self.margins.check(counts)
        return int(self.indices_of(counts[None])[0])

    def indices_of(self, arrays: np.ndarray) -> np.ndarray:
        keys = self.keys(arrays)
        idx = np.searchsorted(self._sorted_keys, keys)
        idx = np.minimum(idx, len(self) - 1)
        if (self._sorted_keys[idx] != keys).any():
            raise KeyError("configuration not in state space")
        return idx

    def write_csv(self, path, pi=None) -> None:
        """Manifest with columns ``index, x_1_1 .. x_d_m [, pi]``."""
        d, m = self.margins.d, self.margins.m
        header = ["index"] + [f"x_{i + 1}_{j + 1}" for i in range(d) for j in range(m)]
        if pi is not None:
            header.append("pi")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k, s in enumerate(self.states):
                row = [k, *s.ravel().tolist()]
                if pi is not None:
                    row.append(repr(float(pi[k])))
                w.writerow(row)


def enumerate_states(margins: Margins, cap: int = DEFAULT_CAP) -> StateSpace:
    """All count matrices with the given margins, in canonical order."""
    d, m = margins.d, margins.m
    out: list[np.ndarray] = []

    def rec(prefix: list[tuple[int, ...]], remaining: np.ndarray):
        if len(prefix) == d - 1:
            x = np.array(prefix + [tuple(remaining.tolist())], dtype=np.int64)
            out.append(x)
            if len(out) > cap:
                raise CapExceeded(f"state space for {margins} exceeds cap {cap}")
            return
        for row in _row_compositions(margins.urn_size, remaining):
            rec(prefix + [row], remaining - np.asarray(row))

    rec([], np.full(m, margins.colour_count, dtype=np.int64))
    if not out:
        raise ConfigError(f"no configurations satisfy {margins}")
    return StateSpace(margins, np.stack(out))


def _log_multinomial(n: int, parts: np.ndarray) -> np.ndarray:
    return gammaln(n + 1) - gammaln(np.asarray(parts, dtype=float) + 1).sum(axis=-2)


def stationary_probability(x, margins: Margins) -> float:
    """Product of per-colour multinomials over the multinomial of urn sizes, in log space."""
    counts = margins.check(x.array if isinstance(x, Configuration) else x)
    return float(stationary_table_from_arrays(counts[None], margins)[0])


def stationary_table_from_arrays(arrays: np.ndarray, margins: Margins) -> np.ndarray:
    arrays = np.asarray(arrays)
    log_num = _log_multinomial(margins.colour_count, arrays).sum(axis=-1)
    log_den = gammaln(margins.total + 1) - margins.d * gammaln(margins.urn_size + 1)
    return np.exp(log_num - log_den)


def stationary_table(space: StateSpace) -> np.ndarray:
    return stationary_table_from_arrays(space.states, space.margins)


@dataclass(frozen=True)
class CentreSpec:
    """Centre-type set ``{x : x[i, j] >= target - L_eff for all cells}``.

    ``kind`` is ``"meso"`` (``L_eff = value``), ``"centre"``
    (``L_eff = value * sqrt(target)``) or ``"macro"`` (``L_eff = value * target``).
    """

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in ("meso", "centre", "macro"):
            raise ConfigError(f"unknown centre kind {self.kind!r}")
        if not math.isfinite(self.value) or self.value < 0:
            raise ConfigError(f"centre parameter must be nonnegative, got {self.value}")
        if self.kind == "macro" and not 0 < self.value <= 1:
            raise ConfigError(f"macro delta must lie in (0, 1], got {self.value}")

    @classmethod
    def meso(cls, L: float) -> "CentreSpec":
        return cls("meso", float(L))

    @classmethod
    def centre(cls, C: float) -> "CentreSpec":
        return cls("centre", float(C))

    @classmethod
    def macro(cls, delta: float) -> "CentreSpec":
        return cls("macro", float(delta))

    def threshold(self, margins: Margins) -> float:
        target = margins.target
        if self.kind == "meso":
            return self.value
        if self.kind == "centre":
            return self.value * math.sqrt(target)
        return self.value * target

    def lower_bound(self, margins: Margins) -> float:
        """Smallest admissible cell count (as a real number)."""
        return margins.target - self.threshold(margins)

    def to_doc(self) -> dict:
        return {"kind": self.kind, "value": self.value}


_CENTRE_SLACK = 1e-9


def in_centre(x, spec: CentreSpec, margins: Margins) -> bool:
    counts = x.array if isinstance(x, Configuration) else np.asarray(x)
    return bool((counts >= spec.lower_bound(margins) - _CENTRE_SLACK).all())


def centre_mask(space: StateSpace, spec: CentreSpec) -> np.ndarray:
    lb = spec.lower_bound(space.margins) - _CENTRE_SLACK
    return (space.states >= lb).all(axis=(1, 2))


def centre_mass(space: StateSpace, pi: np.ndarray, spec: CentreSpec) -> float:
    return float(np.asarray(pi)[centre_mask(space, spec)].sum())


def l1_distance(x, y) -> int:
    a = x.array if isinstance(x, Configuration) else np.asarray(x)
    b = y.array if isinstance(y, Configuration) else np.asarray(y)
    if a.shape != b.shape or (a.sum(axis=1) != b.sum(axis=1)).any() or (a.sum(axis=0) != b.sum(axis=0)).any():
        raise ConfigError("configurations have different margins")
    return int(np.abs(a - b).sum())


@dataclass(frozen=True, eq=False)
class LabeledSpace:
    """Partitions of balls ``0..dn-1`` into ``d`` urns of ``n``; each urn a sorted tuple.

    Ball ``b`` has colour ``b // n`` when the labeled chain is projected to the
    balanced one.
    """

    d: int
    n: int
    states: tuple[tuple[tuple[int, ...], ...], ...]

    def __len__(self) -> int:
        return len(self.states)

    @cached_property
    def index(self) -> dict:
        return {s: k for k, s in enumerate(self.states)}

    def colour_counts(self, state) -> np.ndarray:
        x = np.zeros((self.d, self.d), dtype=np.int64)
        for i, urn in enumerate(state):
            for b in urn:
                x[i, b // self.n] += 1
        return x


def _partitions(balls: tuple[int, ...], d: int, n: int):
    if d == 1:
        yield (balls,)
        return
    for first in itertools.combinations(balls, n):
        chosen = set(first)
        rest = tuple(b for b in balls if b not in chosen)
        for tail in _partitions(rest, d - 1, n):
            yield (first,) + tail


def enumerate_labeled_states(d: int, n: int, cap: int = DEFAULT_CAP) -> LabeledSpace:
    count = math.factorial(d * n) // math.factorial(n) ** d
    if count > cap:
        raise CapExceeded(f"labeled space has {count} states, cap is {cap}")
    return LabeledSpace(d, n, tuple(_partitions(tuple(range(d * n)), d, n)))


@dataclass(frozen=True, eq=False)
class OrderedSpace:
    """Decks of ``dn`` cards split into ``d`` ordered stacks of ``n`` (top of stack first)."""

    d: int
    n: int
    states: tuple[tuple[tuple[int, ...], ...], ...]

    def __len__(self) -> int:
        return len(self.states)

    @cached_property
    def index(self) -> dict:
        return {s: k for k, s in enumerate(self.states)}


def enumerate_ordered_states(d: int, n: int, cap: int = 40_000) -> OrderedSpace:
    count = math.factorial(d * n)
    if count > cap:
        raise CapExceeded(f"ordered space has {count} states, cap is {cap}")
    states = tuple(tuple(perm[i * n:(i + 1) * n] for i in range(d))
                   for perm in itertools.permutations(range(d * n)))
    return OrderedSpace(d, n, states)


def mean_field_graph_distances(space: StateSpace, source: int, allowed: np.ndarray | None = None) -> np.ndarray:
    """BFS distances from ``source`` in the mean-field transition graph.

    Neighbours swap one ball between two urns.  ``allowed`` restricts the graph
    to a subset of states; unreachable states get ``-1``.
    """
    d, m = space.margins.d, space.margins.m
    moves = []
    for i1, i2 in itertools.combinations(range(d), 2):
        for c1 in range(m):
            for c2 in range(m):
                if c1 == c2:
                    continue
                delta = np.zeros((d, m), dtype=np.int64)
                delta[i1, c1] -= 1
                delta[i2, c1] += 1
                delta[i2, c2] -= 1
                delta[i1, c2] += 1
                moves.append(delta)
    moves = np.stack(moves)
    N = len(space)
    dist = np.full(N, -1, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    while queue:
        k = queue.popleft()
        nb = space.states[k][None] + moves
        nb = nb[(nb >= 0).all(axis=(1, 2))]
        for j in space.indices_of(nb):
            if dist[j] < 0 and (allowed is None or allowed[j]):
                dist[j] = dist[k] + 1
                queue.append(j)
    return dist
