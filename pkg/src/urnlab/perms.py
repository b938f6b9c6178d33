"""Permutation measures on S_d and the single-ball chain they induce.

Permutations are written in 1-based one-line notation everywhere in the
public interface: ``Permutation((2, 3, 1))`` sends 1 -> 2, 2 -> 3, 3 -> 1.
Internally we index urns from 0.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import CapExceeded, ConfigError, DegenerateModel
from .heat import first_time_below

CHEEGER_MAX_D = 24

__all__ = [
    "Permutation",
    "PermutationMeasure",
    "SingleBallMatrix",
    "SpectralReport",
    "HeavyTree",
    "parse_measure",
    "measure_to_doc",
    "single_ball_matrix",
    "eigenvalues",
    "spectral_gap",
    "cheeger_constant",
    "additive_symmetrization",
    "poincare_gap",
    "is_irreducible",
    "is_symmetric_measure",
    "single_ball_mixing_time",
    "heavy_spanning_tree",
    "spectral_report",
]


@dataclass(frozen=True, order=True)
class Permutation:
    images: tuple[int, ...]

    def __post_init__(self):
        images = tuple(int(v) for v in self.images)
        object.__setattr__(self, "images", images)
        if sorted(images) != list(range(1, len(images) + 1)):
            raise ConfigError(f"not a permutation of 1..{len(images)}: {list(images)}")

    @property
    def degree(self) -> int:
        return len(self.images)

    @property
    def zero_based(self) -> np.ndarray:
        return np.asarray(self.images, dtype=np.int64) - 1

    def inverse(self) -> "Permutation":
        inv = [0] * self.degree
        for i, j in enumerate(self.images, start=1):
            inv[j - 1] = i
        return Permutation(tuple(inv))

    def __call__(self, i: int) -> int:
        return self.images[i - 1]

    @classmethod
    def identity(cls, d: int) -> "Permutation":
        return cls(tuple(range(1, d + 1)))

    @classmethod
    def cycle(cls, d: int, *elements: int) -> "Permutation":
        """The cycle ``(e1 e2 ... ek)`` in S_d; with no elements, ``(1 2 ... d)``."""
        elements = elements or tuple(range(1, d + 1))
        images = list(range(1, d + 1))
        for a, b in zip(elements, elements[1:] + elements[:1]):
            images[a - 1] = b
        return cls(tuple(images))


@dataclass(frozen=True)
class PermutationMeasure:
    """Normalized probability measure on S_d with merged atoms, sorted by permutation."""

    d: int
    atoms: tuple[tuple[Permutation, float], ...]

    def __post_init__(self):
        if self.d < 2:
            raise ConfigError(f"degree must be at least 2, got {self.d}")
        merged: dict[Permutation, float] = {}
        for perm, weight in self.atoms:
            if not isinstance(perm, Permutation):
                perm = Permutation(tuple(perm))
            if perm.degree != self.d:
                raise ConfigError(f"permutation {list(perm.images)} has degree {perm.degree}, expected {self.d}")
            weight = float(weight)
            if not math.isfinite(weight) or weight < 0:
                raise ConfigError(f"weights must be finite and nonnegative, got {weight}")
            merged[perm] = merged.get(perm, 0.0) + weight
        total = math.fsum(merged.values())
        if total <= 0:
            raise ConfigError("measure has no positive weight")
        if abs(total - 1.0) <= 1e-14:
            total = 1.0  # already normalized; keeps document round trips exact
        atoms = tuple((p, w / total) for p, w in sorted(merged.items()) if w > 0)
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def from_weights(cls, d: int, weights: Mapping | Iterable) -> "PermutationMeasure":
        items = weights.items() if isinstance(weights, Mapping) else weights
        return cls(d, tuple((Permutation(tuple(p)), w) for p, w in items))

    @classmethod
    def dirac(cls, perm: Sequence[int] | Permutation) -> "PermutationMeasure":
        perm = perm if isinstance(perm, Permutation) else Permutation(tuple(perm))
        return cls(perm.degree, ((perm, 1.0),))

    @classmethod
    def identity(cls, d: int) -> "PermutationMeasure":
        return cls.dirac(Permutation.identity(d))

    @classmethod
    def cyclic(cls, d: int) -> "PermutationMeasure":
        """Dirac mass on the d-cycle ``(1 2 ... d)``."""
        return cls.dirac(Permutation.cycle(d))

    @classmethod
    def transpositions(cls, d: int) -> "PermutationMeasure":
        """Uniform measure on the transpositions of S_d (the mean-field chain)."""
        atoms = tuple((Permutation.cycle(d, i, j), 1.0)
                      for i, j in itertools.combinations(range(1, d + 1), 2))
        return cls(d, atoms)

    @classmethod
    def random(cls, d: int, rng: np.random.Generator, n_atoms: int | None = None) -> "PermutationMeasure":
        """Random measure on ``n_atoms`` random permutations (for property tests)."""
        n_atoms = n_atoms or int(rng.integers(1, 5))
        atoms = tuple((Permutation(tuple(rng.permutation(d) + 1)), float(rng.uniform(0.05, 1.0)))
                      for _ in range(n_atoms))
        return cls(d, atoms)

    @property
    def permutations(self) -> np.ndarray:
        """``(k, d)`` array of 0-based images, one row per atom."""
        return np.array([p.zero_based for p, _ in self.atoms], dtype=np.int64)

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.atoms])

    def weight_of(self, perm: Permutation) -> float:
        for p, w in self.atoms:
            if p == perm:
                return w
        return 0.0


def parse_measure(doc: Mapping) -> PermutationMeasure:
    """Build a measure from a document ``{"d": int, "support": [{"perm": [...], "weight": w}, ...]}``.

    ``atoms`` is accepted as an alias of ``support``, and entries may also be
    ``[perm, weight]`` pairs.  Weights are normalized to sum to one.
    """
    if not isinstance(doc, Mapping):
        raise ConfigError("measure document must be a mapping")
    unknown = set(doc) - {"d", "support", "atoms"}
    if unknown:
        raise ConfigError(f"unknown measure keys: {sorted(unknown)}")
    if "d" not in doc:
        raise ConfigError("measure document must declare d")
    d = doc["d"]
    if isinstance(d, bool) or not isinstance(d, int):
        raise ConfigError(f"d must be an integer, got {d!r}")
    entries = doc.get("support", doc.get("atoms"))
    if not entries:
        raise ConfigError("measure document needs a nonempty support list")
    atoms = []
    for entry in entries:
        if isinstance(entry, Mapping):
            extra = set(entry) - {"perm", "weight"}
            if extra or "perm" not in entry:
                raise ConfigError(f"bad support entry {dict(entry)!r}")
            perm, weight = entry["perm"], entry.get("weight", 1.0)
        else:
            perm, weight = entry
        if isinstance(weight, bool) or not isinstance(weight, (int, float)):
            raise ConfigError(f"weight must be a number, got {weight!r}")
        atoms.append((Permutation(tuple(perm)), weight))
    return PermutationMeasure(d, tuple(atoms))


def measure_to_doc(mu: PermutationMeasure) -> dict:
    return {"d": mu.d, "support": [{"perm": list(p.images), "weight": w} for p, w in mu.atoms]}


@dataclass(frozen=True)
class SingleBallMatrix:
    """Doubly stochastic ``d x d`` matrix ``U(i, j) = P(sigma(i) = j)``."""

    entries: np.ndarray

    def __post_init__(self):
        U = np.array(self.entries, dtype=float)
        if U.ndim != 2 or U.shape[0] != U.shape[1]:
            raise ConfigError(f"single-ball matrix must be square, got shape {U.shape}")
        if (U < 0).any():
            raise ConfigError("single-ball matrix has negative entries")
        if not (np.allclose(U.sum(axis=1), 1, atol=1e-12, rtol=0)
                and np.allclose(U.sum(axis=0), 1, atol=1e-12, rtol=0)):
            raise ConfigError("single-ball matrix must be doubly stochastic")
        U.setflags(write=False)
        object.__setattr__(self, "entries", U)

    @property
    def d(self) -> int:
        return self.entries.shape[0]

    @property
    def T(self) -> "SingleBallMatrix":
        return SingleBallMatrix(self.entries.T)

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)


def _entries(U) -> np.ndarray:
    return U.entries if isinstance(U, SingleBallMatrix) else np.asarray(U, dtype=float)


def single_ball_matrix(mu: PermutationMeasure) -> SingleBallMatrix:
    U = np.zeros((mu.d, mu.d))
    rows = np.arange(mu.d)
    for perm, w in mu.atoms:
        U[rows, perm.zero_based] += w
    return SingleBallMatrix(U)


def is_irreducible(U) -> bool:
    """Strong connectivity of the digraph of positive entries."""
    A = _entries(U) > 0
    n_comp, _ = connected_components(A, directed=True, connection="strong")
    return n_comp == 1


def is_symmetric_measure(mu: PermutationMeasure, tol: float = 1e-12) -> bool:
    return all(abs(w - mu.weight_of(p.inverse())) <= tol for p, w in mu.atoms)


def eigenvalues(U) -> np.ndarray:
    """All eigenvalues, sorted by decreasing real part."""
    lam = np.linalg.eigvals(_entries(U))
    return lam[np.lexsort((-lam.imag, -lam.real))]


def spectral_gap(U) -> float:
    """``min(1 - Re(lambda))`` over eigenvalues with a non-constant eigenvector.

    Exactly one eigenvalue-1 occurrence, the one whose eigenvector is the
    constant vector, is discarded.
    """
    M = _entries(U)
    if not is_irreducible(M):
        raise DegenerateModel("single-ball matrix is reducible; its spectral gap is 0")
    lam, vecs = np.linalg.eig(M)
    d = M.shape[0]
    ones = np.ones(d) / math.sqrt(d)
    # angle between each eigenvector and the constant direction
    cosines = np.abs(ones @ vecs) / np.linalg.norm(vecs, axis=0)
    near_one = np.abs(lam - 1) <= 1e-9
    candidates = np.flatnonzero(near_one & (cosines >= 1 - 1e-6))
    if candidates.size:
        drop = candidates[np.argmax(cosines[candidates])]
    else:
        drop = int(np.argmin(np.abs(lam - 1)))
    keep = np.delete(np.arange(d), drop)
    return float(np.min(1.0 - lam[keep].real))


def _subset_masks(d: int, start: int, stop: int) -> np.ndarray:
    codes = np.arange(start, stop, dtype=np.int64)
    return ((codes[:, None] >> np.arange(d)) & 1).astype(float)


def cheeger_constant(U) -> float:
    """Exact Cheeger constant under the uniform measure, by subset enumeration.

    For ``|A| <= d/2`` the ratio is ``(|A| - 1_A^T U 1_A) / |A|``, using that
    rows of ``U`` sum to one.
    """
    M = _entries(U)
    d = M.shape[0]
    if d > CHEEGER_MAX_D:
        raise CapExceeded(f"Cheeger enumeration supports d <= {CHEEGER_MAX_D}, got {d}")
    best = math.inf
    chunk = 1 << 16
    for start in range(1, 1 << d, chunk):
        masks = _subset_masks(d, start, min(start + chunk, 1 << d))
        size = masks.sum(axis=1)
        ok = 2 * size <= d
        if not ok.any():
            continue
        masks, size = masks[ok], size[ok]
        inside = np.einsum("ki,ij,kj->k", masks, M, masks)
        best = min(best, float(np.min((size - inside) / size)))
    return best


def additive_symmetrization(U) -> SingleBallMatrix:
    M = _entries(U)
    return SingleBallMatrix(0.5 * (M + M.T))


def poincare_gap(U) -> float:
    """Spectral gap of the additive symmetrization ``(U + U^T) / 2``."""
    S = additive_symmetrization(U).entries
    if not is_irreducible(S):
        raise DegenerateModel("additive symmetrization is reducible")
    lam = np.sort(np.linalg.eigvalsh(S))[::-1]
    return float(1.0 - lam[1])


def single_ball_mixing_time(U, rate: float, eps: float, rel_tol: float = 1e-6) -> float:
    """Total-variation ``eps``-mixing time of the single-ball chain run at ``rate``."""
    M = _entries(U)
    if not is_irreducible(M):
        raise DegenerateModel("single-ball matrix is reducible")
    if rate <= 0 or not 0 < eps < 1:
        raise ConfigError("need rate > 0 and eps in (0, 1)")
    d = M.shape[0]

    def worst_tv(H):
        return 0.5 * np.abs(H - 1.0 / d).sum(axis=1).max()

    return first_time_below(M, worst_tv, eps, rel_tol) / rate


@dataclass(frozen=True)
class HeavyTree:
    edges: tuple[tuple[int, int], ...]  # 1-based, each pair sorted
    weights: tuple[float, ...]
    cheeger: float

    @property
    def min_weight(self) -> float:
        return min(self.weights) if self.weights else math.inf


def heavy_spanning_tree(U) -> HeavyTree:
    """Grow a spanning tree whose edges all carry ``U``-weight at least ``Phi*/d``.

    Starting from urn 1, each step adds the heaviest entry ``U(i, j)`` crossing
    between the tree and the rest, in either direction.  Ties prefer edges
    leaving the tree, then the lexicographically smallest pair.
    """
    M = _entries(U)
    d = M.shape[0]
    if not is_irreducible(M):
        raise DegenerateModel("single-ball matrix is reducible")
    phi = cheeger_constant(M)
    in_tree = [0]
    edges, weights = [], []
    while len(in_tree) < d:
        outside = [j for j in range(d) if j not in in_tree]
        best = None
        for i in in_tree:
            for j in outside:
                for w, outgoing in ((M[i, j], 1), (M[j, i], 0)):
                    key = (w, outgoing, -min(i, j), -max(i, j))
                    if best is None or key > best[0]:
                        best = (key, i, j)
        (w, _, _, _), i, j = best
        if w < phi / d - 1e-12:
            raise AssertionError(f"no crossing edge of weight >= Phi*/d = {phi / d}")
        in_tree.append(j)
        edges.append(tuple(sorted((i + 1, j + 1))))
        weights.append(float(w))
    return HeavyTree(tuple(edges), tuple(weights), phi)


@dataclass(frozen=True)
class SpectralReport:
    d: int
    eigenvalues: tuple[complex, ...]
    gap: float | None
    poincare_gap: float | None
    cheeger: float
    irreducible: bool
    symmetric_measure: bool
    tree: HeavyTree | None

    def to_doc(self) -> dict:
        return {
            "d": self.d,
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "gap": self.gap,
            "poincare_gap": self.poincare_gap,
            "cheeger": self.cheeger,
            "irreducible": self.irreducible,
            "symmetric_measure": self.symmetric_measure,
            "heavy_tree": None if self.tree is None else {
                "edges": [list(e) for e in self.tree.edges],
                "weights": list(self.tree.weights),
            },
        }


def spectral_report(mu: PermutationMeasure) -> SpectralReport:
    U = single_ball_matrix(mu)
    irreducible = is_irreducible(U)
    return SpectralReport(
        d=mu.d,
        eigenvalues=tuple(complex(z) for z in eigenvalues(U)),
        gap=spectral_gap(U) if irreducible else None,
        poincare_gap=poincare_gap(U) if is_irreducible(additive_symmetrization(U)) else None,
        cheeger=cheeger_constant(U),
        irreducible=irreducible,
        symmetric_measure=is_symmetric_measure(mu),
        tree=heavy_spanning_tree(U) if irreducible else None,
    )
