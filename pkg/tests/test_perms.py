import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from urnlab.errors import CapExceeded, ConfigError, DegenerateModel
from urnlab.perms import (
    Permutation,
    PermutationMeasure,
    additive_symmetrization,
    cheeger_constant,
    heavy_spanning_tree,
    is_irreducible,
    is_symmetric_measure,
    measure_to_doc,
    parse_measure,
    poincare_gap,
    single_ball_matrix,
    single_ball_mixing_time,
    spectral_gap,
    spectral_report,
)


def brute_cheeger(U):
    """Plain-loop Cheeger constant with the uniform single-ball law."""
    U = np.asarray(U)
    d = U.shape[0]
    best = math.inf
    for size in range(1, d // 2 + 1):
        for A in itertools.combinations(range(d), size):
            out = sum(U[i, j] for i in A for j in range(d) if j not in A)
            best = min(best, out / size)
    return best


def brute_single_ball(mu):
    d = mu.d
    U = np.zeros((d, d))
    for perm, w in mu.atoms:
        for i in range(1, d + 1):
            U[i - 1, perm(i) - 1] += w
    return U


@st.composite
def measures(draw, dmin=2, dmax=6):
    d = draw(st.integers(dmin, dmax))
    seed = draw(st.integers(0, 2**32 - 1))
    k = draw(st.integers(1, 6))
    return PermutationMeasure.random(d, np.random.default_rng(seed), k)


class TestPermutation:
    def test_validation(self):
        with pytest.raises(ConfigError):
            Permutation((1, 1, 2))
        with pytest.raises(ConfigError):
            Permutation((0, 1))

    def test_cycle_and_inverse(self):
        c = Permutation.cycle(4)
        assert c.images == (2, 3, 4, 1)
        assert c.inverse().images == (4, 1, 2, 3)
        assert c(4) == 1

    def test_identity(self):
        assert Permutation.identity(3).images == (1, 2, 3)


class TestMeasure:
    def test_duplicates_merge_and_normalize(self):
        mu = PermutationMeasure.from_weights(2, [((2, 1), 1.0), ((2, 1), 1.0), ((1, 2), 2.0)])
        assert len(mu.atoms) == 2
        assert mu.weight_of(Permutation((2, 1))) == pytest.approx(0.5)

    def test_negative_weight_rejected(self):
        with pytest.raises(ConfigError):
            PermutationMeasure.from_weights(2, [((2, 1), -1.0)])

    def test_degree_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            PermutationMeasure.from_weights(3, [((2, 1), 1.0)])

    def test_doc_roundtrip(self):
        mu = PermutationMeasure.transpositions(4)
        assert parse_measure(measure_to_doc(mu)) == mu

    def test_doc_pairs_and_alias(self):
        mu = parse_measure({"d": 3, "atoms": [[[2, 3, 1], 1]]})
        assert mu == PermutationMeasure.cyclic(3)

    def test_unknown_keys(self):
        with pytest.raises(ConfigError):
            parse_measure({"d": 2, "support": [[[2, 1], 1]], "extra": 1})

    def test_symmetry(self):
        assert is_symmetric_measure(PermutationMeasure.transpositions(4))
        assert not is_symmetric_measure(PermutationMeasure.cyclic(3))
        assert is_symmetric_measure(PermutationMeasure.cyclic(2))


class TestSingleBall:
    @given(measures())
    @settings(max_examples=50, deadline=None)
    def test_matches_loop_oracle_and_doubly_stochastic(self, mu):
        U = np.asarray(single_ball_matrix(mu))
        np.testing.assert_allclose(U, brute_single_ball(mu), atol=1e-14)
        np.testing.assert_allclose(U.sum(axis=0), 1, atol=1e-12)
        np.testing.assert_allclose(U.sum(axis=1), 1, atol=1e-12)

    def test_dirac_swap(self):
        U = np.asarray(single_ball_matrix(PermutationMeasure.cyclic(2)))
        np.testing.assert_array_equal(U, [[0, 1], [1, 0]])

    def test_identity_reducible(self):
        U = single_ball_matrix(PermutationMeasure.identity(3))
        assert not is_irreducible(U)
        with pytest.raises(DegenerateModel):
            spectral_gap(U)


class TestSpectral:
    @pytest.mark.parametrize("d", [2, 3, 4, 5, 6, 8])
    def test_cyclic_gap_closed_form(self, d):
        U = single_ball_matrix(PermutationMeasure.cyclic(d))
        assert spectral_gap(U) == pytest.approx(2 * math.sin(math.pi / d) ** 2, abs=1e-12)

    @pytest.mark.parametrize("d", [2, 3, 4, 5, 6])
    def test_mean_field_gap_closed_form(self, d):
        U = single_ball_matrix(PermutationMeasure.transpositions(d))
        assert spectral_gap(U) == pytest.approx(2 / (d - 1), abs=1e-12)

    def test_cheeger_values(self):
        # enumeration over sets with nu(A) <= 1/2 only
        assert cheeger_constant(single_ball_matrix(PermutationMeasure.cyclic(3))) == pytest.approx(1.0)
        assert cheeger_constant(single_ball_matrix(PermutationMeasure.transpositions(3))) == pytest.approx(2 / 3)
        assert cheeger_constant(single_ball_matrix(PermutationMeasure.transpositions(4))) == pytest.approx(1 / 3)
        assert cheeger_constant(single_ball_matrix(PermutationMeasure.cyclic(4))) == pytest.approx(0.5)

    @given(measures(dmax=7))
    @settings(max_examples=60, deadline=None)
    def test_cheeger_matches_brute_force(self, mu):
        U = single_ball_matrix(mu)
        assert cheeger_constant(U) == pytest.approx(brute_cheeger(U), abs=1e-12)

    def test_cheeger_cap(self):
        with pytest.raises(CapExceeded):
            cheeger_constant(np.full((25, 25), 1 / 25))

    @given(measures())
    @settings(max_examples=60, deadline=None)
    def test_poincare_cheeger_bounds(self, mu):
        U = single_ball_matrix(mu)
        phi = cheeger_constant(U)
        if not is_irreducible(additive_symmetrization(U)):
            assert phi == 0
            return
        gp = poincare_gap(U)
        assert gp <= 2 * phi + 1e-12
        assert gp >= phi**2 / 2 - 1e-12

    @given(measures())
    @settings(max_examples=40, deadline=None)
    def test_cheeger_invariant_under_transpose_and_symmetrization(self, mu):
        U = single_ball_matrix(mu)
        phi = cheeger_constant(U)
        assert cheeger_constant(U.T) == pytest.approx(phi, abs=1e-12)
        assert cheeger_constant(additive_symmetrization(U)) == pytest.approx(phi, abs=1e-12)

    def test_poincare_of_cyclic3(self):
        assert poincare_gap(single_ball_matrix(PermutationMeasure.cyclic(3))) == pytest.approx(1.5)


class TestTree:
    def test_directed_three_cycle(self):
        U = single_ball_matrix(PermutationMeasure.cyclic(3))
        tree = heavy_spanning_tree(U)
        assert len(tree.edges) == 2
        assert min(tree.weights) >= 1 / 3

    @given(measures())
    @settings(max_examples=40, deadline=None)
    def test_weight_bound(self, mu):
        U = single_ball_matrix(mu)
        if not is_irreducible(U):
            return
        tree = heavy_spanning_tree(U)
        assert len(tree.edges) == mu.d - 1
        assert min(tree.weights) >= cheeger_constant(U) / mu.d - 1e-12
        # the edges connect all urns
        parent = list(range(mu.d))

        def find(a):
            while parent[a] != a:
                a = parent[a]
            return a

        for a, b in tree.edges:
            parent[find(a - 1)] = find(b - 1)
        assert len({find(i) for i in range(mu.d)}) == 1


class TestMixing:
    def test_swap_closed_form(self):
        # TV from a point mass is exp(-2t)/2 for the two-state swap
        U = single_ball_matrix(PermutationMeasure.cyclic(2))
        assert single_ball_mixing_time(U, 1.0, 0.25) == pytest.approx(math.log(2) / 2, rel=1e-5)

    def test_rate_scaling(self):
        U = single_ball_matrix(PermutationMeasure.cyclic(3))
        t1 = single_ball_mixing_time(U, 1.0, 0.1)
        assert single_ball_mixing_time(U, 4.0, 0.1) == pytest.approx(t1 / 4, rel=1e-5)


def test_report_doc():
    doc = spectral_report(PermutationMeasure.transpositions(5)).to_doc()
    assert doc["gap"] == pytest.approx(0.5)
    assert doc["irreducible"] and doc["symmetric_measure"]
