import itertools

import numpy as np
import pytest

from urnlab.errors import CapExceeded, ConfigError
from urnlab.exact import reversible_gap
from urnlab.kernels import (
    ChainSpec,
    additive_reversibilization,
    build_kernel,
    build_labeled_kernel,
    build_shuffle_kernel,
    collapse,
    detailed_balance_residual,
    edge_flow,
    forget_order_projection,
    induce,
    kernel_irreducible,
    labeled_to_balanced_projection,
    lumping_check,
    modify,
    read_kernel_csv,
    restrict,
    reversibility_check,
    stationarity_residual,
    write_kernel_csv,
)
from urnlab.perms import PermutationMeasure as PM
from urnlab.statespace import (
    CentreSpec,
    Margins,
    centre_mask,
    enumerate_labeled_states,
    enumerate_ordered_states,
    enumerate_states,
    stationary_table,
)


def loop_kernel(spec, space):
    """Ball-by-ball kernel: pick a ball slot in every urn, apply sigma, tally."""
    mg = space.margins
    P = np.zeros((len(space), len(space)))
    for k, x in enumerate(space.states):
        balls = [[c for c in range(mg.m) for _ in range(x[i, c])] for i in range(mg.d)]
        for picks in itertools.product(range(mg.urn_size), repeat=mg.d):
            p_pick = (1 / mg.urn_size) ** mg.d
            colours = [balls[i][picks[i]] for i in range(mg.d)]
            for perm, w in spec.mu.atoms:
                y = x.copy()
                for i, c in enumerate(colours):
                    y[i, c] -= 1
                    y[perm(i + 1) - 1, c] += 1
                P[k, space.index_of(y)] += w * p_pick
    return P


def spec_id(spec):
    return f"{spec.variant}-d{spec.margins.d}-m{spec.margins.m}-n{spec.n}"


def setup(spec):
    space = enumerate_states(spec.margins)
    return space, build_kernel(spec, space), stationary_table(space)


SPECS = [
    ChainSpec.generalised(2, 2, 1, PM.cyclic(2)),
    ChainSpec.generalised(2, 2, 3, PM.cyclic(2)),
    ChainSpec.generalised(3, 2, 1, PM.cyclic(3)),
    ChainSpec.generalised(3, 2, 2, PM.cyclic(3)),
    ChainSpec.generalised(2, 3, 2, PM.cyclic(2)),
    ChainSpec.mean_field(3, 2, 2),
    ChainSpec.mean_field(2, 2, 4),
    ChainSpec.balanced(3, 2, PM.cyclic(3)),
    ChainSpec.balanced(2, 4, PM.cyclic(2)),
    ChainSpec.generalised(3, 3, 1, PM.from_weights(3, [((2, 1, 3), 0.3), ((3, 1, 2), 0.7)])),
]


class TestChainSpec:
    def test_mean_field_requires_transpositions(self):
        with pytest.raises(ConfigError):
            ChainSpec(Margins.generalised(3, 2, 1), PM.cyclic(3), "mean_field")

    def test_balanced_requires_square_margins(self):
        with pytest.raises(ConfigError):
            ChainSpec(Margins.generalised(3, 2, 1), PM.cyclic(3), "balanced")

    def test_degree_mismatch(self):
        with pytest.raises(ConfigError):
            ChainSpec.generalised(3, 2, 1, PM.cyclic(2))


class TestBuild:
    def test_middle_row(self):
        spec = ChainSpec.generalised(2, 2, 1, PM.cyclic(2))
        space, P, _ = setup(spec)
        mid = space.index_of([[1, 1], [1, 1]])
        row = {tuple(space.states[k].ravel()): P[mid, k] for k in range(3)}
        assert row[(1, 1, 1, 1)] == pytest.approx(0.5)
        assert row[(2, 0, 0, 2)] == pytest.approx(0.25)
        assert row[(0, 2, 2, 0)] == pytest.approx(0.25)

    @pytest.mark.parametrize("spec", SPECS[:6] + SPECS[7:8] + SPECS[9:], ids=spec_id)
    def test_matches_loop_oracle(self, spec):
        space, P, _ = setup(spec)
        np.testing.assert_allclose(P, loop_kernel(spec, space), atol=1e-14)

    @pytest.mark.parametrize("spec", SPECS, ids=spec_id)
    def test_stochastic_and_stationary(self, spec):
        _, P, pi = setup(spec)
        np.testing.assert_allclose(P.sum(axis=1), 1, atol=1e-13)
        assert stationarity_residual(P, pi) < 1e-12

    def test_identity_measure_is_identity_kernel(self):
        spec = ChainSpec.generalised(3, 2, 1, PM.identity(3))
        _, P, _ = setup(spec)
        np.testing.assert_array_equal(P, np.eye(len(P)))
        assert not kernel_irreducible(P)

    def test_work_cap(self):
        spec = ChainSpec.generalised(3, 2, 2, PM.cyclic(3))
        space = enumerate_states(spec.margins)
        with pytest.raises(CapExceeded):
            build_kernel(spec, space, work_cap=10)

    def test_reversibility(self):
        _, P, pi = setup(ChainSpec.mean_field(3, 2, 2))
        assert reversibility_check(P, pi)
        _, P, pi = setup(ChainSpec.generalised(3, 2, 2, PM.cyclic(3)))
        assert not reversibility_check(P, pi)
        R = additive_reversibilization(P, pi)
        assert detailed_balance_residual(R, pi) < 1e-15
        assert stationarity_residual(R, pi) < 1e-12


def excursion_sum(P, A, terms=4000):
    """``P_AA + sum_k P_AC P_CC^k P_CA`` by truncated series."""
    C = ~A
    acc = P[np.ix_(A, A)].copy()
    left = P[np.ix_(A, C)]
    P_cc, P_ca = P[np.ix_(C, C)], P[np.ix_(C, A)]
    for _ in range(terms):
        acc += left @ P_ca
        left = left @ P_cc
        if np.abs(left).max() < 1e-17:
            break
    return acc


class TestTransforms:
    @pytest.fixture(params=[ChainSpec.generalised(3, 2, 2, PM.cyclic(3)), ChainSpec.mean_field(2, 2, 6)], ids=spec_id)
    def chain(self, request):
        return setup(request.param)

    def test_restrict(self, chain):
        space, P, pi = chain
        A = centre_mask(space, CentreSpec.centre(1))
        R = restrict(P, A)
        np.testing.assert_allclose(R.sum(axis=1), 1, atol=1e-13)
        np.testing.assert_allclose(R - np.diag(np.diag(R)), P[np.ix_(A, A)] - np.diag(np.diag(P[np.ix_(A, A)])))
        if reversibility_check(P, pi):
            assert detailed_balance_residual(R, pi[A] / pi[A].sum()) < 1e-12

    def test_induce_matches_excursion_series(self, chain):
        space, P, pi = chain
        A = centre_mask(space, CentreSpec.centre(1))
        I = induce(P, pi, A)
        np.testing.assert_allclose(I, excursion_sum(P, A), atol=1e-12)
        pi_A = pi[A] / pi[A].sum()
        assert stationarity_residual(I, pi_A) < 1e-12
        if reversibility_check(P, pi):
            assert detailed_balance_residual(I, pi_A) < 1e-12

    def test_collapse(self, chain):
        space, P, pi = chain
        A = centre_mask(space, CentreSpec.centre(1))
        R, pi_c = collapse(P, pi, ~A)
        np.testing.assert_allclose(R.sum(axis=1), 1, atol=1e-13)
        assert stationarity_residual(R, pi_c) < 1e-12
        assert pi_c[-1] == pytest.approx(pi[~A].sum())
        if reversibility_check(P, pi):
            assert reversible_gap(R, pi_c) >= reversible_gap(P, pi) - 1e-12

    def test_modify(self, chain):
        space, P, pi = chain
        M = centre_mask(space, CentreSpec.macro(0.5))
        Pm = modify(P, pi, M)
        pi_M = pi[M] / pi[M].sum()
        np.testing.assert_allclose(Pm.sum(axis=1), 1, atol=1e-13)
        assert stationarity_residual(Pm, pi_M) < 1e-12
        if reversibility_check(P, pi):
            assert detailed_balance_residual(Pm, pi_M) < 1e-12

    def test_modify_full_set_is_identity_map(self, chain):
        space, P, pi = chain
        Pm = modify(P, pi, centre_mask(space, CentreSpec.macro(1)))
        assert np.abs(Pm - P).max() < 1e-14

    def test_empty_sets(self, chain):
        _, P, pi = chain
        empty = np.zeros(len(P), dtype=bool)
        for fn in (lambda: restrict(P, empty), lambda: induce(P, pi, empty), lambda: modify(P, pi, empty),
                   lambda: collapse(P, pi, empty)):
            with pytest.raises(ConfigError):
                fn()

    def test_edge_flow_balance(self, chain):
        space, P, pi = chain
        A = centre_mask(space, CentreSpec.centre(1))
        # stationary flow out of A equals flow into A
        assert edge_flow(P, pi, A, ~A) == pytest.approx(edge_flow(P, pi, ~A, A), abs=1e-14)


class TestLumping:
    @pytest.mark.parametrize("d,n,mu", [(2, 2, PM.cyclic(2)), (3, 1, PM.cyclic(3)), (3, 2, PM.transpositions(3)),
                                        (2, 3, PM.cyclic(2))])
    def test_labeled_to_balanced(self, d, n, mu):
        lab = enumerate_labeled_states(d, n)
        bal = enumerate_states(Margins.balanced(d, n))
        P_lab = build_labeled_kernel(mu, lab)
        P_bal = build_kernel(ChainSpec.balanced(d, n, mu), bal)
        assert lumping_check(P_lab, labeled_to_balanced_projection(lab, bal), P_bal) < 1e-12

    @pytest.mark.parametrize("restricted", [False, True])
    @pytest.mark.parametrize("mu", [PM.cyclic(2), PM.from_weights(2, [((1, 2), 0.4), ((2, 1), 0.6)])],
                             ids=["swap", "lazy-swap"])
    def test_shuffle_to_labeled(self, mu, restricted):
        ordered = enumerate_ordered_states(2, 2)
        lab = enumerate_labeled_states(2, 2)
        P = build_shuffle_kernel(mu, ordered, restricted)
        np.testing.assert_allclose(P.sum(axis=1), 1, atol=1e-13)
        np.testing.assert_allclose(P.sum(axis=0), 1, atol=1e-13)  # uniform is stationary
        assert lumping_check(P, forget_order_projection(ordered, lab), build_labeled_kernel(mu, lab)) < 1e-12

    def test_shuffle_variants_coincide_for_swap(self):
        ordered = enumerate_ordered_states(2, 2)
        np.testing.assert_array_equal(build_shuffle_kernel(PM.cyclic(2), ordered, False),
                                      build_shuffle_kernel(PM.cyclic(2), ordered, True))

    def test_restricted_identity_frozen(self):
        ordered = enumerate_ordered_states(2, 2)
        np.testing.assert_array_equal(build_shuffle_kernel(PM.identity(2), ordered, True), np.eye(24))


def test_csv_roundtrip(tmp_path):
    _, P, _ = setup(ChainSpec.generalised(3, 2, 1, PM.cyclic(3)))
    path = tmp_path / "k.csv"
    write_kernel_csv(path, P)
    np.testing.assert_array_equal(read_kernel_csv(path, len(P)), P)
