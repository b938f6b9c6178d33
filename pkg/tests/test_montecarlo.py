import math
from collections import Counter

import numpy as np
import pytest
from scipy import linalg

from urnlab.errors import ConfigError, StepBudgetExceeded
from urnlab.exact import heat_kernel_row
from urnlab.kernels import ChainSpec, build_kernel, build_labeled_kernel
from urnlab.montecarlo import (
    SimState,
    adversarial_start,
    biased_walk_exit,
    hitting_time_centre,
    occupation_fraction,
    replicate_rng,
    simulate_counts,
    simulate_shuffle,
    step,
    variance_probe,
)
from urnlab.perms import PermutationMeasure as PM
from urnlab.statespace import CentreSpec, Margins, centre_mask, centre_mass, enumerate_labeled_states, \
    enumerate_states, stationary_table


def within(observed, expected, sigma, k=3.0):
    return abs(observed - expected) <= k * sigma + 1e-12


class TestStep:
    def test_frequencies_match_kernel_row(self):
        spec = ChainSpec.generalised(3, 2, 1, PM.cyclic(3))
        space = enumerate_states(spec.margins)
        P = build_kernel(spec, space)
        x0 = np.array([[2, 0], [1, 1], [0, 2]])
        row = P[space.index_of(x0)]
        rng = replicate_rng(7, 0)
        steps = 20_000
        hits = Counter(space.index_of(step(SimState.start(x0), spec.mu, rng).counts) for _ in range(steps))
        assert set(hits) <= set(np.flatnonzero(row > 0))
        for k, p in enumerate(row):
            assert within(hits[k] / steps, p, math.sqrt(p * (1 - p) / steps))

    def test_clock_and_jumps(self):
        rng = replicate_rng(1, 0)
        s = SimState.start([[1, 1], [1, 1]])
        for _ in range(5):
            s = step(s, PM.cyclic(2), rng)
        assert s.jumps == 5 and s.clock > 0

    def test_margins_conserved(self):
        spec = ChainSpec.generalised(3, 3, 4, PM.from_weights(3, [((2, 3, 1), 0.5), ((2, 1, 3), 0.5)]))
        counts, jumps = simulate_counts(spec, adversarial_start(spec.margins), 300.0, 50, seed=3)
        assert (jumps > 0).all()
        for x in counts:
            spec.margins.check(x)
            assert (x >= 0).all()


class TestAdversarialStart:
    def test_square(self):
        np.testing.assert_array_equal(adversarial_start(Margins.generalised(2, 2, 2)).array, [[4, 0], [0, 4]])

    def test_rectangular(self):
        np.testing.assert_array_equal(adversarial_start(Margins.generalised(3, 2, 1)).array,
                                      [[2, 0], [1, 1], [0, 2]])

    def test_margins(self):
        mg = Margins.generalised(4, 3, 5)
        mg.check(adversarial_start(mg).array)


class TestSeeding:
    def test_negative_or_missing_seed(self):
        with pytest.raises(ConfigError):
            replicate_rng(-1, 0)
        with pytest.raises(ConfigError):
            replicate_rng(None, 0)

    def test_threads_do_not_change_samples(self):
        spec = ChainSpec.generalised(3, 2, 4, PM.cyclic(3))
        x0 = adversarial_start(spec.margins)
        a = hitting_time_centre(spec, CentreSpec.centre(1), x0, 40, seed=11, threads=1)
        b = hitting_time_centre(spec, CentreSpec.centre(1), x0, 40, seed=11, threads=4)
        np.testing.assert_array_equal(a.times, b.times)
        np.testing.assert_array_equal(a.jumps, b.jumps)

    def test_replicate_count_does_not_change_samples(self):
        spec = ChainSpec.mean_field(2, 2, 6)
        x0 = adversarial_start(spec.margins)
        small = occupation_fraction(spec, CentreSpec.centre(1), "stationary", 5.0, 8, seed=5)
        large = occupation_fraction(spec, CentreSpec.centre(1), "stationary", 5.0, 20, seed=5, threads=3)
        np.testing.assert_array_equal(small.fractions, large.fractions[:8])
        c1, _ = simulate_counts(spec, x0, 7.0, 6, seed=2)
        c2, _ = simulate_counts(spec, x0, 7.0, 15, seed=2, threads=4)
        np.testing.assert_array_equal(c1, c2[:6])

    def test_seeds_differ(self):
        spec = ChainSpec.mean_field(2, 2, 6)
        x0 = adversarial_start(spec.margins)
        a = hitting_time_centre(spec, CentreSpec.centre(1), x0, 20, seed=1)
        b = hitting_time_centre(spec, CentreSpec.centre(1), x0, 20, seed=2)
        assert not np.array_equal(a.times, b.times)


class TestHitting:
    def test_start_inside_is_zero(self):
        spec = ChainSpec.generalised(2, 2, 4, PM.cyclic(2))
        s = hitting_time_centre(spec, CentreSpec.centre(1), [[4, 4], [4, 4]], 10, seed=0)
        np.testing.assert_array_equal(s.times, 0)
        np.testing.assert_array_equal(s.jumps, 0)
        assert not s.partial

    def test_cdf_matches_absorbing_chain(self):
        spec = ChainSpec.generalised(2, 2, 4, PM.cyclic(2))
        space = enumerate_states(spec.margins)
        P = build_kernel(spec, space)
        centre = CentreSpec.centre(1)
        outside = ~centre_mask(space, centre)
        x0 = adversarial_start(spec.margins)
        Q = P[np.ix_(outside, outside)] - np.eye(outside.sum())
        src = int(np.flatnonzero(np.flatnonzero(outside) == space.index_of(x0))[0])
        R = 3000
        sample = hitting_time_centre(spec, centre, x0, R, seed=42)
        assert not sample.partial
        for t in (0.5, 1.0, 2.0, 4.0):
            p = 1 - (linalg.expm(t * Q) @ np.ones(len(Q)))[src]
            assert within((sample.times <= t).mean(), p, math.sqrt(p * (1 - p) / R))

    def test_budget_marks_partial(self):
        spec = ChainSpec.generalised(2, 2, 50, PM.cyclic(2))
        s = hitting_time_centre(spec, CentreSpec.meso(0), adversarial_start(spec.margins), 5, seed=0, max_jumps=3)
        assert s.partial and s.censored.all()
        assert (s.jumps == 3).all()
        assert math.isnan(s.quantiles()["0.5"])

    def test_zero_replicates(self):
        spec = ChainSpec.mean_field(2, 2, 2)
        with pytest.raises(ConfigError):
            hitting_time_centre(spec, CentreSpec.centre(1), adversarial_start(spec.margins), 0, seed=0)

    def test_csv(self, tmp_path):
        spec = ChainSpec.mean_field(2, 2, 3)
        s = hitting_time_centre(spec, CentreSpec.centre(1), adversarial_start(spec.margins), 4, seed=0)
        s.write_csv(tmp_path / "h.csv")
        assert (tmp_path / "h.csv").read_text().splitlines()[0] == "replicate,value,jumps,censored"


class TestOccupation:
    def test_macro_one_is_always_inside(self):
        spec = ChainSpec.generalised(3, 2, 3, PM.cyclic(3))
        s = occupation_fraction(spec, CentreSpec.macro(1), adversarial_start(spec.margins), 10.0, 20, seed=1)
        np.testing.assert_allclose(s.fractions, 1.0, atol=1e-12)

    def test_stationary_start_matches_mass(self):
        spec = ChainSpec.generalised(2, 2, 4, PM.cyclic(2))
        space = enumerate_states(spec.margins)
        centre = CentreSpec.centre(1)
        mass = centre_mass(space, stationary_table(space), centre)
        s = occupation_fraction(spec, centre, "stationary", 20.0, 400, seed=9)
        assert within(s.mean, mass, s.stderr)

    def test_budget(self):
        spec = ChainSpec.mean_field(2, 2, 4)
        with pytest.raises(StepBudgetExceeded):
            occupation_fraction(spec, CentreSpec.centre(1), adversarial_start(spec.margins), 1e3, 2, seed=0,
                                max_jumps=10)

    def test_bad_inputs(self):
        spec = ChainSpec.mean_field(2, 2, 4)
        with pytest.raises(ConfigError):
            occupation_fraction(spec, CentreSpec.centre(1), "warm", 1.0, 2, seed=0)
        with pytest.raises(ConfigError):
            occupation_fraction(spec, CentreSpec.centre(1), "stationary", 0.0, 2, seed=0)


class TestVariance:
    def test_time_zero(self):
        spec = ChainSpec.generalised(3, 2, 5, PM.cyclic(3))
        v = variance_probe(spec, 0.0, 100, seed=0)
        np.testing.assert_array_equal(v.variance, 0)
        np.testing.assert_array_equal(v.mean, adversarial_start(spec.margins).array)

    def test_matches_exact_law(self):
        spec = ChainSpec.generalised(2, 2, 6, PM.cyclic(2))
        space = enumerate_states(spec.margins)
        P = build_kernel(spec, space)
        x0 = adversarial_start(spec.margins)
        t = 6.0
        law = heat_kernel_row(P, space.index_of(x0), t)
        cell = space.states[:, 0, 0].astype(float)
        exact = law @ cell**2 - (law @ cell) ** 2
        v = variance_probe(spec, t, 2000, seed=4)
        assert within(v.variance[0, 0], exact, v.stderr[0, 0])
        assert within(v.mean[0, 0], law @ cell, math.sqrt(exact / 2000))

    def test_needs_100_replicates(self):
        with pytest.raises(ConfigError):
            variance_probe(ChainSpec.mean_field(2, 2, 2), 1.0, 99, seed=0)

    def test_jackknife_stderr_scale(self):
        # for Gaussian-like samples the jackknife error is about var * sqrt(2 / R)
        spec = ChainSpec.generalised(2, 2, 30, PM.cyclic(2))
        v = variance_probe(spec, 200.0, 400, seed=8)
        ratio = v.stderr[0, 0] / (v.variance[0, 0] * math.sqrt(2 / 400))
        assert 0.5 < ratio < 2


class TestBiasedWalk:
    def test_small_case_exact(self):
        N, alpha, eps = 3, 1.0, 0.3
        p = 0.5 + alpha / N
        Q = np.array([[-p, p], [1 - p, -1.0]])
        T = eps * N * N / alpha
        exact = 1 - (linalg.expm(T * Q) @ np.ones(2))[0]
        est = biased_walk_exit(N, alpha, eps, 4000, seed=1)
        assert est.horizon == pytest.approx(T)
        assert within(est.estimate, exact, math.sqrt(exact * (1 - exact) / 4000))

    def test_strong_drift_escapes(self):
        assert biased_walk_exit(100, 50, 2, 200, seed=2).estimate >= 0.99

    def test_weak_drift_short_horizon_stays(self):
        assert biased_walk_exit(2000, 4, 0.05, 300, seed=3, threads=2).estimate <= 0.05

    def test_threads(self):
        a = biased_walk_exit(20, 2, 1.0, 64, seed=5, threads=1)
        b = biased_walk_exit(20, 2, 1.0, 64, seed=5, threads=4)
        assert a.hits == b.hits

    def test_bad_parameters(self):
        for args in [(1, 0.5, 1), (10, 6, 1), (10, 0, 1), (10, 1, 0)]:
            with pytest.raises(ConfigError):
                biased_walk_exit(*args, replicates=2, seed=0)


class TestShuffle:
    def test_restricted_identity_frozen(self):
        spec = ChainSpec.shuffle(3, 3, PM.identity(3), restricted=True)
        traj = simulate_shuffle(spec, 50, seed=0)
        np.testing.assert_array_equal(traj.final, np.arange(9).reshape(3, 3))
        assert (traj.compositions == traj.compositions[0]).all()

    def test_projection_moves(self):
        spec = ChainSpec.shuffle(3, 4, PM.cyclic(3))
        traj = simulate_shuffle(spec, 400, seed=3)
        l1 = np.abs(np.diff(traj.compositions, axis=0)).sum(axis=(1, 2))
        assert (l1 % 2 == 0).all() and (l1 <= 2 * 3).all()
        assert (traj.compositions.sum(axis=2) == 4).all()
        assert (traj.compositions.sum(axis=1) == 4).all()

    @pytest.mark.parametrize("restricted", [False, True])
    def test_labeled_transition_frequencies(self, restricted):
        mu = PM.from_weights(2, [((1, 2), 0.3), ((2, 1), 0.7)])
        lab = enumerate_labeled_states(2, 2)
        P = build_labeled_kernel(mu, lab)
        traj = simulate_shuffle(ChainSpec.shuffle(2, 2, mu, restricted), 20_000, seed=6, record_labeled=True)
        idx = [lab.index[s] for s in traj.labeled]
        counts = np.zeros_like(P)
        np.add.at(counts, (idx[:-1], idx[1:]), 1)
        visits = counts.sum(axis=1)
        assert (counts[P == 0] == 0).all()
        for a in range(len(P)):
            for b in range(len(P)):
                p = P[a, b]
                assert within(counts[a, b] / visits[a], p, math.sqrt(p * (1 - p) / visits[a]))

    def test_rejects_count_variant(self):
        with pytest.raises(ConfigError):
            simulate_shuffle(ChainSpec.balanced(2, 2, PM.cyclic(2)), 5, seed=0)

    def test_csv(self, tmp_path):
        traj = simulate_shuffle(ChainSpec.shuffle(2, 2, PM.cyclic(2)), 3, seed=0)
        traj.write_csv(tmp_path / "s.csv")
        assert len((tmp_path / "s.csv").read_text().splitlines()) == 1 + 4 * 2
