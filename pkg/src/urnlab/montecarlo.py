"""Trajectory simulation of the urn chains with reproducible, per-replicate randomness.

Replicate ``r`` of a run with master seed ``s`` draws from a Philox stream
keyed by ``SeedSequence(s, spawn_key=(r,))``.  A replicate consumes its stream
in fixed-size blocks regardless of what the other replicates are doing, so
results depend only on ``(seed, r)``: neither the replicate count nor the
thread count changes any individual sample.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, StepBudgetExceeded
from .kernels import ChainSpec
from .perms import PermutationMeasure
from .statespace import CentreSpec, Configuration, Margins

DEFAULT_JUMP_BUDGET = 10**9
BLOCK = 1024
_SLACK = 1e-9

__all__ = [
    "SimState",
    "HittingSample",
    "OccupationSample",
    "VarianceTable",
    "BiasedWalkEstimate",
    "ShuffleTrajectory",
    "replicate_rng",
    "step",
    "adversarial_start",
    "hitting_time_centre",
    "simulate_counts",
    "occupation_fraction",
    "variance_probe",
    "biased_walk_exit",
    "simulate_shuffle",
]


def replicate_rng(seed: int, r: int) -> np.random.Generator:
    """Counter-based stream for replicate ``r`` under master ``seed``."""
    if seed is None or int(seed) < 0:
        raise ConfigError("a nonnegative integer seed is required")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(r),))))


@dataclass
class SimState:
    counts: np.ndarray
    clock: float = 0.0
    jumps: int = 0

    @classmethod
    def start(cls, x) -> "SimState":
        counts = x.array if isinstance(x, Configuration) else np.asarray(x)
        return cls(np.array(counts, dtype=np.int64))


def step(state: SimState, mu: PermutationMeasure, rng: np.random.Generator) -> SimState:
    """One jump: exponential holding time, one ball per urn by composition, moved by ``sigma ~ mu``."""
    counts = state.counts
    d, m = counts.shape
    urn_size = counts[0].sum()
    pos = rng.integers(0, urn_size, size=d)
    colours = (pos[:, None] >= np.cumsum(counts, axis=1)).sum(axis=1)
    k = min(int(np.searchsorted(np.cumsum(mu.weights), rng.random(), side="right")), len(mu.weights) - 1)
    sigma = mu.permutations[k]
    new = counts.copy()
    for i in range(d):
        new[i, colours[i]] -= 1
        new[sigma[i], colours[i]] += 1
    return SimState(new, state.clock + rng.exponential(), state.jumps + 1)


def adversarial_start(margins: Margins) -> Configuration:
    """North-west-corner filling: colour 1 fills urn 1, then urn 2, and so on."""
    d, m = margins.d, margins.m
    room = np.full(d, margins.urn_size, dtype=np.int64)
    counts = np.zeros((d, m), dtype=np.int64)
    i = 0
    for j in range(m):
        left = margins.colour_count
        while left > 0:
            if i >= d:
                raise ConfigError("margins are infeasible")
            put = min(left, room[i])
            counts[i, j] += put
            room[i] -= put
            left -= put
            if room[i] == 0:
                i += 1
    margins.check(counts)
    return Configuration.of(counts)


class _Engine:
    """Lock-step simulation of a batch of replicates with private streams."""

    def __init__(self, spec: ChainSpec, start, seed: int, replicates, block: int = BLOCK):
        if spec.variant in ("labeled", "shuffle", "restricted_shuffle"):
            raise ConfigError(f"count-chain simulation does not cover the {spec.variant} variant")
        x0 = start.array if isinstance(start, Configuration) else np.asarray(start)
        spec.margins.check(x0)
        self.ids = np.asarray(replicates, dtype=np.int64)
        R = self.ids.size
        self.d, self.m = spec.margins.d, spec.margins.m
        self.urn_size = spec.margins.urn_size
        self.perms = spec.mu.permutations
        self.cum_w = np.cumsum(spec.mu.weights)
        self.cum_w[-1] = np.inf
        self.counts = np.repeat(np.asarray(x0, dtype=np.int64)[None], R, axis=0)
        self.clock = np.zeros(R)
        self.jumps = np.zeros(R, dtype=np.int64)
        self.rngs = [replicate_rng(seed, r) for r in self.ids]
        self.block = block
        self._k = np.full(R, block)
        self._rows = np.arange(R)
        self._pos = np.empty((R, block, self.d), dtype=np.int64)
        self._perm = np.empty((R, block))
        self._hold = np.empty((R, block))

    def _refill(self, rows: np.ndarray) -> None:
        K, d = self.block, self.d
        for r in rows:
            g = self.rngs[r]
            self._pos[r] = g.integers(0, self.urn_size, size=(K, d))
            self._perm[r] = g.random(K)
            self._hold[r] = g.standard_exponential(K)
        self._k[rows] = 0

    def advance(self, active: np.ndarray) -> np.ndarray:
        """Jump every active replicate once; returns the holding times used.

        Each replicate keeps its own cursor into its own block of draws.
        """
        rows = self._rows[active]
        empty = rows[self._k[rows] == self.block]
        if empty.size:
            self._refill(empty)
        k = self._k[rows]
        self._k[rows] += 1
        counts = self.counts[rows]
        pos = self._pos[rows, k]
        colours = (pos[:, :, None] >= np.cumsum(counts, axis=2)).sum(axis=2)
        sigma = self.perms[np.searchsorted(self.cum_w, self._perm[rows, k], side="right")]
        urns = np.broadcast_to(np.arange(self.d), colours.shape)
        reps = np.broadcast_to(np.arange(rows.size)[:, None], colours.shape)
        np.subtract.at(counts, (reps, urns, colours), 1)
        np.add.at(counts, (reps, sigma, colours), 1)
        self.counts[rows] = counts
        self.jumps[rows] += 1
        return self._hold[rows, k]


def _split(replicates: int, threads: int) -> list[np.ndarray]:
    threads = max(1, min(int(threads), replicates))
    return [chunk for chunk in np.array_split(np.arange(replicates), threads) if chunk.size]


def _run_chunks(fn, replicates: int, threads: int):
    chunks = _split(replicates, threads)
    if len(chunks) == 1:
        return [fn(chunks[0])]
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        return list(pool.map(fn, chunks))


def _check_replicates(replicates, minimum: int = 1):
    if int(replicates) < minimum:
        raise ConfigError(f"need at least {minimum} replicates, got {replicates}")


@dataclass
class HittingSample:
    times: np.ndarray
    target: CentreSpec
    start: Configuration
    seed: int
    jumps: np.ndarray
    censored: np.ndarray
    partial: bool = False

    def quantiles(self, qs=(0.25, 0.5, 0.75)) -> dict:
        done = self.times[~self.censored]
        return {str(q): float(np.quantile(done, q)) if done.size else math.nan for q in qs}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["replicate", "value", "jumps", "censored"])
            for r, (t, j, c) in enumerate(zip(self.times, self.jumps, self.censored)):
                w.writerow([r, repr(float(t)), int(j), int(c)])


def _in_lower(counts: np.ndarray, lb: float) -> np.ndarray:
    return (counts >= lb - _SLACK).all(axis=(1, 2))


def hitting_time_centre(spec: ChainSpec, centre: CentreSpec, start, replicates: int, seed: int,
                        max_jumps: int = DEFAULT_JUMP_BUDGET, threads: int = 1,
                        block: int = BLOCK) -> HittingSample:
    """First time each replicate's configuration lies in ``centre``.

    Replicates that exhaust ``max_jumps`` are censored at their current clock
    and the sample is flagged ``partial``.
    """
    _check_replicates(replicates)
    start = start if isinstance(start, Configuration) else Configuration.of(start)
    lb = centre.lower_bound(spec.margins)

    def run(ids):
        eng = _Engine(spec, start, seed, ids, block)
        active = ~_in_lower(eng.counts, lb)
        while active.any():
            hold = eng.advance(active)
            eng.clock[active] += hold
            hit = _in_lower(eng.counts[active], lb)
            idx = np.flatnonzero(active)
            active[idx[hit]] = False
            over = active & (eng.jumps >= max_jumps)
            if over.any():
                active &= ~over
        censored = ~_in_lower(eng.counts, lb)
        return eng.clock.copy(), eng.jumps.copy(), censored

    parts = _run_chunks(run, replicates, threads)
    times = np.concatenate([p[0] for p in parts])
    jumps = np.concatenate([p[1] for p in parts])
    censored = np.concatenate([p[2] for p in parts])
    return HittingSample(times, centre, start, int(seed), jumps, censored, bool(censored.any()))


@dataclass
class OccupationSample:
    window: tuple[float, float]
    fractions: np.ndarray
    seed: int

    @property
    def mean(self) -> float:
        return float(self.fractions.mean())

    @property
    def stderr(self) -> float:
        R = self.fractions.size
        return float(self.fractions.std(ddof=1) / math.sqrt(R)) if R > 1 else math.nan

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["replicate", "value"])
            w.writerows((r, repr(float(v))) for r, v in enumerate(self.fractions))


def burn_in_time(margins: Margins) -> float:
    """Burn-in horizon ``10 * urn_size * log(n)`` used for stationary starts."""
    n = margins.urn_size / margins.m
    return 10.0 * margins.urn_size * max(math.log(n), 1.0)


def _snapshot_run(eng: _Engine, horizon, max_jumps: int, on_hold=None) -> None:
    R = eng.ids.size
    horizon = np.broadcast_to(np.asarray(horizon, dtype=float), (R,))
    active = horizon > 0
    while active.any():
        rows = np.flatnonzero(active)
        before = eng.counts[rows].copy()
        hold = eng.advance(active)
        t0 = eng.clock[rows]
        t1 = np.minimum(t0 + hold, horizon[rows])
        if on_hold is not None:
            on_hold(rows, before, t0, t1)
        late = t0 + hold > horizon[rows]
        eng.counts[rows[late]] = before[late]
        eng.jumps[rows[late]] -= 1
        eng.clock[rows] = t1
        active[rows[late]] = False
        if (eng.jumps[active] >= max_jumps).any():
            raise StepBudgetExceeded(f"replicate exceeded {max_jumps} jumps")


def simulate_counts(spec: ChainSpec, start, t: float, replicates: int, seed: int,
                    max_jumps: int = DEFAULT_JUMP_BUDGET, threads: int = 1):
    """Configurations ``X_t`` of independent replicates; returns ``(counts (R, d, m), jumps (R,))``."""
    _check_replicates(replicates)
    if t < 0:
        raise ConfigError("time must be nonnegative")

    def run(ids):
        eng = _Engine(spec, start, seed, ids)
        _snapshot_run(eng, t, max_jumps)
        return eng.counts.copy(), eng.jumps.copy()

    parts = _run_chunks(run, replicates, threads)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def occupation_fraction(spec: ChainSpec, centre: CentreSpec, start, horizon: float, replicates: int,
                        seed: int, max_jumps: int = DEFAULT_JUMP_BUDGET, threads: int = 1,
                        burn_in: float | None = None) -> OccupationSample:
    """Fraction of ``[0, horizon]`` spent in ``centre``, from the holding intervals.

    ``start="stationary"`` first runs each replicate from the adversarial start
    for ``burn_in`` (default :func:`burn_in_time`) and measures afterwards.
    """
    if not horizon > 0:
        raise ConfigError("horizon must be positive")
    _check_replicates(replicates)
    stationary = isinstance(start, str)
    if stationary and start != "stationary":
        raise ConfigError(f"unknown start {start!r}")
    x0 = adversarial_start(spec.margins) if stationary else start
    burn = (burn_in_time(spec.margins) if burn_in is None else burn_in) if stationary else 0.0
    lb = centre.lower_bound(spec.margins)

    def run(ids):
        eng = _Engine(spec, x0, seed, ids)
        if burn > 0:
            _snapshot_run(eng, burn, max_jumps)
            eng.clock[:] = 0.0
            eng.jumps[:] = 0
        inside = np.zeros(ids.size)

        def tally(rows, before, t0, t1):
            inside[rows] += np.where(_in_lower(before, lb), t1 - t0, 0.0)

        _snapshot_run(eng, horizon, max_jumps, tally)
        return inside / horizon

    fractions = np.concatenate(_run_chunks(run, replicates, threads))
    return OccupationSample((0.0, float(horizon)), fractions, int(seed))


@dataclass
class VarianceTable:
    t: float
    variance: np.ndarray
    stderr: np.ndarray
    mean: np.ndarray
    seed: int

    def write_csv(self, path) -> None:
        d, m = self.variance.shape
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["urn", "colour", "mean", "variance", "stderr"])
            for i in range(d):
                for j in range(m):
                    w.writerow([i + 1, j + 1, repr(float(self.mean[i, j])),
                                repr(float(self.variance[i, j])), repr(float(self.stderr[i, j]))])


def _jackknife_variance(samples: np.ndarray):
    """Sample variance along axis 0 with its leave-one-out jackknife standard error."""
    R = samples.shape[0]
    total = samples.sum(axis=0)
    total2 = (samples**2).sum(axis=0)
    var = (total2 - total**2 / R) / (R - 1)
    loo_s = total[None] - samples
    loo_s2 = total2[None] - samples**2
    loo = (loo_s2 - loo_s**2 / (R - 1)) / (R - 2)
    se = np.sqrt((R - 1) / R * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0))
    return var, se


def variance_probe(spec: ChainSpec, t: float, replicates: int, seed: int, start=None,
                   max_jumps: int = DEFAULT_JUMP_BUDGET, threads: int = 1) -> VarianceTable:
    """Per-cell variance of ``X_t`` across replicates (adversarial start by default)."""
    _check_replicates(replicates, 100)
    if t < 0:
        raise ConfigError("time must be nonnegative")
    x0 = adversarial_start(spec.margins) if start is None else start

    samples, _ = simulate_counts(spec, x0, t, replicates, seed, max_jumps, threads)
    samples = samples.astype(float)
    var, se = _jackknife_variance(samples)
    return VarianceTable(float(t), var, se, samples.mean(axis=0), int(seed))


@dataclass
class BiasedWalkEstimate:
    N: int
    alpha: float
    eps: float
    horizon: float
    hits: int
    replicates: int

    @property
    def estimate(self) -> float:
        return self.hits / self.replicates

    @property
    def stderr(self) -> float:
        p = self.estimate
        return math.sqrt(max(p * (1 - p), 0.0) / self.replicates)


def _walk_hits(N: int, p_up: float, horizon: float, rng: np.random.Generator, block: int = 1 << 14) -> bool:
    """Whether a reflected walk from 1 reaches ``N`` by time ``horizon`` (rate-1 exponential clock)."""
    z, clock = 1, 0.0
    while True:
        steps = np.where(rng.random(block) < p_up, 1, -1)
        times = clock + np.cumsum(rng.standard_exponential(block))
        # reflection at 1 (blocked move is a self-loop): Lindley recursion
        s = np.cumsum(steps)
        path = z + s - np.minimum(np.minimum.accumulate(z - 1 + s), 0)
        hit = np.flatnonzero(path >= N)
        if hit.size:
            return bool(times[hit[0]] <= horizon)
        if times[-1] > horizon:
            return False
        z, clock = int(path[-1]), float(times[-1])


def biased_walk_exit(N: int, alpha: float, eps: float, replicates: int, seed: int,
                     threads: int = 1) -> BiasedWalkEstimate:
    """Estimate ``P(tau_N <= eps N^2 / alpha | Z_0 = 1)`` for the reflected walk with bias ``alpha/N``."""
    if N < 2 or not 0 < alpha <= N / 2:
        raise ConfigError("need N >= 2 and 0 < alpha <= N/2")
    if eps <= 0:
        raise ConfigError("eps must be positive")
    _check_replicates(replicates)
    horizon = eps * N * N / alpha
    p_up = 0.5 + alpha / N
    # about one block covers the horizon, since jumps arrive at rate 1
    block = int(min(1 << 14, max(64, 2 * horizon)))

    def run(ids):
        return sum(_walk_hits(N, p_up, horizon, replicate_rng(seed, r), block) for r in ids)

    hits = sum(_run_chunks(run, replicates, threads))
    return BiasedWalkEstimate(N, alpha, eps, horizon, int(hits), int(replicates))


@dataclass
class ShuffleTrajectory:
    """Per-step stack compositions; ``compositions[k, i, c]`` counts colour ``c`` in stack ``i`` after ``k`` steps."""

    compositions: np.ndarray
    final: np.ndarray
    labeled: list = field(default_factory=list)

    def write_csv(self, path) -> None:
        steps, d, _ = self.compositions.shape
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "stack", *(f"colour_{c + 1}" for c in range(d))])
            for k in range(steps):
                for i in range(d):
                    w.writerow([k, i + 1, *self.compositions[k, i].tolist()])


def simulate_shuffle(spec: ChainSpec, steps: int, seed: int, start=None,
                     record_labeled: bool = False) -> ShuffleTrajectory:
    """Multi-stack random-to-random shuffle in jump time.

    Cards are labelled ``0 .. dn-1``; card ``b`` has colour ``b // n``.  The
    default start puts cards ``in .. in+n-1`` in stack ``i`` in order.
    """
    if spec.variant not in ("shuffle", "restricted_shuffle"):
        raise ConfigError("simulate_shuffle needs a shuffle or restricted_shuffle spec")
    d, n = spec.margins.d, spec.margins.urn_size
    if d * n > 10**6:
        raise ConfigError("at most 10^6 cards")
    if steps < 0:
        raise ConfigError("steps must be nonnegative")
    restricted = spec.variant == "restricted_shuffle"
    stacks = np.arange(d * n).reshape(d, n) if start is None else np.array(start, dtype=np.int64)
    if stacks.shape != (d, n) or sorted(stacks.ravel().tolist()) != list(range(d * n)):
        raise ConfigError("start must be a d x n arrangement of all cards")
    rng = replicate_rng(seed, 0)
    perms, weights = spec.mu.permutations, spec.mu.weights
    comps = np.zeros((steps + 1, d, d), dtype=np.int64)
    labeled = []

    def record(k):
        comps[k] = np.stack([np.bincount(row // n, minlength=d) for row in stacks])
        if record_labeled:
            labeled.append(tuple(tuple(sorted(row.tolist())) for row in stacks))

    record(0)
    for k in range(1, steps + 1):
        sigma = perms[rng.choice(len(weights), p=weights)]
        active = [i for i in range(d) if not restricted or sigma[i] != i]
        picks = rng.integers(0, n, size=len(active))
        slots = rng.integers(0, n, size=len(active))
        if active:
            rows = [list(row) for row in stacks]
            moved = {}
            for i, p in zip(active, picks):
                moved[int(sigma[i])] = rows[i].pop(int(p))
            for i, s in zip(active, slots):
                tgt = int(sigma[i])
                rows[tgt].insert(int(s), moved[tgt])
            stacks = np.array(rows, dtype=np.int64)
        record(k)
    return ShuffleTrajectory(comps, stacks, labeled)
