"""Command-line front end: ``urnlab <command> --config run.json``.

Every command reads one JSON document, resolves it against the command's
schema (unknown keys are errors, defaults are filled in), runs, and writes
``manifest.json`` plus command-specific CSV/SVG files into ``--out``.  The
manifest's ``config`` entry is the resolved document, so feeding a manifest
back through ``--config`` reproduces the run.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

from . import __version__
from . import exact, kernels, montecarlo, perms, statespace
from .errors import ConfigError, StepBudgetExceeded, UrnlabError
from .kernels import ChainSpec
from .perms import PermutationMeasure
from .statespace import CentreSpec, Margins
from .svg import write_line_plot

OUT_ENV = "URNLAB_OUT"
REQUIRED = object()


# ---------------------------------------------------------------- documents

def _measure(doc) -> PermutationMeasure:
    """Full measure document or ``{"family": ..., "d": ...}`` shorthand."""
    if isinstance(doc, Mapping) and "family" in doc:
        _reject(doc, {"family", "d", "perm"}, "measure")
        family, d = doc["family"], doc.get("d")
        if family == "dirac":
            return PermutationMeasure.dirac(tuple(_req(doc, "perm", "measure")))
        makers = {"cyclic": PermutationMeasure.cyclic, "transpositions": PermutationMeasure.transpositions,
                  "mean_field": PermutationMeasure.transpositions, "identity": PermutationMeasure.identity}
        if family not in makers:
            raise ConfigError(f"unknown measure family {family!r}")
        if not isinstance(d, int) or isinstance(d, bool):
            raise ConfigError("measure family needs an integer d")
        return makers[family](d)
    return perms.parse_measure(doc)


def _reject(doc: Mapping, allowed, where: str) -> None:
    if not isinstance(doc, Mapping):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(doc) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def _req(doc: Mapping, key: str, where: str):
    if key not in doc:
        raise ConfigError(f"{where} is missing required key {key!r}")
    return doc[key]


def _int(v, name: str, minimum: int | None = None) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{name} must be an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {v}")
    return v


def _real(v, name: str, positive: bool = False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{name} must be a finite number, got {v!r}")
    if positive and v <= 0:
        raise ConfigError(f"{name} must be positive, got {v}")
    return float(v)


def parse_spec(doc: Mapping) -> ChainSpec:
    _reject(doc, {"variant", "d", "m", "n", "measure"}, "spec")
    variant = doc.get("variant", "generalised")
    d = _int(_req(doc, "d", "spec"), "d", 2)
    n = _int(_req(doc, "n", "spec"), "n", 1)
    if variant == "mean_field":
        return ChainSpec.mean_field(d, _int(doc.get("m", d), "m", 1), n)
    mu = _measure(_req(doc, "measure", "spec"))
    if variant == "generalised":
        return ChainSpec.generalised(d, _int(doc.get("m", d), "m", 1), n, mu)
    if variant in ("balanced", "labeled"):
        return ChainSpec(Margins.balanced(d, n), mu, variant)
    if variant in ("shuffle", "restricted_shuffle"):
        return ChainSpec.shuffle(d, n, mu, restricted=variant == "restricted_shuffle")
    raise ConfigError(f"unknown variant {variant!r}")


def spec_to_doc(spec: ChainSpec) -> dict:
    doc = {"variant": spec.variant, "d": spec.margins.d, "n": spec.n}
    if spec.variant in ("generalised", "mean_field"):
        doc["m"] = spec.margins.m
    if spec.variant != "mean_field":
        doc["measure"] = perms.measure_to_doc(spec.mu)
    return doc


def parse_centre(doc: Mapping) -> CentreSpec:
    _reject(doc, {"kind", "value"}, "centre")
    return CentreSpec(str(_req(doc, "kind", "centre")), _real(_req(doc, "value", "centre"), "centre value"))


# ---------------------------------------------------------------- helpers

class Run:
    """Resolved options shared by all commands."""

    def __init__(self, args: argparse.Namespace):
        self.out = Path(args.out or os.environ.get(OUT_ENV, "."))
        self.seed = args.seed
        self.svg = args.svg
        self.threads = args.threads or os.cpu_count() or 1
        self.cap = args.cap
        self.tol = args.tol if args.tol is not None else exact.DEFAULT_TOL
        if self.threads < 1:
            raise ConfigError("--threads must be positive")
        if self.cap is not None and self.cap < 1:
            raise ConfigError("--cap must be positive")
        if not 0 < self.tol < 1:
            raise ConfigError("--tol must lie in (0, 1)")

    def path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out / name


def _space_and_kernel(spec: ChainSpec, run: Run):
    """Enumerated space, kernel and stationary table for count and labeled variants."""
    cap = run.cap or statespace.DEFAULT_CAP
    if spec.variant == "labeled":
        space = statespace.enumerate_labeled_states(spec.margins.d, spec.n, cap=cap)
        P = kernels.build_labeled_kernel(spec.mu, space)
        return space, P, np.full(len(space), 1.0 / len(space))
    if spec.variant in ("shuffle", "restricted_shuffle"):
        space = statespace.enumerate_ordered_states(spec.margins.d, spec.n, cap=min(cap, 40_000))
        P = kernels.build_shuffle_kernel(spec.mu, space, restricted=spec.variant == "restricted_shuffle")
        return space, P, np.full(len(space), 1.0 / len(space))
    space = statespace.enumerate_states(spec.margins, cap=cap)
    return space, kernels.build_kernel(spec, space), statespace.stationary_table(space)


def _time_grid(doc) -> list[float]:
    if isinstance(doc, list):
        return [_real(t, "time") for t in doc]
    _reject(doc, {"start", "stop", "num", "log"}, "grid")
    start, stop = _real(_req(doc, "start", "grid"), "start"), _real(_req(doc, "stop", "grid"), "stop")
    num = _int(_req(doc, "num", "grid"), "num", 1)
    if doc.get("log", False):
        if start <= 0:
            raise ConfigError("a log grid needs a positive start")
        return np.geomspace(start, stop, num).tolist()
    return np.linspace(start, stop, num).tolist()


def _chain_on(doc: dict, run: Run):
    """Kernel and stationary table for a resolved ``{"spec", "transform", "centre"}`` chain document.

    The spec entry is canonicalized in place.
    """
    spec = _canonical_spec(doc)
    space, P, pi = _space_and_kernel(spec, run)
    transform = doc["transform"]
    if transform == "none":
        return P, pi, None
    if transform == "reversibilize":
        return kernels.additive_reversibilization(P, pi), pi, None
    if doc["centre"] is None:
        raise ConfigError(f"transform {transform!r} needs a centre")
    centre = parse_centre(doc["centre"])
    mask = statespace.centre_mask(space, centre)
    if not mask.any():
        raise ConfigError("centre set is empty")
    P_rev = P if kernels.reversibility_check(P, pi) else kernels.additive_reversibilization(P, pi)
    pi_A = pi[mask] / pi[mask].sum()
    if transform == "restrict":
        return kernels.restrict(P, mask), pi_A, mask
    if transform == "induce":
        return kernels.induce(P, pi, mask), pi_A, mask
    if transform == "induce_reversibilized":
        return kernels.induce(P_rev, pi, mask), pi_A, mask
    if transform == "modify":
        return kernels.modify(P, pi, mask), pi_A, mask
    raise ConfigError(f"unknown transform {transform!r}")


# ---------------------------------------------------------------- schemas and commands

CHAIN_SCHEMA = {"spec": REQUIRED, "transform": "none", "centre": None}


def _resolve(doc: Mapping, schema: Mapping, where: str = "config") -> dict:
    _reject(doc, schema, where)
    out = {}
    for key, default in schema.items():
        if key in doc:
            out[key] = doc[key]
        elif default is REQUIRED:
            raise ConfigError(f"{where} is missing required key {key!r}")
        else:
            out[key] = default
    return out


def _canonical_spec(cfg: dict, key: str = "spec") -> ChainSpec:
    spec = parse_spec(cfg[key])
    cfg[key] = spec_to_doc(spec)
    return spec


def cmd_analyze(cfg: dict, run: Run) -> dict:
    mu = _measure(cfg["measure"])
    cfg["measure"] = perms.measure_to_doc(mu)
    report = perms.spectral_report(mu).to_doc()
    if not report["irreducible"]:
        report["error"] = "single-ball chain is reducible"
    return report


def _svg_or_skip(run: Run, name: str, series, **labels):
    if run.svg:
        write_line_plot(run.path(name), series, **labels)
        return name
    return None


def cmd_exact_tv(cfg: dict, run: Run) -> dict:
    spec = _canonical_spec(cfg)
    times = _time_grid(cfg["times"])
    if not times:
        raise ConfigError("time list is empty")
    times = sorted(set(times))
    _, P, pi = _space_and_kernel(spec, run)
    curve = exact.tv_curve(P, pi, times, run.tol)
    curve.write_csv(run.path("tv_curve.csv"))
    svg = _svg_or_skip(run, "tv_curve.svg", {"d(t)": (curve.times, curve.worst_case_tv)},
                       title="worst-case total variation", xlabel="t", ylabel="d(t)")
    return {"states": len(pi), "csv": "tv_curve.csv", "svg": svg,
            "d_tv": curve.worst_case_tv.tolist()}


def cmd_mixing_time(cfg: dict, run: Run) -> dict:
    spec = _canonical_spec(cfg)
    eps = cfg["eps"] if isinstance(cfg["eps"], list) else [cfg["eps"]]
    eps = [_real(e, "eps") for e in eps]
    _, P, pi = _space_and_kernel(spec, run)
    return exact.mixing_report(P, pi, eps, rel_tol=_real(cfg["rel_tol"], "rel_tol", True)).to_doc()


def cmd_cutoff_scan(cfg: dict, run: Run) -> dict:
    family = dict(cfg["family"])
    ns = [_int(n, "n", 1) for n in cfg["n_values"]]
    if not ns:
        raise ConfigError("n_values is empty")
    specs = {n: parse_spec({**family, "n": n}) for n in ns}
    cfg["family"] = {k: v for k, v in spec_to_doc(specs[ns[0]]).items() if k != "n"}
    rows = exact.cutoff_ratio_scan(specs, _real(cfg["eps"], "eps"), cap=run.cap or 20_000)
    path = run.path("cutoff_scan.csv")
    with open(path, "w") as fh:
        cols = list(rows[0])
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(repr(r[c]) for c in cols) + "\n")
    svg = _svg_or_skip(run, "cutoff_scan.svg", {"ratio": ([r["n"] for r in rows], [r["ratio"] for r in rows])},
                       title="t_mix(eps) / t_mix(1 - eps)", xlabel="n", ylabel="ratio")
    return {"rows": rows, "csv": "cutoff_scan.csv", "svg": svg}


def cmd_transform(cfg: dict, run: Run) -> dict:
    spec = _canonical_spec(cfg)
    space, P, pi = _space_and_kernel(spec, run)
    kind = cfg["transform"]
    centre = parse_centre(cfg["centre"]) if cfg["centre"] is not None else None
    if kind != "reversibilize" and centre is None:
        raise ConfigError(f"transform {kind!r} needs a centre")
    mask = statespace.centre_mask(space, centre) if centre is not None else None
    if mask is not None and not mask.any():
        raise ConfigError("centre set is empty")
    if kind == "restrict":
        R, pi_R = kernels.restrict(P, mask), pi[mask] / pi[mask].sum()
    elif kind == "induce":
        R, pi_R = kernels.induce(P, pi, mask), pi[mask] / pi[mask].sum()
    elif kind == "collapse":
        R, pi_R = kernels.collapse(P, pi, mask)
    elif kind == "modify":
        R, pi_R = kernels.modify(P, pi, mask), pi[mask] / pi[mask].sum()
    elif kind == "reversibilize":
        R, pi_R = kernels.additive_reversibilization(P, pi), pi
    else:
        raise ConfigError(f"unknown transform {kind!r}")
    kernels.write_kernel_csv(run.path("kernel.csv"), R)
    doc = {
        "transform": kind,
        "states": int(R.shape[0]),
        "stationarity_residual": kernels.stationarity_residual(R, pi_R),
        "reversible": kernels.reversibility_check(R, pi_R),
        "csv": "kernel.csv",
    }
    if R.shape == P.shape:
        doc["max_abs_diff_from_original"] = float(np.abs(R - P).max())
    return doc


def cmd_profile(cfg: dict, run: Run) -> dict:
    cfg["chain"] = _resolve(cfg["chain"], CHAIN_SCHEMA, "chain")
    P, pi, _ = _chain_on(cfg["chain"], run)
    deltas = sorted(_real(x, "delta") for x in cfg["deltas"])
    if not deltas:
        raise ConfigError("deltas is empty")
    cap = run.cap or exact.PROFILE_CAP
    table = exact.spectral_profile_table(P, pi, min(max(deltas), 1.0), cap) if deltas[0] < 1 else []
    points = [exact.spectral_profile(P, pi, x, cap, table=table) for x in deltas]
    with open(run.path("profile.csv"), "w") as fh:
        fh.write("delta,lambda,lambda_modified\n")
        for p in points:
            fh.write(f"{p.delta!r},{p.lam!r},{p.lam_modified!r}\n")
    return {"points": [{"delta": p.delta, "lambda": p.lam, "lambda_modified": p.lam_modified} for p in points],
            "csv": "profile.csv"}


def cmd_compare(cfg: dict, run: Run) -> dict:
    cfg["source"] = _resolve(cfg["source"], CHAIN_SCHEMA, "source")
    cfg["target"] = _resolve(cfg["target"], CHAIN_SCHEMA, "target")
    P_s, pi_s, _ = _chain_on(cfg["source"], run)
    P_t, pi_t, _ = _chain_on(cfg["target"], run)
    if P_s.shape != P_t.shape:
        raise ConfigError("source and target chains live on different state sets")
    if not np.allclose(pi_s, pi_t, rtol=0, atol=1e-12):
        raise ConfigError("source and target chains must share a stationary distribution")
    report = exact.congestion_ratio(P_t, P_s, pi_t, probes=_int(cfg["probes"], "probes", 1),
                                    rng=np.random.default_rng(run.seed or 0))
    return report.to_doc()


def _start(doc, margins: Margins, allow_stationary: bool = False):
    if doc in (None, "adversarial"):
        return montecarlo.adversarial_start(margins)
    if doc == "stationary" and allow_stationary:
        return "stationary"
    if isinstance(doc, str):
        raise ConfigError(f"unknown start {doc!r}")
    return statespace.Configuration.of(margins.check(np.asarray(doc, dtype=np.int64)))


def _seed(cfg: dict, run: Run) -> int:
    seed = run.seed if run.seed is not None else cfg.get("seed")
    if seed is None:
        raise ConfigError("Monte Carlo commands need a seed (--seed or config 'seed')")
    seed = _int(seed, "seed", 0)
    if seed >= 2**64:
        raise ConfigError("seed must fit in 64 bits")
    cfg["seed"] = seed
    return seed


def cmd_mc_hit(cfg: dict, run: Run) -> dict:
    spec = _canonical_spec(cfg)
    centre = parse_centre(cfg["centre"])
    seed = _seed(cfg, run)
    reps = _int(cfg["replicates"], "replicates", 1)
    sample = montecarlo.hitting_time_centre(spec, centre, _start(cfg["start"], spec.margins), reps, seed,
                                            max_jumps=_int(cfg["max_jumps"], "max_jumps", 1),
                                            threads=run.threads)
    sample.write_csv(run.path("hitting_times.csv"))
    doc = {"quantiles": sample.quantiles(), "partial": sample.partial, "censored": int(sample.censored.sum()),
           "csv": "hitting_times.csv"}
    return doc


def cmd_mc_occupation(cfg: dict, run: Run) -> dict:
    spec = _canonical_spec(cfg)
    centre = parse_centre(cfg["centre"])
    seed = _seed(cfg, run)
    sample = montecarlo.occupation_fraction(
        spec, centre, _start(cfg["start"], spec.margins, allow_stationary=True),
        _real(cfg["horizon"], "horizon", True), _int(cfg["replicates"], "replicates", 1), seed,
        max_jumps=_int(cfg["max_jumps"], "max_jumps", 1), threads=run.threads)
    sample.write_csv(run.path("occupation.csv"))
    return {"mean": sample.mean, "stderr": sample.stderr, "csv": "occupation.csv"}


def cmd_mc_variance(cfg: dict, run: Run) -> dict:
    spec = _canonical_spec(cfg)
    seed = _seed(cfg, run)
    table = montecarlo.variance_probe(spec, _real(cfg["t"], "t"), _int(cfg["replicates"], "replicates", 1), seed,
                                      start=_start(cfg["start"], spec.margins), threads=run.threads)
    table.write_csv(run.path("variance.csv"))
    return {"variance": table.variance.tolist(), "stderr": table.stderr.tolist(), "csv": "variance.csv"}


def cmd_biased_walk(cfg: dict, run: Run) -> dict:
    seed = _seed(cfg, run)
    est = montecarlo.biased_walk_exit(_int(cfg["N"], "N", 2), _real(cfg["alpha"], "alpha", True),
                                      _real(cfg["eps"], "eps", True), _int(cfg["replicates"], "replicates", 1),
                                      seed, threads=run.threads)
    return {"estimate": est.estimate, "stderr": est.stderr, "horizon": est.horizon, "hits": est.hits}


def shuffle_bracket(n: int, gap: float, q: float = 1.0, restricted: bool = False, const: float = 5.0):
    """Mixing-time bracket for the shuffle with the O-terms' constants set to ``const``.

    The lower-order upper term uses ``|log log n|`` so it stays a widening at small ``n``.
    """
    lead = n * math.log(n)
    lower = lead / (2 * gap) - const * n
    factor = max(1 / (2 * gap), 1 / q if restricted else 1.0)
    upper = factor * lead + const * n * abs(math.log(math.log(n)))
    return lower, upper


def cmd_shuffle_check(cfg: dict, run: Run) -> dict:
    spec = _canonical_spec(cfg)
    if spec.variant not in ("shuffle", "restricted_shuffle"):
        raise ConfigError("shuffle-check needs a shuffle or restricted_shuffle spec")
    d, n = spec.margins.d, spec.n
    cap = run.cap or 40_000
    ordered = statespace.enumerate_ordered_states(d, n, cap=cap)
    labeled = statespace.enumerate_labeled_states(d, n, cap=cap)
    restricted = spec.variant == "restricted_shuffle"
    P_shuf = kernels.build_shuffle_kernel(spec.mu, ordered, restricted=restricted)
    P_lab = kernels.build_labeled_kernel(spec.mu, labeled)
    residual = kernels.lumping_check(P_shuf, kernels.forget_order_projection(ordered, labeled), P_lab)
    uniform = np.full(len(ordered), 1.0 / len(ordered))
    t_mix = exact.mixing_time(P_shuf, uniform, _real(cfg["eps"], "eps"))
    U = perms.single_ball_matrix(spec.mu)
    gap = perms.spectral_gap(U)
    q = float(np.min(1 - np.diag(np.asarray(U))))
    lower, upper = shuffle_bracket(n, gap, q, restricted)
    doc = {"fine_states": len(ordered), "coarse_states": len(labeled), "lumping_residual": residual,
           "t_mix": t_mix, "bracket": [lower, upper], "in_bracket": bool(lower <= t_mix <= upper)}
    steps = _int(cfg["steps"], "steps", 0)
    if steps:
        traj = montecarlo.simulate_shuffle(spec, steps, _seed(cfg, run))
        traj.write_csv(run.path("shuffle_trajectory.csv"))
        jumps = np.abs(np.diff(traj.compositions, axis=0)).sum(axis=(1, 2))
        doc["max_projected_l1_jump"] = int(jumps.max())
        doc["csv"] = "shuffle_trajectory.csv"
    return doc


COMMANDS: dict[str, tuple[dict, Callable[[dict, Run], dict]]] = {
    "analyze": ({"measure": REQUIRED}, cmd_analyze),
    "exact-tv": ({"spec": REQUIRED, "times": REQUIRED}, cmd_exact_tv),
    "mixing-time": ({"spec": REQUIRED, "eps": [0.25], "rel_tol": 1e-4}, cmd_mixing_time),
    "cutoff-scan": ({"family": REQUIRED, "n_values": REQUIRED, "eps": 0.25}, cmd_cutoff_scan),
    "transform": ({"spec": REQUIRED, "transform": REQUIRED, "centre": None}, cmd_transform),
    "profile": ({"chain": REQUIRED, "deltas": [0.1, 0.3, 0.5]}, cmd_profile),
    "compare": ({"source": REQUIRED, "target": REQUIRED, "probes": 100}, cmd_compare),
    "mc-hit": ({"spec": REQUIRED, "centre": REQUIRED, "start": "adversarial", "replicates": REQUIRED,
                "max_jumps": montecarlo.DEFAULT_JUMP_BUDGET, "seed": None}, cmd_mc_hit),
    "mc-occupation": ({"spec": REQUIRED, "centre": REQUIRED, "start": "adversarial", "horizon": REQUIRED,
                       "replicates": REQUIRED, "max_jumps": montecarlo.DEFAULT_JUMP_BUDGET, "seed": None},
                      cmd_mc_occupation),
    "mc-variance": ({"spec": REQUIRED, "t": REQUIRED, "replicates": REQUIRED, "start": "adversarial",
                     "seed": None}, cmd_mc_variance),
    "biased-walk": ({"N": REQUIRED, "alpha": REQUIRED, "eps": REQUIRED, "replicates": REQUIRED, "seed": None},
                    cmd_biased_walk),
    "shuffle-check": ({"spec": REQUIRED, "eps": 0.25, "steps": 0, "seed": None}, cmd_shuffle_check),
}


def load_config(path: str | None, command: str) -> dict:
    """Read a config document or an earlier manifest for ``command``."""
    if path is None:
        doc: Any = {}
    else:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if isinstance(doc, Mapping) and doc.get("tool") == "urnlab" and "config" in doc:
        if doc.get("command") != command:
            raise ConfigError(f"manifest was written by {doc.get('command')!r}, not {command!r}")
        doc = doc["config"]
    if not isinstance(doc, Mapping):
        raise ConfigError("config must be a JSON object")
    return dict(doc)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="urnlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"urnlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH", help="JSON config document (or an earlier manifest)")
        p.add_argument("--out", metavar="DIR", help=f"output directory (default ${OUT_ENV} or .)")
        p.add_argument("--seed", type=int, metavar="U64", help="master seed for Monte Carlo commands")
        p.add_argument("--svg", action="store_true", help="also write an SVG plot where available")
        p.add_argument("--threads", type=int, metavar="N", help="worker threads (default: CPU count)")
        p.add_argument("--cap", type=int, metavar="N", help="state-space cap")
        p.add_argument("--tol", type=float, metavar="FLOAT", help="uniformization tail tolerance")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    schema, fn = COMMANDS[args.command]
    code = 0
    try:
        run = Run(args)
        cfg = _resolve(load_config(args.config, args.command), schema)
        try:
            result = fn(cfg, run)
        except StepBudgetExceeded as exc:
            result, code = {"error": str(exc)}, exc.exit_code
        if result.get("partial"):
            code = StepBudgetExceeded.exit_code
        if result.get("error") and code == 0:
            code = 4
        manifest = {"tool": "urnlab", "version": __version__, "command": args.command,
                    "config": cfg, "options": {"seed": run.seed, "threads": run.threads, "cap": run.cap,
                                               "tol": run.tol, "svg": run.svg},
                    "result": result}
        manifest = _jsonable(manifest)
        with open(run.path("manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2)
        json.dump(manifest["result"], sys.stdout, indent=2)
        sys.stdout.write("\n")
    except UrnlabError as exc:
        print(f"urnlab {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    return code


if __name__ == "__main__":
    sys.exit(main())
