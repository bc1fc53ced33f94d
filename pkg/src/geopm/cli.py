"""Command-line entry point: ``geopm {ingest,sample,synth,run,evaluate,verify,config}``.

Privacy settings come from built-in defaults, then ``--config FILE`` (an
INI file with a ``[geopm]`` section), then individual flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
from pathlib import Path

from geopm.budget import (
    MODES,
    ManagerConfig,
    PredictiveBudgetManager,
    dump_config,
    load_config,
    pr_lower_bound,
)
from geopm.errors import EmptyTrajectoryError, GeoPMError
from geopm.evaluation import (
    MechanismSpec,
    execute,
    im_spec,
    mechanism_suite,
    run_experiment,
    verify_budget_suite,
    verify_privacy_suite,
    verify_utility_suite,
    write_metrics_csv,
)
from geopm.mechanism import STOP, BudgetDecision, write_run_csv
from geopm.noise import eps_from_radius, make_rng
from geopm.traces import (
    PRIORS,
    SamplerConfig,
    parse_geolife,
    parse_tdrive,
    prior_sweep,
    read_query_traces,
    read_trajectories,
    synth_trace,
    write_query_traces,
    write_trajectories,
)

log = logging.getLogger("geopm")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

FORMATS = {"geolife": ("*.plt", parse_geolife), "tdrive": ("*.txt", parse_tdrive)}


class UsageError(GeoPMError):
    pass


def _bool(text: str) -> bool:
    return text.lower() in ("1", "true", "yes", "on")


def add_privacy_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("privacy settings (override --config)")
    g.add_argument("--config", type=Path, help="INI file with a [geopm] section")
    g.add_argument("--eps-total", type=float, help="global budget in 1/m (default ln(10)/100)")
    g.add_argument("--eps-star", type=float, help="privacy level at radius --r-star; sets eps_total")
    g.add_argument("--r-star", type=float, help="protection radius in meters (with --eps-star)")
    g.add_argument("--mode", choices=[m.replace("_", "-") for m in MODES] + list(MODES))
    g.add_argument("--alpha", type=float, help="fixed-utility accuracy target in meters")
    g.add_argument("--rho", type=float, help="fixed-rate budget per step (default eps_total/30)")
    g.add_argument("--eta", type=float)
    g.add_argument("--gamma", type=float)
    g.add_argument("--delta", type=float)
    g.add_argument("--pr-init", type=float)
    g.add_argument("--pr-window", type=int)
    g.add_argument("--skip-time", type=_bool, metavar="BOOL")
    g.add_argument("--v-max", type=float, help="skip speed bound in m/s (default 0.5 km/h)")
    g.add_argument("--skip-first", type=_bool, metavar="BOOL")


def manager_config(args: argparse.Namespace) -> ManagerConfig:
    values: dict = {}
    if getattr(args, "config", None):
        if not args.config.exists():
            raise UsageError(f"config file not found: {args.config}")
        values.update(load_config(args.config))
    for f in dataclasses.fields(ManagerConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    if getattr(args, "eps_star", None) is not None or getattr(args, "r_star", None) is not None:
        values["eps_total"] = eps_from_radius(args.eps_star or math.log(10.0), args.r_star or 100.0)
    if "mode" in values:
        values["mode"] = str(values["mode"]).replace("-", "_")
    if "rho" in values and isinstance(values["rho"], str) and values["rho"].strip().lower() in ("", "none"):
        del values["rho"]
    return ManagerConfig.from_mapping(values)


def _collect(paths: list[Path], pattern: str) -> list[Path]:
    files: list[Path] = []
    for p in paths:
        if p.is_dir():
            files += sorted(p.rglob(pattern))
        elif p.is_file():
            files.append(p)
        else:
            raise UsageError(f"unreadable path: {p}")
    return files


def cmd_ingest(args: argparse.Namespace) -> int:
    if args.format not in FORMATS:
        raise UsageError(f"unknown format {args.format!r}")
    pattern, parse = FORMATS[args.format]
    files = _collect(args.paths, pattern)
    if not files:
        raise UsageError("no input files found")
    trajs, skipped, rejected = [], 0, 0
    for f in files:
        user = f"{f.parent.parent.name}/{f.stem}" if args.format == "geolife" else None
        try:
            tr = parse(f.read_bytes(), user) if user else parse(f.read_bytes())
        except EmptyTrajectoryError as exc:
            log.warning("%s: %s", f, exc)
            rejected += 1
            continue
        skipped += tr.skipped
        trajs.append(tr)
    with open(args.out, "w", newline="") as out:
        write_trajectories(trajs, out)
    fixes = sum(len(t) for t in trajs)
    print(f"files={len(files)} trajectories={len(trajs)} fixes={fixes} skipped_records={skipped} rejected_files={rejected}")
    return EXIT_OK


def cmd_sample(args: argparse.Namespace) -> int:
    if not args.store.exists():
        raise UsageError(f"trajectory store not found: {args.store}")
    with open(args.store) as fh:
        trajs = read_trajectories(fh)
    cfg = SamplerConfig(
        speed_cap=args.speed_cap_kmh / 3.6,
        brief_interval=args.brief,
        jump_interval=args.jump,
        interval_noise_frac=args.noise_frac,
        samples_per_trace=args.samples,
    )
    priors = PRIORS if args.p is None else (args.p,)
    traces = prior_sweep(trajs, cfg, args.seed, priors)
    with open(args.out, "w", newline="") as out:
        write_query_traces(traces, out)
    empty = sum(1 for t in traces if len(t) == 0)
    print(f"trajectories={len(trajs)} traces={len(traces)} empty={empty} queries={sum(len(t) for t in traces)}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    qt = synth_trace(args.kind, args.n, args.dt, make_rng(args.seed), step_sigma=args.step_sigma, box=args.box)
    with open(args.out, "w", newline="") as out:
        write_query_traces([qt], out)
    print(f"points={len(qt)}")
    return EXIT_OK


def _load_queries(path: Path):
    if not path.exists():
        raise UsageError(f"query store not found: {path}")
    with open(path) as fh:
        return read_query_traces(fh)


def cmd_run(args: argparse.Namespace) -> int:
    traces = _load_queries(args.traces)
    if not 0 <= args.index < len(traces):
        raise UsageError(f"trace index {args.index} out of range (have {len(traces)})")
    cfg = manager_config(args)
    spec = im_spec(cfg) if args.mechanism == "im" else MechanismSpec(f"PM_{cfg.mode}", cfg)
    run = execute(spec, traces[args.index], make_rng(args.seed))
    with open(args.out, "w", newline="") as out:
        write_run_csv(run, out)
    print(f"steps={len(run)} exhausted={run.exhausted}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    traces = _load_queries(args.traces)
    cfg = manager_config(args)
    rows = run_experiment(traces, mechanism_suite(cfg), args.seed, repeats=args.repeats, jobs=args.jobs)
    with open(args.out, "w", newline="") as out:
        write_metrics_csv(rows, out)
    print(f"rows={len(rows)} pr_lower_bound={pr_lower_bound(cfg):.4f}")
    return EXIT_OK


class _UnguardedManager(PredictiveBudgetManager):
    """Deliberately broken manager that ignores the budget; used to prove the verifier bites."""

    def decide(self, run=None, t=0.0):
        decision = super().decide(run, t)
        if decision is STOP:
            self.state.exhausted = False
            decision = BudgetDecision(*self.params())
            self.decisions.append(decision)
        return decision


def cmd_verify(args: argparse.Namespace) -> int:
    cfg = manager_config(args)
    suites = ("privacy", "budget", "utility") if args.suite == "all" else (args.suite,)
    results = []
    for name in suites:
        if name == "privacy":
            results.append(verify_privacy_suite(cfg))
        elif name == "budget":
            factory = _UnguardedManager if args.inject_overflow else PredictiveBudgetManager
            results.append(verify_budget_suite(cfg, args.traces_count, args.seed, factory))
        else:
            results.append(verify_utility_suite(cfg, seed=args.seed))
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED


def cmd_config(args: argparse.Namespace) -> int:
    cfg = manager_config(args)
    sys.stdout.write(dump_config(cfg))
    print(f"# pr_lower_bound = {pr_lower_bound(cfg):.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geopm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse GeoLife/T-Drive files into a trajectory store")
    p.add_argument("paths", nargs="+", type=Path)
    p.add_argument("--format", required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("sample", help="sample query traces for each jump prior")
    p.add_argument("store", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--p", type=float, help="single jump probability instead of the 11-prior sweep")
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--brief", type=float, default=60.0)
    p.add_argument("--jump", type=float, default=3600.0)
    p.add_argument("--noise-frac", type=float, default=0.1)
    p.add_argument("--speed-cap-kmh", type=float, default=15.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("synth", help="write a synthetic query trace")
    p.add_argument("--kind", choices=["static", "random_walk", "uniform"], required=True)
    p.add_argument("--n", type=int, default=30)
    p.add_argument("--dt", type=float, default=60.0)
    p.add_argument("--step-sigma", type=float, default=50.0)
    p.add_argument("--box", type=float, default=50_000.0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="sanitize one query trace and write its run")
    p.add_argument("traces", type=Path)
    p.add_argument("--mechanism", choices=["im", "pm"], default="pm")
    p.add_argument("--index", type=int, default=0, help="which trace of the file to run")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    add_privacy_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="IM vs PM metrics per jump prior")
    p.add_argument("traces", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    add_privacy_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("verify", help="privacy, budget and utility invariant suites")
    p.add_argument("--suite", choices=["all", "privacy", "budget", "utility"], default="all")
    p.add_argument("--traces-count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-overflow", action="store_true", help="run the budget suite on a manager without its guard")
    add_privacy_flags(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("config", help="print the effective privacy settings")
    add_privacy_flags(p)
    p.set_defaults(func=cmd_config)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (GeoPMError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
