"""Error and budget metrics, analytic privacy checks and the IM-vs-PM experiment runner."""

from __future__ import annotations

import csv
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, Sequence, TextIO

import numpy as np

from geopm.budget import FIXED_RATE, FIXED_UTILITY, ManagerConfig, PredictiveBudgetManager
from geopm.errors import InvalidInputError
from geopm.mechanism import (
    EASY,
    Run,
    Skip,
    independent_mechanism,
    parrot_predict,
    predictive_mechanism,
    total_spend,
)
from geopm.noise import PlanarPoint, c_n, c_theta, euclid, make_rng
from geopm.traces import QueryTrace, synth_trace

METRICS_CSV_FIELDS = [
    "mechanism", "skip", "prior_p", "mean_err_m", "alpha90_m", "mean_rate",
    "prediction_rate", "skipped_frac", "test_budget_frac", "queries_covered",
]


def trace_error(x: Sequence[PlanarPoint], z: Sequence[PlanarPoint]) -> float:
    """Mean pointwise Euclidean distance between a secret trace and its report."""
    if len(x) != len(z):
        raise InvalidInputError(f"trace lengths differ: {len(x)} != {len(z)}")
    if not x:
        raise InvalidInputError("trace_error needs at least one point")
    return math.fsum(euclid(a, b) for a, b in zip(x, z)) / len(x)


def alpha_accuracy(errors: Iterable[float], delta: float) -> float:
    """Smallest observed error ``a`` with at least a ``delta`` fraction of errors <= ``a``."""
    ordered = sorted(errors)
    if not ordered:
        raise InvalidInputError("alpha_accuracy needs at least one error")
    k = max(math.ceil(delta * len(ordered) - 1e-9), 1)
    return ordered[min(k, len(ordered)) - 1]


def run_rate(run: Run) -> float:
    if len(run) == 0:
        raise InvalidInputError("rate of an empty run is undefined")
    return total_spend(run) / len(run)


def accuracy_bound(eps_theta: float, eps_n: float, l: float, delta: float = 0.9) -> float:
    """Worst of the noise accuracy and the threshold-plus-test-noise accuracy."""
    return max(c_n(delta) / eps_n, l + c_theta(delta) / eps_theta)


def _log_p_easy_hard(eps_theta: float, l: float, d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = l - d
    neg = s < 0
    e = np.exp(-eps_theta * np.abs(s))
    half = math.log(0.5)
    log_easy = np.where(neg, half + eps_theta * s, np.log1p(-0.5 * e))
    log_hard = np.where(neg, np.log1p(-0.5 * e), half - eps_theta * s)
    return log_easy, log_hard


def verify_test_privacy(eps_theta: float, l: float, grid_extent: float, grid_step: float) -> float:
    """Largest excess of ``|ln P[b|d] - ln P[b|d']|`` over ``eps_theta * |d - d'|`` on a distance grid."""
    d = np.arange(0.0, grid_extent + 0.5 * grid_step, grid_step)
    worst = 0.0
    gap = eps_theta * np.abs(d[:, None] - d[None, :])
    for logp in _log_p_easy_hard(eps_theta, l, d):
        excess = np.abs(logp[:, None] - logp[None, :]) - gap
        worst = max(worst, float(excess.max()))
    return worst


@dataclass(frozen=True)
class MechanismSpec:
    """One row family of the experiment: a PM configuration or its matched IM baseline."""

    name: str
    cfg: ManagerConfig
    independent: bool = False

    @property
    def skip(self) -> bool:
        return not self.independent and (self.cfg.skip_time or self.cfg.skip_first)

    @property
    def eps_n(self) -> float:
        """Per-query budget of the matched independent mechanism."""
        if self.cfg.mode == FIXED_RATE:
            return self.cfg.rho
        return c_n(self.cfg.delta) / self.cfg.alpha

    @property
    def label(self) -> str:
        return f"{self.name}|{'on' if self.skip else 'off'}"


def pm_spec(cfg: ManagerConfig, skip: bool) -> MechanismSpec:
    cfg = replace(cfg, skip_time=skip, skip_first=skip)
    return MechanismSpec(f"PM_{cfg.mode}", cfg)


def im_spec(cfg: ManagerConfig) -> MechanismSpec:
    return MechanismSpec(f"IM_{cfg.mode}", replace(cfg, skip_time=False, skip_first=False), independent=True)


def mechanism_suite(base: ManagerConfig) -> list[MechanismSpec]:
    """Both managers with skip off/on, plus the IM baseline matched to each."""
    specs = []
    for mode in (FIXED_RATE, FIXED_UTILITY):
        cfg = replace(base, mode=mode)
        specs += [pm_spec(cfg, False), pm_spec(cfg, True), im_spec(cfg)]
    return specs


@dataclass(frozen=True)
class RunStats:
    steps: int
    errors: tuple[float, ...]
    spent: float
    spent_test: float
    easy: int
    forced_easy: int
    forced_hard: int
    exhausted: bool

    @property
    def hard(self) -> int:
        return self.steps - self.easy


def execute(spec: MechanismSpec, trace: QueryTrace, rng: np.random.Generator) -> Run:
    if spec.independent:
        return independent_mechanism(trace.points, spec.eps_n, rng, trace.times, spec.cfg.eps_total)
    manager = PredictiveBudgetManager(spec.cfg)
    return predictive_mechanism(trace.points, manager, parrot_predict, rng, trace.times)


def run_stats(run: Run, trace: QueryTrace) -> RunStats:
    return RunStats(
        steps=len(run),
        errors=tuple(euclid(x, s.z) for x, s in zip(trace.points, run.steps)),
        spent=total_spend(run),
        spent_test=math.fsum(s.spent_test for s in run),
        easy=sum(1 for s in run if s.b == EASY),
        forced_easy=sum(1 for s in run if s.skipped is Skip.FORCED_EASY),
        forced_hard=sum(1 for s in run if s.skipped is Skip.FORCED_HARD),
        exhausted=run.exhausted,
    )


def _task(args) -> RunStats:
    spec, trace, seed, key = args
    return run_stats(execute(spec, trace, make_rng(seed, *key)), trace)


@dataclass(frozen=True)
class MetricsRow:
    mechanism: str
    skip: bool
    prior_p: float
    mean_err: float
    alpha90: float
    mean_rate: float
    prediction_rate: float
    skipped_frac: float
    test_budget_frac: float
    queries_covered: float
    runs: int = 0


def aggregate(spec: MechanismSpec, prior_p: float, stats: Sequence[RunStats]) -> MetricsRow:
    """Pool per-run statistics; runs are consumed in the given order."""
    answered = [s for s in stats if s.steps > 0]
    steps = sum(s.steps for s in answered)
    pooled = [e for s in answered for e in s.errors]
    spent = math.fsum(s.spent for s in answered)
    nan = float("nan")
    return MetricsRow(
        mechanism=spec.name,
        skip=spec.skip,
        prior_p=prior_p,
        mean_err=math.fsum(math.fsum(s.errors) / s.steps for s in answered) / len(answered) if answered else nan,
        alpha90=alpha_accuracy(pooled, 0.9) if pooled else nan,
        mean_rate=math.fsum(s.spent / s.steps for s in answered) / len(answered) if answered else nan,
        prediction_rate=sum(s.easy for s in answered) / steps if steps else nan,
        skipped_frac=sum(s.forced_easy + s.forced_hard for s in answered) / steps if steps else nan,
        test_budget_frac=math.fsum(s.spent_test for s in answered) / spent if spent > 0 else 0.0,
        queries_covered=sum(s.steps for s in stats) / len(stats) if stats else nan,
        runs=len(stats),
    )


def run_experiment(
    query_traces: Sequence[QueryTrace],
    mechanisms: Sequence[MechanismSpec],
    master_seed: int,
    repeats: int = 1,
    jobs: int = 1,
) -> list[MetricsRow]:
    """Run every mechanism on every non-empty trace ``repeats`` times and aggregate per prior.

    Each run draws from its own stream keyed by (mechanism, trace position,
    repeat), so the rows do not depend on ``jobs``.
    """
    traces = [(i, qt) for i, qt in enumerate(query_traces) if len(qt) > 0]
    tasks = []
    for spec in mechanisms:
        spec_key = zlib.crc32(spec.label.encode())
        for i, qt in traces:
            for rep in range(repeats):
                tasks.append((spec, qt, master_seed, (spec_key, i, rep)))
    if jobs > 1 and len(tasks) > 1:
        chunk = max(1, len(tasks) // (jobs * 8))
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_task, tasks, chunksize=chunk))
    else:
        results = [_task(t) for t in tasks]

    priors = sorted({qt.prior_p for _, qt in traces})
    rows = []
    k = 0
    for spec in mechanisms:
        by_prior: dict[float, list[RunStats]] = {p: [] for p in priors}
        for _, qt in traces:
            for _ in range(repeats):
                by_prior[qt.prior_p].append(results[k])
                k += 1
        rows += [aggregate(spec, p, by_prior[p]) for p in priors]
    return rows


def write_metrics_csv(rows: Iterable[MetricsRow], out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(METRICS_CSV_FIELDS)
    for r in rows:
        w.writerow([
            r.mechanism, "on" if r.skip else "off", repr(r.prior_p), repr(r.mean_err), repr(r.alpha90),
            repr(r.mean_rate), repr(r.prediction_rate), repr(r.skipped_frac), repr(r.test_budget_frac),
            repr(r.queries_covered),
        ])


# -- verification suites ---------------------------------------------------


def random_synthetic_traces(count: int, seed: int, max_len: int = 80) -> list[QueryTrace]:
    """Mixed-regime traces (static, random walks, uniform) with random lengths and query spacing."""
    rng = make_rng(seed, 0)
    kinds = ("static", "random_walk", "uniform")
    out = []
    for _ in range(count):
        kind = kinds[int(rng.integers(len(kinds)))]
        n = int(rng.integers(1, max_len + 1))
        dt = float(rng.choice([30.0, 60.0, 600.0, 3600.0, 21600.0]))
        out.append(synth_trace(kind, n, dt, rng, step_sigma=float(rng.uniform(1, 2000))))
    return out


def budget_configs(base: ManagerConfig) -> list[ManagerConfig]:
    return [replace(base, mode=m, skip_time=s, skip_first=s) for m in (FIXED_RATE, FIXED_UTILITY) for s in (False, True)]


def epsilon_run(steps, decisions) -> float:
    """Budget of a run unrolled head-first: test budget, plus noise budget if hard, plus the tail."""
    total = 0.0
    for s, d in zip(reversed(steps), reversed(decisions)):
        total += d.eps_theta + s.b * d.eps_n
    return total


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str


def verify_privacy_suite(base: ManagerConfig, extent: float = 5000.0, step: float = 10.0) -> SuiteResult:
    from geopm.budget import fixed_rate_params, fixed_utility_params

    checks = [fixed_utility_params(replace(base, mode=FIXED_UTILITY)),
              fixed_rate_params(replace(base, mode=FIXED_RATE), base.pr_init)]
    worst = max(verify_test_privacy(eps_theta, l, extent, step) for eps_theta, _, l in checks)
    return SuiteResult("privacy", worst <= 1e-9, f"max violation {worst:.3e}")


def verify_budget_suite(
    base: ManagerConfig, n_traces: int = 1000, seed: int = 0, manager_factory=PredictiveBudgetManager
) -> SuiteResult:
    traces = random_synthetic_traces(n_traces, seed)
    worst_ratio = 0.0
    worst_mismatch = 0.0
    for ci, cfg in enumerate(budget_configs(base)):
        for ti, qt in enumerate(traces):
            manager = manager_factory(cfg)
            run = predictive_mechanism(qt.points, manager, parrot_predict, make_rng(seed, 1, ci, ti), qt.times)
            spent = total_spend(run)
            worst_ratio = max(worst_ratio, spent / cfg.eps_total)
            recursion = epsilon_run(run.steps, manager.decisions)
            if spent > 0:
                worst_mismatch = max(worst_mismatch, abs(spent - recursion) / spent)
    passed = worst_ratio <= 1.0 + 1e-12 and worst_mismatch <= 1e-12
    return SuiteResult("budget", passed, f"max spend/eps {worst_ratio:.15f}, recursion mismatch {worst_mismatch:.1e}")


def verify_utility_suite(base: ManagerConfig, n_steps: int = 10_000, seed: int = 0, delta: float = 0.9) -> SuiteResult:
    errors, bound = adversarial_errors(base, n_steps, seed, delta)
    coverage = sum(e <= bound for e in errors) / len(errors)
    return SuiteResult("utility", coverage >= delta - 0.01, f"coverage {coverage:.4f} of bound {bound:.1f} m")


def adversarial_errors(base: ManagerConfig, n_steps: int, seed: int, delta: float = 0.9) -> tuple[list[float], float]:
    """Per-step errors against a predictor that always lands 10 alpha_N away from the secret.

    The predictor closes over the secret trace; it exists only to drive the
    test into its worst case.
    """
    cfg = replace(base, mode=FIXED_UTILITY, eps_total=math.inf, skip_time=False, skip_first=False, delta=delta)
    manager = PredictiveBudgetManager(cfg)
    eps_theta, eps_n, l = manager.params()
    far = 10.0 * c_n(delta) / eps_n
    rng = make_rng(seed, 2)
    secrets = [PlanarPoint(float(a), float(b)) for a, b in rng.uniform(0, 50_000, size=(n_steps, 2))]

    def adversary(run: Run) -> PlanarPoint:
        x = secrets[len(run)]
        return PlanarPoint(x.x + far, x.y)

    run = predictive_mechanism(secrets, manager, adversary, rng)
    errors = [euclid(x, s.z) for x, s in zip(secrets, run.steps)]
    return errors, accuracy_bound(eps_theta, eps_n, l, delta)
