"""Predictive mechanism: private threshold test, prediction, single step and full runs.

A run is the public output of the mechanism.  Steps are stored in
chronological order; ``Run.head`` is the most recent step and ``Run.tail()``
drops it, so the cons-list view ``(z, b) :: tail`` is available without
paying for prepends.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Protocol, Sequence, TextIO

import numpy as np

from geopm.errors import BudgetExhaustedError, InvalidInputError, InvalidParameterError, NoPredictionError
from geopm.noise import PlanarPoint, euclid, linear_laplace_sample, planar_laplace_sample

EASY = 0
HARD = 1

# relative slack when comparing float budget sums against the global epsilon
BUDGET_RTOL = 1e-12


class Skip(str, enum.Enum):
    NONE = "none"
    FORCED_EASY = "forced_easy"
    FORCED_HARD = "forced_hard"


class _Stop:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "STOP"

    def __reduce__(self):
        return (_Stop, ())


STOP = _Stop()


def fits_budget(spent: float, cost: float, total: float) -> bool:
    return spent + cost <= total * (1.0 + BUDGET_RTOL)


@dataclass(frozen=True, slots=True)
class BudgetDecision:
    """``(eps_theta, eps_n, l)`` for one step.

    ``l = +inf`` accepts the prediction without testing and ``l = -inf``
    always falls back to noise; both carry ``eps_theta = 0``.
    """

    eps_theta: float
    eps_n: float
    l: float

    def __post_init__(self) -> None:
        if self.eps_theta < 0 or self.eps_n < 0 or math.isnan(self.l):
            raise InvalidParameterError(f"invalid budget decision {self}")
        if math.isinf(self.l):
            if self.eps_theta != 0:
                raise InvalidParameterError("skip decisions (infinite l) must have eps_theta = 0")
        elif self.eps_theta == 0 or self.l < 0:
            raise InvalidParameterError("a finite threshold needs eps_theta > 0 and l >= 0")

    @property
    def skip(self) -> Skip:
        if self.l == math.inf:
            return Skip.FORCED_EASY
        if self.l == -math.inf:
            return Skip.FORCED_HARD
        return Skip.NONE

    @property
    def worst_case_cost(self) -> float:
        if self.l == math.inf:
            return 0.0
        return self.eps_theta + self.eps_n

    @classmethod
    def forced_easy(cls) -> BudgetDecision:
        return cls(0.0, 0.0, math.inf)

    @classmethod
    def forced_hard(cls, eps_n: float) -> BudgetDecision:
        return cls(0.0, eps_n, -math.inf)


@dataclass(frozen=True, slots=True)
class ReportedStep:
    z: PlanarPoint
    b: int
    spent_test: float
    spent_noise: float
    skipped: Skip = Skip.NONE
    t: float = 0.0

    @property
    def spent(self) -> float:
        return self.spent_test + self.spent_noise


@dataclass
class Run:
    steps: list[ReportedStep] = field(default_factory=list)
    exhausted: bool = False
    # query time refused by the manager, if the run stopped early
    stopped_at: float | None = None

    def __len__(self) -> int:
        return len(self.steps)

    def __iter__(self) -> Iterator[ReportedStep]:
        return iter(self.steps)

    @property
    def head(self) -> ReportedStep:
        if not self.steps:
            raise NoPredictionError("empty run has no head")
        return self.steps[-1]

    def tail(self) -> Run:
        return Run(self.steps[:-1])

    @property
    def points(self) -> list[PlanarPoint]:
        return [s.z for s in self.steps]

    @property
    def hard_steps(self) -> int:
        return sum(s.b for s in self.steps)


Predictor = Callable[[Run], PlanarPoint]


class BudgetManager(Protocol):
    def decide(self, run: Run, t: float) -> BudgetDecision | _Stop: ...

    def record(self, step: ReportedStep) -> None: ...


def p_easy(eps_theta: float, l: float, d: float) -> float:
    """Closed-form probability that the test accepts at secret-to-prediction distance ``d``."""
    s = l - d
    if s < 0:
        return 0.5 * math.exp(eps_theta * s)
    return 1.0 - 0.5 * math.exp(-eps_theta * s)


def test_mechanism(
    decision: BudgetDecision, z_pred: Sequence[float], x_secret: Sequence[float], rng: np.random.Generator
) -> int:
    """EASY iff the prediction lies within the noisy threshold ``l + Lap(eps_theta)`` of the secret."""
    if decision.l == math.inf:
        return EASY
    if decision.l == -math.inf:
        return HARD
    noisy_threshold = decision.l + linear_laplace_sample(decision.eps_theta, rng)
    return EASY if euclid(x_secret, z_pred) <= noisy_threshold else HARD


test_mechanism.__test__ = False  # not a pytest test


def parrot_predict(run: Run) -> PlanarPoint:
    """Repeat the most recently reported point."""
    if not run.steps:
        raise NoPredictionError("parrot needs at least one reported step")
    return run.steps[-1].z


def step(
    run: Run,
    x: Sequence[float],
    manager: BudgetManager,
    predictor: Predictor,
    rng: np.random.Generator,
    t: float = 0.0,
) -> ReportedStep:
    """Answer one query ``x`` at time ``t`` and inform the manager of the outcome.

    When the run is empty and the manager still asks for a test, there is
    nothing to predict: the test budget is charged and the step is hard.
    """
    decision = manager.decide(run, t)
    if decision is STOP:
        raise BudgetExhaustedError(f"budget exhausted at t={t}")

    if decision.skip is Skip.FORCED_HARD:
        z = planar_laplace_sample(decision.eps_n, x, rng)
        reported = ReportedStep(z, HARD, 0.0, decision.eps_n, Skip.FORCED_HARD, t)
    else:
        try:
            z_pred = predictor(run)
        except NoPredictionError:
            if decision.skip is Skip.FORCED_EASY:
                raise
            z_pred = None
        if decision.skip is Skip.FORCED_EASY:
            reported = ReportedStep(z_pred, EASY, 0.0, 0.0, Skip.FORCED_EASY, t)
        else:
            b = HARD if z_pred is None else test_mechanism(decision, z_pred, x, rng)
            if b == EASY:
                reported = ReportedStep(z_pred, EASY, decision.eps_theta, 0.0, Skip.NONE, t)
            else:
                z = planar_laplace_sample(decision.eps_n, x, rng)
                reported = ReportedStep(z, HARD, decision.eps_theta, decision.eps_n, Skip.NONE, t)
    manager.record(reported)
    return reported


def predictive_mechanism(
    x: Sequence[Sequence[float]],
    manager: BudgetManager,
    predictor: Predictor,
    rng: np.random.Generator,
    times: Sequence[float] | None = None,
) -> Run:
    """Fold :func:`step` over the trace; stops early (``exhausted``) when the manager says STOP."""
    if len(x) < 1:
        raise InvalidInputError("predictive mechanism needs a non-empty trace")
    if times is None:
        times = [float(i) for i in range(len(x))]
    elif len(times) != len(x):
        raise InvalidInputError("times and trace lengths differ")
    run = Run()
    for xi, ti in zip(x, times):
        try:
            run.steps.append(step(run, xi, manager, predictor, rng, ti))
        except BudgetExhaustedError:
            run.exhausted = True
            run.stopped_at = ti
            break
    return run


def independent_mechanism(
    x: Sequence[Sequence[float]],
    eps_n: float,
    rng: np.random.Generator,
    times: Sequence[float] | None = None,
    eps_total: float | None = None,
) -> Run:
    """Fresh planar Laplace noise on every point; optionally capped at ``eps_total``."""
    if not eps_n > 0:
        raise InvalidParameterError(f"eps_n must be positive, got {eps_n}")
    if times is None:
        times = [float(i) for i in range(len(x))]
    run = Run()
    spent = 0.0
    for xi, ti in zip(x, times):
        if eps_total is not None and not fits_budget(spent, eps_n, eps_total):
            run.exhausted = True
            run.stopped_at = ti
            break
        z = planar_laplace_sample(eps_n, xi, rng)
        run.steps.append(ReportedStep(z, HARD, 0.0, eps_n, Skip.NONE, ti))
        spent += eps_n
    return run


def total_spend(run: Run | Iterable[ReportedStep]) -> float:
    """Budget consumed by a run: every test spend plus the noise spend of hard steps."""
    return math.fsum(s.spent_test + s.spent_noise for s in run)


RUN_CSV_FIELDS = ["step_index", "t", "z_x", "z_y", "b", "spent_test", "spent_noise", "skipped"]


def write_run_csv(run: Run, out: TextIO) -> None:
    """Chronological CSV; an exhausted run ends with a marker row."""
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(RUN_CSV_FIELDS)
    for i, s in enumerate(run.steps):
        writer.writerow([i, repr(s.t), repr(s.z[0]), repr(s.z[1]), s.b,
                         repr(s.spent_test), repr(s.spent_noise), s.skipped.value])
    if run.exhausted:
        t = "" if run.stopped_at is None else repr(run.stopped_at)
        writer.writerow([len(run.steps), t, "", "", "", "0.0", "0.0", "exhausted"])


def read_run_csv(src: TextIO) -> Run:
    run = Run()
    for row in csv.DictReader(src):
        if row["skipped"] == "exhausted":
            run.exhausted = True
            run.stopped_at = float(row["t"]) if row["t"] else None
            break
        run.steps.append(
            ReportedStep(
                PlanarPoint(float(row["z_x"]), float(row["z_y"])),
                int(row["b"]),
                float(row["spent_test"]),
                float(row["spent_noise"]),
                Skip(row["skipped"]),
                float(row["t"]),
            )
        )
    return run
