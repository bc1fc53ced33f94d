"""Epsilon-bounded budget managers and the configuration equations behind them.

Both managers split each step's budget between the private test
(``eps_theta``) and the noise mechanism (``eps_n``) so that the noise
accuracy equals the (eta-scaled) accuracy of the predictive branch and the
test noise is a fraction ``gamma`` of the threshold ``l``:

    c_n / eps_n = eta * (l + c_theta / eps_theta),    c_theta / eps_theta = gamma * l

Fixed-utility pins the accuracy ``alpha`` and lets the rate float; fixed-rate
pins the expected per-step spend ``rho = eps_theta + (1 - PR) eps_n``.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

from geopm.errors import InvalidParameterError
from geopm.mechanism import (
    HARD,
    STOP,
    BudgetDecision,
    ReportedStep,
    Run,
    Skip,
    _Stop,
    fits_budget,
)
from geopm.noise import c_n, c_theta

FIXED_UTILITY = "fixed_utility"
FIXED_RATE = "fixed_rate"
MODES = (FIXED_UTILITY, FIXED_RATE)

DEFAULT_EPS_STAR = math.log(10.0)
DEFAULT_R_STAR = 100.0
DEFAULT_EPS = DEFAULT_EPS_STAR / DEFAULT_R_STAR
DEFAULT_ALPHA = 3000.0
DEFAULT_QUERIES = 30
DEFAULT_V_MAX = 0.5 / 3.6  # 0.5 km/h in m/s

CONFIG_SECTION = "geopm"


@dataclass
class ManagerConfig:
    """Global privacy settings.

    ``rho`` defaults to ``eps_total / 30``.  ``skip_time`` enables the
    elapsed-time skip with speed bound ``v_max`` (m/s); ``skip_first`` forces
    the first query of a run onto the noise mechanism.
    """

    eps_total: float = DEFAULT_EPS
    mode: str = FIXED_RATE
    alpha: float = DEFAULT_ALPHA
    rho: float | None = None
    eta: float = 0.9
    gamma: float = 0.8
    delta: float = 0.9
    pr_init: float = 0.6
    pr_window: int = 5
    skip_time: bool = False
    v_max: float = DEFAULT_V_MAX
    skip_first: bool = False

    def __post_init__(self) -> None:
        if self.rho is None:
            self.rho = self.eps_total / DEFAULT_QUERIES
        if not self.eps_total > 0:
            raise InvalidParameterError("eps_total must be positive")
        if self.mode not in MODES:
            raise InvalidParameterError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not 0 < self.rho <= self.eps_total:
            raise InvalidParameterError("rho must lie in (0, eps_total]")
        if not self.alpha > 0:
            raise InvalidParameterError("alpha must be positive")
        if not 0 <= self.eta <= 1:
            raise InvalidParameterError("eta must lie in [0, 1]")
        if not 0 < self.gamma <= 1:
            raise InvalidParameterError("gamma must lie in (0, 1]")
        if not 0 < self.delta < 1:
            raise InvalidParameterError("delta must lie in (0, 1)")
        if not 0 <= self.pr_init < 1:
            raise InvalidParameterError("pr_init must lie in [0, 1)")
        if self.pr_window < 0:
            raise InvalidParameterError("pr_window must be non-negative")
        if not self.v_max > 0:
            raise InvalidParameterError("v_max must be positive")

    @property
    def test_weight(self) -> float:
        """eta * (c_theta / c_n) * (1 + 1/gamma), the recurring ratio eps_theta / eps_n."""
        return self.eta * c_theta(self.delta) / c_n(self.delta) * (1.0 + 1.0 / self.gamma)

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> ManagerConfig:
        kwargs = {}
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for key, raw in values.items():
            if key not in types:
                raise InvalidParameterError(f"unknown configuration key {key!r}")
            kwargs[key] = _coerce(key, raw, types[key])
        return cls(**kwargs)

    def to_mapping(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def _coerce(key: str, raw: Any, type_name: str) -> Any:
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if "bool" in type_name:
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if "int" in type_name:
            return int(raw)
        if "float" in type_name:
            return None if raw.lower() in ("", "none") else float(raw)
    except ValueError as exc:
        raise InvalidParameterError(f"bad value for {key}: {raw!r}") from exc
    return raw


def load_config(path) -> dict[str, str]:
    """Read the ``[geopm]`` section of an INI-style key = value file."""
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    if not parser.has_section(CONFIG_SECTION):
        return {}
    return dict(parser.items(CONFIG_SECTION))


def dump_config(cfg: ManagerConfig) -> str:
    lines = [f"[{CONFIG_SECTION}]"]
    lines += [f"{k} = {v}" for k, v in cfg.to_mapping().items()]
    return "\n".join(lines) + "\n"


@dataclass
class ManagerState:
    spent_so_far: float = 0.0
    steps_taken: int = 0
    hard_steps: int = 0
    # time of the last freshly noised (hard) report, i.e. of the point the parrot repeats
    last_reported_time: float | None = None
    exhausted: bool = False


def fixed_utility_params(cfg: ManagerConfig) -> tuple[float, float, float]:
    ct, cn = c_theta(cfg.delta), c_n(cfg.delta)
    eps_theta = cfg.eta * (ct / cfg.alpha) * (1.0 + 1.0 / cfg.gamma)
    eps_n = cn / cfg.alpha
    return eps_theta, eps_n, _threshold(ct, cfg.gamma, eps_theta)


def fixed_rate_params(cfg: ManagerConfig, pr: float) -> tuple[float, float, float]:
    ct = c_theta(cfg.delta)
    w = cfg.test_weight
    eps_n = cfg.rho / ((1.0 - pr) + w)
    eps_theta = eps_n * w
    return eps_theta, eps_n, _threshold(ct, cfg.gamma, eps_theta)


def _threshold(ct: float, gamma: float, eps_theta: float) -> float:
    if eps_theta == 0:
        raise InvalidParameterError("eta = 0 leaves no budget for the test")
    return ct / (gamma * eps_theta)


def current_pr(cfg: ManagerConfig, state: ManagerState) -> float:
    """Configured estimate during the warm-up window, then the observed easy fraction."""
    if state.steps_taken < max(cfg.pr_window, 1):
        return cfg.pr_init
    return (state.steps_taken - state.hard_steps) / state.steps_taken


def _guarded(cfg: ManagerConfig, state: ManagerState, params: tuple[float, float, float]):
    eps_theta, eps_n, l = params
    if state.exhausted or not fits_budget(state.spent_so_far, eps_theta + eps_n, cfg.eps_total):
        return STOP
    return BudgetDecision(eps_theta, eps_n, l)


def fixed_utility_decide(cfg: ManagerConfig, state: ManagerState) -> BudgetDecision | _Stop:
    """Fixed-utility formulas; STOP once a full step (test + noise) no longer fits the budget."""
    return _guarded(cfg, state, fixed_utility_params(cfg))


def fixed_rate_decide(cfg: ManagerConfig, state: ManagerState) -> BudgetDecision | _Stop:
    return _guarded(cfg, state, fixed_rate_params(cfg, current_pr(cfg, state)))


def rate_equation_check(eps_theta: float, eps_n: float, pr: float) -> float:
    """Expected per-step spend, eps_theta + (1 - PR) eps_n."""
    if eps_theta < 0 or eps_n < 0 or not 0 <= pr <= 1:
        raise InvalidParameterError("rate equation needs non-negative budgets and pr in [0, 1]")
    return eps_theta + (1.0 - pr) * eps_n


def pr_lower_bound(cfg: ManagerConfig) -> float:
    """Prediction rate at which the predictive mechanism breaks even with the independent one."""
    return cfg.test_weight


def skip_decide(cfg: ManagerConfig, state: ManagerState, query_time: float, alpha_now: float) -> Skip:
    """Which skip, if any, applies to the next query; ``Skip.NONE`` means run the test."""
    if cfg.skip_first and state.steps_taken == 0:
        return Skip.FORCED_HARD
    if cfg.skip_time and state.last_reported_time is not None:
        elapsed = query_time - state.last_reported_time
        if elapsed < 0:
            raise InvalidParameterError("query time precedes the last reported time")
        if elapsed * cfg.v_max <= alpha_now:
            return Skip.FORCED_EASY
    return Skip.NONE


@dataclass
class PredictiveBudgetManager:
    """Stateful manager for one run; plugs into :func:`geopm.mechanism.step`.

    Every issued decision is appended to ``decisions`` so spends can be
    audited independently of the run.
    """

    cfg: ManagerConfig
    state: ManagerState = field(default_factory=ManagerState)
    decisions: list[BudgetDecision] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.cfg.eta == 0:
            raise InvalidParameterError("eta = 0 leaves no budget for the test")

    def params(self) -> tuple[float, float, float]:
        if self.cfg.mode == FIXED_UTILITY:
            return fixed_utility_params(self.cfg)
        return fixed_rate_params(self.cfg, current_pr(self.cfg, self.state))

    def alpha_now(self, params: tuple[float, float, float]) -> float:
        if self.cfg.mode == FIXED_UTILITY:
            return self.cfg.alpha
        eps_theta, eps_n, l = params
        ct, cn = c_theta(self.cfg.delta), c_n(self.cfg.delta)
        return max(cn / eps_n, l + ct / eps_theta)

    def decide(self, run: Run | None = None, t: float = 0.0) -> BudgetDecision | _Stop:
        if self.state.exhausted:
            return STOP
        params = self.params()
        action = skip_decide(self.cfg, self.state, t, self.alpha_now(params))
        if action is Skip.FORCED_EASY:
            decision = BudgetDecision.forced_easy()
        elif action is Skip.FORCED_HARD:
            decision = BudgetDecision.forced_hard(params[1])
        else:
            decision = BudgetDecision(*params)
        if not fits_budget(self.state.spent_so_far, decision.worst_case_cost, self.cfg.eps_total):
            self.state.exhausted = True
            return STOP
        self.decisions.append(decision)
        return decision

    def record(self, step: ReportedStep) -> None:
        s = self.state
        s.spent_so_far += step.spent_test + step.spent_noise
        s.steps_taken += 1
        if step.b == HARD:
            s.hard_steps += 1
            s.last_reported_time = step.t
