"""Predictive geo-indistinguishable sanitization of location traces."""

from geopm.budget import ManagerConfig, PredictiveBudgetManager, pr_lower_bound
from geopm.mechanism import (
    EASY,
    HARD,
    STOP,
    BudgetDecision,
    ReportedStep,
    Run,
    Skip,
    independent_mechanism,
    parrot_predict,
    predictive_mechanism,
    step,
    total_spend,
)
from geopm.noise import GeoFix, PlanarPoint, euclid, icll, icpl, make_rng

__all__ = [
    "EASY", "HARD", "STOP", "BudgetDecision", "GeoFix", "ManagerConfig", "PlanarPoint",
    "PredictiveBudgetManager", "ReportedStep", "Run", "Skip", "euclid", "icll", "icpl",
    "independent_mechanism", "make_rng", "parrot_predict", "pr_lower_bound",
    "predictive_mechanism", "step", "total_spend",
]
