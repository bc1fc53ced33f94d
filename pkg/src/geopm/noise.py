"""Planar geometry, Laplace samplers and accuracy constants.

Distances are in meters and privacy parameters in 1/meters throughout.  A
public privacy setting given as a level ``eps_star`` at radius ``r_star`` is
converted once with :func:`eps_from_radius`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np

from geopm.errors import InvalidInputError, InvalidParameterError, UnboundedAccuracyError

EARTH_RADIUS_M = 6_371_000.0
MAX_PROJECTION_SPAN_DEG = 5.0
ROOT_TOL = 1e-12
# upper end of the radius search, in units of 1/eps
RADIUS_SEARCH_SPAN = 50.0


class PlanarPoint(NamedTuple):
    """Point in local planar meters (x east, y north of the projection origin)."""

    x: float
    y: float


@dataclass(frozen=True, slots=True)
class GeoFix:
    lat: float
    lon: float
    t: float = 0.0

    def __post_init__(self) -> None:
        if not (-90.0 <= self.lat <= 90.0) or not (-180.0 <= self.lon <= 180.0):
            raise InvalidInputError(f"coordinates out of range: lat={self.lat}, lon={self.lon}")
        if not math.isfinite(self.t):
            raise InvalidInputError(f"non-finite timestamp {self.t}")


@dataclass(frozen=True)
class AccuracyConstants:
    """Unit-epsilon accuracy of linear (``c_theta``) and planar (``c_n``) Laplace at level ``delta``."""

    delta: float
    c_theta: float
    c_n: float


def eps_from_radius(eps_star: float, r_star: float) -> float:
    if eps_star <= 0 or r_star <= 0:
        raise InvalidParameterError("eps_star and r_star must be positive")
    return eps_star / r_star


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``; the same tuple always yields the same stream."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def project(fix: GeoFix, origin: GeoFix) -> PlanarPoint:
    """Equirectangular projection of ``fix`` around ``origin``."""
    dlat = fix.lat - origin.lat
    dlon = fix.lon - origin.lon
    if abs(dlat) >= MAX_PROJECTION_SPAN_DEG or abs(dlon) >= MAX_PROJECTION_SPAN_DEG:
        raise InvalidInputError(
            f"fix ({fix.lat}, {fix.lon}) too far from projection origin ({origin.lat}, {origin.lon})"
        )
    k = EARTH_RADIUS_M * math.pi / 180.0
    return PlanarPoint(k * dlon * math.cos(math.radians(origin.lat)), k * dlat)


def euclid(a: Sequence[float], b: Sequence[float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def trace_dinf(a: Sequence[PlanarPoint], b: Sequence[PlanarPoint]) -> float:
    """Maximum pointwise distance between two traces of equal length."""
    if len(a) != len(b):
        raise InvalidInputError(f"trace lengths differ: {len(a)} != {len(b)}")
    return max((euclid(p, q) for p, q in zip(a, b)), default=0.0)


def step_sigma(x: Sequence[PlanarPoint]) -> float:
    """Average distance between adjacent points of a trace."""
    if len(x) < 2:
        raise InvalidInputError("step_sigma needs at least two points")
    return math.fsum(euclid(x[i], x[i + 1]) for i in range(len(x) - 1)) / (len(x) - 1)


def _check_eps(eps: float) -> None:
    if not eps > 0 or not math.isfinite(eps):
        raise InvalidParameterError(f"eps must be positive and finite, got {eps}")


def _check_delta(delta: float) -> None:
    if delta == 1.0:
        raise UnboundedAccuracyError("accuracy at delta = 1 is unbounded")
    if not 0.0 <= delta < 1.0:
        raise InvalidParameterError(f"delta must lie in [0, 1), got {delta}")


def _bisect_decreasing(f, lo: float, hi: float, tol: float) -> float:
    """Root of a decreasing function with f(lo) >= 0 >= f(hi)."""
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if f(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def planar_radius_survival(c: float) -> float:
    """P[R > r] for the planar Laplace radius, as a function of ``c = eps * r``."""
    return (1.0 + c) * math.exp(-c)


def planar_radius_cdf(eps: float, r):
    """C(r) = 1 - (1 + eps r) exp(-eps r); accepts scalars or arrays."""
    c = eps * np.asarray(r, dtype=float)
    return 1.0 - (1.0 + c) * np.exp(-c)


@lru_cache(maxsize=None)
def c_theta(delta: float) -> float:
    """Unit-epsilon delta-quantile of |Lap|: ln(1 / (1 - delta))."""
    _check_delta(delta)
    return -math.log1p(-delta)


@lru_cache(maxsize=None)
def c_n(delta: float) -> float:
    """Unit-epsilon delta-quantile of the planar Laplace radius, by bisection."""
    _check_delta(delta)
    if delta == 0.0:
        return 0.0
    target = 1.0 - delta
    return _bisect_decreasing(
        lambda c: planar_radius_survival(c) - target, 0.0, RADIUS_SEARCH_SPAN, ROOT_TOL
    )


def accuracy_constants(delta: float = 0.9) -> AccuracyConstants:
    return AccuracyConstants(delta=delta, c_theta=c_theta(delta), c_n=c_n(delta))


def icll(eps: float, delta: float) -> float:
    """Inverse cumulative of |Lap(eps)|: the radius containing mass ``delta``."""
    _check_eps(eps)
    return c_theta(delta) / eps


def icpl(eps: float, delta: float) -> float:
    """Inverse cumulative of the planar Laplace radius at level ``delta``."""
    _check_eps(eps)
    return c_n(delta) / eps


def linear_laplace_sample(eps: float, rng: np.random.Generator) -> float:
    """One draw from the density (eps/2) exp(-eps |t|)."""
    _check_eps(eps)
    return float(rng.laplace(0.0, 1.0 / eps))


def planar_laplace_radius(eps: float, u: float) -> float:
    """Inverse of C(r) at probability ``u``; bisection on [0, 50/eps] to 1e-10 m."""
    _check_eps(eps)
    target = 1.0 - u
    return _bisect_decreasing(
        lambda r: planar_radius_survival(eps * r) - target, 0.0, RADIUS_SEARCH_SPAN / eps, 1e-10
    )


def planar_laplace_radii(eps: float, u: np.ndarray, iterations: int = 200) -> np.ndarray:
    """Vectorised :func:`planar_laplace_radius` for an array of probabilities."""
    _check_eps(eps)
    target = 1.0 - np.asarray(u, dtype=float)
    lo = np.zeros_like(target)
    hi = np.full_like(target, RADIUS_SEARCH_SPAN / eps)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        above = (1.0 + eps * mid) * np.exp(-eps * mid) > target
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
        if np.max(hi - lo) <= 1e-10:
            break
    return 0.5 * (lo + hi)


def planar_laplace_sample(eps: float, center: Sequence[float], rng: np.random.Generator) -> PlanarPoint:
    """Planar Laplace noise around ``center``: uniform angle, then radius by CDF inversion."""
    _check_eps(eps)
    theta = rng.uniform(0.0, 2.0 * math.pi)
    r = planar_laplace_radius(eps, rng.random())
    return PlanarPoint(center[0] + r * math.cos(theta), center[1] + r * math.sin(theta))


def planar_laplace_polar(eps: float, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """``n`` (radius, angle) pairs, drawn in the same order as :func:`planar_laplace_sample`."""
    _check_eps(eps)
    draws = rng.random((n, 2))
    theta = 2.0 * math.pi * draws[:, 0]
    return planar_laplace_radii(eps, draws[:, 1]), theta
