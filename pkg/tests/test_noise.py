import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from geopm.errors import InvalidInputError, InvalidParameterError, UnboundedAccuracyError
from geopm.noise import (
    GeoFix,
    PlanarPoint,
    accuracy_constants,
    c_n,
    c_theta,
    euclid,
    icll,
    icpl,
    linear_laplace_sample,
    make_rng,
    planar_laplace_polar,
    planar_laplace_radius,
    planar_laplace_sample,
    planar_radius_cdf,
    project,
    step_sigma,
    trace_dinf,
)

EPS_GEO = math.log(10) / 100


def lambert_cn(delta):
    # independent closed form: (1 + c) e^-c = 1 - delta  <=>  c = -1 - W_{-1}(-(1 - delta)/e)
    return float(-1.0 - special.lambertw(-(1.0 - delta) / math.e, k=-1).real)


class TestProject:
    def test_identity(self):
        o = GeoFix(39.9, 116.4)
        assert project(o, o) == (0.0, 0.0)

    def test_east_offset(self):
        # 6371000 * radians(1e-3) * cos(radians(39.9)), evaluated separately
        p = project(GeoFix(39.9, 116.401), GeoFix(39.9, 116.4))
        assert p.x == pytest.approx(85.30487, abs=1e-4)
        assert p.y == 0.0

    def test_north_offset(self):
        p = project(GeoFix(39.901, 116.4), GeoFix(39.9, 116.4))
        assert p.x == 0.0
        assert p.y == pytest.approx(111.19493, abs=1e-4)

    def test_too_far(self):
        with pytest.raises(InvalidInputError):
            project(GeoFix(46.0, 116.4), GeoFix(39.9, 116.4))

    @pytest.mark.parametrize("lat,lon", [(200.0, 0.0), (0.0, 181.0), (-91.0, 0.0)])
    def test_invalid_fix(self, lat, lon):
        with pytest.raises(InvalidInputError):
            GeoFix(lat, lon, 0.0)


@pytest.mark.parametrize(
    "a,b,d", [((0, 0), (0, 0), 0.0), ((0, 0), (3, 4), 5.0), ((1, 1), (4, 5), 5.0)]
)
def test_euclid_examples(a, b, d):
    assert euclid(PlanarPoint(*a), PlanarPoint(*b)) == d


coords = st.floats(-1e6, 1e6, allow_nan=False)
points = st.builds(PlanarPoint, coords, coords)


@settings(max_examples=300)
@given(points, points, points)
def test_euclid_metric_axioms(a, b, c):
    assert euclid(a, b) == euclid(b, a)
    assert euclid(a, c) <= euclid(a, b) + euclid(b, c) + 1e-9


def test_triangle_inequality_bulk():
    rng = np.random.default_rng(3)
    for a, b, c in rng.uniform(-5e4, 5e4, size=(10_000, 3, 2)):
        assert euclid(a, c) <= euclid(a, b) + euclid(b, c) + 1e-9


class TestLinearLaplace:
    def test_deterministic(self):
        assert linear_laplace_sample(1.0, make_rng(5)) == linear_laplace_sample(1.0, make_rng(5))

    def test_distribution(self):
        rng = make_rng(11)
        t = np.array([linear_laplace_sample(1.0, rng) for _ in range(100_000)])
        # closed-form CDF of |T|: 1 - e^(-eps a)
        assert np.mean(np.abs(t) <= math.log(10)) == pytest.approx(0.9, abs=0.01)
        assert -0.02 <= t.mean() <= 0.02
        assert t.var() == pytest.approx(2.0, rel=0.03)

    @pytest.mark.parametrize("eps", [0.0, -1.0])
    def test_bad_eps(self, eps):
        with pytest.raises(InvalidParameterError):
            linear_laplace_sample(eps, make_rng(0))


class TestPlanarLaplace:
    def test_deterministic(self):
        c = PlanarPoint(10.0, -4.0)
        assert planar_laplace_sample(EPS_GEO, c, make_rng(9)) == planar_laplace_sample(EPS_GEO, c, make_rng(9))

    def test_batch_matches_scalar_draw_order(self):
        r, theta = planar_laplace_polar(EPS_GEO, 50, make_rng(4))
        rng = make_rng(4)
        for ri, ti in zip(r, theta):
            p = planar_laplace_sample(EPS_GEO, PlanarPoint(0.0, 0.0), rng)
            assert p.x == pytest.approx(ri * math.cos(ti), abs=1e-7)
            assert p.y == pytest.approx(ri * math.sin(ti), abs=1e-7)

    def test_mean_radius(self):
        r, _ = planar_laplace_polar(EPS_GEO, 100_000, make_rng(1))
        # radius ~ Gamma(shape 2, scale 1/eps)
        assert r.mean() == pytest.approx(2 / EPS_GEO, rel=0.01)

    def test_quantile_at_unit_eps(self):
        r, _ = planar_laplace_polar(1.0, 100_000, make_rng(2))
        assert np.mean(r <= 3.8897) == pytest.approx(0.9, abs=0.01)

    def test_radius_ks(self):
        r, _ = planar_laplace_polar(EPS_GEO, 100_000, make_rng(3))
        ks = stats.kstest(r, lambda v: planar_radius_cdf(EPS_GEO, v)).statistic
        assert ks < 0.01
        assert stats.kstest(r, stats.gamma(2, scale=1 / EPS_GEO).cdf).statistic < 0.01

    def test_angle_uniform(self):
        _, theta = planar_laplace_polar(EPS_GEO, 100_000, make_rng(4))
        counts, _ = np.histogram(theta, bins=36, range=(0, 2 * math.pi))
        assert stats.chisquare(counts).pvalue > 0.001

    def test_scalar_radius_inversion(self):
        for u in (0.0, 0.1, 0.5, 0.9, 0.999999):
            r = planar_laplace_radius(0.5, u)
            assert float(planar_radius_cdf(0.5, r)) == pytest.approx(u, abs=1e-9)

    def test_bad_eps(self):
        with pytest.raises(InvalidParameterError):
            planar_laplace_sample(0.0, PlanarPoint(0, 0), make_rng(0))


class TestInverseCdfs:
    @pytest.mark.parametrize("eps,delta,expected", [(1, 0.9, 2.302585), (2, 0.9, 1.151293), (1, 0, 0.0)])
    def test_icll(self, eps, delta, expected):
        assert icll(eps, delta) == pytest.approx(expected, abs=1e-6)

    @pytest.mark.parametrize("eps,delta,expected", [(1, 0.9, 3.889720), (2, 0.9, 1.944860), (1, 0, 0.0)])
    def test_icpl(self, eps, delta, expected):
        assert icpl(eps, delta) == pytest.approx(expected, abs=1e-5)

    @pytest.mark.parametrize("delta", [0.1, 0.5, 0.9, 0.99])
    def test_icpl_against_oracles(self, delta):
        assert c_n(delta) == pytest.approx(lambert_cn(delta), abs=1e-10)
        assert c_n(delta) == pytest.approx(stats.gamma(2).ppf(delta), abs=1e-9)

    @pytest.mark.parametrize("delta", [0.5, 0.9, 0.99])
    def test_icpl_root_residual(self, delta):
        c = icpl(1.0, delta)
        assert abs((1 + c) * math.exp(-c) - (1 - delta)) <= 1e-9

    @pytest.mark.parametrize("f", [icll, icpl])
    def test_monotone_and_homogeneous(self, f):
        deltas = np.linspace(0.01, 0.99, 50)
        vals = [f(1.0, d) for d in deltas]
        assert all(a < b for a, b in zip(vals, vals[1:]))
        for k in (0.5, 2.0, 4.0, 1024.0):
            assert f(k * 0.3, 0.9) == f(0.3, 0.9) / k
        for k in (3.0, 7.0, 0.1):
            assert f(k * 0.3, 0.9) == pytest.approx(f(0.3, 0.9) / k, rel=1e-15)

    @pytest.mark.parametrize("f", [icll, icpl])
    def test_errors(self, f):
        with pytest.raises(UnboundedAccuracyError):
            f(1.0, 1.0)
        with pytest.raises(InvalidParameterError):
            f(0.0, 0.5)
        with pytest.raises(InvalidParameterError):
            f(1.0, -0.1)

    def test_accuracy_constants(self):
        for delta in (0.5, 0.7, 0.9, 0.99):
            ac = accuracy_constants(delta)
            assert ac.c_theta > 0 and ac.c_n > ac.c_theta
        assert accuracy_constants(0.9).c_theta == c_theta(0.9)


class TestTraceMetrics:
    def test_dinf(self):
        a = [PlanarPoint(0, 0), PlanarPoint(0, 0), PlanarPoint(0, 0)]
        b = [PlanarPoint(3, 4), PlanarPoint(12, 0), PlanarPoint(0, 3)]
        assert trace_dinf(a, a) == 0
        assert trace_dinf(a, b) == 12
        assert trace_dinf([PlanarPoint(1, 1)], [PlanarPoint(4, 5)]) == 5

    def test_dinf_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            trace_dinf([PlanarPoint(0, 0)], [])

    def test_step_sigma(self):
        assert step_sigma([PlanarPoint(2, 2)] * 5) == 0
        assert step_sigma([PlanarPoint(10 * i, 0) for i in range(6)]) == 10
        assert step_sigma([PlanarPoint(0, 0), PlanarPoint(3, 0), PlanarPoint(3, 5)]) == 4
        with pytest.raises(InvalidInputError):
            step_sigma([PlanarPoint(0, 0)])
