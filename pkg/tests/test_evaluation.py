import io
import math
from dataclasses import replace

import numpy as np
import pytest

from geopm.budget import ManagerConfig
from geopm.errors import InvalidInputError
from geopm.evaluation import (
    METRICS_CSV_FIELDS,
    _log_p_easy_hard,
    _task,
    accuracy_bound,
    adversarial_errors,
    aggregate,
    alpha_accuracy,
    im_spec,
    mechanism_suite,
    pm_spec,
    run_experiment,
    run_rate,
    trace_error,
    verify_test_privacy,
    write_metrics_csv,
)
from geopm.mechanism import EASY, HARD, ReportedStep, Run, Skip, independent_mechanism
from geopm.noise import PlanarPoint, c_n, make_rng
from geopm.traces import QueryTrace, synth_trace

P = PlanarPoint
EPS = math.log(10) / 100


class TestTraceError:
    def test_examples(self):
        assert trace_error([P(1, 1)] * 3, [P(1, 1)] * 3) == 0
        assert trace_error([P(0, 0), P(0, 0)], [P(3, 0), P(0, 5)]) == 4
        assert trace_error([P(0, 0)], [P(7, 0)]) == 7

    def test_errors(self):
        with pytest.raises(InvalidInputError):
            trace_error([P(0, 0)], [])
        with pytest.raises(InvalidInputError):
            trace_error([], [])


class TestAlphaAccuracy:
    def test_examples(self):
        assert alpha_accuracy(range(1, 11), 0.9) == 9
        assert alpha_accuracy([4.2] * 7, 0.9) == 4.2
        assert alpha_accuracy([3, 9, 1, 5], 1.0) == 9

    def test_definition(self):
        rng = np.random.default_rng(0)
        for n in (1, 2, 9, 10, 11, 137):
            e = rng.exponential(size=n)
            for delta in (0.1, 0.5, 0.9, 0.99):
                a = alpha_accuracy(e, delta)
                assert np.mean(e <= a) >= delta
                assert all(np.mean(e <= v) < delta for v in e if v < a)

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            alpha_accuracy([], 0.9)


class TestRunRate:
    def test_im(self):
        run = independent_mechanism([P(0, 0)] * 12, 0.003, make_rng(0))
        assert run_rate(run) == pytest.approx(0.003, rel=1e-15)

    def test_all_easy(self):
        run = Run([ReportedStep(P(0, 0), EASY, 0.002, 0.0)] * 5)
        assert run_rate(run) == pytest.approx(0.002)

    def test_forced_easy_only(self):
        assert run_rate(Run([ReportedStep(P(0, 0), EASY, 0.0, 0.0, Skip.FORCED_EASY)] * 4)) == 0

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            run_rate(Run())


class TestVerifyTestPrivacy:
    def test_degenerate_grid(self):
        assert verify_test_privacy(1.0, 5.0, 0.0, 10.0) == 0.0

    def test_default_scale_grid(self):
        assert verify_test_privacy(1.0, 1852.0, 5000.0, 10.0) <= 1e-9

    @pytest.mark.parametrize("eps_theta", [0.0005, 0.0015, 0.003])
    def test_doubling_eps(self, eps_theta):
        assert verify_test_privacy(eps_theta, 1852.0, 5000.0, 10.0) <= 1e-9
        assert verify_test_privacy(2 * eps_theta, 1852.0, 5000.0, 10.0) <= 1e-9

    def test_detects_a_leaky_test(self):
        # claiming half the budget actually used must show a violation
        d = np.arange(0, 5001, 10.0)
        le, _ = _log_p_easy_hard(0.002, 1852.0, d)
        excess = np.abs(le[:, None] - le[None, :]) - 0.001 * np.abs(d[:, None] - d[None, :])
        assert excess.max() > 0.1


def test_utility_bound_against_adversary():
    errors, bound = adversarial_errors(ManagerConfig(), 10_000, seed=1)
    eps_theta, eps_n, l = 0.9 * 2.302585 / 3000 * 2.25, c_n(0.9) / 3000, 1851.85
    assert bound == pytest.approx(accuracy_bound(eps_theta, eps_n, l), rel=1e-5)
    assert np.mean(np.array(errors) <= bound) >= 0.89


def static_traces(n=30):
    return [synth_trace("static", n, 60.0, make_rng(0))]


class TestRunExperiment:
    def test_static_prediction_rate(self):
        cfg = ManagerConfig()
        rows = run_experiment(static_traces(), [pm_spec(cfg, True)], 3, repeats=100)
        assert rows[0].prediction_rate >= 0.9

    def test_uncorrelated_trace_wastes_budget(self):
        cfg = ManagerConfig()
        trace = [synth_trace("uniform", 30, 60.0, make_rng(1))]
        pm, im = run_experiment(trace, [pm_spec(cfg, False), im_spec(cfg)], 3, repeats=100)
        assert pm.mean_rate > im.mean_rate

    def test_pooled_prediction_rate_identity(self):
        trace = [synth_trace("random_walk", 40, 600.0, make_rng(2), step_sigma=900)]
        spec = pm_spec(ManagerConfig(), True)
        stats = [_task((spec, trace[0], 9, (k,))) for k in range(20)]
        row = aggregate(spec, 0.0, stats)
        steps = sum(s.steps for s in stats)
        assert row.prediction_rate == pytest.approx(1 - sum(s.hard for s in stats) / steps, abs=1e-15)

    @pytest.mark.parametrize("mode", ["fixed_rate", "fixed_utility"])
    def test_im_invariants(self, mode):
        cfg = ManagerConfig(mode=mode)
        spec = im_spec(cfg)
        (row,) = run_experiment(static_traces(60), [spec], 5, repeats=10)
        assert row.mean_rate == pytest.approx(spec.eps_n, rel=1e-12)
        expected = math.floor(cfg.eps_total / spec.eps_n * (1 + 1e-12))
        assert row.queries_covered == expected
        assert expected == (30 if mode == "fixed_rate" else 17)
        assert row.prediction_rate == 0 and row.test_budget_frac == 0

    def test_suite_shape_and_csv(self):
        traces = []
        for p in (0.0, 0.5):
            qt = synth_trace("random_walk", 20, 60.0, make_rng(int(p * 10)))
            traces.append(QueryTrace("u", qt.points, qt.times, prior_p=p))
        traces.append(QueryTrace("empty", [], [], prior_p=0.5))
        rows = run_experiment(traces, mechanism_suite(ManagerConfig()), 1)
        assert len(rows) == 12
        names = {(r.mechanism, r.skip) for r in rows}
        assert len([n for n in names if n[0].startswith("PM")]) == 4
        assert len([n for n in names if n[0].startswith("IM")]) == 2
        for r in rows:
            assert r.alpha90 >= 0
            for frac in (r.prediction_rate, r.skipped_frac, r.test_budget_frac):
                assert 0 <= frac <= 1
        buf = io.StringIO()
        write_metrics_csv(rows, buf)
        lines = buf.getvalue().splitlines()
        assert lines[0].split(",") == METRICS_CSV_FIELDS
        assert len(lines) == 13

    def test_pm_rows_stay_within_budget(self):
        traces = [synth_trace(k, 60, 300.0, make_rng(i)) for i, k in enumerate(["static", "random_walk", "uniform"])]
        for spec in mechanism_suite(ManagerConfig()):
            for i, qt in enumerate(traces):
                for rep in range(10):
                    assert _task((spec, qt, 2, (i, rep))).spent <= EPS * (1 + 1e-12)

    def test_worker_count_does_not_change_rows(self):
        traces = [synth_trace("random_walk", 25, 120.0, make_rng(i)) for i in range(4)]
        specs = mechanism_suite(ManagerConfig())
        assert run_experiment(traces, specs, 11, jobs=1) == run_experiment(traces, specs, 11, jobs=3)
