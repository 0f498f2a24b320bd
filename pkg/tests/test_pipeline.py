import io
import json
import math

import mpmath
import numpy as np
import pytest

from ectstab.bounds import interpolation_bound
from ectstab.complex import closed_curve, epsilon_density, make_directions
from ectstab.ect import ect_distance
from ectstab.errors import DegenerateCurveError, RadiusError, ValidationError
from ectstab.gp import posterior_mean_derivative
from ectstab.pipeline import (
    PRESETS,
    ArcLengthTable,
    ExperimentConfig,
    FourierCurve,
    NoisySamples,
    estimate_ect,
    reparameterize,
    run_consistency_experiment,
    sample_noisy,
    smooth,
    truth_field,
)

TWO_PI = 2 * math.pi


def warped_circle_samples(n):
    """Unit circle traversed at speed 1 + 0.3 cos t, sampled without noise."""
    t = TWO_PI * np.arange(n) / n
    w = t + 0.3 * np.sin(t)
    return NoisySamples(t, np.column_stack([np.cos(w), np.sin(w)]), 0.0)


class TestFourierCurve:
    def test_circle(self):
        c = PRESETS["circle"]
        assert c.curvature_bound() == pytest.approx(1.0, rel=1e-12)
        assert c.length() == pytest.approx(TWO_PI, rel=1e-12)
        assert np.allclose(c.eval([0.0, math.pi / 2]), [[1, 0], [0, 1]], atol=1e-15)

    @pytest.mark.parametrize("r", [0.25, 3.0])
    def test_scaled_circle(self, r):
        c = FourierCurve.from_mapping({1: r})
        assert c.curvature_bound() == pytest.approx(1 / r, rel=1e-12)
        assert c.length() == pytest.approx(TWO_PI * r, rel=1e-12)

    def test_ellipse(self):
        c = PRESETS["ellipse"]
        mpmath.mp.dps = 30
        oracle = float(8 * mpmath.ellipe(mpmath.mpf(3) / 4))
        assert c.length() == pytest.approx(oracle, rel=1e-10)
        assert c.length() == pytest.approx(9.68844822054767619, rel=1e-10)
        # a / b^2 at the ends of the minor axis
        assert c.curvature_bound() == pytest.approx(2.0, rel=1e-10)

    def test_curvature_matches_finite_differences(self):
        c = PRESETS["blob"]
        t = np.linspace(0, TWO_PI, 50)
        h = 1e-4
        d1 = (c.eval(t + h) - c.eval(t - h)) / (2 * h)
        d2 = (c.eval(t + h) - 2 * c.eval(t) + c.eval(t - h)) / h**2
        kap = np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / np.linalg.norm(d1, axis=1) ** 3
        assert np.allclose(kap, c.curvature(t), rtol=1e-5)

    def test_blob_is_simple_and_bounded(self):
        c = PRESETS["blob"]
        assert c.is_simple()
        assert c.radius() < 2.0
        assert 0 < c.curvature_bound() < 10

    def test_figure_eight_is_not_simple(self):
        assert not FourierCurve.from_mapping({1: 1.0, 2: 1.0}).is_simple()

    def test_degenerate(self):
        with pytest.raises(DegenerateCurveError):
            FourierCurve.from_mapping({0: 1.0}).length()

    def test_json_round_trip(self):
        c = PRESETS["blob"]
        assert FourierCurve.from_json(json.loads(json.dumps(c.to_json()))) == c
        assert FourierCurve.from_json({"1": [1.0, 0.0]}) == PRESETS["circle"]
        with pytest.raises(ValidationError):
            FourierCurve.from_json({"coefficients": [{"re": 1}]})


class TestSampling:
    def test_exact_without_noise(self):
        s = sample_noisy(PRESETS["ellipse"], 10, 0.0, seed=1)
        assert np.array_equal(s.points, PRESETS["ellipse"].eval(s.params))
        assert np.allclose(s.params, TWO_PI * np.arange(10) / 10, rtol=0, atol=0)

    def test_deterministic(self):
        a = sample_noisy(PRESETS["blob"], 30, 0.1, seed=5)
        b = sample_noisy(PRESETS["blob"], 30, 0.1, seed=5)
        assert json.dumps(a.to_json()) == json.dumps(b.to_json())

    def test_noise_variance(self):
        sigma = 0.3
        s = sample_noisy(PRESETS["circle"], 10_000, sigma, seed=2)
        resid = s.points - PRESETS["circle"].eval(s.params)
        assert np.all(np.abs(resid.var(axis=0) / sigma**2 - 1) < 0.05)

    def test_rejects_small_n(self):
        with pytest.raises(ValueError):
            sample_noisy(PRESETS["circle"], 2, 0.1)
        with pytest.raises(ValueError):
            sample_noisy(PRESETS["circle"], 5, -1.0)


class TestSmooth:
    def test_near_interpolation(self):
        curve = FourierCurve.from_mapping({-1: 0.3, 1: 1.0, 2: 0.2j})
        s = sample_noisy(curve, 24, 0.0)
        sc = smooth(s, sigma2=1e-10)
        assert np.abs(sc.eval(s.params) - s.points).max() < 1e-4

    def test_beats_raw_samples(self):
        curve = PRESETS["blob"]
        wins = 0
        for seed in range(50):
            s = sample_noisy(curve, 20, 0.002, seed=seed)
            truth = curve.eval(s.params)
            raw = np.linalg.norm(s.points - truth, axis=1).max()
            est = np.linalg.norm(smooth(s).eval(s.params) - truth, axis=1).max()
            wins += est < raw
        assert wins >= 45

    def test_constant_curve_shrinks(self):
        c0 = 0.5 + 0.2j
        t = TWO_PI * np.arange(20) / 20
        s = NoisySamples(t, np.tile([c0.real, c0.imag], (20, 1)), 1.0)
        est = smooth(s).eval(np.linspace(0, TWO_PI, 97))
        assert np.ptp(est, axis=0).max() < 1e-3
        ratio = est.mean(axis=0) / [c0.real, c0.imag]
        assert np.all(ratio < 1) and np.all(ratio > 0.5)
        assert np.allclose(ratio[0], ratio[1], rtol=1e-12)

    def test_needs_two_parameters(self):
        with pytest.raises(ValueError):
            smooth(NoisySamples(np.zeros(3), np.ones((3, 2)), 0.1))


class TestReparameterize:
    def test_constant_speed_is_identity(self):
        tab = ArcLengthTable.from_speed(PRESETS["circle"].speed)
        u = np.linspace(0, 1, 1001)
        assert np.abs(tab.param_at(u) - TWO_PI * u).max() < 1e-6
        assert tab.length == pytest.approx(TWO_PI, rel=1e-12)

    def test_smoothed_circle_is_nearly_identity(self):
        sc = reparameterize(smooth(sample_noisy(PRESETS["circle"], 40, 0.0), sigma2=1e-10))
        u = np.linspace(0, 1, 1001)
        assert np.abs(sc.table.param_at(u) - TWO_PI * u).max() < 1e-6

    def test_warped_circle(self):
        # analytic table: s(t) = (t + 0.3 sin t) / (2 pi)
        tab = ArcLengthTable.from_speed(lambda t: 1 + 0.3 * np.cos(t))
        t = np.linspace(0, TWO_PI, 777)
        assert np.abs(tab.arc_at(t) - (t + 0.3 * np.sin(t)) / TWO_PI).max() < 1e-6
        assert tab.length == pytest.approx(TWO_PI, rel=1e-8)

    def test_smoothed_warped_circle_constant_speed(self):
        sc = smooth(warped_circle_samples(64), sigma2=1e-10)
        before = sc.speed(np.linspace(0, TWO_PI, 400))
        assert before.max() / before.min() > 1.5
        rp = reparameterize(sc)
        pts = rp.points(512)
        seg = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
        assert seg.max() / seg.min() - 1 < 0.01
        t = rp.probes(512)
        assert np.abs(np.diff(rp.table.arc_at(t)) - 1 / 512).max() < 0.01 / 512

    def test_length_preserved(self):
        curve = PRESETS["blob"]
        L = curve.length()
        assert curve.arc_table().length == pytest.approx(L, rel=1e-8)
        sc = reparameterize(smooth(sample_noisy(curve, 100, 0.0), sigma2=1e-10))
        assert sc.length == pytest.approx(L, rel=1e-6)

    def test_vanishing_speed(self):
        with pytest.raises(DegenerateCurveError):
            ArcLengthTable.from_speed(lambda t: np.abs(np.sin(t)))


class TestEstimateEct:
    def setup_method(self):
        self.sc = reparameterize(smooth(sample_noisy(PRESETS["circle"], 40, 0.0), sigma2=1e-10))

    def test_circle_pattern(self):
        fld = estimate_ect(self.sc, 256, make_directions(2, 16, 0), 2.0)
        assert fld.meta["m_points"] == 256
        for c in fld.curves:
            assert c.values.tolist() == [0, 1, 0]
            assert np.allclose(c.breakpoints, [-1, 1], atol=1e-3)

    def test_refinement_is_cauchy(self):
        # the blob avoids the exact vertex/direction alignments of the circle
        sc = reparameterize(smooth(sample_noisy(PRESETS["blob"], 60, 0.0), sigma2=1e-10))
        dirs = make_directions(2, 32, 0)
        fields = [estimate_ect(sc, m, dirs, 2.0) for m in (32, 64, 128, 256, 512)]
        gaps = [ect_distance(a, b) for a, b in zip(fields, fields[1:])]
        assert all(b < a for a, b in zip(gaps, gaps[1:]))

    def test_radius_too_small(self):
        with pytest.raises(RadiusError):
            estimate_ect(self.sc, 64, make_directions(2, 4), 0.5)
        with pytest.raises(ValueError):
            estimate_ect(self.sc, 2, make_directions(2, 4), 2.0)

    def test_truth_reference_eps(self):
        fld = truth_field(PRESETS["circle"], make_directions(2, 4), 2.0, 1024)
        assert fld.meta["reference_eps"] == pytest.approx(2 * math.sin(math.pi / 1024), rel=1e-6)

    def test_reparameterization_invariance(self):
        curve = PRESETS["blob"]
        sc = smooth(sample_noisy(curve, 100, 0.0), sigma2=1e-10)
        rp = reparameterize(sc)
        dirs = make_directions(2, 64, 0)
        m = 256
        total, bounds = 0.0, []
        t = np.linspace(0, TWO_PI, 4096, endpoint=False)
        d1 = posterior_mean_derivative(sc.model, t)
        d2 = posterior_mean_derivative(sc.model, t, order=2)
        M = float((np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / np.linalg.norm(d1, axis=1) ** 3).max())
        for s in (sc, rp):
            cx, emb = closed_curve(s.points(m))
            bounds.append(interpolation_bound(M, rp.length, epsilon_density(cx, emb)))
        d = ect_distance(estimate_ect(sc, m, dirs, 2.0), estimate_ect(rp, m, dirs, 2.0))
        assert 0 < d <= sum(bounds)


def small_config(**kw):
    base = dict(ns=(20, 50), seeds=(0, 1, 2), directions=16, m_points=128, posterior_samples=2, truth_points=1024)
    base.update(kw)
    return ExperimentConfig(**base)


class TestExperiment:
    def test_deterministic_csv(self):
        a = run_consistency_experiment(small_config()).to_csv()
        b = run_consistency_experiment(small_config()).to_csv()
        assert a == b
        lines = a.splitlines()
        assert lines[0] == "n,seed,kind,ect_dist,sect_dist,sup_gap,arc_length"
        assert len(lines) == 1 + 2 * 3 * 3
        assert lines[1].startswith("20,0,estimate,") and lines[2].startswith("20,0,posterior_0,")

    def test_workers_do_not_change_csv(self):
        assert (run_consistency_experiment(small_config()).to_csv()
                == run_consistency_experiment(small_config(workers=2)).to_csv())

    def test_stream_matches_result(self):
        buf = io.StringIO()
        res = run_consistency_experiment(small_config(ns=(20,), seeds=(4,)), csv_stream=buf)
        assert buf.getvalue() == res.to_csv()

    def test_sect_ect_relation(self):
        cfg = small_config(a=2.0)
        res = run_consistency_experiment(cfg)
        for r in res.rows:
            assert r.sect_dist <= (2 * cfg.a + 1) * r.ect_dist + 1e-9

    def test_noiseless_below_interpolation_bound(self):
        cfg = ExperimentConfig(sigma=0.0, ns=(200,), seeds=(0,), directions=64, posterior_samples=0)
        res = run_consistency_experiment(cfg)
        curve = PRESETS["blob"]
        (row,) = res.rows
        cx, emb = closed_curve(curve.constant_speed_points(cfg.m_points))
        bound = interpolation_bound(curve.curvature_bound(), curve.length(), epsilon_density(cx, emb))
        bound += interpolation_bound(curve.curvature_bound(), curve.length(), res.truth["reference_eps"])
        assert 0 < row.ect_dist <= bound
        assert row.arc_length == pytest.approx(curve.length(), rel=1e-6)

    def test_summary(self):
        res = run_consistency_experiment(small_config(posterior_samples=0))
        s = res.summary()
        assert set(s["per_n"]) == {"20", "50"}
        assert s["per_n"]["20"]["runs"] == 3
        assert s["failures"] == []
        assert s["truth"]["reference_points"] == 1024

    def test_failures_are_marked(self):
        # a barely covers the true curve, so some noisy estimates leave the ball
        a = PRESETS["blob"].radius() * 1.001
        res = run_consistency_experiment(small_config(a=a, sigma=0.05, ns=(20,), seeds=tuple(range(6))))
        assert res.failures
        failed = {f["seed"] for f in res.failures}
        assert all("RadiusError" in f["error"] for f in res.failures)
        for seed in range(6):
            rows = [r for r in res.rows if r.seed == seed]
            if seed in failed:
                assert len(rows) == 1 and rows[0].kind == "estimate" and math.isnan(rows[0].ect_dist)
            else:
                assert len(rows) == 3 and all(math.isfinite(r.ect_dist) for r in rows)
        assert ",nan," in res.to_csv()

    def test_truth_outside_radius_raises(self):
        with pytest.raises(RadiusError):
            run_consistency_experiment(small_config(a=0.5))

    def test_config_validation(self):
        with pytest.raises(ValidationError, match="unknown config keys"):
            ExperimentConfig.from_dict({"bogus": 1})
        with pytest.raises(ValidationError):
            ExperimentConfig(ns=(2,))
        with pytest.raises(ValidationError):
            ExperimentConfig(curve="nope")
        cfg = ExperimentConfig.from_dict(small_config().to_dict())
        assert cfg == small_config()


@pytest.fixture(scope="module")
def summary():
    cfg = ExperimentConfig(ns=(20, 50, 100, 200), posterior_samples=0)
    return run_consistency_experiment(cfg).summary()["per_n"]


class TestConsistencyTrend:
    def test_ect_distance_nonincreasing(self, summary):
        med = [summary[n]["median_ect_dist"] for n in ("20", "50", "100", "200")]
        inversions = [(a, b) for a, b in zip(med, med[1:]) if b > a]
        assert len(inversions) <= 1
        assert all(b <= 1.05 * a for a, b in inversions)

    def test_arc_length_converges(self, summary):
        err = [summary[n]["median_length_error"] for n in ("20", "50", "100", "200")]
        assert all(b < a for a, b in zip(err, err[1:]))
