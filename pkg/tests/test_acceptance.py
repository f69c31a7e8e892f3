import math

import numpy as np
import pytest

from ghoststat.core.analysis import RegionStats
from ghoststat.core.estimators import Estimator
from ghoststat.core.imaging import make_test_card
from ghoststat.core.stochastic import DistributionSpec, TransformSpec
from ghoststat.core.theory import compute_moments, predict
from ghoststat.doctor.acceptance import FULL, QUICK, AcceptanceSuite, CheckResult, _with_c1_sign_error


@pytest.fixture(scope="module")
def quick_suite():
    return AcceptanceSuite(quick=True, seed=4321, threads=2)


def test_check_result_icons():
    assert CheckResult("a", "1", "pass", "").icon == "✓"
    assert CheckResult("a", "1", "warn", "").icon == "⚠"
    assert CheckResult("a", "1", "fail", "").icon == "✗"
    assert CheckResult("a", "1", "odd", "").to_dict()["status"] == "odd"


def test_scales():
    assert QUICK.width * QUICK.height < FULL.width * FULL.height
    assert QUICK.T < FULL.T
    assert FULL.r2_delta == 0.999


def test_sign_error_flips_slopes():
    image = make_test_card(8, 8, (0.0, 0.4, 0.7, 1.0))
    prediction = predict(compute_moments(DistributionSpec.uniform(0.1, 1.0), TransformSpec()), image, 1.0, 100)
    flipped = _with_c1_sign_error(prediction)
    assert flipped.constants.C1 == -prediction.constants.C1
    for estimator in (Estimator.DELTA_G2, Estimator.NORMALIZED_G2, Estimator.DGI):
        slope, _ = prediction.line(estimator)
        flipped_slope, _ = flipped.line(estimator)
        assert flipped_slope == pytest.approx(-slope)
    assert flipped.mean(Estimator.G2, 0.0) == prediction.mean(Estimator.G2, 0.0)
    # the original is left alone
    assert prediction.constants.C1 > 0


def test_centered_identity_holds(quick_suite):
    result = quick_suite._check_identity()
    assert result.status == "pass", result.message
    assert set(result.details) >= {"sim/identity", "sim/log", "exp/identity", "exp/exp"}


def test_determinism_holds(quick_suite):
    result = quick_suite._check_determinism()
    assert result.status == "pass", result.message
    assert result.details["buckets_identical"]


def test_moment_oracle_covers_shipped_pairs(quick_suite):
    result = quick_suite._check_moment_oracle()
    assert len(result.details) == 7
    assert all(v["worst_z"] < 10 for v in result.details.values())


def test_injected_sign_error_fails_linearity():
    suite = AcceptanceSuite(quick=True, seed=4321, threads=2, inject_c1_sign_error=True)
    result = suite._check_linear_mean()
    assert result.status == "fail"
    assert result.details["slope_rel_error"] == pytest.approx(2.0, abs=0.2)


def test_progress_messages_and_summary():
    messages = []
    suite = AcceptanceSuite(quick=True, seed=4321, threads=2, on_progress=messages.append)
    suite._results = [suite._check_linear_mean()]
    assert any("Simulating" in m for m in messages)
    summary = suite.get_summary()
    assert summary["scale"] == "quick"
    assert summary["total"] == 1
    assert summary["passed"] + summary["failed"] == 1
    assert summary["healthy"] == (summary["failed"] == 0)
    assert summary["worker"]["completed"] > 0
    assert summary["worker"]["active"] == 0


def test_errors_become_failed_checks(monkeypatch):
    suite = AcceptanceSuite(quick=True)

    def boom():
        raise RuntimeError("broken")

    for name in ("_check_linear_mean", "_check_transform_universality", "_check_gaussian_shape",
                 "_check_variance_formula", "_check_noise_extension", "_check_g2_dgi_means",
                 "_check_identity", "_check_moment_oracle", "_check_determinism"):
        monkeypatch.setattr(suite, name, boom)
    results = suite.run_all()
    assert len(results) == 9
    assert all(r.status == "fail" and r.category == "error" for r in results)
    assert "broken" in results[0].message
    assert not suite.get_summary()["healthy"]


def _line_stats(prediction, slope_factor=1.0, intercept_offset=0.0, spread=1e-4, count=10):
    slope, intercept = prediction.line(Estimator.DELTA_G2)
    return [
        RegionStats(
            level=d, count=count, mean=intercept + intercept_offset + slope_factor * slope * d, variance=spread,
            bin_edges=np.zeros(2), probabilities=np.ones(1), sigma2=spread,
        )
        for d in (0.0, 0.4, 0.7, 1.0)
    ]


@pytest.fixture
def card_prediction():
    image = make_test_card(8, 8, (0.0, 0.4, 0.7, 1.0))
    return predict(compute_moments(DistributionSpec.uniform(0.1, 1.0), TransformSpec()), image, 1.0, 1000)


def test_full_scale_slope_bound_is_fixed(card_prediction):
    # 3% off lies inside four fit standard errors but outside the 2% bound
    stats = _line_stats(card_prediction, slope_factor=1.03)
    ok, report, details = AcceptanceSuite()._linearity(stats, Estimator.DELTA_G2, card_prediction, 0.02, 0.999)
    assert report.slope_rel_error == pytest.approx(0.03, rel=1e-6)
    assert details["slope_tolerance"] == 0.02
    assert 4.0 * report.slope_se / abs(report.predicted_slope) > 0.03
    assert not ok

    ok, _, details = AcceptanceSuite(quick=True)._linearity(stats, Estimator.DELTA_G2, card_prediction, 0.02, 0.999)
    assert details["slope_tolerance"] > 0.03
    assert ok


def test_full_scale_intercept_bound_is_fixed(card_prediction):
    base_error = math.sqrt(1e-4 / 10)
    stats = _line_stats(card_prediction, intercept_offset=3.0 * base_error)
    ok, report, details = AcceptanceSuite()._linearity(stats, Estimator.DELTA_G2, card_prediction, 0.02, 0.999, True)
    assert details["intercept_bound"] == pytest.approx(2.0 * base_error)
    assert 4.0 * report.intercept_se > report.intercept_error
    assert not ok

    ok, _, _ = AcceptanceSuite(quick=True)._linearity(stats, Estimator.DELTA_G2, card_prediction, 0.02, 0.999, True)
    assert ok


def test_full_scale_gaussian_shape_uses_the_main_frame_count(monkeypatch):
    suite = AcceptanceSuite()
    frame_counts = []

    class Stop(Exception):
        pass

    def record(image, dist, T, seed, *args, **kwargs):
        frame_counts.append(T)
        raise Stop

    monkeypatch.setattr(suite, "_simulate", record)
    with pytest.raises(Stop):
        suite._check_gaussian_shape()
    assert frame_counts == [FULL.T] == [100_000]
    assert FULL.gaussian_reps == 20
