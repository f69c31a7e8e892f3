import math

import numpy as np
import pytest

from ghoststat.core.errors import (
    FormatError,
    InsufficientSamplesError,
    ParameterError,
    ShapeMismatchError,
)
from ghoststat.core.forward import (
    MeasurementRun,
    NoiseModel,
    SeededPatternSource,
    bucket_signal,
    estimate_noise_moments,
    reference_bucket,
    simulate_run,
)
from ghoststat.core.imaging import GrayImage, PatternFrame, make_test_card
from ghoststat.core.stochastic import sample_block
from ghoststat.core.worker import FrameWorker


class TestBucketSignal:
    def test_opaque_object_is_dark(self):
        assert bucket_signal(GrayImage(2, 1, [0.0, 0.0]), PatternFrame([0.3, 0.9]), 1.0) == 0.0

    def test_gain_and_sum(self):
        assert bucket_signal(GrayImage(2, 1, [1.0, 1.0]), PatternFrame([0.2, 0.3]), 2.0) == pytest.approx(1.0)

    def test_gray_object(self):
        assert bucket_signal(GrayImage(2, 1, [0.4, 0.7]), PatternFrame([1.0, 1.0]), 1.0) == pytest.approx(1.1)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            bucket_signal(GrayImage(2, 1, [0.4, 0.7]), PatternFrame([1.0]), 1.0)

    def test_gain_must_be_positive(self):
        with pytest.raises(ParameterError):
            bucket_signal(GrayImage(1, 1, [0.4]), PatternFrame([1.0]), 0.0)


@pytest.mark.parametrize("frame,expected", [([1.0] * 5, 5.0), ([0.1, 0.9], 1.0), ([0.0, 0.0], 0.0)])
def test_reference_bucket(frame, expected):
    assert reference_bucket(PatternFrame(frame)) == pytest.approx(expected)


class TestNoiseMoments:
    def test_constant(self):
        assert estimate_noise_moments([5, 5, 5]) == (5.0, 0.0)

    def test_unbiased_variance(self):
        assert estimate_noise_moments([0, 2]) == (1.0, 2.0)

    def test_needs_two_samples(self):
        with pytest.raises(InsufficientSamplesError):
            estimate_noise_moments([1.0])

    def test_recovers_detector_noise(self):
        mean, var = 2.0985e6, 1.2260e10
        draws = np.random.default_rng(7).normal(mean, math.sqrt(var), 100_000)
        est_mean, est_var = estimate_noise_moments(draws)
        assert est_mean == pytest.approx(mean, rel=0.01)
        assert est_var == pytest.approx(var, rel=0.03)


class TestNoiseModel:
    def test_none_forces_zero(self):
        noise = NoiseModel.from_dict({"kind": "none", "mean": 3.0})
        assert noise.is_none and noise.mean == 0.0

    def test_negative_variance(self):
        with pytest.raises(ParameterError):
            NoiseModel.gaussian(0.0, -1.0)

    def test_unknown_kind(self):
        with pytest.raises(ParameterError):
            NoiseModel.from_dict({"kind": "poisson"})

    def test_round_trip(self):
        noise = NoiseModel.gaussian(2.0, 0.5)
        assert NoiseModel.from_dict(noise.to_dict()) == noise


class TestSimulateRun:
    def test_buckets_follow_forward_model(self, card, uniform, recipe, serial):
        run = simulate_run(card, uniform, recipe, 50, 2.0, worker=serial)
        expected = 2.0 * (sample_block(uniform, card.M, 0, 50, recipe) @ card.values)
        np.testing.assert_allclose(run.buckets, expected, rtol=1e-12)
        assert run.T == 50 and run.M == card.M

    def test_zero_variance_noise_is_an_offset(self, card, uniform, recipe, serial):
        clean = simulate_run(card, uniform, recipe, 100, 1.0, worker=serial)
        offset = simulate_run(card, uniform, recipe, 100, 1.0, NoiseModel.gaussian(3.5, 0.0), worker=serial)
        np.testing.assert_array_equal(offset.buckets, clean.buckets + 3.5)

    def test_noise_is_reproducible(self, card, uniform, recipe, serial):
        noise = NoiseModel.gaussian(10.0, 4.0)
        a = simulate_run(card, uniform, recipe, 100, 1.0, noise, worker=serial)
        b = simulate_run(card, uniform, recipe, 100, 1.0, noise, worker=serial)
        np.testing.assert_array_equal(a.buckets, b.buckets)

    def test_thread_count_does_not_change_buckets(self, uniform, recipe):
        image = make_test_card(64, 64, [0.0, 0.4, 0.7, 1.0])
        a = simulate_run(image, uniform, recipe, 2000, 1.0, worker=FrameWorker(1))
        b = simulate_run(image, uniform, recipe, 2000, 1.0, worker=FrameWorker(4))
        assert a.buckets.tobytes() == b.buckets.tobytes()

    def test_bucket_mean_matches_theory(self, card, uniform, recipe, serial):
        T = 20_000
        run = simulate_run(card, uniform, recipe, T, 1.0, worker=serial)
        expected = card.total * uniform.mean
        stderr = math.sqrt(card.total_squared * 0.0675 / T)
        assert abs(run.bucket_mean - expected) <= 4 * stderr

    def test_needs_two_frames(self, card, uniform, recipe):
        with pytest.raises(InsufficientSamplesError):
            simulate_run(card, uniform, recipe, 1, 1.0)

    def test_gain_must_be_positive(self, card, uniform, recipe):
        with pytest.raises(ParameterError):
            simulate_run(card, uniform, recipe, 10, -1.0)


class TestMeasurementRun:
    def test_image_must_match_patterns(self, uniform, recipe):
        source = SeededPatternSource(uniform, recipe, 4)
        with pytest.raises(ShapeMismatchError):
            MeasurementRun(1.0, np.ones(3), source, image=GrayImage(3, 1, [0.1, 0.2, 0.3]))

    def test_buckets_must_be_finite(self, uniform, recipe):
        with pytest.raises(ShapeMismatchError):
            MeasurementRun(1.0, np.array([1.0, np.nan]), SeededPatternSource(uniform, recipe, 2))

    def test_stack_needs_enough_frames(self, stack_run):
        with pytest.raises(ShapeMismatchError):
            stack_run(np.ones((2, 3)), [1.0, 2.0, 3.0])

    def test_stack_source_reads_frames(self, stack_run):
        frames = np.array([[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]])
        run = stack_run(frames, [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(run.source.block(1, 3), frames[1:3])
        assert run.source.reference_level == pytest.approx(0.3)
        assert run.distribution is None

    def test_stack_rejects_negative_intensity(self, stack_run):
        run = stack_run(np.array([[0.1, -0.2]]), [1.0])
        with pytest.raises(FormatError):
            run.source.block(0, 1)


class TestLinearity:
    def test_bucket_is_linear_in_the_object(self, uniform, recipe):
        frame = PatternFrame(sample_block(uniform, 6, 0, 1, recipe)[0])
        d1 = GrayImage(3, 2, [0.1, 0.0, 0.3, 0.2, 0.4, 0.0])
        d2 = GrayImage(3, 2, [0.5, 0.6, 0.0, 0.3, 0.1, 0.9])
        summed = GrayImage(3, 2, d1.values + d2.values)
        assert bucket_signal(summed, frame, 1.5) == pytest.approx(
            bucket_signal(d1, frame, 1.5) + bucket_signal(d2, frame, 1.5), rel=1e-12)
        half = GrayImage(3, 2, 0.5 * d2.values)
        assert bucket_signal(half, frame, 1.5) == pytest.approx(0.5 * bucket_signal(d2, frame, 1.5), rel=1e-12)

    def test_bucket_splits_into_pixel_contributions(self, card, uniform, recipe):
        frame = PatternFrame(sample_block(uniform, card.M, 3, 4, recipe)[0])
        dark = GrayImage(card.width, card.height, np.zeros(card.M))
        parts = [bucket_signal(dark.with_pixel(n, card.values[n]), frame, 2.0) for n in range(card.M)]
        assert math.fsum(parts) == pytest.approx(bucket_signal(card, frame, 2.0), rel=1e-12)
        for n in (0, 17, card.M - 1):
            assert parts[n] == pytest.approx(2.0 * card.values[n] * frame.values[n], abs=1e-15)

    def test_simulated_buckets_add_over_objects(self, uniform, recipe, serial):
        d1 = make_test_card(8, 8, (0.0, 0.4))
        d2 = make_test_card(8, 8, (0.1, 0.5))
        summed = GrayImage(8, 8, d1.values + d2.values)
        runs = [simulate_run(image, uniform, recipe, 300, 1.0, worker=serial) for image in (d1, d2, summed)]
        np.testing.assert_allclose(runs[2].buckets, runs[0].buckets + runs[1].buckets, rtol=1e-12)
