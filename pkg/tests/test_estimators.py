import numpy as np
import pytest

from ghoststat.core.errors import (
    DegenerateRunError,
    InsufficientSamplesError,
    ShapeMismatchError,
    TransformDomainError,
)
from ghoststat.core.estimators import (
    CENTERED_FORM,
    CorrAccumulator,
    Estimator,
    accumulate,
    centered_delta_g2,
    identity_deviation,
    reconstruct_all,
    reconstruct_delta_g2,
    reconstruct_delta_g2_centered,
    reconstruct_dgi,
    reconstruct_g2,
    reconstruct_normalized_g2,
)
from ghoststat.core.forward import MeasurementRun, NoiseModel, simulate_run
from ghoststat.core.imaging import make_test_card
from ghoststat.core.stochastic import DistributionSpec, TransformSpec
from ghoststat.core.worker import FrameWorker

IDENTITY = TransformSpec()
SWEEP = [TransformSpec.parse(t) for t in ("identity", "power:3", "exp", "log")]
UNIFORM_VARIANCE = 0.9 ** 2 / 12


class TestEstimatorEnum:
    @pytest.mark.parametrize("text,expected", [
        ("G2", Estimator.G2),
        ("g2", Estimator.NORMALIZED_G2),
        ("DeltaG2", Estimator.DELTA_G2),
        ("delta_g2", Estimator.DELTA_G2),
        ("dgi", Estimator.DGI),
        ("norm_g2", Estimator.NORMALIZED_G2),
    ])
    def test_parse(self, text, expected):
        assert Estimator.parse(text) is expected

    def test_parse_unknown(self):
        with pytest.raises(ValueError):
            Estimator.parse("G3")

    def test_slugs_are_case_distinct(self):
        slugs = [e.slug for e in Estimator]
        assert len({s.lower() for s in slugs}) == len(slugs)


class TestHandComputed:
    def test_g2_single_frame(self, stack_run):
        run = stack_run([[3.0, 4.0]], [2.0])
        np.testing.assert_allclose(reconstruct_g2(run, IDENTITY).values, [6.0, 8.0])

    def test_delta_g2_needs_two_frames(self, stack_run):
        run = stack_run([[3.0, 4.0]], [2.0])
        with pytest.raises(InsufficientSamplesError):
            reconstruct_delta_g2(run, IDENTITY)

    def test_two_frame_covariance(self, stack_run):
        run = stack_run([[1.0], [3.0]], [0.0, 2.0])
        assert reconstruct_delta_g2_centered(run, IDENTITY).values[0] == pytest.approx(1.0)
        assert reconstruct_delta_g2(run, IDENTITY).values[0] == pytest.approx(1.0)

    def test_dgi_hand_value(self, stack_run):
        # S = [1, 3], S_R = [1, 2], F = [0.5, 1.5]: cov(S,F)=0.5, cov(S_R,F)=0.25, <S>/<S_R>=4/3
        run = stack_run([[0.5, 0.5], [1.5, 0.5]], [1.0, 3.0])
        values = reconstruct_dgi(run, IDENTITY).values
        assert values[0] == pytest.approx(0.5 - (4.0 / 3.0) * 0.25)
        assert values[1] == pytest.approx(0.0, abs=1e-15)

    def test_constant_buckets(self, stack_run, uniform, recipe):
        from ghoststat.core.stochastic import sample_block

        frames = sample_block(uniform, 6, 0, 50, recipe)
        run = stack_run(frames, np.full(50, 3.0))
        np.testing.assert_array_equal(reconstruct_delta_g2(run, IDENTITY).values, np.zeros(6))
        np.testing.assert_allclose(reconstruct_g2(run, IDENTITY).values, 3.0 * frames.mean(axis=0), rtol=1e-12)

    def test_constant_buckets_and_frames(self, stack_run):
        run = stack_run(np.full((20, 4), 0.5), np.full(20, 2.0))
        np.testing.assert_allclose(reconstruct_normalized_g2(run, IDENTITY).values, np.ones(4), rtol=1e-12)


class TestDegenerateRuns:
    def test_point_mass_patterns(self, card, recipe, serial):
        run = simulate_run(card, DistributionSpec.discrete([0.5], [1.0]), recipe, 200, 1.0, worker=serial)
        acc = accumulate(run, [IDENTITY], serial)
        np.testing.assert_allclose(acc.delta_g2(IDENTITY), 0.0, atol=1e-12)
        np.testing.assert_allclose(acc.dgi(IDENTITY), 0.0, atol=1e-12)

    def test_opaque_object(self, uniform, recipe, serial):
        dark = make_test_card(4, 4, [0.0])
        run = simulate_run(dark, uniform, recipe, 100, 1.0, worker=serial)
        acc = accumulate(run, [IDENTITY], serial)
        np.testing.assert_array_equal(acc.g2(IDENTITY), np.zeros(16))
        with pytest.raises(DegenerateRunError):
            acc.normalized_g2(IDENTITY)

    def test_flat_object_dgi_vanishes(self, uniform, recipe, serial):
        flat = make_test_card(8, 8, [0.7])
        run = simulate_run(flat, uniform, recipe, 500, 1.0, worker=serial)
        np.testing.assert_allclose(reconstruct_dgi(run, IDENTITY).values, 0.0, atol=1e-10)

    def test_log_rejected_on_binary_patterns(self, card, binary, recipe, serial):
        run = simulate_run(card, binary, recipe, 50, 1.0, worker=serial)
        with pytest.raises(TransformDomainError, match="log"):
            reconstruct_all(run, [Estimator.DELTA_G2], SWEEP, serial)


class TestAccumulator:
    def test_merge_with_different_shifts(self, small_run):
        frames = small_run.source.block(0, small_run.T)
        buckets = small_run.buckets
        whole = CorrAccumulator(SWEEP, small_run.M, 5.0, 30.0)
        whole.add_block(frames, buckets)

        left = CorrAccumulator(SWEEP, small_run.M, 0.0, 0.0)
        left.add_block(frames[:700], buckets[:700])
        right = CorrAccumulator(SWEEP, small_run.M, 12.0, 35.0)
        right.add_block(frames[700:], buckets[700:])
        merged = left.merge(right)

        assert merged.count == whole.count
        for t in SWEEP:
            for name in ("g2", "delta_g2", "normalized_g2", "dgi"):
                np.testing.assert_allclose(getattr(merged, name)(t), getattr(whole, name)(t), rtol=1e-9, atol=1e-12)

    def test_block_shape_checked(self):
        acc = CorrAccumulator([IDENTITY], 3)
        with pytest.raises(ShapeMismatchError):
            acc.add_block(np.ones((2, 4)), np.ones(2))

    def test_unknown_transform(self, small_run, serial):
        acc = accumulate(small_run, [IDENTITY], serial)
        with pytest.raises(KeyError):
            acc.delta_g2(TransformSpec.parse("exp"))

    def test_matches_direct_formulas(self, small_run, serial):
        acc = accumulate(small_run, [IDENTITY], serial)
        frames = small_run.source.block(0, small_run.T)
        S = small_run.buckets
        S_R = frames.sum(axis=1)
        mean_sf = (S[:, None] * frames).mean(axis=0)
        mean_f = frames.mean(axis=0)
        cov_sf = mean_sf - S.mean() * mean_f
        cov_rf = (S_R[:, None] * frames).mean(axis=0) - S_R.mean() * mean_f
        np.testing.assert_allclose(acc.g2(IDENTITY), mean_sf, rtol=1e-10)
        np.testing.assert_allclose(acc.delta_g2(IDENTITY), cov_sf, rtol=1e-7, atol=1e-12)
        np.testing.assert_allclose(acc.normalized_g2(IDENTITY), mean_sf / (S.mean() * mean_f), rtol=1e-10)
        np.testing.assert_allclose(
            acc.dgi(IDENTITY), cov_sf - S.mean() / S_R.mean() * cov_rf, rtol=1e-7, atol=1e-12
        )


class TestPasses:
    def test_centered_matches_one_pass(self, card, binary, recipe, serial):
        noise = NoiseModel.gaussian(2.0985e6, 1.2260e10)
        transforms = SWEEP[:3]
        run = simulate_run(card, binary, recipe, 3000, 1.0e4, noise, worker=serial)
        acc = accumulate(run, transforms, serial)
        centered = centered_delta_g2(run, transforms, first_pass=acc, worker=serial)
        for t, c in zip(transforms, centered):
            assert c.form == CENTERED_FORM
            assert identity_deviation(acc.delta_g2(t), c.values) <= 1e-9

    def test_thread_count_does_not_change_results(self, uniform, recipe):
        image = make_test_card(8, 8, [0.0, 0.4, 0.7, 1.0])
        run = simulate_run(image, uniform, recipe, 10_000, 1.0, worker=FrameWorker(1))
        a = reconstruct_all(run, list(Estimator), SWEEP, FrameWorker(1))
        b = reconstruct_all(run, list(Estimator), SWEEP, FrameWorker(4))
        assert len(a) == len(Estimator) * len(SWEEP)
        for x, y in zip(a, b):
            assert x.label == y.label
            assert identity_deviation(x.values, y.values) <= 1e-9

    def test_sweep_labels(self, small_run, serial):
        recons = reconstruct_all(small_run, [Estimator.DELTA_G2, Estimator.G2], SWEEP[:2], serial)
        assert [r.label for r in recons] == ["delta_g2_identity", "g2_identity", "delta_g2_power3", "g2_power3"]
        assert all(r.T == small_run.T for r in recons)


def test_identity_deviation():
    assert identity_deviation([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert identity_deviation([1.0, 2.0], [1.0, 2.5]) == pytest.approx(0.2)
    with pytest.raises(ShapeMismatchError):
        identity_deviation([1.0], [1.0, 2.0])


class TestBucketResponse:
    @pytest.mark.parametrize("a,b", [(3.5, 0.0), (0.25, 1e3), (2.0, -40.0)])
    def test_affine_bucket_change_scales_delta_g2(self, small_run, serial, a, b):
        shifted = MeasurementRun(
            gamma=small_run.gamma,
            buckets=a * small_run.buckets + b,
            source=small_run.source,
            image=small_run.image,
        )
        base = accumulate(small_run, SWEEP, serial)
        moved = accumulate(shifted, SWEEP, serial)
        for transform in SWEEP:
            assert identity_deviation(moved.delta_g2(transform), a * base.delta_g2(transform)) <= 1e-9

    def test_single_transparent_pixel(self, uniform, recipe, serial):
        gamma, T, n = 2.0, 20_000, 10
        image = make_test_card(8, 8, (0.0,)).with_pixel(n, 1.0)
        run = simulate_run(image, uniform, recipe, T, gamma, worker=serial)
        values = reconstruct_delta_g2(run, IDENTITY, serial).values
        expected = gamma * UNIFORM_VARIANCE * (1.0 - 1.0 / T)
        assert values[n] == pytest.approx(expected, rel=0.05)
        assert np.max(np.abs(np.delete(values, n))) < 0.05 * expected
