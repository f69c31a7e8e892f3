import math

import pytest

from ghoststat.core.errors import (
    DegenerateRunError,
    DistributionError,
    InsufficientSamplesError,
    ParameterError,
    TransformDomainError,
    VarianceAssemblyError,
)
from ghoststat.core.estimators import Estimator
from ghoststat.core.forward import NoiseModel
from ghoststat.core.imaging import GrayImage, make_test_card
from ghoststat.core.stochastic import DistributionSpec, SeedRecipe, TransformSpec
from ghoststat.core.theory import (
    MOMENT_EXPONENTS,
    MomentSet,
    _quadrature,
    _uniform_closed_form,
    compute_moments,
    empirical_moments,
    predict,
    predicted_line,
    theoretical_constants,
    theoretical_mean,
    theoretical_variance_delta_g2,
    variance_terms,
)

IDENTITY = TransformSpec()
TRANSFORMS = ["identity", "power:2", "power:3", "exp", "log"]


class TestMoments:
    def test_uniform_identity(self, uniform):
        m = compute_moments(uniform, IDENTITY)
        assert m.E_I == pytest.approx(0.55)
        assert m.D_I == pytest.approx(0.0675)
        assert m.cross == pytest.approx(0.0675)
        assert m.E_F == m.E_I

    @pytest.mark.parametrize("text", TRANSFORMS)
    def test_closed_form_matches_quadrature(self, text):
        transform = TransformSpec.parse(text)
        for name, (p, q) in MOMENT_EXPONENTS.items():
            exact = _uniform_closed_form(transform, p, q, 0.1, 1.0)
            numeric = _quadrature(transform, p, q, 0.1, 1.0)
            assert exact == pytest.approx(numeric, rel=1e-10), name

    def test_fractional_power(self, uniform):
        m = compute_moments(uniform, TransformSpec.parse("power:2.5"))
        assert m.E_F == pytest.approx((1 - 0.1 ** 3.5) / (3.5 * 0.9), rel=1e-10)

    def test_fractional_power_needs_positive_support(self):
        with pytest.raises(TransformDomainError, match="fractional"):
            compute_moments(DistributionSpec.uniform(0.0, 1.0), TransformSpec.parse("power:0.5"))

    def test_bernoulli_atoms(self, binary):
        m = compute_moments(binary, IDENTITY)
        assert m.E_I == 0.5
        assert m.cross == pytest.approx(0.25)
        assert m.E_I2F2 == 0.5

    def test_bernoulli_rejects_log(self, binary):
        with pytest.raises(TransformDomainError):
            compute_moments(binary, TransformSpec.parse("log"))

    def test_point_mass_has_no_fluctuation(self):
        m = compute_moments(DistributionSpec.discrete([0.5], [1.0]), IDENTITY)
        assert m.D_I == 0.0
        assert m.cross == 0.0

    def test_negative_variance_rejected(self):
        with pytest.raises(DistributionError):
            MomentSet(1.0, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5)

    def test_to_dict_includes_variances(self, uniform):
        d = compute_moments(uniform, IDENTITY).to_dict()
        assert set(MOMENT_EXPONENTS) | {"D_I", "D_F"} == set(d)


class TestEmpiricalMoments:
    @pytest.mark.parametrize("dist_name,text", [("binary", "identity"), ("uniform", "exp"), ("uniform", "log")])
    def test_within_standard_errors(self, request, dist_name, text):
        dist = request.getfixturevalue(dist_name)
        transform = TransformSpec.parse(text)
        exact = compute_moments(dist, transform)
        sampled, errors = empirical_moments(dist, transform, 200_000, SeedRecipe(99))
        for name in MOMENT_EXPONENTS:
            assert abs(getattr(sampled, name) - getattr(exact, name)) <= 4 * errors[name] + 1e-15, name

    def test_needs_two_samples(self, uniform):
        with pytest.raises(InsufficientSamplesError):
            empirical_moments(uniform, IDENTITY, 1, SeedRecipe(1))

    def test_reproducible(self, uniform):
        a, _ = empirical_moments(uniform, IDENTITY, 1000, SeedRecipe(5))
        b, _ = empirical_moments(uniform, IDENTITY, 1000, SeedRecipe(5))
        assert a == b


class TestConstants:
    def test_noiseless(self, uniform, card):
        m = compute_moments(uniform, IDENTITY)
        c = theoretical_constants(m, card, 2.0)
        assert c.C1 == pytest.approx(2.0 * 0.0675)
        assert c.C2 == pytest.approx(2.0 * card.total * 0.55 * 0.55)
        assert c.C3 == pytest.approx(c.C1 / c.C2)
        assert c.C4 == pytest.approx(card.total / card.M)

    def test_noise_mean_shifts_c4(self, uniform, card):
        m = compute_moments(uniform, IDENTITY)
        c = theoretical_constants(m, card, 1.0, NoiseModel.gaussian(5.0, 1.0))
        assert c.C2 == pytest.approx((card.total * 0.55 + 5.0) * 0.55)
        assert c.C4 == pytest.approx((card.total + 5.0 / 0.55) / card.M)

    def test_opaque_image_has_no_c3(self, uniform):
        c = theoretical_constants(compute_moments(uniform, IDENTITY), make_test_card(2, 2, [0.0]), 1.0)
        assert c.c3 is None
        with pytest.raises(DegenerateRunError):
            c.C3
        assert c.to_dict()["C3"] is None

    def test_zero_mean_law_with_noise_has_no_c4(self, card):
        m = compute_moments(DistributionSpec.discrete([0.0], [1.0]), IDENTITY)
        c = theoretical_constants(m, card, 1.0, NoiseModel.gaussian(3.0, 0.0))
        with pytest.raises(DegenerateRunError):
            c.C4

    def test_gain_must_be_positive(self, uniform, card):
        with pytest.raises(ParameterError):
            theoretical_constants(compute_moments(uniform, IDENTITY), card, 0.0)


class TestMeans:
    @pytest.fixture
    def constants(self, uniform, card):
        return theoretical_constants(compute_moments(uniform, IDENTITY), card, 1.0)

    def test_delta_g2_vanishes_on_dark_pixels(self, constants):
        assert theoretical_mean(Estimator.DELTA_G2, 0.0, constants, 100) == 0.0
        assert theoretical_mean(Estimator.DELTA_G2, 1.0, constants, 100) == pytest.approx(0.99 * constants.C1)

    def test_g2_and_normalized(self, constants):
        assert theoretical_mean(Estimator.G2, 0.0, constants) == constants.C2
        assert theoretical_mean(Estimator.NORMALIZED_G2, 0.0, constants) == 1.0

    def test_dgi_zero_at_mean_level(self, constants):
        assert theoretical_mean(Estimator.DGI, constants.C4, constants) == 0.0

    def test_predicted_line(self, constants):
        slope, intercept = predicted_line(Estimator.DGI, constants)
        assert slope == pytest.approx(constants.C1)
        assert intercept == pytest.approx(-constants.C1 * constants.C4)


class TestVariance:
    def test_single_pixel_closed_form(self, uniform):
        # M=1, S = I: D{(I - EI)^2} = w^4/80 - (w^2/12)^2 for a width-w uniform law
        m = compute_moments(uniform, IDENTITY)
        terms = variance_terms(m, GrayImage(1, 1, [1.0]), 1.0, 1.0, 10)
        assert terms["D"] == pytest.approx(0.003645, rel=1e-9)
        assert terms["sigma2"] == pytest.approx(0.0003645, rel=1e-9)

    def test_dark_pixel_variance(self, uniform, card):
        # d=0: S is independent of F, so the product variance is D(S) D(F)
        m = compute_moments(uniform, IDENTITY)
        D_S = card.total_squared * m.D_I
        expected = D_S * m.D_F
        assert variance_terms(m, card, 0.0, 1.0, 4)["D"] == pytest.approx(expected, rel=1e-9)

    def test_noise_adds_to_the_bucket_variance(self, uniform, card):
        m = compute_moments(uniform, IDENTITY)
        clean = theoretical_variance_delta_g2(m, card, 0.4, 1.0, 100)
        noisy = theoretical_variance_delta_g2(m, card, 0.4, 1.0, 100, NoiseModel.gaussian(0.0, 10.0))
        assert noisy > clean

    def test_point_mass_variance_is_zero(self, card):
        m = compute_moments(DistributionSpec.discrete([0.5], [1.0]), IDENTITY)
        assert theoretical_variance_delta_g2(m, card, 0.7, 1.0, 50) == 0.0

    def test_negative_assembly_reports_terms(self):
        bad = MomentSet(0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.0)
        with pytest.raises(VarianceAssemblyError) as info:
            variance_terms(bad, GrayImage(1, 1, [1.0]), 1.0, 1.0, 2)
        assert "D_SF" in info.value.terms

    def test_needs_two_frames(self, uniform, card):
        with pytest.raises(InsufficientSamplesError):
            variance_terms(compute_moments(uniform, IDENTITY), card, 0.4, 1.0, 1)


class TestPredict:
    def test_levels_follow_the_image(self, uniform, card):
        p = predict(compute_moments(uniform, IDENTITY), card, 1.0, 1000, transform=IDENTITY)
        assert [lv.d for lv in p.levels] == [0.0, 0.4, 0.7, 1.0]
        assert sum(lv.pixels for lv in p.levels) == card.M
        assert p.mean(Estimator.DELTA_G2, 0.0) == 0.0
        assert p.sigma2(Estimator.G2, 0.4) is None
        assert p.sigma2(Estimator.DELTA_G2, 0.4) > 0

    def test_unknown_level(self, uniform, card):
        p = predict(compute_moments(uniform, IDENTITY), card, 1.0, 1000)
        with pytest.raises(KeyError):
            p.level_for(0.5)

    def test_opaque_image_has_no_normalized_mean(self, uniform):
        p = predict(compute_moments(uniform, IDENTITY), make_test_card(2, 2, [0.0]), 1.0, 10)
        assert p.mean(Estimator.NORMALIZED_G2, 0.0) is None
        assert p.line(Estimator.NORMALIZED_G2) is None
        assert p.line(Estimator.DELTA_G2)[1] == 0.0

    def test_to_dict(self, uniform, card):
        d = predict(compute_moments(uniform, IDENTITY), card, 1.0, 100, transform=IDENTITY).to_dict()
        assert d["delta_g2_factor"] == pytest.approx(0.99)
        assert d["transform"] == {"kind": "identity"}
        assert len(d["levels"]) == 4
        assert math.isclose(d["constants"]["C1"], 0.0675)

    @pytest.mark.parametrize("text", ["identity", "power:3", "exp"])
    def test_gain_scaling(self, uniform, card, text):
        moments = compute_moments(uniform, TransformSpec.parse(text))
        unit = predict(moments, card, 1.0, 1000)
        double = predict(moments, card, 2.0, 1000)
        for a, b in zip(unit.levels, double.levels):
            assert b.mu["DeltaG2"] == pytest.approx(2.0 * a.mu["DeltaG2"], rel=1e-12, abs=1e-15)
            assert b.mu["G2"] == pytest.approx(2.0 * a.mu["G2"], rel=1e-12)
            assert b.sigma2 == pytest.approx(4.0 * a.sigma2, rel=1e-12)

    @pytest.mark.parametrize("estimator", list(Estimator))
    def test_means_are_collinear_in_gray_level(self, uniform, estimator):
        image = make_test_card(6, 6, (0.2, 0.5, 0.9))
        p = predict(compute_moments(uniform, TransformSpec.parse("power:3")), image, 1.5, 500)
        (d1, m1), (d2, m2), (d3, m3) = [(lv.d, lv.mu[estimator.value]) for lv in p.levels]
        assert (m2 - m1) / (d2 - d1) == pytest.approx((m3 - m1) / (d3 - d1), rel=1e-12)
