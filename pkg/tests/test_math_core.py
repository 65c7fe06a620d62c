import math

import numpy as np
import pytest
from scipy import integrate, special, stats

from app.utils.errors import DegenerateProductError, InvalidArgumentError, SingularCovarianceError
from app.utils.math_core import (
    UNINFORMATIVE_VARIANCE,
    ComplexGaussianMoments,
    GaussianMessage,
    complex_gaussian_log_pdf,
    gaussian_product,
    gaussian_product_moments,
    log_bessel_i0,
    nats_to_bits,
    real_gaussian_log_pdf,
    rice_log_pdf,
    wrap_phase,
    wrapped_gaussian_log_pdf,
)


class TestWrapPhase:
    def test_range_is_half_open(self):
        assert wrap_phase(math.pi) == pytest.approx(-math.pi)
        assert wrap_phase(-math.pi) == pytest.approx(-math.pi)

    def test_arrays(self):
        x = np.linspace(-20.0, 20.0, 1001)
        wrapped = wrap_phase(x)
        assert np.all(wrapped >= -math.pi)
        assert np.all(wrapped < math.pi)
        np.testing.assert_allclose(np.exp(1j * wrapped), np.exp(1j * x), atol=1e-12)

    def test_small_values_unchanged(self):
        assert wrap_phase(0.25) == pytest.approx(0.25, abs=1e-15)
        assert wrap_phase(-1e-17) <= 0.0

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidArgumentError):
            wrap_phase(float("nan"))


class TestGaussianProduct:
    def test_precision_weighted_mean(self):
        out = gaussian_product(GaussianMessage(1.0, 1.0), GaussianMessage(3.0, 1.0))
        assert out.mean == pytest.approx(2.0)
        assert out.variance == pytest.approx(0.5)

    def test_delta_dominates(self):
        out = gaussian_product(GaussianMessage(0.3, 0.0), GaussianMessage(-1.0, 2.0))
        assert out == GaussianMessage(0.3, 0.0)

    def test_uninformative_is_neutral(self):
        m = GaussianMessage(0.1, 0.01)
        out = gaussian_product(m, GaussianMessage.uninformative())
        assert out.mean == pytest.approx(m.mean, rel=1e-12)
        assert out.variance == pytest.approx(m.variance, rel=1e-12)

    def test_two_different_deltas(self):
        with pytest.raises(DegenerateProductError):
            gaussian_product(GaussianMessage(0.0, 0.0), GaussianMessage(1.0, 0.0))

    def test_two_equal_deltas(self):
        assert gaussian_product(GaussianMessage(0.5, 0.0), GaussianMessage(0.5, 0.0)).variance == 0.0

    def test_float_kernel_matches_messages(self, rng):
        for _ in range(50):
            m1, m2 = rng.normal(size=2)
            v1, v2 = rng.uniform(0.1, 2.0, 2)
            mean, var = gaussian_product_moments(m1, v1, m2, v2)
            ref = gaussian_product(GaussianMessage(m1, v1), GaussianMessage(m2, v2))
            assert (mean, var) == (ref.mean, ref.variance)
        assert gaussian_product_moments(1.0, 2.0, 3.0, 2.0) == (2.0, 1.0)

    def test_message_validation(self):
        with pytest.raises(InvalidArgumentError):
            GaussianMessage(0.0, -1.0)
        with pytest.raises(InvalidArgumentError):
            GaussianMessage(float("inf"), 1.0)
        assert GaussianMessage(0.0, UNINFORMATIVE_VARIANCE).is_uninformative


class TestBessel:
    def test_small_arguments_match_direct_evaluation(self):
        x = np.array([0.0, 1e-3, 0.5, 1.0, 10.0, 100.0])
        np.testing.assert_allclose(log_bessel_i0(x), np.log(special.i0(x)), rtol=1e-12, atol=1e-13)

    def test_zero(self):
        assert log_bessel_i0(0.0) == 0.0

    def test_large_argument_follows_asymptote(self):
        x = 700.0
        asymptote = x - 0.5 * math.log(2 * math.pi * x) + math.log1p(1.0 / (8 * x))
        assert log_bessel_i0(x) == pytest.approx(asymptote, abs=1e-6)

    def test_no_overflow(self):
        assert math.isfinite(log_bessel_i0(1e6))

    def test_negative_argument(self):
        with pytest.raises(InvalidArgumentError):
            log_bessel_i0(-1.0)


class TestRice:
    @pytest.mark.parametrize("b,sigma2", [(0.0, 1.0), (1.0, 0.3), (3.0, 0.05)])
    def test_normalized(self, b, sigma2):
        upper = b + 20 * math.sqrt(sigma2)
        total, _ = integrate.quad(
            lambda a: math.exp(rice_log_pdf(a, b, sigma2)), 0.0, upper, points=[b] if b else None
        )
        assert total == pytest.approx(1.0, abs=1e-8)

    def test_zero_amplitude_has_no_density(self):
        assert rice_log_pdf(0.0, 1.0, 0.5) == -math.inf

    def test_matches_scipy_rice(self):
        b, sigma2 = 1.3, 0.4
        scale = math.sqrt(sigma2 / 2.0)
        a = np.linspace(0.05, 4.0, 40)
        expected = stats.rice.logpdf(a, b / scale, scale=scale)
        np.testing.assert_allclose(rice_log_pdf(a, b, sigma2), expected, rtol=1e-10)

    def test_invalid_variance(self):
        with pytest.raises(InvalidArgumentError):
            rice_log_pdf(1.0, 1.0, 0.0)


class TestComplexGaussian:
    def test_circular_case(self):
        m = ComplexGaussianMoments(mean=1 + 1j, variance=2.0)
        x = 0.5 - 0.2j
        expected = -math.log(2 * math.pi) - abs(x - (1 + 1j)) ** 2 / 2.0
        assert complex_gaussian_log_pdf(x, m) == pytest.approx(expected)

    def test_improper_matches_bivariate_normal(self):
        s2, p2 = 1.5, 0.6 * np.exp(0.7j)
        mean = 0.3 - 0.1j
        cov = 0.5 * np.array([[s2 + p2.real, p2.imag], [p2.imag, s2 - p2.real]])
        pts = np.array([0.0, 1.0 + 1.0j, -0.7 + 0.2j, 2.0 - 1.5j])
        expected = stats.multivariate_normal(mean=[mean.real, mean.imag], cov=cov).logpdf(
            np.column_stack([pts.real, pts.imag])
        )
        got = complex_gaussian_log_pdf(pts, ComplexGaussianMoments(mean, s2, p2))
        np.testing.assert_allclose(got, expected, rtol=1e-12)

    def test_singular(self):
        with pytest.raises(SingularCovarianceError):
            complex_gaussian_log_pdf(0.0, ComplexGaussianMoments(0.0, 1.0, 1.0))
        with pytest.raises(SingularCovarianceError):
            complex_gaussian_log_pdf(0.0, ComplexGaussianMoments(0.0, 0.0, 0.0))

    def test_pseudo_variance_bound(self):
        with pytest.raises(InvalidArgumentError):
            ComplexGaussianMoments(0.0, 1.0, 1.5)


def test_real_gaussian_log_pdf():
    assert real_gaussian_log_pdf(1.0, 0.0, 1.0) == pytest.approx(stats.norm.logpdf(1.0))


class TestWrappedGaussian:
    @pytest.mark.parametrize("variance", [0.01, 0.5, 0.99, 1.01, 4.0, 25.0])
    def test_matches_image_sum(self, variance):
        t = np.linspace(-math.pi, math.pi, 41, endpoint=False)
        images = t + 2 * math.pi * np.arange(-200, 201)[:, np.newaxis]
        expected = np.log(np.sum(stats.norm.pdf(images, scale=math.sqrt(variance)), axis=0))
        np.testing.assert_allclose(wrapped_gaussian_log_pdf(t, 0.0, variance), expected, rtol=1e-10, atol=1e-12)

    @pytest.mark.parametrize("variance", [0.02, 1.0, 3.0])
    def test_integrates_to_one(self, variance):
        t = np.linspace(-math.pi, math.pi, 4096, endpoint=False)
        density = np.exp(wrapped_gaussian_log_pdf(t, 0.4, variance))
        assert np.sum(density) * (2 * math.pi / t.size) == pytest.approx(1.0, abs=1e-10)

    def test_periodic_and_scalar(self):
        value = wrapped_gaussian_log_pdf(0.3, 0.1, 0.2)
        assert isinstance(value, float)
        assert wrapped_gaussian_log_pdf(0.3 + 2 * math.pi, 0.1, 0.2) == pytest.approx(value)

    def test_variance_must_be_positive(self):
        with pytest.raises(InvalidArgumentError):
            wrapped_gaussian_log_pdf(0.0, 0.0, 0.0)


def test_nats_to_bits():
    assert nats_to_bits(math.log(2.0)) == pytest.approx(1.0)
