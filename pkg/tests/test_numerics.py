"""Tests for noise-family primitives, the root finder and convolved laws."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from sarpricing.errors import BracketError, ConfigurationError, DomainError
from sarpricing.numerics import (
    GAUSSIAN,
    ConvolvedNoise,
    NoiseFamily,
    dist_cdf,
    dist_pdf,
    find_root_monotone,
    hazard_ratio,
    log_cdf,
    mills_ratio,
    solve_index,
)

LAPLACE = NoiseFamily("laplace")
STUDENT = NoiseFamily("student_t", 4.0)
FAMILIES = [GAUSSIAN, LAPLACE, STUDENT]


def _normal_pdf(v):
    return math.exp(-0.5 * v * v) / math.sqrt(2.0 * math.pi)


def _quad_cdf(v):
    """Standard normal CDF by adaptive quadrature of the density."""
    val, _ = integrate.quad(_normal_pdf, -np.inf, v, epsabs=1e-14, epsrel=1e-13)
    return val


class TestNoiseFamily:
    def test_defaults(self):
        assert NoiseFamily("student_t").dof == 4.0

    def test_rejects_low_dof(self):
        with pytest.raises(ConfigurationError):
            NoiseFamily("student_t", 2.0)

    def test_rejects_unknown_family(self):
        with pytest.raises(ConfigurationError):
            NoiseFamily("cauchy")

    def test_parse_round_trip(self):
        for fam in FAMILIES:
            assert NoiseFamily.parse(fam.to_dict()) == fam
        assert NoiseFamily.parse("laplace") == LAPLACE


class TestDistCdf:
    @pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.family)
    def test_half_at_zero(self, fam):
        assert dist_cdf(fam, 0.0) == pytest.approx(0.5, abs=1e-15)

    def test_gaussian_against_quadrature(self):
        assert dist_cdf(GAUSSIAN, 1.96) == pytest.approx(_quad_cdf(1.96), abs=1e-12)
        assert abs(dist_cdf(GAUSSIAN, 1.96) - 0.975) < 1e-4

    def test_gaussian_accuracy_band(self):
        for v in np.linspace(-8, 8, 33):
            ref = 0.5 * math.erfc(-v / math.sqrt(2.0))
            assert abs(dist_cdf(GAUSSIAN, v) - ref) <= 1e-12

    def test_laplace_closed_form(self):
        v = np.array([-3.0, -0.5, 0.7, 2.0])
        ref = np.where(v < 0, 0.5 * np.exp(v), 1 - 0.5 * np.exp(-v))
        np.testing.assert_allclose(dist_cdf(LAPLACE, v), ref, rtol=1e-14)

    def test_student_against_quadrature(self):
        val, _ = integrate.quad(lambda s: dist_pdf(STUDENT, s), -np.inf, 1.3, epsabs=1e-13)
        assert dist_cdf(STUDENT, 1.3) == pytest.approx(val, abs=1e-10)

    @pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.family)
    def test_symmetry_random(self, fam):
        v = np.random.default_rng(3).uniform(-10, 10, 100)
        np.testing.assert_allclose(dist_cdf(fam, v) + dist_cdf(fam, -v), 1.0, atol=1e-12)

    def test_non_finite_rejected(self):
        with pytest.raises(DomainError):
            dist_cdf(GAUSSIAN, np.nan)
        with pytest.raises(DomainError):
            dist_pdf(LAPLACE, np.inf)


class TestDistPdf:
    def test_gaussian_peak(self):
        assert dist_pdf(GAUSSIAN, 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-15)
        assert abs(dist_pdf(GAUSSIAN, 0.0) - 0.3989423) < 1e-6

    def test_laplace_peak(self):
        assert dist_pdf(LAPLACE, 0.0) == pytest.approx(0.5)

    @pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.family)
    def test_even(self, fam):
        assert dist_pdf(fam, 1.3) == dist_pdf(fam, -1.3)

    @pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.family)
    @pytest.mark.parametrize("h", [1e-5, 1e-6])
    def test_is_cdf_derivative(self, fam, h):
        v = np.linspace(-4, 4, 41) + 0.013
        fd = (dist_cdf(fam, v + h) - dist_cdf(fam, v)) / h
        pdf = dist_pdf(fam, v)
        assert np.max(np.abs(fd - pdf) / pdf) < 1e-3

    @pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.family)
    def test_integrates_to_one(self, fam):
        val, _ = integrate.quad(lambda s: dist_pdf(fam, s), -np.inf, np.inf)
        assert val == pytest.approx(1.0, abs=1e-9)


class TestTailHelpers:
    def test_mills_ratio_matches_naive_in_bulk(self):
        v = np.linspace(-3, 3, 13)
        naive = dist_cdf(GAUSSIAN, -v) / dist_pdf(GAUSSIAN, v)
        np.testing.assert_allclose(mills_ratio(v), naive, rtol=1e-12)

    def test_mills_ratio_far_tail(self):
        # R(v) ~ 1/v (1 - 1/v^2 + 3/v^4) for large v
        v = 40.0
        assert mills_ratio(v) == pytest.approx((1 - 1 / v**2 + 3 / v**4) / v, rel=1e-7)

    @pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.family)
    def test_hazard_ratio_bulk(self, fam):
        u = np.linspace(-5, 5, 21)
        np.testing.assert_allclose(hazard_ratio(fam, u), dist_pdf(fam, u) / dist_cdf(fam, u), rtol=1e-10)

    def test_hazard_ratio_no_underflow(self):
        r = hazard_ratio(GAUSSIAN, -60.0)
        assert np.isfinite(r)
        assert r == pytest.approx(60.0, rel=1e-3)

    @pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.family)
    def test_log_cdf(self, fam):
        u = np.linspace(-6, 6, 25)
        np.testing.assert_allclose(log_cdf(fam, u), np.log(dist_cdf(fam, u)), rtol=1e-10, atol=1e-14)


class TestFindRootMonotone:
    def test_linear(self):
        assert find_root_monotone(lambda v: v - 2, 0.0, 5.0, tol=1e-12) == pytest.approx(2.0, abs=1e-12)

    def test_cubic(self):
        assert find_root_monotone(lambda v: v**3, -1.0, 2.0, tol=1e-12) == pytest.approx(0.0, abs=1e-4)

    def test_inverse_cdf(self):
        root = find_root_monotone(lambda v: dist_cdf(GAUSSIAN, v) - 0.975, 0.0, 4.0, tol=1e-12)
        oracle = find_root_monotone(lambda v: _quad_cdf(v) - 0.975, 1.9, 2.0, tol=1e-12)
        assert root == pytest.approx(oracle, abs=1e-9)
        assert abs(root - 1.95996) < 1e-4

    def test_decreasing_function(self):
        assert find_root_monotone(lambda v: 1.0 - v, -3.0, 3.0) == pytest.approx(1.0)

    def test_newton_acceleration(self):
        calls = []

        def f(v):
            calls.append(1)
            return np.exp(v) - 3.0

        root = find_root_monotone(f, -5.0, 5.0, tol=1e-13, fprime=np.exp)
        assert root == pytest.approx(math.log(3.0), abs=1e-12)
        assert len(calls) < 20

    def test_vectorised(self):
        targets = np.array([0.1, 0.5, 0.9])
        roots = find_root_monotone(lambda v: dist_cdf(GAUSSIAN, v) - targets, -5.0, 5.0, tol=1e-13)
        np.testing.assert_allclose(dist_cdf(GAUSSIAN, roots), targets, atol=1e-13)

    def test_same_sign_rejected(self):
        with pytest.raises(BracketError):
            find_root_monotone(lambda v: v + 10, 0.0, 1.0)

    @pytest.mark.parametrize("tol", [0.0, -1e-3])
    def test_bad_tolerance(self, tol):
        with pytest.raises(ValueError):
            find_root_monotone(lambda v: v, -1.0, 1.0, tol=tol)

    def test_deterministic(self):
        f = lambda v: np.tanh(v) - 0.3  # noqa: E731
        assert find_root_monotone(f, -2, 2) == find_root_monotone(f, -2, 2)

    @settings(max_examples=100, deadline=None)
    @given(
        a=st.floats(0.1, 10.0),
        shift=st.floats(-50.0, 50.0),
        tol=st.sampled_from([1e-6, 1e-9, 1e-12]),
    )
    def test_round_trip(self, a, shift, tol):
        f = lambda v: a * (v - shift) + 0.1 * np.tanh(v - shift)  # noqa: E731
        root = find_root_monotone(f, shift - 60.0, shift + 60.0, tol=tol)
        # the returned point satisfies the residual or lies in a tol-wide bracket
        assert abs(f(root)) <= tol or abs(root - shift) <= tol


class TestConvolvedNoise:
    @staticmethod
    def _oracle(fam, kappa, z):
        """CDF and density of ``kappa N + Z`` by direct quadrature."""
        w = lambda a: math.exp(-0.5 * a * a) / math.sqrt(2 * math.pi)  # noqa: E731
        H, _ = integrate.quad(lambda a: w(a) * float(dist_cdf(fam, z - kappa * a)), -40, 40,
                              epsabs=1e-14, epsrel=1e-12, limit=400)
        h, _ = integrate.quad(lambda a: w(a) * float(dist_pdf(fam, z - kappa * a)), -40, 40,
                              epsabs=1e-14, epsrel=1e-12, limit=400)
        return H, h

    @pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.family)
    @pytest.mark.parametrize("kappa", [0.3, 1.0, 2.5])
    def test_against_quadrature(self, fam, kappa):
        law = ConvolvedNoise(fam, kappa)
        for z in (-6.0, -1.7, 0.0, 0.4, 3.3):
            H, h = self._oracle(fam, kappa, z)
            assert law.cdf(z) == pytest.approx(H, abs=1e-8)
            assert law.pdf(z) == pytest.approx(h, abs=1e-8)

    def test_gaussian_is_rescaled_normal(self):
        law = ConvolvedNoise(GAUSSIAN, 1.0)
        z = np.linspace(-4, 4, 9)
        np.testing.assert_allclose(law.cdf(z), dist_cdf(GAUSSIAN, z / math.sqrt(2.0)), rtol=1e-14)

    @pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.family)
    def test_zero_kappa_is_base_law(self, fam):
        law = ConvolvedNoise(fam, 0.0)
        z = np.linspace(-3, 3, 7)
        np.testing.assert_allclose(law.cdf(z), dist_cdf(fam, z))

    def test_negative_kappa_rejected(self):
        with pytest.raises(ConfigurationError):
            ConvolvedNoise(GAUSSIAN, -0.1)

    @pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.family)
    def test_solve_index(self, fam):
        law = ConvolvedNoise(fam, 1.0)
        c = np.array([-0.8, 0.0, 0.6])
        u = solve_index(law, c)
        np.testing.assert_allclose(law.index(u), c, atol=1e-10)
