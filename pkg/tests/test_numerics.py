"""Tests for special functions, quadrature and statistics."""

import math

import numpy as np
import pytest
from scipy import special, stats

from loctime import numerics
from loctime.errors import DataError, UsageError

SQRT_2PI = math.sqrt(2.0 * math.pi)


class TestHeatKernel:
    def test_reference_values(self):
        assert numerics.heat_kernel(0.0, 1.0) == pytest.approx(0.3989422804, abs=1e-10)
        assert numerics.heat_kernel(1.0, 1.0) == pytest.approx(0.2419707245, abs=1e-10)

    def test_symmetric(self):
        x = np.linspace(-3, 3, 13)
        assert np.array_equal(numerics.heat_kernel(x, 0.5), numerics.heat_kernel(-x, 0.5))

    def test_normalization(self):
        mass, _ = numerics.adaptive_simpson(lambda x: float(numerics.heat_kernel(x, 0.25)), -10, 10, tol=1e-12)
        assert mass == pytest.approx(1.0, abs=1e-10)

    @pytest.mark.parametrize("eps", [0.0, -1.0])
    def test_rejects_non_positive_eps(self, eps):
        with pytest.raises(UsageError):
            numerics.heat_kernel(0.0, eps)


class TestHeatKernelDx:
    def test_zero_at_origin(self):
        assert numerics.heat_kernel_dx(0.0, 1.0) == 0.0

    def test_negative_right_of_origin(self):
        assert numerics.heat_kernel_dx(0.3, 1.0) < 0

    @pytest.mark.parametrize("x,eps", [(0.5, 1.0), (-0.2, 0.3), (1.5, 2.0)])
    def test_central_difference(self, x, eps):
        d = 1e-5
        fd = (numerics.heat_kernel(x + d, eps) - numerics.heat_kernel(x - d, eps)) / (2 * d)
        assert numerics.heat_kernel_dx(x, eps) == pytest.approx(fd, abs=1e-8)

    def test_rejects_non_positive_eps(self):
        with pytest.raises(UsageError):
            numerics.heat_kernel_dx(0.1, 0.0)


class TestTailK:
    def test_value_at_zero(self):
        assert abs(numerics.tail_k(0.0) - SQRT_2PI) <= 1e-12

    def test_decays(self):
        assert numerics.tail_k(100.0) <= 0.21
        values = numerics.tail_k(np.array([0.0, 0.01, 0.1, 1.0, 10.0]))
        assert np.all(np.diff(values) < 0)

    def test_small_argument_approaches_sqrt_2pi(self):
        assert numerics.tail_k(1e-8) / SQRT_2PI == pytest.approx(1.0, abs=1e-4)

    @pytest.mark.parametrize("a", [1e-6, 0.01, 0.1, 1.0, 10.0, 100.0])
    def test_closed_form_matches_quadrature(self, a):
        upper = 1e6
        closed = numerics.tail_k(a) - numerics.tail_k(upper)
        assert closed == pytest.approx(numerics.tail_k_quadrature(a, upper), abs=1e-9)

    def test_rejects_negative(self):
        with pytest.raises(UsageError):
            numerics.tail_k(-0.1)


class TestGKernel:
    def test_values(self):
        assert numerics.g_kernel(0.0, 0.0, 0.5) == 0.5
        assert numerics.g_kernel(0.25, -0.25, 0.5) == 0.0
        assert numerics.g_kernel(0.1, 0.3, 0.5) == pytest.approx(0.2)

    def test_symmetries(self):
        rng = np.random.default_rng(3)
        x, y = rng.uniform(-1, 1, (2, 200))
        g = numerics.g_kernel(x, y, 0.7)
        assert np.array_equal(g, numerics.g_kernel(y, x, 0.7))
        assert np.array_equal(g, numerics.g_kernel(-x, -y, 0.7))
        assert np.all((g >= 0) & (g <= 0.7))

    @pytest.mark.parametrize("x, y", [(-0.7, 0.3), (0.1, -0.2), (-0.45, 0.35)])
    def test_swap_exact_on_opposite_signs(self, x, y):
        assert numerics.g_kernel(x, y, 1.0) == numerics.g_kernel(y, x, 1.0)

    def test_swap_exact_on_lattice(self):
        xs = np.linspace(-1.0, 1.0, 41)
        g = numerics.g_kernel(xs[:, None], xs[None, :], 1.0)
        assert np.array_equal(g, g.T)

    @pytest.mark.parametrize("h", [0.1, 1.0])
    def test_square_integral(self, h):
        assert numerics.g_kernel_square_integral(h) / (h ** 4 / 2) == pytest.approx(1.0, abs=1e-6)

    def test_rejects_non_positive_h(self):
        with pytest.raises(UsageError):
            numerics.g_kernel(0.0, 0.0, 0.0)


class TestNormal:
    def test_cdf(self):
        assert numerics.normal_cdf(0.0) == 0.5
        assert numerics.normal_cdf(1.959964) == pytest.approx(0.975, abs=1e-6)

    def test_cdf_matches_density_quadrature(self):
        value, _ = numerics.adaptive_simpson(lambda x: float(numerics.heat_kernel(x, 1.0)), 0.0, 1.959964, tol=1e-12)
        assert 0.5 + value == pytest.approx(numerics.normal_cdf(1.959964), abs=1e-10)

    def test_erfc(self):
        assert numerics.erfc(0.0) == 1.0
        x = np.linspace(-3, 3, 25)
        assert np.allclose(numerics.erfc(x) + special.erf(x), 1.0, atol=1e-14, rtol=0)

    def test_partial_expectation_derivative_is_cdf(self):
        d = 1e-6
        for u in (-1.0, 0.0, 0.7):
            fd = (numerics.normal_partial_expectation(u + d) - numerics.normal_partial_expectation(u - d)) / (2 * d)
            assert fd == pytest.approx(numerics.normal_cdf(u), abs=1e-8)


class TestQuadrature:
    def test_simpson_sine(self):
        value, err = numerics.adaptive_simpson(math.sin, 0.0, math.pi)
        assert value == pytest.approx(2.0, abs=1e-10)
        assert err >= 0

    def test_reversed_bounds(self):
        value, _ = numerics.adaptive_simpson(math.exp, 1.0, 0.0)
        assert value == pytest.approx(-(math.e - 1.0), abs=1e-10)

    def test_kink_breakpoint(self):
        value, _ = numerics.adaptive_simpson(abs, -1.0, 2.0, breakpoints=(0.0,))
        assert value == pytest.approx(2.5, abs=1e-14)

    def test_gauss_legendre_polynomial(self):
        nodes, weights = numerics.gauss_legendre(32, 0.0, 2.0)
        assert float(weights @ nodes ** 5) == pytest.approx(64.0 / 6.0, rel=1e-13)

    def test_self_lp_oracles(self):
        assert numerics.self_lp_mean_oracle(3, 1.0) == pytest.approx(1.5, abs=1e-8)
        assert numerics.self_lp_mean_oracle(2, 1.0) == pytest.approx(8.0 / (3.0 * SQRT_2PI), abs=1e-8)
        assert numerics.self_lp_mean_oracle(3, 2.0) == pytest.approx(6.0, abs=1e-7)

    def test_oracle_rejects_other_p(self):
        with pytest.raises(UsageError):
            numerics.self_lp_mean_oracle(4, 1.0)


class TestKsNormal:
    def test_perfect_quantiles(self):
        n = 1000
        q = stats.norm.ppf((np.arange(1, n + 1) - 0.5) / n)
        result = numerics.ks_normal(q)
        assert result.statistic <= 1.0 / (2 * n) + 1e-9
        assert result.p_value > 0.99
        assert result.n == n

    def test_point_mass(self):
        assert numerics.ks_normal(np.zeros(100)).statistic == pytest.approx(0.5)

    def test_p_value_decreases_with_shift(self):
        q = stats.norm.ppf((np.arange(1, 501) - 0.5) / 500)
        assert numerics.ks_normal(q + 0.3).p_value < numerics.ks_normal(q + 0.1).p_value

    def test_too_few_samples(self):
        with pytest.raises(UsageError):
            numerics.ks_normal(np.zeros(7))

    def test_nan(self):
        with pytest.raises(DataError):
            numerics.ks_normal([0.0] * 9 + [float("nan")])

    def test_null_p_values_are_uniform(self):
        rng = np.random.default_rng(20240601)
        p_values = [numerics.ks_normal(rng.standard_normal(1000)).p_value for _ in range(1000)]
        assert stats.kstest(p_values, "uniform").statistic <= 0.06


class TestSampleMoments:
    def test_two_points(self):
        summary = numerics.sample_moments([-1.0, 1.0])
        assert summary.mean == 0.0
        assert summary.variance == 2.0

    def test_gaussian_kurtosis(self):
        x = np.random.default_rng(5).standard_normal(100_000)
        summary = numerics.sample_moments(x)
        assert summary.kurtosis == pytest.approx(3.0, abs=0.1)
        assert summary.se_mean == pytest.approx(math.sqrt(summary.variance / x.size))

    def test_order_free(self):
        x = np.random.default_rng(6).standard_normal(500)
        assert numerics.sample_moments(x) == numerics.sample_moments(x[::-1])

    def test_constant_sample(self):
        summary = numerics.sample_moments([2.0, 2.0, 2.0])
        assert summary.variance == 0.0
        assert math.isnan(summary.kurtosis)

    def test_too_few(self):
        with pytest.raises(UsageError):
            numerics.sample_moments([1.0])


class TestLoglogSlope:
    def test_exact_power_law(self):
        pairs = [(h, 3.0 * h ** 0.5) for h in (0.4, 0.2, 0.1)]
        assert numerics.loglog_slope(pairs) == pytest.approx(0.5, abs=1e-12)

    def test_single_x(self):
        with pytest.raises(UsageError):
            numerics.loglog_slope([(1.0, 2.0), (1.0, 3.0)])

    def test_non_positive(self):
        with pytest.raises(UsageError):
            numerics.loglog_slope([(1.0, 0.0), (2.0, 3.0)])
