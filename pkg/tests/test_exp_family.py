import math
import unittest

import numpy as np
from scipy.integrate import quad, trapezoid
from scipy.stats import kstest

from csqbm.exp_family import (
    GAUSSIAN,
    ExpFamilyPrior,
    NaturalParams,
    NonNormalizableError,
    c_value,
    coupling_row_mask,
    family_for,
    gaussian_moments,
    gaussian_natural_params,
    grad_c_theta,
    grad_c_v,
    log_density,
    log_partition,
    sample,
    tilt,
)

from .oracles import central_difference, random_prior


def _standard_normal():
    return ExpFamilyPrior.gaussian([0.0], [1.0])


class CValueTest(unittest.TestCase):
    def test_origin_of_standard_normal(self):
        self.assertEqual(c_value(_standard_normal(), [0.0]), 0.0)

    def test_closed_form(self):
        mu, sigma, v = np.array([0.3, -1.0]), np.array([0.7, 2.0]), np.array([1.1, 0.4])
        expected = np.sum((-v ** 2 + 2 * v * mu) / (2 * sigma ** 2))
        self.assertAlmostEqual(c_value(ExpFamilyPrior.gaussian(mu, sigma), v), expected, places=12)
        self.assertAlmostEqual(c_value(ExpFamilyPrior.gaussian([1.0], [1.0]), [1.0]), 0.5, places=15)

    def test_non_finite_input_is_rejected(self):
        with self.assertRaises(ValueError):
            c_value(_standard_normal(), [math.nan])
        with self.assertRaises(ValueError):
            c_value(_standard_normal(), [0.0, 1.0])

    def test_log_scale_shifts_by_constant(self):
        prior = ExpFamilyPrior.gaussian([0.5], [1.5])
        shifted = ExpFamilyPrior.gaussian([0.5], [1.5], log_scale=2.5)
        self.assertAlmostEqual(c_value(shifted, [0.8]) - c_value(prior, [0.8]), 2.5, places=14)


class GradientTest(unittest.TestCase):
    def test_grad_v_examples(self):
        np.testing.assert_array_equal(grad_c_v(_standard_normal(), np.array([0.0])), [0.0])
        prior = ExpFamilyPrior.gaussian([0.5], [2.0])
        np.testing.assert_allclose(grad_c_v(prior, np.array([0.0])), [0.125], atol=1e-15)

    def test_grad_theta_is_the_statistic(self):
        np.testing.assert_array_equal(grad_c_theta(_standard_normal(), np.array([2.0])), [2.0, 4.0])
        prior = ExpFamilyPrior.gaussian([0.0, 0.0], [1.0, 1.0])
        np.testing.assert_array_equal(grad_c_theta(prior, np.array([1.0, -1.0])), [1.0, 1.0, -1.0, 1.0])

    def test_gradients_match_central_differences(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            n = int(rng.integers(1, 4))
            prior = random_prior(n, rng)
            v = rng.normal(size=n)
            fd_v = central_difference(lambda x: c_value(prior, x), v)
            np.testing.assert_allclose(grad_c_v(prior, v), fd_v, rtol=1e-6, atol=1e-8)
            fd_theta = central_difference(lambda t: c_value(prior.with_theta(t), v), prior.theta.values)
            np.testing.assert_allclose(grad_c_theta(prior, v), fd_theta, rtol=1e-6, atol=1e-8)


class LogPartitionTest(unittest.TestCase):
    def test_standard_normal(self):
        self.assertAlmostEqual(log_partition(NaturalParams([0.0, -0.5])), 0.5 * math.log(2 * math.pi), places=14)

    def test_scaled_normal(self):
        for sigma in (0.3, 1.0, 4.0):
            theta = NaturalParams([0.0, -1.0 / (2 * sigma ** 2)])
            self.assertAlmostEqual(log_partition(theta), math.log(sigma * math.sqrt(2 * math.pi)), places=12)

    def test_positive_quadratic_component_is_rejected(self):
        with self.assertRaises(NonNormalizableError) as caught:
            log_partition(NaturalParams([0.0, 0.1]))
        self.assertEqual(caught.exception.unit, 0)

    def test_matches_numerical_integral(self):
        theta = NaturalParams([0.8, -0.3])
        integral, _ = quad(lambda v: math.exp(0.8 * v - 0.3 * v * v), -np.inf, np.inf)
        self.assertAlmostEqual(log_partition(theta), math.log(integral), places=8)


class TiltTest(unittest.TestCase):
    def test_zero_coupling_scales_theta(self):
        theta = NaturalParams(gaussian_natural_params([0.4], [1.2]))
        tilted = tilt(theta, np.zeros((2, 3)), np.array([1.0, -1.0, 1.0]), 2.0)
        np.testing.assert_allclose(tilted.values, 2.0 * theta.values, atol=0)
        identity = tilt(theta, np.zeros((2, 3)), np.array([1.0, -1.0, 1.0]), 1.0)
        np.testing.assert_array_equal(identity.values, theta.values)

    def test_linear_row_tilt(self):
        theta = NaturalParams([0.0, -0.5])
        W = np.array([[0.3], [0.0]])
        tilted = tilt(theta, W, np.array([1.0]), 1.0)
        np.testing.assert_allclose(tilted.values, [0.3, -0.5], atol=1e-15)
        mean, variance = GAUSSIAN.moments(tilted.values)
        np.testing.assert_allclose([mean[0], variance[0]], [0.3, 1.0], atol=1e-15)

        sharper = tilt(theta, W, np.array([1.0]), 2.0)
        np.testing.assert_allclose(sharper.values, [0.6, -1.0], atol=1e-15)
        mean, variance = GAUSSIAN.moments(sharper.values)
        np.testing.assert_allclose([mean[0], variance[0]], [0.3, 0.5], atol=1e-15)
        self.assertEqual(sharper.base_power, 2.0)

    def test_stacked_spins(self):
        theta = NaturalParams([0.0, -0.5, 1.0, -1.0])
        W = np.array([[0.5, 0.0], [0.0, 0.0], [0.0, -0.25], [0.0, 0.0]])
        h = np.array([[1.0, 1.0], [-1.0, 1.0]])
        tilted = tilt(theta, W, h, 1.0)
        self.assertEqual(tilted.values.shape, (2, 4))
        np.testing.assert_allclose(tilted.values[1], [-0.5, -0.5, 0.75, -1.0], atol=1e-15)

    def test_quadratic_coupling_can_break_integrability(self):
        theta = NaturalParams([0.0, -0.5])
        W = np.array([[0.0], [0.75]])
        with self.assertRaises(NonNormalizableError) as caught:
            tilt(theta, W, np.array([1.0]), 1.0)
        self.assertEqual(caught.exception.unit, 0)
        # the other spin keeps the unit integrable
        np.testing.assert_allclose(tilt(theta, W, np.array([-1.0]), 1.0).values, [0.0, -1.25])

    def test_shape_mismatch(self):
        with self.assertRaises(ValueError):
            tilt(NaturalParams([0.0, -0.5]), np.zeros((2, 2)), np.array([1.0]), 1.0)


class SampleTest(unittest.TestCase):
    def test_standard_normal_moments(self):
        draws = sample(NaturalParams([0.0, -0.5]), np.random.default_rng(0), size=100000)
        self.assertEqual(draws.shape, (100000, 1))
        self.assertAlmostEqual(float(draws.mean()), 0.0, delta=0.02)
        self.assertAlmostEqual(float(draws.var()), 1.0, delta=0.03)

    def test_shifted_moments(self):
        draws = sample(NaturalParams([4.0, -1.0]), np.random.default_rng(1), size=100000)
        self.assertAlmostEqual(float(draws.mean()), 2.0, delta=0.02)
        self.assertAlmostEqual(float(draws.var()), 0.5, delta=0.02)

    def test_fixed_seed_is_reproducible(self):
        theta = NaturalParams([1.0, -0.7, -0.2, -2.0])
        np.testing.assert_array_equal(
            sample(theta, np.random.default_rng(5), size=10), sample(theta, np.random.default_rng(5), size=10)
        )

    def test_tilted_samples_match_quadrature_cdf(self):
        theta = NaturalParams([0.2, -0.8])
        tilted = tilt(theta, np.array([[0.6], [0.0]]), np.array([-1.0]), 1.7)
        draws = sample(tilted, np.random.default_rng(8), size=50000)[:, 0]
        mean, variance = GAUSSIAN.moments(tilted.values)
        sd = math.sqrt(variance[0])
        grid = np.linspace(mean[0] - 8 * sd, mean[0] + 8 * sd, 16001)
        density = np.exp(log_density(tilted, grid[:, None]))
        cdf = np.concatenate([[0.0], np.cumsum((density[1:] + density[:-1]) / 2 * np.diff(grid))])
        statistic = kstest(draws, lambda x: np.interp(x, grid, cdf)).statistic
        self.assertLessEqual(statistic, 0.02)

    def test_non_integrable_parameters(self):
        with self.assertRaises(NonNormalizableError):
            sample(NaturalParams([0.0, 0.0]), np.random.default_rng(0))


class LogDensityTest(unittest.TestCase):
    def test_standard_normal_values(self):
        theta = NaturalParams([0.0, -0.5])
        self.assertAlmostEqual(log_density(theta, np.array([0.0])), -0.9189385332, places=9)
        self.assertAlmostEqual(log_density(theta, np.array([1.0])), -1.4189385332, places=9)

    def test_standard_normal_integrates_to_one(self):
        grid = np.arange(-8.0, 8.0 + 5e-4, 1e-3)
        density = np.exp(log_density(NaturalParams([0.0, -0.5]), grid[:, None]))
        self.assertAlmostEqual(trapezoid(density, grid), 1.0, delta=1e-6)

    def test_random_parameters_integrate_to_one(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            mu, sigma = rng.uniform(-2, 2), rng.uniform(0.3, 3.0)
            theta = NaturalParams(gaussian_natural_params([mu], [sigma]))
            grid = np.linspace(mu - 8 * sigma, mu + 8 * sigma, 16001)
            density = np.exp(log_density(theta, grid[:, None]))
            self.assertAlmostEqual(trapezoid(density, grid), 1.0, delta=1e-6)


class ParameterizationTest(unittest.TestCase):
    def test_moment_round_trip(self):
        rng = np.random.default_rng(4)
        mu, sigma = rng.normal(size=5), rng.uniform(0.1, 5.0, size=5)
        back_mu, back_sigma = gaussian_moments(gaussian_natural_params(mu, sigma))
        np.testing.assert_allclose(back_mu, mu, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(back_sigma, sigma, rtol=1e-12)

    def test_sigma_must_be_positive(self):
        with self.assertRaises(ValueError):
            gaussian_natural_params([0.0], [0.0])

    def test_default_mask_enables_linear_rows_only(self):
        np.testing.assert_array_equal(coupling_row_mask(GAUSSIAN, 2), [True, False, True, False])
        np.testing.assert_array_equal(coupling_row_mask(GAUSSIAN, 2, quadratic=True), [True] * 4)

    def test_prior_dictionary_round_trip(self):
        prior = ExpFamilyPrior.gaussian([0.1, -0.4], [0.9, 1.3], log_scale=0.25)
        again = ExpFamilyPrior.from_dict(prior.to_dict())
        np.testing.assert_array_equal(again.theta.values, prior.theta.values)
        self.assertEqual(again.log_scale, 0.25)

    def test_unknown_family(self):
        with self.assertRaises(ValueError):
            family_for("poisson")


if __name__ == "__main__":
    unittest.main()
