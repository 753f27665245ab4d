import math
import unittest

import numpy as np

from csqbm.discrete import (
    DiscreteSqbmModel,
    clamped_hamiltonian,
    discrete_free_energy,
    discrete_grad_free_energy,
    discrete_visible_distribution,
)
from csqbm.model import ModelValidationError
from csqbm.quantum_core import PauliHamiltonianSpec, PauliOp, PauliTerm, all_spin_configurations

from .oracles import (
    central_difference,
    projection_free_energy,
    projection_gradient,
    random_discrete_model,
)


class ClampingTest(unittest.TestCase):
    def test_single_visible_single_hidden_coupling(self):
        spec = PauliHamiltonianSpec(2, (PauliTerm.pair(1.0, (0, PauliOp.Z), (1, PauliOp.Z)),))
        model = DiscreteSqbmModel(1, spec)
        np.testing.assert_allclose(clamped_hamiltonian(model, [1.0]), np.diag([1.0, -1.0]), atol=0)
        self.assertAlmostEqual(discrete_free_energy(model, [1.0]), -math.log(2 * math.cosh(1.0)), places=12)
        self.assertAlmostEqual(discrete_free_energy(model, [1.0]), -1.1269, places=4)

    def test_no_hidden_units_gives_scalar_energy(self):
        spec = PauliHamiltonianSpec(1, (PauliTerm.single(0.8, 0, PauliOp.Z),))
        model = DiscreteSqbmModel(1, spec)
        self.assertEqual(discrete_free_energy(model, [1.0]), 0.8)
        self.assertEqual(discrete_free_energy(model, [-1.0]), -0.8)
        np.testing.assert_array_equal(discrete_grad_free_energy(model, [-1.0]), [-1.0])

    def test_matches_projection_trace(self):
        rng = np.random.default_rng(99)
        for _ in range(50):
            n = int(rng.integers(1, 4))
            m = int(rng.integers(0, 7 - n))
            model = random_discrete_model(n, m, rng, beta=float(rng.choice([0.5, 1.0, 2.0])))
            for v in all_spin_configurations(n)[:4]:
                self.assertAlmostEqual(
                    discrete_free_energy(model, v), projection_free_energy(model, v), delta=1e-10
                )
                np.testing.assert_allclose(
                    discrete_grad_free_energy(model, v), projection_gradient(model, v), atol=1e-10
                )

    def test_gradient_matches_central_differences(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            model = random_discrete_model(2, 2, rng)
            v = np.array([1.0, -1.0])

            def energy(coefficients):
                return discrete_free_energy(
                    DiscreteSqbmModel(model.n, model.spec.with_coefficients(coefficients), model.beta), v
                )

            fd = central_difference(energy, model.spec.coefficients())
            np.testing.assert_allclose(discrete_grad_free_energy(model, v), fd, rtol=1e-6, atol=1e-8)

    def test_zero_weight_bias_gradient_is_the_spin(self):
        terms = (
            PauliTerm.single(0.0, 0, PauliOp.Z),
            PauliTerm.single(0.0, 1, PauliOp.Z),
            PauliTerm.single(0.0, 2, PauliOp.X),
            PauliTerm.pair(0.0, (0, PauliOp.Z), (2, PauliOp.X)),
        )
        model = DiscreteSqbmModel(2, PauliHamiltonianSpec(3, terms))
        for v in all_spin_configurations(2):
            gradient = discrete_grad_free_energy(model, v)
            np.testing.assert_allclose(gradient[:2], v, atol=1e-14)


class ValidationTest(unittest.TestCase):
    def test_visible_units_only_take_z(self):
        spec = PauliHamiltonianSpec(2, (PauliTerm.pair(1.0, (0, PauliOp.X), (1, PauliOp.Z)),))
        with self.assertRaises(ModelValidationError):
            DiscreteSqbmModel(1, spec)

    def test_visible_values_must_be_spins(self):
        model = random_discrete_model(1, 1, np.random.default_rng(0))
        with self.assertRaises(ValueError):
            discrete_free_energy(model, [0.5])
        with self.assertRaises(ValueError):
            discrete_free_energy(model, [1.0, 1.0])


class VisibleDistributionTest(unittest.TestCase):
    def test_probabilities_follow_free_energy(self):
        model = random_discrete_model(2, 2, np.random.default_rng(4))
        configurations, probabilities = discrete_visible_distribution(model)
        self.assertEqual(configurations.shape, (4, 2))
        self.assertAlmostEqual(probabilities.sum(), 1.0, delta=1e-12)
        energies = np.array([discrete_free_energy(model, v) for v in configurations])
        np.testing.assert_allclose(
            probabilities[0] / probabilities[1], np.exp(-model.beta * (energies[0] - energies[1])), rtol=1e-12
        )


if __name__ == "__main__":
    unittest.main()
