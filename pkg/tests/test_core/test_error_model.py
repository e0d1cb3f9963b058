import math
import unittest

import torch
from pydantic import ValidationError

from deconvmode.core.error_model import (
    ErrorKind,
    ErrorModel,
    phi_u,
    sample_errors,
    sigma2_from_reliability,
)
from deconvmode.errors import DomainError
from deconvmode.utils import DTYPE


class TestCharacteristicFunction(unittest.TestCase):

    def setUp(self):
        self.laplace = ErrorModel.laplace(math.sqrt(4.0 / 9.0))

    def test_known_values(self):
        self.assertEqual(phi_u(ErrorModel.none(), 3.7), 1.0)
        self.assertEqual(phi_u(self.laplace, 0.0), 1.0)
        self.assertAlmostEqual(phi_u(self.laplace, 3.0), 1.0 / 3.0, places=14)
        gaussian = ErrorModel.gaussian(0.5)
        self.assertAlmostEqual(phi_u(gaussian, 2.0), math.exp(-0.5 * 0.25 * 4.0), places=14)

    def test_even_and_bounded(self):
        t = 20.0 * torch.randn(500, generator=torch.Generator().manual_seed(3), dtype=DTYPE)
        for model in (ErrorModel.none(), self.laplace, ErrorModel.gaussian(0.7)):
            with self.subTest(kind=model.kind.value):
                values = phi_u(model, t)
                torch.testing.assert_close(values, phi_u(model, -t), rtol=0, atol=0)
                self.assertTrue(bool((values.abs() <= 1.0).all()))

    def test_laplace_tail_constant(self):
        t = 1e6
        limit = 2.0 / self.laplace.sigma_u**2
        self.assertLess(abs(t**2 * phi_u(self.laplace, t) / limit - 1.0), 1e-6)
        self.assertEqual(self.laplace.smoothness.kind, "ordinary")
        self.assertAlmostEqual(self.laplace.smoothness.c, limit)
        self.assertEqual(self.laplace.smoothness.order, 2.0)

    def test_smoothness_classes(self):
        self.assertEqual(ErrorModel.none().smoothness.kind, "degenerate")
        gaussian = ErrorModel.gaussian(0.5).smoothness
        self.assertEqual(gaussian.kind, "super")
        self.assertAlmostEqual(gaussian.d2, 8.0)

    def test_density_has_unit_mass(self):
        u = torch.linspace(-15.0, 15.0, 30001, dtype=DTYPE)
        for model in (self.laplace, ErrorModel.gaussian(0.7)):
            with self.subTest(kind=model.kind.value):
                mass = float(torch.trapezoid(model.density(u), u))
                self.assertAlmostEqual(mass, 1.0, places=4)
        with self.assertRaises(DomainError):
            ErrorModel.none().density(u)


class TestErrorSampling(unittest.TestCase):

    def test_error_free_draws_are_zero(self):
        draws = sample_errors(ErrorModel.none(), 5, seed=11)
        torch.testing.assert_close(draws, torch.zeros(5, dtype=DTYPE))

    def test_laplace_moments(self):
        model = ErrorModel.laplace(math.sqrt(4.0 / 9.0))
        draws = sample_errors(model, 10**6, seed=1)
        self.assertLess(abs(float(draws.var()) / (4.0 / 9.0) - 1.0), 0.01)
        self.assertLess(abs(float(draws.mean())), 3.0 * model.sigma_u / 1e3)

    def test_deterministic_given_seed(self):
        model = ErrorModel.gaussian(0.3)
        torch.testing.assert_close(sample_errors(model, 100, 5), sample_errors(model, 100, 5))
        self.assertFalse(torch.equal(sample_errors(model, 100, 5), sample_errors(model, 100, 6)))

    def test_rejects_empty_sample(self):
        with self.assertRaises(DomainError):
            sample_errors(ErrorModel.laplace(1.0), 0, seed=0)


class TestReliability(unittest.TestCase):

    def test_examples(self):
        self.assertEqual(sigma2_from_reliability(4.0 / 3.0, 1.0), 0.0)
        self.assertAlmostEqual(sigma2_from_reliability(4.0 / 3.0, 0.75), 4.0 / 9.0, places=14)
        self.assertAlmostEqual(sigma2_from_reliability(4.0 / 3.0, 0.95), 4.0 / 57.0, places=14)

    def test_out_of_range(self):
        for lam in (0.0, -0.2, 1.5):
            with self.subTest(lam=lam):
                with self.assertRaises(DomainError):
                    sigma2_from_reliability(4.0 / 3.0, lam)

    def test_model_from_reliability(self):
        self.assertTrue(ErrorModel.from_reliability(ErrorKind.LAPLACE, 4.0 / 3.0, 1.0).is_error_free)
        model = ErrorModel.from_reliability(ErrorKind.LAPLACE, 4.0 / 3.0, 0.75)
        self.assertEqual(model.kind, ErrorKind.LAPLACE)
        self.assertAlmostEqual(model.sigma_u**2, 4.0 / 9.0, places=14)

    def test_inconsistent_model_rejected(self):
        with self.assertRaises(ValidationError):
            ErrorModel(kind=ErrorKind.LAPLACE, sigma_u=0.0)
        with self.assertRaises(ValidationError):
            ErrorModel(kind=ErrorKind.NONE, sigma_u=0.5)


if __name__ == "__main__":
    unittest.main(verbosity=2)
