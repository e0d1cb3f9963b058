import math
import unittest

import torch

from deconvmode.core.density import (
    Bandwidths,
    CovariateSlice,
    Dataset,
    KernelBank,
    cond_density_lc,
    cond_density_ll,
    fx_deconv,
    joint_density,
    joint_density_dy,
    joint_density_dyy,
    s_hat,
    t_hat,
)
from deconvmode.core.error_model import ErrorKind, ErrorModel
from deconvmode.core.kernels import build_table
from deconvmode.errors import DataError, DomainError, SingularDesignError
from deconvmode.simulation.scenarios import VAR_X
from deconvmode.utils import DTYPE, make_generator

from tests.test_utils.utils import (
    RUN_SLOW,
    SLOW_REASON,
    normal_pdf,
    plain_local_linear,
    plain_s,
    plain_t,
    random_dataset,
)

K1_AT_ZERO = 16.0 / (35.0 * math.pi)
LAPLACE = ErrorModel.from_reliability(ErrorKind.LAPLACE, VAR_X, 0.85)


def query_points(n, seed):
    generator = make_generator(seed, 7)
    return (2.0 * torch.rand(n, 2, generator=generator, dtype=DTYPE) - 1.0).tolist()


class TestDataset(unittest.TestCase):

    def test_validation(self):
        with self.assertRaises(DataError):
            Dataset(w=[0.0, 1.0], y=[0.0])
        with self.assertRaises(DataError):
            Dataset(w=[0.0], y=[0.0])
        with self.assertRaises(DataError) as ctx:
            Dataset(w=[0.0, 1.0, 2.0], y=[0.0, float("nan"), 1.0])
        self.assertEqual(ctx.exception.row, 2)

    def test_has_no_hidden_covariate(self):
        data = Dataset(w=[0.0, 1.0], y=[2.0, 3.0])
        self.assertEqual(set(data.__dataclass_fields__), {"w", "y"})
        self.assertEqual(data.n, 2)
        self.assertEqual(data.w.dtype, DTYPE)


class TestJointDensity(unittest.TestCase):

    def setUp(self):
        self.point = Dataset(w=[0.0, 0.0], y=[0.0, 0.0])
        self.unit = Bandwidths(h1=1.0, h2=1.0)
        self.none = ErrorModel.none()

    def test_single_point_values(self):
        self.assertAlmostEqual(
            joint_density(self.point, self.unit, self.none, 0.0, 0.0),
            K1_AT_ZERO / math.sqrt(2.0 * math.pi),
            places=12,
        )
        self.assertAlmostEqual(
            joint_density_dy(self.point, self.unit, self.none, 0.0, -1.0),
            K1_AT_ZERO * math.exp(-0.5) / math.sqrt(2.0 * math.pi),
            places=12,
        )
        self.assertAlmostEqual(fx_deconv(self.point, 1.0, self.none, 0.0), K1_AT_ZERO, places=12)

    def test_antisymmetric_in_y(self):
        data = Dataset(w=[0.0, 0.0], y=[-1.0, 1.0])
        self.assertAlmostEqual(joint_density_dy(data, self.unit, self.none, 0.0, 0.0), 0.0, places=15)

    def test_error_free_reduction(self):
        data = random_dataset(40, seed=1)
        bw = Bandwidths(h1=0.4, h2=0.3)
        for x, y in query_points(100, seed=1):
            self.assertAlmostEqual(
                joint_density(data, bw, self.none, x, y),
                plain_t(data.w, data.y, x, y, bw.h1, bw.h2, 0),
                delta=1e-10,
            )

    def test_tensor_queries(self):
        data = random_dataset(30, seed=2)
        bw = Bandwidths(h1=0.5, h2=0.4)
        y = torch.linspace(-2.0, 2.0, 7, dtype=DTYPE)
        values = joint_density(data, bw, LAPLACE, 0.3, y)
        self.assertEqual(values.shape, y.shape)
        for k in range(y.numel()):
            self.assertAlmostEqual(
                float(values[k]), joint_density(data, bw, LAPLACE, 0.3, float(y[k])), places=14
            )

    def test_derivatives_match_finite_differences(self):
        data = random_dataset(50, seed=3)
        bw = Bandwidths(h1=0.45, h2=0.35)
        eps = 1e-5
        for x, y in query_points(10, seed=3):
            with self.subTest(x=x, y=y):
                fd = (
                    joint_density(data, bw, LAPLACE, x, y + eps)
                    - joint_density(data, bw, LAPLACE, x, y - eps)
                ) / (2 * eps)
                self.assertAlmostEqual(joint_density_dy(data, bw, LAPLACE, x, y), fd, delta=1e-6)
                fd2 = (
                    joint_density_dy(data, bw, LAPLACE, x, y + eps)
                    - joint_density_dy(data, bw, LAPLACE, x, y - eps)
                ) / (2 * eps)
                self.assertAlmostEqual(joint_density_dyy(data, bw, LAPLACE, x, y), fd2, delta=1e-6)

    def test_duplicating_data_changes_nothing(self):
        data = random_dataset(25, seed=4)
        doubled = Dataset(w=torch.cat([data.w, data.w]), y=torch.cat([data.y, data.y]))
        bw = Bandwidths(h1=0.5, h2=0.5)
        for x, y in query_points(5, seed=4):
            self.assertAlmostEqual(
                joint_density(data, bw, LAPLACE, x, y),
                joint_density(doubled, bw, LAPLACE, x, y),
                places=13,
            )
            self.assertAlmostEqual(
                cond_density_ll(data, bw, LAPLACE, x, y),
                cond_density_ll(doubled, bw, LAPLACE, x, y),
                places=11,
            )

    def test_unit_mass(self):
        generator = make_generator(5)
        x_true = -2.0 + 4.0 * torch.rand(200, generator=generator, dtype=DTYPE)
        y = x_true + 0.5 * torch.randn(200, generator=generator, dtype=DTYPE)
        data = Dataset(w=x_true + LAPLACE.sample(200, generator), y=y)
        bw = Bandwidths(h1=0.5, h2=0.5)

        xs = torch.linspace(-20.0, 20.0, 2001, dtype=DTYPE)
        ys = torch.linspace(float(y.min()) - 5.0, float(y.max()) + 5.0, 1501, dtype=DTYPE)
        inner = torch.stack(
            [torch.trapezoid(joint_density(data, bw, LAPLACE, float(x), ys), ys) for x in xs]
        )
        self.assertLess(abs(float(torch.trapezoid(inner, xs)) - 1.0), 1e-3)
        fx = torch.tensor([fx_deconv(data, bw.h1, LAPLACE, float(x)) for x in xs], dtype=DTYPE)
        self.assertLess(abs(float(torch.trapezoid(fx, xs)) - 1.0), 1e-3)


class TestLocalLinearParts(unittest.TestCase):

    def test_s_hat_matches_fx(self):
        data = random_dataset(30, seed=6)
        for x in (-0.5, 0.0, 0.7):
            self.assertEqual(s_hat(data, 0.4, LAPLACE, x, 0), fx_deconv(data, 0.4, LAPLACE, x))

    def test_s_hat_odd_order_cancels(self):
        data = Dataset(w=[-0.3, 0.3, -1.1, 1.1], y=[0.0, 1.0, 2.0, 3.0])
        self.assertAlmostEqual(s_hat(data, 0.5, ErrorModel.none(), 0.0, 1), 0.0, places=15)

    def test_error_free_reduction(self):
        data = random_dataset(40, seed=7)
        bw = Bandwidths(h1=0.5, h2=0.4)
        for x, y in query_points(20, seed=7):
            for ell in (0, 1, 2):
                self.assertAlmostEqual(
                    s_hat(data, bw.h1, ErrorModel.none(), x, ell),
                    plain_s(data.w, x, bw.h1, ell),
                    delta=1e-10,
                )
            for ell in (0, 1):
                self.assertAlmostEqual(
                    t_hat(data, bw, ErrorModel.none(), x, y, ell),
                    plain_t(data.w, data.y, x, y, bw.h1, bw.h2, ell),
                    delta=1e-10,
                )
            self.assertAlmostEqual(
                cond_density_ll(data, bw, ErrorModel.none(), x, y),
                plain_local_linear(data.w, data.y, x, y, bw.h1, bw.h2),
                delta=1e-10,
            )

    def test_t_hat_first_order_vanishes_at_x(self):
        data = Dataset(w=[0.2, 0.2, 0.2], y=[0.0, 1.0, -1.0])
        bw = Bandwidths(h1=0.3, h2=0.3)
        self.assertAlmostEqual(t_hat(data, bw, ErrorModel.none(), 0.2, 0.4, 1), 0.0, places=15)

    def test_t_hat_matches_joint_density(self):
        data = random_dataset(20, seed=8)
        bw = Bandwidths(h1=0.6, h2=0.3)
        self.assertEqual(
            t_hat(data, bw, LAPLACE, 0.1, 0.2, 0), joint_density(data, bw, LAPLACE, 0.1, 0.2)
        )
        self.assertEqual(
            t_hat(data, bw, LAPLACE, 0.1, 0.2, 0, deriv=True),
            joint_density_dy(data, bw, LAPLACE, 0.1, 0.2),
        )

    def test_conditional_derivatives_match_finite_differences(self):
        data = random_dataset(60, seed=9)
        bw = Bandwidths(h1=0.5, h2=0.4)
        eps = 1e-5
        for x, y in query_points(8, seed=9):
            for fn in (cond_density_ll, cond_density_lc):
                with self.subTest(estimator=fn.__name__, x=x, y=y):
                    fd = (fn(data, bw, LAPLACE, x, y + eps) - fn(data, bw, LAPLACE, x, y - eps)) / (
                        2 * eps
                    )
                    self.assertAlmostEqual(fn(data, bw, LAPLACE, x, y, deriv=True), fd, delta=1e-6)

    def test_singular_design(self):
        data = Dataset(w=[0.5, 0.5, 0.5], y=[0.0, 1.0, 2.0])
        bw = Bandwidths(h1=0.4, h2=0.4)
        with self.assertRaises(SingularDesignError) as ctx:
            cond_density_ll(data, bw, ErrorModel.none(), 0.0, 1.0)
        self.assertEqual(ctx.exception.x, 0.0)

    def test_consistency_against_known_density(self):
        generator = make_generator(10)
        x = -2.0 + 4.0 * torch.rand(5000, generator=generator, dtype=DTYPE)
        y = torch.randn(5000, generator=generator, dtype=DTYPE)
        value = cond_density_ll(Dataset(w=x, y=y), Bandwidths(h1=0.3, h2=0.3), ErrorModel.none(), 0.0, 0.0)
        self.assertLess(abs(value - float(normal_pdf(torch.tensor(0.0)))), 0.05)

    @unittest.skipUnless(RUN_SLOW, SLOW_REASON)
    def test_conditionally_unbiased(self):
        generator = make_generator(11)
        x_true = -2.0 + 4.0 * torch.rand(100, generator=generator, dtype=DTYPE)
        y = x_true**2 + 0.5 * torch.randn(100, generator=generator, dtype=DTYPE)
        bw = Bandwidths(h1=0.5, h2=0.4)
        target = plain_t(x_true, y, 0.3, 0.5, bw.h1, bw.h2, 0)
        draws = torch.tensor(
            [
                joint_density(Dataset(w=x_true + LAPLACE.sample(100, generator), y=y), bw, LAPLACE, 0.3, 0.5)
                for _ in range(2000)
            ],
            dtype=DTYPE,
        )
        se = float(draws.std()) / math.sqrt(draws.numel())
        self.assertLess(abs(float(draws.mean()) - target), 4.0 * se)


class TestKernelBank(unittest.TestCase):

    def test_tabulated_bank_agrees_with_quadrature(self):
        data = random_dataset(40, seed=12)
        bw = Bandwidths(h1=0.5, h2=0.4)
        bank = KernelBank.tabulated(bw.h1, LAPLACE)
        self.assertTrue(bank.is_tabulated)
        for x, y in query_points(5, seed=12):
            self.assertAlmostEqual(
                cond_density_ll(data, bw, LAPLACE, x, y, bank=bank),
                cond_density_ll(data, bw, LAPLACE, x, y),
                delta=1e-4,
            )

    def test_mismatched_table_rejected(self):
        with self.assertRaises(DomainError):
            KernelBank(0.5, LAPLACE, {0: build_table(0, 0.6, LAPLACE, resolution=11)})
        with self.assertRaises(DomainError):
            KernelBank(0.5, LAPLACE, {1: build_table(0, 0.5, LAPLACE, resolution=11)})
        with self.assertRaises(DomainError):
            CovariateSlice(random_dataset(5), 0.5, LAPLACE, 0.0, KernelBank(0.4, LAPLACE))


if __name__ == "__main__":
    unittest.main(verbosity=2)
