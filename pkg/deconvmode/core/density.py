"""
Deconvoluting kernel estimators of the joint density p(x, y), its y-derivatives,
the marginal f_X and the local linear building blocks S_l, T_l.

Every estimator is a sum over the n observations of a covariate weight
K_{U,l}((W_j - x) / h1) times a response weight built from K_2 and its derivatives.
`CovariateSlice` caches the covariate weights for one x so that repeated y-queries
(mean-shift iterations, CV integrals) only pay for the response part.
Estimates are signed and are returned as computed.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Union

import torch
from pydantic import BaseModel, ConfigDict, PositiveFloat

from deconvmode.core.error_model import ErrorModel
from deconvmode.core.kernels import (
    DeconvolutingKernel,
    KernelTable,
    build_table,
    k2,
)
from deconvmode.errors import DataError, DomainError, SingularDesignError
from deconvmode.utils import DTYPE, as_tensor

logger = logging.getLogger(__name__)

EPS_DET = 1e-12

YLike = Union[float, torch.Tensor]


@dataclass(frozen=True)
class Dataset:
    """Paired observations (W_j, Y_j), W_j = X_j + U_j, stored as float64 tensors."""

    w: torch.Tensor
    y: torch.Tensor

    def __post_init__(self):
        object.__setattr__(self, "w", as_tensor(self.w).reshape(-1))
        object.__setattr__(self, "y", as_tensor(self.y).reshape(-1))
        if self.w.numel() != self.y.numel():
            raise DataError(
                f"w and y must have the same length, got {self.w.numel()} and {self.y.numel()}"
            )
        if self.w.numel() < 2:
            raise DataError(f"at least 2 observations are required, got {self.w.numel()}")
        for name, values in (("w", self.w), ("y", self.y)):
            bad = (~torch.isfinite(values)).nonzero()
            if bad.numel():
                raise DataError(f"non-finite value in {name}", row=int(bad[0, 0]) + 1)

    @property
    def n(self) -> int:
        return self.w.numel()

    def with_covariate(self, w: torch.Tensor) -> "Dataset":
        return Dataset(w=w, y=self.y)

    def drop(self, index: int) -> "Dataset":
        keep = torch.ones(self.n, dtype=torch.bool)
        keep[index] = False
        return Dataset(w=self.w[keep], y=self.y[keep])


class Bandwidths(BaseModel):
    model_config = ConfigDict(frozen=True)

    h1: PositiveFloat
    h2: PositiveFloat


class KernelBank:
    """
    K_{U,0}, K_{U,1}, K_{U,2} for one (h1, error model).

    When tables are supplied the bank reads them instead of running the
    quadrature; a table built for another (h1, model) is rejected.
    """

    def __init__(
        self,
        h1: float,
        model: ErrorModel,
        tables: Optional[Dict[int, KernelTable]] = None,
    ):
        self.h1 = float(h1)
        self.model = model
        self._direct = {ell: DeconvolutingKernel(ell, self.h1, model) for ell in (0, 1, 2)}
        self._tables = dict(tables or {})
        for ell, table in self._tables.items():
            if table.ell != ell or not math.isclose(table.h1, self.h1) or table.model != model:
                raise DomainError(
                    f"kernel table (ell={table.ell}, h1={table.h1}, {table.model.kind.value}) does "
                    f"not match the requested (ell={ell}, h1={self.h1}, {model.kind.value})"
                )

    @classmethod
    def tabulated(cls, h1: float, model: ErrorModel, **table_kwargs) -> "KernelBank":
        tables = {ell: build_table(ell, h1, model, **table_kwargs) for ell in (0, 1, 2)}
        return cls(h1, model, tables)

    @property
    def is_tabulated(self) -> bool:
        return bool(self._tables)

    def __call__(self, ell: int, t: torch.Tensor) -> torch.Tensor:
        table = self._tables.get(ell)
        if table is not None:
            return table.lookup(t)
        return self._direct[ell](t)


def response_weights(y_obs: torch.Tensor, y: torch.Tensor, h2: float, deriv: int) -> torch.Tensor:
    """
    d^deriv/dy^deriv of K_2((Y_j - y)/h2) / h2, shape (n, m) for m query values y.
    """
    if deriv not in (0, 1, 2):
        raise DomainError(f"y-derivative order must be 0, 1 or 2, got {deriv}")
    u = (y_obs[:, None] - y.reshape(1, -1)) / h2
    return (-1.0) ** deriv * k2(deriv, u) / h2 ** (deriv + 1)


class CovariateSlice:
    """
    Covariate weights K_{U,l}((W_j - x)/h1), l = 0, 1, 2, for a fixed x.

    The local linear design S_n(x) does not depend on y and is computed once here.
    """

    def __init__(
        self,
        data: Dataset,
        h1: float,
        model: ErrorModel,
        x: float,
        bank: Optional[KernelBank] = None,
    ):
        if bank is None:
            bank = KernelBank(h1, model)
        elif not math.isclose(bank.h1, h1) or bank.model != model:
            raise DomainError("kernel bank was built for another (h1, error model)")
        self.data = data
        self.h1 = float(h1)
        self.model = model
        self.x = float(x)
        t = (data.w - self.x) / self.h1
        self.weights = {ell: bank(ell, t) for ell in (0, 1, 2)}
        self._norm = data.n * self.h1

    def s(self, ell: int) -> float:
        return float(self.weights[ell].sum() / self._norm)

    def design(self) -> Tuple[float, float, float, float]:
        """(S_0, S_1, S_2, det) with det = S_0 S_2 - S_1^2; raises when singular."""
        s0, s1, s2 = self.s(0), self.s(1), self.s(2)
        det = s0 * s2 - s1 * s1
        scale = abs(s0 * s2)
        if det == 0.0 or abs(det) < EPS_DET * scale:
            raise SingularDesignError(self.x, det)
        return s0, s1, s2, det

    def t(self, ell: int, y: torch.Tensor, h2: float, deriv: int = 0) -> torch.Tensor:
        resp = response_weights(self.data.y, y, h2, int(deriv))
        return (self.weights[ell] @ resp) / self._norm

    def ll_weights(self) -> torch.Tensor:
        """Per-observation local linear weights K_{U,0} S_2 - K_{U,1} S_1."""
        _, s1, s2, _ = self.design()
        return self.weights[0] * s2 - self.weights[1] * s1

    def cond_density_ll(self, y: torch.Tensor, h2: float, deriv: int = 0) -> torch.Tensor:
        _, s1, s2, det = self.design()
        return (s2 * self.t(0, y, h2, deriv) - s1 * self.t(1, y, h2, deriv)) / det


def _query(y: YLike) -> Tuple[torch.Tensor, bool]:
    if isinstance(y, torch.Tensor):
        return y.to(DTYPE), True
    return as_tensor([float(y)]), False


def _result(values: torch.Tensor, y_tensor: torch.Tensor, is_tensor: bool) -> YLike:
    if is_tensor:
        return values.reshape(y_tensor.shape)
    return float(values[0])


def s_hat(
    data: Dataset,
    h1: float,
    model: ErrorModel,
    x: float,
    ell: int,
    bank: Optional[KernelBank] = None,
) -> float:
    """S_l(x) = (1/(n h1)) sum_j K_{U,l}((W_j - x)/h1)."""
    if ell not in (0, 1, 2):
        raise DomainError(f"ell must be 0, 1 or 2, got {ell}")
    return CovariateSlice(data, h1, model, x, bank).s(ell)


def fx_deconv(
    data: Dataset,
    h1: float,
    model: ErrorModel,
    x: float,
    bank: Optional[KernelBank] = None,
) -> float:
    return s_hat(data, h1, model, x, 0, bank)


def t_hat(
    data: Dataset,
    bw: Bandwidths,
    model: ErrorModel,
    x: float,
    y: YLike,
    ell: int,
    deriv: Union[bool, int] = False,
    bank: Optional[KernelBank] = None,
) -> YLike:
    """
    T_l(x, y) (deriv 0) or its y-derivatives (deriv 1, 2).

    deriv=1 is (1/(n h1 h2^2)) sum_j K_{U,l}(.) K_2(u_j) u_j with u_j = (Y_j - y)/h2.
    """
    if ell not in (0, 1, 2):
        raise DomainError(f"ell must be 0, 1 or 2, got {ell}")
    y_tensor, is_tensor = _query(y)
    slice_ = CovariateSlice(data, bw.h1, model, x, bank)
    return _result(slice_.t(ell, y_tensor.reshape(-1), bw.h2, int(deriv)), y_tensor, is_tensor)


def joint_density(
    data: Dataset,
    bw: Bandwidths,
    model: ErrorModel,
    x: float,
    y: YLike,
    bank: Optional[KernelBank] = None,
) -> YLike:
    return t_hat(data, bw, model, x, y, 0, 0, bank)


def joint_density_dy(
    data: Dataset,
    bw: Bandwidths,
    model: ErrorModel,
    x: float,
    y: YLike,
    bank: Optional[KernelBank] = None,
) -> YLike:
    return t_hat(data, bw, model, x, y, 0, 1, bank)


def joint_density_dyy(
    data: Dataset,
    bw: Bandwidths,
    model: ErrorModel,
    x: float,
    y: YLike,
    bank: Optional[KernelBank] = None,
) -> YLike:
    return t_hat(data, bw, model, x, y, 0, 2, bank)


def cond_density_ll(
    data: Dataset,
    bw: Bandwidths,
    model: ErrorModel,
    x: float,
    y: YLike,
    deriv: Union[bool, int] = False,
    bank: Optional[KernelBank] = None,
) -> YLike:
    """
    Local linear estimate of p(y|x), or of its y-derivatives.

    Equals (S_2 T_0 - S_1 T_1) / (S_0 S_2 - S_1^2), with T replaced by its
    derivative for deriv > 0.
    """
    y_tensor, is_tensor = _query(y)
    slice_ = CovariateSlice(data, bw.h1, model, x, bank)
    values = slice_.cond_density_ll(y_tensor.reshape(-1), bw.h2, int(deriv))
    return _result(values, y_tensor, is_tensor)


def cond_density_lc(
    data: Dataset,
    bw: Bandwidths,
    model: ErrorModel,
    x: float,
    y: YLike,
    deriv: Union[bool, int] = False,
    bank: Optional[KernelBank] = None,
) -> YLike:
    """Local constant estimate p(x, y) / f_X(x) of p(y|x) or its y-derivatives."""
    y_tensor, is_tensor = _query(y)
    slice_ = CovariateSlice(data, bw.h1, model, x, bank)
    fx = slice_.s(0)
    if fx == 0.0:
        raise SingularDesignError(float(x), fx)
    values = slice_.t(0, y_tensor.reshape(-1), bw.h2, int(deriv)) / fx
    return _result(values, y_tensor, is_tensor)


def sample_sd(values: torch.Tensor) -> float:
    return float(torch.std(values, unbiased=True))


def sample_range(values: torch.Tensor) -> float:
    return float(values.max() - values.min())
