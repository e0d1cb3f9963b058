"""
Known measurement-error laws U for the model W = X + U.

The error law enters the estimators only through its characteristic function
phi_U; the smoothness descriptor records the tail class that governs the
asymptotic rates in `deconvmode.theory`.
"""

import logging
import math
from enum import Enum
from typing import Literal, Optional, Union

import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator

from deconvmode.errors import DomainError
from deconvmode.utils import DTYPE, as_tensor, make_generator

logger = logging.getLogger(__name__)

Scalar = Union[float, int]


class ErrorKind(str, Enum):
    NONE = "none"
    LAPLACE = "laplace"
    GAUSSIAN = "gaussian"


class Smoothness(BaseModel):
    """
    Tail class of phi_U.

    Args:
        kind(str): "degenerate" (no error), "ordinary" (t^b phi_U(t) -> c) or "super"
            (|phi_U(t)| ~ |t|^{b0} exp(-|t|^b / d2)).
        order(float): The order b.
        c(float): Ordinary-smooth limit constant.
        d0, d1, d2, b0, b1(float): Super-smooth bound constants. Only d2 and the order
            feed the rate calculators; the others are descriptive.
    """

    model_config = ConfigDict(frozen=True)

    kind: Literal["degenerate", "ordinary", "super"]
    order: Optional[float] = None
    c: Optional[float] = None
    d0: Optional[float] = None
    d1: Optional[float] = None
    d2: Optional[float] = None
    b0: Optional[float] = None
    b1: Optional[float] = None


class ErrorModel(BaseModel):
    """
    A measurement-error distribution with standard deviation `sigma_u`.

    Laplace errors use scale sigma_u / sqrt(2), so that Var(U) = sigma_u^2.
    """

    model_config = ConfigDict(frozen=True)

    kind: ErrorKind = ErrorKind.NONE
    sigma_u: float = Field(default=0.0, ge=0.0)

    @model_validator(mode="after")
    def _check_degenerate(self) -> "ErrorModel":
        if (self.sigma_u == 0.0) != (self.kind == ErrorKind.NONE):
            raise ValueError(
                f"sigma_u must be 0 exactly when kind is 'none' (kind={self.kind.value}, "
                f"sigma_u={self.sigma_u})"
            )
        return self

    @classmethod
    def none(cls) -> "ErrorModel":
        return cls()

    @classmethod
    def laplace(cls, sigma_u: float) -> "ErrorModel":
        return cls(kind=ErrorKind.LAPLACE, sigma_u=sigma_u)

    @classmethod
    def gaussian(cls, sigma_u: float) -> "ErrorModel":
        return cls(kind=ErrorKind.GAUSSIAN, sigma_u=sigma_u)

    @classmethod
    def from_reliability(cls, kind: ErrorKind, var_x: float, lam: float) -> "ErrorModel":
        """Error law of the given kind whose variance gives reliability ratio `lam`."""
        sigma2 = sigma2_from_reliability(var_x, lam)
        if sigma2 == 0.0:
            return cls.none()
        return cls(kind=ErrorKind(kind), sigma_u=math.sqrt(sigma2))

    @property
    def is_error_free(self) -> bool:
        return self.kind == ErrorKind.NONE

    @property
    def smoothness(self) -> Smoothness:
        if self.kind == ErrorKind.LAPLACE:
            return Smoothness(kind="ordinary", order=2.0, c=2.0 / self.sigma_u**2)
        if self.kind == ErrorKind.GAUSSIAN:
            return Smoothness(
                kind="super",
                order=2.0,
                d2=2.0 / self.sigma_u**2,
                d0=1.0,
                d1=1.0,
                b0=0.0,
                b1=0.0,
            )
        return Smoothness(kind="degenerate")

    def phi(self, t: torch.Tensor) -> torch.Tensor:
        """Characteristic function on a float64 tensor (real and even for every kind)."""
        if self.kind == ErrorKind.LAPLACE:
            return 1.0 / (1.0 + 0.5 * self.sigma_u**2 * t**2)
        if self.kind == ErrorKind.GAUSSIAN:
            return torch.exp(-0.5 * self.sigma_u**2 * t**2)
        return torch.ones_like(t)

    def density(self, u: torch.Tensor) -> torch.Tensor:
        """The error pdf f_U. Undefined (raises) for the degenerate law."""
        if self.kind == ErrorKind.LAPLACE:
            scale = self.sigma_u / math.sqrt(2.0)
            return torch.exp(-u.abs() / scale) / (2.0 * scale)
        if self.kind == ErrorKind.GAUSSIAN:
            return torch.exp(-0.5 * (u / self.sigma_u) ** 2) / (
                self.sigma_u * math.sqrt(2.0 * math.pi)
            )
        raise DomainError("the error-free model has no density (point mass at 0)")

    def sample(self, n: int, generator: torch.Generator) -> torch.Tensor:
        if n < 1:
            raise DomainError(f"sample size must be >= 1, got {n}")
        if self.kind == ErrorKind.LAPLACE:
            # difference of two unit exponentials is standard Laplace
            e1 = torch.empty(n, dtype=DTYPE).exponential_(generator=generator)
            e2 = torch.empty(n, dtype=DTYPE).exponential_(generator=generator)
            return (self.sigma_u / math.sqrt(2.0)) * (e1 - e2)
        if self.kind == ErrorKind.GAUSSIAN:
            return self.sigma_u * torch.randn(n, generator=generator, dtype=DTYPE)
        return torch.zeros(n, dtype=DTYPE)


def phi_u(model: ErrorModel, t: Union[Scalar, torch.Tensor]) -> Union[float, torch.Tensor]:
    if isinstance(t, torch.Tensor):
        return model.phi(t.to(DTYPE))
    return float(model.phi(as_tensor(t)))


def sample_errors(
    model: ErrorModel, n: int, seed: Union[int, torch.Generator]
) -> torch.Tensor:
    """n independent draws from the error law; deterministic given the seed."""
    generator = seed if isinstance(seed, torch.Generator) else make_generator(seed)
    return model.sample(n, generator)


def sigma2_from_reliability(var_x: float, lam: float) -> float:
    """Error variance giving reliability ratio lam = var_x / (var_x + sigma_u^2)."""
    if not 0.0 < lam <= 1.0:
        raise DomainError(f"reliability ratio must lie in (0, 1], got {lam}")
    if var_x <= 0.0:
        raise DomainError(f"var_x must be positive, got {var_x}")
    return var_x * (1.0 - lam) / lam
