"""
Kernels K_1, K_2 and the generalized deconvoluting kernels K_{U,l}, l = 0, 1, 2.

K_1 is defined through its Fourier transform phi_K1(s) = (1 - s^2)^3 on [-1, 1];
K_2 is the standard normal density. The deconvoluting kernel

    K_{U,l}(t) = i^{-l} / (2 pi) * int exp(-its) phi_K1^{(l)}(s) / phi_U(s / h1) ds

is evaluated with fixed-node Gauss-Legendre quadrature on [-1, 1]. Since phi_U is
even and real, the integrand reduces to a cosine transform for even l and a sine
transform for l = 1, so no complex arithmetic is ever involved.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple, Union

import numpy as np
import torch

from deconvmode.core.error_model import ErrorModel
from deconvmode.errors import DomainError
from deconvmode.utils import DTYPE, as_tensor

logger = logging.getLogger(__name__)

QUADRATURE_NODES = 256
DEFAULT_TABLE_RANGE = (-40.0, 40.0)
DEFAULT_TABLE_RESOLUTION = 16001
# t-values evaluated per matmul; bounds peak memory at CHUNK x QUADRATURE_NODES / 2
_CHUNK = 16384

INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

TensorLike = Union[float, torch.Tensor]


@lru_cache(maxsize=4)
def gauss_legendre_half(num_nodes: int = QUADRATURE_NODES) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Positive half of the Gauss-Legendre rule on [-1, 1].

    Every integrand used here is even in s, so the rule is folded onto s > 0 with
    doubled weights.
    """
    if num_nodes % 2:
        raise DomainError(f"the folded rule needs an even node count, got {num_nodes}")
    nodes, weights = np.polynomial.legendre.leggauss(num_nodes)
    positive = nodes > 0
    return (
        torch.as_tensor(nodes[positive], dtype=DTYPE),
        torch.as_tensor(2.0 * weights[positive], dtype=DTYPE),
    )


def phi_k1(s: torch.Tensor, deriv: int = 0) -> torch.Tensor:
    """phi_K1(s) = (1 - s^2)^3 on [-1, 1] and its first two derivatives."""
    inside = s.abs() <= 1.0
    one_minus = 1.0 - s**2
    if deriv == 0:
        value = one_minus**3
    elif deriv == 1:
        value = -6.0 * s * one_minus**2
    elif deriv == 2:
        value = 6.0 * one_minus * (5.0 * s**2 - 1.0)
    else:
        raise DomainError(f"phi_K1 derivative order must be 0, 1 or 2, got {deriv}")
    return torch.where(inside, value, torch.zeros_like(value))


def _inverse_transform(t: torch.Tensor, weights: torch.Tensor, use_sin: bool) -> torch.Tensor:
    nodes, _ = gauss_legendre_half()
    flat = t.reshape(-1)
    out = torch.empty_like(flat)
    trig = torch.sin if use_sin else torch.cos
    for start in range(0, flat.numel(), _CHUNK):
        chunk = flat[start : start + _CHUNK]
        out[start : start + _CHUNK] = trig(chunk[:, None] * nodes[None, :]) @ weights
    return out.reshape(t.shape)


def _wrap(t: TensorLike, fn) -> TensorLike:
    if isinstance(t, torch.Tensor):
        return fn(t.to(DTYPE))
    return float(fn(as_tensor(t)))


def k1(t: TensorLike, deriv: int = 0) -> TensorLike:
    """
    K_1(t) = (1/2pi) int_{-1}^{1} (1 - s^2)^3 cos(ts) ds, or its first/second derivative.
    """
    nodes, weights = gauss_legendre_half()
    phi = phi_k1(nodes) * weights / (2.0 * math.pi)
    if deriv == 0:
        return _wrap(t, lambda x: _inverse_transform(x, phi, use_sin=False))
    if deriv == 1:
        return _wrap(t, lambda x: _inverse_transform(x, -nodes * phi, use_sin=True))
    if deriv == 2:
        return _wrap(t, lambda x: _inverse_transform(x, -(nodes**2) * phi, use_sin=False))
    raise DomainError(f"K_1 derivative order must be 0, 1 or 2, got {deriv}")


def k2(deriv: int, t: TensorLike) -> TensorLike:
    """Standard normal density (deriv=0) or its first/second derivative."""

    def _k2(x: torch.Tensor) -> torch.Tensor:
        density = INV_SQRT_2PI * torch.exp(-0.5 * x**2)
        if deriv == 0:
            return density
        if deriv == 1:
            return -x * density
        if deriv == 2:
            return (x**2 - 1.0) * density
        raise DomainError(f"K_2 derivative order must be 0, 1 or 2, got {deriv}")

    return _wrap(t, _k2)


class DeconvolutingKernel:
    """
    K_{U,l}(.) for fixed (l, h1, error model), with the quadrature weights folded once.

    Values may be negative; they are never clipped.
    """

    def __init__(self, ell: int, h1: float, model: ErrorModel):
        if ell not in (0, 1, 2):
            raise DomainError(f"deconvoluting kernel order must be 0, 1 or 2, got {ell}")
        if not h1 > 0.0:
            raise DomainError(f"h1 must be positive, got {h1}")
        self.ell = ell
        self.h1 = float(h1)
        self.model = model

        nodes, weights = gauss_legendre_half()
        folded = weights * phi_k1(nodes, deriv=ell) / model.phi(nodes / self.h1) / (2.0 * math.pi)
        # i^{-l} with the cosine/sine reduction: l=0 -> +cos, l=1 -> -sin, l=2 -> -cos
        self._weights = folded if ell == 0 else -folded
        self._use_sin = ell == 1

    def __call__(self, t: torch.Tensor) -> torch.Tensor:
        return _inverse_transform(t.to(DTYPE), self._weights, self._use_sin)

    def __repr__(self) -> str:
        return (
            f"DeconvolutingKernel(ell={self.ell}, h1={self.h1:.6g}, "
            f"model={self.model.kind.value}, sigma_u={self.model.sigma_u:.6g})"
        )


def ku_ell(ell: int, t: TensorLike, h1: float, model: ErrorModel) -> TensorLike:
    kernel = DeconvolutingKernel(ell, h1, model)
    return _wrap(t, kernel)


def laplace_closed_form(ell: int, t: torch.Tensor, h1: float, sigma_u: float) -> torch.Tensor:
    """
    K_{U,l} for Laplace errors without deconvolution quadrature.

    1/phi_U(s/h1) = 1 + sigma_u^2 s^2 / (2 h1^2), so
    K_{U,l}(t) = g(t) - sigma_u^2 / (2 h1^2) * g''(t) with g(t) = t^l K_1(t).
    """
    t = t.to(DTYPE)
    k, dk, ddk = k1(t), k1(t, deriv=1), k1(t, deriv=2)
    if ell == 0:
        g, dd_g = k, ddk
    elif ell == 1:
        g, dd_g = t * k, 2.0 * dk + t * ddk
    elif ell == 2:
        g, dd_g = t**2 * k, 2.0 * k + 4.0 * t * dk + t**2 * ddk
    else:
        raise DomainError(f"deconvoluting kernel order must be 0, 1 or 2, got {ell}")
    return g - sigma_u**2 / (2.0 * h1**2) * dd_g


@dataclass(frozen=True)
class KernelTable:
    """
    K_{U,l} tabulated on a uniform grid, read back by linear interpolation.

    Arguments outside [t_min, t_max] are evaluated by direct quadrature.
    """

    ell: int
    h1: float
    model: ErrorModel
    grid: torch.Tensor
    values: torch.Tensor
    t_min: float
    t_max: float
    kernel: DeconvolutingKernel

    @property
    def step(self) -> float:
        return (self.t_max - self.t_min) / (self.grid.numel() - 1)

    def lookup(self, t: torch.Tensor) -> torch.Tensor:
        t = t.to(DTYPE)
        out = torch.empty_like(t)
        inside = (t >= self.t_min) & (t <= self.t_max)

        pos = (t[inside] - self.t_min) / self.step
        nearest = torch.round(pos)
        on_node = (pos - nearest).abs() < 1e-9
        left = torch.clamp(torch.floor(pos), 0, self.grid.numel() - 2).long()
        frac = pos - left
        interpolated = self.values[left] * (1.0 - frac) + self.values[left + 1] * frac
        node_values = self.values[nearest.long().clamp(0, self.grid.numel() - 1)]
        out[inside] = torch.where(on_node, node_values, interpolated)

        outside = ~inside
        if outside.any():
            out[outside] = self.kernel(t[outside])
        return out

    def __call__(self, t: torch.Tensor) -> torch.Tensor:
        return self.lookup(t)


def build_table(
    ell: int,
    h1: float,
    model: ErrorModel,
    t_range: Tuple[float, float] = DEFAULT_TABLE_RANGE,
    resolution: int = DEFAULT_TABLE_RESOLUTION,
) -> KernelTable:
    t_min, t_max = float(t_range[0]), float(t_range[1])
    if not (math.isfinite(t_min) and math.isfinite(t_max) and t_min < t_max):
        raise DomainError(f"table range must be finite and increasing, got {t_range}")
    if resolution < 2:
        raise DomainError(f"table resolution must be >= 2, got {resolution}")
    kernel = DeconvolutingKernel(ell, h1, model)
    grid = torch.linspace(t_min, t_max, resolution, dtype=DTYPE)
    logger.debug("tabulating %r on [%g, %g] with %d nodes", kernel, t_min, t_max, resolution)
    return KernelTable(
        ell=ell,
        h1=float(h1),
        model=model,
        grid=grid,
        values=kernel(grid),
        t_min=t_min,
        t_max=t_max,
        kernel=kernel,
    )
