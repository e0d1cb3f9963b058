"""
Numeric evaluators of the asymptotic bias, variance and optimal-bandwidth formulas
for the mode estimators, computed on a known (simulation) truth.

Partial derivatives of the true joint density come from torch autograd on the
closed-form mixture; the convolved density f_{W,Y} and the integrals I_1..I_4 use
scipy adaptive quadrature.
"""

import logging
import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Dict, Tuple, Union

import numpy as np
import pandas as pd
import torch
from scipy import integrate
from scipy.optimize import brentq

from deconvmode.core.density import Bandwidths
from deconvmode.core.error_model import ErrorModel
from deconvmode.core.kernels import gauss_legendre_half, k1, phi_k1
from deconvmode.errors import DomainError, FormulaDomainError
from deconvmode.simulation.scenarios import X_LOWER, X_UPPER, MixtureScenario
from deconvmode.utils import DTYPE, as_tensor

logger = logging.getLogger(__name__)

QUAD_TOL = 1e-8
QUAD_LIMIT = 200

BandwidthPair = Union[Bandwidths, Tuple[float, float]]


def _pair(bw: BandwidthPair) -> Tuple[float, float]:
    if isinstance(bw, Bandwidths):
        return bw.h1, bw.h2
    h1, h2 = bw
    return float(h1), float(h2)


def mu2_k1() -> float:
    """Second moment of K_1, equal to -phi_K1''(0)."""
    return float(-phi_k1(as_tensor([0.0]), deriv=2)[0])


def mu2_k1_direct(half_width: float = 400.0, num_points: int = 400001) -> float:
    """Second moment of K_1 by trapezoidal quadrature of t^2 K_1(t) on a wide grid."""
    t = torch.linspace(-half_width, half_width, num_points, dtype=DTYPE)
    return float(torch.trapezoid(t**2 * k1(t), t))


def eta0(b: float) -> float:
    """(1/2pi) int_{-1}^{1} |t|^{2b} phi_K1(t)^2 dt by adaptive quadrature."""
    value, _ = integrate.quad(
        lambda t: abs(t) ** (2 * b) * (1.0 - t * t) ** 6, -1.0, 1.0, epsabs=1e-13, epsrel=1e-12
    )
    return value / (2.0 * math.pi)


def eta0_gauss_legendre(b: float) -> float:
    nodes, weights = gauss_legendre_half()
    return float((weights * nodes ** (2 * b) * (1.0 - nodes**2) ** 6).sum() / (2.0 * math.pi))


@dataclass
class Partials:
    p: float
    p_y: float
    p_yy: float
    p_yyy: float
    p_xy: float
    p_xxy: float


class AnalyticTruth:
    """
    Closed-form truth of a simulation scenario under a given error law.

    Args:
        scenario(MixtureScenario): The data-generating scenario.
        model(ErrorModel): The error law, entering through f_{W,Y} and the smoothness
            constants of the variance formulas.
    """

    def __init__(self, scenario: MixtureScenario, model: ErrorModel):
        self.scenario = scenario
        self.model = model
        self._mode = lru_cache(maxsize=4096)(self._compute_mode)

    def _compute_mode(self, x: float) -> float:
        modes = self.scenario.true_modes(x)
        if not modes:
            raise DomainError(f"the true conditional density has no mode at x={x}")
        if len(modes) == 1:
            return modes[0]
        heights = self.scenario.cond_density(as_tensor([x] * len(modes)), as_tensor(modes))
        return modes[int(torch.argmax(heights))]

    def mode(self, x: float) -> float:
        """The true mode y_M(x); the highest one when the truth is multimodal."""
        return self._mode(float(x))

    def f_x(self, x: float) -> float:
        return float(self.scenario.f_x(as_tensor([x]))[0])

    def f_x_prime(self, x: float) -> float:
        xt = torch.tensor(float(x), dtype=DTYPE, requires_grad=True)
        f = self.scenario.f_x(xt.reshape(1)).sum()
        if not f.requires_grad:
            return 0.0
        (g,) = torch.autograd.grad(f, xt, allow_unused=True)
        return 0.0 if g is None else float(g)

    def joint(self, x: float, y: float) -> float:
        return float(self.scenario.joint_density(as_tensor([x]), as_tensor([y]))[0])

    def partials(self, x: float, y: float = None) -> Partials:
        """p and its partials at (x, y), y defaulting to the mode y_M(x)."""
        if y is None:
            y = self.mode(x)
        xt = torch.tensor(float(x), dtype=DTYPE, requires_grad=True)
        yt = torch.tensor(float(y), dtype=DTYPE, requires_grad=True)
        p = self.scenario.joint_density(xt.reshape(1), yt.reshape(1)).sum()
        (p_y,) = torch.autograd.grad(p, yt, create_graph=True)
        (p_yy,) = torch.autograd.grad(p_y, yt, create_graph=True)
        (p_yyy,) = torch.autograd.grad(p_yy, yt, retain_graph=True)
        (p_xy,) = torch.autograd.grad(p_y, xt, create_graph=True)
        (p_xxy,) = torch.autograd.grad(p_xy, xt)
        return Partials(
            p=float(p),
            p_y=float(p_y),
            p_yy=float(p_yy),
            p_yyy=float(p_yyy),
            p_xy=float(p_xy),
            p_xxy=float(p_xxy),
        )

    def cond_p_xy(self, x: float, y: float) -> float:
        """d^2/dx dy of the conditional density p(y|x)."""
        xt = torch.tensor(float(x), dtype=DTYPE, requires_grad=True)
        yt = torch.tensor(float(y), dtype=DTYPE, requires_grad=True)
        p = self.scenario.cond_density(xt.reshape(1), yt.reshape(1)).sum()
        (p_y,) = torch.autograd.grad(p, yt, create_graph=True)
        (p_xy,) = torch.autograd.grad(p_y, xt)
        return float(p_xy)

    def cond_p_yy(self, x: float, y: float) -> float:
        return float(self.scenario.cond_density(as_tensor([x]), as_tensor([y]), deriv=2)[0])

    def f_wy(self, x: float, y: float) -> float:
        """Joint density of (W, Y): int p(s, y) f_U(x - s) ds over the support of X."""
        if self.model.is_error_free:
            return self.joint(x, y)

        def integrand(s: float) -> float:
            return self.joint(s, y) * float(self.model.density(as_tensor([x - s]))[0])

        points = [x] if X_LOWER < x < X_UPPER else None
        value, _ = integrate.quad(
            integrand, X_LOWER, X_UPPER, points=points, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=QUAD_LIMIT
        )
        return value


def _ordinary_constants(truth: AnalyticTruth) -> Tuple[float, float]:
    smooth = truth.model.smoothness
    if smooth.kind != "ordinary":
        raise DomainError(
            f"variance formula needs an ordinary smooth error law, got {smooth.kind} "
            f"({truth.model.kind.value})"
        )
    return smooth.order, smooth.c


def bias_lc(truth: AnalyticTruth, bw: BandwidthPair, x: float) -> float:
    """Dominating bias of the local constant estimate of p_y(x, y_M)."""
    h1, h2 = _pair(bw)
    d = truth.partials(x)
    return 0.5 * (d.p_xxy * mu2_k1() * h1**2 + d.p_yyy * h2**2)


def variance_lc_ordinary(truth: AnalyticTruth, bw: BandwidthPair, n: int, x: float) -> float:
    h1, h2 = _pair(bw)
    b, c = _ordinary_constants(truth)
    f_wy = truth.f_wy(x, truth.mode(x))
    return eta0(b) * f_wy / (4.0 * math.sqrt(math.pi) * c**2 * n * h1 ** (1 + 2 * b) * h2**3)


def bias_ll(truth: AnalyticTruth, bw: BandwidthPair, x: float) -> float:
    """Dominating bias of the local linear estimate of p_y(y_M | x)."""
    h1, h2 = _pair(bw)
    f_x = truth.f_x(x)
    if f_x == 0.0:
        raise DomainError(f"f_X vanishes at x={x}")
    y_m = truth.mode(x)
    d = truth.partials(x, y_m)
    cov_term = 0.5 * d.p_xxy - truth.f_x_prime(x) * truth.cond_p_xy(x, y_m)
    return (cov_term * mu2_k1() * h1**2 + 0.5 * d.p_yyy * h2**2) / f_x


def variance_ll_ordinary(truth: AnalyticTruth, bw: BandwidthPair, n: int, x: float) -> float:
    f_x = truth.f_x(x)
    if f_x == 0.0:
        raise DomainError(f"f_X vanishes at x={x}")
    return variance_lc_ordinary(truth, bw, n, x) / f_x**2


@dataclass
class OptimalBandwidths:
    h1: float
    h2: float
    r1: float
    r2: float
    I1: float
    I2: float
    I3: float
    I4: float
    n: int
    b: float
    c: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(self)])


def _quad(fn) -> float:
    value, _ = integrate.quad(
        fn, X_LOWER, X_UPPER, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=QUAD_LIMIT
    )
    return value


def mise_integrals(truth: AnalyticTruth) -> Dict[str, float]:
    """I_1..I_4 over the covariate support, each weighted by p_yy(x, y_M)^-2."""

    def weighted(x: float, which: str) -> float:
        d = truth.partials(x)
        inv = 1.0 / d.p_yy**2
        if which == "I1":
            return inv * d.p_xxy * d.p_yyy
        if which == "I2":
            return inv * d.p_xxy**2
        if which == "I3":
            return inv * d.p_yyy**2
        return inv * truth.f_wy(x, truth.mode(x))

    return {name: _quad(lambda x, name=name: weighted(x, name)) for name in ("I1", "I2", "I3", "I4")}


def optimal_bandwidths_ordinary(
    truth: AnalyticTruth,
    n: int,
    b: float = None,
    c: float = None,
    integrals: Dict[str, float] = None,
) -> OptimalBandwidths:
    """
    MISE-optimal (h1, h2) of the local constant mode estimator for ordinary smooth errors:
    h1 = r1 h2, h2 = r2 n^(-1/(2b+8)).
    """
    if b is None or c is None:
        b_model, c_model = _ordinary_constants(truth)
        b = b_model if b is None else b
        c = c_model if c is None else c
    ints = integrals or mise_integrals(truth)
    i1, i2, i3, i4 = ints["I1"], ints["I2"], ints["I3"], ints["I4"]
    mu2 = mu2_k1()

    disc = (b - 1.0) ** 2 * i1**2 + 3.0 * (2.0 * b + 1.0) * i2 * i3
    if i2 <= 0.0 or disc < 0.0:
        raise FormulaDomainError(f"optimal bandwidth formula undefined (I2={i2:.4g}, disc={disc:.4g})")
    r1 = math.sqrt(((b - 1.0) * i1 + math.sqrt(disc)) / (3.0 * mu2 * i2))
    denom = 4.0 * math.sqrt(math.pi) * c**2 * r1 ** (2 * b + 1) * (r1**2 * mu2 * i1 + i3)
    base = 3.0 * eta0(b) * i4 / denom
    if not base > 0.0:
        raise FormulaDomainError(f"optimal bandwidth formula undefined (r2 base {base:.4g})")
    r2 = base ** (1.0 / (2 * b + 8))
    h2 = r2 * n ** (-1.0 / (2 * b + 8))
    return OptimalBandwidths(
        h1=r1 * h2, h2=h2, r1=r1, r2=r2, I1=i1, I2=i2, I3=i3, I4=i4, n=n, b=b, c=c
    )


def asymptotic_mise(
    truth: AnalyticTruth,
    bw: BandwidthPair,
    n: int,
    integrals: Dict[str, float] = None,
) -> float:
    """
    Integrated squared dominating bias plus variance of the local constant mode
    estimator, assembled from I_1..I_4.
    """
    h1, h2 = _pair(bw)
    b, c = _ordinary_constants(truth)
    ints = integrals or mise_integrals(truth)
    mu2 = mu2_k1()
    bias2 = 0.25 * (
        mu2**2 * h1**4 * ints["I2"] + 2.0 * mu2 * h1**2 * h2**2 * ints["I1"] + h2**4 * ints["I3"]
    )
    var = eta0(b) * ints["I4"] / (4.0 * math.sqrt(math.pi) * c**2 * n * h1 ** (1 + 2 * b) * h2**3)
    return bias2 + var


def asymptotic_mise_integrated(truth: AnalyticTruth, bw: BandwidthPair, n: int) -> float:
    """The same objective as `asymptotic_mise`, integrating bias^2 + var pointwise."""

    def pointwise(x: float) -> float:
        p_yy = truth.partials(x).p_yy
        return (bias_lc(truth, bw, x) ** 2 + variance_lc_ordinary(truth, bw, n, x)) / p_yy**2

    return _quad(pointwise)


@dataclass
class RateSummary:
    kind: str
    h1: float
    h2: float
    mise_order: float


def ordinary_rates(n: int, b: float) -> RateSummary:
    """Orders of the optimal bandwidths and MISE for ordinary smooth errors (unit constants)."""
    h = n ** (-1.0 / (2 * b + 8))
    return RateSummary(kind="ordinary", h1=h, h2=h, mise_order=h**4)


def supersmooth_h1(n: int, b: float, d2: float, b2: float = 0.0) -> float:
    """Solve exp(2 h^-b / d2) / h^(3b/2 - 2 b2 + 6) = n for h (unit constants)."""
    power = 1.5 * b - 2.0 * b2 + 6.0
    log_n = math.log(n)

    def gap(log_h: float) -> float:
        return 2.0 * math.exp(-b * log_h) / d2 - power * log_h - log_n

    lo, hi = -10.0, 0.0
    while gap(hi) > 0.0:
        hi += 1.0
        if hi > 50.0:
            raise FormulaDomainError(f"no super-smooth bandwidth solution for n={n}")
    while gap(lo) < 0.0:
        lo -= 1.0
    return math.exp(brentq(gap, lo, hi, xtol=1e-14))


def supersmooth_rates(n: int, b: float, d2: float, b2: float = 0.0) -> RateSummary:
    """h1 from the super-smooth balance equation, h2 from h1 ~ h2^(2/(b+2))."""
    h1 = supersmooth_h1(n, b, d2, b2)
    h2 = h1 ** ((b + 2.0) / 2.0)
    return RateSummary(kind="super", h1=h1, h2=h2, mise_order=h1**4)


def error_rates(model: ErrorModel, n: int) -> RateSummary:
    smooth = model.smoothness
    if smooth.kind == "ordinary":
        return ordinary_rates(n, smooth.order)
    if smooth.kind == "super":
        return supersmooth_rates(n, smooth.order, smooth.d2)
    raise DomainError("rates are defined only for a non-degenerate error law")


@dataclass
class ErrorRate:
    """Order of a mode-estimation error: a deterministic bias part plus a stochastic part."""

    kind: str
    bias: float
    stochastic: float

    @property
    def total(self) -> float:
        return self.bias + self.stochastic


def _log_variance_order(model: ErrorModel, bw: BandwidthPair, n: int, exp_factor: float) -> float:
    """
    log of 1/(n h1^(1+2b) h2^3) for ordinary smooth errors, and of
    exp(exp_factor h1^-b / d2) / (n h1^(1-2 b2) h2^3) for super smooth ones,
    with b2 = b0 when b0 < 1/2 and 0 otherwise.
    """
    h1, h2 = _pair(bw)
    if n < 2:
        raise DomainError(f"n must be at least 2, got {n}")
    smooth = model.smoothness
    b = smooth.order
    if smooth.kind == "ordinary":
        return -math.log(n) - (1.0 + 2.0 * b) * math.log(h1) - 3.0 * math.log(h2)
    if smooth.kind == "super":
        b2 = smooth.b0 if smooth.b0 is not None and smooth.b0 < 0.5 else 0.0
        return (
            exp_factor * h1 ** (-b) / smooth.d2
            - math.log(n)
            - (1.0 - 2.0 * b2) * math.log(h1)
            - 3.0 * math.log(h2)
        )
    raise DomainError("error rates are defined only for a non-degenerate error law")


def _exp(log_value: float) -> float:
    return math.exp(log_value) if log_value < 709.0 else math.inf


def pointwise_error_rate(model: ErrorModel, bw: BandwidthPair, n: int) -> ErrorRate:
    """|y_hat(x) - y(x)| = O(h1^2 + h2^2) + O_P(sqrt(V)), V the variance order of g_y."""
    h1, h2 = _pair(bw)
    log_v = _log_variance_order(model, bw, n, 2.0)
    return ErrorRate("pointwise", h1**2 + h2**2, _exp(0.5 * log_v))


def mise_error_rate(model: ErrorModel, bw: BandwidthPair, n: int) -> ErrorRate:
    h1, h2 = _pair(bw)
    log_v = _log_variance_order(model, bw, n, 2.0)
    return ErrorRate("mise", (h1**2 + h2**2) ** 2, _exp(log_v))


def uniform_error_rate(model: ErrorModel, bw: BandwidthPair, n: int) -> ErrorRate:
    """
    sup_x |y_hat(x) - y(x)|: the pointwise stochastic order inflated by sqrt(log n). For
    super smooth errors the exponential factor enters as exp(h1^-b / d2) under the root.
    """
    h1, h2 = _pair(bw)
    log_v = _log_variance_order(model, bw, n, 1.0)
    return ErrorRate("uniform", h1**2 + h2**2, _exp(0.5 * (log_v + math.log(math.log(n)))))


def error_rate_columns(model: ErrorModel, bw: BandwidthPair, n: int) -> Dict[str, float]:
    columns = {}
    for rate in (
        pointwise_error_rate(model, bw, n),
        mise_error_rate(model, bw, n),
        uniform_error_rate(model, bw, n),
    ):
        columns[f"{rate.kind}_bias"] = rate.bias
        columns[f"{rate.kind}_stochastic"] = rate.stochastic
        columns[f"{rate.kind}_rate"] = rate.total
    return columns


def theory_report(truth: AnalyticTruth, n: int) -> pd.DataFrame:
    opt = optimal_bandwidths_ordinary(truth, n)
    frame = opt.to_frame()
    frame["mise"] = asymptotic_mise(truth, (opt.h1, opt.h2), n, asdict(opt))
    frame["eta0"] = eta0(opt.b)
    frame["mu2"] = mu2_k1()
    for name, value in error_rate_columns(truth.model, (opt.h1, opt.h2), n).items():
        frame[name] = value
    return frame
