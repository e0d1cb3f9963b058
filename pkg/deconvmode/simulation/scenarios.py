"""
Simulation scenarios: X ~ Uniform(-2, 2) and Y | X = x a two-component normal mixture.

Densities and their y-derivatives are evaluated in closed form with torch so that
`deconvmode.theory` can differentiate them further with autograd.
"""

import logging
import math
from typing import Callable, List, Tuple

import numpy as np
import torch
from scipy.optimize import brentq

from deconvmode.errors import DomainError
from deconvmode.utils import DTYPE, as_tensor

logger = logging.getLogger(__name__)

X_LOWER, X_UPPER = -2.0, 2.0
VAR_X = (X_UPPER - X_LOWER) ** 2 / 12.0
ROOT_SCAN_POINTS = 4001

Moments = Callable[[torch.Tensor], Tuple[List[torch.Tensor], List[torch.Tensor]]]


def _normal_pdf(z: torch.Tensor) -> torch.Tensor:
    return torch.exp(-0.5 * z**2) / math.sqrt(2.0 * math.pi)


def m_quadratic(x: torch.Tensor) -> torch.Tensor:
    return x + x**2


def sigma_c1(x: torch.Tensor) -> torch.Tensor:
    return 0.5 + torch.exp(-(x**2))


class MixtureScenario:
    """
    Y | X = x ~ sum_k w_k N(mu_k(x), s_k(x)^2) with X ~ Uniform(-2, 2).

    Args:
        name(str): The registry name.
        weights(List[float]): Mixture weights, summing to one.
        moments(Callable): Maps an x tensor to ([mu_k(x)], [s_k(x)]).
        centres(Callable): Maps x to the curves that the mode set approximately follows;
            used for truth-offset starting values and the deviation report.
    """

    def __init__(
        self,
        name: str,
        weights: List[float],
        moments: Moments,
        centres: Callable[[torch.Tensor], List[torch.Tensor]],
        description: str = "",
    ):
        if not math.isclose(sum(weights), 1.0):
            raise DomainError(f"mixture weights must sum to 1, got {weights}")
        self.name = name
        self.weights = list(weights)
        self.moments = moments
        self.centres = centres
        self.description = description

    def f_x(self, x: torch.Tensor) -> torch.Tensor:
        inside = (x >= X_LOWER) & (x <= X_UPPER)
        return torch.where(inside, torch.full_like(x, 1.0 / (X_UPPER - X_LOWER)), torch.zeros_like(x))

    def cond_density(self, x: torch.Tensor, y: torch.Tensor, deriv: int = 0) -> torch.Tensor:
        """p(y|x) or its first/second y-derivative."""
        means, sds = self.moments(x)
        out = torch.zeros(torch.broadcast_shapes(x.shape, y.shape), dtype=DTYPE)
        for w, mu, s in zip(self.weights, means, sds):
            z = (y - mu) / s
            bump = w * _normal_pdf(z) / s
            if deriv == 0:
                out = out + bump
            elif deriv == 1:
                out = out - bump * z / s
            elif deriv == 2:
                out = out + bump * (z**2 - 1.0) / s**2
            else:
                raise DomainError(f"derivative order must be 0, 1 or 2, got {deriv}")
        return out

    def joint_density(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        return self.f_x(x) * self.cond_density(x, y)

    def sample(self, n: int, generator: torch.Generator) -> Tuple[torch.Tensor, torch.Tensor]:
        x = X_LOWER + (X_UPPER - X_LOWER) * torch.rand(n, generator=generator, dtype=DTYPE)
        means, sds = self.moments(x)
        # component label by inverse CDF of the mixture weights
        u = torch.rand(n, generator=generator, dtype=DTYPE)
        label = torch.bucketize(u, as_tensor(np.cumsum(self.weights)[:-1]), right=True)
        mu = torch.stack(means)[label, torch.arange(n)]
        s = torch.stack(sds)[label, torch.arange(n)]
        y = mu + s * torch.randn(n, generator=generator, dtype=DTYPE)
        return x, y

    def true_modes(self, x: float) -> List[float]:
        """
        Local maxima of y -> p(y|x): sign changes (+ to -) of the analytic derivative on
        a dense scan, each refined by Brent's method.
        """
        xt = as_tensor([float(x)])
        means, sds = self.moments(xt)
        lo = min(float(mu - 6.0 * s) for mu, s in zip(means, sds))
        hi = max(float(mu + 6.0 * s) for mu, s in zip(means, sds))
        scan = torch.linspace(lo, hi, ROOT_SCAN_POINTS, dtype=DTYPE)
        grad = self.cond_density(xt.expand_as(scan), scan, deriv=1)

        def dy(y: float) -> float:
            return float(self.cond_density(xt, as_tensor([y]), deriv=1)[0])

        modes = []
        for k in torch.nonzero((grad[:-1] > 0) & (grad[1:] <= 0)).reshape(-1).tolist():
            a, b = float(scan[k]), float(scan[k + 1])
            root = b if dy(b) == 0.0 else brentq(dy, a, b, xtol=1e-14, rtol=4 * np.finfo(float).eps)
            if float(self.cond_density(xt, as_tensor([root]), deriv=2)[0]) < 0.0:
                modes.append(root)
        return sorted(modes)


def _c1_moments(x: torch.Tensor):
    m, s = m_quadratic(x), sigma_c1(x)
    return [m - 2.0 * s, m], [2.5 * s, 0.5 * s]


def _c2_moments(x: torch.Tensor):
    m1 = m_quadratic(x)
    half = torch.full_like(x, 0.5)
    return [m1, m1 - 6.0], [half, half]


class ScenarioRegistry:
    """
    Registry of simulation scenarios. C1 and C2 are registered on import; custom
    mixtures can be added the same way.

    Example:
    ```python
        from deconvmode.simulation.scenarios import SCENARIO_REGISTRY, MixtureScenario
        SCENARIO_REGISTRY.register(
            name="shifted",
            scenario=MixtureScenario("shifted", [1.0], lambda x: ([x], [torch.ones_like(x)]), lambda x: [x]),
        )
    ```
    """

    def __init__(self):
        self.scenarios = {}

    def register(self, name: str, scenario: MixtureScenario, override: bool = False):
        if name in self.scenarios and not override:
            raise DomainError(f"scenario {name} has already been registered")
        self.scenarios[name] = scenario

    def get(self, name: str) -> MixtureScenario:
        if name not in self.scenarios:
            raise DomainError(
                f"unknown scenario {name!r}; registered: {self.get_all_scenario_names()}"
            )
        return self.scenarios[name]

    def get_all_scenario_names(self) -> List[str]:
        return list(self.scenarios.keys())


SCENARIO_REGISTRY = ScenarioRegistry()

SCENARIO_REGISTRY.register(
    name="C1",
    scenario=MixtureScenario(
        name="C1",
        weights=[0.5, 0.5],
        moments=_c1_moments,
        centres=lambda x: [m_quadratic(x)],
        description="unimodal: 0.5 N(m - 2 sigma, (2.5 sigma)^2) + 0.5 N(m, (0.5 sigma)^2)",
    ),
)

SCENARIO_REGISTRY.register(
    name="C2",
    scenario=MixtureScenario(
        name="C2",
        weights=[0.5, 0.5],
        moments=_c2_moments,
        centres=lambda x: [m_quadratic(x) - 6.0, m_quadratic(x)],
        description="bimodal: 0.5 N(m, 0.5^2) + 0.5 N(m - 6, 0.5^2)",
    ),
)
