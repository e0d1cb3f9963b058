"""Hausdorff distance between mode sets and the empirical ISE over a mode-curve grid."""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from deconvmode.core.mode_seek import ModeCurves
from deconvmode.errors import GridMismatchError, UndefinedDistanceError

logger = logging.getLogger(__name__)


def hausdorff(s1: Sequence[float], s2: Sequence[float]) -> float:
    a = np.asarray(list(s1), dtype=np.float64).reshape(-1, 1)
    b = np.asarray(list(s2), dtype=np.float64).reshape(-1, 1)
    if a.size == 0 or b.size == 0:
        raise UndefinedDistanceError("Hausdorff distance is undefined for an empty set")
    d = cdist(a, b)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


@dataclass
class IseReport:
    """
    ISE = sum_k Haus(M_hat(x_k), M(x_k))^2 * delta.

    `per_point` holds (x_k, Haus, defined); undefined points carry the penalty
    distance `penalty` in place of Haus and are counted in `undefined_points`.
    """

    ise: float
    per_point: List[Tuple[float, float, bool]] = field(default_factory=list)
    delta: float = 0.0
    undefined_points: int = 0
    penalty: float = 0.0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.per_point, columns=["x_k", "haus", "defined"])

    def summary_line(self) -> str:
        return (
            f"# ise={self.ise:.10g} delta={self.delta:g} undefined_points={self.undefined_points} "
            f"penalty={self.penalty:.6g}"
        )


def truth_range_penalty(truth: ModeCurves) -> float:
    """Squared y-range of all true modes on the grid."""
    values = [y for s in truth.sets for y in s.modes]
    if not values:
        raise UndefinedDistanceError("the true mode curves are empty everywhere")
    return (max(values) - min(values)) ** 2


def _check_grids(estimated: ModeCurves, truth: ModeCurves) -> None:
    if (
        estimated.grid.numel() != truth.grid.numel()
        or not math.isclose(estimated.delta, truth.delta, rel_tol=1e-12)
        or not math.isclose(float(estimated.grid[0]), float(truth.grid[0]), abs_tol=1e-12)
    ):
        raise GridMismatchError(
            f"estimated grid ({estimated.grid.numel()} points, delta={estimated.delta}) does not "
            f"match the truth grid ({truth.grid.numel()} points, delta={truth.delta})"
        )


def empirical_ise(estimated: ModeCurves, truth: ModeCurves) -> IseReport:
    _check_grids(estimated, truth)
    penalty = None
    report = IseReport(ise=0.0, delta=estimated.delta)
    for est, true in zip(estimated.sets, truth.sets):
        try:
            haus = hausdorff(est.modes, true.modes)
            report.per_point.append((est.x, haus, True))
            report.ise += haus**2 * estimated.delta
        except UndefinedDistanceError:
            if penalty is None:
                penalty = truth_range_penalty(truth)
            report.undefined_points += 1
            report.per_point.append((est.x, math.sqrt(penalty), False))
            report.ise += penalty * estimated.delta
    report.penalty = penalty or 0.0
    if report.undefined_points:
        logger.debug(
            "%d undefined grid points penalised with squared range %.4g",
            report.undefined_points,
            report.penalty,
        )
    return report
