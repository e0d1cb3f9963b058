"""
Mean-shift mode seeking for the local constant and local linear estimators of p(y|x).

Both estimators share one fixed-point update

    y <- sum_j c_j K_2((Y_j - y)/h2) Y_j / sum_j c_j K_2((Y_j - y)/h2)

and differ only in the covariate weights c_j: K_{U,0}((W_j - x)/h1) for the local
constant fit, K_{U,0}(.) S_2(x) - K_{U,1}(.) S_1(x) for the local linear fit. The
weights can be negative, so trajectories are allowed to fail; failures are recorded,
never raised.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import pandas as pd
import torch
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, model_validator

from deconvmode.core.density import (
    Bandwidths,
    CovariateSlice,
    Dataset,
    KernelBank,
    sample_range,
    sample_sd,
)
from deconvmode.core.error_model import ErrorModel
from deconvmode.core.kernels import k2
from deconvmode.errors import DeconvModeError, InsufficientLocalDataError
from deconvmode.utils import DTYPE, as_tensor

logger = logging.getLogger(__name__)

EPS_DEN = 1e-12

StartFn = Callable[[float], Sequence[float]]


class Estimator(str, Enum):
    LC = "lc"
    LL = "ll"
    NAIVE = "naive"


class StartRule(BaseModel):
    """
    Starting values: N equally spaced percentiles of the Y_j with |W_j - x| < window.

    With `window=None` the window is the smallest one capturing `min_points` points.
    """

    model_config = ConfigDict(frozen=True)

    n_starts: int = Field(default=3, ge=1)
    window: Optional[PositiveFloat] = None
    min_points: int = Field(default=30, ge=2)
    percentiles: Tuple[float, float] = (10.0, 90.0)

    @model_validator(mode="after")
    def _check_percentiles(self) -> "StartRule":
        low, high = self.percentiles
        if not 0.0 <= low <= high <= 100.0:
            raise ValueError(f"percentiles must satisfy 0 <= low <= high <= 100, got {self.percentiles}")
        return self


class SeekOptions(BaseModel):
    """
    Mean-shift stopping rule and mode assembly. Unset tolerances scale with the sample
    SD (tol_step) and range (dedup_tol) of Y, or with 1 when Y is constant.

    An endpoint y* is kept only if |g_y(x, y*)| < root_rtol * |g(x, y*)| / h2, where g
    is the generating estimator.
    """

    model_config = ConfigDict(frozen=True)

    estimator: Estimator = Estimator.LC
    max_iter: int = Field(default=500, ge=1)
    tol_step: Optional[PositiveFloat] = None
    dedup_tol: Optional[PositiveFloat] = None
    root_rtol: PositiveFloat = 1e-6
    starts: StartRule = StartRule()

    def resolve_tol_step(self, data: Dataset) -> float:
        if self.tol_step is not None:
            return self.tol_step
        return 1e-8 * (sample_sd(data.y) or 1.0)

    def resolve_dedup_tol(self, data: Dataset) -> float:
        if self.dedup_tol is not None:
            return self.dedup_tol
        return 1e-3 * (sample_range(data.y) or 1.0)


class GridSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    x_lower: float
    x_upper: float
    delta: PositiveFloat

    @model_validator(mode="after")
    def _check_order(self) -> "GridSpec":
        if not self.x_lower < self.x_upper:
            raise ValueError(f"x_lower must be below x_upper, got ({self.x_lower}, {self.x_upper})")
        return self

    @property
    def size(self) -> int:
        return int(math.floor((self.x_upper - self.x_lower) / self.delta + 1e-9)) + 1

    def points(self) -> torch.Tensor:
        return self.x_lower + self.delta * torch.arange(self.size, dtype=DTYPE)


@dataclass
class Trajectory:
    y: float
    converged: bool
    iters: int
    reason: str = ""


@dataclass
class ModeSet:
    """
    Estimated local modes of y -> p(y|x) at one x, strictly increasing.

    `iters[k]` and `grad_abs[k]` belong to `modes[k]`; `messages` collects
    non-fatal diagnostics (failed trajectories, rejected endpoints, empty windows).
    """

    x: float
    modes: List[float] = field(default_factory=list)
    iters: List[int] = field(default_factory=list)
    grad_abs: List[float] = field(default_factory=list)
    n_starts: int = 0
    n_converged: int = 0
    messages: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.modes)

    @property
    def is_empty(self) -> bool:
        return not self.modes


@dataclass
class ModeCurves:
    grid: torch.Tensor
    sets: List[ModeSet]
    delta: float

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {"x": s.x, "mode_index": k, "y": y, "converged": True, "iters": s.iters[k]}
            for s in self.sets
            for k, y in enumerate(s.modes)
        ]
        return pd.DataFrame(rows, columns=["x", "mode_index", "y", "converged", "iters"])

    @property
    def diagnostics(self) -> List[str]:
        return [f"x={s.x:.6g}: {m}" for s in self.sets for m in s.messages]


def starting_values(data: Dataset, x: float, rule: StartRule) -> List[float]:
    distance = (data.w - x).abs()
    if rule.window is not None:
        local = data.y[distance < rule.window]
    else:
        m = min(rule.min_points, data.n)
        radius = torch.kthvalue(distance, m).values
        local = data.y[distance <= radius]
    if local.numel() < 2:
        raise InsufficientLocalDataError(
            f"only {local.numel()} observation(s) with |W - {x:.6g}| < {rule.window}"
        )
    low, high = rule.percentiles
    if rule.n_starts == 1:
        levels = as_tensor([0.5 * (low + high) / 100.0])
    else:
        levels = torch.linspace(low / 100.0, high / 100.0, rule.n_starts, dtype=DTYPE)
    return torch.quantile(local, levels, interpolation="linear").tolist()


def _mean_shift(
    weights: torch.Tensor,
    y_obs: torch.Tensor,
    starts: torch.Tensor,
    h2: float,
    max_iter: int,
    tol_step: float,
) -> List[Trajectory]:
    """Run the weighted mean-shift update from every start at once."""
    y = starts.clone()
    active = torch.ones_like(y, dtype=torch.bool)
    converged = torch.zeros_like(active)
    iters = torch.zeros(y.shape, dtype=torch.long)
    reasons = [""] * y.numel()

    for _ in range(max_iter):
        if not active.any():
            break
        idx = active.nonzero().reshape(-1)
        summands = weights[:, None] * k2(0, (y_obs[:, None] - y[idx][None, :]) / h2)
        den = summands.sum(0)
        num = (summands * y_obs[:, None]).sum(0)
        # largest denominator summand; invariant to shifts of Y
        scale = summands.abs().max(0).values
        collapsed = (den.abs() < EPS_DEN * scale) | (scale == 0) | ~torch.isfinite(num / den)
        iters[idx] += 1

        for k in idx[collapsed].tolist():
            reasons[k] = "denominator collapse (negative-weight cancellation)"
        active[idx[collapsed]] = False

        moving = idx[~collapsed]
        y_new = (num / den)[~collapsed]
        step = (y_new - y[moving]).abs()
        y[moving] = y_new
        done = moving[step < tol_step]
        converged[done] = True
        active[done] = False

    for k in active.nonzero().reshape(-1).tolist():
        reasons[k] = f"no convergence within {max_iter} iterations"

    return [
        Trajectory(float(y[k]), bool(converged[k]), int(iters[k]), reasons[k])
        for k in range(y.numel())
    ]


def _as_starts(y0) -> torch.Tensor:
    return as_tensor(y0).reshape(-1)


def mean_shift_lc(
    data: Dataset,
    bw: Bandwidths,
    model: ErrorModel,
    x: float,
    y0: float,
    opts: Optional[SeekOptions] = None,
    bank: Optional[KernelBank] = None,
) -> Tuple[float, bool, int]:
    opts = opts or SeekOptions()
    slice_ = CovariateSlice(data, bw.h1, model, x, bank)
    traj = _mean_shift(
        slice_.weights[0], data.y, _as_starts(y0), bw.h2, opts.max_iter, opts.resolve_tol_step(data)
    )[0]
    return traj.y, traj.converged, traj.iters


def mean_shift_ll(
    data: Dataset,
    bw: Bandwidths,
    model: ErrorModel,
    x: float,
    y0: float,
    opts: Optional[SeekOptions] = None,
    bank: Optional[KernelBank] = None,
) -> Tuple[float, bool, int]:
    opts = opts or SeekOptions()
    slice_ = CovariateSlice(data, bw.h1, model, x, bank)
    traj = _mean_shift(
        slice_.ll_weights(), data.y, _as_starts(y0), bw.h2, opts.max_iter, opts.resolve_tol_step(data)
    )[0]
    return traj.y, traj.converged, traj.iters


def _derivatives(
    slice_: CovariateSlice, estimator: Estimator, y: torch.Tensor, h2: float
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Value and first two y-derivatives of the estimator that generated the mean-shift."""
    if estimator == Estimator.LL:
        return tuple(slice_.cond_density_ll(y, h2, d) for d in (0, 1, 2))
    return tuple(slice_.t(0, y, h2, d) for d in (0, 1, 2))


def estimate_mode_set(
    data: Dataset,
    bw: Bandwidths,
    model: ErrorModel,
    x: float,
    opts: Optional[SeekOptions] = None,
    starts: Optional[Sequence[float]] = None,
    bank: Optional[KernelBank] = None,
) -> ModeSet:
    """
    Local modes of the estimated p(y|x): mean-shift from every start, keep converged
    endpoints that are stationary (see `SeekOptions.root_rtol`) with negative second
    derivative, merge endpoints within `dedup_tol`.

    The naive estimator is the local constant one with W used as if error-free.
    """
    opts = opts or SeekOptions()
    estimator = opts.estimator
    if estimator == Estimator.NAIVE:
        model, estimator, bank = ErrorModel.none(), Estimator.LC, None

    if starts is None:
        starts = starting_values(data, x, opts.starts)
    start_tensor = _as_starts(list(starts))

    slice_ = CovariateSlice(data, bw.h1, model, x, bank)
    weights = slice_.ll_weights() if estimator == Estimator.LL else slice_.weights[0]
    trajectories = _mean_shift(
        weights, data.y, start_tensor, bw.h2, opts.max_iter, opts.resolve_tol_step(data)
    )

    result = ModeSet(x=float(x), n_starts=len(trajectories))
    endpoints = [t for t in trajectories if t.converged]
    result.n_converged = len(endpoints)
    for t in trajectories:
        if not t.converged:
            result.messages.append(t.reason)
    if not endpoints:
        result.messages.append("no trajectory converged")
        logger.debug("x=%.6g: no converged mean-shift trajectory out of %d", x, len(trajectories))
        return result

    y_end = as_tensor([t.y for t in endpoints])
    value, grad, curvature = _derivatives(slice_, estimator, y_end, bw.h2)
    candidates = []
    for t, v, g, c in zip(endpoints, value.tolist(), grad.tolist(), curvature.tolist()):
        tol_root = opts.root_rtol * abs(v) / bw.h2
        if c >= 0.0:
            result.messages.append(f"endpoint y={t.y:.6g} rejected (second derivative {c:.3e} >= 0)")
        elif not abs(g) < tol_root:
            result.messages.append(
                f"endpoint y={t.y:.6g} rejected (gradient {abs(g):.3e} >= {tol_root:.3e})"
            )
        else:
            candidates.append((t.y, t.iters, abs(g)))

    dedup_tol = opts.resolve_dedup_tol(data)
    for y, iters, g in sorted(candidates):
        if result.modes and y - result.modes[-1] <= dedup_tol:
            continue
        result.modes.append(y)
        result.iters.append(iters)
        result.grad_abs.append(g)
    return result


def mode_curves(
    data: Dataset,
    bw: Bandwidths,
    model: ErrorModel,
    grid_spec: GridSpec,
    opts: Optional[SeekOptions] = None,
    start_fn: Optional[StartFn] = None,
    bank: Optional[KernelBank] = None,
) -> ModeCurves:
    """
    Mode sets along x_k = x_L + k delta. A failure at one grid point leaves an empty
    ModeSet with a diagnostic there; the sweep always completes.
    """
    opts = opts or SeekOptions()
    grid = grid_spec.points()
    sets = []
    for x in grid.tolist():
        starts = start_fn(x) if start_fn is not None else None
        try:
            sets.append(estimate_mode_set(data, bw, model, x, opts, starts=starts, bank=bank))
        except DeconvModeError as e:
            logger.debug("x=%.6g: %s", x, e)
            sets.append(ModeSet(x=x, messages=[str(e)]))

    failed = sum(1 for s in sets if s.is_empty)
    if failed:
        logger.warning("%d of %d grid points have an empty mode set", failed, len(sets))
    return ModeCurves(grid=grid, sets=sets, delta=grid_spec.delta)
