"""
Bandwidth selection: normal-reference h2, leave-one-out cross-validation for h1
and the CV-SIMEX extrapolation for error-prone covariates.

Every conditional-density estimator used here is a weighted sum of K_2 bumps,
p(y|x) = sum_i a_i K_2((Y_i - y)/h2)/h2, so the integral of its square is the
closed form sum_{i,k} a_i a_k phi_{sqrt(2) h2}(Y_i - Y_k).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, field_validator
from tqdm import tqdm

from deconvmode.core.density import EPS_DET, Bandwidths, Dataset, KernelBank, sample_sd
from deconvmode.core.error_model import ErrorModel
from deconvmode.core.kernels import INV_SQRT_2PI
from deconvmode.errors import DegenerateDataError, DomainError, SelectionError
from deconvmode.utils import as_tensor, make_generator

logger = logging.getLogger(__name__)

UNRELIABLE_SKIP_FRACTION = 0.10
SIMEX_STREAM_FIRST = 1
SIMEX_STREAM_SECOND = 2


class CvConfig(BaseModel):
    """
    Cross-validation settings.

    Args:
        h1_grid(List[float]): Candidate h1 values, strictly increasing. When unset,
            `n_candidates` log-spaced values from `grid_range[0] * s_W` to
            `grid_range[1] * s_W` are used.
        B(int): Number of SIMEX replicates per level.
        weight_percentiles(Tuple[float, float]): Percentiles of the evaluation covariate
            bounding the CV weight function.
        estimator(str): "lc" or "ll", the conditional-density estimator being tuned.
        seed(int): Seed of the SIMEX error draws.
    """

    model_config = ConfigDict(frozen=True)

    h1_grid: Optional[List[PositiveFloat]] = None
    n_candidates: int = Field(default=20, ge=1)
    grid_range: Tuple[PositiveFloat, PositiveFloat] = (0.05, 2.0)
    B: int = Field(default=15, ge=1)
    weight_percentiles: Tuple[float, float] = (2.5, 97.5)
    estimator: Literal["lc", "ll"] = "lc"
    seed: int = 0
    tabulate: bool = False

    @field_validator("h1_grid")
    @classmethod
    def _check_grid(cls, value):
        if value is not None:
            if not value:
                raise ValueError("h1_grid must not be empty")
            if any(b <= a for a, b in zip(value, value[1:])):
                raise ValueError("h1_grid must be strictly increasing")
        return value

    @field_validator("weight_percentiles")
    @classmethod
    def _check_percentiles(cls, value):
        if not 0.0 <= value[0] < value[1] <= 100.0:
            raise ValueError(f"weight percentiles must satisfy 0 <= low < high <= 100, got {value}")
        return value

    def candidates(self, w: torch.Tensor) -> List[float]:
        if self.h1_grid is not None:
            return list(self.h1_grid)
        return default_h1_grid(w, self.n_candidates, self.grid_range)


@dataclass
class CvScore:
    h1: float
    score: float
    n_skipped: int = 0
    n_weighted: int = 0
    n: int = 0

    @property
    def unreliable(self) -> bool:
        return self.n_skipped > UNRELIABLE_SKIP_FRACTION * self.n

    @property
    def failed(self) -> bool:
        return not math.isfinite(self.score)


@dataclass
class SimexTrace:
    """Audit record of a CV-SIMEX run: the per-replicate CV scores of both levels."""

    h1_star: float = float("nan")
    h1_star_star: float = float("nan")
    h1_hat: float = float("nan")
    rows: List[Dict[str, float]] = field(default_factory=list)

    def record(self, step: int, b: int, h1: float, score: float) -> None:
        self.rows.append({"step": step, "b": b, "h1_candidate": h1, "score": score})

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=["step", "b", "h1_candidate", "score"])


def h2_normal_reference(y: Sequence[float]) -> float:
    """1.06 s_Y n^(-1/5)."""
    y = as_tensor(y).reshape(-1)
    if y.numel() < 2:
        raise DegenerateDataError(f"at least 2 responses are required, got {y.numel()}")
    sd = sample_sd(y)
    if sd == 0.0:
        raise DegenerateDataError("responses have zero sample variance")
    return 1.06 * sd * y.numel() ** (-0.2)


def default_h1_grid(
    w: torch.Tensor, n_candidates: int = 20, grid_range: Tuple[float, float] = (0.05, 2.0)
) -> List[float]:
    sd = sample_sd(as_tensor(w).reshape(-1))
    if sd == 0.0:
        raise DegenerateDataError("covariate has zero sample variance")
    return np.geomspace(grid_range[0] * sd, grid_range[1] * sd, n_candidates).tolist()


def weight_bounds_from(v: torch.Tensor, percentiles: Tuple[float, float]) -> Tuple[float, float]:
    q = torch.quantile(v, as_tensor([percentiles[0] / 100.0, percentiles[1] / 100.0]))
    return float(q[0]), float(q[1])


def _loo_coefficients(
    data: Dataset,
    v: torch.Tensor,
    h1: float,
    model: ErrorModel,
    estimator: str,
    bank: KernelBank,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Row j holds the bump coefficients a_{j,i} of p_{-j}(.|V_j); `ok[j]` is False where
    the leave-one-out fit is singular at V_j.
    """
    n = data.n
    t = (data.w[None, :] - v[:, None]) / h1
    off_diag = ~torch.eye(n, dtype=torch.bool)
    c0 = bank(0, t) * off_diag
    norm = (n - 1) * h1

    if estimator == "lc":
        den = c0.sum(1)
        scale = c0.abs().max(1).values
        ok = (den.abs() > EPS_DET * scale) & (scale > 0)
        coef = c0 / torch.where(ok, den, torch.ones_like(den))[:, None]
        return coef, ok

    c1 = bank(1, t) * off_diag
    c2 = bank(2, t) * off_diag
    s0, s1, s2 = c0.sum(1) / norm, c1.sum(1) / norm, c2.sum(1) / norm
    det = s0 * s2 - s1 * s1
    ok = (det != 0) & (det.abs() >= EPS_DET * (s0 * s2).abs())
    safe_det = torch.where(ok, det, torch.ones_like(det))
    coef = (s2[:, None] * c0 - s1[:, None] * c1) / (norm * safe_det[:, None])
    return coef, ok


def cv_score(
    data: Dataset,
    bw: Bandwidths,
    model: ErrorModel,
    cfg: Optional[CvConfig] = None,
    weight_bounds: Optional[Tuple[float, float]] = None,
    covariate: Optional[torch.Tensor] = None,
    bank: Optional[KernelBank] = None,
) -> CvScore:
    """
    (1/n) sum_j w(V_j) int p_{-j}(y|V_j)^2 dy - (2/n) sum_j w(V_j) p_{-j}(Y_j|V_j).

    `data` holds the covariate the estimator is fitted on; `covariate` is the V column
    it is evaluated at (defaults to data.w). Leave-one-out fits that are singular at
    V_j are skipped and counted.
    """
    cfg = cfg or CvConfig()
    n = data.n
    if n < 3:
        raise DegenerateDataError(f"cross-validation needs n >= 3, got {n}")
    v = data.w if covariate is None else as_tensor(covariate).reshape(-1)
    if v.numel() != n:
        raise DomainError(f"evaluation covariate has {v.numel()} values, expected {n}")
    if weight_bounds is None:
        weight_bounds = weight_bounds_from(v, cfg.weight_percentiles)
    if bank is None:
        bank = KernelBank.tabulated(bw.h1, model) if cfg.tabulate else KernelBank(bw.h1, model)

    coef, ok = _loo_coefficients(data, v, bw.h1, model, cfg.estimator, bank)
    weighted = (v >= weight_bounds[0]) & (v <= weight_bounds[1])
    used = weighted & ok

    h2 = bw.h2
    diff = data.y[:, None] - data.y[None, :]
    gram = INV_SQRT_2PI * torch.exp(-0.25 * (diff / h2) ** 2) / (math.sqrt(2.0) * h2)
    bumps = INV_SQRT_2PI * torch.exp(-0.5 * (diff / h2) ** 2) / h2

    a = coef[used]
    squared = ((a @ gram) * a).sum(1)
    at_obs = (a * bumps[used]).sum(1)
    score = float((squared.sum() - 2.0 * at_obs.sum()) / n)

    n_skipped = int((weighted & ~ok).sum())
    result = CvScore(
        h1=float(bw.h1), score=score, n_skipped=n_skipped, n_weighted=int(weighted.sum()), n=n
    )
    if result.n_weighted and n_skipped == result.n_weighted:
        result.score = float("nan")
    return result


def cv_profile(
    data: Dataset,
    model: ErrorModel,
    cfg: CvConfig,
    h2: float,
    covariate: Optional[torch.Tensor] = None,
    weight_bounds: Optional[Tuple[float, float]] = None,
    candidates: Optional[List[float]] = None,
    disable_progress: bool = True,
) -> List[CvScore]:
    candidates = candidates if candidates is not None else cfg.candidates(data.w)
    scores = []
    for h1 in tqdm(candidates, desc="cv", disable=disable_progress):
        score = cv_score(data, Bandwidths(h1=h1, h2=h2), model, cfg, weight_bounds, covariate)
        if score.unreliable:
            logger.warning(
                "h1=%.4g: %d of %d leave-one-out fits skipped, score unreliable",
                h1,
                score.n_skipped,
                score.n,
            )
        scores.append(score)
    return scores


def _argmin(candidates: List[float], scores: List[float], diagnostics: Dict[float, str]) -> float:
    best, best_score = None, math.inf
    for h1, score in zip(candidates, scores):
        if math.isfinite(score) and score < best_score:
            best, best_score = h1, score
    if best is None:
        raise SelectionError("every h1 candidate failed", diagnostics)
    return best


def minimize_cv_h1(
    data: Dataset,
    model: ErrorModel,
    cfg: CvConfig,
    h2: float,
    covariate_override: Optional[torch.Tensor] = None,
    weight_bounds: Optional[Tuple[float, float]] = None,
    disable_progress: bool = True,
) -> float:
    """The grid h1 minimizing the CV score; ties resolve to the smaller h1."""
    profile = cv_profile(
        data, model, cfg, h2, covariate_override, weight_bounds, disable_progress=disable_progress
    )
    diagnostics = {
        s.h1: f"score={s.score}, skipped {s.n_skipped}/{s.n_weighted}" for s in profile
    }
    return _argmin([s.h1 for s in profile], [s.score for s in profile], diagnostics)


def _simex_level(
    step: int,
    fits: List[torch.Tensor],
    evals: List[torch.Tensor],
    data: Dataset,
    model: ErrorModel,
    cfg: CvConfig,
    h2: float,
    candidates: List[float],
    trace: SimexTrace,
    common_bounds: Optional[Tuple[float, float]],
    disable_progress: bool,
) -> float:
    totals = []
    diagnostics = {}
    for h1 in tqdm(candidates, desc=f"simex step {step}", disable=disable_progress):
        bw = Bandwidths(h1=h1, h2=h2)
        bank = KernelBank.tabulated(h1, model) if cfg.tabulate else KernelBank(h1, model)
        per_b = []
        for b, (w_fit, v) in enumerate(zip(fits, evals)):
            bounds = common_bounds or weight_bounds_from(v, cfg.weight_percentiles)
            score = cv_score(data.with_covariate(w_fit), bw, model, cfg, bounds, v, bank).score
            trace.record(step, b, h1, score)
            if math.isfinite(score):
                per_b.append(score)
        totals.append(sum(per_b) / len(per_b) if per_b else float("nan"))
        diagnostics[h1] = f"{len(per_b)}/{len(fits)} replicates scored"
    return _argmin(candidates, totals, diagnostics)


def cv_simex_h1(
    data: Dataset,
    model: ErrorModel,
    cfg: CvConfig,
    h2: float,
    disable_progress: bool = True,
) -> Tuple[float, SimexTrace]:
    """
    CV-SIMEX choice of h1 for the covariate-error setting.

    Level one re-contaminates W with fresh errors, W*_b = W + U*_b, and selects h1*
    by B-averaged CV with W in the role of the true covariate. Level two repeats this
    one step further, W**_b = W*_b + U**_b against W*_b, giving h1**. The returned
    bandwidth extrapolates back to zero error: h1_hat = h1*^2 / h1**.
    """
    if model.is_error_free:
        raise DomainError("CV-SIMEX needs a non-degenerate error model")
    candidates = cfg.candidates(data.w)
    n = data.n

    first = [model.sample(n, make_generator(cfg.seed, SIMEX_STREAM_FIRST, b)) for b in range(cfg.B)]
    second = [model.sample(n, make_generator(cfg.seed, SIMEX_STREAM_SECOND, b)) for b in range(cfg.B)]
    w_star = [data.w + u for u in first]
    w_star_star = [ws + u for ws, u in zip(w_star, second)]

    trace = SimexTrace()
    w_bounds = weight_bounds_from(data.w, cfg.weight_percentiles)
    trace.h1_star = _simex_level(
        2, w_star, [data.w] * cfg.B, data, model, cfg, h2, candidates, trace, w_bounds,
        disable_progress,
    )
    trace.h1_star_star = _simex_level(
        4, w_star_star, w_star, data, model, cfg, h2, candidates, trace, None, disable_progress
    )
    trace.h1_hat = trace.h1_star**2 / trace.h1_star_star

    if trace.h1_star_star > 2.0 * trace.h1_star:
        logger.warning(
            "SIMEX extrapolation collapse: h1**=%.4g is far above h1*=%.4g (h1_hat=%.4g)",
            trace.h1_star_star,
            trace.h1_star,
            trace.h1_hat,
        )
    logger.info(
        "CV-SIMEX: h1*=%.4g h1**=%.4g h1_hat=%.4g", trace.h1_star, trace.h1_star_star, trace.h1_hat
    )
    return trace.h1_hat, trace
