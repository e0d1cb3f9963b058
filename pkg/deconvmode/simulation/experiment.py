"""
Monte-Carlo harness: data generation, exact true modes, oracle bandwidth search and
the replicate loop producing mean ISE tables per (scenario, lambda, estimator).
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Annotated, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
import pandas as pd
import torch
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, field_validator
from tqdm import tqdm

from deconvmode.bandwidth import CvConfig, cv_simex_h1, h2_normal_reference, minimize_cv_h1
from deconvmode.core.density import Bandwidths, Dataset, KernelBank
from deconvmode.core.error_model import ErrorKind, ErrorModel
from deconvmode.core.mode_seek import (
    Estimator,
    GridSpec,
    ModeCurves,
    ModeSet,
    SeekOptions,
    StartRule,
    mode_curves,
)
from deconvmode.errors import DeconvModeError, OracleSearchError
from deconvmode.metrics import empirical_ise, hausdorff
from deconvmode.simulation.scenarios import SCENARIO_REGISTRY, VAR_X, MixtureScenario
from deconvmode.tracker import Tracker
from deconvmode.utils import as_tensor, make_generator, resolve_threads, torch_threads

logger = logging.getLogger(__name__)

STREAM_DATA = 0
STREAM_ERROR = 1
STREAM_SIMEX = 2

ORACLE_GRID = np.geomspace(0.08, 1.2, 12).tolist()
ORACLE_X_GRID = GridSpec(x_lower=-2.0, x_upper=2.0, delta=0.1)
SIMEX_X_GRID = GridSpec(x_lower=-1.8, x_upper=1.8, delta=0.1)


class OracleBandwidth(BaseModel):
    model_config = ConfigDict(frozen=True)

    mode: Literal["oracle"] = "oracle"
    h1_grid: List[PositiveFloat] = Field(default_factory=lambda: list(ORACLE_GRID))
    h2_grid: List[PositiveFloat] = Field(default_factory=lambda: list(ORACLE_GRID))


class SimexBandwidth(BaseModel):
    model_config = ConfigDict(frozen=True)

    mode: Literal["simex"] = "simex"
    cv: CvConfig = CvConfig()


class SimConfig(BaseModel):
    """
    One Monte-Carlo cell: a scenario at one reliability ratio.

    Args:
        scenario(str): A registered scenario name ("C1" or "C2").
        lam(float): Reliability ratio Var(X) / Var(W), read from the `lambda` key.
        truth_offsets(List[float]): When set, every grid point starts the mean-shift
            at each scenario centre curve plus each offset instead of using `starts`.
        grid(GridSpec): Defaults to [-2, 2] for oracle runs and [-1.8, 1.8] for SIMEX runs.
    """

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    scenario: str = "C1"
    n: int = Field(default=500, ge=2)
    lam: float = Field(default=0.85, alias="lambda", gt=0.0, le=1.0)
    error_kind: ErrorKind = ErrorKind.LAPLACE
    n_replicates: int = Field(default=50, ge=1)
    seed: int = 0
    grid: Optional[GridSpec] = None
    starts: StartRule = StartRule()
    truth_offsets: Optional[List[float]] = None
    estimators: List[Estimator] = Field(
        default_factory=lambda: [Estimator.NAIVE, Estimator.LC, Estimator.LL]
    )
    bandwidth: Annotated[
        Union[OracleBandwidth, SimexBandwidth], Field(discriminator="mode")
    ] = OracleBandwidth()
    max_iter: int = Field(default=500, ge=1)
    threads: Optional[int] = None
    tabulate: bool = False

    @field_validator("scenario")
    @classmethod
    def _check_scenario(cls, value):
        names = SCENARIO_REGISTRY.get_all_scenario_names()
        if value not in names:
            raise ValueError(f"unknown scenario {value!r}, expected one of {names}")
        return value

    @field_validator("estimators")
    @classmethod
    def _check_estimators(cls, value):
        if not value:
            raise ValueError("at least one estimator is required")
        return list(dict.fromkeys(value))

    @property
    def resolved_grid(self) -> GridSpec:
        if self.grid is not None:
            return self.grid
        return SIMEX_X_GRID if self.bandwidth.mode == "simex" else ORACLE_X_GRID

    def scenario_impl(self) -> MixtureScenario:
        return SCENARIO_REGISTRY.get(self.scenario)

    def error_model(self) -> ErrorModel:
        return ErrorModel.from_reliability(self.error_kind, VAR_X, self.lam)

    def seek_options(self, estimator: Estimator) -> SeekOptions:
        return SeekOptions(estimator=estimator, max_iter=self.max_iter, starts=self.starts)


class SimulationPlan(BaseModel):
    """A table: the base cell swept over scenarios and reliability ratios."""

    model_config = ConfigDict(frozen=True)

    base: SimConfig = SimConfig()
    scenarios: List[str] = Field(default_factory=lambda: ["C1", "C2"])
    lambdas: List[float] = Field(default_factory=lambda: [0.75, 0.85, 0.95])

    def cells(self) -> List[SimConfig]:
        return [
            self.base.model_copy(update={"scenario": s, "lam": lam})
            for s in self.scenarios
            for lam in self.lambdas
        ]


@dataclass
class ReplicateRecord:
    replicate: int
    estimator: str
    h1: float = float("nan")
    h2: float = float("nan")
    ise: float = float("nan")
    undefined_points: int = 0
    failed: bool = False
    message: str = ""


@dataclass
class MCResult:
    scenario: str
    lam: float
    records: List[ReplicateRecord] = field(default_factory=list)
    truth_deviation: float = 0.0

    def summary(self) -> Dict[str, Dict[str, float]]:
        out = {}
        for est in dict.fromkeys(r.estimator for r in self.records):
            ok = [r for r in self.records if r.estimator == est and not r.failed]
            ises = np.array([r.ise for r in ok], dtype=np.float64)
            n_failed = sum(1 for r in self.records if r.estimator == est and r.failed)
            mean = float(ises.mean()) if ises.size else float("nan")
            se = float(ises.std(ddof=1) / math.sqrt(ises.size)) if ises.size > 1 else 0.0
            out[est] = {
                "mean_ise": mean,
                "se": se,
                "n_ok": len(ok),
                "n_failed": n_failed,
                "mean_undefined_points": float(np.mean([r.undefined_points for r in ok])) if ok else 0.0,
            }
        return out

    def table_frame(self) -> pd.DataFrame:
        rows = [
            {"scenario": self.scenario, "lambda": self.lam, "estimator": est, **stats}
            for est, stats in self.summary().items()
        ]
        return pd.DataFrame(rows)

    def replicate_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([r.__dict__ for r in self.records])
        frame.insert(0, "lambda", self.lam)
        frame.insert(0, "scenario", self.scenario)
        return frame


def generate_dataset(cfg: SimConfig, replicate: int) -> Tuple[Dataset, torch.Tensor]:
    """(W, Y) for one replicate plus the hidden X, deterministic in (seed, replicate)."""
    scenario = cfg.scenario_impl()
    x, y = scenario.sample(cfg.n, make_generator(cfg.seed, replicate, STREAM_DATA))
    u = cfg.error_model().sample(cfg.n, make_generator(cfg.seed, replicate, STREAM_ERROR))
    return Dataset(w=x + u, y=y), x


def true_mode_set(cfg: SimConfig, x: float) -> ModeSet:
    modes = cfg.scenario_impl().true_modes(x)
    return ModeSet(x=float(x), modes=modes, iters=[0] * len(modes), grad_abs=[0.0] * len(modes))


def truth_curves(cfg: SimConfig, grid: Optional[GridSpec] = None) -> ModeCurves:
    grid = grid or cfg.resolved_grid
    points = grid.points()
    return ModeCurves(
        grid=points, sets=[true_mode_set(cfg, x) for x in points.tolist()], delta=grid.delta
    )


def truth_deviation(cfg: SimConfig, truth: ModeCurves) -> float:
    """Largest Hausdorff gap between the exact modes and the scenario's centre curves."""
    scenario = cfg.scenario_impl()
    gaps = []
    for s in truth.sets:
        centres = [float(c) for c in scenario.centres(as_tensor([s.x]))]
        if s.modes:
            gaps.append(hausdorff(s.modes, centres))
    return max(gaps) if gaps else 0.0


def _start_fn(cfg: SimConfig):
    if cfg.truth_offsets is None:
        return None
    scenario = cfg.scenario_impl()
    offsets = list(cfg.truth_offsets)

    def starts(x: float) -> List[float]:
        return [float(c) + o for c in scenario.centres(as_tensor([x])) for o in offsets]

    return starts


def _curves(cfg: SimConfig, data: Dataset, bw: Bandwidths, estimator: Estimator) -> ModeCurves:
    model = cfg.error_model()
    bank = None
    if cfg.tabulate and estimator != Estimator.NAIVE:
        bank = KernelBank.tabulated(bw.h1, model)
    return mode_curves(
        data, bw, model, cfg.resolved_grid, cfg.seek_options(estimator), _start_fn(cfg), bank
    )


def oracle_bandwidths(
    cfg: SimConfig,
    estimator: Estimator,
    replicate: int,
    data: Optional[Dataset] = None,
    truth: Optional[ModeCurves] = None,
) -> Tuple[Bandwidths, float]:
    """
    The (h1, h2) pair on the oracle grid whose mode curves have the smallest ISE
    against the true modes; ties resolve to the smaller h1, then the smaller h2.
    """
    if cfg.bandwidth.mode != "oracle":
        raise OracleSearchError("oracle bandwidths need bandwidth.mode = 'oracle'")
    if data is None:
        data, _ = generate_dataset(cfg, replicate)
    truth = truth or truth_curves(cfg)
    grid_size = truth.grid.numel()

    best, best_ise = None, math.inf
    for h1 in sorted(cfg.bandwidth.h1_grid):
        for h2 in sorted(cfg.bandwidth.h2_grid):
            bw = Bandwidths(h1=h1, h2=h2)
            report = empirical_ise(_curves(cfg, data, bw, estimator), truth)
            if report.undefined_points == grid_size:
                continue
            if report.ise < best_ise:
                best, best_ise = bw, report.ise
    if best is None:
        raise OracleSearchError(
            f"every oracle candidate left all {grid_size} grid points undefined "
            f"({cfg.scenario}, lambda={cfg.lam}, {estimator.value}, replicate {replicate})"
        )
    return best, best_ise


def _simex_seed(cfg: SimConfig, replicate: int) -> int:
    return int(np.random.SeedSequence([cfg.seed, replicate, STREAM_SIMEX]).generate_state(1)[0])


def select_bandwidths(
    cfg: SimConfig, estimator: Estimator, replicate: int, data: Dataset, truth: ModeCurves
) -> Bandwidths:
    if cfg.bandwidth.mode == "oracle":
        return oracle_bandwidths(cfg, estimator, replicate, data, truth)[0]

    model = cfg.error_model()
    h2 = h2_normal_reference(data.y)
    cv = cfg.bandwidth.cv.model_copy(
        update={
            "seed": _simex_seed(cfg, replicate),
            "estimator": "ll" if estimator == Estimator.LL else "lc",
        }
    )
    if estimator == Estimator.NAIVE or model.is_error_free:
        h1 = minimize_cv_h1(data, ErrorModel.none(), cv, h2)
    else:
        h1, _ = cv_simex_h1(data, model, cv, h2)
    return Bandwidths(h1=h1, h2=h2)


def run_replicate(cfg: SimConfig, replicate: int, truth: ModeCurves) -> List[ReplicateRecord]:
    data, _ = generate_dataset(cfg, replicate)
    records = []
    for estimator in cfg.estimators:
        record = ReplicateRecord(replicate=replicate, estimator=estimator.value)
        try:
            bw = select_bandwidths(cfg, estimator, replicate, data, truth)
            record.h1, record.h2 = bw.h1, bw.h2
            report = empirical_ise(_curves(cfg, data, bw, estimator), truth)
            record.ise = report.ise
            record.undefined_points = report.undefined_points
            if report.undefined_points == truth.grid.numel():
                record.failed = True
                record.message = "no mode at any grid point"
        except DeconvModeError as e:
            record.failed = True
            record.message = str(e)
            logger.warning("replicate %d (%s) failed: %s", replicate, estimator.value, e)
        records.append(record)
    return records


def _init_worker():
    torch.set_num_threads(1)


def run_mc_experiment(
    cfg: SimConfig,
    tracker: Optional[Tracker] = None,
    disable_progress: bool = True,
) -> MCResult:
    """
    All replicates of one cell. Replicates run on a process pool when more than one
    worker is configured; results are ordered by replicate index before aggregation.
    """
    truth = truth_curves(cfg)
    result = MCResult(scenario=cfg.scenario, lam=cfg.lam, truth_deviation=truth_deviation(cfg, truth))
    logger.info(
        "%s lambda=%.2f: %d replicates, exact modes deviate from centre curves by up to %.4g",
        cfg.scenario,
        cfg.lam,
        cfg.n_replicates,
        result.truth_deviation,
    )

    threads = resolve_threads(cfg.threads)
    replicates = range(cfg.n_replicates)
    by_replicate: Dict[int, List[ReplicateRecord]] = {}
    progress = tqdm(total=cfg.n_replicates, desc=f"{cfg.scenario} lambda={cfg.lam}", disable=disable_progress)
    if threads == 1:
        with torch_threads(1):
            for r in replicates:
                by_replicate[r] = run_replicate(cfg, r, truth)
                progress.update(1)
    else:
        with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker) as pool:
            futures = {r: pool.submit(run_replicate, cfg, r, truth) for r in replicates}
            for r, future in futures.items():
                by_replicate[r] = future.result()
                progress.update(1)
    progress.close()

    for r in sorted(by_replicate):
        result.records.extend(by_replicate[r])
        if tracker is not None:
            tracker.log(
                {
                    f"{rec.estimator}/{key}": getattr(rec, key)
                    for rec in by_replicate[r]
                    if not rec.failed
                    for key in ("ise", "h1", "h2")
                },
                step=r,
            )
    return result


def run_plan(
    plan: SimulationPlan, tracker: Optional[Tracker] = None, disable_progress: bool = True
) -> List[MCResult]:
    return [run_mc_experiment(cell, tracker, disable_progress) for cell in plan.cells()]
