"""
Command-line entry point: `deconvmode {estimate,simulate,bandwidth,theory}`.

Each command resolves its JSON config (flags override file values), validates it
before computing anything, and writes CSV outputs whose first line records the
resolved config.
"""

import argparse
import logging
import os
import sys
from typing import Any, Dict, List, Literal, Optional, Tuple

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, model_validator

from deconvmode.bandwidth import (
    CvConfig,
    cv_simex_h1,
    h2_normal_reference,
    minimize_cv_h1,
)
from deconvmode.core.density import Bandwidths, Dataset
from deconvmode.core.error_model import ErrorKind, ErrorModel
from deconvmode.core.mode_seek import Estimator, GridSpec, SeekOptions, StartRule, mode_curves
from deconvmode.data.io import read_dataset, write_frame
from deconvmode.errors import ConfigError, DeconvModeError, exit_code_for
from deconvmode.simulation.experiment import SimConfig, SimulationPlan, run_plan
from deconvmode.simulation.scenarios import SCENARIO_REGISTRY, VAR_X
from deconvmode.theory import AnalyticTruth, error_rate_columns, error_rates, theory_report
from deconvmode.tracker import TRACKER_REGISTRY, create_tracker
from deconvmode.utils import (
    load_config_from_file,
    read_raw_config,
    resolve_threads,
    torch_threads,
    validate_config,
)

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class ErrorConfig(BaseModel):
    """
    The known error law: either `sigma_u` directly or a reliability ratio `lambda`
    with the covariate variance `var_x`.
    """

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    kind: ErrorKind = ErrorKind.NONE
    sigma_u: Optional[float] = Field(default=None, ge=0.0)
    lam: Optional[float] = Field(default=None, alias="lambda", gt=0.0, le=1.0)
    var_x: PositiveFloat = VAR_X

    @model_validator(mode="after")
    def _check_consistent(self) -> "ErrorConfig":
        if self.kind != ErrorKind.NONE and self.sigma_u is None and self.lam is None:
            raise ValueError(f"error kind {self.kind.value!r} needs sigma_u or lambda")
        if self.sigma_u is not None and self.lam is not None:
            raise ValueError("give either sigma_u or lambda, not both")
        return self

    def to_model(self) -> ErrorModel:
        if self.kind == ErrorKind.NONE:
            return ErrorModel.none()
        if self.lam is not None:
            return ErrorModel.from_reliability(self.kind, self.var_x, self.lam)
        if self.sigma_u == 0.0:
            return ErrorModel.none()
        return ErrorModel(kind=self.kind, sigma_u=self.sigma_u)


class BandwidthConfig(BaseModel):
    """
    `fixed` uses h1 and h2 as given. The other modes set h2 by the normal reference
    rule (unless h2 is given) and choose h1 by CV-SIMEX (`simex`), error-free CV on W
    (`naive-cv`) or the normal reference rule applied to W (`normal-ref`).
    """

    model_config = ConfigDict(frozen=True)

    mode: Literal["fixed", "simex", "naive-cv", "normal-ref"] = "normal-ref"
    h1: Optional[PositiveFloat] = None
    h2: Optional[PositiveFloat] = None

    @model_validator(mode="after")
    def _check_fixed(self) -> "BandwidthConfig":
        if self.mode == "fixed" and (self.h1 is None or self.h2 is None):
            raise ValueError("fixed bandwidths need both h1 and h2")
        return self


class EstimateConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    error: ErrorConfig = ErrorConfig()
    estimator: Estimator = Estimator.LC
    bandwidth: BandwidthConfig = BandwidthConfig()
    grid: Optional[GridSpec] = None
    starts: StartRule = StartRule()
    max_iter: int = Field(default=500, ge=1)
    cv: CvConfig = CvConfig()
    seed: int = 0
    threads: Optional[int] = None


class TheoryConfig(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    scenario: str = "C1"
    lam: float = Field(default=0.85, alias="lambda", gt=0.0, lt=1.0)
    error_kind: ErrorKind = ErrorKind.LAPLACE
    n: int = Field(default=500, ge=2)


def _default_grid(data: Dataset) -> GridSpec:
    """41 points spanning the 5th to 95th percentile of W."""
    lo, hi = (float(v) for v in data.w.quantile(data.w.new_tensor([0.05, 0.95])))
    if not lo < hi:
        raise ConfigError("grid", "cannot derive a default grid from constant W; give grid explicitly")
    return GridSpec(x_lower=lo, x_upper=hi, delta=(hi - lo) / 40.0)


def select_bandwidths(
    data: Dataset, cfg: EstimateConfig, disable_progress: bool = True
) -> Tuple[Bandwidths, Optional[Any]]:
    """Resolve (h1, h2) per the bandwidth config; returns the SIMEX trace when one was run."""
    bw_cfg = cfg.bandwidth
    if bw_cfg.mode == "fixed":
        return Bandwidths(h1=bw_cfg.h1, h2=bw_cfg.h2), None

    model = cfg.error.to_model()
    h2 = bw_cfg.h2 if bw_cfg.h2 is not None else h2_normal_reference(data.y)
    cv = cfg.cv.model_copy(
        update={"seed": cfg.seed, "estimator": "ll" if cfg.estimator == Estimator.LL else "lc"}
    )
    trace = None
    if bw_cfg.h1 is not None:
        h1 = bw_cfg.h1
    elif bw_cfg.mode == "normal-ref":
        h1 = h2_normal_reference(data.w)
    elif bw_cfg.mode == "simex" and not model.is_error_free and cfg.estimator != Estimator.NAIVE:
        h1, trace = cv_simex_h1(data, model, cv, h2, disable_progress=disable_progress)
    else:
        if bw_cfg.mode == "simex":
            logger.info("no covariate error to extrapolate from; using error-free CV on W")
        h1 = minimize_cv_h1(data, ErrorModel.none(), cv, h2, disable_progress=disable_progress)
    logger.info("bandwidths (%s): h1=%.6g h2=%.6g", bw_cfg.mode, h1, h2)
    return Bandwidths(h1=h1, h2=h2), trace


def _bandwidth_frame(bw: Bandwidths, cfg: EstimateConfig) -> pd.DataFrame:
    return pd.DataFrame([{"mode": cfg.bandwidth.mode, "h1": bw.h1, "h2": bw.h2}])


def cmd_estimate(data_csv: str, cfg: EstimateConfig, out_dir: str, disable_progress: bool = True) -> int:
    data = read_dataset(data_csv)
    model = cfg.error.to_model()
    bw, trace = select_bandwidths(data, cfg, disable_progress)
    grid = cfg.grid or _default_grid(data)
    opts = SeekOptions(estimator=cfg.estimator, max_iter=cfg.max_iter, starts=cfg.starts)
    curves = mode_curves(data, bw, model, grid, opts)

    write_frame(os.path.join(out_dir, "modes.csv"), curves.to_frame(), cfg)
    write_frame(os.path.join(out_dir, "bandwidths.csv"), _bandwidth_frame(bw, cfg), cfg)
    diagnostics = pd.DataFrame(
        [{"x": s.x, "message": m} for s in curves.sets for m in s.messages], columns=["x", "message"]
    )
    write_frame(os.path.join(out_dir, "diagnostics.csv"), diagnostics, cfg)
    if trace is not None:
        write_frame(os.path.join(out_dir, "simex_trace.csv"), trace.to_frame(), cfg)
    logger.info(
        "%d grid points, %d modes written to %s",
        len(curves.sets),
        sum(len(s) for s in curves.sets),
        out_dir,
    )
    return 0


def cmd_bandwidth(data_csv: str, cfg: EstimateConfig, out_dir: str, disable_progress: bool = True) -> int:
    data = read_dataset(data_csv)
    bw, trace = select_bandwidths(data, cfg, disable_progress)
    write_frame(os.path.join(out_dir, "bandwidths.csv"), _bandwidth_frame(bw, cfg), cfg)
    if trace is not None:
        trailer = [f"# h1_star={trace.h1_star:.12g} h1_star_star={trace.h1_star_star:.12g}"]
        write_frame(os.path.join(out_dir, "simex_trace.csv"), trace.to_frame(), cfg, trailer)
    print(f"h1={bw.h1:.10g} h2={bw.h2:.10g}")
    return 0


def cmd_simulate(
    plan: SimulationPlan, out_dir: str, report_to: str = "none", disable_progress: bool = True
) -> int:
    tracker = create_tracker(report_to, plan.model_dump(mode="json", by_alias=True), out_dir)
    try:
        results = run_plan(plan, tracker, disable_progress)
    finally:
        tracker.close()
    table = pd.concat([r.table_frame() for r in results], ignore_index=True)
    replicates = pd.concat([r.replicate_frame() for r in results], ignore_index=True)
    trailer = [
        f"# truth_deviation scenario={r.scenario} lambda={r.lam:g} max_hausdorff={r.truth_deviation:.6g}"
        for r in results
    ]
    write_frame(os.path.join(out_dir, "table.csv"), table, plan, trailer)
    write_frame(os.path.join(out_dir, "replicates.csv"), replicates, plan)
    return 0


def cmd_theory(cfg: TheoryConfig, out_dir: str) -> int:
    scenario = SCENARIO_REGISTRY.get(cfg.scenario)
    model = ErrorModel.from_reliability(cfg.error_kind, VAR_X, cfg.lam)
    rates = error_rates(model, cfg.n)
    if model.smoothness.kind != "ordinary":
        row = {**rates.__dict__, **error_rate_columns(model, (rates.h1, rates.h2), cfg.n)}
        frame = pd.DataFrame([row])
    else:
        frame = theory_report(AnalyticTruth(scenario, model), cfg.n)
        frame["rate_h"] = rates.h1
    write_frame(os.path.join(out_dir, "theory.csv"), frame, cfg)
    logger.info("theory report for %s lambda=%g n=%d written to %s", cfg.scenario, cfg.lam, cfg.n, out_dir)
    return 0


def _add_common_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, default=None, help="JSON config file")
    parser.add_argument("--out", type=str, default=".", help="output directory")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    parser.add_argument("--progress", action="store_true", help="show progress bars")


def _add_estimation_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("data", type=str, help="CSV file with columns w,y")
    parser.add_argument("--estimator", choices=[e.value for e in Estimator], default=None)
    parser.add_argument("--h1", type=float, default=None)
    parser.add_argument("--h2", type=float, default=None)
    parser.add_argument(
        "--bandwidth", choices=["fixed", "simex", "naive-cv", "normal-ref"], default=None
    )
    parser.add_argument("--error-kind", choices=[k.value for k in ErrorKind], default=None)
    parser.add_argument("--sigma-u", type=float, default=None)
    parser.add_argument("--lambda", dest="lam", type=float, default=None)


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="deconvmode", description="Modal regression with an error-prone covariate"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    estimate = sub.add_parser("estimate", help="mode curves from a w,y CSV")
    _add_common_args(estimate)
    _add_estimation_args(estimate)

    bandwidth = sub.add_parser("bandwidth", help="select (h1, h2) for a w,y CSV")
    _add_common_args(bandwidth)
    _add_estimation_args(bandwidth)

    simulate = sub.add_parser("simulate", help="Monte-Carlo ISE tables")
    _add_common_args(simulate)
    simulate.add_argument("--report-to", choices=list(TRACKER_REGISTRY), default="none")

    theory = sub.add_parser("theory", help="asymptotic optimal bandwidths")
    _add_common_args(theory)
    theory.add_argument("--scenario", default=None)
    theory.add_argument("--lambda", dest="lam", type=float, default=None)
    theory.add_argument("--n", type=int, default=None)

    return parser.parse_args(argv)


def _estimation_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides = {
        "seed": args.seed,
        "threads": args.threads,
        "estimator": args.estimator,
        "bandwidth.h1": args.h1,
        "bandwidth.h2": args.h2,
        "bandwidth.mode": args.bandwidth,
        "error.kind": args.error_kind,
        "error.sigma_u": args.sigma_u,
        "error.lambda": args.lam,
    }
    if args.bandwidth is None and args.h1 is not None and args.h2 is not None:
        overrides["bandwidth.mode"] = "fixed"
    return overrides


def _load_plan(args: argparse.Namespace) -> SimulationPlan:
    """A config with a `base` key is a full plan; otherwise it describes a single cell."""
    raw = read_raw_config(args.config)
    if "base" not in raw:
        cell = validate_config(SimConfig, raw)
        raw = {"base": raw, "scenarios": [cell.scenario], "lambdas": [cell.lam]}
    return validate_config(
        SimulationPlan, raw, {"base.seed": args.seed, "base.threads": args.threads}
    )


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(format=LOG_FORMAT, level=logging.DEBUG if args.verbose else logging.INFO)
    disable_progress = not args.progress
    try:
        if args.command in ("estimate", "bandwidth"):
            cfg = load_config_from_file(args.config, EstimateConfig, _estimation_overrides(args))
            handler = cmd_estimate if args.command == "estimate" else cmd_bandwidth
            with torch_threads(resolve_threads(cfg.threads)):
                return handler(args.data, cfg, args.out, disable_progress)
        if args.command == "simulate":
            return cmd_simulate(_load_plan(args), args.out, args.report_to, disable_progress)
        cfg = load_config_from_file(
            args.config,
            TheoryConfig,
            {"scenario": args.scenario, "lambda": args.lam, "n": args.n},
        )
        return cmd_theory(cfg, args.out)
    except DeconvModeError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
