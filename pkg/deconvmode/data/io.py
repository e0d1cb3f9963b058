import logging
import os
from typing import Iterable, Optional

import numpy as np
import pandas as pd
import torch
from pydantic import BaseModel

from deconvmode.core.density import Dataset
from deconvmode.errors import DataError
from deconvmode.utils import config_header

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("w", "y")
FLOAT_FORMAT = "%.12g"


def read_dataset(path: str) -> Dataset:
    """
    Read a `w,y` CSV into a Dataset. Rows are numbered from 1 after the header.

    A hidden-covariate column `x`, if present, is dropped with a warning.
    """
    try:
        frame = pd.read_csv(path, comment="#", skip_blank_lines=True)
    except FileNotFoundError:
        raise DataError(f"data file not found: {path}")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"malformed CSV {path}: {e}")

    frame.columns = [str(c).strip().lower() for c in frame.columns]
    missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"{path} lacks column(s) {missing}; expected header 'w,y'")
    if "x" in frame.columns:
        logger.warning("ignoring column 'x' in %s: estimators only see the error-prone w", path)

    values = {}
    for name in REQUIRED_COLUMNS:
        column = pd.to_numeric(frame[name], errors="coerce").to_numpy(dtype="float64")
        bad = ~np.isfinite(column)
        if bad.any():
            row = int(bad.nonzero()[0][0]) + 1
            raise DataError(f"missing or non-finite {name} ({frame[name].iloc[row - 1]!r})", row=row)
        values[name] = column

    logger.info("read %d observations from %s", len(frame), path)
    return Dataset(w=values["w"], y=values["y"])


def write_dataset(path: str, data: Dataset, hidden_x: Optional[torch.Tensor] = None) -> None:
    columns = {"w": data.w.numpy(), "y": data.y.numpy()}
    if hidden_x is not None:
        columns["x"] = hidden_x.numpy()
    pd.DataFrame(columns).to_csv(path, index=False, float_format=FLOAT_FORMAT)


def write_frame(
    path: str,
    frame: pd.DataFrame,
    config: Optional[BaseModel] = None,
    trailer: Optional[Iterable[str]] = None,
) -> None:
    """
    Write a result table. The first line records the resolved config; `trailer`
    lines (already prefixed with '#') are appended after the table.
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as f:
        if config is not None:
            f.write(config_header(config) + "\n")
        frame.to_csv(f, index=False, float_format=FLOAT_FORMAT)
        for line in trailer or ():
            f.write(line + "\n")
    logger.debug("wrote %d rows to %s", len(frame), path)
