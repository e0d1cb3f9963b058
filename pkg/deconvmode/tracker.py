# tracker.py

import abc
import logging
import os
from typing import Any, Dict, Optional

# --- Lazy Imports ---
# These libraries are imported only when their respective trackers are used.
try:
    import wandb
except ImportError:
    wandb = None

try:
    from torch.utils.tensorboard import SummaryWriter
except ImportError:
    SummaryWriter = None
# --- End Lazy Imports ---

from deconvmode.errors import ConfigError

logger = logging.getLogger(__name__)


class Tracker(abc.ABC):
    """
    Abstract Base Class for experiment trackers.

    A tracker receives per-replicate metrics (ISE, selected bandwidths) from the
    Monte-Carlo runner. `create_tracker` calls `check_available` before construction.
    """

    def __init__(self, config: Dict[str, Any], output_dir: str):
        self.config = config
        self.output_dir = output_dir
        self.is_initialized = False

    @classmethod
    @abc.abstractmethod
    def check_available(cls) -> None:
        pass

    @abc.abstractmethod
    def log(self, log_dict: Dict[str, Any], step: Optional[int] = None) -> None:
        pass

    @abc.abstractmethod
    def close(self) -> None:
        pass


class NoOpTracker(Tracker):
    @classmethod
    def check_available(cls):
        pass

    def __init__(self, config: Dict[str, Any], output_dir: str):
        super().__init__(config, output_dir)
        self.is_initialized = True

    def log(self, log_dict: Dict[str, Any], step: Optional[int] = None):
        pass

    def close(self):
        pass


class WandbTracker(Tracker):
    """Tracks experiments using Weights & Biases; the project comes from WANDB_PROJECT."""

    @classmethod
    def check_available(cls):
        if wandb is None:
            raise ConfigError(
                "--report-to", "to use wandb, you must install it: 'pip install wandb'"
            )

    def __init__(self, config: Dict[str, Any], output_dir: str):
        super().__init__(config, output_dir)
        wandb.init(
            project=os.environ.get("WANDB_PROJECT", "deconvmode"),
            config=config,
            dir=output_dir,
        )
        self.is_initialized = True

    def log(self, log_dict: Dict[str, Any], step: Optional[int] = None):
        if self.is_initialized:
            wandb.log(log_dict, step=step)

    def close(self):
        if self.is_initialized and wandb.run:
            wandb.finish()
            self.is_initialized = False


class TensorboardTracker(Tracker):
    @classmethod
    def check_available(cls):
        if SummaryWriter is None:
            raise ConfigError(
                "--report-to",
                "to use tensorboard, you must have it installed: 'pip install tensorboard'",
            )

    def __init__(self, config: Dict[str, Any], output_dir: str):
        super().__init__(config, output_dir)
        self.writer = SummaryWriter(log_dir=os.path.join(output_dir, "runs"))
        self.is_initialized = True

    def log(self, log_dict: Dict[str, Any], step: Optional[int] = None):
        if self.is_initialized:
            for key, value in log_dict.items():
                if isinstance(value, (int, float)):
                    self.writer.add_scalar(key, value, global_step=step)

    def close(self):
        if self.is_initialized:
            self.writer.close()
            self.is_initialized = False


# --- Tracker Factory ---
TRACKER_REGISTRY = {
    "wandb": WandbTracker,
    "tensorboard": TensorboardTracker,
    "none": NoOpTracker,
}


def get_tracker_class(report_to: str) -> Optional[type]:
    return TRACKER_REGISTRY.get(report_to)


def create_tracker(report_to: str, config: Dict[str, Any], output_dir: str) -> Tracker:
    tracker_class = get_tracker_class(report_to)
    if not tracker_class:
        raise ConfigError("--report-to", f"unsupported tracker {report_to!r}")
    tracker_class.check_available()
    logger.debug("reporting to %s", report_to)
    return tracker_class(config, output_dir)
