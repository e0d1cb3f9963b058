import json
import logging
import os
from contextlib import contextmanager
from typing import Any, Dict, Mapping, Optional, Sequence, Type, TypeVar, Union

import numpy as np
import torch
from pydantic import BaseModel, ValidationError

from deconvmode.errors import ConfigError

logger = logging.getLogger(__name__)

DTYPE = torch.float64
THREADS_ENV = "DECONVMODE_THREADS"

ConfigT = TypeVar("ConfigT", bound=BaseModel)


def as_tensor(values: Union[float, Sequence[float], np.ndarray, torch.Tensor]) -> torch.Tensor:
    """Convert scalars, sequences and arrays to a float64 tensor (no copy for float64 tensors)."""
    if isinstance(values, torch.Tensor):
        return values.to(DTYPE)
    return torch.as_tensor(np.asarray(values, dtype=np.float64), dtype=DTYPE)


def make_generator(seed: int, *stream: int) -> torch.Generator:
    """
    Build a torch generator for the random stream identified by (seed, *stream).

    The stream words are mixed through numpy's SeedSequence so that nearby seeds and
    replicate indices give statistically independent streams, whatever the order in
    which workers consume them.
    """
    state = np.random.SeedSequence([int(seed), *(int(s) for s in stream)]).generate_state(2)
    generator = torch.Generator()
    generator.manual_seed(int(state[0]) << 32 | int(state[1]))
    return generator


def resolve_threads(threads: Optional[int]) -> int:
    if threads is not None:
        return max(1, int(threads))
    value = os.environ.get(THREADS_ENV)
    if value is None:
        return 1
    try:
        return max(1, int(value))
    except ValueError:
        raise ConfigError(THREADS_ENV, f"expected an integer, got {value!r}")


def _set_dotted(config: Dict[str, Any], dotted_key: str, value: Any) -> None:
    node = config
    parts = dotted_key.split(".")
    for part in parts[:-1]:
        child = node.get(part)
        if not isinstance(child, dict):
            child = {}
            node[part] = child
        node = child
    node[parts[-1]] = value


def validate_config(
    model_cls: Type[ConfigT],
    raw: Mapping[str, Any],
    overrides: Optional[Mapping[str, Any]] = None,
) -> ConfigT:
    """
    Validate a raw config dict, applying dotted-key overrides first.

    Args:
        model_cls: The pydantic model describing the config.
        raw: The parsed config file content.
        overrides: Mapping of dotted keys (e.g. ``"bandwidth.h1"``) to values; ``None``
            values are ignored so unset flags never clobber the file.

    Returns:
        The validated config instance.
    """
    config = json.loads(json.dumps(raw))
    for key, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(config, key, value)
    try:
        return model_cls.model_validate(config)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"]) or model_cls.__name__
        raise ConfigError(field, first["msg"]) from None


def read_raw_config(config_path: Optional[str]) -> Dict[str, Any]:
    raw: Dict[str, Any] = {}
    if config_path is not None:
        try:
            with open(config_path, "r") as f:
                raw = json.load(f)
        except FileNotFoundError:
            raise ConfigError("--config", f"file not found: {config_path}")
        except json.JSONDecodeError as e:
            raise ConfigError("--config", f"invalid JSON ({e})")
        if not isinstance(raw, dict):
            raise ConfigError("--config", "top level must be a JSON object")
    return raw


def load_config_from_file(
    config_path: Optional[str],
    model_cls: Type[ConfigT],
    overrides: Optional[Mapping[str, Any]] = None,
) -> ConfigT:
    return validate_config(model_cls, read_raw_config(config_path), overrides)


RUNTIME_KEYS = ("threads",)


def _drop_runtime_keys(node: Any) -> Any:
    if isinstance(node, dict):
        return {k: _drop_runtime_keys(v) for k, v in node.items() if k not in RUNTIME_KEYS}
    if isinstance(node, list):
        return [_drop_runtime_keys(v) for v in node]
    return node


def config_header(config: BaseModel) -> str:
    """
    One-line, deterministic record of a resolved config for output file headers.

    Worker counts are left out: they never change results.
    """
    dumped = _drop_runtime_keys(config.model_dump(mode="json", by_alias=True))
    return "# config: " + json.dumps(dumped, sort_keys=True)


@contextmanager
def torch_threads(num_threads: int):
    current = torch.get_num_threads()
    torch.set_num_threads(num_threads)
    try:
        yield
    finally:
        torch.set_num_threads(current)
