"""
Configuration for plaincode.

Settings come from three layers, later ones winning: a JSON configuration
file, ``PLAINCODE_*`` environment variables and explicit overrides (CLI flags).
"""

import json
import logging
import os
from collections.abc import Callable, Mapping
from pathlib import Path
from typing import Any

from pydantic import BaseModel, Field, ValidationError, field_validator

from .analyzer import SelectionCriteria
from .exceptions import ConfigurationError
from .models import CostTable

logger = logging.getLogger(__name__)

DEFAULT_TRACE_PATH = Path("plaincode-trace.jsonl")
DEFAULT_PLAN_DB_PATH = Path("plaincode-plans.jsonl")
DEFAULT_OUTPUT_DIR = Path("generated-tests")


class Settings(BaseModel):
    """
    Resolved toolkit settings.

    Attributes:
        cost_table: Cost per action kind used by plan synthesis.
        max_sequence_length: Capture bound for sequences and maps.
        max_depth: Capture bound for nested values.
        queue_capacity: Slots of the recorder's event queue.
        batch_size: Events written per batch by the recorder's writer thread.
        outline_threshold: Statement count above which a reconstruction is
            outlined into a helper.
        float_tolerance: Absolute tolerance for float comparison; None means
            bitwise equality.
        selection: Serialization point selection criteria.
        modules: Modules whose classes are analyzed and instrumented.
        adapters: ``module:callable`` factories of named-constant adapters.
        trace_path: Trace log written by ``record``.
        plan_db_path: Plan database written by ``analyze``.
        output_dir: Directory for generated tests and reports.
        strict: Fail emission on unresolvable references instead of discarding.
        log_level: Root log level used by the CLI.
    """

    cost_table: CostTable = Field(default_factory=CostTable)
    max_sequence_length: int = Field(25, ge=1)
    max_depth: int = Field(8, ge=1)
    queue_capacity: int = Field(65536, ge=1)
    batch_size: int = Field(1024, ge=1)
    outline_threshold: int = Field(5, ge=1)
    float_tolerance: float | None = Field(None, ge=0.0)
    selection: SelectionCriteria = Field(default_factory=SelectionCriteria)
    modules: list[str] = Field(default_factory=list)
    adapters: list[str] = Field(default_factory=list)
    trace_path: Path = DEFAULT_TRACE_PATH
    plan_db_path: Path = DEFAULT_PLAN_DB_PATH
    output_dir: Path = DEFAULT_OUTPUT_DIR
    strict: bool = False
    log_level: str = "WARNING"

    @field_validator("cost_table", mode="before")
    @classmethod
    def _wrap_costs(cls, value: Any) -> Any:
        if isinstance(value, Mapping) and "costs" not in value:
            return {"costs": dict(value)}
        return value

    @field_validator("log_level")
    @classmethod
    def _known_level(cls, value: str) -> str:
        level = value.upper()
        if level not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"unknown log level {value!r}")
        return level


def _split_list(raw: str) -> list[str]:
    return [item.strip() for item in raw.split(",") if item.strip()]


_ENV_VARS: dict[str, tuple[str, Callable[[str], Any]]] = {
    "max_sequence_length": ("PLAINCODE_MAX_SEQUENCE_LENGTH", int),
    "max_depth": ("PLAINCODE_MAX_DEPTH", int),
    "queue_capacity": ("PLAINCODE_QUEUE_CAPACITY", int),
    "batch_size": ("PLAINCODE_BATCH_SIZE", int),
    "outline_threshold": ("PLAINCODE_OUTLINE_THRESHOLD", int),
    "float_tolerance": ("PLAINCODE_FLOAT_TOLERANCE", float),
    "modules": ("PLAINCODE_MODULES", _split_list),
    "trace_path": ("PLAINCODE_TRACE", Path),
    "plan_db_path": ("PLAINCODE_PLAN_DB", Path),
    "output_dir": ("PLAINCODE_OUT", Path),
    "log_level": ("PLAINCODE_LOG_LEVEL", str),
}


def env_overrides() -> dict[str, Any]:
    """
    Read the ``PLAINCODE_*`` environment variables that are set.

    Raises:
        ConfigurationError: If a variable does not parse as its type.
    """
    overrides: dict[str, Any] = {}
    for key, (var, convert) in _ENV_VARS.items():
        raw = os.getenv(var)
        if raw is None or raw == "":
            continue
        try:
            overrides[key] = convert(raw)
        except ValueError as e:
            raise ConfigurationError(f"Invalid value for {var}: {raw!r}") from e
    return overrides


def load_settings(
    config_path: Path | str | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> Settings:
    """
    Load settings from file, environment and explicit overrides.

    Args:
        config_path: Optional JSON configuration file.
        overrides: Explicit values (CLI flags); None values are ignored.

    Returns:
        Validated settings.

    Raises:
        ConfigurationError: If the file is missing or malformed, or a value is
            invalid.
    """
    data: dict[str, Any] = {}
    if config_path is not None:
        path = Path(config_path)
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise ConfigurationError(f"Configuration file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Invalid configuration file {path}: {e.msg}") from e
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"Configuration file {path} must hold an object")
        data.update(loaded)
        logger.debug("Loaded configuration from %s", path)

    data.update(env_overrides())
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})

    try:
        return Settings.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"])
        raise ConfigurationError(f"Invalid setting '{location}': {first['msg']}") from e
