"""Shared command plumbing: run configuration, common flags and exit codes.

Values resolve in the order flags > JSON config file > preset/environment
defaults. ``ConfigError`` exits with 2, every other ``CalibrationError``
with 1.
"""

from __future__ import annotations

import argparse
import json
import logging
from datetime import date
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from calibration.data import Dataset, Variable, read_dataset
from calibration.distributions import Family
from calibration.presets import MethodSpec, default_preset, load_preset
from common.config import get_settings
from common.errors import CalibrationError, ConfigError
from common.logging import configure_logging

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2
Command = Literal["simulate", "train", "predict", "verify", "report"]


class RunConfig(BaseModel):
    """Everything one CLI command needs; unused fields are ignored by a command."""

    model_config = ConfigDict(extra="forbid")

    command: Command
    variable: Variable = Variable.WIND_SPEED
    data_dir: Path = Path("data")
    model_dir: Optional[Path] = None
    output: Optional[Path] = None
    method: Literal["emos", "mlp_s", "mlpex"] = "emos"
    family: Optional[Family] = None
    preset: Optional[str] = None
    preset_overrides: Dict[str, Any] = Field(default_factory=dict)
    train_days: Optional[int] = Field(None, ge=1)
    spatial: Optional[Literal["local", "regional"]] = None
    start: Optional[date] = None
    end: Optional[date] = None
    seed: Optional[int] = None
    workers: Optional[int] = Field(None, ge=1)
    # simulate
    days: int = Field(90, ge=1)
    stations: int = Field(2, ge=1)
    scenario: Dict[str, Any] = Field(default_factory=dict)
    # verify / report
    predictions: List[str] = Field(default_factory=list)
    report: Optional[Path] = None
    min_obs: Optional[float] = None
    nominal: Optional[float] = Field(None, gt=0.0, lt=1.0)
    station_filter: List[str] = Field(default_factory=list)

    @field_validator("variable", mode="before")
    @classmethod
    def _variable(cls, value: Any) -> Any:
        if isinstance(value, str):
            try:
                return Variable.parse(value)
            except ValueError as exc:
                raise ValueError(f"unknown variable {value!r}; use wind or ghi") from exc
        return value

    @field_validator("family", mode="before")
    @classmethod
    def _family(cls, value: Any) -> Any:
        return value.strip().upper() if isinstance(value, str) else value

    @property
    def effective_seed(self) -> int:
        return get_settings().seed if self.seed is None else int(self.seed)

    @property
    def effective_workers(self) -> int:
        return get_settings().workers if self.workers is None else int(self.workers)

    @property
    def effective_model_dir(self) -> Path:
        return self.model_dir or Path(get_settings().model_dir)

    def method_spec(self) -> MethodSpec:
        preset = load_preset(self.preset or default_preset(self.variable), self.preset_overrides)
        if preset.variable is not self.variable:
            raise ConfigError(f"preset {preset.name} is for {preset.variable.value}, not {self.variable.value}")
        window = {k: v for k, v in (("train_days", self.train_days), ("spatial", self.spatial)) if v is not None}
        return preset.method_spec(self.method, self.family, window=window)


def read_archive(cfg: RunConfig) -> Dataset:
    """Joined archive from ``cfg.data_dir``; missing files are a configuration error."""

    for name in ("forecasts.csv", "observations.csv"):
        if not (cfg.data_dir / name).is_file():
            raise ConfigError(f"{cfg.data_dir / name} does not exist")
    return read_dataset(cfg.data_dir, variable=cfg.variable)


def add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON file with run settings; flags take precedence.")
    parser.add_argument("--seed", type=int, help="Base seed (default: CALIB_SEED).")
    parser.add_argument("--log-level", help="Logging level (default: CALIB_LOG_LEVEL).")


def add_method_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--variable", help="wind or ghi.")
    parser.add_argument("--method", choices=["emos", "mlp_s", "mlpex"], help="Calibration method.")
    parser.add_argument("--family", help="Predictive family: TN or LN for wind, CL0 or CN0 for ghi.")
    parser.add_argument("--preset", help="Shipped preset name or path to a preset JSON file.")
    parser.add_argument("--data-dir", type=Path, help="Directory with forecasts.csv and observations.csv.")
    parser.add_argument("--model-dir", type=Path, help="Artifact root (default: CALIB_MODEL_DIR).")
    parser.add_argument("--start", type=date.fromisoformat, help="First valid date (YYYY-MM-DD).")
    parser.add_argument("--end", type=date.fromisoformat, help="Last valid date (YYYY-MM-DD).")


_FLAG_FIELDS = (
    "variable", "method", "family", "preset", "data_dir", "model_dir", "output", "start", "end", "seed",
    "workers", "train_days", "spatial", "days", "stations", "predictions", "report", "min_obs", "nominal",
    "station_filter",
)


def resolve_config(command: str, args: argparse.Namespace) -> RunConfig:
    """Merge the optional JSON config file with the explicitly given flags."""

    values: Dict[str, Any] = {}
    config_path = getattr(args, "config", None)
    if config_path is not None:
        try:
            values.update(json.loads(Path(config_path).read_text(encoding="utf-8")))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {config_path} not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {config_path} is not valid JSON: {exc}") from exc
    for name in _FLAG_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            values[name] = value
    values["command"] = command
    try:
        return RunConfig.model_validate(values)
    except ValidationError as exc:
        raise ConfigError(f"invalid {command} configuration: {exc}") from exc


def invoke(handler: Callable[[RunConfig], int], command: str, args: argparse.Namespace) -> int:
    """Configure logging, resolve the configuration and map failures to exit codes."""

    configure_logging(getattr(args, "log_level", None) or get_settings().log_level)
    try:
        return handler(resolve_config(command, args))
    except ConfigError as exc:
        logging.error("Configuration error: %s", exc)
        return EXIT_CONFIG
    except CalibrationError as exc:
        logging.error("%s failed: %s", command, exc)
        return EXIT_FAILURE


def run_module(
    command: str,
    description: str,
    add_arguments: Callable[[argparse.ArgumentParser], None],
    handler: Callable[[RunConfig], int],
    argv: Optional[Sequence[str]] = None,
) -> int:
    """Stand-alone entry point of one pipeline module."""

    parser = argparse.ArgumentParser(description=description)
    add_arguments(parser)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    return invoke(handler, command, args)


__all__ = [
    "EXIT_OK",
    "EXIT_FAILURE",
    "EXIT_CONFIG",
    "RunConfig",
    "add_common_arguments",
    "add_method_arguments",
    "resolve_config",
    "read_archive",
    "invoke",
    "run_module",
]
