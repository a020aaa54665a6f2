"""Configuration helpers for the calibration toolkit.

This module centralizes environment configuration shared by the CLI and the
batch pipelines. Method hyperparameters live in JSON presets (see
:mod:`calibration.presets`); only deployment-level knobs are read here.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional


@dataclass(frozen=True)
class Settings:
    """Runtime configuration loaded from environment variables."""

    workers: int
    model_dir: str
    seed: int
    log_level: str = "INFO"
    git_sha: Optional[str] = None


OPTIONAL_VARS = {
    "CALIB_WORKERS": "Upper bound of the training worker pool.",
    "CALIB_MODEL_DIR": "Root directory of model artifacts.",
    "CALIB_SEED": "Base seed for every randomized step.",
    "CALIB_LOG_LEVEL": "Root logging level name.",
    "GIT_SHA": "Commit recorded in training manifests for provenance.",
}


def _get_env(name: str, default: str = "") -> str:
    value = os.getenv(name)
    return value if value else default


def _get_int(name: str, default: int) -> int:
    raw = _get_env(name)
    if not raw:
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise RuntimeError(f"Environment variable {name} must be an integer, got {raw!r}") from exc


@lru_cache()
def get_settings() -> Settings:
    """Load :class:`Settings` from the environment."""

    workers = _get_int("CALIB_WORKERS", os.cpu_count() or 1)
    if workers < 1:
        raise RuntimeError(f"CALIB_WORKERS must be positive, got {workers}")
    return Settings(
        workers=workers,
        model_dir=_get_env("CALIB_MODEL_DIR", "models"),
        seed=_get_int("CALIB_SEED", 0),
        log_level=_get_env("CALIB_LOG_LEVEL", "INFO").upper(),
        git_sha=os.getenv("GIT_SHA"),
    )


__all__ = ["Settings", "get_settings", "OPTIONAL_VARS"]
