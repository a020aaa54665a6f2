"""Logging setup and structured run events for the calibration toolkit."""

from __future__ import annotations

import datetime as dt
import enum
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import numpy as np

_DEFAULT_FORMAT = "%(asctime)s %(levelname)s [%(name)s] %(message)s"
EVENT_LOGGER = "calibration.events"


def configure_logging(level: int | str = logging.INFO, *, fmt: Optional[str] = None) -> None:
    """Configure root logging for a CLI run.

    With ``ENV=production`` records go through the Google Cloud Logging
    handler so ``json_fields`` become queryable payloads. Everywhere else a
    plain stdout handler replaces whatever was installed before.
    """
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            level = logging.INFO
    if os.getenv("ENV") == "production":
        try:
            import google.cloud.logging

            client = google.cloud.logging.Client()
            client.setup_logging(log_level=level)
            logging.getLogger(__name__).info("Cloud Logging handler installed")
            return
        except ImportError:
            logging.getLogger(__name__).info("google-cloud-logging not installed; using stdout")

    logging.basicConfig(
        level=level,
        format=fmt or _DEFAULT_FORMAT,
        stream=sys.stdout,
        force=True,
    )


def _plain(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, (dt.date, dt.datetime)):
        return value.isoformat()
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, Mapping):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set)):
        return [_plain(v) for v in value]
    return value


def event_fields(event: str, fields: Mapping[str, Any]) -> Dict[str, Any]:
    """JSON-ready payload of an event: numpy scalars, enums, dates and paths flattened."""
    payload = {key: _plain(value) for key, value in fields.items()}
    payload["event"] = event
    return payload


def log_event(event: str, *, level: int = logging.INFO, **fields: Any) -> None:
    """Emit ``event`` on the events logger with ``fields`` as ``json_fields``."""
    logging.getLogger(EVENT_LOGGER).log(level, event, extra={"json_fields": event_fields(event, fields)})


__all__ = ["configure_logging", "log_event", "event_fields", "EVENT_LOGGER"]
