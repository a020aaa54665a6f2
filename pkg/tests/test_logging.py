"""Tests for structured logging helpers."""

from __future__ import annotations

import logging
from datetime import date
from pathlib import Path

import numpy as np

from calibration.data import EnsembleForecast, Observation, Variable, join_cases
from common.logging import EVENT_LOGGER, event_fields, log_event


def test_event_fields_flattens_numeric_and_domain_values() -> None:
    fields = event_fields(
        "TRAIN_MANIFEST",
        {
            "crps": np.float64(0.25),
            "count": np.int64(3),
            "ranks": np.array([1, 2]),
            "variable": Variable.GHI,
            "date": date(2021, 1, 3),
            "path": Path("models/emos_tn"),
            "skipped": {"2021-01-01": ("too few cases",)},
        },
    )

    assert fields == {
        "event": "TRAIN_MANIFEST",
        "crps": 0.25,
        "count": 3,
        "ranks": [1, 2],
        "variable": Variable.GHI.value,
        "date": "2021-01-03",
        "path": "models/emos_tn",
        "skipped": {"2021-01-01": ["too few cases"]},
    }
    assert type(fields["count"]) is int


def test_log_event_uses_the_events_logger(caplog) -> None:
    with caplog.at_level(logging.DEBUG, logger=EVENT_LOGGER):
        log_event("EMOS_FIT", level=logging.DEBUG, loss=np.float32(1.5))

    records = [record for record in caplog.records if record.getMessage() == "EMOS_FIT"]
    assert records, "Expected structured EMOS_FIT log"
    assert records[0].name == EVENT_LOGGER
    assert records[0].levelno == logging.DEBUG
    assert records[0].json_fields == {"event": "EMOS_FIT", "loss": 1.5}


def test_join_reports_its_statistics(caplog) -> None:
    forecast = EnsembleForecast("A", 0, 0, 2.0, tuple(float(i) for i in range(1, 11)))

    with caplog.at_level(logging.INFO, logger=EVENT_LOGGER):
        join_cases([forecast], [Observation("A", 0, 1.0), Observation("A", 60, 2.0)])

    records = [record for record in caplog.records if record.getMessage() == "JOIN_STATS"]
    assert records[0].json_fields["n_complete"] == 1
    assert records[0].json_fields["n_unused_observations"] == 1
