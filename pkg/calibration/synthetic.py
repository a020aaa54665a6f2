"""Seeded synthetic archives with a known predictive truth.

A latent AR(1) signal per station and valid time drives the true
distribution. Observations are drawn once per (station, valid_time) from
that truth. Ensemble members are draws from the same truth, pulled towards
a possibly distorted centre::

    member_k = h(centre) + bias + error + d * (X_k - centre),   X_k ~ truth

so ``d < 1`` deflates the spread (underdispersion), ``bias`` shifts every
member and ``error`` is a per-case miss of the whole run that grows with lead
time. GHI scenarios follow a clear-sky envelope with exact zeros at night.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy import signal, special

from calibration.data import (
    ENSEMBLE_COLUMNS,
    HORIZON_MINUTES,
    MINUTES_PER_DAY,
    Dataset,
    Station,
    Variable,
    day_index,
    format_timestamps,
    join_frames,
    parse_timestamps,
    write_dataset,
)
from calibration.distributions import SCALE_FLOOR, Family, make_distribution
from common.errors import ConfigError

_DEFAULTS = {
    Variable.WIND_SPEED: {"level": 6.0, "bias": 1.0, "missing_rate": 0.03, "family": Family.TN},
    Variable.GHI: {"level": 800.0, "bias": 40.0, "missing_rate": 0.02, "family": Family.CN0},
}
_CORRELATION_MINUTES = 360.0
_SUNRISE_HOUR, _SUNSET_HOUR = 5.0, 19.0
_NIGHT = (-1.0, SCALE_FLOOR)


class ScenarioConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    variable: Variable = Variable.WIND_SPEED
    n_stations: int = Field(2, ge=1)
    n_days: int = Field(90, ge=1)
    cases_per_day: Optional[int] = None
    start_date: date = date(2021, 1, 1)
    truth_family: Optional[Family] = None
    level: Optional[float] = Field(None, gt=0.0)
    amplitude: float = Field(0.35, ge=0.0)
    spread: float = Field(0.15, gt=0.0)
    spread_variation: float = Field(0.5, ge=0.0)
    bias: Optional[float] = None
    deflation: float = Field(0.5, gt=0.0, le=1.0)
    nonlinearity: float = Field(0.0, ge=0.0, le=1.0)
    forecast_error: float = Field(0.5, ge=0.0)
    control_factor: float = Field(1.0, gt=0.0)
    missing_rate: Optional[float] = Field(None, ge=0.0, lt=1.0)
    seed: int = 0

    def resolved(self) -> "ScenarioConfig":
        """Copy with every per-variable default filled in."""

        defaults = _DEFAULTS[self.variable]
        family = Family(self.truth_family or defaults["family"])
        if self.variable is Variable.GHI and not family.censored:
            raise ConfigError("GHI truth needs a censored family (CN0 or CL0) for exact-zero nights")
        cases = self.cases_per_day or self.variable.default_cases_per_day
        if HORIZON_MINUTES % cases:
            raise ConfigError(f"{cases} cases per run do not divide the {HORIZON_MINUTES}-minute horizon")
        return self.model_copy(
            update={
                "truth_family": family,
                "cases_per_day": cases,
                "level": self.level if self.level is not None else defaults["level"],
                "bias": self.bias if self.bias is not None else defaults["bias"],
                "missing_rate": self.missing_rate if self.missing_rate is not None else defaults["missing_rate"],
            }
        )

    @property
    def cadence(self) -> int:
        return HORIZON_MINUTES // int(self.cases_per_day or self.variable.default_cases_per_day)


@dataclass(frozen=True)
class Scenario:
    config: ScenarioConfig
    dataset: Dataset
    truth: pd.DataFrame


def _latent(rng: np.random.Generator, n: int, cadence: int) -> np.ndarray:
    phi = float(np.exp(-cadence / _CORRELATION_MINUTES))
    noise = rng.standard_normal(n)
    noise[0] /= np.sqrt(1.0 - phi * phi)
    return signal.lfilter([np.sqrt(1.0 - phi * phi)], [1.0, -phi], noise)


def _hour_of_day(times: np.ndarray) -> np.ndarray:
    return (times % MINUTES_PER_DAY) / 60.0


def _truth_params(cfg: ScenarioConfig, times: np.ndarray, z: np.ndarray):
    """Truth parameters ``(p1, p2)`` per valid time plus a daylight mask."""

    hour = _hour_of_day(times)
    level = float(cfg.level)
    if cfg.variable is Variable.WIND_SPEED:
        diurnal = 0.15 * np.sin(2.0 * np.pi * (hour - 8.0) / 24.0)
        centre = level * (1.0 + cfg.amplitude * z + diurnal)
        scale = level * cfg.spread * (1.0 + cfg.spread_variation * np.abs(z))
        if cfg.truth_family is Family.LN:
            return np.maximum(centre, 0.1 * level), scale**2, np.ones(len(times), bool)
        return centre, scale, np.ones(len(times), bool)

    envelope = np.clip(np.sin(np.pi * (hour - _SUNRISE_HOUR) / (_SUNSET_HOUR - _SUNRISE_HOUR)), 0.0, None)
    day = (hour > _SUNRISE_HOUR) & (hour < _SUNSET_HOUR) & (envelope > 0.0)
    clear_sky = level * envelope
    cloud = special.expit(1.0 + 1.5 * z)
    centre = np.where(day, clear_sky * (0.2 + 0.8 * cloud), _NIGHT[0])
    scale = np.where(day, clear_sky * cfg.spread + 1.0, _NIGHT[1])
    return centre, scale, day


def _uniforms(rng: np.random.Generator, shape) -> np.ndarray:
    eps = np.finfo(float).eps
    return rng.uniform(eps, 1.0 - eps, size=shape)


def _distort(cfg: ScenarioConfig, centre: np.ndarray) -> np.ndarray:
    """Forecast centre ``h(c) = c (1 + k (c / level - 1))``; identity when ``k = 0``."""

    return centre * (1.0 + cfg.nonlinearity * (centre / float(cfg.level) - 1.0))


def _station(cfg: ScenarioConfig, station_id: str, rng: np.random.Generator):
    cadence = cfg.cadence
    cases = int(cfg.cases_per_day)
    start = day_index(cfg.start_date) * MINUTES_PER_DAY
    steps_per_day = MINUTES_PER_DAY // cadence
    n_grid = cfg.n_days * steps_per_day + cases
    times = start + cadence * np.arange(n_grid, dtype=np.int64)

    z = _latent(rng, n_grid, cadence)
    p1, p2, day = _truth_params(cfg, times, z)
    truth = make_distribution(cfg.truth_family, p1, p2)
    observed = np.asarray(truth.quantile(_uniforms(rng, n_grid)), dtype=float)
    missing = rng.uniform(size=n_grid) < float(cfg.missing_rate)
    centre = np.asarray(truth.mean(), dtype=float)
    scale = np.sqrt(p2) if cfg.truth_family is Family.LN else p2

    run = np.repeat(np.arange(cfg.n_days), cases)
    lead_index = np.tile(np.arange(cases), cfg.n_days)
    grid = run * steps_per_day + lead_index
    lead = lead_index * cadence

    draws = np.asarray(
        make_distribution(cfg.truth_family, p1[grid][:, None], p2[grid][:, None]).quantile(
            _uniforms(rng, (len(grid), len(ENSEMBLE_COLUMNS)))
        ),
        dtype=float,
    )
    growth = 0.5 + lead / HORIZON_MINUTES
    error = cfg.forecast_error * scale[grid] * growth * rng.standard_normal(len(grid))
    deviation = cfg.deflation * (draws - centre[grid][:, None])
    deviation[:, 0] *= cfg.control_factor
    members = _distort(cfg, centre[grid])[:, None] + float(cfg.bias) + error[:, None] + deviation
    members = np.clip(members, 0.0, None)
    members[~day[grid]] = 0.0

    forecasts = pd.DataFrame(
        {
            "station": station_id,
            "init_time": start + run.astype(np.int64) * MINUTES_PER_DAY,
            "lead_minutes": lead.astype(np.int64),
            **{col: members[:, i] for i, col in enumerate(ENSEMBLE_COLUMNS)},
        }
    )
    observations = pd.DataFrame(
        {"station": station_id, "valid_time": times, "value": np.where(missing, np.nan, observed)}
    )
    truth_frame = pd.DataFrame(
        {
            "station": station_id,
            "valid_time": times,
            "family": cfg.truth_family.value,
            "param1": p1,
            "param2": p2,
        }
    )
    return forecasts, observations, truth_frame


def generate(cfg: ScenarioConfig) -> Scenario:
    """Build the archive and truth record; identical configs give identical output."""

    cfg = cfg.resolved()
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_stations)
    stations: List[Station] = []
    parts: Dict[str, List[pd.DataFrame]] = {"forecasts": [], "observations": [], "truth": []}
    for i, child in enumerate(children, start=1):
        station_id = f"S{i:02d}"
        stations.append(
            Station(station_id=station_id, name=f"synthetic {i}", latitude=47.0 + 0.1 * i, longitude=19.0 + 0.1 * i)
        )
        forecasts, observations, truth = _station(cfg, station_id, np.random.default_rng(child))
        parts["forecasts"].append(forecasts)
        parts["observations"].append(observations)
        parts["truth"].append(truth)

    dataset = join_frames(
        pd.concat(parts["forecasts"], ignore_index=True),
        pd.concat(parts["observations"], ignore_index=True),
        variable=cfg.variable,
        stations=stations,
        cadence=cfg.cadence,
        cases_per_day=int(cfg.cases_per_day),
    )
    truth = pd.concat(parts["truth"], ignore_index=True)
    logging.info(
        "Generated %s scenario: %d stations x %d days, %d cases",
        cfg.variable.value, cfg.n_stations, cfg.n_days, len(dataset),
    )
    return Scenario(config=cfg, dataset=dataset, truth=truth)


def oracle_scores(truth: pd.DataFrame, observations: pd.DataFrame) -> float:
    """Mean CRPS of the true distribution over the observed valid times.

    ``observations`` needs ``station, valid_time`` and ``value`` (or
    ``observation``); missing values are skipped.
    """

    obs = observations.rename(columns={"observation": "value"})
    merged = truth.merge(obs[["station", "valid_time", "value"]], on=["station", "valid_time"], how="inner")
    merged = merged[merged["value"].notna()]
    if merged.empty:
        return float("nan")
    total = 0.0
    for family, part in merged.groupby("family"):
        dist = make_distribution(family, part["param1"].to_numpy(float), part["param2"].to_numpy(float))
        total += float(np.sum(dist.crps(part["value"].to_numpy(float))))
    return total / len(merged)


def write_scenario(scenario: Scenario, directory: str | Path) -> Dict[str, Path]:
    paths = write_dataset(scenario.dataset, directory)
    truth = scenario.truth.copy()
    truth["valid_time"] = format_timestamps(truth["valid_time"])
    paths["truth"] = Path(directory) / "truth.csv"
    truth.to_csv(paths["truth"], index=False, encoding="utf-8")
    return paths


def read_truth(path: str | Path) -> pd.DataFrame:
    truth = pd.read_csv(path, dtype={"station": str, "family": str}, encoding="utf-8")
    truth["valid_time"] = parse_timestamps(truth["valid_time"]).astype("int64")
    return truth


__all__ = ["ScenarioConfig", "Scenario", "generate", "oracle_scores", "write_scenario", "read_truth"]
