"""Forecast/observation archives: records, CSV ingestion and case joining.

Timestamps are ISO-8601 UTC strings on disk and epoch minutes in memory.
The canonical in-memory archive is :class:`Dataset`, a validated pandas frame
with one row per (station, init_time, lead_minutes) case.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import pandera.pandas as pa
from pandera.pandas import Column

from common.errors import DuplicateKeyError, RecordValidationError, SchemaError
from common.logging import log_event

N_EXCHANGEABLE = 10
N_MEMBERS = N_EXCHANGEABLE + 1
HORIZON_MINUTES = 2880
MINUTES_PER_DAY = 1440
MEMBER_COLUMNS: Tuple[str, ...] = tuple(f"m{i}" for i in range(1, N_EXCHANGEABLE + 1))
ENSEMBLE_COLUMNS: Tuple[str, ...] = ("control",) + MEMBER_COLUMNS
CASE_COLUMNS: Tuple[str, ...] = (
    "station",
    "init_time",
    "lead_minutes",
    "valid_time",
    "init_day",
    *ENSEMBLE_COLUMNS,
    "observation",
)
_TIME_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
_EPOCH = pd.Timestamp("1970-01-01", tz="UTC")


class Variable(str, Enum):
    WIND_SPEED = "wind_speed_mps"
    GHI = "ghi_wm2"

    @property
    def default_cadence(self) -> int:
        return 15 if self is Variable.WIND_SPEED else 30

    @property
    def default_cases_per_day(self) -> int:
        return HORIZON_MINUTES // self.default_cadence

    @classmethod
    def parse(cls, name: str) -> "Variable":
        aliases = {"wind": cls.WIND_SPEED, "wind_speed": cls.WIND_SPEED, "ghi": cls.GHI}
        key = name.strip().lower()
        if key in aliases:
            return aliases[key]
        return cls(key)


# ---------------------------------------------------------------------------
# Time helpers
# ---------------------------------------------------------------------------


def parse_timestamps(values: pd.Series) -> pd.Series:
    """ISO-8601 strings to epoch minutes; unparseable entries become ``NaN``."""

    parsed = pd.to_datetime(values, utc=True, errors="coerce", format="ISO8601")
    minutes = (parsed - _EPOCH) / pd.Timedelta(minutes=1)
    return minutes.astype("float64")


def format_timestamps(minutes: Iterable[int]) -> List[str]:
    return [format_timestamp(int(m)) for m in minutes]


def format_timestamp(minutes: int) -> str:
    return datetime.fromtimestamp(int(minutes) * 60, tz=timezone.utc).strftime(_TIME_FORMAT)


def day_index(value: date) -> int:
    """Days since the epoch for a calendar date (UTC)."""

    return (value - date(1970, 1, 1)).days


def day_to_date(index: int) -> date:
    return date.fromordinal(date(1970, 1, 1).toordinal() + int(index))


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnsembleForecast:
    station_id: str
    init_time: int
    lead_time: int
    control: float
    exchangeable: Tuple[float, ...]
    variable: Variable = Variable.WIND_SPEED

    def __post_init__(self) -> None:
        if len(self.exchangeable) != N_EXCHANGEABLE:
            raise RecordValidationError(
                f"expected {N_EXCHANGEABLE} exchangeable members, got {len(self.exchangeable)}"
            )
        if self.lead_time < 0:
            raise RecordValidationError(f"negative lead time {self.lead_time}")
        if self.control < 0 or min(self.exchangeable) < 0:
            raise RecordValidationError(
                f"negative member in forecast for {self.station_id} at {format_timestamp(self.init_time)}"
            )

    @property
    def members(self) -> np.ndarray:
        return np.asarray((self.control, *self.exchangeable), dtype=float)

    @property
    def valid_time(self) -> int:
        return self.init_time + self.lead_time

    @property
    def key(self) -> Tuple[str, int, int]:
        return (self.station_id, self.init_time, self.lead_time)


@dataclass(frozen=True)
class Observation:
    station_id: str
    valid_time: int
    value: Optional[float]
    variable: Variable = Variable.WIND_SPEED

    def __post_init__(self) -> None:
        if self.value is not None and not (self.value >= 0):
            raise RecordValidationError(
                f"observation {self.value} at {format_timestamp(self.valid_time)} must be non-negative"
            )

    @property
    def is_missing(self) -> bool:
        return self.value is None


@dataclass(frozen=True)
class ForecastCase:
    forecast: EnsembleForecast
    observation: Observation

    def __post_init__(self) -> None:
        if self.forecast.station_id != self.observation.station_id:
            raise RecordValidationError("forecast and observation stations differ")
        if self.forecast.valid_time != self.observation.valid_time:
            raise RecordValidationError("observation is not valid at init_time + lead_time")

    @property
    def is_complete(self) -> bool:
        return not self.observation.is_missing


@dataclass(frozen=True)
class Station:
    station_id: str
    name: str = ""
    latitude: Optional[float] = None
    longitude: Optional[float] = None


@dataclass(frozen=True)
class JoinStats:
    n_forecasts: int
    n_observations: int
    n_complete: int
    n_missing: int
    n_unused_observations: int


# ---------------------------------------------------------------------------
# Column maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ForecastColumns:
    """Maps the canonical forecast fields to the header names of a file."""

    station: str = "station"
    init_time: str = "init_time"
    lead_minutes: str = "lead_minutes"
    control: str = "control"
    members: Tuple[str, ...] = MEMBER_COLUMNS

    def required(self) -> List[str]:
        return [self.station, self.init_time, self.lead_minutes, self.control, *self.members]

    def renames(self) -> dict[str, str]:
        mapping = {
            self.station: "station",
            self.init_time: "init_time",
            self.lead_minutes: "lead_minutes",
            self.control: "control",
        }
        mapping.update(dict(zip(self.members, MEMBER_COLUMNS)))
        return mapping


@dataclass(frozen=True)
class ObservationColumns:
    station: str = "station"
    valid_time: str = "valid_time"
    value: str = "value"

    def required(self) -> List[str]:
        return [self.station, self.valid_time, self.value]

    def renames(self) -> dict[str, str]:
        return {self.station: "station", self.valid_time: "valid_time", self.value: "value"}


_FORECAST_SCHEMA = pa.DataFrameSchema(
    {
        "station": Column(str, nullable=False),
        "init_time": Column("int64"),
        "lead_minutes": Column("int64", checks=pa.Check.ge(0)),
        **{name: Column(float, checks=pa.Check.ge(0.0), nullable=False) for name in ENSEMBLE_COLUMNS},
    },
    coerce=True,
)

_OBSERVATION_SCHEMA = pa.DataFrameSchema(
    {
        "station": Column(str, nullable=False),
        "valid_time": Column("int64"),
        "value": Column(float, checks=pa.Check.ge(0.0), nullable=True),
    },
    coerce=True,
)


def _validate(schema: pa.DataFrameSchema, df: pd.DataFrame, what: str) -> pd.DataFrame:
    try:
        return schema.validate(df, lazy=True)
    except pa.errors.SchemaErrors as exc:
        cases = exc.failure_cases
        rows = [int(i) for i in cases["index"].dropna().tolist()] if "index" in cases else []
        columns = sorted(set(str(c) for c in cases.get("column", pd.Series(dtype=str)).dropna()))
        raise RecordValidationError(
            f"{what}: value constraints violated in columns {columns} at rows {sorted(set(rows))}",
            rows=rows,
        ) from exc


def _read_raw(path: str | Path, required: Sequence[str], what: str) -> pd.DataFrame:
    df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    df.columns = [c.strip() for c in df.columns]
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise SchemaError(f"{what} {path}: missing columns {missing}", missing=missing)
    return df


def _to_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        return float("nan")
    return value if np.isfinite(value) else float("nan")


def _numeric(df: pd.DataFrame, columns: Sequence[str], *, allow_empty: bool = False) -> List[int]:
    """Coerce columns in place; return indices of rows with unparseable cells."""

    bad = np.zeros(len(df), dtype=bool)
    for col in columns:
        text = df[col].str.strip()
        # python's float() parses shortest-repr text back to the identical double
        values = text.map(_to_float).astype("float64")
        failed = values.isna().to_numpy()
        if allow_empty:
            failed &= (text != "").to_numpy()
        bad |= failed
        df[col] = values
    return np.flatnonzero(bad).tolist()


def read_forecast_frame(
    path: str | Path, schema: ForecastColumns = ForecastColumns()
) -> pd.DataFrame:
    """Read and validate a forecast CSV into the canonical forecast frame."""

    raw = _read_raw(path, schema.required(), "forecast file")
    df = raw[schema.required()].rename(columns=schema.renames())
    df["station"] = df["station"].str.strip()
    df["init_time"] = parse_timestamps(df["init_time"])
    bad = set(np.flatnonzero(df["init_time"].isna().to_numpy()).tolist())
    bad.update(_numeric(df, ["lead_minutes", *ENSEMBLE_COLUMNS]))
    if bad:
        raise RecordValidationError(
            f"forecast file {path}: unparseable values at rows {sorted(bad)}", rows=bad
        )
    return _validate(_FORECAST_SCHEMA, df, f"forecast file {path}")


def read_observation_frame(
    path: str | Path, schema: ObservationColumns = ObservationColumns()
) -> pd.DataFrame:
    """Read and validate an observation CSV; empty values become ``NaN`` (missing)."""

    raw = _read_raw(path, schema.required(), "observation file")
    df = raw[schema.required()].rename(columns=schema.renames())
    df["station"] = df["station"].str.strip()
    df["valid_time"] = parse_timestamps(df["valid_time"])
    bad = set(np.flatnonzero(df["valid_time"].isna().to_numpy()).tolist())
    bad.update(_numeric(df, ["value"], allow_empty=True))
    if bad:
        raise RecordValidationError(
            f"observation file {path}: unparseable values at rows {sorted(bad)}", rows=bad
        )
    return _validate(_OBSERVATION_SCHEMA, df, f"observation file {path}")


def parse_forecast_csv(
    path: str | Path,
    schema: ForecastColumns = ForecastColumns(),
    variable: Variable = Variable.WIND_SPEED,
) -> List[EnsembleForecast]:
    df = read_forecast_frame(path, schema)
    return forecasts_from_frame(df, variable)


def parse_observation_csv(
    path: str | Path,
    schema: ObservationColumns = ObservationColumns(),
    variable: Variable = Variable.WIND_SPEED,
) -> List[Observation]:
    df = read_observation_frame(path, schema)
    return [
        Observation(
            station_id=str(station),
            valid_time=int(valid_time),
            value=None if np.isnan(value) else float(value),
            variable=variable,
        )
        for station, valid_time, value in zip(df["station"], df["valid_time"], df["value"])
    ]


def forecasts_from_frame(df: pd.DataFrame, variable: Variable) -> List[EnsembleForecast]:
    members = df[list(ENSEMBLE_COLUMNS)].to_numpy(dtype=float)
    return [
        EnsembleForecast(
            station_id=str(station),
            init_time=int(init),
            lead_time=int(lead),
            control=float(row[0]),
            exchangeable=tuple(float(v) for v in row[1:]),
            variable=variable,
        )
        for station, init, lead, row in zip(df["station"], df["init_time"], df["lead_minutes"], members)
    ]


def forecast_frame(forecasts: Sequence[EnsembleForecast]) -> pd.DataFrame:
    rows = [
        {
            "station": f.station_id,
            "init_time": f.init_time,
            "lead_minutes": f.lead_time,
            **dict(zip(ENSEMBLE_COLUMNS, f.members.tolist())),
        }
        for f in forecasts
    ]
    columns = ["station", "init_time", "lead_minutes", *ENSEMBLE_COLUMNS]
    return pd.DataFrame(rows, columns=columns)


def observation_frame(observations: Sequence[Observation]) -> pd.DataFrame:
    rows = [
        {
            "station": o.station_id,
            "valid_time": o.valid_time,
            "value": np.nan if o.value is None else o.value,
        }
        for o in observations
    ]
    return pd.DataFrame(rows, columns=["station", "valid_time", "value"])


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    """Validated case archive; ``frame`` holds one row per forecast case."""

    frame: pd.DataFrame
    stations: Tuple[Station, ...]
    variable: Variable
    cadence: int
    cases_per_day: int
    join_stats: Optional[JoinStats] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.cases_per_day <= 0 or self.cadence <= 0:
            raise RecordValidationError("cadence and cases_per_day must be positive")
        if self.cases_per_day * self.cadence != HORIZON_MINUTES:
            raise RecordValidationError(
                f"{self.cases_per_day} cases x {self.cadence} min does not span the "
                f"{HORIZON_MINUTES}-minute horizon"
            )

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def station_ids(self) -> List[str]:
        return [s.station_id for s in self.stations]

    @property
    def members(self) -> np.ndarray:
        return self.frame[list(ENSEMBLE_COLUMNS)].to_numpy(dtype=float)

    @property
    def observations(self) -> np.ndarray:
        return self.frame["observation"].to_numpy(dtype=float)

    @property
    def complete_mask(self) -> np.ndarray:
        return ~np.isnan(self.observations)

    @property
    def days(self) -> List[int]:
        return sorted(int(d) for d in self.frame["init_day"].unique())

    def with_frame(self, frame: pd.DataFrame) -> "Dataset":
        return Dataset(
            frame=frame.reset_index(drop=True),
            stations=self.stations,
            variable=self.variable,
            cadence=self.cadence,
            cases_per_day=self.cases_per_day,
        )

    def complete(self) -> "Dataset":
        return self.with_frame(self.frame[self.complete_mask])

    @property
    def cases(self) -> Tuple[ForecastCase, ...]:
        forecasts = forecasts_from_frame(self.frame, self.variable)
        return tuple(
            ForecastCase(
                forecast=f,
                observation=Observation(
                    station_id=f.station_id,
                    valid_time=f.valid_time,
                    value=None if np.isnan(obs) else float(obs),
                    variable=self.variable,
                ),
            )
            for f, obs in zip(forecasts, self.observations)
        )

    def equals(self, other: "Dataset") -> bool:
        return (
            self.stations == other.stations
            and self.variable == other.variable
            and self.cadence == other.cadence
            and self.cases_per_day == other.cases_per_day
            and self.frame.equals(other.frame)
        )

    @classmethod
    def from_cases(
        cls,
        cases: Sequence[ForecastCase],
        *,
        stations: Optional[Sequence[Station]] = None,
        variable: Optional[Variable] = None,
        cadence: Optional[int] = None,
        cases_per_day: Optional[int] = None,
    ) -> "Dataset":
        forecasts = [c.forecast for c in cases]
        unique_obs = {(c.observation.station_id, c.observation.valid_time): c.observation for c in cases}
        obs_rows = observation_frame(list(unique_obs.values()))
        var = variable or (forecasts[0].variable if forecasts else Variable.WIND_SPEED)
        return join_frames(
            forecast_frame(forecasts),
            obs_rows,
            variable=var,
            stations=stations,
            cadence=cadence,
            cases_per_day=cases_per_day,
        )


def _duplicates(df: pd.DataFrame, keys: List[str]) -> List[Tuple[object, ...]]:
    dup = df[df.duplicated(subset=keys, keep=False)]
    return sorted({tuple(row) for row in dup[keys].itertuples(index=False, name=None)})


def join_frames(
    forecasts: pd.DataFrame,
    observations: pd.DataFrame,
    *,
    variable: Variable,
    stations: Optional[Sequence[Station]] = None,
    cadence: Optional[int] = None,
    cases_per_day: Optional[int] = None,
) -> Dataset:
    """Join canonical forecast and observation frames on (station, valid_time)."""

    fkeys = ["station", "init_time", "lead_minutes"]
    dup = _duplicates(forecasts, fkeys)
    if dup:
        raise DuplicateKeyError(f"duplicate forecast keys {dup}", keys=dup)
    obs_dup = _duplicates(observations, ["station", "valid_time"])
    if obs_dup:
        raise DuplicateKeyError(f"duplicate observation keys {obs_dup}", keys=obs_dup)

    frame = forecasts.copy()
    frame["station"] = frame["station"].astype(str)
    frame["init_time"] = frame["init_time"].astype("int64")
    frame["lead_minutes"] = frame["lead_minutes"].astype("int64")
    frame["valid_time"] = frame["init_time"] + frame["lead_minutes"]
    frame["init_day"] = frame["init_time"] // MINUTES_PER_DAY
    obs = observations.rename(columns={"value": "observation"}).copy()
    obs["station"] = obs["station"].astype(str)
    obs["valid_time"] = obs["valid_time"].astype("int64")
    frame = frame.merge(obs, on=["station", "valid_time"], how="left", validate="many_to_one")
    frame["observation"] = frame["observation"].astype("float64")
    for col in ENSEMBLE_COLUMNS:
        frame[col] = frame[col].astype("float64")
    frame = frame[list(CASE_COLUMNS)].sort_values(fkeys, kind="mergesort").reset_index(drop=True)

    n_complete = int(frame["observation"].notna().sum())
    used = frame.loc[frame["observation"].notna(), ["station", "valid_time"]].drop_duplicates()
    stats = JoinStats(
        n_forecasts=len(forecasts),
        n_observations=len(observations),
        n_complete=n_complete,
        n_missing=len(frame) - n_complete,
        n_unused_observations=int(observations["value"].notna().sum()) - len(used),
    )
    log_event("JOIN_STATS", **stats.__dict__)
    if stats.n_missing:
        logging.info("%d of %d cases have no observation", stats.n_missing, len(frame))

    if stations is None:
        stations = [Station(station_id=s, name=s) for s in sorted(frame["station"].unique())]
    return Dataset(
        frame=frame,
        stations=tuple(stations),
        variable=variable,
        cadence=cadence or variable.default_cadence,
        cases_per_day=cases_per_day or variable.default_cases_per_day,
        join_stats=stats,
    )


def join_cases(
    forecasts: Sequence[EnsembleForecast],
    observations: Sequence[Observation],
    *,
    stations: Optional[Sequence[Station]] = None,
    cadence: Optional[int] = None,
    cases_per_day: Optional[int] = None,
) -> Dataset:
    """Inner-join observations onto forecasts; unmatched forecasts keep a missing observation."""

    variable = forecasts[0].variable if forecasts else Variable.WIND_SPEED
    return join_frames(
        forecast_frame(forecasts),
        observation_frame(observations),
        variable=variable,
        stations=stations,
        cadence=cadence,
        cases_per_day=cases_per_day,
    )


# ---------------------------------------------------------------------------
# Writers
# ---------------------------------------------------------------------------


def write_forecast_csv(frame: pd.DataFrame, path: str | Path) -> None:
    out = pd.DataFrame(
        {
            "station": frame["station"].to_numpy(),
            "init_time": format_timestamps(frame["init_time"]),
            "lead_minutes": frame["lead_minutes"].astype("int64").to_numpy(),
        }
    )
    for col in ENSEMBLE_COLUMNS:
        out[col] = frame[col].to_numpy(dtype=float)
    out.to_csv(path, index=False, encoding="utf-8")


def write_observation_csv(frame: pd.DataFrame, path: str | Path) -> None:
    """Write one row per (station, valid_time); missing values are empty cells."""

    obs = (
        frame[["station", "valid_time", "observation"]]
        .drop_duplicates(subset=["station", "valid_time"])
        .sort_values(["station", "valid_time"], kind="mergesort")
    )
    out = pd.DataFrame(
        {
            "station": obs["station"].to_numpy(),
            "valid_time": format_timestamps(obs["valid_time"]),
            "value": obs["observation"].to_numpy(dtype=float),
        }
    )
    out.to_csv(path, index=False, encoding="utf-8", na_rep="")


def write_stations_csv(stations: Sequence[Station], path: str | Path) -> None:
    pd.DataFrame(
        [
            {"station": s.station_id, "name": s.name, "latitude": s.latitude, "longitude": s.longitude}
            for s in stations
        ],
        columns=["station", "name", "latitude", "longitude"],
    ).to_csv(path, index=False, encoding="utf-8", na_rep="")


def read_stations_csv(path: str | Path) -> List[Station]:
    df = pd.read_csv(path, dtype={"station": str, "name": str}, keep_default_na=True, encoding="utf-8")
    missing = [c for c in ("station", "name", "latitude", "longitude") if c not in df.columns]
    if missing:
        raise SchemaError(f"station file {path}: missing columns {missing}", missing=missing)

    def _opt(value: object) -> Optional[float]:
        return None if pd.isna(value) else float(value)  # type: ignore[arg-type]

    return [
        Station(station_id=str(r.station), name="" if pd.isna(r.name) else str(r.name),
                latitude=_opt(r.latitude), longitude=_opt(r.longitude))
        for r in df.itertuples(index=False)
    ]


def write_dataset(dataset: Dataset, directory: str | Path) -> dict[str, Path]:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    paths = {
        "forecasts": root / "forecasts.csv",
        "observations": root / "observations.csv",
        "stations": root / "stations.csv",
    }
    write_forecast_csv(dataset.frame, paths["forecasts"])
    write_observation_csv(dataset.frame, paths["observations"])
    write_stations_csv(dataset.stations, paths["stations"])
    return paths


def load_dataset(
    forecasts: str | Path,
    observations: str | Path,
    *,
    variable: Variable,
    stations: Optional[str | Path] = None,
    cadence: Optional[int] = None,
    cases_per_day: Optional[int] = None,
) -> Dataset:
    station_list = read_stations_csv(stations) if stations and Path(stations).exists() else None
    return join_frames(
        read_forecast_frame(forecasts),
        read_observation_frame(observations),
        variable=variable,
        stations=station_list,
        cadence=cadence,
        cases_per_day=cases_per_day,
    )


def read_dataset(directory: str | Path, *, variable: Variable) -> Dataset:
    root = Path(directory)
    return load_dataset(
        root / "forecasts.csv",
        root / "observations.csv",
        variable=variable,
        stations=root / "stations.csv",
    )


__all__ = [
    "N_MEMBERS",
    "N_EXCHANGEABLE",
    "HORIZON_MINUTES",
    "MINUTES_PER_DAY",
    "MEMBER_COLUMNS",
    "ENSEMBLE_COLUMNS",
    "Variable",
    "EnsembleForecast",
    "Observation",
    "ForecastCase",
    "Station",
    "JoinStats",
    "ForecastColumns",
    "ObservationColumns",
    "Dataset",
    "parse_forecast_csv",
    "parse_observation_csv",
    "read_forecast_frame",
    "read_observation_frame",
    "join_cases",
    "join_frames",
    "write_dataset",
    "read_dataset",
    "load_dataset",
    "format_timestamp",
    "parse_timestamps",
    "day_index",
    "day_to_date",
]
