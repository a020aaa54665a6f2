"""Rolling training windows and lead-time pools."""

from __future__ import annotations

from datetime import date
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from calibration.data import MINUTES_PER_DAY, Dataset, day_index, day_to_date
from calibration.presets import WindowConfig
from common.errors import ConfigError, InsufficientDataError

REGIONAL = "regional"
HALF_DAY_POOLS = ("h00-24", "h24-48")


def as_day(valid_date: date | int) -> int:
    return valid_date if isinstance(valid_date, (int, np.integer)) else day_index(valid_date)


def date_label(valid_date: date | int) -> str:
    return day_to_date(as_day(valid_date)).isoformat()


def scopes(dataset: Dataset, cfg: WindowConfig) -> List[str]:
    """Station ids for local estimation, the single regional scope otherwise."""

    if cfg.spatial == REGIONAL:
        return [REGIONAL]
    return sorted(dataset.frame["station"].unique().tolist())


def rolling_window(
    dataset: Dataset,
    valid_date: date | int,
    cfg: WindowConfig,
    *,
    station: Optional[str] = None,
    complete_only: bool = True,
) -> Dataset:
    """Cases initialized in the ``train_days`` calendar days before ``valid_date``.

    Local windows keep ``station`` only; regional windows pool every station.
    With ``complete_only=False`` cases without an observation are kept, which
    sequence models need to keep their series contiguous.
    """

    day = as_day(valid_date)
    first = day - cfg.train_days
    frame = dataset.frame
    if frame.empty or int(frame["init_day"].min()) > first:
        raise InsufficientDataError(
            f"archive does not cover the {cfg.train_days} days before {date_label(day)}"
        )
    mask = (frame["init_day"] >= first) & (frame["init_day"] < day)
    if cfg.spatial == "local":
        if station is None:
            raise InsufficientDataError("local windows need a station")
        mask &= frame["station"] == station
    if complete_only:
        mask &= frame["observation"].notna()
    window = frame[mask]
    if window.empty:
        where = f" for station {station}" if station and cfg.spatial == "local" else ""
        raise InsufficientDataError(f"no complete cases in the window before {date_label(day)}{where}")
    return dataset.with_frame(window)


def half_day_pool(lead_minutes: np.ndarray | int) -> np.ndarray:
    """``h00-24`` for leads below 24 h, ``h24-48`` otherwise."""

    lead = np.asarray(lead_minutes, dtype=np.int64)
    return np.where(lead < MINUTES_PER_DAY, HALF_DAY_POOLS[0], HALF_DAY_POOLS[1])


def lead_pool(lead_minutes: int) -> str:
    return f"lead_{int(lead_minutes):04d}"


def check_pool_leads(pool: str, lead_minutes: np.ndarray) -> None:
    """Raise ``ConfigError`` when a half-day pool holds leads from the other half."""

    lead = np.asarray(lead_minutes, dtype=np.int64)
    if pool not in HALF_DAY_POOLS:
        raise ConfigError(f"unknown pool {pool!r}; expected one of {list(HALF_DAY_POOLS)}")
    if lead.size and np.any(half_day_pool(lead) != pool):
        raise ConfigError(f"pool {pool} holds lead times {sorted(set(lead.tolist()))[:3]}... outside its half day")


def pool_masks(frame: pd.DataFrame, pooling: str) -> Dict[str, np.ndarray]:
    """Partition of ``frame`` rows into the model pools of a pooling scheme."""

    lead = frame["lead_minutes"].to_numpy(dtype=np.int64)
    if pooling == "half_day_pooled":
        pools = half_day_pool(lead)
        return {name: pools == name for name in HALF_DAY_POOLS if np.any(pools == name)}
    return {lead_pool(value): lead == value for value in sorted(np.unique(lead))}


def valid_dates(
    dataset: Dataset,
    cfg: WindowConfig,
    *,
    start: Optional[date] = None,
    end: Optional[date] = None,
) -> List[int]:
    """Init days of the archive between ``start`` and ``end``.

    Without ``start`` the first day with a full window of history is used;
    an explicit ``start`` is taken as given and short windows fail later.
    """

    days = dataset.days
    if not days:
        return []
    lo = day_index(start) if start else days[0] + cfg.train_days
    hi = day_index(end) if end else days[-1]
    return [d for d in days if lo <= d <= hi]


def select_days(dataset: Dataset, days: Sequence[int]) -> Dataset:
    return dataset.with_frame(dataset.frame[dataset.frame["init_day"].isin(list(days))])


__all__ = [
    "REGIONAL",
    "HALF_DAY_POOLS",
    "as_day",
    "date_label",
    "scopes",
    "rolling_window",
    "half_day_pool",
    "lead_pool",
    "check_pool_leads",
    "pool_masks",
    "valid_dates",
    "select_days",
]
