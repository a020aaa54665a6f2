"""Tests for rolling windows, lead-time pools and sequence slicing."""

from __future__ import annotations

from datetime import date

import numpy as np
import pandas as pd
import pytest

from calibration.data import ENSEMBLE_COLUMNS, Dataset, Variable, day_index, join_frames
from calibration.presets import SliceConfig, WindowConfig
from common.errors import ConfigError, InsufficientDataError
from pipelines.slicing import (
    disjoint_starts,
    make_disjoint_slices,
    make_overlapping_slices,
    overlapping_starts,
    station_series,
    stitch,
    training_slices,
)
from pipelines.windows import check_pool_leads, date_label, half_day_pool, lead_pool, pool_masks, rolling_window, valid_dates

LEADS = (0, 720, 1440, 2160)


def _dataset(days: int = 6, stations=("A", "B"), missing=()) -> Dataset:
    rows, obs = [], []
    for station in stations:
        for day in range(days):
            for lead in LEADS:
                init = day * 1440
                rows.append({"station": station, "init_time": init, "lead_minutes": lead,
                             **{c: 1.0 + day for c in ENSEMBLE_COLUMNS}})
        for t in range(0, (days + 2) * 1440, 720):
            obs.append({"station": station, "valid_time": t,
                        "value": np.nan if (station, t) in missing else float(t % 7)})
    return join_frames(pd.DataFrame(rows), pd.DataFrame(obs), variable=Variable.WIND_SPEED)


def test_local_window_covers_the_previous_days_of_one_station() -> None:
    window = rolling_window(_dataset(), 5, WindowConfig(train_days=3), station="A")

    assert sorted(window.frame["init_day"].unique()) == [2, 3, 4]
    assert set(window.frame["station"]) == {"A"}
    assert len(window) == 3 * len(LEADS)


def test_regional_window_pools_stations() -> None:
    window = rolling_window(_dataset(), 5, WindowConfig(train_days=2, spatial="regional"))

    assert set(window.frame["station"]) == {"A", "B"}
    assert len(window) == 2 * 2 * len(LEADS)


def test_window_drops_cases_without_observation_unless_asked() -> None:
    dataset = _dataset(missing={("A", 3 * 1440)})
    cfg = WindowConfig(train_days=3)

    assert len(rolling_window(dataset, 5, cfg, station="A")) == 3 * len(LEADS) - 2
    assert len(rolling_window(dataset, 5, cfg, station="A", complete_only=False)) == 3 * len(LEADS)


def test_window_before_archive_start_is_insufficient() -> None:
    with pytest.raises(InsufficientDataError):
        rolling_window(_dataset(), 2, WindowConfig(train_days=3), station="A")


def test_unknown_station_window_is_insufficient() -> None:
    with pytest.raises(InsufficientDataError):
        rolling_window(_dataset(), 5, WindowConfig(train_days=3), station="Z")


def test_half_day_pools_split_at_24_hours() -> None:
    assert half_day_pool(np.array([0, 1425, 1440, 2865])).tolist() == ["h00-24", "h00-24", "h24-48", "h24-48"]


def test_pool_masks_partition_rows() -> None:
    frame = _dataset(days=1, stations=("A",)).frame

    half = pool_masks(frame, "half_day_pooled")
    per_lead = pool_masks(frame, "per_lead_time")

    assert sorted(half) == ["h00-24", "h24-48"]
    assert sum(int(m.sum()) for m in half.values()) == len(frame)
    assert sorted(per_lead) == [lead_pool(lead) for lead in LEADS]
    assert lead_pool(15) == "lead_0015"


@pytest.mark.parametrize(
    "pool, leads",
    [("h00-24", [0, 1440]), ("h24-48", [1425]), ("lead_0015", [15])],
)
def test_pool_with_foreign_leads_is_a_configuration_error(pool: str, leads) -> None:
    with pytest.raises(ConfigError):
        check_pool_leads(pool, np.array(leads))


def test_pool_with_its_own_leads_passes() -> None:
    check_pool_leads("h00-24", np.array([0, 720, 1425]))
    check_pool_leads("h24-48", np.array([1440, 2865]))
    check_pool_leads("h24-48", np.array([], dtype=np.int64))


def test_valid_dates_start_after_a_full_window() -> None:
    dataset = _dataset(days=6)
    cfg = WindowConfig(train_days=3)

    assert valid_dates(dataset, cfg) == [3, 4, 5]
    assert valid_dates(dataset, cfg, start=date(1970, 1, 2), end=date(1970, 1, 5)) == [1, 2, 3, 4]


def test_date_labels_are_iso_dates() -> None:
    assert date_label(day_index(date(2021, 3, 1))) == "2021-03-01"
    assert date_label(date(2021, 3, 1)) == "2021-03-01"


@pytest.mark.parametrize("n, window_len, shift, starts", [(16, 12, 4, [0, 4]), (20, 16, 4, [0, 4])])
def test_overlapping_slice_starts(n: int, window_len: int, shift: int, starts) -> None:
    assert overlapping_starts(n, window_len, shift).tolist() == starts


def test_overlapping_slice_count_for_two_days_of_hourly_series() -> None:
    assert len(overlapping_starts(48, 16, 4)) == 9


def test_short_series_cannot_be_sliced() -> None:
    with pytest.raises(InsufficientDataError):
        overlapping_starts(11, 12, 1)


@pytest.mark.parametrize("n, window_len, count", [(192, 16, 12), (96, 12, 8)])
def test_disjoint_slices_cover_a_forecast_run(n: int, window_len: int, count: int) -> None:
    slices = make_disjoint_slices(np.arange(n), window_len)

    assert len(slices) == count
    assert np.concatenate(slices).tolist() == list(range(n))


def test_disjoint_remainder_is_tail_aligned() -> None:
    assert disjoint_starts(10, 4).tolist() == [0, 4, 6]
    assert disjoint_starts(3, 4).tolist() == []


def test_stitch_keeps_the_earlier_slice_on_overlap() -> None:
    outputs = np.array([[0.0] * 4, [1.0] * 4, [2.0] * 4])

    assert stitch(outputs, 10, 4).tolist() == [0, 0, 0, 0, 1, 1, 1, 1, 2, 2]


def test_overlapping_slices_follow_the_series() -> None:
    features = np.arange(20, dtype=float).reshape(10, 2)
    targets = np.arange(10, dtype=float)

    x, y = make_overlapping_slices(features, targets, SliceConfig(window_len=4, shift=3))

    assert x.shape == (3, 4, 2)
    assert y[1].tolist() == [3.0, 4.0, 5.0, 6.0]
    np.testing.assert_array_equal(x[2, 0], features[6])


def test_station_series_orders_by_day_then_lead() -> None:
    frame = _dataset(days=2).frame.sample(frac=1.0, random_state=0)

    series = station_series(frame)

    assert [name for name, _ in series] == ["A", "B"]
    assert series[0][1]["lead_minutes"].tolist() == list(LEADS) * 2


def test_training_slices_drop_slices_with_missing_targets() -> None:
    dataset = _dataset(days=3, stations=("A",), missing={("A", 720)})
    cfg = SliceConfig(window_len=4, shift=2)

    x, y, dropped = training_slices(dataset.frame, ["f_mean", "s"], cfg)

    # 12 cases give starts 0, 2, 4, 6, 8; the case at index 1 sits only in the first slice
    assert dropped == 1
    assert x.shape == (4, 4, 2)
    assert np.isfinite(y).all()
