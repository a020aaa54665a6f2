"""Sequence slicing for the convolutional point forecaster.

A per-station series orders the cases of a window by init day and then by
lead time. Training uses overlapping slices; prediction cuts the series
into disjoint slices and stitches the outputs back to one value per case.
"""

from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd

from calibration.data import ENSEMBLE_COLUMNS
from calibration.ensemble_stats import feature_matrix
from calibration.presets import SliceConfig
from common.errors import InsufficientDataError

SERIES_ORDER = ["station", "init_day", "lead_minutes"]


def overlapping_starts(n: int, window_len: int, shift: int) -> np.ndarray:
    if n < window_len:
        raise InsufficientDataError(f"series of length {n} is shorter than the slice length {window_len}")
    count = (n - window_len) // shift + 1
    return np.arange(count, dtype=np.int64) * shift


def disjoint_starts(n: int, window_len: int) -> np.ndarray:
    """Consecutive block starts; a short remainder gets a tail-aligned last block."""

    if n < window_len:
        return np.zeros(0, dtype=np.int64)
    starts = list(range(0, n - window_len + 1, window_len))
    if starts[-1] + window_len < n:
        starts.append(n - window_len)
    return np.asarray(starts, dtype=np.int64)


def _take(series: np.ndarray, starts: np.ndarray, window_len: int) -> np.ndarray:
    index = starts[:, None] + np.arange(window_len)[None, :]
    return np.asarray(series)[index]


def make_overlapping_slices(
    features: np.ndarray, targets: np.ndarray, cfg: SliceConfig
) -> Tuple[np.ndarray, np.ndarray]:
    """``(n_slices, window_len, n_features)`` inputs and matching target slices.

    Slice ``i`` starts at ``i * shift``.
    """

    features = np.asarray(features, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if len(features) != len(targets):
        raise ValueError(f"{len(features)} feature rows but {len(targets)} targets")
    starts = overlapping_starts(len(features), cfg.window_len, cfg.shift)
    return _take(features, starts, cfg.window_len), _take(targets, starts, cfg.window_len)


def make_disjoint_slices(series: np.ndarray, window_len: int) -> List[np.ndarray]:
    series = np.asarray(series)
    return [series[s : s + window_len] for s in disjoint_starts(len(series), window_len)]


def stitch(slice_outputs: np.ndarray, n: int, window_len: int) -> np.ndarray:
    """Map disjoint-slice outputs back to ``n`` points; the earlier slice wins on overlap."""

    out = np.full(n, np.nan)
    for start, values in zip(disjoint_starts(n, window_len), np.asarray(slice_outputs, dtype=float)):
        span = slice(int(start), int(start) + window_len)
        out[span] = np.where(np.isnan(out[span]), values, out[span])
    return out


def station_series(frame: pd.DataFrame) -> List[Tuple[str, pd.DataFrame]]:
    """Per-station case frames in series order."""

    ordered = frame.sort_values(SERIES_ORDER, kind="mergesort")
    return [(str(station), part) for station, part in ordered.groupby("station", sort=True)]


def training_slices(
    frame: pd.DataFrame, features: Sequence[str], cfg: SliceConfig
) -> Tuple[np.ndarray, np.ndarray, int]:
    """Overlapping slices pooled over stations; slices with a missing target are dropped.

    Returns inputs, targets and the number of dropped slices.
    """

    xs, ys, dropped = [], [], 0
    for _, part in station_series(frame):
        if len(part) < cfg.window_len:
            continue
        x = feature_matrix(part[list(ENSEMBLE_COLUMNS)].to_numpy(float), part["lead_minutes"].to_numpy(), features)
        x_sl, y_sl = make_overlapping_slices(x, part["observation"].to_numpy(float), cfg)
        keep = np.all(np.isfinite(y_sl), axis=1)
        dropped += int((~keep).sum())
        xs.append(x_sl[keep])
        ys.append(y_sl[keep])
    if not xs or sum(len(x) for x in xs) == 0:
        raise InsufficientDataError(f"no complete slices of length {cfg.window_len} in the window")
    return np.concatenate(xs), np.concatenate(ys), dropped


__all__ = [
    "SERIES_ORDER",
    "overlapping_starts",
    "disjoint_starts",
    "make_overlapping_slices",
    "make_disjoint_slices",
    "stitch",
    "station_series",
    "training_slices",
]
