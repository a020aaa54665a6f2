"""Summary statistics of the 11-member ensemble.

``S^2`` divides the sum of squared deviations over all 11 members by 10 and
``MD`` is the mean absolute difference over all ordered member pairs.
Vectorized helpers take an ``(n, 11)`` matrix whose first column is the
control member.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np

from calibration.data import N_MEMBERS, EnsembleForecast
from common.errors import ConfigError

FEATURES: Tuple[str, ...] = ("f_ctrl", "f_ens", "f_mean", "s", "s2", "md", "p0", "lead_slot")
_ALIASES = {
    "f_CTRL": "f_ctrl",
    "f̄_ENS": "f_ens",
    "f̄": "f_mean",
    "S": "s",
    "S²": "s2",
    "S2": "s2",
    "MD": "md",
    "p₀": "p0",
}


@dataclass(frozen=True)
class EnsembleSummary:
    mean_all: float
    mean_exch: float
    variance: float
    mean_abs_diff: float
    zero_prop: float
    std_dev: float


def summary_arrays(members: np.ndarray) -> Dict[str, np.ndarray]:
    """Column-wise statistics of an ``(n, 11)`` member matrix."""

    f = np.atleast_2d(np.asarray(members, dtype=float))
    if f.shape[1] != N_MEMBERS:
        raise ValueError(f"expected {N_MEMBERS} members per row, got {f.shape[1]}")
    # identical members give exact zeros (no rounding residue from the mean)
    flat = np.ptp(f, axis=1) == 0.0
    mean_all = np.where(flat, f[:, 0], f.mean(axis=1))
    variance = np.where(flat, 0.0, ((f - mean_all[:, None]) ** 2).sum(axis=1) / (N_MEMBERS - 1))
    md = np.abs(f[:, :, None] - f[:, None, :]).sum(axis=(1, 2)) / N_MEMBERS**2
    return {
        "f_ctrl": f[:, 0],
        "f_ens": np.where(flat, f[:, 0], f[:, 1:].mean(axis=1)),
        "f_mean": mean_all,
        "s2": variance,
        "s": np.sqrt(variance),
        "md": md,
        "p0": (f == 0.0).sum(axis=1) / N_MEMBERS,
    }


def summarize(forecast: EnsembleForecast) -> EnsembleSummary:
    stats = summary_arrays(forecast.members[None, :])
    return EnsembleSummary(
        mean_all=float(stats["f_mean"][0]),
        mean_exch=float(stats["f_ens"][0]),
        variance=float(stats["s2"][0]),
        mean_abs_diff=float(stats["md"][0]),
        zero_prop=float(stats["p0"][0]),
        std_dev=float(stats["s"][0]),
    )


def lead_slot(lead_minutes: np.ndarray | int) -> np.ndarray:
    """Hour index of the forecast horizon, ``floor(lead / 60)``."""

    return np.floor_divide(np.asarray(lead_minutes, dtype=np.int64), 60)


def canonical_features(spec: Sequence[str]) -> Tuple[str, ...]:
    names = []
    for name in spec:
        key = _ALIASES.get(name, name)
        if key not in FEATURES:
            raise ConfigError(f"unknown feature {name!r}; available: {', '.join(FEATURES)}")
        names.append(key)
    return tuple(names)


def feature_matrix(members: np.ndarray, lead_minutes: np.ndarray, spec: Sequence[str]) -> np.ndarray:
    """Features in ``spec`` order for every row of ``members``."""

    names = canonical_features(spec)
    stats = summary_arrays(members)
    columns = []
    for name in names:
        if name == "lead_slot":
            columns.append(lead_slot(lead_minutes).astype(float))
        else:
            columns.append(stats[name])
    return np.column_stack(columns) if columns else np.empty((len(stats["f_mean"]), 0))


def feature_vector(
    forecast: EnsembleForecast, summary: EnsembleSummary, spec: Sequence[str]
) -> np.ndarray:
    values = {
        "f_ctrl": forecast.control,
        "f_ens": summary.mean_exch,
        "f_mean": summary.mean_all,
        "s": summary.std_dev,
        "s2": summary.variance,
        "md": summary.mean_abs_diff,
        "p0": summary.zero_prop,
        "lead_slot": float(lead_slot(forecast.lead_time)),
    }
    return np.asarray([values[name] for name in canonical_features(spec)], dtype=float)


__all__ = [
    "FEATURES",
    "EnsembleSummary",
    "summarize",
    "summary_arrays",
    "feature_vector",
    "feature_matrix",
    "canonical_features",
    "lead_slot",
]
