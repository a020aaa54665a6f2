"""Verification scores for ensemble and distributional forecasts.

Probabilistic scores: CRPS (ensemble and closed form), CRPSS, PIT with a
randomized value at the censor point, verification ranks with randomized
ties. Calibration: central-interval coverage and width, KS uniformity of PIT
values, chi-square flatness of rank counts. Point scores: MAE of medians and
RMSE of means.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from calibration.data import ENSEMBLE_COLUMNS, N_MEMBERS
from calibration.distributions import Family, PredictiveDistribution, make_distribution
from common.errors import AlignmentError, ConfigError, DomainError

DEFAULT_NOMINAL = (N_MEMBERS - 1) / (N_MEMBERS + 1)
N_RANKS = N_MEMBERS + 1
HISTOGRAM_BINS = 12
MIN_TEST_SIZE = 20
KS_LEVEL = 0.05
RAW = "raw"
KEY_COLUMNS = ["station", "init_time", "lead_minutes"]
LEAD_BUCKETS = ("00-12h", "12-24h", "24-36h", "36-48h")


# ---------------------------------------------------------------------------
# Case-level scores
# ---------------------------------------------------------------------------


def crps_ensemble(members: np.ndarray, x: np.ndarray | float) -> np.ndarray | float:
    """``E|X - x| - E|X - X'| / 2`` under the empirical law of the members."""

    f = np.asarray(members, dtype=float)
    single = f.ndim == 1
    f = np.atleast_2d(f)
    x = np.asarray(x, dtype=float).reshape(-1, 1)
    k = f.shape[1]
    spread = np.abs(f[:, :, None] - f[:, None, :]).sum(axis=(1, 2)) / (2.0 * k * k)
    value = np.abs(f - x).sum(axis=1) / k - spread
    return float(value[0]) if single else value


def pit(
    dist: PredictiveDistribution, x: np.ndarray | float, rng: Optional[np.random.Generator] = None
) -> np.ndarray | float:
    """CDF at the observation, drawn uniformly on ``[0, F(0)]`` when ``x`` sits on a point mass at 0."""

    rng = rng if rng is not None else np.random.default_rng(0)
    x = np.asarray(x, dtype=float)
    u = np.asarray(dist.cdf(x), dtype=float)
    mass = np.broadcast_to(np.asarray(dist.point_mass(), dtype=float), u.shape)
    at_censor = (x <= 0.0) & (mass > 0.0)
    if np.any(at_censor):
        draws = rng.uniform(0.0, 1.0, size=u.shape) * mass
        u = np.where(at_censor, draws, u)
    return float(u) if u.ndim == 0 else u


def verification_rank(
    members: np.ndarray, x: np.ndarray | float, rng: Optional[np.random.Generator] = None
) -> np.ndarray | int:
    """Rank of ``x`` among the pooled members (1..K+1); ties broken uniformly."""

    rng = rng if rng is not None else np.random.default_rng(0)
    f = np.asarray(members, dtype=float)
    single = f.ndim == 1
    f = np.atleast_2d(f)
    x = np.asarray(x, dtype=float).reshape(-1, 1)
    below = (f < x).sum(axis=1)
    ties = (f == x).sum(axis=1)
    rank = below + 1 + np.floor(rng.uniform(size=len(below)) * (ties + 1)).astype(int)
    return int(rank[0]) if single else rank


def crpss(mean_crps_f: float, mean_crps_ref: float) -> float:
    if not mean_crps_ref > 0.0:
        raise DomainError(f"reference CRPS must be positive, got {mean_crps_ref}")
    return 1.0 - float(mean_crps_f) / float(mean_crps_ref)


def central_interval(dist: PredictiveDistribution, nominal: float = DEFAULT_NOMINAL):
    if not 0.0 < nominal < 1.0:
        raise DomainError(f"nominal coverage must lie in (0, 1), got {nominal}")
    alpha = 1.0 - nominal
    return dist.quantile(alpha / 2.0), dist.quantile(1.0 - alpha / 2.0)


def coverage_and_width(intervals: np.ndarray, observations: np.ndarray) -> Tuple[float, float]:
    """Percentage of observations in the closed intervals and their mean width.

    ``intervals`` is an ``(n, 2)`` array of ``(lower, upper)`` rows.
    """

    bounds = np.asarray(intervals, dtype=float).reshape(-1, 2)
    obs = np.asarray(observations, dtype=float).reshape(-1)
    if len(bounds) != len(obs):
        raise AlignmentError(f"{len(bounds)} intervals for {len(obs)} observations")
    if len(obs) == 0:
        return float("nan"), float("nan")
    inside = (bounds[:, 0] <= obs) & (obs <= bounds[:, 1])
    return 100.0 * float(inside.mean()), float((bounds[:, 1] - bounds[:, 0]).mean())


def point_scores(
    forecasts: PredictiveDistribution | np.ndarray, observations: np.ndarray
) -> Tuple[float, float]:
    """MAE of the medians and RMSE of the means.

    ``forecasts`` is a batch distribution or an ``(n, 11)`` member matrix.
    """

    obs = np.asarray(observations, dtype=float).reshape(-1)
    if isinstance(forecasts, np.ndarray):
        f = np.atleast_2d(forecasts)
        median, mean = np.median(f, axis=1), f.mean(axis=1)
    else:
        median = np.asarray(forecasts.quantile(0.5), dtype=float).reshape(-1)
        mean = np.asarray(forecasts.mean(), dtype=float).reshape(-1)
    if len(median) != len(obs):
        raise AlignmentError(f"{len(median)} forecasts for {len(obs)} observations")
    return float(np.abs(median - obs).mean()), float(np.sqrt(((mean - obs) ** 2).mean()))


def uniformity_test(sample: np.ndarray) -> Tuple[float, float]:
    """One-sample Kolmogorov-Smirnov test of PIT values against U(0, 1)."""

    sample = np.asarray(sample, dtype=float).reshape(-1)
    if len(sample) < MIN_TEST_SIZE:
        raise DomainError(f"uniformity test needs at least {MIN_TEST_SIZE} values, got {len(sample)}")
    result = stats.kstest(sample, "uniform")
    return float(result.statistic), float(result.pvalue)


def rank_histogram(ranks: np.ndarray, n_ranks: int = N_RANKS) -> np.ndarray:
    ranks = np.asarray(ranks, dtype=int).reshape(-1)
    return np.bincount(ranks - 1, minlength=n_ranks)[:n_ranks]


def pit_histogram(values: np.ndarray, bins: int = HISTOGRAM_BINS) -> Tuple[np.ndarray, np.ndarray]:
    counts, edges = np.histogram(np.asarray(values, dtype=float), bins=bins, range=(0.0, 1.0))
    return edges, counts


def rank_uniformity_test(counts: np.ndarray) -> Tuple[float, float]:
    """Chi-square goodness of fit of rank counts to the flat histogram."""

    result = stats.chisquare(np.asarray(counts, dtype=float))
    return float(result.statistic), float(result.pvalue)


def lead_bucket(lead_minutes: np.ndarray) -> np.ndarray:
    index = np.clip(np.asarray(lead_minutes, dtype=int) // 720, 0, len(LEAD_BUCKETS) - 1)
    return np.asarray(LEAD_BUCKETS, dtype=object)[index]


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


@dataclass
class VerificationReport:
    rows: pd.DataFrame
    pit: Dict[str, np.ndarray] = field(default_factory=dict)
    rank_counts: np.ndarray = field(default_factory=lambda: np.zeros(N_RANKS, dtype=int))
    histograms: pd.DataFrame = field(default_factory=pd.DataFrame)
    nominal: float = DEFAULT_NOMINAL
    reference: str = RAW
    uniformity_test: str = "ks"


def _distribution_scores(
    frame: pd.DataFrame, rng: np.random.Generator, nominal: float
) -> pd.DataFrame:
    """Per-case CRPS, PIT, interval, median and mean of a parametric method."""

    out = pd.DataFrame(index=frame.index, columns=["crps", "pit", "lower", "upper", "median", "mean"], dtype=float)
    for family, part in frame.groupby("family", sort=True):
        try:
            family = Family(family)
        except ValueError as exc:
            raise ConfigError(f"unknown family {family!r} in predictions") from exc
        dist = make_distribution(family, part["param1"].to_numpy(float), part["param2"].to_numpy(float))
        obs = part["observation"].to_numpy(float)
        lower, upper = central_interval(dist, nominal)
        out.loc[part.index, "crps"] = np.asarray(dist.crps(obs), dtype=float)
        out.loc[part.index, "pit"] = np.asarray(pit(dist, obs, rng), dtype=float)
        out.loc[part.index, "lower"] = np.asarray(lower, dtype=float)
        out.loc[part.index, "upper"] = np.asarray(upper, dtype=float)
        out.loc[part.index, "median"] = np.asarray(dist.quantile(0.5), dtype=float)
        out.loc[part.index, "mean"] = np.broadcast_to(np.asarray(dist.mean(), dtype=float), len(part))
    return out


def _ensemble_scores(frame: pd.DataFrame, rng: np.random.Generator) -> pd.DataFrame:
    f = frame[list(ENSEMBLE_COLUMNS)].to_numpy(float)
    obs = frame["observation"].to_numpy(float)
    return pd.DataFrame(
        {
            "crps": crps_ensemble(f, obs),
            "rank": verification_rank(f, obs, rng),
            "lower": f.min(axis=1),
            "upper": f.max(axis=1),
            "median": np.median(f, axis=1),
            "mean": f.mean(axis=1),
        },
        index=frame.index,
    )


def _summaries(scores: pd.DataFrame, obs: pd.Series, with_pit: bool) -> dict:
    coverage, width = coverage_and_width(scores[["lower", "upper"]].to_numpy(), obs.to_numpy())
    row = {
        "n_cases": int(len(scores)),
        "mean_crps": float(scores["crps"].mean()),
        "coverage": coverage,
        "mean_width": width,
        "mae_median": float(np.abs(scores["median"] - obs).mean()),
        "rmse_mean": float(np.sqrt(((scores["mean"] - obs) ** 2).mean())),
        "ks_statistic": np.nan,
        "ks_pvalue": np.nan,
    }
    if with_pit and len(scores) >= MIN_TEST_SIZE:
        row["ks_statistic"], row["ks_pvalue"] = uniformity_test(scores["pit"].to_numpy())
    return row


def build_report(
    frame: pd.DataFrame,
    predictions: Mapping[str, pd.DataFrame],
    *,
    reference: str = RAW,
    nominal: float = DEFAULT_NOMINAL,
    min_obs: Optional[float] = None,
    seed: int = 0,
) -> VerificationReport:
    """Score the raw ensemble and every method per lead time.

    ``frame`` holds joined cases (members and observation); each prediction
    frame carries ``station, init_time, lead_minutes, family, param1, param2``.
    Only cases with an observation and a prediction from every method count;
    ``min_obs`` further keeps only observations at or above that value.
    Cases are scored in key order so the report does not depend on row order.
    """

    if reference != RAW and reference not in predictions:
        raise ConfigError(f"reference method {reference!r} is not among {sorted(predictions)}")
    observed = frame["observation"].notna()
    if min_obs is not None:
        observed &= frame["observation"] >= min_obs
    cases = frame[observed].copy()
    for name, pred in predictions.items():
        missing = [c for c in (*KEY_COLUMNS, "family", "param1", "param2") if c not in pred.columns]
        if missing:
            raise ConfigError(f"predictions for {name!r} lack columns {missing}")
        dup = pred.duplicated(subset=KEY_COLUMNS)
        if dup.any():
            raise AlignmentError(f"predictions for {name!r} repeat {int(dup.sum())} case keys")
        keys = pred[KEY_COLUMNS].assign(**{f"_has_{name}": True})
        cases = cases.merge(keys, on=KEY_COLUMNS, how="inner")
    cases = cases.sort_values(KEY_COLUMNS, kind="mergesort").reset_index(drop=True)
    dropped = int(observed.sum()) - len(cases)
    if dropped:
        logging.warning("%d observed cases lack a prediction from some method and are not scored", dropped)

    rng = np.random.default_rng(seed)
    per_method: Dict[str, pd.DataFrame] = {RAW: _ensemble_scores(cases, rng)}
    for name in sorted(predictions):
        pred = predictions[name][[*KEY_COLUMNS, "family", "param1", "param2"]]
        aligned = cases[[*KEY_COLUMNS, "observation"]].merge(pred, on=KEY_COLUMNS, how="left")
        per_method[name] = _distribution_scores(aligned, rng, nominal)

    leads = cases["lead_minutes"].to_numpy()
    obs = cases["observation"]
    rows = []
    for lead in sorted(np.unique(leads)):
        mask = leads == lead
        summaries = {
            name: _summaries(scores[mask], obs[mask], with_pit=name != RAW)
            for name, scores in per_method.items()
        }
        ref_crps = summaries[reference]["mean_crps"]
        for name, summary in summaries.items():
            row = {"lead_minutes": int(lead), "method": name, **summary}
            row["mean_crps_raw"] = summaries[RAW]["mean_crps"]
            row["crpss"] = crpss(summary["mean_crps"], ref_crps) if ref_crps > 0 else np.nan
            rows.append(row)
    columns = [
        "lead_minutes", "method", "n_cases", "mean_crps", "mean_crps_raw", "crpss", "coverage",
        "mean_width", "mae_median", "rmse_mean", "ks_statistic", "ks_pvalue",
    ]
    report_rows = pd.DataFrame(rows, columns=columns)

    buckets = lead_bucket(leads)
    hist_rows = []
    ranks = per_method[RAW]["rank"].to_numpy()
    for bucket in (*LEAD_BUCKETS, "all"):
        mask = np.ones(len(buckets), bool) if bucket == "all" else buckets == bucket
        if not mask.any():
            continue
        for i, count in enumerate(rank_histogram(ranks[mask]), start=1):
            hist_rows.append({"method": RAW, "kind": "rank", "bucket": bucket, "bin": i,
                              "lower": float(i), "upper": float(i), "count": int(count)})
        for name in sorted(predictions):
            edges, counts = pit_histogram(per_method[name]["pit"].to_numpy()[mask])
            for i, count in enumerate(counts, start=1):
                hist_rows.append({"method": name, "kind": "pit", "bucket": bucket, "bin": i,
                                  "lower": float(edges[i - 1]), "upper": float(edges[i]), "count": int(count)})

    return VerificationReport(
        rows=report_rows,
        pit={name: per_method[name]["pit"].to_numpy() for name in predictions},
        rank_counts=rank_histogram(ranks),
        histograms=pd.DataFrame(hist_rows, columns=["method", "kind", "bucket", "bin", "lower", "upper", "count"]),
        nominal=nominal,
        reference=reference,
    )


def summarize_report(rows: pd.DataFrame, nominal: float = DEFAULT_NOMINAL) -> pd.DataFrame:
    """One line per method aggregated over lead times.

    ``crps_pct_raw`` is the case-weighted mean CRPS as a percentage of the raw
    ensemble's; ``coverage_deviation`` the mean absolute gap to the nominal
    coverage in percentage points; ``ks_acceptance`` the share of lead times
    whose PIT passes KS at 5 %; MAE and RMSE differences are taken against raw.
    """

    if rows.empty:
        return pd.DataFrame(
            columns=["method", "n_cases", "crps_pct_raw", "coverage_deviation", "ks_acceptance", "mae_diff", "rmse_diff"]
        )
    raw = rows[rows["method"] == RAW].set_index("lead_minutes")
    out = []
    for method, part in rows.groupby("method", sort=True):
        part = part.set_index("lead_minutes")
        weights = part["n_cases"].astype(float)
        raw_part = raw.reindex(part.index)
        tested = part["ks_pvalue"].dropna()
        out.append(
            {
                "method": method,
                "n_cases": int(weights.sum()),
                "crps_pct_raw": 100.0
                * float((part["mean_crps"] * weights).sum() / (part["mean_crps_raw"] * weights).sum()),
                "coverage_deviation": float((part["coverage"] - 100.0 * (
                    DEFAULT_NOMINAL if method == RAW else nominal)).abs().mean()),
                "ks_acceptance": 100.0 * float((tested > KS_LEVEL).mean()) if len(tested) else np.nan,
                "mae_diff": float((part["mae_median"] - raw_part["mae_median"]).mean()),
                "rmse_diff": float((part["rmse_mean"] - raw_part["rmse_mean"]).mean()),
            }
        )
    return pd.DataFrame(out)


__all__ = [
    "DEFAULT_NOMINAL",
    "RAW",
    "LEAD_BUCKETS",
    "crps_ensemble",
    "pit",
    "verification_rank",
    "crpss",
    "central_interval",
    "coverage_and_width",
    "point_scores",
    "uniformity_test",
    "rank_histogram",
    "pit_histogram",
    "rank_uniformity_test",
    "lead_bucket",
    "VerificationReport",
    "build_report",
    "summarize_report",
]
