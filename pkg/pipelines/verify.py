"""Score prediction files against the archive and summarize the scores.

``verify`` writes ``report.csv`` (one row per lead time and method),
``histograms.csv`` (rank and PIT counts per lead bucket) and
``summary.csv``. ``report`` rebuilds ``summary.csv`` from an existing
``report.csv``.
"""

from __future__ import annotations

import argparse
import logging
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd

from calibration.verification import DEFAULT_NOMINAL, VerificationReport, build_report, summarize_report
from common.errors import ConfigError, InsufficientDataError
from common.logging import log_event
from pipelines.command import EXIT_OK, RunConfig, add_common_arguments, read_archive, run_module
from pipelines.predict import read_predictions

REPORT_COLUMNS = [
    "lead_minutes", "method", "n_cases", "mean_crps", "mean_crps_raw", "crpss", "coverage",
    "mean_width", "mae_median", "rmse_mean", "ks_statistic", "ks_pvalue",
]


def parse_prediction_args(values: List[str]) -> Dict[str, Path]:
    """``name=path`` pairs; a bare path is named after its file stem."""

    named: Dict[str, Path] = {}
    for value in values:
        name, sep, path = value.partition("=")
        if not sep:
            name, path = Path(value).stem, value
        if not name or not path:
            raise ConfigError(f"cannot read prediction argument {value!r}; use name=path")
        if name in named:
            raise ConfigError(f"prediction name {name!r} given twice")
        named[name] = Path(path)
    return named


def load_predictions(paths: Dict[str, Path]) -> Dict[str, pd.DataFrame]:
    tables = {}
    for name, path in paths.items():
        if not path.is_file():
            raise ConfigError(f"prediction file {path} does not exist")
        tables[name] = read_predictions(path)
    return tables


def write_report(report: VerificationReport, directory: str | Path) -> Dict[str, Path]:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    paths = {
        "report": root / "report.csv",
        "histograms": root / "histograms.csv",
        "summary": root / "summary.csv",
    }
    report.rows.to_csv(paths["report"], index=False, encoding="utf-8")
    report.histograms.to_csv(paths["histograms"], index=False, encoding="utf-8")
    summarize_report(report.rows, report.nominal).to_csv(paths["summary"], index=False, encoding="utf-8")
    return paths


def _log_summary(summary: pd.DataFrame) -> None:
    for row in summary.itertuples(index=False):
        log_event(
            "VERIFY_SUMMARY",
            method=row.method,
            n_cases=int(row.n_cases),
            crps_pct_raw=round(float(row.crps_pct_raw), 3),
            coverage_deviation=round(float(row.coverage_deviation), 3),
        )


def verify(cfg: RunConfig) -> VerificationReport:
    if not cfg.predictions:
        raise ConfigError("verify needs at least one --predictions file")
    dataset = read_archive(cfg)
    frame = dataset.frame
    if cfg.station_filter:
        frame = frame[frame["station"].isin(cfg.station_filter)]
        if frame.empty:
            raise InsufficientDataError(f"no cases for stations {cfg.station_filter}")
    predictions = load_predictions(parse_prediction_args(cfg.predictions))
    return build_report(
        frame,
        predictions,
        nominal=cfg.nominal or DEFAULT_NOMINAL,
        min_obs=cfg.min_obs,
        seed=cfg.effective_seed,
    )


def add_arguments(parser: argparse.ArgumentParser) -> None:
    add_common_arguments(parser)
    parser.add_argument("--variable", help="wind or ghi.")
    parser.add_argument("--data-dir", type=Path, help="Directory with forecasts.csv and observations.csv.")
    parser.add_argument(
        "--predictions", action="append", help="Prediction CSV as name=path or path; repeat per method."
    )
    parser.add_argument("--station", dest="station_filter", action="append", help="Score only this station.")
    parser.add_argument("--min-obs", type=float, help="Score only observations at or above this value.")
    parser.add_argument("--nominal", type=float, help="Nominal central-interval coverage (default: 10/12).")
    parser.add_argument("--output", type=Path, help="Report directory (default: <data-dir>/verification).")


def run(cfg: RunConfig) -> int:
    report = verify(cfg)
    paths = write_report(report, cfg.output or cfg.data_dir / "verification")
    _log_summary(summarize_report(report.rows, report.nominal))
    logging.info("Wrote verification report to %s", paths["report"].parent)
    return EXIT_OK


def add_report_arguments(parser: argparse.ArgumentParser) -> None:
    add_common_arguments(parser)
    parser.add_argument("--report", type=Path, help="report.csv written by verify.")
    parser.add_argument("--nominal", type=float, help="Nominal coverage the methods were scored at.")
    parser.add_argument("--output", type=Path, help="Summary CSV (default: summary.csv next to the report).")


def run_report(cfg: RunConfig) -> int:
    if cfg.report is None:
        raise ConfigError("report needs --report")
    if not cfg.report.is_file():
        raise ConfigError(f"{cfg.report} does not exist")
    rows = pd.read_csv(cfg.report, encoding="utf-8")
    missing = [c for c in REPORT_COLUMNS if c not in rows.columns]
    if missing:
        raise ConfigError(f"{cfg.report} lacks columns {missing}")
    summary = summarize_report(rows, cfg.nominal or DEFAULT_NOMINAL)
    output = cfg.output or cfg.report.with_name("summary.csv")
    output.parent.mkdir(parents=True, exist_ok=True)
    summary.to_csv(output, index=False, encoding="utf-8")
    _log_summary(summary)
    logging.info("Wrote summary of %d methods to %s", len(summary), output)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:  # pragma: no cover
    return run_module("verify", "Score calibrated predictions against observations.", add_arguments, run, argv)


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())


__all__ = ["parse_prediction_args", "load_predictions", "write_report", "verify", "run_report"]
