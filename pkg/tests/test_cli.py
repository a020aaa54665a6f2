"""Tests for the calibrate command line."""

from __future__ import annotations

import json
from pathlib import Path

import pandas as pd
import pytest

from common import config
from pipelines.cli import build_parser, main
from pipelines.command import EXIT_CONFIG, EXIT_FAILURE, EXIT_OK, resolve_config


@pytest.fixture(autouse=True)
def _settings(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    monkeypatch.setenv("CALIB_WORKERS", "1")
    monkeypatch.setenv("CALIB_MODEL_DIR", str(tmp_path / "models"))
    config.get_settings.cache_clear()


def _simulate(tmp_path: Path, days: int = 4) -> Path:
    data = tmp_path / "data"
    cfg = tmp_path / "scenario.json"
    cfg.write_text(json.dumps({"scenario": {"cases_per_day": 24, "missing_rate": 0.0}}), encoding="utf-8")
    code = main(["simulate", "--config", str(cfg), "--days", str(days), "--stations", "2", "--data-dir", str(data)])
    assert code == EXIT_OK
    return data


def test_simulate_writes_the_archive(tmp_path: Path) -> None:
    data = _simulate(tmp_path)

    for name in ("forecasts.csv", "observations.csv", "stations.csv", "truth.csv"):
        assert (data / name).is_file()
    assert len(pd.read_csv(data / "forecasts.csv")) == 4 * 2 * 24


def test_train_predict_verify_report(tmp_path: Path) -> None:
    data = _simulate(tmp_path)
    method = ["--variable", "wind", "--method", "emos", "--data-dir", str(data), "--spatial", "regional"]

    assert main(["train", *method, "--train-days", "2"]) == EXIT_OK
    manifest = json.loads((tmp_path / "models" / "emos_tn" / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["valid_dates"] == ["2021-01-03", "2021-01-04"]

    assert main(["predict", *method, "--start", "2021-01-03"]) == EXIT_OK
    predictions = data / "predictions" / "emos_tn.csv"
    assert predictions.is_file()

    out = tmp_path / "verification"
    assert main(["verify", "--data-dir", str(data), "--predictions", f"emos={predictions}", "--output", str(out)]) == EXIT_OK
    report = pd.read_csv(out / "report.csv")
    assert set(report["method"]) == {"raw", "emos"}
    assert (out / "histograms.csv").is_file()

    summary = tmp_path / "summary.csv"
    assert main(["report", "--report", str(out / "report.csv"), "--output", str(summary)]) == EXIT_OK
    assert set(pd.read_csv(summary)["method"]) == {"raw", "emos"}


def test_training_with_no_history_exits_with_failure(tmp_path: Path) -> None:
    data = _simulate(tmp_path, days=3)

    code = main(["train", "--variable", "wind", "--data-dir", str(data), "--start", "2021-01-01", "--end", "2021-01-01"])

    assert code == EXIT_FAILURE


@pytest.mark.parametrize(
    "argv",
    [
        ["simulate", "--variable", "snow"],
        ["train", "--method", "qrf"],
        ["train", "--unknown-flag"],
        ["train", "--family", "CN0", "--variable", "wind"],
        ["verify"],
        ["report", "--report", "absent.csv"],
    ],
)
def test_configuration_errors_exit_with_2(tmp_path: Path, argv) -> None:
    extra = ["--data-dir", str(tmp_path)] if argv[0] == "train" else []

    assert main([*argv, *extra]) == EXIT_CONFIG


def test_missing_archive_is_a_configuration_error(tmp_path: Path) -> None:
    assert main(["train", "--data-dir", str(tmp_path / "absent")]) == EXIT_CONFIG


def test_flags_override_the_config_file(tmp_path: Path) -> None:
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"method": "mlp_s", "train_days": 9, "seed": 4}), encoding="utf-8")
    args = build_parser().parse_args(["train", "--config", str(path), "--train-days", "5"])

    cfg = resolve_config("train", args)

    assert cfg.method == "mlp_s"
    assert cfg.train_days == 5
    assert cfg.effective_seed == 4
    assert cfg.effective_workers == 1
    assert cfg.effective_model_dir == tmp_path / "models"
