"""Tests for configuration helpers."""

from __future__ import annotations

import pytest

from common import config


def test_get_settings_defaults() -> None:
    settings = config.get_settings()

    assert settings.workers >= 1
    assert settings.model_dir == "models"
    assert settings.seed == 0
    assert settings.log_level == "INFO"
    assert settings.git_sha is None


def test_get_settings_reads_environment(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("CALIB_WORKERS", "3")
    monkeypatch.setenv("CALIB_MODEL_DIR", "/tmp/artifacts")
    monkeypatch.setenv("CALIB_SEED", "42")
    monkeypatch.setenv("CALIB_LOG_LEVEL", "debug")
    monkeypatch.setenv("GIT_SHA", "abc123")

    settings = config.get_settings()

    assert settings.workers == 3
    assert settings.model_dir == "/tmp/artifacts"
    assert settings.seed == 42
    assert settings.log_level == "DEBUG"
    assert settings.git_sha == "abc123"


@pytest.mark.parametrize("var, value", [("CALIB_WORKERS", "many"), ("CALIB_SEED", "1.5"), ("CALIB_WORKERS", "0")])
def test_get_settings_rejects_bad_values(monkeypatch: pytest.MonkeyPatch, var: str, value: str) -> None:
    monkeypatch.setenv(var, value)

    with pytest.raises(RuntimeError):
        config.get_settings()
