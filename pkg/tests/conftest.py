"""Test configuration for pytest."""

from __future__ import annotations

import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from common.config import OPTIONAL_VARS, get_settings  # noqa: E402


def pytest_configure(config: pytest.Config) -> None:
    config.addinivalue_line("markers", "slow: Monte Carlo checks on large synthetic archives")


@pytest.fixture(autouse=True)
def _isolated_settings(monkeypatch: pytest.MonkeyPatch):
    """Every test starts from default settings and local logging."""
    for var in OPTIONAL_VARS:
        monkeypatch.delenv(var, raising=False)
    monkeypatch.delenv("ENV", raising=False)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()
