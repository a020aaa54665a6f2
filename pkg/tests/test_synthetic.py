"""Tests for the synthetic archive generator."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from calibration.data import ENSEMBLE_COLUMNS, Variable, read_dataset
from calibration.synthetic import ScenarioConfig, generate, oracle_scores, read_truth, write_scenario
from calibration.verification import crps_ensemble
from common.errors import ConfigError


def test_same_seed_gives_the_same_archive() -> None:
    cfg = ScenarioConfig(n_days=2, n_stations=2, cases_per_day=24, seed=7)

    first = generate(cfg).dataset.frame
    second = generate(cfg).dataset.frame
    other = generate(cfg.model_copy(update={"seed": 8})).dataset.frame

    pd.testing.assert_frame_equal(first, second)
    assert not np.allclose(first["control"], other["control"])


def test_archive_shape_follows_the_configuration() -> None:
    scenario = generate(ScenarioConfig(n_days=3, n_stations=2, cases_per_day=24, seed=0))
    frame = scenario.dataset.frame

    assert len(frame) == 2 * 3 * 24
    assert sorted(frame["station"].unique()) == ["S01", "S02"]
    assert sorted(frame["lead_minutes"].unique()) == list(range(0, 2880, 120))
    assert scenario.dataset.cadence == 120
    assert (frame[list(ENSEMBLE_COLUMNS)] >= 0.0).all().all()


def test_wind_defaults_resolve_per_variable() -> None:
    cfg = ScenarioConfig().resolved()

    assert cfg.cases_per_day == 192
    assert cfg.cadence == 15
    assert cfg.truth_family.value == "TN"
    assert ScenarioConfig(variable=Variable.GHI).resolved().cases_per_day == 96


def test_ghi_nights_are_exact_zeros() -> None:
    scenario = generate(ScenarioConfig(variable=Variable.GHI, n_days=2, n_stations=1, seed=2))
    frame = scenario.dataset.frame
    hour = (frame["valid_time"] % 1440) / 60.0
    night = (hour < 5.0) | (hour >= 19.0)

    assert night.any()
    assert (frame.loc[night, list(ENSEMBLE_COLUMNS)] == 0.0).all().all()
    observed = frame.loc[night, "observation"].dropna()
    assert (observed == 0.0).all()
    assert frame.loc[~night, "observation"].max() > 100.0


def test_invalid_scenarios_are_rejected() -> None:
    with pytest.raises(ConfigError):
        ScenarioConfig(variable=Variable.GHI, truth_family="TN").resolved()
    with pytest.raises(ConfigError):
        ScenarioConfig(cases_per_day=7).resolved()
    with pytest.raises(ValidationError):
        ScenarioConfig(deflation=1.5)


def test_truth_round_trips_through_csv(tmp_path: Path) -> None:
    scenario = generate(ScenarioConfig(n_days=2, n_stations=1, cases_per_day=24, seed=3))

    paths = write_scenario(scenario, tmp_path)

    assert sorted(paths) == ["forecasts", "observations", "stations", "truth"]
    truth = read_truth(paths["truth"])
    pd.testing.assert_frame_equal(truth, scenario.truth, check_dtype=False)
    dataset = read_dataset(tmp_path, variable=Variable.WIND_SPEED)
    assert len(dataset) == len(scenario.dataset)


def test_oracle_beats_an_underdispersed_ensemble() -> None:
    scenario = generate(ScenarioConfig(n_days=5, n_stations=2, cases_per_day=48, deflation=0.3, seed=5))
    frame = scenario.dataset.frame
    observed = frame[frame["observation"].notna()]

    oracle = oracle_scores(scenario.truth, observed)
    raw = float(np.mean(crps_ensemble(observed[list(ENSEMBLE_COLUMNS)].to_numpy(), observed["observation"].to_numpy())))

    assert np.isfinite(oracle)
    assert oracle < raw
    assert np.isnan(oracle_scores(scenario.truth, observed.iloc[0:0]))
