"""End-to-end tests: synthetic archive, rolling-window training, prediction, verification."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from calibration import emos
from calibration.data import ENSEMBLE_COLUMNS, Variable, forecasts_from_frame
from calibration.distributions import make_distribution
from calibration.presets import load_preset
from calibration.synthetic import ScenarioConfig, generate
from calibration.verification import RAW, build_report, crps_ensemble
from common.errors import ConfigError, InsufficientDataError, MissingArtifactError
from pipelines import train as train_module
from pipelines.artifacts import MANIFEST_NAME, ModelStore, artifact_path, file_sha256
from pipelines.predict import Predictor, select_forecast_days
from pipelines.train import train_method
from pipelines.windows import date_label

FAST = {"optimizer": {"max_epochs": 2}}
FAST_OVERRIDES = {name: FAST for name in ("mlp_s", "mlpex", "aux_mlp", "aux_c1d")}


def _dataset(variable: Variable = Variable.WIND_SPEED, n_days: int = 5, stations: int = 2):
    cfg = ScenarioConfig(variable=variable, n_days=n_days, n_stations=stations, cases_per_day=24,
                         missing_rate=0.0, seed=1)
    return generate(cfg).dataset


def _emos_spec(**window):
    return load_preset("wind-default").method_spec("emos", window={"train_days": 3, **window})


def test_emos_artifacts_cover_every_date_station_and_lead(tmp_path: Path) -> None:
    dataset = _dataset()
    spec = _emos_spec()

    result = train_method(dataset, spec, model_dir=tmp_path, seed=0)

    first = dataset.days[0] + 3
    assert result.trained == [date_label(first), date_label(first + 1)]
    assert result.skipped == {}
    assert len(result.manifest["artifacts"]) == 2 * 2 * 24
    assert artifact_path(tmp_path, "emos_tn", "S01", date_label(first), "lead_0120").is_file()
    on_disk = json.loads((tmp_path / "emos_tn" / MANIFEST_NAME).read_text(encoding="utf-8"))
    assert on_disk == result.manifest
    entry = on_disk["artifacts"][0]
    assert entry["sha256"] == file_sha256(tmp_path / entry["path"])


def test_emos_fits_start_from_the_previous_date(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    dataset = _dataset()
    spec = _emos_spec(spatial="regional")
    calls, starts = [], []
    real_fit_many, real_minimize = train_module.fit_many, emos.minimize

    def recording_fit_many(tasks, family, *, inits=None, **kwargs):
        fits = real_fit_many(tasks, family, inits=inits, **kwargs)
        calls.append((dict(inits or {}), fits))
        return fits

    def recording_minimize(fun, x0, *args, **kwargs):
        starts.append(np.array(x0, dtype=float))
        return real_minimize(fun, x0, *args, **kwargs)

    monkeypatch.setattr(train_module, "fit_many", recording_fit_many)
    monkeypatch.setattr(emos, "minimize", recording_minimize)

    train_method(dataset, spec, model_dir=tmp_path, seed=0, workers=1)

    (first_inits, first_fits), (second_inits, _) = calls
    assert first_inits == {}
    assert len(second_inits) == len(first_fits) == 24
    for (day, scope, pool), params in second_inits.items():
        previous = first_fits[(day - 1, scope, pool)].params
        assert params == previous
        assert any(np.array_equal(start, previous.to_vector()) for start in starts)


def test_training_is_reproducible_for_a_seed(tmp_path: Path) -> None:
    dataset = _dataset()
    spec = _emos_spec(spatial="regional")

    first = train_method(dataset, spec, model_dir=tmp_path / "a", seed=3)
    second = train_method(dataset, spec, model_dir=tmp_path / "b", seed=3)

    assert first.manifest["config_hash"] == second.manifest["config_hash"]
    assert [a["sha256"] for a in first.manifest["artifacts"]] == [a["sha256"] for a in second.manifest["artifacts"]]


def test_dates_without_history_are_skipped(tmp_path: Path) -> None:
    dataset = _dataset()
    spec = _emos_spec()

    result = train_method(dataset, spec, model_dir=tmp_path, days=[dataset.days[0]])

    assert result.all_skipped
    assert sorted(result.skipped) == [f"{date_label(dataset.days[0])}/S01", f"{date_label(dataset.days[0])}/S02"]
    assert result.manifest["artifacts"] == []
    with pytest.raises(InsufficientDataError):
        train_method(dataset, load_preset("wind-default").method_spec("emos", window={"train_days": 10}), model_dir=tmp_path)


def test_emos_predictions_verify_against_the_archive(tmp_path: Path) -> None:
    dataset = _dataset()
    spec = _emos_spec(spatial="regional")
    train_method(dataset, spec, model_dir=tmp_path, seed=0)
    predictor = Predictor(ModelStore(tmp_path, spec.name), spec)

    forecasts = select_forecast_days(dataset.frame, spec)
    table = predictor.predict_run(forecasts)

    assert len(table) == 2 * 2 * 24
    assert (table["family"] == "TN").all()
    assert np.isfinite(table[["param1", "param2"]].to_numpy()).all()
    assert (table["param2"] > 0).all()
    report = build_report(dataset.frame, {"emos_tn": table})
    assert set(report.rows["method"]) == {RAW, "emos_tn"}
    assert int(report.rows.query("method == 'emos_tn'")["n_cases"].sum()) == int(
        table.merge(dataset.frame, on=["station", "init_time", "lead_minutes"])["observation"].notna().sum()
    )


def test_prediction_without_artifact_fails(tmp_path: Path) -> None:
    dataset = _dataset()
    spec = _emos_spec(spatial="regional")
    train_method(dataset, spec, model_dir=tmp_path, seed=0)
    predictor = Predictor(ModelStore(tmp_path, spec.name), spec)

    early = dataset.frame[dataset.frame["init_day"] == dataset.days[0]]

    with pytest.raises(MissingArtifactError):
        predictor.predict_run(early)


def test_predictor_rejects_a_store_of_another_method(tmp_path: Path) -> None:
    with pytest.raises(ConfigError):
        Predictor(ModelStore(tmp_path, "emos_ln"), _emos_spec())


def test_regional_mlp_s_for_irradiance(tmp_path: Path) -> None:
    dataset = _dataset(Variable.GHI, n_days=4)
    spec = load_preset("ghi-default", FAST_OVERRIDES).method_spec("mlp_s", window={"train_days": 3})

    result = train_method(dataset, spec, model_dir=tmp_path, seed=0)

    label = date_label(dataset.days[-1])
    assert result.trained == [label]
    for pool in ("h00-24", "h24-48"):
        assert artifact_path(tmp_path, "mlp_s_cn0", "regional", label, pool).is_file()
    table = Predictor(ModelStore(tmp_path, spec.name), spec).predict_run(select_forecast_days(dataset.frame, spec))
    assert (table["family"] == "CN0").all()
    assert np.isfinite(table[["param1", "param2"]].to_numpy()).all()
    assert table["aux_mlp"].isna().all()


def test_mlpex_stores_auxiliary_networks_and_needs_the_run(tmp_path: Path) -> None:
    dataset = _dataset(n_days=3, stations=1)
    spec = load_preset("wind-default", FAST_OVERRIDES).method_spec("mlpex", window={"train_days": 2})
    train_method(dataset, spec, model_dir=tmp_path, seed=0)
    predictor = Predictor(ModelStore(tmp_path, spec.name), spec)
    label = date_label(dataset.days[-1])

    for pool in ("aux_mlp", "aux_c1d", "h00-24", "h24-48"):
        assert artifact_path(tmp_path, "mlpex_tn", "S01", label, pool).is_file()
    run = dataset.frame[dataset.frame["init_day"] == dataset.days[-1]]
    table = predictor.predict_run(run)
    assert table[["aux_mlp", "aux_c1d"]].notna().all().all()

    cases = forecasts_from_frame(run, Variable.WIND_SPEED)
    with pytest.raises(ConfigError):
        predictor.predict(cases[3])
    calibrated = predictor.predict(cases[3], run=cases)
    assert calibrated.method == "mlpex_tn"
    assert calibrated.aux_c1d is not None
    row = table[table["lead_minutes"] == cases[3].lead_time].iloc[0]
    assert calibrated.distribution.params[0] == pytest.approx(row["param1"])


def test_mlpex_prediction_ignores_observations_of_the_predicted_day(tmp_path: Path) -> None:
    dataset = _dataset(n_days=3, stations=1)
    spec = load_preset("wind-default", FAST_OVERRIDES).method_spec("mlpex", window={"train_days": 2})
    train_method(dataset, spec, model_dir=tmp_path, seed=0)
    predictor = Predictor(ModelStore(tmp_path, spec.name), spec)
    run = dataset.frame[dataset.frame["init_day"] == dataset.days[-1]]
    altered = run.copy()
    rng = np.random.default_rng(4)
    altered["observation"] = rng.gamma(2.0, 5.0, size=len(run))
    altered.loc[altered.index[::3], "observation"] = np.nan

    expected = predictor.predict_run(run)
    got = predictor.predict_run(altered)

    columns = ["param1", "param2", "aux_mlp", "aux_c1d"]
    np.testing.assert_array_equal(got[columns].to_numpy(), expected[columns].to_numpy())


RANKING_METHODS = ("emos", "mlp_s", "mlpex")
SMALL_BATCHES = {name: {"optimizer": {"batch_size": 64}} for name in ("mlp_s", "mlpex", "aux_mlp", "aux_c1d")}


def _method_crps(seed: int, model_dir: Path) -> dict:
    """Per-case CRPS of the raw ensemble and each trained method on a nonlinear scenario."""

    dataset = generate(
        ScenarioConfig(n_stations=2, n_days=24, cases_per_day=48, nonlinearity=0.6, missing_rate=0.0, seed=seed)
    ).dataset
    preset = load_preset("wind-default", SMALL_BATCHES)
    scored = None
    for kind in RANKING_METHODS:
        spec = preset.method_spec(kind, window={"train_days": 20, "spatial": "regional"})
        train_method(dataset, spec, model_dir=model_dir, seed=seed)
        table = Predictor(ModelStore(model_dir, spec.name), spec).predict_run(select_forecast_days(dataset.frame, spec))
        table = table[["station", "init_time", "lead_minutes", "family", "param1", "param2"]].rename(
            columns={"family": f"{kind}_family", "param1": f"{kind}_p1", "param2": f"{kind}_p2"}
        )
        base = dataset.frame if scored is None else scored
        scored = base.merge(table, on=["station", "init_time", "lead_minutes"], how="inner")
    scored = scored[scored["observation"].notna()]
    y = scored["observation"].to_numpy()
    scores = {RAW: crps_ensemble(scored[list(ENSEMBLE_COLUMNS)].to_numpy(), y)}
    for kind in RANKING_METHODS:
        family = scored[f"{kind}_family"].iloc[0]
        dist = make_distribution(family, scored[f"{kind}_p1"].to_numpy(), scored[f"{kind}_p2"].to_numpy())
        scores[kind] = np.asarray(dist.crps(y), dtype=float)
    return scores


@pytest.mark.slow
def test_methods_rank_by_crps_on_a_nonlinear_scenario(tmp_path: Path) -> None:
    runs = [_method_crps(seed, tmp_path / f"seed{seed}") for seed in (0, 1, 2)]
    scores = {name: np.concatenate([run[name] for run in runs]) for name in (RAW, *RANKING_METHODS)}
    mean = {name: float(values.mean()) for name, values in scores.items()}
    diff = scores["mlpex"] - scores["mlp_s"]
    standard_error = float(diff.std(ddof=1) / np.sqrt(len(diff)))

    assert mean["mlpex"] <= mean["mlp_s"] + standard_error
    assert mean["mlp_s"] < mean["emos"] < mean[RAW]
