"""Tests for EMOS links, minimum-CRPS fitting and parameter documents."""

from __future__ import annotations

import logging

import numpy as np
import pytest

from calibration import emos
from calibration.data import EnsembleForecast
from calibration.distributions import CensoredLogistic, Family, TruncNormal
from calibration.emos import (
    CensoredEmosParams,
    LnEmosParams,
    TnEmosParams,
    censored_link,
    default_params,
    fit_emos_arrays,
    fit_many,
    link,
    mean_crps,
    params_from_document,
    params_to_document,
    predict_arrays,
    task_seed,
)
from calibration.ensemble_stats import summarize
from common.errors import ConfigError, InsufficientDataError, NonFiniteParameterError


def _window(n: int = 300, seed: int = 1, zero_rate: float = 0.0):
    rng = np.random.default_rng(seed)
    truth = rng.gamma(3.0, 1.5, size=n)
    members = np.clip(truth[:, None] * 0.8 + rng.normal(0.0, 0.4, size=(n, 11)) + 0.5, 0.0, None)
    if zero_rate:
        members[rng.uniform(size=n) < zero_rate] = 0.0
    observations = np.clip(truth + rng.normal(0.0, 1.0, size=n), 0.0, None)
    return members, observations


@pytest.mark.parametrize("family", list(Family))
def test_fit_does_not_increase_mean_crps(family: Family) -> None:
    members, observations = _window(zero_rate=0.2 if family.censored else 0.0)
    start = default_params(family, observations)

    fit = fit_emos_arrays(members, observations, family, start, seed=3)

    assert fit.params.family is family
    assert fit.diagnostics.mean_crps <= fit.diagnostics.initial_crps + 1e-12
    assert fit.diagnostics.mean_crps == pytest.approx(mean_crps(fit.params, members, observations))
    assert fit.diagnostics.n_cases == len(observations)


def test_fit_beats_the_identity_start_on_biased_ensembles() -> None:
    members, observations = _window()

    fit = fit_emos_arrays(members, observations, Family.TN, seed=0)
    identity = mean_crps(default_params(Family.TN, observations), members, observations)

    assert fit.diagnostics.mean_crps < identity


def test_fitted_squared_coefficients_are_reported_non_negative() -> None:
    members, observations = _window(seed=7)

    params = fit_emos_arrays(members, observations, Family.LN, seed=0).params

    assert isinstance(params, LnEmosParams)
    assert min(params.alpha_ctrl, params.alpha_ens, params.beta0, params.beta1) >= 0.0


def test_missing_observations_are_ignored() -> None:
    members, observations = _window(n=60)
    holes = observations.copy()
    holes[::3] = np.nan

    fit = fit_emos_arrays(members, holes, Family.TN)

    assert fit.diagnostics.n_cases == 40


def test_fewer_than_two_cases_is_insufficient() -> None:
    members, observations = _window(n=3)
    observations[1:] = np.nan

    with pytest.raises(InsufficientDataError):
        fit_emos_arrays(members, observations, Family.CN0)


def test_initial_parameters_must_match_the_family() -> None:
    members, observations = _window(n=20)

    with pytest.raises(ConfigError):
        fit_emos_arrays(members, observations, Family.LN, TnEmosParams())


def test_flat_ensembles_matching_observations_are_degenerate() -> None:
    values = np.linspace(0.5, 4.0, 12)
    members = np.repeat(values[:, None], 11, axis=1)

    fit = fit_emos_arrays(members, values, Family.TN)

    assert fit.diagnostics.degenerate
    assert fit.diagnostics.mean_crps == pytest.approx(0.0, abs=1e-6)


@pytest.mark.parametrize(
    "family, theta",
    [
        (Family.TN, [0.3, 0.9, 0.4, 0.8, 0.5]),
        (Family.LN, [0.5, 0.9, 0.4, 0.8, 0.5]),
        (Family.CL0, [0.1, 0.7, 0.2, -0.5, 0.2, 0.3]),
        (Family.CN0, [0.1, 0.7, 0.2, -0.5, 0.2, 0.3]),
    ],
)
def test_objective_gradient_matches_finite_differences(family: Family, theta) -> None:
    members, observations = _window(n=80, seed=4, zero_rate=0.1 if family.censored else 0.0)
    x = emos.EmosPredictors.from_members(members)
    objective = emos._OBJECTIVES[family]
    theta = np.asarray(theta, dtype=float)

    _, grad = objective(theta, x, observations)

    h = 1e-6
    for i in range(len(theta)):
        step = np.zeros_like(theta)
        step[i] = h
        numeric = (objective(theta + step, x, observations)[0] - objective(theta - step, x, observations)[0]) / (2 * h)
        assert grad[i] == pytest.approx(numeric, rel=1e-4, abs=1e-6)


def test_tn_link_uses_squared_coefficients() -> None:
    forecast = EnsembleForecast("A", 0, 0, 2.0, (2.0,) * 10)
    params = TnEmosParams(a0=1.0, a_ctrl=-2.0, a_ens=0.0, b0=0.5, b1=3.0)

    dist = link(params, summarize(forecast), forecast.control)

    assert isinstance(dist, TruncNormal)
    assert dist.location == pytest.approx(9.0)
    assert dist.scale == pytest.approx(0.5)


def test_ln_link_rejects_non_positive_mean() -> None:
    forecast = EnsembleForecast("A", 0, 0, 0.0, (0.0,) * 10)

    with pytest.raises(NonFiniteParameterError):
        link(LnEmosParams(alpha0=-1.0), summarize(forecast), 0.0)


def test_censored_link_floors_zero_spread() -> None:
    forecast = EnsembleForecast("A", 0, 0, 3.0, (3.0,) * 10)
    params = CensoredEmosParams(0.0, 1.0, 0.0, 0.0, 0.0, 0.5, family=Family.CL0)

    dist = censored_link(params, summarize(forecast), forecast.control)

    assert isinstance(dist, CensoredLogistic)
    assert dist.scale == pytest.approx(np.sqrt(emos.S2_FLOOR))


def test_zero_spread_is_reported(caplog) -> None:
    forecast = EnsembleForecast("A", 0, 0, 3.0, (3.0,) * 10)
    params = CensoredEmosParams(0.0, 1.0, 0.0, 0.0, 0.0, 0.5, family=Family.CN0)
    members, observations = _window(n=120, zero_rate=0.3)

    with caplog.at_level(logging.INFO):
        censored_link(params, summarize(forecast), forecast.control)
        fit = fit_emos_arrays(members, observations, Family.CN0, seed=0)

    messages = [record.getMessage() for record in caplog.records if record.levelno == logging.INFO]
    assert any("Zero ensemble spread" in m for m in messages)
    assert any("zero ensemble spread" in m for m in messages)
    assert fit.diagnostics.zero_spread_cases >= int(np.sum(np.all(members == 0.0, axis=1)))
    assert fit.diagnostics.zero_spread_cases > 0


def test_predict_arrays_floors_non_positive_log_normal_means() -> None:
    members = np.zeros((2, 11))

    m, v = predict_arrays(LnEmosParams(alpha0=-1.0, beta0=1.0), members)

    np.testing.assert_allclose(m, emos.LN_MEAN_FLOOR)
    np.testing.assert_allclose(v, 1.0)


def test_document_restores_parameters() -> None:
    members, observations = _window(n=50)
    fit = fit_emos_arrays(members, observations, Family.CL0)

    document = params_to_document(fit, scope="S01", lead_minutes=90, valid_date="2021-03-01")

    assert document["family"] == "CL0"
    assert document["lead_minutes"] == 90
    assert params_from_document(document) == fit.params


def test_document_version_is_checked() -> None:
    document = params_to_document(TnEmosParams(), scope="regional", lead_minutes=0, valid_date="2021-01-01")
    document["version"] = 99

    with pytest.raises(ConfigError):
        params_from_document(document)


def test_fit_many_is_deterministic_and_skips_short_windows() -> None:
    members, observations = _window(n=40)
    tasks = {
        ("2021-01-02", "lead_0000"): (members, observations),
        ("2021-01-02", "lead_0015"): (members[:1], observations[:1]),
    }

    first = fit_many(tasks, Family.TN, seed=5)
    second = fit_many(tasks, Family.TN, seed=5)

    assert first[("2021-01-02", "lead_0015")] is None
    assert first[("2021-01-02", "lead_0000")].params == second[("2021-01-02", "lead_0000")].params


def test_task_seed_depends_on_key_not_order() -> None:
    assert task_seed(1, ("a", 2)) == task_seed(1, ("a", 2))
    assert task_seed(1, ("a", 2)) != task_seed(1, ("a", 3))
    assert task_seed(1, ("a", 2)) != task_seed(2, ("a", 2))
