"""Apply trained artifacts to ensemble forecasts.

A forecast initialized on day ``d`` uses the models trained for valid date
``d``. Regional models serve every station, including stations that were
not part of the training archive.
"""

from __future__ import annotations

import argparse
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from calibration.data import (
    ENSEMBLE_COLUMNS,
    MINUTES_PER_DAY,
    EnsembleForecast,
    day_index,
    forecast_frame,
    format_timestamps,
    parse_timestamps,
    read_forecast_frame,
)
from calibration.distributions import PredictiveDistribution, make_distribution
from calibration.emos import params_from_document, predict_arrays
from calibration.presets import MethodSpec
from common.errors import ConfigError, InsufficientDataError, NonFiniteParameterError
from pipelines.artifacts import ModelStore
from pipelines.command import (
    EXIT_OK,
    RunConfig,
    add_common_arguments,
    add_method_arguments,
    run_module,
)
from pipelines.methods import TrainedNetwork, aux_forecasts, network_inputs
from pipelines.windows import REGIONAL, date_label, lead_pool, pool_masks

PREDICTION_COLUMNS = ["station", "init_time", "lead_minutes", "family", "param1", "param2", "aux_mlp", "aux_c1d"]
KEY = ["station", "init_time", "lead_minutes"]


@dataclass(frozen=True)
class CalibratedForecast:
    station_id: str
    init_time: int
    lead_minutes: int
    distribution: PredictiveDistribution
    method: str
    aux_mlp: Optional[float] = None
    aux_c1d: Optional[float] = None

    def __post_init__(self) -> None:
        p1, p2 = self.distribution.params
        if not (np.isfinite(p1) and np.isfinite(p2)):
            raise NonFiniteParameterError(
                f"{self.method} produced non-finite parameters for {self.station_id} lead {self.lead_minutes}"
            )


def case_frame(forecasts: pd.DataFrame) -> pd.DataFrame:
    """Forecast rows in key order with integer times and the init day."""

    frame = forecasts.copy()
    frame["station"] = frame["station"].astype(str)
    frame["init_time"] = frame["init_time"].astype("int64")
    frame["lead_minutes"] = frame["lead_minutes"].astype("int64")
    frame["init_day"] = frame["init_time"] // MINUTES_PER_DAY
    return frame.sort_values(KEY, kind="mergesort").reset_index(drop=True)


class Predictor:
    """Prediction for one method from the artifacts under ``store``."""

    def __init__(self, store: ModelStore, spec: MethodSpec) -> None:
        if store.method != spec.name:
            raise ConfigError(f"store holds {store.method}, method is {spec.name}")
        self.store = store
        self.spec = spec
        self._networks: Dict[tuple, TrainedNetwork] = {}

    def scope(self, station: str) -> str:
        return REGIONAL if self.spec.window.spatial == REGIONAL else station

    def _network(self, scope: str, label: str, pool: str) -> TrainedNetwork:
        key = (scope, label, pool)
        if key not in self._networks:
            self._networks[key] = TrainedNetwork.from_document(self.store.load(scope, label, pool))
        return self._networks[key]

    def predict_run(self, forecasts: pd.DataFrame) -> pd.DataFrame:
        """Prediction rows for every forecast case, in key order."""

        frame = case_frame(forecasts)
        out = pd.DataFrame(index=frame.index, columns=["param1", "param2", "aux_mlp", "aux_c1d"], dtype=float)
        scopes = frame["station"].map(self.scope)
        for (scope, day), part in frame.groupby([scopes, "init_day"], sort=True):
            label = date_label(int(day))
            if self.spec.kind == "emos":
                self._emos(part, scope, label, out)
            else:
                self._networks_for(part, scope, label, out)

        result = frame[KEY].copy()
        result["family"] = self.spec.family.value
        for col in ("param1", "param2", "aux_mlp", "aux_c1d"):
            result[col] = out[col].to_numpy(float)
        if not np.all(np.isfinite(result[["param1", "param2"]].to_numpy())):
            raise NonFiniteParameterError(f"{self.spec.name} produced non-finite distribution parameters")
        return result[PREDICTION_COLUMNS]

    def _emos(self, part: pd.DataFrame, scope: str, label: str, out: pd.DataFrame) -> None:
        members = part[list(ENSEMBLE_COLUMNS)].to_numpy(float)
        for lead in sorted(part["lead_minutes"].unique()):
            rows = (part["lead_minutes"] == lead).to_numpy()
            params = params_from_document(self.store.load(scope, label, lead_pool(int(lead))))
            p1, p2 = predict_arrays(params, members[rows])
            out.loc[part.index[rows], "param1"] = p1
            out.loc[part.index[rows], "param2"] = p2

    def _networks_for(self, part: pd.DataFrame, scope: str, label: str, out: pd.DataFrame) -> None:
        aux = None
        if self.spec.kind == "mlpex":
            aux = aux_forecasts(
                part, self._network(scope, label, "aux_mlp"), self._network(scope, label, "aux_c1d")
            )
            if aux.isna().any().any():
                raise InsufficientDataError(
                    f"{label}: every station run needs at least one full slice for the sequence forecaster"
                )
            out.loc[part.index, "aux_mlp"] = aux["aux_mlp"].to_numpy()
            out.loc[part.index, "aux_c1d"] = aux["aux_c1d"].to_numpy()
        for pool, rows in pool_masks(part, "half_day_pooled").items():
            net = self._network(scope, label, pool)
            x = network_inputs(part[rows], net.features, None if aux is None else aux[rows])
            p1, p2 = net.params(x)
            out.loc[part.index[rows], "param1"] = p1
            out.loc[part.index[rows], "param2"] = p2

    def predict(
        self, forecast: EnsembleForecast, *, run: Optional[Sequence[EnsembleForecast]] = None
    ) -> CalibratedForecast:
        """Calibrated distribution of one forecast case.

        MLPex needs the whole ``run`` the case belongs to, since its sequence
        forecaster reads the neighbouring lead times.
        """

        cases = list(run) if run is not None else [forecast]
        if forecast.key not in {f.key for f in cases}:
            cases.append(forecast)
        if self.spec.kind == "mlpex" and run is None:
            raise ConfigError("mlpex prediction needs the full forecast run of the case")
        table = self.predict_run(forecast_frame(cases))
        row = table[
            (table["station"] == forecast.station_id)
            & (table["init_time"] == forecast.init_time)
            & (table["lead_minutes"] == forecast.lead_time)
        ].iloc[0]
        return CalibratedForecast(
            station_id=forecast.station_id,
            init_time=forecast.init_time,
            lead_minutes=forecast.lead_time,
            distribution=make_distribution(self.spec.family, float(row["param1"]), float(row["param2"])),
            method=self.spec.name,
            aux_mlp=None if pd.isna(row["aux_mlp"]) else float(row["aux_mlp"]),
            aux_c1d=None if pd.isna(row["aux_c1d"]) else float(row["aux_c1d"]),
        )


def write_predictions(table: pd.DataFrame, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out = table.copy()
    out["init_time"] = format_timestamps(out["init_time"])
    out.to_csv(path, index=False, encoding="utf-8", na_rep="")
    return path


def read_predictions(path: str | Path) -> pd.DataFrame:
    table = pd.read_csv(path, dtype={"station": str, "family": str}, encoding="utf-8")
    missing = [c for c in PREDICTION_COLUMNS if c not in table.columns]
    if missing:
        raise ConfigError(f"prediction file {path} lacks columns {missing}")
    table["init_time"] = parse_timestamps(table["init_time"]).astype("int64")
    table["lead_minutes"] = table["lead_minutes"].astype("int64")
    return table


def select_forecast_days(
    forecasts: pd.DataFrame, spec: MethodSpec, *, start=None, end=None
) -> pd.DataFrame:
    """Forecasts initialized between ``start`` and ``end``.

    Without ``start`` the first day with a full training window is used.
    """

    frame = case_frame(forecasts)
    if frame.empty:
        return frame
    lo = day_index(start) if start else int(frame["init_day"].min()) + spec.window.train_days
    hi = day_index(end) if end else int(frame["init_day"].max())
    return frame[(frame["init_day"] >= lo) & (frame["init_day"] <= hi)]


def add_arguments(parser: argparse.ArgumentParser) -> None:
    add_common_arguments(parser)
    add_method_arguments(parser)
    parser.add_argument("--spatial", choices=["local", "regional"], help="Estimation scope of the models.")
    parser.add_argument("--output", type=Path, help="Prediction CSV (default: <data-dir>/predictions/<method>.csv).")


def run(cfg: RunConfig) -> int:
    spec = cfg.method_spec()
    path = cfg.data_dir / "forecasts.csv"
    if not path.is_file():
        raise ConfigError(f"{path} does not exist")
    forecasts = select_forecast_days(read_forecast_frame(path), spec, start=cfg.start, end=cfg.end)
    if forecasts.empty:
        raise InsufficientDataError("no forecasts in the requested date range")
    predictor = Predictor(ModelStore(cfg.effective_model_dir, spec.name), spec)
    table = predictor.predict_run(forecasts)
    output = cfg.output or cfg.data_dir / "predictions" / f"{spec.name}.csv"
    write_predictions(table, output)
    logging.info("Wrote %d %s predictions to %s", len(table), spec.name, output)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:  # pragma: no cover
    return run_module("predict", "Calibrated predictions from trained artifacts.", add_arguments, run, argv)


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())


__all__ = [
    "PREDICTION_COLUMNS",
    "CalibratedForecast",
    "Predictor",
    "case_frame",
    "write_predictions",
    "read_predictions",
    "select_forecast_days",
]
