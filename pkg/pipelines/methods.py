"""Training of the network methods on one rolling window.

MLP-S fits one distributional network per half-day pool. MLPex first
trains the two auxiliary point forecasters on the whole window, runs them
back over the window to get in-sample corrected forecasts, and then fits
its half-day networks on the MLP-S features extended by those forecasts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict
from sklearn.preprocessing import StandardScaler

from calibration.data import ENSEMBLE_COLUMNS
from calibration.distributions import Family
from calibration.emos import task_seed
from calibration.ensemble_stats import feature_matrix
from calibration.neuralnet import History, Loss, Network, OutputHead, build, from_document, initialize_output, train
from calibration.presets import AUX_FEATURES, MethodSpec, NetworkConfig
from common.errors import ConfigError, InsufficientDataError
from pipelines.slicing import make_disjoint_slices, station_series, stitch, training_slices
from pipelines.windows import HALF_DAY_POOLS, check_pool_leads, pool_masks

DOCUMENT_VERSION = 1
MIN_TRAINING_ROWS = 2
Role = Literal["mlp_s", "mlpex", "aux_mlp", "aux_c1d"]


class NetworkArtifact(BaseModel):
    model_config = ConfigDict(extra="forbid")

    version: int = DOCUMENT_VERSION
    kind: Literal["trained_network"] = "trained_network"
    role: Role
    method: str
    scope: str
    valid_date: str
    pool: str
    family: Optional[Family] = None
    features: List[str]
    scaler_mean: List[float]
    scaler_scale: List[float]
    target_scale: float
    window_len: Optional[int] = None
    history: Dict[str, Any] = {}
    network: Dict[str, Any]


def _fit_scaler(x: np.ndarray) -> StandardScaler:
    return StandardScaler().fit(x.reshape(-1, x.shape[-1]))


def _scaler_from(mean: List[float], scale: List[float]) -> StandardScaler:
    scaler = StandardScaler()
    scaler.mean_ = np.asarray(mean, dtype=float)
    scaler.scale_ = np.asarray(scale, dtype=float)
    scaler.var_ = scaler.scale_**2
    scaler.n_features_in_ = len(mean)
    scaler.n_samples_seen_ = 0
    return scaler


def _transform(scaler: StandardScaler, x: np.ndarray) -> np.ndarray:
    shape = x.shape
    return scaler.transform(x.reshape(-1, shape[-1])).reshape(shape)


def target_scale(targets: np.ndarray) -> float:
    """Root mean square of the finite targets, 1 when they are all zero."""

    y = np.asarray(targets, dtype=float)
    y = y[np.isfinite(y)]
    rms = float(np.sqrt(np.mean(y * y))) if len(y) else 0.0
    return rms if rms > 0.0 else 1.0


@dataclass
class TrainedNetwork:
    role: str
    network: Network
    features: List[str]
    scaler: StandardScaler
    target_scale: float
    family: Optional[Family] = None
    window_len: Optional[int] = None
    history: Optional[History] = None

    def _raw(self, x: np.ndarray) -> np.ndarray:
        return self.network.forward(_transform(self.scaler, np.asarray(x, dtype=float)))

    def point(self, x: np.ndarray) -> np.ndarray:
        """Point forecasts in observation units; one column per output."""

        return self._raw(x) * self.target_scale

    def params(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Distribution parameters in observation units."""

        p1, p2 = self.network.predict_params(_transform(self.scaler, np.asarray(x, dtype=float)))
        s = self.target_scale
        if self.family is Family.LN:
            return p1 * s, p2 * s * s
        return p1 * s, p2 * s

    def to_document(self, *, method: str, scope: str, valid_date: str, pool: str) -> dict:
        history = {}
        if self.history is not None:
            history = {
                "epochs": self.history.epochs,
                "best_epoch": self.history.best_epoch,
                "stopped_early": self.history.stopped_early,
                "final_train_loss": self.history.train_loss[-1],
                "final_val_loss": self.history.val_loss[-1],
            }
        return NetworkArtifact(
            role=self.role,
            method=method,
            scope=scope,
            valid_date=valid_date,
            pool=pool,
            family=self.family,
            features=list(self.features),
            scaler_mean=self.scaler.mean_.tolist(),
            scaler_scale=self.scaler.scale_.tolist(),
            target_scale=self.target_scale,
            window_len=self.window_len,
            history=history,
            network=self.network.to_document(),
        ).model_dump(mode="json")

    @classmethod
    def from_document(cls, document: Mapping[str, Any]) -> "TrainedNetwork":
        doc = NetworkArtifact.model_validate(document)
        if doc.version != DOCUMENT_VERSION:
            raise ConfigError(f"unsupported network artifact version {doc.version}")
        return cls(
            role=doc.role,
            network=from_document(doc.network),
            features=doc.features,
            scaler=_scaler_from(doc.scaler_mean, doc.scaler_scale),
            target_scale=doc.target_scale,
            family=doc.family,
            window_len=doc.window_len,
        )


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------


def base_features(frame: pd.DataFrame, names: List[str]) -> np.ndarray:
    return feature_matrix(
        frame[list(ENSEMBLE_COLUMNS)].to_numpy(float), frame["lead_minutes"].to_numpy(), names
    )


def network_inputs(
    frame: pd.DataFrame, features: Sequence[str], aux: Optional[pd.DataFrame] = None
) -> np.ndarray:
    """Input matrix in ``features`` order; aux columns come from ``aux``."""

    base = base_features(frame, [f for f in features if f not in AUX_FEATURES])
    columns, k = [], 0
    for name in features:
        if name in AUX_FEATURES:
            if aux is None or name not in aux:
                raise ConfigError(f"feature {name!r} needs the auxiliary forecasts")
            columns.append(aux[name].to_numpy(float))
        else:
            columns.append(base[:, k])
            k += 1
    return np.column_stack(columns)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _fit(
    role: str,
    cfg: NetworkConfig,
    head: OutputHead,
    loss: Loss,
    x: np.ndarray,
    y: np.ndarray,
    *,
    seed: int,
    family: Optional[Family] = None,
    window_len: Optional[int] = None,
    name: str,
) -> TrainedNetwork:
    finite = np.all(np.isfinite(y.reshape(len(y), -1)), axis=1)
    if int(finite.sum()) < MIN_TRAINING_ROWS:
        raise InsufficientDataError(f"{name}: {int(finite.sum())} rows with an observed target")
    scaler = _fit_scaler(x)
    scale = target_scale(y)
    xs, ys = _transform(scaler, x), y / scale
    net = build(cfg.layers, head, xs.shape[1:], seed=seed)
    initialize_output(net, ys[finite])
    net, history = train(net, xs, ys, cfg.optimizer.model_copy(update={"seed": seed}), loss, name=name)
    return TrainedNetwork(
        role=role,
        network=net,
        features=list(cfg.features),
        scaler=scaler,
        target_scale=scale,
        family=family,
        window_len=window_len,
        history=history,
    )


def train_mlpaux(frame: pd.DataFrame, spec: MethodSpec, *, seed: int = 0) -> TrainedNetwork:
    """Point forecaster on every window case; missing targets are skipped."""

    cfg = _require(spec.aux_mlp, "aux_mlp")
    return _fit(
        "aux_mlp", cfg, OutputHead.POINT, cfg.loss or Loss.MAE,
        base_features(frame, cfg.base_features),
        frame["observation"].to_numpy(float)[:, None],
        seed=task_seed(seed, "aux_mlp"), name="aux_mlp",
    )


def train_c1daux(frame: pd.DataFrame, spec: MethodSpec, *, seed: int = 0) -> TrainedNetwork:
    """Sequence-to-sequence point forecaster on overlapping per-station slices.

    ``frame`` should keep cases without an observation so that each station
    series stays contiguous; slices with a missing target are dropped.
    """

    cfg = _require(spec.aux_c1d, "aux_c1d")
    slices = _require(spec.slices, "slices")
    x, y, dropped = training_slices(frame, cfg.base_features, slices)
    if dropped:
        logging.info("aux_c1d: dropped %d slices with a missing observation", dropped)
    return _fit(
        "aux_c1d", cfg, OutputHead.POINT, cfg.loss or Loss.MAE, x, y,
        seed=task_seed(seed, "aux_c1d"), window_len=slices.window_len, name="aux_c1d",
    )


def aux_forecasts(frame: pd.DataFrame, aux_mlp: TrainedNetwork, aux_c1d: TrainedNetwork) -> pd.DataFrame:
    """Corrected point forecasts of both auxiliary networks for every row of ``frame``.

    The convolutional forecasts run over each station's series cut into
    disjoint slices; stations with fewer cases than one slice get ``NaN``.
    """

    base = [f for f in aux_mlp.features if f not in AUX_FEATURES]
    out = pd.DataFrame(index=frame.index)
    out["aux_mlp"] = aux_mlp.point(base_features(frame, base))[:, 0] if len(frame) else np.zeros(0)
    out["aux_c1d"] = np.nan
    window_len = int(aux_c1d.window_len or 0)
    c1d_features = [f for f in aux_c1d.features if f not in AUX_FEATURES]
    for station, part in station_series(frame):
        if len(part) < window_len:
            logging.warning("aux_c1d: station %s has %d cases, fewer than one slice of %d", station, len(part), window_len)
            continue
        x = base_features(part, c1d_features)
        outputs = aux_c1d.point(np.stack(make_disjoint_slices(x, window_len)))
        out.loc[part.index, "aux_c1d"] = stitch(outputs, len(part), window_len)
    return out


def _pool_rows(frame: pd.DataFrame, pool: str) -> np.ndarray:
    mask = pool_masks(frame, "half_day_pooled").get(pool)
    return np.zeros(len(frame), bool) if mask is None else mask


def train_mlp_s(frame: pd.DataFrame, spec: MethodSpec, *, seed: int = 0) -> Dict[str, TrainedNetwork]:
    return _train_pools(frame, spec, None, seed=seed)


def train_mlpex(
    frame: pd.DataFrame,
    spec: MethodSpec,
    *,
    seed: int = 0,
    aux: Optional[Tuple[TrainedNetwork, TrainedNetwork]] = None,
) -> Tuple[Dict[str, TrainedNetwork], TrainedNetwork, TrainedNetwork]:
    """Auxiliary networks (unless given) and the two half-day MLPex networks."""

    if aux is None:
        aux = (train_mlpaux(frame, spec, seed=seed), train_c1daux(frame, spec, seed=seed))
    aux_mlp, aux_c1d = aux
    corrected = aux_forecasts(frame, aux_mlp, aux_c1d)
    return _train_pools(frame, spec, corrected, seed=seed), aux_mlp, aux_c1d


def _train_pools(
    frame: pd.DataFrame, spec: MethodSpec, aux: Optional[pd.DataFrame], *, seed: int
) -> Dict[str, TrainedNetwork]:
    cfg = _require(spec.network, "network")
    y_all = frame["observation"].to_numpy(float)
    if aux is not None:
        lost = frame["observation"].notna() & aux[list(AUX_FEATURES)].isna().any(axis=1)
        if lost.any():
            logging.warning("%s: %d cases lack an auxiliary forecast and are not used", spec.name, int(lost.sum()))
            y_all = np.where(lost, np.nan, y_all)
    x_all = network_inputs(frame, cfg.features, aux)
    x_all = np.where(np.isfinite(x_all), x_all, 0.0)
    networks: Dict[str, TrainedNetwork] = {}
    for pool in HALF_DAY_POOLS:
        rows = _pool_rows(frame, pool)
        if not rows.any():
            continue
        check_pool_leads(pool, frame["lead_minutes"].to_numpy()[rows])
        networks[pool] = _fit(
            spec.kind, cfg, spec.head, spec.loss, x_all[rows], y_all[rows],
            seed=task_seed(seed, (spec.kind, pool)), family=spec.family, name=f"{spec.name}/{pool}",
        )
    if not networks:
        raise InsufficientDataError(f"{spec.name}: window has no cases")
    return networks


def _require(value, name: str):
    if value is None:
        raise ConfigError(f"method configuration lacks {name}")
    return value


__all__ = [
    "NetworkArtifact",
    "TrainedNetwork",
    "target_scale",
    "base_features",
    "network_inputs",
    "train_mlp_s",
    "train_mlpaux",
    "train_c1daux",
    "train_mlpex",
    "aux_forecasts",
]
