"""Method presets: rolling windows, slicing and network hyperparameters.

Presets are JSON files validated by pydantic. ``presets/wind-default.json``
and ``presets/ghi-default.json`` ship with the repository; any other path
with the same layout can be passed instead of a preset name.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from calibration.data import Variable
from calibration.distributions import Family
from calibration.ensemble_stats import canonical_features
from calibration.neuralnet.layers import LayerSpec
from calibration.neuralnet.losses import Loss, OutputHead
from calibration.neuralnet.optim import OptimizerConfig
from common.errors import ConfigError

PRESET_DIR = Path(__file__).resolve().parents[1] / "presets"
PRESETS = {"wind-default": "wind-default.json", "ghi-default": "ghi-default.json"}
METHOD_KINDS = ("emos", "mlp_s", "mlpex")
AUX_FEATURES = ("aux_mlp", "aux_c1d")

_FAMILIES = {
    Variable.WIND_SPEED: {Family.TN, Family.LN},
    Variable.GHI: {Family.CL0, Family.CN0},
}


class WindowConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    train_days: int = Field(..., ge=1)
    spatial: Literal["local", "regional"] = "local"
    pooling: Literal["per_lead_time", "half_day_pooled"] = "per_lead_time"


class SliceConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    window_len: int = Field(..., ge=1)
    shift: int = Field(..., ge=1)

    @model_validator(mode="after")
    def _shift_fits(self) -> "SliceConfig":
        if self.shift > self.window_len:
            raise ValueError(f"shift {self.shift} exceeds window length {self.window_len}")
        return self


class NetworkConfig(BaseModel):
    """Layer stack (output layer included), features and optimizer of one network."""

    model_config = ConfigDict(extra="forbid")

    features: List[str]
    layers: List[LayerSpec]
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    loss: Optional[Loss] = None

    @model_validator(mode="after")
    def _check(self) -> "NetworkConfig":
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        if self.layers[-1].kind != "dense":
            raise ValueError("the last layer must be dense")
        known = [f for f in self.features if f not in AUX_FEATURES]
        try:
            canonical_features(known)
        except ConfigError as exc:
            raise ValueError(str(exc)) from exc
        return self

    @property
    def base_features(self) -> List[str]:
        return list(canonical_features([f for f in self.features if f not in AUX_FEATURES]))

    @property
    def aux_features(self) -> List[str]:
        return [f for f in self.features if f in AUX_FEATURES]

    @property
    def output_units(self) -> int:
        return int(self.layers[-1].units or 0)


class MethodSpec(BaseModel):
    """Fully resolved description of one calibration method."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["emos", "mlp_s", "mlpex"]
    family: Family
    variable: Variable
    window: WindowConfig
    network: Optional[NetworkConfig] = None
    aux_mlp: Optional[NetworkConfig] = None
    aux_c1d: Optional[NetworkConfig] = None
    slices: Optional[SliceConfig] = None

    @model_validator(mode="after")
    def _check(self) -> "MethodSpec":
        if self.family not in _FAMILIES[self.variable]:
            allowed = sorted(f.value for f in _FAMILIES[self.variable])
            raise ValueError(f"family {self.family.value} is not available for {self.variable.value}; use {allowed}")
        if self.kind == "emos":
            return self
        if self.family is Family.CL0:
            raise ValueError("CL0 is fitted by EMOS only; networks use CN0 for irradiance")
        if self.network is None:
            raise ValueError(f"{self.kind} needs a network configuration")
        if self.network.output_units != 2:
            raise ValueError(f"{self.kind} output layer needs 2 units, got {self.network.output_units}")
        if self.kind == "mlp_s" and self.network.aux_features:
            raise ValueError("mlp_s cannot use auxiliary point forecasts as features")
        if self.kind == "mlpex":
            if self.aux_mlp is None or self.aux_c1d is None or self.slices is None:
                raise ValueError("mlpex needs aux_mlp, aux_c1d and slices")
            if sorted(self.network.aux_features) != sorted(AUX_FEATURES):
                raise ValueError(f"mlpex features must include {list(AUX_FEATURES)}")
            if self.aux_c1d.output_units != self.slices.window_len:
                raise ValueError(
                    f"aux_c1d output width {self.aux_c1d.output_units} differs from "
                    f"slice length {self.slices.window_len}"
                )
            if self.aux_mlp.output_units != 1:
                raise ValueError("aux_mlp output layer needs 1 unit")
        return self

    @property
    def name(self) -> str:
        return f"{self.kind}_{self.family.value.lower()}"

    @property
    def head(self) -> OutputHead:
        return OutputHead.for_family(self.family)

    @property
    def loss(self) -> Loss:
        if self.network is not None and self.network.loss is not None:
            return self.network.loss
        return Loss.for_family(self.family)


class VariablePreset(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    variable: Variable
    default_family: Family
    window: WindowConfig
    mlp_s: NetworkConfig
    mlpex: NetworkConfig
    aux_mlp: NetworkConfig
    aux_c1d: NetworkConfig
    slices: SliceConfig
    description: str = ""

    def method_spec(
        self,
        kind: str,
        family: Optional[Family | str] = None,
        *,
        window: Optional[Mapping[str, Any]] = None,
    ) -> MethodSpec:
        """Resolve ``kind`` and ``family`` against this preset.

        EMOS is fitted per lead time, the networks on the two half-day pools.
        ``window`` overrides individual window fields.
        """

        if kind not in METHOD_KINDS:
            raise ConfigError(f"unknown method {kind!r}; choose from {list(METHOD_KINDS)}")
        pooling = "per_lead_time" if kind == "emos" else "half_day_pooled"
        window_cfg = self.window.model_copy(update={"pooling": pooling, **dict(window or {})})
        fields: Dict[str, Any] = {
            "kind": kind,
            "family": Family(family) if family is not None else self.default_family,
            "variable": self.variable,
            "window": WindowConfig.model_validate(window_cfg.model_dump()),
        }
        if kind == "mlp_s":
            fields["network"] = self.mlp_s
        elif kind == "mlpex":
            fields.update(network=self.mlpex, aux_mlp=self.aux_mlp, aux_c1d=self.aux_c1d, slices=self.slices)
        try:
            return MethodSpec.model_validate(fields)
        except ValidationError as exc:
            raise ConfigError(f"invalid {kind} method for preset {self.name}: {exc}") from exc


def preset_path(name_or_path: str | Path) -> Path:
    key = str(name_or_path)
    if key in PRESETS:
        return PRESET_DIR / PRESETS[key]
    return Path(name_or_path)


def load_preset(name_or_path: str | Path, overrides: Optional[Mapping[str, Any]] = None) -> VariablePreset:
    """Read a preset by shipped name or file path; ``overrides`` merge on top of it."""

    path = preset_path(name_or_path)
    if not path.is_file():
        raise ConfigError(f"preset {name_or_path!r} not found (shipped presets: {sorted(PRESETS)})")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"preset {path} is not valid JSON: {exc}") from exc
    if overrides:
        raw = _merge(raw, overrides)
    try:
        return VariablePreset.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"preset {path} is invalid: {exc}") from exc


def default_preset(variable: Variable) -> str:
    return "wind-default" if variable is Variable.WIND_SPEED else "ghi-default"


def _merge(base: Mapping[str, Any], update: Mapping[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def config_hash(spec: MethodSpec, *, seed: int) -> str:
    """SHA-256 of the canonical JSON of the effective configuration."""

    payload = {"method": spec.model_dump(mode="json"), "seed": int(seed)}
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


__all__ = [
    "AUX_FEATURES",
    "METHOD_KINDS",
    "WindowConfig",
    "SliceConfig",
    "NetworkConfig",
    "MethodSpec",
    "VariablePreset",
    "load_preset",
    "default_preset",
    "preset_path",
    "config_hash",
]
