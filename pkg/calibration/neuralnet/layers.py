"""Layer kinds with explicit forward and backward passes.

Inputs are batched: flat features ``(B, F)`` or sequences ``(B, L, C)``.
A layer caches what its backward pass needs during ``forward`` and writes
parameter gradients into ``grads`` during ``backward``.
"""

from __future__ import annotations

from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, model_validator

from common.errors import BuildError, ConfigError

Shape = Tuple[int, ...]
_EXP_CLIP = 60.0
NORM_EPSILON = 1e-6


class LayerSpec(BaseModel):
    """Declarative layer description as stored in presets and model documents."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["dense", "conv1d", "pool1d", "flatten", "normalization"]
    units: Optional[int] = None
    filters: Optional[int] = None
    kernel_size: Optional[int] = None
    mode: Optional[Literal["max", "avg"]] = None
    pool_size: Optional[int] = None
    activation: Literal["elu", "relu", "exponential", "linear"] = "linear"

    @model_validator(mode="after")
    def _check_kind(self) -> "LayerSpec":
        required = {
            "dense": ("units",),
            "conv1d": ("filters", "kernel_size"),
            "pool1d": ("mode", "pool_size"),
        }.get(self.kind, ())
        for name in required:
            value = getattr(self, name)
            if value is None:
                raise ValueError(f"{self.kind} layer needs {name}")
            if isinstance(value, int) and value < 1:
                raise ValueError(f"{self.kind} layer {name} must be positive, got {value}")
        return self


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------


def activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "linear":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "elu":
        return np.where(z > 0.0, z, np.expm1(np.minimum(z, 0.0)))
    if name == "exponential":
        return np.exp(np.minimum(z, _EXP_CLIP))
    raise ConfigError(f"unknown activation {name!r}")


def activation_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Derivative of the activation given pre-activation ``z`` and output ``a``."""

    if name == "linear":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "elu":
        return np.where(z > 0.0, 1.0, a + 1.0)
    if name == "exponential":
        return np.where(z < _EXP_CLIP, a, 0.0)
    raise ConfigError(f"unknown activation {name!r}")


def glorot_uniform(rng: np.random.Generator, shape: Shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


class Layer:
    """Base layer; subclasses set ``params`` (trainable) and ``state`` (frozen)."""

    def __init__(self, spec: LayerSpec) -> None:
        self.spec = spec
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self.state: Dict[str, np.ndarray] = {}
        self.input_shape: Shape = ()
        self.output_shape: Shape = ()

    def build(self, input_shape: Shape, rng: np.random.Generator, index: int) -> Shape:
        self.input_shape = tuple(input_shape)
        self.output_shape = self._build(self.input_shape, rng, index)
        return self.output_shape

    def _build(self, input_shape: Shape, rng: np.random.Generator, index: int) -> Shape:
        raise NotImplementedError

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def arrays(self) -> List[np.ndarray]:
        """Every stored array in a fixed order (trainable first)."""

        return [*self.params.values(), *self.state.values()]


class Dense(Layer):
    def _build(self, input_shape: Shape, rng: np.random.Generator, index: int) -> Shape:
        if len(input_shape) != 1:
            raise BuildError(f"dense layer expects flat input, got shape {input_shape}", index)
        fan_in, units = input_shape[0], int(self.spec.units)
        self.params = {
            "kernel": glorot_uniform(rng, (fan_in, units), fan_in, units),
            "bias": np.zeros(units),
        }
        return (units,)

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        self._x = x
        self._z = x @ self.params["kernel"] + self.params["bias"]
        self._a = activate(self.spec.activation, self._z)
        return self._a

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        dz = grad_out * activation_grad(self.spec.activation, self._z, self._a)
        self.grads = {"kernel": self._x.T @ dz, "bias": dz.sum(axis=0)}
        return dz @ self.params["kernel"].T


class Conv1D(Layer):
    """Valid 1D convolution with stride 1; each filter spans all input channels."""

    def _build(self, input_shape: Shape, rng: np.random.Generator, index: int) -> Shape:
        if len(input_shape) != 2:
            raise BuildError(f"conv1d expects (length, channels) input, got {input_shape}", index)
        length, channels = input_shape
        kernel, filters = int(self.spec.kernel_size), int(self.spec.filters)
        if length < kernel:
            raise BuildError(f"sequence length {length} shorter than kernel size {kernel}", index)
        self.params = {
            "kernel": glorot_uniform(rng, (kernel, channels, filters), kernel * channels, kernel * filters),
            "bias": np.zeros(filters),
        }
        return (length - kernel + 1, filters)

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        kernel = self.params["kernel"]
        # (B, L_out, C, k)
        self._windows = sliding_window_view(x, kernel.shape[0], axis=1)
        self._z = np.einsum("blck,kcf->blf", self._windows, kernel) + self.params["bias"]
        self._a = activate(self.spec.activation, self._z)
        return self._a

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        kernel = self.params["kernel"]
        dz = grad_out * activation_grad(self.spec.activation, self._z, self._a)
        self.grads = {
            "kernel": np.einsum("blck,blf->kcf", self._windows, dz),
            "bias": dz.sum(axis=(0, 1)),
        }
        batch, out_len, _ = dz.shape
        dx = np.zeros((batch, out_len + kernel.shape[0] - 1, kernel.shape[1]))
        for k in range(kernel.shape[0]):
            dx[:, k : k + out_len, :] += dz @ kernel[k].T
        return dx


class Pool1D(Layer):
    """Max or average pooling with stride equal to the pool size."""

    def _build(self, input_shape: Shape, rng: np.random.Generator, index: int) -> Shape:
        if len(input_shape) != 2:
            raise BuildError(f"pool1d expects (length, channels) input, got {input_shape}", index)
        length, channels = input_shape
        size = int(self.spec.pool_size)
        if length < size:
            raise BuildError(f"sequence length {length} shorter than pool size {size}", index)
        return (length // size, channels)

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        size = int(self.spec.pool_size)
        batch, length, channels = x.shape
        out_len = length // size
        self._in_len = length
        blocks = x[:, : out_len * size, :].reshape(batch, out_len, size, channels)
        if self.spec.mode == "max":
            self._argmax = blocks.argmax(axis=2)
            return np.take_along_axis(blocks, self._argmax[:, :, None, :], axis=2)[:, :, 0, :]
        return blocks.mean(axis=2)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        size = int(self.spec.pool_size)
        batch, out_len, channels = grad_out.shape
        blocks = np.zeros((batch, out_len, size, channels))
        if self.spec.mode == "max":
            np.put_along_axis(blocks, self._argmax[:, :, None, :], grad_out[:, :, None, :], axis=2)
        else:
            blocks[:] = grad_out[:, :, None, :] / size
        dx = np.zeros((batch, self._in_len, channels))
        dx[:, : out_len * size, :] = blocks.reshape(batch, out_len * size, channels)
        return dx


class Flatten(Layer):
    def _build(self, input_shape: Shape, rng: np.random.Generator, index: int) -> Shape:
        return (int(np.prod(input_shape)),)

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return grad_out.reshape(self._shape)


class Normalization(Layer):
    """Feature-wise standardization with running statistics.

    Statistics accumulate over the training batches seen while ``accumulating``
    is set (the first epoch) and are constants afterwards; backprop never flows
    through them.
    """

    def _build(self, input_shape: Shape, rng: np.random.Generator, index: int) -> Shape:
        features = input_shape[-1]
        self.state = {
            "mean": np.zeros(features),
            "variance": np.ones(features),
            "count": np.zeros(1),
        }
        self.accumulating = True
        return tuple(input_shape)

    def freeze(self) -> None:
        self.accumulating = False

    def _update(self, x: np.ndarray) -> None:
        flat = x.reshape(-1, x.shape[-1])
        n_b = flat.shape[0]
        n_a = float(self.state["count"][0])
        mean_b = flat.mean(axis=0)
        var_b = flat.var(axis=0)
        total = n_a + n_b
        delta = mean_b - self.state["mean"]
        if n_a == 0:
            mean, var = mean_b, var_b
        else:
            mean = self.state["mean"] + delta * n_b / total
            m2 = self.state["variance"] * n_a + var_b * n_b + delta**2 * n_a * n_b / total
            var = m2 / total
        self.state = {"mean": mean, "variance": var, "count": np.array([total])}

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if training and self.accumulating:
            self._update(x)
        self._inv_std = 1.0 / np.sqrt(self.state["variance"] + NORM_EPSILON)
        return (x - self.state["mean"]) * self._inv_std

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return grad_out * self._inv_std


_KINDS = {
    "dense": Dense,
    "conv1d": Conv1D,
    "pool1d": Pool1D,
    "flatten": Flatten,
    "normalization": Normalization,
}


def make_layer(spec: LayerSpec) -> Layer:
    return _KINDS[spec.kind](spec)


__all__ = [
    "LayerSpec",
    "Layer",
    "Dense",
    "Conv1D",
    "Pool1D",
    "Flatten",
    "Normalization",
    "make_layer",
    "activate",
    "activation_grad",
    "glorot_uniform",
]
