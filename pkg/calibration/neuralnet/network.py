"""Sequential network container, builder and JSON documents."""

from __future__ import annotations

from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from calibration.neuralnet.layers import Dense, Layer, LayerSpec, Normalization, make_layer
from calibration.neuralnet.losses import OutputHead, read_head
from common.errors import BuildError, ConfigError

DOCUMENT_VERSION = 1


class Network:
    def __init__(self, layers: List[Layer], head: OutputHead, input_shape: Tuple[int, ...]) -> None:
        self.layers = layers
        self.head = head
        self.input_shape = input_shape
        self.output_shape = layers[-1].output_shape if layers else input_shape

    @property
    def specs(self) -> List[LayerSpec]:
        return [layer.spec for layer in self.layers]

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[1:] != self.input_shape:
            raise ConfigError(f"input shape {x.shape[1:]} does not match network input {self.input_shape}")
        for layer in self.layers:
            x = layer.forward(x, training=training)
        return x

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out

    def parameters(self) -> List[np.ndarray]:
        return [p for layer in self.layers for p in layer.params.values()]

    def gradients(self) -> List[np.ndarray]:
        return [layer.grads[name] for layer in self.layers for name in layer.params]

    def get_weights(self) -> List[np.ndarray]:
        return [a.copy() for layer in self.layers for a in layer.arrays()]

    def set_weights(self, weights: Sequence[np.ndarray]) -> None:
        it = iter(weights)
        for layer in self.layers:
            for store in (layer.params, layer.state):
                for name, current in store.items():
                    value = np.asarray(next(it), dtype=float)
                    if value.size != current.size:
                        raise ConfigError(
                            f"weight {name!r} has {value.size} values, expected {current.size}"
                        )
                    store[name] = value.reshape(current.shape).copy()

    def freeze_normalization(self) -> None:
        for layer in self.layers:
            if isinstance(layer, Normalization):
                layer.freeze()

    @property
    def output_layer(self) -> Dense:
        return self.layers[-1]  # type: ignore[return-value]

    def predict_params(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Distribution parameters for a batch (distributional heads only)."""

        p1, p2, _, _ = read_head(self.head, self.forward(x))
        return p1, p2

    def to_document(self) -> Dict[str, Any]:
        return {
            "version": DOCUMENT_VERSION,
            "kind": "network",
            "input_shape": list(self.input_shape),
            "head": self.head.value,
            "layers": [spec.model_dump(exclude_none=True) for spec in self.specs],
            "weights": [a.ravel().tolist() for a in self.get_weights()],
        }


def build(
    specs: Sequence[LayerSpec | Mapping[str, Any]],
    head: OutputHead | str,
    input_shape: Sequence[int],
    seed: int,
) -> Network:
    """Chain layer shapes and draw initial weights from ``seed``.

    The final layer must be dense; distributional heads need two outputs.
    """

    head = OutputHead(head)
    specs = [s if isinstance(s, LayerSpec) else LayerSpec.model_validate(s) for s in specs]
    if not specs:
        raise BuildError("network has no layers", 0)
    rng = np.random.default_rng(seed)
    shape: Tuple[int, ...] = tuple(int(d) for d in input_shape)
    layers: List[Layer] = []
    for index, spec in enumerate(specs):
        layer = make_layer(spec)
        shape = layer.build(shape, rng, index)
        layers.append(layer)
    last = len(specs) - 1
    if specs[-1].kind != "dense":
        raise BuildError("output layer must be dense", last)
    if head.n_outputs is not None and shape != (head.n_outputs,):
        raise BuildError(f"{head.value} head needs {head.n_outputs} outputs, got {shape}", last)
    return Network(layers, head, tuple(int(d) for d in input_shape))


def from_document(document: Mapping[str, Any]) -> Network:
    if document.get("kind") != "network" or document.get("version") != DOCUMENT_VERSION:
        raise ConfigError(
            f"unsupported network document kind={document.get('kind')!r} version={document.get('version')!r}"
        )
    net = build(document["layers"], document["head"], document["input_shape"], seed=0)
    net.set_weights([np.asarray(w, dtype=float) for w in document["weights"]])
    net.freeze_normalization()
    return net


__all__ = ["Network", "build", "from_document", "DOCUMENT_VERSION"]
