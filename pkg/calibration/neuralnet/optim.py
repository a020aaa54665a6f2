"""Adam optimizer and step-decay learning-rate schedules."""

from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator


class OptimizerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    initial_lr: float = Field(0.01, gt=0.0)
    # (epoch, multiplier) pairs; epochs are 1-based and strictly increasing
    schedule: List[Tuple[int, float]] = Field(default_factory=list)
    batch_size: int = Field(1024, ge=1)
    max_epochs: int = Field(100, ge=1)
    patience: int = Field(10, ge=1)
    val_fraction: float = Field(0.2, gt=0.0, lt=1.0)
    seed: int = 0
    restore_best: bool = False

    @field_validator("schedule")
    @classmethod
    def _increasing(cls, value: List[Tuple[int, float]]) -> List[Tuple[int, float]]:
        epochs = [e for e, _ in value]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError(f"schedule epochs must be strictly increasing, got {epochs}")
        if any(e < 1 for e in epochs):
            raise ValueError("schedule epochs are 1-based")
        if any(m <= 0 for _, m in value):
            raise ValueError("schedule multipliers must be positive")
        return value


def learning_rate(initial_lr: float, schedule: Sequence[Tuple[int, float]], epoch: int) -> float:
    """Rate in effect during ``epoch``: every multiplier due so far applies cumulatively."""

    lr = float(initial_lr)
    for at, multiplier in schedule:
        if at <= epoch:
            lr *= multiplier
    return lr


class Adam:
    def __init__(
        self, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8
    ) -> None:
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m: List[np.ndarray] = []
        self.v: List[np.ndarray] = []
        self.t = 0

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        """Update ``params`` in place."""

        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        step_size = self.lr / bc1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= step_size * m / (np.sqrt(v / bc2) + self.epsilon)


__all__ = ["OptimizerConfig", "Adam", "learning_rate"]
