"""Mini-batch training loop with validation-based early stopping."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from sklearn.model_selection import train_test_split

from calibration.neuralnet.losses import HEAD_FLOOR, Loss, OutputHead, loss_and_grad
from calibration.neuralnet.network import Network
from calibration.neuralnet.optim import Adam, OptimizerConfig, learning_rate
from common.errors import TrainingError
from common.logging import log_event

_MIN_VALIDATION_ROWS = 2
_OUTPUT_WEIGHT_SCALE = 0.1


@dataclass
class History:
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    learning_rates: List[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    @property
    def epochs(self) -> int:
        return len(self.train_loss)


@dataclass
class EarlyStopping:
    """Stop after `patience` consecutive epochs without a new best validation loss.

    An epoch that improves on the previous one but not on the best so far
    still counts towards `patience`.
    """

    patience: int
    best: float = np.inf
    best_epoch: int = 0
    wait: int = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record one epoch; ``True`` when training should stop."""
        if val_loss < self.best:
            self.best, self.best_epoch, self.wait = val_loss, epoch, 0
            return False
        self.wait += 1
        return self.wait >= self.patience


def split_indices(n: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded random optimization/validation partition of ``range(n)``."""

    indices = np.arange(n)
    if n * val_fraction < 1 or n - int(np.ceil(n * val_fraction)) < 1:
        return indices, indices
    train_idx, val_idx = train_test_split(
        indices, test_size=val_fraction, random_state=seed, shuffle=True
    )
    return np.sort(train_idx), np.sort(val_idx)


def _evaluate(net: Network, loss: Loss, x: np.ndarray, y: np.ndarray, batch_size: int) -> float:
    total = 0.0
    for start in range(0, len(x), batch_size):
        value, _ = loss_and_grad(loss, net.forward(x[start : start + batch_size]), y[start : start + batch_size])
        total += value * len(x[start : start + batch_size])
    return total / len(x)


def initialize_output(net: Network, targets: np.ndarray) -> None:
    """Start the output layer at the targets' central values.

    The output kernel is shrunk and the bias is set so the head reads the
    target mean (and spread) before training.
    """

    y = np.asarray(targets, dtype=float)
    y = y[np.all(np.isfinite(y.reshape(len(y), -1)), axis=1)] if len(y) else y
    if len(y) == 0:
        return
    layer = net.output_layer
    layer.params["kernel"] *= _OUTPUT_WEIGHT_SCALE
    if net.head is OutputHead.POINT:
        layer.params["bias"][:] = y.reshape(len(y), -1).mean(axis=0)
        return
    y = y.reshape(-1)
    centre, spread = float(np.mean(y)), max(float(np.std(y)), HEAD_FLOOR)
    if net.head is OutputHead.TN_EXP_EXP:
        bias = (np.exp(max(centre, HEAD_FLOOR)), np.exp(spread))
    elif net.head is OutputHead.CN0_CUBE_EXP:
        bias = (centre**3, np.exp(spread))
    else:
        bias = (max(centre, HEAD_FLOOR), max(spread**2, HEAD_FLOOR))
    layer.params["bias"][:] = bias


def train(
    net: Network,
    features: np.ndarray,
    targets: np.ndarray,
    opt: OptimizerConfig,
    loss: Loss | str,
    *,
    name: str = "network",
) -> tuple[Network, History]:
    """Fit ``net`` in place; rows with a missing target are dropped first."""

    loss = Loss(loss)
    x = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    keep = np.all(np.isfinite(y.reshape(len(y), -1)), axis=1) if len(y) else np.zeros(0, bool)
    x, y = x[keep], y[keep]
    if len(x) == 0:
        raise TrainingError(f"{name}: no training rows with an observed target")

    train_idx, val_idx = split_indices(len(x), opt.val_fraction, opt.seed)
    if len(val_idx) == len(x):
        logging.warning("%s: %d rows are too few for a validation split; validating on training data", name, len(x))
    x_tr, y_tr = x[train_idx], y[train_idx]
    x_val, y_val = x[val_idx], y[val_idx]

    rng = np.random.default_rng(opt.seed)
    adam = Adam(lr=opt.initial_lr)
    history = History()
    stopper = EarlyStopping(opt.patience)
    best_weights = net.get_weights()

    for epoch in range(1, opt.max_epochs + 1):
        adam.lr = learning_rate(opt.initial_lr, opt.schedule, epoch)
        order = rng.permutation(len(x_tr))
        for start in range(0, len(order), opt.batch_size):
            batch = order[start : start + opt.batch_size]
            raw = net.forward(x_tr[batch], training=True)
            _, grad = loss_and_grad(loss, raw, y_tr[batch])
            net.backward(grad)
            adam.step(net.parameters(), net.gradients())
        if epoch == 1:
            net.freeze_normalization()

        train_loss = _evaluate(net, loss, x_tr, y_tr, opt.batch_size)
        val_loss = _evaluate(net, loss, x_val, y_val, opt.batch_size)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingError(f"{name}: non-finite loss at epoch {epoch}")
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        history.learning_rates.append(adam.lr)

        stop = stopper.update(epoch, val_loss)
        if stopper.best_epoch == epoch:
            best_weights = net.get_weights()
            history.best_epoch = epoch
        if stop:
            history.stopped_early = True
            logging.info("%s: early stop at epoch %d (best epoch %d)", name, epoch, history.best_epoch)
            break

    if opt.restore_best and history.best_epoch:
        net.set_weights(best_weights)

    log_event(
        "NETWORK_TRAINED",
        network=name,
        loss=loss.value,
        epochs=history.epochs,
        best_epoch=history.best_epoch,
        stopped_early=history.stopped_early,
        train_rows=int(len(x_tr)),
        val_rows=int(len(x_val)),
        final_train_loss=history.train_loss[-1],
        final_val_loss=history.val_loss[-1],
    )
    return net, history


__all__ = ["History", "EarlyStopping", "train", "split_indices", "initialize_output"]
