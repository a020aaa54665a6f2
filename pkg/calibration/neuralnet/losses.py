"""Output heads and training losses with gradients wrt raw network outputs."""

from __future__ import annotations

from enum import Enum
from typing import Optional, Tuple

import numpy as np

from calibration.distributions import Family, cn_crps_grad, ln_crps_grad, tn_crps_grad
from common.errors import ConfigError, TrainingError

HEAD_FLOOR = 1e-6
_CUBE_FLOOR = 1e-8


class OutputHead(str, Enum):
    """How raw outputs are read as distribution parameters.

    ``tn_exp_exp`` reads ``(e^mu, e^sigma)``, ``cn0_cube_exp`` reads
    ``(mu^3, e^sigma)``, ``ln_moments`` reads ``(m, v)`` and ``point`` passes
    outputs through unchanged.
    """

    TN_EXP_EXP = "tn_exp_exp"
    CN0_CUBE_EXP = "cn0_cube_exp"
    LN_MOMENTS = "ln_moments"
    POINT = "point"

    @property
    def family(self) -> Optional[Family]:
        return {
            OutputHead.TN_EXP_EXP: Family.TN,
            OutputHead.CN0_CUBE_EXP: Family.CN0,
            OutputHead.LN_MOMENTS: Family.LN,
        }.get(self)

    @property
    def n_outputs(self) -> Optional[int]:
        return None if self is OutputHead.POINT else 2

    @classmethod
    def for_family(cls, family: Family | str) -> "OutputHead":
        family = Family(family)
        for head in cls:
            if head.family is family:
                return head
        raise ConfigError(f"no network output head for family {family.value}")


class Loss(str, Enum):
    CRPS_TN = "crps_tn"
    CRPS_CN0 = "crps_cn0"
    CRPS_LN = "crps_ln"
    MAE = "mae"
    MSE = "mse"

    @property
    def head(self) -> OutputHead:
        return {
            Loss.CRPS_TN: OutputHead.TN_EXP_EXP,
            Loss.CRPS_CN0: OutputHead.CN0_CUBE_EXP,
            Loss.CRPS_LN: OutputHead.LN_MOMENTS,
        }.get(self, OutputHead.POINT)

    @classmethod
    def for_family(cls, family: Family | str) -> "Loss":
        head = OutputHead.for_family(family)
        return next(loss for loss in cls if loss.head is head and loss.name.startswith("CRPS"))


def _log_read(o: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    clipped = np.maximum(o, HEAD_FLOOR)
    return np.log(clipped), np.where(o > HEAD_FLOOR, 1.0 / clipped, 0.0)


def read_head(head: OutputHead | str, raw: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Distribution parameters and their derivatives wrt the two raw outputs.

    Returns ``(p1, p2, dp1/do1, dp2/do2)``; ``(mu, sigma)`` for TN and CN0,
    ``(m, v)`` for LN.
    """

    head = OutputHead(head)
    if head is OutputHead.POINT:
        raise ConfigError("point head has no distribution parameters")
    o1, o2 = raw[:, 0], raw[:, 1]
    if head is OutputHead.LN_MOMENTS:
        return (
            np.maximum(o1, HEAD_FLOOR),
            np.maximum(o2, HEAD_FLOOR),
            (o1 > HEAD_FLOOR).astype(float),
            (o2 > HEAD_FLOOR).astype(float),
        )
    sigma, d_sigma = _log_read(o2)
    if head is OutputHead.TN_EXP_EXP:
        mu, d_mu = _log_read(o1)
    else:
        mu = np.cbrt(o1)
        d_mu = 1.0 / (3.0 * np.maximum(mu * mu, _CUBE_FLOOR))
    return mu, sigma, d_mu, d_sigma


_CRPS = {
    Loss.CRPS_TN: tn_crps_grad,
    Loss.CRPS_CN0: cn_crps_grad,
    Loss.CRPS_LN: ln_crps_grad,
}


def loss_and_grad(
    loss: Loss | str, raw: np.ndarray, targets: np.ndarray
) -> Tuple[float, np.ndarray]:
    """Batch-mean loss and its gradient with respect to ``raw``.

    CRPS losses fold the head read and its Jacobian into the gradient.
    """

    loss = Loss(loss)
    raw = np.asarray(raw, dtype=float)
    if not np.all(np.isfinite(raw)):
        raise TrainingError("network produced non-finite outputs")
    y = np.asarray(targets, dtype=float)
    if loss in _CRPS:
        y = y.reshape(-1)
        p1, p2, d1, d2 = read_head(loss.head, raw)
        crps, g1, g2 = _CRPS[loss](p1, p2, y)
        batch = raw.shape[0]
        grad = np.zeros_like(raw)
        grad[:, 0] = g1 * d1 / batch
        grad[:, 1] = g2 * d2 / batch
        return float(crps.mean()), grad

    y = y.reshape(raw.shape)
    residual = raw - y
    if loss is Loss.MAE:
        return float(np.abs(residual).mean()), np.sign(residual) / residual.size
    return float((residual**2).mean()), 2.0 * residual / residual.size


__all__ = ["HEAD_FLOOR", "OutputHead", "Loss", "read_head", "loss_and_grad"]
