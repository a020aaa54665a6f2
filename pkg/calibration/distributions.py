"""Predictive families with non-negative support.

Every family exposes its CDF, quantile function, mean, closed-form CRPS and
the analytic gradient of the CRPS with respect to its natural parameters.
Functions are vectorized: parameters and observations may be numpy arrays
that broadcast against each other. Scales are floored at ``SCALE_FLOOR``.

CRPS closed forms (``z = (y - mu) / sigma``, ``z0 = -mu / sigma``):

* truncated normal: ``sigma * [z (2F(z) + p - 2)/p + 2 phi(z)/p - Phi(sqrt2 a)/(sqrt(pi) p^2)]``
  with ``a = mu / sigma`` and ``p = Phi(a)``; evaluated through ratios that
  stay finite for strongly negative ``a``;
* log-normal: ``y (2 Phi(w) - 1) - 2 m [Phi(w - s) + Phi(s / sqrt2) - 1]``;
* censored logistic: ``sigma [sp(z) + sp(-z) - 1 - sp(z0) + L(z0)]`` with
  softplus ``sp`` and logistic CDF ``L``;
* censored normal: the normal CRPS minus ``int_{-inf}^{z0} Phi^2``.

Observations below zero add ``-y`` to the score at ``y = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Tuple, Union

import numpy as np
from scipy import special

from common.errors import DomainError

SCALE_FLOOR = 1e-8
_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_SQRT2 = math.sqrt(2.0)
_TWO_OVER_SQRT_2PI = 2.0 / math.sqrt(2.0 * math.pi)

ArrayLike = Union[float, np.ndarray]


class Family(str, Enum):
    TN = "TN"
    LN = "LN"
    CL0 = "CL0"
    CN0 = "CN0"

    @property
    def censored(self) -> bool:
        return self in (Family.CL0, Family.CN0)


def _arr(x: ArrayLike) -> np.ndarray:
    return np.asarray(x, dtype=float)


def _scale(sigma: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
    s = _arr(sigma)
    return np.maximum(s, SCALE_FLOOR), (s >= SCALE_FLOOR).astype(float)


def _check_prob(p: ArrayLike) -> np.ndarray:
    p = _arr(p)
    if np.any(~((p > 0.0) & (p < 1.0))):
        raise DomainError("quantile level must lie strictly between 0 and 1")
    return p


def _norm_pdf(x: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * x * x - _LOG_SQRT_2PI)


def _out(x: np.ndarray) -> ArrayLike:
    return float(x) if np.ndim(x) == 0 else x


# ---------------------------------------------------------------------------
# Truncated normal, left-truncated at zero
# ---------------------------------------------------------------------------


def _tn_terms(mu: np.ndarray, sigma: np.ndarray, y: np.ndarray):
    """Ratios of normal tails to ``p = Phi(mu/sigma)``, finite for any ``a``."""

    a = mu / sigma
    z = (y - mu) / sigma
    with np.errstate(all="ignore"):
        # a >= 0: p is not small, log-space ratios are exact enough
        lp = special.log_ndtr(a)
        r1_pos = np.exp(special.log_ndtr(-z) - lp)
        r2_pos = np.exp(-0.5 * z * z - _LOG_SQRT_2PI - lp)
        r3_pos = np.exp(special.log_ndtr(_SQRT2 * a) - 2.0 * lp)
        ra_pos = np.exp(-0.5 * a * a - _LOG_SQRT_2PI - lp)
        q_pos = np.exp(-a * a - 2.0 * lp)
        # a < 0: scaled complementary error functions cancel the Gaussian factors
        t = -a
        e = special.erfcx(t / _SQRT2)
        damp = np.exp(-0.5 * (y / sigma) * (z + t))
        r1_neg = special.erfcx(z / _SQRT2) / e * damp
        r2_neg = _TWO_OVER_SQRT_2PI / e * damp
        r3_neg = 2.0 * special.erfcx(t) / (e * e)
        ra_neg = _TWO_OVER_SQRT_2PI / e
        q_neg = 4.0 / (e * e)
    pos = a >= 0.0
    return (
        a,
        z,
        np.where(pos, r1_pos, r1_neg),
        np.where(pos, r2_pos, r2_neg),
        np.where(pos, r3_pos, r3_neg),
        np.where(pos, ra_pos, ra_neg),
        np.where(pos, q_pos, q_neg),
    )


def tn_cdf(mu: ArrayLike, sigma: ArrayLike, x: ArrayLike) -> ArrayLike:
    s, _ = _scale(sigma)
    mu, x = np.broadcast_arrays(_arr(mu), _arr(x))
    xe = np.maximum(x, 0.0)
    _, _, r1, *_ = _tn_terms(mu, s, xe)
    return _out(np.where(x < 0.0, 0.0, np.clip(1.0 - r1, 0.0, 1.0)))


def tn_quantile(mu: ArrayLike, sigma: ArrayLike, p: ArrayLike) -> ArrayLike:
    p = _check_prob(p)
    s, _ = _scale(sigma)
    mu = _arr(mu)
    lp = special.log_ndtr(mu / s)
    z = -special.ndtri_exp(np.log1p(-p) + lp)
    return _out(np.maximum(mu + s * z, 0.0))


def tn_mean(mu: ArrayLike, sigma: ArrayLike) -> ArrayLike:
    s, _ = _scale(sigma)
    mu = _arr(mu)
    _, _, _, _, _, ra, _ = _tn_terms(mu, s, np.zeros_like(mu))
    return _out(mu + s * ra)


def tn_crps(mu: ArrayLike, sigma: ArrayLike, y: ArrayLike) -> ArrayLike:
    return _out(tn_crps_grad(mu, sigma, y)[0])


def tn_crps_grad(mu: ArrayLike, sigma: ArrayLike, y: ArrayLike):
    """CRPS and its partial derivatives with respect to ``mu`` and ``sigma``."""

    s, active = _scale(sigma)
    mu, s, y, active = np.broadcast_arrays(_arr(mu), s, _arr(y), active)
    ye = np.maximum(y, 0.0)
    a, z, r1, r2, r3, ra, q = _tn_terms(mu, s, ye)
    h = z * (1.0 - 2.0 * r1) + 2.0 * r2 - _INV_SQRT_PI * r3
    h_z = 1.0 - 2.0 * r1
    h_a = 2.0 * z * r1 * ra - 2.0 * r2 * ra - q / math.pi + 2.0 * _INV_SQRT_PI * r3 * ra
    crps = s * h + np.maximum(-y, 0.0)
    d_mu = h_a - h_z
    d_sigma = (h - z * h_z - a * h_a) * active
    return crps, d_mu, d_sigma


# ---------------------------------------------------------------------------
# Log-normal, parameterized by mean and variance
# ---------------------------------------------------------------------------


def ln_params_from_moments(m: ArrayLike, v: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
    m, v = _arr(m), _arr(v)
    s2 = np.log1p(v / (m * m))
    return np.log(m) - 0.5 * s2, np.sqrt(s2)


def ln_log_crps_grad(mu_log: ArrayLike, sigma_log: ArrayLike, y: ArrayLike):
    """CRPS of the log-normal and derivatives in the log-space parameters."""

    s, active = _scale(sigma_log)
    mu, s, y, active = np.broadcast_arrays(_arr(mu_log), s, _arr(y), active)
    ye = np.maximum(y, 0.0)
    with np.errstate(divide="ignore"):
        w = (np.log(ye) - mu) / s
    m = np.exp(mu + 0.5 * s * s)
    tail = special.ndtr(w - s) - special.ndtr(-s / _SQRT2)
    crps = ye * (2.0 * special.ndtr(w) - 1.0) - 2.0 * m * tail + np.maximum(-y, 0.0)
    d_mu = -2.0 * m * tail
    d_sigma = (
        -2.0 * m * s * tail + 2.0 * m * _norm_pdf(w - s) - _SQRT2 * m * _norm_pdf(s / _SQRT2)
    ) * active
    return crps, d_mu, d_sigma


def ln_crps_grad(m: ArrayLike, v: ArrayLike, y: ArrayLike):
    """CRPS and derivatives with respect to the mean ``m`` and variance ``v``."""

    m, v = _arr(m), _arr(v)
    mu_log, sigma_log = ln_params_from_moments(m, v)
    crps, d_mu, d_sigma = ln_log_crps_grad(mu_log, sigma_log, y)
    s = np.maximum(sigma_log, SCALE_FLOOR)
    denom = m * m + v
    ds2_dm = -2.0 * v / (m * denom)
    ds2_dv = 1.0 / denom
    dmu_dm = 1.0 / m - 0.5 * ds2_dm
    dmu_dv = -0.5 * ds2_dv
    dsig_dm = ds2_dm / (2.0 * s)
    dsig_dv = ds2_dv / (2.0 * s)
    return crps, d_mu * dmu_dm + d_sigma * dsig_dm, d_mu * dmu_dv + d_sigma * dsig_dv


def ln_cdf(mu_log: ArrayLike, sigma_log: ArrayLike, x: ArrayLike) -> ArrayLike:
    s, _ = _scale(sigma_log)
    x = _arr(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = (np.log(np.maximum(x, 0.0)) - _arr(mu_log)) / s
    return _out(np.where(x <= 0.0, 0.0, special.ndtr(w)))


def ln_quantile(mu_log: ArrayLike, sigma_log: ArrayLike, p: ArrayLike) -> ArrayLike:
    p = _check_prob(p)
    s, _ = _scale(sigma_log)
    return _out(np.exp(_arr(mu_log) + s * special.ndtri(p)))


# ---------------------------------------------------------------------------
# Censored logistic and censored normal, left-censored at zero
# ---------------------------------------------------------------------------


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def cl_cdf(mu: ArrayLike, sigma: ArrayLike, x: ArrayLike) -> ArrayLike:
    s, _ = _scale(sigma)
    x = _arr(x)
    return _out(np.where(x < 0.0, 0.0, special.expit((x - _arr(mu)) / s)))


def cl_quantile(mu: ArrayLike, sigma: ArrayLike, p: ArrayLike) -> ArrayLike:
    p = _check_prob(p)
    s, _ = _scale(sigma)
    mu = _arr(mu)
    mass = special.expit(-mu / s)
    return _out(np.where(p <= mass, 0.0, np.maximum(mu + s * special.logit(p), 0.0)))


def cl_mean(mu: ArrayLike, sigma: ArrayLike) -> ArrayLike:
    s, _ = _scale(sigma)
    return _out(s * _softplus(_arr(mu) / s))


def cl_crps_grad(mu: ArrayLike, sigma: ArrayLike, y: ArrayLike):
    s, active = _scale(sigma)
    mu, s, y, active = np.broadcast_arrays(_arr(mu), s, _arr(y), active)
    ye = np.maximum(y, 0.0)
    z = (ye - mu) / s
    z0 = -mu / s
    l_z = special.expit(z)
    l_z0 = special.expit(z0)
    h = _softplus(z) + _softplus(-z) - 1.0 - _softplus(z0) + l_z0
    crps = s * h + np.maximum(-y, 0.0)
    d_mu = 1.0 - 2.0 * l_z + l_z0 * l_z0
    d_sigma = (h - z * (2.0 * l_z - 1.0) + z0 * l_z0 * l_z0) * active
    return crps, d_mu, d_sigma


def cn_cdf(mu: ArrayLike, sigma: ArrayLike, x: ArrayLike) -> ArrayLike:
    s, _ = _scale(sigma)
    x = _arr(x)
    return _out(np.where(x < 0.0, 0.0, special.ndtr((x - _arr(mu)) / s)))


def cn_quantile(mu: ArrayLike, sigma: ArrayLike, p: ArrayLike) -> ArrayLike:
    p = _check_prob(p)
    s, _ = _scale(sigma)
    mu = _arr(mu)
    mass = special.ndtr(-mu / s)
    return _out(np.where(p <= mass, 0.0, np.maximum(mu + s * special.ndtri(p), 0.0)))


def cn_mean(mu: ArrayLike, sigma: ArrayLike) -> ArrayLike:
    s, _ = _scale(sigma)
    mu = _arr(mu)
    return _out(mu * special.ndtr(mu / s) + s * _norm_pdf(mu / s))


def cn_crps_grad(mu: ArrayLike, sigma: ArrayLike, y: ArrayLike):
    s, active = _scale(sigma)
    mu, s, y, active = np.broadcast_arrays(_arr(mu), s, _arr(y), active)
    ye = np.maximum(y, 0.0)
    z = (ye - mu) / s
    z0 = -mu / s
    f_z = special.ndtr(z)
    f_z0 = special.ndtr(z0)
    lower = z0 * f_z0 * f_z0 + 2.0 * _norm_pdf(z0) * f_z0 - _INV_SQRT_PI * special.ndtr(_SQRT2 * z0)
    h = z * (2.0 * f_z - 1.0) + 2.0 * _norm_pdf(z) - _INV_SQRT_PI - lower
    crps = s * h + np.maximum(-y, 0.0)
    d_mu = 1.0 - 2.0 * f_z + f_z0 * f_z0
    d_sigma = (h - z * (2.0 * f_z - 1.0) + z0 * f_z0 * f_z0) * active
    return crps, d_mu, d_sigma


# ---------------------------------------------------------------------------
# Family records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TruncNormal:
    """Normal law left-truncated at 0. Fields may be arrays for batch use."""

    location: ArrayLike
    scale: ArrayLike
    family = Family.TN

    @property
    def params(self) -> Tuple[ArrayLike, ArrayLike]:
        return self.location, self.scale

    def cdf(self, x: ArrayLike) -> ArrayLike:
        return tn_cdf(self.location, self.scale, x)

    def quantile(self, p: ArrayLike) -> ArrayLike:
        return tn_quantile(self.location, self.scale, p)

    def mean(self) -> ArrayLike:
        return tn_mean(self.location, self.scale)

    def point_mass(self) -> ArrayLike:
        return 0.0

    def crps(self, y: ArrayLike) -> ArrayLike:
        return _out(tn_crps_grad(self.location, self.scale, y)[0])

    def crps_grad(self, y: ArrayLike):
        _, d1, d2 = tn_crps_grad(self.location, self.scale, y)
        return _out(d1), _out(d2)


@dataclass(frozen=True)
class LogNormalMV:
    """Log-normal law given by its mean and variance."""

    mean_value: ArrayLike
    variance: ArrayLike
    family = Family.LN

    @property
    def params(self) -> Tuple[ArrayLike, ArrayLike]:
        return self.mean_value, self.variance

    @property
    def mu_log(self) -> ArrayLike:
        return _out(ln_params_from_moments(self.mean_value, self.variance)[0])

    @property
    def sigma_log(self) -> ArrayLike:
        return _out(ln_params_from_moments(self.mean_value, self.variance)[1])

    def cdf(self, x: ArrayLike) -> ArrayLike:
        return ln_cdf(self.mu_log, self.sigma_log, x)

    def quantile(self, p: ArrayLike) -> ArrayLike:
        return ln_quantile(self.mu_log, self.sigma_log, p)

    def mean(self) -> ArrayLike:
        return self.mean_value

    def point_mass(self) -> ArrayLike:
        return 0.0

    def crps(self, y: ArrayLike) -> ArrayLike:
        return _out(ln_crps_grad(self.mean_value, self.variance, y)[0])

    def crps_grad(self, y: ArrayLike):
        _, d1, d2 = ln_crps_grad(self.mean_value, self.variance, y)
        return _out(d1), _out(d2)


@dataclass(frozen=True)
class CensoredLogistic:
    location: ArrayLike
    scale: ArrayLike
    family = Family.CL0

    @property
    def params(self) -> Tuple[ArrayLike, ArrayLike]:
        return self.location, self.scale

    def cdf(self, x: ArrayLike) -> ArrayLike:
        return cl_cdf(self.location, self.scale, x)

    def quantile(self, p: ArrayLike) -> ArrayLike:
        return cl_quantile(self.location, self.scale, p)

    def mean(self) -> ArrayLike:
        return cl_mean(self.location, self.scale)

    def point_mass(self) -> ArrayLike:
        return cl_cdf(self.location, self.scale, 0.0)

    def crps(self, y: ArrayLike) -> ArrayLike:
        return _out(cl_crps_grad(self.location, self.scale, y)[0])

    def crps_grad(self, y: ArrayLike):
        _, d1, d2 = cl_crps_grad(self.location, self.scale, y)
        return _out(d1), _out(d2)


@dataclass(frozen=True)
class CensoredNormal:
    location: ArrayLike
    scale: ArrayLike
    family = Family.CN0

    @property
    def params(self) -> Tuple[ArrayLike, ArrayLike]:
        return self.location, self.scale

    def cdf(self, x: ArrayLike) -> ArrayLike:
        return cn_cdf(self.location, self.scale, x)

    def quantile(self, p: ArrayLike) -> ArrayLike:
        return cn_quantile(self.location, self.scale, p)

    def mean(self) -> ArrayLike:
        return cn_mean(self.location, self.scale)

    def point_mass(self) -> ArrayLike:
        return cn_cdf(self.location, self.scale, 0.0)

    def crps(self, y: ArrayLike) -> ArrayLike:
        return _out(cn_crps_grad(self.location, self.scale, y)[0])

    def crps_grad(self, y: ArrayLike):
        _, d1, d2 = cn_crps_grad(self.location, self.scale, y)
        return _out(d1), _out(d2)


PredictiveDistribution = Union[TruncNormal, LogNormalMV, CensoredLogistic, CensoredNormal]

_CRPS_GRAD = {
    Family.TN: tn_crps_grad,
    Family.LN: ln_crps_grad,
    Family.CL0: cl_crps_grad,
    Family.CN0: cn_crps_grad,
}


def make_distribution(family: Family | str, param1: ArrayLike, param2: ArrayLike) -> PredictiveDistribution:
    """Build a family record from its two stored parameters (``m, v`` for LN)."""

    family = Family(family)
    if family is Family.TN:
        return TruncNormal(param1, param2)
    if family is Family.LN:
        return LogNormalMV(param1, param2)
    if family is Family.CL0:
        return CensoredLogistic(param1, param2)
    return CensoredNormal(param1, param2)


def crps_and_grad(family: Family | str, param1: ArrayLike, param2: ArrayLike, y: ArrayLike):
    """Vectorized ``(crps, d/dparam1, d/dparam2)`` for any family."""

    return _CRPS_GRAD[Family(family)](param1, param2, y)


def ln_from_moments(m: float, v: float) -> LogNormalMV:
    if not (m > 0.0) or not (v > 0.0):
        raise DomainError(f"log-normal moments must be positive, got m={m}, v={v}")
    return LogNormalMV(float(m), float(v))


def cdf(dist: PredictiveDistribution, x: ArrayLike) -> ArrayLike:
    return dist.cdf(x)


def quantile(dist: PredictiveDistribution, p: ArrayLike) -> ArrayLike:
    return dist.quantile(p)


def crps(dist: PredictiveDistribution, x: ArrayLike) -> ArrayLike:
    return dist.crps(x)


def crps_grad(dist: PredictiveDistribution, x: ArrayLike):
    return dist.crps_grad(x)


def mean(dist: PredictiveDistribution) -> ArrayLike:
    return dist.mean()


def median(dist: PredictiveDistribution) -> ArrayLike:
    return dist.quantile(0.5)


def sample(dist: PredictiveDistribution, n: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-transform draws; ``dist`` must hold scalar parameters."""

    u = rng.uniform(np.finfo(float).tiny, 1.0, size=n)
    u = np.minimum(u, 1.0 - np.finfo(float).eps)
    return np.asarray(dist.quantile(u), dtype=float)


__all__ = [
    "SCALE_FLOOR",
    "Family",
    "TruncNormal",
    "LogNormalMV",
    "CensoredLogistic",
    "CensoredNormal",
    "PredictiveDistribution",
    "make_distribution",
    "crps_and_grad",
    "ln_from_moments",
    "ln_params_from_moments",
    "cdf",
    "quantile",
    "crps",
    "crps_grad",
    "mean",
    "median",
    "sample",
    "tn_crps_grad",
    "ln_crps_grad",
    "ln_log_crps_grad",
    "cl_crps_grad",
    "cn_crps_grad",
]
