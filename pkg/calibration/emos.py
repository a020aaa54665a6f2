"""Ensemble model output statistics (EMOS).

Link functions map ensemble statistics to the parameters of a predictive
family; coefficients are estimated by minimizing the mean CRPS over a
training window with L-BFGS-B on unconstrained parameter vectors.

* TN:  ``mu = a0 + a_ctrl^2 f_ctrl + a_ens^2 f_ens``, ``sigma^2 = b0^2 + b1^2 MD``
* LN:  ``m = alpha0 + alpha_ctrl^2 f_ctrl + alpha_ens^2 f_ens``, ``v = beta0^2 + beta1^2 S^2``
* CL0/CN0: ``mu = g0 + g_ctrl f_ctrl + g_ens f_ens + nu p0``,
  ``sigma = exp(d0 + d1 log S^2)``
"""

from __future__ import annotations

import logging
import multiprocessing
import zlib
from dataclasses import asdict, dataclass
from typing import Callable, Dict, Hashable, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.optimize import minimize
from sklearn.linear_model import LinearRegression

from calibration.data import ForecastCase
from calibration.distributions import (
    SCALE_FLOOR,
    CensoredLogistic,
    CensoredNormal,
    Family,
    LogNormalMV,
    TruncNormal,
    cl_crps_grad,
    cn_crps_grad,
    ln_crps_grad,
    tn_crps_grad,
)
from calibration.ensemble_stats import EnsembleSummary, summary_arrays
from common.errors import ConfigError, InsufficientDataError, NonFiniteParameterError
from common.logging import log_event

S2_FLOOR = 1e-6
LN_PENALTY = 1e6
LN_MEAN_FLOOR = 1e-6
DOCUMENT_VERSION = 1
_LOG_SIGMA_LIMIT = 50.0
_MIN_IMPROVEMENT = 1e-8
_OPTIMIZER_OPTIONS = {"maxiter": 1000, "ftol": 1e-13, "gtol": 1e-9}


# ---------------------------------------------------------------------------
# Parameter records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TnEmosParams:
    a0: float = 0.0
    a_ctrl: float = 1.0
    a_ens: float = 0.0
    b0: float = 1.0
    b1: float = 0.0

    @property
    def family(self) -> Family:
        return Family.TN

    def to_vector(self) -> np.ndarray:
        return np.array([self.a0, self.a_ctrl, self.a_ens, self.b0, self.b1], dtype=float)

    @classmethod
    def from_vector(cls, theta: Sequence[float]) -> "TnEmosParams":
        return cls(*(float(t) for t in theta))

    def canonical(self) -> "TnEmosParams":
        return TnEmosParams(self.a0, abs(self.a_ctrl), abs(self.a_ens), abs(self.b0), abs(self.b1))


@dataclass(frozen=True)
class LnEmosParams:
    alpha0: float = 0.0
    alpha_ctrl: float = 1.0
    alpha_ens: float = 0.0
    beta0: float = 1.0
    beta1: float = 0.0

    @property
    def family(self) -> Family:
        return Family.LN

    def to_vector(self) -> np.ndarray:
        return np.array(
            [self.alpha0, self.alpha_ctrl, self.alpha_ens, self.beta0, self.beta1], dtype=float
        )

    @classmethod
    def from_vector(cls, theta: Sequence[float]) -> "LnEmosParams":
        return cls(*(float(t) for t in theta))

    def canonical(self) -> "LnEmosParams":
        return LnEmosParams(
            self.alpha0, abs(self.alpha_ctrl), abs(self.alpha_ens), abs(self.beta0), abs(self.beta1)
        )


@dataclass(frozen=True)
class CensoredEmosParams:
    gamma0: float = 0.0
    gamma_ctrl: float = 1.0
    gamma_ens: float = 0.0
    nu: float = 0.0
    delta0: float = 0.0
    delta1: float = 0.0
    family: Family = Family.CN0

    def __post_init__(self) -> None:
        if not Family(self.family).censored:
            raise ConfigError(f"censored link needs CL0 or CN0, got {self.family}")
        object.__setattr__(self, "family", Family(self.family))

    def to_vector(self) -> np.ndarray:
        return np.array(
            [self.gamma0, self.gamma_ctrl, self.gamma_ens, self.nu, self.delta0, self.delta1],
            dtype=float,
        )

    @classmethod
    def from_vector(cls, theta: Sequence[float], family: Family = Family.CN0) -> "CensoredEmosParams":
        return cls(*(float(t) for t in theta), family=Family(family))

    def canonical(self) -> "CensoredEmosParams":
        return self


EmosParams = Union[TnEmosParams, LnEmosParams, CensoredEmosParams]


def params_from_vector(family: Family | str, theta: Sequence[float]) -> EmosParams:
    family = Family(family)
    if family is Family.TN:
        return TnEmosParams.from_vector(theta)
    if family is Family.LN:
        return LnEmosParams.from_vector(theta)
    return CensoredEmosParams.from_vector(theta, family)


# ---------------------------------------------------------------------------
# Link functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EmosPredictors:
    """Per-case ensemble statistics consumed by the links."""

    f_ctrl: np.ndarray
    f_ens: np.ndarray
    md: np.ndarray
    s2: np.ndarray
    p0: np.ndarray

    @classmethod
    def from_members(cls, members: np.ndarray) -> "EmosPredictors":
        stats = summary_arrays(members)
        return cls(stats["f_ctrl"], stats["f_ens"], stats["md"], stats["s2"], stats["p0"])

    def __len__(self) -> int:
        return len(self.f_ctrl)


def _tn_arrays(theta: np.ndarray, x: EmosPredictors) -> Tuple[np.ndarray, np.ndarray]:
    a0, a1, a2, b0, b1 = theta
    mu = a0 + a1 * a1 * x.f_ctrl + a2 * a2 * x.f_ens
    sigma = np.sqrt(b0 * b0 + b1 * b1 * x.md)
    return mu, sigma


def _ln_arrays(theta: np.ndarray, x: EmosPredictors) -> Tuple[np.ndarray, np.ndarray]:
    al0, al1, al2, be0, be1 = theta
    m = al0 + al1 * al1 * x.f_ctrl + al2 * al2 * x.f_ens
    v = be0 * be0 + be1 * be1 * x.s2
    return m, v


def _censored_arrays(theta: np.ndarray, x: EmosPredictors) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    g0, gc, ge, nu, d0, d1 = theta
    mu = g0 + gc * x.f_ctrl + ge * x.f_ens + nu * x.p0
    log_s2 = np.log(np.maximum(x.s2, S2_FLOOR))
    sigma = np.exp(np.clip(d0 + d1 * log_s2, -_LOG_SIGMA_LIMIT, _LOG_SIGMA_LIMIT))
    return mu, sigma, log_s2


def _scalar_predictors(summary: EnsembleSummary, f_ctrl: float) -> EmosPredictors:
    def one(value: float) -> np.ndarray:
        return np.array([value], dtype=float)

    return EmosPredictors(
        f_ctrl=one(f_ctrl),
        f_ens=one(summary.mean_exch),
        md=one(summary.mean_abs_diff),
        s2=one(summary.variance),
        p0=one(summary.zero_prop),
    )


def tn_link(params: TnEmosParams, summary: EnsembleSummary, f_ctrl: float) -> TruncNormal:
    mu, sigma = _tn_arrays(params.to_vector(), _scalar_predictors(summary, f_ctrl))
    return TruncNormal(float(mu[0]), float(sigma[0]))


def ln_link(params: LnEmosParams, summary: EnsembleSummary, f_ctrl: float) -> LogNormalMV:
    m, v = _ln_arrays(params.to_vector(), _scalar_predictors(summary, f_ctrl))
    if not m[0] > 0.0:
        raise NonFiniteParameterError(f"log-normal link produced mean {m[0]:.6g} <= 0")
    return LogNormalMV(float(m[0]), float(v[0]))


def censored_link(
    params: CensoredEmosParams, summary: EnsembleSummary, f_ctrl: float
) -> CensoredLogistic | CensoredNormal:
    """Censored location/scale link; a zero spread is replaced by ``S2_FLOOR``."""

    mu, sigma, _ = _censored_arrays(params.to_vector(), _scalar_predictors(summary, f_ctrl))
    if summary.variance < S2_FLOOR:
        logging.info("Zero ensemble spread floored to %.1e in censored link", S2_FLOOR)
    if params.family is Family.CL0:
        return CensoredLogistic(float(mu[0]), float(sigma[0]))
    return CensoredNormal(float(mu[0]), float(sigma[0]))


def link(params: EmosParams, summary: EnsembleSummary, f_ctrl: float):
    if isinstance(params, TnEmosParams):
        return tn_link(params, summary, f_ctrl)
    if isinstance(params, LnEmosParams):
        return ln_link(params, summary, f_ctrl)
    return censored_link(params, summary, f_ctrl)


def predict_arrays(params: EmosParams, members: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Stored distribution parameters for each row of an ``(n, 11)`` member matrix.

    Log-normal means that come out non-positive are floored at ``LN_MEAN_FLOOR``.
    """

    x = EmosPredictors.from_members(members)
    theta = params.to_vector()
    if isinstance(params, TnEmosParams):
        mu, sigma = _tn_arrays(theta, x)
        return mu, np.maximum(sigma, SCALE_FLOOR)
    if isinstance(params, LnEmosParams):
        m, v = _ln_arrays(theta, x)
        bad = int(np.sum(~(m > 0.0)))
        if bad:
            logging.warning("%d log-normal means <= 0 floored at %.0e", bad, LN_MEAN_FLOOR)
        return np.maximum(m, LN_MEAN_FLOOR), v
    mu, sigma, _ = _censored_arrays(theta, x)
    return mu, sigma


# ---------------------------------------------------------------------------
# Objectives: mean CRPS and its gradient in the unconstrained vector
# ---------------------------------------------------------------------------


def _tn_objective(theta: np.ndarray, x: EmosPredictors, y: np.ndarray) -> Tuple[float, np.ndarray]:
    a0, a1, a2, b0, b1 = theta
    mu, sigma = _tn_arrays(theta, x)
    crps, d_mu, d_sigma = tn_crps_grad(mu, sigma, y)
    s = np.maximum(sigma, SCALE_FLOOR)
    grad = np.array(
        [
            d_mu.mean(),
            (d_mu * 2.0 * a1 * x.f_ctrl).mean(),
            (d_mu * 2.0 * a2 * x.f_ens).mean(),
            (d_sigma * b0 / s).mean(),
            (d_sigma * b1 * x.md / s).mean(),
        ]
    )
    return float(crps.mean()), grad


def _ln_objective(theta: np.ndarray, x: EmosPredictors, y: np.ndarray) -> Tuple[float, np.ndarray]:
    al0, al1, al2, be0, be1 = theta
    m, v = _ln_arrays(theta, x)
    bad = ~(m > 0.0)
    crps, d_m, d_v = ln_crps_grad(np.where(bad, 1.0, m), np.where(bad, 1.0, v), y)
    crps = np.where(bad, LN_PENALTY, crps)
    d_m = np.where(bad, 0.0, d_m)
    d_v = np.where(bad, 0.0, d_v)
    grad = np.array(
        [
            d_m.mean(),
            (d_m * 2.0 * al1 * x.f_ctrl).mean(),
            (d_m * 2.0 * al2 * x.f_ens).mean(),
            (d_v * 2.0 * be0).mean(),
            (d_v * 2.0 * be1 * x.s2).mean(),
        ]
    )
    return float(crps.mean()), grad


def _censored_objective(crps_grad: Callable):
    def objective(theta: np.ndarray, x: EmosPredictors, y: np.ndarray) -> Tuple[float, np.ndarray]:
        mu, sigma, log_s2 = _censored_arrays(theta, x)
        crps, d_mu, d_sigma = crps_grad(mu, sigma, y)
        d_log_sigma = d_sigma * sigma
        grad = np.array(
            [
                d_mu.mean(),
                (d_mu * x.f_ctrl).mean(),
                (d_mu * x.f_ens).mean(),
                (d_mu * x.p0).mean(),
                d_log_sigma.mean(),
                (d_log_sigma * log_s2).mean(),
            ]
        )
        return float(crps.mean()), grad

    return objective


_OBJECTIVES = {
    Family.TN: _tn_objective,
    Family.LN: _ln_objective,
    Family.CL0: _censored_objective(cl_crps_grad),
    Family.CN0: _censored_objective(cn_crps_grad),
}


def mean_crps(params: EmosParams, members: np.ndarray, observations: np.ndarray) -> float:
    """Training objective for ``params`` on complete cases (LN penalty included)."""

    x = EmosPredictors.from_members(members)
    return _OBJECTIVES[params.family](params.to_vector(), x, np.asarray(observations, dtype=float))[0]


# ---------------------------------------------------------------------------
# Starting points
# ---------------------------------------------------------------------------


def default_params(family: Family | str, observations: np.ndarray) -> EmosParams:
    """Identity on the control forecast with the window's climatological spread."""

    family = Family(family)
    spread = max(float(np.std(observations)), 1e-3)
    if family is Family.TN:
        return TnEmosParams(0.0, 1.0, 0.0, spread, 0.0)
    if family is Family.LN:
        # small positive intercept keeps m > 0 on zero control forecasts
        return LnEmosParams(1e-3, 1.0, 0.0, spread, 0.0)
    return CensoredEmosParams(0.0, 1.0, 0.0, 0.0, float(np.log(spread)), 0.0, family=family)


def _least_squares_start(family: Family, x: EmosPredictors, y: np.ndarray) -> EmosParams:
    if family.censored:
        design = np.column_stack([x.f_ctrl, x.f_ens, x.p0])
        loc = LinearRegression().fit(design, y)
        resid2 = (y - loc.predict(design)) ** 2
        log_s2 = np.log(np.maximum(x.s2, S2_FLOOR))[:, None]
        scale = LinearRegression().fit(log_s2, 0.5 * np.log(np.maximum(resid2, 1e-12)))
        gc, ge, nu = loc.coef_
        return CensoredEmosParams(
            float(loc.intercept_), float(gc), float(ge), float(nu),
            float(scale.intercept_), float(scale.coef_[0]), family=family,
        )

    design = np.column_stack([x.f_ctrl, x.f_ens])
    loc = LinearRegression(positive=True).fit(design, y)
    resid2 = (y - loc.predict(design)) ** 2
    spread_term = x.md if family is Family.TN else x.s2
    scale = LinearRegression(positive=True).fit(spread_term[:, None], resid2)
    c_ctrl, c_ens = np.sqrt(loc.coef_)
    b0 = float(np.sqrt(max(float(scale.intercept_), 1e-6)))
    b1 = float(np.sqrt(scale.coef_[0]))
    if family is Family.TN:
        return TnEmosParams(float(loc.intercept_), float(c_ctrl), float(c_ens), b0, b1)
    return LnEmosParams(max(float(loc.intercept_), 1e-3), float(c_ctrl), float(c_ens), b0, b1)


def _random_start(base: EmosParams, rng: np.random.Generator) -> EmosParams:
    theta = base.to_vector() + rng.normal(0.0, 0.1, size=base.to_vector().shape)
    return params_from_vector(base.family, theta)


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EmosDiagnostics:
    mean_crps: float
    initial_crps: float
    iterations: int
    converged: bool
    n_cases: int
    degenerate: bool = False
    zero_spread_cases: int = 0
    nonpositive_mean_cases: int = 0
    start: str = "init"


@dataclass(frozen=True)
class EmosFit:
    params: EmosParams
    diagnostics: EmosDiagnostics


def _degenerate_params(family: Family, x: EmosPredictors, y: np.ndarray) -> Optional[EmosParams]:
    """Exact point fit for flat ensembles that match the observations, else ``None``."""

    if not (np.all(x.s2 == 0.0) and np.array_equal(y, x.f_ctrl)):
        return None
    if family is Family.TN:
        return TnEmosParams(0.0, 1.0, 0.0, 0.0, 0.0)
    if family is Family.LN:
        if np.any(x.f_ctrl <= 0.0):
            return None
        return LnEmosParams(0.0, 1.0, 0.0, 0.0, 0.0)
    return CensoredEmosParams(
        0.0, 1.0, 0.0, 0.0, float(np.log(SCALE_FLOOR)), 0.0, family=family
    )


def fit_emos(
    train: Sequence[ForecastCase],
    family: Family | str,
    init: Optional[EmosParams] = None,
    *,
    seed: int = 0,
) -> EmosFit:
    """Minimum-CRPS fit over the complete cases of ``train``."""

    complete = [c for c in train if c.is_complete]
    members = np.array([c.forecast.members for c in complete], dtype=float).reshape(-1, 11)
    observations = np.array([c.observation.value for c in complete], dtype=float)
    return fit_emos_arrays(members, observations, family, init, seed=seed)


def fit_emos_arrays(
    members: np.ndarray,
    observations: np.ndarray,
    family: Family | str,
    init: Optional[EmosParams] = None,
    *,
    seed: int = 0,
) -> EmosFit:
    family = Family(family)
    observations = np.asarray(observations, dtype=float)
    mask = np.isfinite(observations)
    if int(mask.sum()) < 2:
        raise InsufficientDataError(f"EMOS needs at least 2 complete cases, got {int(mask.sum())}")
    if init is not None and init.family is not family:
        raise ConfigError(f"initial parameters are {init.family.value}, fitting {family.value}")
    x = EmosPredictors.from_members(np.asarray(members, dtype=float)[mask])
    y = observations[mask]
    objective = _OBJECTIVES[family]
    zero_spread = int(np.sum(x.s2 < S2_FLOOR)) if family.censored else 0
    if zero_spread:
        logging.info(
            "%s fit: %d of %d cases have zero ensemble spread floored to %.1e",
            family.value, zero_spread, len(y), S2_FLOOR,
        )

    point_fit = _degenerate_params(family, x, y)
    if point_fit is not None:
        value = objective(point_fit.to_vector(), x, y)[0]
        logging.warning("Degenerate EMOS window (%d constant cases); scale set to floor", len(y))
        return EmosFit(
            params=point_fit,
            diagnostics=EmosDiagnostics(
                mean_crps=value,
                initial_crps=value,
                iterations=0,
                converged=True,
                n_cases=len(y),
                degenerate=True,
                zero_spread_cases=zero_spread,
                start="degenerate",
            ),
        )

    rng = np.random.default_rng(seed)
    first = init if init is not None else default_params(family, y)
    starts: List[Tuple[str, EmosParams]] = [("init" if init is not None else "default", first)]
    try:
        starts.append(("least_squares", _least_squares_start(family, x, y)))
    except ValueError as exc:
        logging.debug("Least-squares warm start unavailable: %s", exc)
    starts.append(("random", _random_start(first, rng)))

    initial_theta = first.to_vector()
    initial_value = objective(initial_theta, x, y)[0]
    best_name, best_theta, best_value = "init", initial_theta, initial_value
    iterations, converged = 0, False
    for name, start in starts:
        result = minimize(
            objective,
            start.to_vector(),
            args=(x, y),
            jac=True,
            method="L-BFGS-B",
            options=_OPTIMIZER_OPTIONS,
        )
        if not np.isfinite(result.fun):
            continue
        if result.fun < best_value - _MIN_IMPROVEMENT * abs(best_value) or (
            best_name == "init" and result.fun <= best_value
        ):
            best_name, best_theta, best_value = name, result.x, float(result.fun)
            iterations, converged = int(result.nit), bool(result.success)

    if not converged:
        logging.warning("EMOS %s optimizer did not converge; keeping best-found parameters", family.value)

    params = params_from_vector(family, best_theta).canonical()
    nonpositive = 0
    if family is Family.LN:
        nonpositive = int(np.sum(~(_ln_arrays(best_theta, x)[0] > 0.0)))
    diagnostics = EmosDiagnostics(
        mean_crps=best_value,
        initial_crps=initial_value,
        iterations=iterations,
        converged=converged,
        n_cases=len(y),
        zero_spread_cases=zero_spread,
        nonpositive_mean_cases=nonpositive,
        start=best_name,
    )
    log_event("EMOS_FIT", level=logging.DEBUG, family=family.value, **asdict(diagnostics))
    return EmosFit(params=params, diagnostics=diagnostics)


def task_seed(seed: int, key: Hashable) -> int:
    """Deterministic per-task seed independent of scheduling order."""

    digest = zlib.crc32(repr(key).encode("utf-8"))
    return int(np.random.SeedSequence([int(seed), digest]).generate_state(1)[0])


def _fit_task(payload):
    key, members, observations, family, init, seed = payload
    try:
        return key, fit_emos_arrays(members, observations, family, init, seed=seed), None
    except InsufficientDataError as exc:
        return key, None, str(exc)


def fit_many(
    tasks: Mapping[Hashable, Tuple[np.ndarray, np.ndarray]],
    family: Family | str,
    *,
    inits: Optional[Mapping[Hashable, EmosParams]] = None,
    workers: int = 1,
    seed: int = 0,
) -> Dict[Hashable, Optional[EmosFit]]:
    """Fit one EMOS model per task on a process pool.

    Tasks without enough complete cases map to ``None``.
    """

    family = Family(family)
    inits = inits or {}
    payloads = [
        (key, members, obs, family, inits.get(key), task_seed(seed, key))
        for key, (members, obs) in tasks.items()
    ]
    if workers > 1 and len(payloads) > 1:
        with multiprocessing.Pool(min(workers, len(payloads))) as pool:
            results = pool.map(_fit_task, payloads, chunksize=max(1, len(payloads) // (4 * workers)))
    else:
        results = [_fit_task(p) for p in payloads]

    fits: Dict[Hashable, Optional[EmosFit]] = {}
    for key, fit, message in results:
        if message:
            logging.warning("Skipping EMOS fit %s: %s", key, message)
        fits[key] = fit
    return fits


# ---------------------------------------------------------------------------
# Documents
# ---------------------------------------------------------------------------


class EmosDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    version: int = DOCUMENT_VERSION
    kind: Literal["emos"] = "emos"
    family: Family
    scope: str
    lead_minutes: int
    valid_date: str
    params: Dict[str, float]
    diagnostics: Dict[str, Union[bool, int, float, str]] = {}


def params_to_document(
    fit: EmosFit | EmosParams, *, scope: str, lead_minutes: int, valid_date: str
) -> dict:
    params = fit.params if isinstance(fit, EmosFit) else fit
    values = {k: v for k, v in asdict(params).items() if k != "family"}
    diagnostics = asdict(fit.diagnostics) if isinstance(fit, EmosFit) else {}
    doc = EmosDocument(
        family=params.family,
        scope=scope,
        lead_minutes=int(lead_minutes),
        valid_date=valid_date,
        params=values,
        diagnostics=diagnostics,
    )
    return doc.model_dump(mode="json")


def params_from_document(document: Mapping[str, object]) -> EmosParams:
    doc = EmosDocument.model_validate(document)
    if doc.version != DOCUMENT_VERSION:
        raise ConfigError(f"unsupported EMOS document version {doc.version}")
    if doc.family is Family.TN:
        return TnEmosParams(**doc.params)
    if doc.family is Family.LN:
        return LnEmosParams(**doc.params)
    return CensoredEmosParams(**doc.params, family=doc.family)


__all__ = [
    "S2_FLOOR",
    "LN_PENALTY",
    "TnEmosParams",
    "LnEmosParams",
    "CensoredEmosParams",
    "EmosParams",
    "EmosPredictors",
    "EmosDiagnostics",
    "EmosFit",
    "tn_link",
    "ln_link",
    "censored_link",
    "link",
    "predict_arrays",
    "mean_crps",
    "default_params",
    "params_from_vector",
    "fit_emos",
    "fit_emos_arrays",
    "fit_many",
    "task_seed",
    "EmosDocument",
    "params_to_document",
    "params_from_document",
]
