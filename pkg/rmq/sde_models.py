"""Scalar diffusion models dX = a(X) dt + b(X) dW with the derivatives the
higher-order schemes need."""
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from rmq.distributions import ScalarDistribution, norm_cdf, norm_pdf
from rmq.errors import ModelDomainError

logger = logging.getLogger(__name__)

EVAL_FLOOR = 1e-12

Coefficient = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SdeModel:
    name: str
    a: Coefficient
    da: Coefficient
    d2a: Coefficient
    b: Coefficient
    db: Coefficient
    d2b: Coefficient
    state_domain: tuple = (-np.inf, np.inf)
    params: dict = field(default_factory=dict)
    # (x, dt, z) -> x_next sampled from the exact transition, if known
    exact_step: Optional[Callable] = None

    def to_dict(self):
        return {"name": self.name, **self.params}


@dataclass(frozen=True)
class GbmParams:
    s0: float = 100.0
    r: float = 0.05
    sigma: float = 0.3

    def __post_init__(self):
        if self.s0 <= 0:
            raise ModelDomainError(f"s0 must be positive, got {self.s0}")
        if self.sigma <= 0:
            raise ModelDomainError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class CevParams:
    s0: float = 100.0
    r: float = 0.05
    alpha: float = 0.7
    sigma_ln: float = 0.3

    def __post_init__(self):
        if self.s0 <= 0:
            raise ModelDomainError(f"s0 must be positive, got {self.s0}")
        if not 0 < self.alpha < 1:
            raise ModelDomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.sigma_ln <= 0:
            raise ModelDomainError(f"sigma_ln must be positive, got {self.sigma_ln}")

    @property
    def sigma(self):
        return self.sigma_ln * self.s0 ** (1.0 - self.alpha)


def _constant(value):
    return lambda x: np.full(np.shape(x), value, dtype=float)


def gbm_model(p: GbmParams):
    r, sigma = p.r, p.sigma

    def exact_step(x, dt, z):
        return x * np.exp((r - 0.5 * sigma**2) * dt + sigma * np.sqrt(dt) * z)

    return SdeModel(
        name="gbm",
        a=lambda x: r * np.asarray(x, dtype=float),
        da=_constant(r),
        d2a=_constant(0.0),
        b=lambda x: sigma * np.asarray(x, dtype=float),
        db=_constant(sigma),
        d2b=_constant(0.0),
        state_domain=(0.0, np.inf),
        params={"s0": p.s0, "r": r, "sigma": sigma},
        exact_step=exact_step,
    )


def _positive(x):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ModelDomainError("CEV coefficients are only defined for positive states")
    return np.maximum(x, EVAL_FLOOR)


def cev_model(p: CevParams):
    r, alpha, sigma = p.r, p.alpha, p.sigma

    def b(x):
        return sigma * _positive(x) ** alpha

    def db(x):
        return sigma * alpha * _positive(x) ** (alpha - 1.0)

    def d2b(x):
        return sigma * alpha * (alpha - 1.0) * _positive(x) ** (alpha - 2.0)

    return SdeModel(
        name="cev",
        a=lambda x: r * np.asarray(x, dtype=float),
        da=_constant(r),
        d2a=_constant(0.0),
        b=b,
        db=db,
        d2b=d2b,
        state_domain=(0.0, np.inf),
        params={"s0": p.s0, "r": r, "alpha": alpha, "sigma_ln": p.sigma_ln, "sigma": sigma},
    )


def gbm_exact_marginal(p: GbmParams, t):
    """Lognormal law of S_t."""
    if t <= 0:
        raise ValueError("t must be positive")
    vol = p.sigma * np.sqrt(t)
    drift = np.log(p.s0) + (p.r - 0.5 * p.sigma**2) * t
    mean = p.s0 * np.exp(p.r * t)
    second = p.s0**2 * np.exp((2.0 * p.r + p.sigma**2) * t)

    def _d(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            logx = np.where(x > 0, np.log(np.where(x > 0, x, 1.0)), -np.inf)
        return x, (logx - drift) / vol

    def pdf(x):
        x, d = _d(x)
        x_safe = np.where(x > 0, x, 1.0)
        return np.where(x > 0, norm_pdf(d) / (x_safe * vol), 0.0)

    def cdf(x):
        return norm_cdf(_d(x)[1])

    def sf(x):
        return norm_cdf(-_d(x)[1])

    def m1(x):
        return mean * norm_cdf(_d(x)[1] - vol)

    def upper1(x):
        return mean * norm_cdf(vol - _d(x)[1])

    def m2(x):
        return second * norm_cdf(_d(x)[1] - 2.0 * vol)

    return ScalarDistribution(
        pdf=pdf, cdf=cdf, sf=sf, m1=m1, upper1=upper1, m2=m2, lo=0.0, hi=np.inf, name="lognormal"
    )
