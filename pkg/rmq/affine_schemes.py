"""One-step updates written in the affine form U = m Z + c.

Euler updates have a standard normal innovation; the Milstein and simplified
weak order 2.0 updates are completed squares whose innovation is a noncentral
chi-squared variable with one degree of freedom.
"""
import enum
import logging
from dataclasses import dataclass

import numpy as np

from rmq.sde_models import SdeModel

logger = logging.getLogger(__name__)

DEGENERACY_TOL = 1e-12


class InnovationKind(enum.Enum):
    GAUSSIAN = "gaussian"
    NCX2 = "ncx2"


@dataclass(frozen=True)
class InnovationLaw:
    kind: InnovationKind
    lam: float = np.nan

    def __post_init__(self):
        if self.kind is InnovationKind.NCX2 and not self.lam >= 0:
            raise ValueError(f"noncentral innovation needs lam >= 0, got {self.lam}")

    def mean(self):
        return 0.0 if self.kind is InnovationKind.GAUSSIAN else 1.0 + self.lam

    def variance(self):
        return 1.0 if self.kind is InnovationKind.GAUSSIAN else 2.0 * (1.0 + 2.0 * self.lam)


@dataclass(frozen=True)
class AffineUpdate:
    """Affine updates for a vector of codewords.

    ``lam`` is NaN on rows with a Gaussian innovation. ``fallback`` flags rows
    of a chi-squared scheme that were degenerate and received the Euler update.
    """

    m: np.ndarray
    c: np.ndarray
    lam: np.ndarray
    fallback: np.ndarray

    def __post_init__(self):
        for name in ("m", "c", "lam"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        object.__setattr__(self, "fallback", np.atleast_1d(np.asarray(self.fallback, dtype=bool)))

    def __len__(self):
        return self.m.size

    def __getitem__(self, idx):
        return AffineUpdate(self.m[idx], self.c[idx], self.lam[idx], self.fallback[idx])

    @property
    def gaussian(self):
        return np.isnan(self.lam)

    def law(self, i):
        if self.gaussian[i]:
            return InnovationLaw(InnovationKind.GAUSSIAN)
        return InnovationLaw(InnovationKind.NCX2, float(self.lam[i]))

    def mean(self):
        """Conditional mean m E[Z] + c per codeword."""
        return np.where(self.gaussian, self.c, self.m * (1.0 + np.nan_to_num(self.lam)) + self.c)

    def variance(self):
        lam = np.nan_to_num(self.lam)
        return np.where(self.gaussian, self.m**2, 2.0 * self.m**2 * (1.0 + 2.0 * lam))


def euler_update(model: SdeModel, gamma, dt):
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    m = model.b(gamma) * np.sqrt(dt)
    c = gamma + model.a(gamma) * dt
    return AffineUpdate(m, c, np.full_like(gamma, np.nan), np.zeros_like(gamma, dtype=bool))


def _completed_square(model, gamma, dt, linear, drift_extra, scheme):
    """Rewrite  gamma + (a - bb'/2) dt + drift_extra + (bb'/2) dt Z^2 + linear sqrt(dt) Z."""
    b = model.b(gamma)
    db = model.db(gamma)
    bdb = b * db
    degenerate = np.abs(bdb * dt) < DEGENERACY_TOL * np.maximum(1.0, np.abs(gamma))
    safe = np.where(degenerate, 1.0, bdb)

    m = 0.5 * bdb * dt
    c = gamma + (model.a(gamma) - 0.5 * bdb) * dt + drift_extra - linear**2 / (2.0 * safe)
    lam = (linear / (safe * np.sqrt(dt))) ** 2

    if np.any(degenerate):
        logger.warning(
            f"{scheme}: {int(degenerate.sum())} degenerate codeword(s), using the Euler update there"
        )
        euler = euler_update(model, gamma, dt)
        m = np.where(degenerate, euler.m, m)
        c = np.where(degenerate, euler.c, c)
        lam = np.where(degenerate, np.nan, lam)
    return AffineUpdate(m, c, lam, degenerate)


def milstein_update(model: SdeModel, gamma, dt):
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    return _completed_square(model, gamma, dt, model.b(gamma), 0.0, "milstein")


def weak2_update(model: SdeModel, gamma, dt):
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    a, da, d2a = model.a(gamma), model.da(gamma), model.d2a(gamma)
    b, db, d2b = model.b(gamma), model.db(gamma), model.d2b(gamma)
    linear = b + 0.5 * (da * b + a * db + 0.5 * d2b * b**2) * dt
    drift_extra = 0.5 * (a * da + 0.5 * d2a * b**2) * dt**2
    return _completed_square(model, gamma, dt, linear, drift_extra, "weak2")


SCHEMES = {
    "euler": euler_update,
    "milstein": milstein_update,
    "weak2": weak2_update,
}


def scheme_update(name):
    try:
        return SCHEMES[name]
    except KeyError:
        raise ValueError(f"unknown scheme {name!r}; expected one of {sorted(SCHEMES)}") from None
