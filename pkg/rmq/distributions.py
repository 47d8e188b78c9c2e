"""Evaluable scalar laws: standard normal, noncentral chi-squared with one degree
of freedom, and the truncated / reflected variants used at the zero boundary.

Every law carries pdf, cdf, survival function, first lower partial expectation
M1(x) = E[X 1{X<x}] and its upper counterpart, plus an optional second lower
partial expectation. All callables broadcast, so parameters may be column
vectors (one law per row) evaluated against a matrix of points.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import special

from rmq.errors import DistributionError, MissingMomentError

logger = logging.getLogger(__name__)

SQRT_2PI = np.sqrt(2.0 * np.pi)

Func = Callable[[np.ndarray], np.ndarray]


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / SQRT_2PI


def norm_cdf(x):
    return special.ndtr(x)


def _mul(a, b):
    # 0 * inf is 0 here: density factors vanish at infinite arguments
    with np.errstate(invalid="ignore"):
        out = np.multiply(a, b)
    return np.where((np.asarray(a) == 0) | (np.asarray(b) == 0), 0.0, out)


@dataclass(frozen=True)
class EdgeTable:
    """Law functions evaluated once at a sorted set of region edges.

    The last axis runs over edges; leading axes broadcast with the law's
    parameters.
    """

    cdf: np.ndarray
    sf: np.ndarray
    m1: np.ndarray
    upper1: np.ndarray
    pdf: np.ndarray

    def intervals(self, ascending=True):
        """(mass, partial mean) of the intervals between consecutive edges.

        Each interval is differenced on the survival side when its lower end
        already lies in the upper tail. With ``ascending=False`` the edges run
        from high to low and interval j spans edges j+1 to j.
        """
        lo, hi = (slice(None, -1), slice(1, None)) if ascending else (slice(1, None), slice(None, -1))
        upper_tail = self.cdf[..., lo] > 0.5
        mass = np.where(upper_tail, self.sf[..., lo] - self.sf[..., hi], self.cdf[..., hi] - self.cdf[..., lo])
        mean = np.where(
            upper_tail, self.upper1[..., lo] - self.upper1[..., hi], self.m1[..., hi] - self.m1[..., lo]
        )
        return np.maximum(mass, 0.0), mean


@dataclass(frozen=True)
class ScalarDistribution:
    pdf: Func
    cdf: Func
    sf: Func
    m1: Func
    upper1: Func
    lo: float = -np.inf
    hi: float = np.inf
    m2: Optional[Func] = None
    name: str = ""
    table: Optional[Callable[[np.ndarray], EdgeTable]] = None

    @property
    def support(self):
        return self.lo, self.hi

    def tabulate(self, x):
        if self.table is not None:
            return self.table(np.asarray(x, dtype=float))
        return EdgeTable(self.cdf(x), self.sf(x), self.m1(x), self.upper1(x), self.pdf(x))

    def mass(self, a, b):
        """P(a < X <= b), differenced on the survival side in the upper tail."""
        fa = self.cdf(a)
        upper_tail = fa > 0.5
        out = np.where(upper_tail, self.sf(a) - self.sf(b), self.cdf(b) - fa)
        return np.maximum(out, 0.0)

    def partial_mean(self, a, b):
        """E[X 1{a < X <= b}]."""
        upper_tail = self.cdf(a) > 0.5
        return np.where(upper_tail, self.upper1(a) - self.upper1(b), self.m1(b) - self.m1(a))

    def second_moment(self, a, b):
        if self.m2 is None:
            raise MissingMomentError(f"{self.name or 'distribution'} has no second partial expectation")
        return self.m2(b) - self.m2(a)


@dataclass(frozen=True)
class Ncx2Params:
    lam: object

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        if np.any(~np.isfinite(lam)) or np.any(lam < 0):
            raise DistributionError(f"noncentrality must be finite and >= 0, got {self.lam!r}")


def std_normal_funcs():
    def m2(x):
        x = np.asarray(x, dtype=float)
        return norm_cdf(x) - _mul(x, norm_pdf(x))

    def table(x):
        cdf, sf = _normal_tails(x)
        density = norm_pdf(x)
        return EdgeTable(cdf=cdf, sf=sf, m1=-density, upper1=density, pdf=density)

    return ScalarDistribution(
        pdf=norm_pdf,
        cdf=norm_cdf,
        sf=lambda x: norm_cdf(-np.asarray(x, dtype=float)),
        m1=lambda x: -norm_pdf(x),
        upper1=norm_pdf,
        m2=m2,
        name="normal",
        table=table,
    )


def _normal_tails(x):
    """(Phi(x), Phi(-x)) from a single ndtr call on the smaller tail."""
    small = norm_cdf(-np.abs(x))
    below = x < 0
    return np.where(below, small, 1.0 - small), np.where(below, 1.0 - small, small)


def _normal_partial_moments(a, b, order):
    """J_n = int_a^b z^n phi(z) dz for n = 0..order."""
    pa, pb = norm_pdf(a), norm_pdf(b)
    moments = [norm_cdf(b) - norm_cdf(a), pa - pb]
    for n in range(2, order + 1):
        moments.append(
            _mul(np.power(a, n - 1), pa) - _mul(np.power(b, n - 1), pb) + (n - 1) * moments[n - 2]
        )
    return moments


def ncx2_1_funcs(params: Ncx2Params):
    """Noncentral chi-squared with one degree of freedom, X = (Z + sqrt(lam))^2."""
    lam = np.asarray(params.lam, dtype=float)
    mu = np.sqrt(lam)

    def _split(x):
        x = np.asarray(x, dtype=float)
        s = np.sqrt(np.maximum(x, 0.0))
        return x, s, s - mu, -s - mu

    def pdf(x):
        x, s, xp, xm = _split(x)
        s_safe = np.where(s > 0, s, 1.0)
        return np.where(x > 0, (norm_pdf(xp) + norm_pdf(xm)) / (2.0 * s_safe), 0.0)

    def cdf(x):
        _, _, xp, xm = _split(x)
        return norm_cdf(xp) - norm_cdf(xm)

    def sf(x):
        _, _, xp, xm = _split(x)
        return norm_cdf(-xp) + norm_cdf(xm)

    def _tail_terms(xp, xm):
        return _mul(norm_pdf(xp), xm) - _mul(norm_pdf(xm), xp)

    def m1(x):
        _, _, xp, xm = _split(x)
        return (1.0 + lam) * (norm_cdf(xp) - norm_cdf(xm)) + _tail_terms(xp, xm)

    def upper1(x):
        _, _, xp, xm = _split(x)
        return (1.0 + lam) * (norm_cdf(-xp) + norm_cdf(xm)) - _tail_terms(xp, xm)

    def m2(x):
        _, _, xp, xm = _split(x)
        j = _normal_partial_moments(xm, xp, 4)
        return (
            mu**4 * j[0]
            + 4.0 * mu**3 * j[1]
            + 6.0 * mu**2 * j[2]
            + 4.0 * mu * j[3]
            + j[4]
        )

    def table(x):
        x, s, xp, xm = _split(x)
        below_p, above_p = _normal_tails(xp)
        below_m = norm_cdf(xm)
        dp, dm = norm_pdf(xp), norm_pdf(xm)
        cdf = below_p - below_m
        sf = above_p + below_m
        tail = _mul(dp, xm) - _mul(dm, xp)
        s_safe = np.where(s > 0, s, 1.0)
        return EdgeTable(
            cdf=cdf,
            sf=sf,
            m1=(1.0 + lam) * cdf + tail,
            upper1=(1.0 + lam) * sf - tail,
            pdf=np.where(x > 0, (dp + dm) / (2.0 * s_safe), 0.0),
        )

    return ScalarDistribution(
        pdf=pdf, cdf=cdf, sf=sf, m1=m1, upper1=upper1, m2=m2, lo=0.0, hi=np.inf, name="ncx2", table=table
    )


def reflect_funcs(base: ScalarDistribution, xbar, upper=True):
    """Fold the mass of ``base`` across ``xbar``.

    With ``upper`` the result lives on [xbar, inf), otherwise on (-inf, xbar].
    m1, upper1 and m2 drop per-law constants; only their differences are
    meaningful.
    """
    xbar = np.asarray(xbar, dtype=float)
    clamp = np.maximum if upper else np.minimum

    def _fold(x):
        y = clamp(np.asarray(x, dtype=float), xbar)
        return y, 2.0 * xbar - y

    def pdf(x):
        x = np.asarray(x, dtype=float)
        inside = x >= xbar if upper else x <= xbar
        y, v = _fold(x)
        return np.where(inside, base.pdf(y) + base.pdf(v), 0.0)

    if upper:
        def cdf(x):
            y, v = _fold(x)
            return base.cdf(y) - base.cdf(v)

        def sf(x):
            y, v = _fold(x)
            return base.sf(y) + base.cdf(v)
    else:
        def cdf(x):
            y, v = _fold(x)
            return base.cdf(y) + base.sf(v)

        def sf(x):
            y, v = _fold(x)
            return base.sf(y) - base.sf(v)

    def m1(x):
        y, v = _fold(x)
        return base.m1(y) + base.m1(v) - 2.0 * xbar * base.cdf(v)

    def upper1(x):
        y, v = _fold(x)
        return base.upper1(y) - base.m1(v) + 2.0 * xbar * base.cdf(v)

    m2 = None
    if base.m2 is not None:
        def m2(x):
            y, v = _fold(x)
            return base.m2(y) - 4.0 * xbar**2 * base.cdf(v) + 4.0 * xbar * base.m1(v) - base.m2(v)

    def table(x):
        inside = x >= xbar if upper else x <= xbar
        y, v = _fold(x)
        ty, tv = base.tabulate(y), base.tabulate(v)
        if upper:
            cdf, sf = ty.cdf - tv.cdf, ty.sf + tv.cdf
        else:
            cdf, sf = ty.cdf + tv.sf, ty.sf - tv.sf
        return EdgeTable(
            cdf=cdf,
            sf=sf,
            m1=ty.m1 + tv.m1 - 2.0 * xbar * tv.cdf,
            upper1=ty.upper1 - tv.m1 + 2.0 * xbar * tv.cdf,
            pdf=np.where(inside, ty.pdf + tv.pdf, 0.0),
        )

    lo, hi = (xbar, base.hi) if upper else (base.lo, xbar)
    return ScalarDistribution(
        pdf=pdf, cdf=cdf, sf=sf, m1=m1, upper1=upper1, m2=m2, lo=lo, hi=hi,
        name=f"reflected {base.name}".strip(), table=table,
    )


def truncate_funcs(base: ScalarDistribution, xbar, upper=True):
    """Keep only the mass of ``base`` above (``upper``) or below ``xbar``.

    The result is not renormalised: the removed mass is the absorbed mass.
    """
    xbar = np.asarray(xbar, dtype=float)
    clamp = np.maximum if upper else np.minimum

    def pdf(x):
        x = np.asarray(x, dtype=float)
        inside = x >= xbar if upper else x <= xbar
        return np.where(inside, base.pdf(x), 0.0)

    def _y(x):
        return clamp(np.asarray(x, dtype=float), xbar)

    if upper:
        cdf = lambda x: base.cdf(_y(x)) - base.cdf(xbar)
        sf = lambda x: base.sf(_y(x))
        m1 = lambda x: base.m1(_y(x)) - base.m1(xbar)
        upper1 = lambda x: base.upper1(_y(x))
        m2 = None if base.m2 is None else (lambda x: base.m2(_y(x)) - base.m2(xbar))
        lo, hi = np.maximum(xbar, base.lo), base.hi
    else:
        cdf = lambda x: base.cdf(_y(x))
        sf = lambda x: base.sf(_y(x)) - base.sf(xbar)
        m1 = lambda x: base.m1(_y(x))
        upper1 = lambda x: base.upper1(_y(x)) - base.upper1(xbar)
        m2 = None if base.m2 is None else (lambda x: base.m2(_y(x)))
        lo, hi = base.lo, np.minimum(xbar, base.hi)

    return ScalarDistribution(
        pdf=pdf, cdf=cdf, sf=sf, m1=m1, upper1=upper1, m2=m2, lo=lo, hi=hi,
        name=f"truncated {base.name}".strip(),
    )
