"""Newton-Raphson quantization of a single scalar law."""
import logging
from dataclasses import dataclass, field
from typing import Protocol, Tuple

import numpy as np
from scipy.linalg import solve_banded

from rmq.distributions import ScalarDistribution
from rmq.errors import InvalidGridError, NumericalFailure

logger = logging.getLogger(__name__)

GRADIENT_TOL = 1e-12
DIAG_FLOOR = 1e-12
MAX_HALVINGS = 30


@dataclass(frozen=True)
class RegionBounds:
    lowers: np.ndarray
    uppers: np.ndarray

    @property
    def edges(self):
        return np.append(self.lowers, self.uppers[-1])


@dataclass(frozen=True)
class Quantizer:
    codewords: np.ndarray
    probabilities: np.ndarray
    residual: float = field(default=np.nan, compare=False)

    def __post_init__(self):
        codewords = np.atleast_1d(np.asarray(self.codewords, dtype=float))
        probabilities = np.atleast_1d(np.asarray(self.probabilities, dtype=float))
        if codewords.shape != probabilities.shape:
            raise InvalidGridError(
                f"{codewords.size} codewords but {probabilities.size} probabilities"
            )
        object.__setattr__(self, "codewords", codewords)
        object.__setattr__(self, "probabilities", probabilities)

    def __len__(self):
        return self.codewords.size

    @property
    def mass(self):
        return float(self.probabilities.sum())

    def expectation(self, func=None):
        values = self.codewords if func is None else func(self.codewords)
        return float(self.probabilities @ values)

    def to_dict(self):
        return {
            "codewords": self.codewords.tolist(),
            "probabilities": self.probabilities.tolist(),
        }


@dataclass(frozen=True)
class Tridiagonal:
    """Symmetric tridiagonal matrix stored as its diagonal and off-diagonal."""

    diag: np.ndarray
    off: np.ndarray

    def to_dense(self):
        return np.diag(self.diag) + np.diag(self.off, 1) + np.diag(self.off, -1)

    def floored(self, floor=DIAG_FLOOR):
        return Tridiagonal(np.maximum(self.diag, floor), self.off)

    def solve(self, rhs):
        n = self.diag.size
        if n == 1:
            return rhs / self.diag
        ab = np.zeros((3, n))
        ab[0, 1:] = self.off
        ab[1, :] = self.diag
        ab[2, :-1] = self.off
        return solve_banded((1, 1), ab, rhs)


def check_increasing(codewords):
    codewords = np.atleast_1d(np.asarray(codewords, dtype=float))
    if codewords.ndim != 1 or codewords.size == 0:
        raise InvalidGridError("codewords must be a non-empty vector")
    if not np.all(np.isfinite(codewords)):
        raise InvalidGridError("codewords must be finite")
    if np.any(np.diff(codewords) <= 0):
        raise InvalidGridError("codewords must be strictly increasing")
    return codewords


def region_boundaries(codewords, support=(-np.inf, np.inf)):
    gamma = check_increasing(codewords)
    lo, hi = support
    if gamma[0] < lo or gamma[-1] > hi:
        raise InvalidGridError(f"codewords must lie inside the support [{lo}, {hi}]")
    mid = 0.5 * (gamma[1:] + gamma[:-1])
    return RegionBounds(
        lowers=np.concatenate(([lo], mid)),
        uppers=np.concatenate((mid, [hi])),
    )


def _region_stats(dist, gamma):
    bounds = region_boundaries(gamma, dist.support)
    table = dist.tabulate(bounds.edges)
    p, m = table.intervals()
    return bounds, table, p, m


def _tridiagonal(gamma, mass, boundary_density):
    off = -0.5 * boundary_density * np.diff(gamma)
    diag = 2.0 * mass + np.append(off, 0.0) + np.insert(off, 0, 0.0)
    return Tridiagonal(diag, off)


def distortion(dist: ScalarDistribution, codewords):
    gamma = check_increasing(codewords)
    bounds, _, p, m = _region_stats(dist, gamma)
    second = dist.second_moment(bounds.lowers, bounds.uppers)
    return max(float(np.sum(second - 2.0 * gamma * m + gamma**2 * p)), 0.0)


def distortion_derivatives(dist: ScalarDistribution, codewords):
    """Gradient and tridiagonal Hessian of the distortion from one table of the law."""
    gamma = check_increasing(codewords)
    _, table, p, m = _region_stats(dist, gamma)
    return 2.0 * gamma * p - 2.0 * m, _tridiagonal(gamma, p, table.pdf[1:-1])


def distortion_gradient(dist: ScalarDistribution, codewords):
    return distortion_derivatives(dist, codewords)[0]


def distortion_hessian(dist: ScalarDistribution, codewords):
    return distortion_derivatives(dist, codewords)[1]


def centroids(dist: ScalarDistribution, codewords):
    """Conditional means of the Voronoi regions; empty regions keep their codeword."""
    gamma = check_increasing(codewords)
    _, _, p, m = _region_stats(dist, gamma)
    filled = p > 1e-300
    return np.where(filled, m / np.where(filled, p, 1.0), gamma)


class NewtonProblem(Protocol):
    def derivatives(self, gamma: np.ndarray) -> Tuple[np.ndarray, Tridiagonal]: ...

    def centroids(self, gamma: np.ndarray) -> np.ndarray: ...

    def admissible(self, gamma: np.ndarray) -> bool: ...


def damped_newton(problem: NewtonProblem, gamma0, n_max, tol=GRADIENT_TOL, label="vq"):
    """Run at most ``n_max`` safeguarded Newton iterations.

    A step is halved (up to MAX_HALVINGS times) while it breaks codeword
    ordering or raises the gradient sup-norm; if no fraction is accepted the
    iteration becomes a Lloyd centroid step. The Hessian of an accepted
    candidate is kept for the next iteration, so every grid visited costs one
    ``derivatives`` call. Returns (codewords, sup-norm).
    """
    gamma = np.asarray(gamma0, dtype=float).copy()
    grad, hess = problem.derivatives(gamma)
    norm = float(np.max(np.abs(grad)))
    for iteration in range(n_max):
        if not np.isfinite(norm):
            raise NumericalFailure(f"{label}: non-finite gradient at iteration {iteration}")
        if norm < tol:
            logger.debug(f"{label}: converged after {iteration} iterations, residual {norm:.3e}")
            break
        step = hess.floored().solve(grad)
        scale = 1.0
        for _ in range(MAX_HALVINGS + 1):
            candidate = gamma - scale * step
            if np.all(np.isfinite(candidate)) and problem.admissible(candidate):
                cand_grad, cand_hess = problem.derivatives(candidate)
                cand_norm = float(np.max(np.abs(cand_grad)))
                if cand_norm <= norm:
                    gamma, grad, hess, norm = candidate, cand_grad, cand_hess, cand_norm
                    break
            scale *= 0.5
        else:
            lloyd = problem.centroids(gamma)
            if not problem.admissible(lloyd):
                logger.warning(f"{label}: Lloyd fallback left the admissible set, keeping iterate")
                break
            logger.debug(f"{label}: Newton step rejected at iteration {iteration}, Lloyd step taken")
            gamma = lloyd
            grad, hess = problem.derivatives(gamma)
            norm = float(np.max(np.abs(grad)))
        logger.debug(f"{label}: iteration {iteration + 1}, residual {norm:.3e}, damping {scale:g}")
    return gamma, norm


class _SingleLawProblem:
    def __init__(self, dist: ScalarDistribution):
        self.dist = dist

    def derivatives(self, gamma):
        return distortion_derivatives(self.dist, gamma)

    def centroids(self, gamma):
        return centroids(self.dist, gamma)

    def admissible(self, gamma):
        lo, hi = self.dist.support
        return bool(np.all(np.diff(gamma) > 0) and gamma[0] > lo and gamma[-1] < hi)


def newton_quantize(dist: ScalarDistribution, gamma0, n_max, tol=GRADIENT_TOL):
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    gamma0 = check_increasing(gamma0)
    problem = _SingleLawProblem(dist)
    if not problem.admissible(gamma0):
        raise InvalidGridError("initial codewords must lie strictly inside the support")
    gamma, residual = damped_newton(problem, gamma0, n_max, tol=tol, label=f"vq[{dist.name}]")
    bounds = region_boundaries(gamma, dist.support)
    return Quantizer(gamma, dist.mass(bounds.lowers, bounds.uppers), residual=residual)


def initial_guess(family, n, lam=0.0):
    """Starting codewords for the normal and one-degree noncentral chi-squared laws."""
    if n < 1:
        raise ValueError("cardinality must be at least 1")
    idx = np.arange(1, n + 1, dtype=float)
    if family == "normal":
        return 5.5 * idx / (n + 1) - 2.75
    if family == "ncx2":
        if lam < 0:
            raise ValueError("noncentrality must be >= 0")
        root = np.sqrt(lam)
        if root < 2.5:
            return ((3.0 + root) * idx / n) ** 2
        return (5.0 * idx / (n + 1) - 2.5 + root) ** 2
    raise ValueError(f"unknown family {family!r}")
