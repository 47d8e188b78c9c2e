"""Recursive marginal quantization.

Each step quantizes the conditional mixture  sum_i p_i Law(m_i Z_i + c_i)
implied by the previous quantizer and the scheme's affine update, then
propagates probabilities through the resulting transition matrix.
"""
import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from rmq.affine_schemes import AffineUpdate, scheme_update
from rmq.distributions import (
    Ncx2Params,
    ncx2_1_funcs,
    reflect_funcs,
    std_normal_funcs,
    truncate_funcs,
)
from rmq.errors import ConfigError, InvalidGridError, NegativeCodewordError, NumericalFailure
from rmq.sde_models import SdeModel
from rmq.vq1d import (
    GRADIENT_TOL,
    Quantizer,
    RegionBounds,
    Tridiagonal,
    check_increasing,
    damped_newton,
    initial_guess,
    newton_quantize,
    region_boundaries,
)

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-14
BLOCK_ROWS = 64


class BoundaryMode(enum.Enum):
    FREE = "free"
    ABSORBING = "absorbing"
    REFLECTING = "reflecting"

    @property
    def state_support(self):
        if self is BoundaryMode.FREE:
            return -np.inf, np.inf
        return 0.0, np.inf

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(
                f"unknown boundary mode {value!r}; expected one of {[m.value for m in cls]}"
            ) from None


@dataclass(frozen=True)
class Schedule:
    T: float
    K: int
    n_per_step: tuple
    n_max_vq: int = 50
    n_max_rmq: int = 5

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigError(f"horizon T must be positive, got {self.T}")
        if self.K < 1:
            raise ConfigError(f"K must be at least 1, got {self.K}")
        sizes = tuple(int(n) for n in self.n_per_step)
        if len(sizes) != self.K:
            raise ConfigError(f"need {self.K} cardinalities, got {len(sizes)}")
        if min(sizes) < 1:
            raise ConfigError("every cardinality must be at least 1")
        if self.n_max_vq < 0 or self.n_max_rmq < 0:
            raise ConfigError("iteration counts must be non-negative")
        object.__setattr__(self, "n_per_step", sizes)

    @classmethod
    def uniform(cls, T=1.0, K=12, N=200, n_max_vq=50, n_max_rmq=5):
        return cls(T=T, K=K, n_per_step=(N,) * K, n_max_vq=n_max_vq, n_max_rmq=n_max_rmq)

    @property
    def dt(self):
        return self.T / self.K

    def time(self, k):
        return k * self.dt

    def to_dict(self):
        return {
            "T": self.T,
            "K": self.K,
            "n_per_step": list(self.n_per_step),
            "n_max_vq": self.n_max_vq,
            "n_max_rmq": self.n_max_rmq,
        }


@dataclass(frozen=True)
class TransitionSet:
    """Transition data from one grid to the next.

    P[i, j] is the probability of moving from codeword i into region j; M[i, j]
    is E[Z_i 1{m_i Z_i + c_i in region j}] and f[i, j] the density of Z_i at the
    normalized interior boundary j. M and f are absent on reloaded sequences.
    """

    P: np.ndarray
    M: Optional[np.ndarray] = None
    f: Optional[np.ndarray] = None

    @property
    def row_sums(self):
        return self.P.sum(axis=1)


@dataclass(frozen=True)
class QuantizationStep:
    k: int
    time: float
    quantizer: Quantizer
    transitions: TransitionSet
    updates: AffineUpdate
    zero_mass: float = 0.0


@dataclass(frozen=True)
class QuantizationSequence:
    s0: float
    scheme: str
    boundary: BoundaryMode
    schedule: Schedule
    steps: tuple
    model: dict = field(default_factory=dict)

    @property
    def K(self):
        return len(self.steps)

    @property
    def absorbing(self):
        return self.boundary is BoundaryMode.ABSORBING

    def step(self, k):
        if not 1 <= k <= self.K:
            raise IndexError(f"step {k} outside 1..{self.K}")
        return self.steps[k - 1]

    def previous_quantizer(self, k):
        if k == 1:
            return Quantizer([self.s0], [1.0])
        return self.step(k - 1).quantizer

    def states(self, k):
        """Codewords of step k; under absorption the zero state comes first."""
        if k == 0:
            return np.array([self.s0])
        live = self.step(k).quantizer.codewords
        return np.concatenate(([0.0], live)) if self.absorbing else live

    def probabilities(self, k):
        if k == 0:
            return np.array([1.0])
        step = self.step(k)
        live = step.quantizer.probabilities
        return np.concatenate(([step.zero_mass], live)) if self.absorbing else live

    def kernel(self, k):
        """Markov kernel from states(k - 1) to states(k)."""
        P = self.step(k).transitions.P
        if not self.absorbing:
            return P
        live = np.hstack((np.maximum(1.0 - P.sum(axis=1, keepdims=True), 0.0), P))
        if k == 1:
            return live
        trap = np.zeros((1, live.shape[1]))
        trap[0, 0] = 1.0
        return np.vstack((trap, live))

    def implied_cdf(self, k, x):
        prev_zero = self.step(k - 1).zero_mass if k > 1 else 0.0
        return implied_marginal_cdf(
            x,
            self.previous_quantizer(k),
            self.step(k).updates,
            boundary=self.boundary,
            zero_mass=prev_zero,
        )

    def to_dict(self):
        return {
            "s0": self.s0,
            "scheme": self.scheme,
            "boundary": self.boundary.value,
            "model": dict(self.model),
            "schedule": self.schedule.to_dict(),
            "steps": [
                {
                    "step": s.k,
                    "time": s.time,
                    "codewords": s.quantizer.codewords.tolist(),
                    "probabilities": s.quantizer.probabilities.tolist(),
                    "zero_mass": s.zero_mass,
                    "residual": s.quantizer.residual,
                    "transitions": s.transitions.P.tolist(),
                    "updates": {
                        "m": s.updates.m.tolist(),
                        "c": s.updates.c.tolist(),
                        "lam": [None if np.isnan(v) else v for v in s.updates.lam.tolist()],
                    },
                }
                for s in self.steps
            ],
        }


def _check_updates(updates: AffineUpdate):
    if np.any(updates.m == 0) or not np.all(np.isfinite(updates.m)):
        raise NumericalFailure("affine update has a zero or non-finite scale")


def normalized_bounds(updates: AffineUpdate, bounds: RegionBounds):
    """Region bounds in innovation space, one row per update.

    Returns ascending (lower, upper) pairs: for m < 0 the state-space upper
    bound maps to the lower innovation bound.
    """
    _check_updates(updates)
    m = updates.m[:, None]
    c = updates.c[:, None]
    lo = (bounds.lowers[None, :] - c) / m
    hi = (bounds.uppers[None, :] - c) / m
    positive = m > 0
    return np.where(positive, lo, hi), np.where(positive, hi, lo)


def _row_laws(updates: AffineUpdate, boundary: BoundaryMode):
    """Yield (row mask, law) pairs; each law broadcasts over its rows as a column."""
    positive_rows = updates.m > 0
    for gaussian in (True, False):
        for positive in (True, False):
            mask = (updates.gaussian == gaussian) & (positive_rows == positive)
            if not mask.any():
                continue
            if gaussian:
                base = std_normal_funcs()
            else:
                base = ncx2_1_funcs(Ncx2Params(updates.lam[mask][:, None]))
            if boundary is BoundaryMode.REFLECTING:
                xbar = (-updates.c[mask] / updates.m[mask])[:, None]
                yield mask, reflect_funcs(base, xbar, upper=positive)
            else:
                yield mask, base


def _transition_rows(updates, codewords, boundary):
    """P, M and f from one table of each row law at the normalized region edges."""
    _check_updates(updates)
    bounds = region_boundaries(codewords, boundary.state_support)
    z = (bounds.edges[None, :] - updates.c[:, None]) / updates.m[:, None]
    n_rows, n = z.shape[0], z.shape[1] - 1
    P = np.empty((n_rows, n))
    M = np.empty((n_rows, n))
    f = np.empty((n_rows, n - 1))
    for mask, law in _row_laws(updates, boundary):
        table = law.tabulate(z[mask])
        # m < 0 reverses the edges in innovation space
        P[mask], M[mask] = table.intervals(ascending=bool(updates.m[mask][0] > 0))
        f[mask] = table.pdf[:, 1:-1]
    return TransitionSet(P, M, f)


def transition_set(prev: Quantizer, updates: AffineUpdate, next_codewords, boundary=BoundaryMode.FREE):
    gamma = check_increasing(next_codewords)
    if len(updates) != len(prev):
        raise InvalidGridError(f"{len(updates)} updates for {len(prev)} codewords")
    if boundary is not BoundaryMode.FREE and gamma[0] <= 0:
        raise InvalidGridError(f"codewords must be positive under the {boundary.value} boundary")
    return _transition_rows(updates, gamma, boundary)


class MixtureProblem:
    """Distortion of the next grid under the conditional mixture of one step.

    Rows are evaluated in fixed blocks and reduced in block order, so the
    result does not depend on the number of worker threads.
    """

    def __init__(self, prev: Quantizer, updates: AffineUpdate, boundary=BoundaryMode.FREE, threads=1):
        if len(updates) != len(prev):
            raise InvalidGridError(f"{len(updates)} updates for {len(prev)} codewords")
        _check_updates(updates)
        active = prev.probabilities >= PROB_FLOOR
        self.weights = prev.probabilities[active]
        self.updates = updates[active]
        self.boundary = boundary
        self.threads = max(1, int(threads))
        n = self.weights.size
        self.blocks = [slice(s, min(s + BLOCK_ROWS, n)) for s in range(0, n, BLOCK_ROWS)]

    def _reduce(self, gamma, reducer):
        def work(block):
            upd = self.updates[block]
            return reducer(self.weights[block], upd, _transition_rows(upd, gamma, self.boundary))

        if self.threads > 1 and len(self.blocks) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                parts = list(pool.map(work, self.blocks))
        else:
            parts = [work(b) for b in self.blocks]
        total = parts[0]
        for part in parts[1:]:
            total = tuple(a + b for a, b in zip(total, part))
        return total

    def derivatives(self, gamma):
        """Gradient and tridiagonal Hessian from a single set of transition rows."""

        def reducer(w, upd, ts):
            terms = (gamma[None, :] - upd.c[:, None]) * ts.P - upd.m[:, None] * ts.M
            return 2.0 * (w @ terms), w @ ts.P, w @ (ts.f / np.abs(upd.m)[:, None])

        grad, mass, density = self._reduce(gamma, reducer)
        off = -0.5 * density * np.diff(gamma)
        diag = 2.0 * mass + np.append(off, 0.0) + np.insert(off, 0, 0.0)
        return grad, Tridiagonal(diag, off)

    def gradient(self, gamma):
        return self.derivatives(gamma)[0]

    def hessian(self, gamma):
        return self.derivatives(gamma)[1]

    def centroids(self, gamma):
        def reducer(w, upd, ts):
            return w @ (upd.c[:, None] * ts.P + upd.m[:, None] * ts.M), w @ ts.P

        num, den = self._reduce(gamma, reducer)
        filled = den > 1e-300
        return np.where(filled, num / np.where(filled, den, 1.0), gamma)

    def distortion(self, gamma):
        bounds = region_boundaries(gamma, self.boundary.state_support)

        def reducer(w, upd, ts):
            lower, upper = normalized_bounds(upd, bounds)
            second = np.empty_like(ts.P)
            for mask, law in _row_laws(upd, self.boundary):
                second[mask] = law.second_moment(lower[mask], upper[mask])
            m = upd.m[:, None]
            shift = upd.c[:, None] - gamma[None, :]
            return (w @ (m**2 * second + 2.0 * m * shift * ts.M + shift**2 * ts.P),)

        return max(float(np.sum(self._reduce(gamma, reducer)[0])), 0.0)

    def admissible(self, gamma):
        lo, _ = self.boundary.state_support
        return bool(np.all(np.diff(gamma) > 0) and gamma[0] > lo)


def mixture_distortion(next_codewords, prev, updates, boundary=BoundaryMode.FREE):
    return MixtureProblem(prev, updates, boundary).distortion(check_increasing(next_codewords))


def mixture_centroids(next_codewords, prev, updates, boundary=BoundaryMode.FREE):
    return MixtureProblem(prev, updates, boundary).centroids(check_increasing(next_codewords))


def rmq_newton_step(next_codewords, prev, updates, boundary=BoundaryMode.FREE, threads=1):
    gamma = check_increasing(next_codewords)
    problem = MixtureProblem(prev, updates, boundary, threads=threads)
    if not problem.admissible(gamma):
        raise InvalidGridError(f"codewords must be positive under the {boundary.value} boundary")
    gamma, _ = damped_newton(problem, gamma, 1, label="rmq")
    return gamma


def implied_marginal_cdf(x, prev: Quantizer, updates: AffineUpdate, boundary=BoundaryMode.FREE, zero_mass=0.0):
    """Distribution function of the conditional mixture at ``x``.

    Under absorption the mass below zero sits at the zero state together with
    ``zero_mass`` already absorbed; under reflection it is folded back.
    """
    _check_updates(updates)
    x = np.asarray(x, dtype=float)
    flat = np.atleast_1d(x).ravel()
    z = (flat[None, :] - updates.c[:, None]) / updates.m[:, None]
    law_boundary = BoundaryMode.REFLECTING if boundary is BoundaryMode.REFLECTING else BoundaryMode.FREE
    values = np.empty_like(z)
    for mask, law in _row_laws(updates, law_boundary):
        values[mask] = law.cdf(z[mask]) if updates.m[mask][0] > 0 else law.sf(z[mask])
    out = prev.probabilities @ values
    if boundary is not BoundaryMode.FREE:
        out = np.where(flat < 0, 0.0, out + zero_mass)
    out = np.clip(out, 0.0, 1.0)
    return out.reshape(x.shape) if x.ndim else float(out[0])


def _first_step_law(update: AffineUpdate, boundary):
    base = std_normal_funcs() if update.gaussian[0] else ncx2_1_funcs(Ncx2Params(float(update.lam[0])))
    m, c = float(update.m[0]), float(update.c[0])
    xbar = -c / m
    if boundary is BoundaryMode.ABSORBING:
        return truncate_funcs(base, xbar, upper=m > 0)
    if boundary is BoundaryMode.REFLECTING:
        return reflect_funcs(base, xbar, upper=m > 0)
    return base


def _fit_into_support(guess, lo, hi):
    if guess[0] > lo and guess[-1] < hi:
        return guess
    lower = max(lo, guess[0])
    upper = min(hi, guess[-1])
    if not upper > lower:
        upper = lower + max(guess[-1] - guess[0], 1.0)
    idx = np.arange(1, guess.size + 1)
    return lower + (upper - lower) * idx / (guess.size + 1)


def _first_step_codewords(update, boundary, n, n_max):
    law = _first_step_law(update, boundary)
    if update.gaussian[0]:
        guess = initial_guess("normal", n)
    else:
        guess = initial_guess("ncx2", n, float(update.lam[0]))
    guess = _fit_into_support(guess, *law.support)
    quantizer = newton_quantize(law, guess, n_max) if n_max > 0 else Quantizer(guess, np.zeros(n))
    gamma = float(update.m[0]) * quantizer.codewords + float(update.c[0])
    if update.m[0] < 0:
        gamma = gamma[::-1]
    return gamma, quantizer.residual


def _resize(gamma, n, updates, weights):
    if gamma.size == n:
        return gamma.copy()
    if gamma.size >= 2:
        return np.interp(np.linspace(0.0, 1.0, n), np.linspace(0.0, 1.0, gamma.size), gamma)
    mean = float(weights @ updates.mean())
    sd = float(np.sqrt(weights @ updates.variance()))
    return mean + sd * initial_guess("normal", n)


def _validate(gamma, model: SdeModel, k):
    if not np.all(np.isfinite(gamma)):
        raise NumericalFailure(f"step {k}: non-finite codewords", step=k)
    lo = model.state_domain[0]
    if gamma[0] <= lo:
        raise NegativeCodewordError(k, float(gamma[0]))


def rmq_run(model: SdeModel, scheme, s0, schedule: Schedule, boundary=BoundaryMode.FREE, threads=1):
    """Build the quantization sequence of ``model`` started at ``s0``."""
    boundary = BoundaryMode.parse(boundary)
    update_fn = scheme_update(scheme)
    dt = schedule.dt
    prev = Quantizer([s0], [1.0])
    zero_mass = 0.0
    steps = []
    logger.info(
        f"rmq: {model.name}/{scheme}, boundary {boundary.value}, K={schedule.K}, "
        f"N={schedule.n_per_step[0]}, dt={dt:.6g}"
    )
    for k in range(1, schedule.K + 1):
        n = schedule.n_per_step[k - 1]
        updates = update_fn(model, prev.codewords, dt)
        _check_updates(updates)
        if k == 1:
            gamma, residual = _first_step_codewords(updates, boundary, n, schedule.n_max_vq)
        else:
            problem = MixtureProblem(prev, updates, boundary, threads=threads)
            gamma0 = _resize(prev.codewords, n, updates, prev.probabilities)
            gamma, residual = damped_newton(
                problem, gamma0, schedule.n_max_rmq, tol=GRADIENT_TOL, label=f"rmq[step {k}]"
            )
        _validate(gamma, model, k)
        transitions = transition_set(prev, updates, gamma, boundary)
        probabilities = prev.probabilities @ transitions.P
        if boundary is BoundaryMode.ABSORBING:
            zero_mass = zero_mass + float(prev.probabilities @ np.maximum(1.0 - transitions.row_sums, 0.0))
        quantizer = Quantizer(gamma, probabilities, residual=residual)
        steps.append(
            QuantizationStep(
                k=k,
                time=schedule.time(k),
                quantizer=quantizer,
                transitions=transitions,
                updates=updates,
                zero_mass=zero_mass,
            )
        )
        logger.info(
            f"step {k}: N={n}, residual {residual:.3e}, mean {quantizer.expectation():.6g}"
            + (f", absorbed {zero_mass:.3e}" if boundary is BoundaryMode.ABSORBING else "")
        )
        prev = quantizer
    return QuantizationSequence(
        s0=float(s0),
        scheme=scheme,
        boundary=boundary,
        schedule=schedule,
        steps=tuple(steps),
        model=model.to_dict(),
    )
