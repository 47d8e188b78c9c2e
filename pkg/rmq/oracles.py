"""Reference values independent of the quantization code path: the
Black-Scholes formula, a Monte Carlo engine and a Crank-Nicolson solver."""
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.linalg import solve_banded

from rmq.distributions import ScalarDistribution
from rmq.errors import OracleError
from rmq.sde_models import SdeModel

logger = logging.getLogger(__name__)

BOUNDARIES = ("free", "absorbing", "reflecting")


def black_scholes(kind, s0, strike, r, sigma, T):
    if s0 <= 0 or T <= 0:
        raise OracleError("s0 and T must be positive")
    if strike < 0 or sigma < 0:
        raise OracleError("strike and sigma must be non-negative")
    if kind not in ("call", "put"):
        raise OracleError(f"unknown option kind {kind!r}")
    discounted_strike = strike * np.exp(-r * T)
    vol = sigma * np.sqrt(T)
    if strike == 0 or vol < 1e-12:
        forward_gap = s0 - discounted_strike
        return float(max(forward_gap, 0.0) if kind == "call" else max(-forward_gap, 0.0))
    d1 = (np.log(s0 / strike) + (r + 0.5 * sigma**2) * T) / vol
    d2 = d1 - vol
    if kind == "call":
        return float(s0 * special.ndtr(d1) - discounted_strike * special.ndtr(d2))
    return float(discounted_strike * special.ndtr(-d2) - s0 * special.ndtr(-d1))


@dataclass(frozen=True)
class McConfig:
    seed: int
    paths: int = 1_000_000
    steps: int = 1200
    monitoring_stride: int = 100
    block_size: int = 50_000
    boundary: str = "free"
    exact: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.paths < 1 or self.steps < 1 or self.block_size < 1:
            raise OracleError("paths, steps and block_size must be positive")
        if self.monitoring_stride < 1 or self.steps % self.monitoring_stride:
            raise OracleError(
                f"steps ({self.steps}) must be a multiple of monitoring_stride ({self.monitoring_stride})"
            )
        if self.boundary not in BOUNDARIES:
            raise OracleError(f"unknown boundary {self.boundary!r}")

    def blocks(self):
        full, rest = divmod(self.paths, self.block_size)
        return [self.block_size] * full + ([rest] if rest else [])


@dataclass(frozen=True)
class McResult:
    price: float
    std_error: float
    paths: int


def _block_rng(seed, block):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(block,)))


def _euler_step(model, x, dt, z, boundary):
    if boundary == "free":
        return x + model.a(x) * dt + model.b(x) * np.sqrt(dt) * z
    out = x.copy()
    live = x > 0
    xl = x[live]
    out[live] = xl + model.a(xl) * dt + model.b(xl) * np.sqrt(dt) * z[live]
    if boundary == "absorbing":
        return np.maximum(out, 0.0)
    return np.abs(out)


def _simulate_block(model: SdeModel, s0, T, cfg: McConfig, block, n, level=None):
    """Terminal values and barrier survival flags for one block of paths.

    Every step draws a full block of normals so a path keeps its draws when
    ``paths`` changes and only the last block grows or shrinks.
    """
    if cfg.exact and model.exact_step is None:
        raise OracleError(f"model {model.name!r} has no exact transition")
    rng = _block_rng(cfg.seed, block)
    dt = T / cfg.steps
    x = np.full(n, float(s0))
    alive = np.full(n, level is None or s0 < level)
    for j in range(1, cfg.steps + 1):
        z = rng.standard_normal(cfg.block_size)[:n]
        if cfg.exact:
            x = model.exact_step(x, dt, z)
        else:
            x = _euler_step(model, x, dt, z, cfg.boundary)
        if cfg.boundary == "free" and model.state_domain[0] > -np.inf and np.any(x <= model.state_domain[0]):
            raise OracleError(
                f"{model.name} paths left the state domain at step {j}; use an absorbing or reflecting boundary"
            )
        if level is not None and j % cfg.monitoring_stride == 0:
            alive &= x < level
    return x, alive


def _run_blocks(cfg, work):
    sizes = cfg.blocks()
    if cfg.threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            return list(pool.map(work, range(len(sizes)), sizes))
    return [work(b, n) for b, n in enumerate(sizes)]


def simulate_terminal(model: SdeModel, s0, T, cfg: McConfig):
    parts = _run_blocks(cfg, lambda b, n: _simulate_block(model, s0, T, cfg, b, n)[0])
    return np.concatenate(parts)


def mc_price(model: SdeModel, payoff, cfg: McConfig, s0, r, T, barrier_level=None):
    """Discounted Monte Carlo price and its standard error.

    Block statistics are merged in block order, so the result does not depend
    on the thread count.
    """
    discount = np.exp(-r * T)

    def work(block, n):
        x, alive = _simulate_block(model, s0, T, cfg, block, n, level=barrier_level)
        values = discount * np.asarray(payoff(x), dtype=float) * alive
        return n, values.mean(), ((values - values.mean()) ** 2).sum()

    count, mean, m2 = 0, 0.0, 0.0
    for n, block_mean, block_m2 in _run_blocks(cfg, work):
        total = count + n
        delta = block_mean - mean
        mean += delta * n / total
        m2 += block_m2 + delta**2 * count * n / total
        count = total
    std_error = np.sqrt(m2 / (count - 1) / count) if count > 1 else 0.0
    logger.info(f"mc: {count} paths, price {mean:.6f} +/- {std_error:.2e}")
    return McResult(float(mean), float(std_error), count)


def sample_distribution(samples):
    """Step-function law of a sample, with a histogram density."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise OracleError("empirical distribution needs at least one sample")
    first = np.concatenate(([0.0], np.cumsum(x))) / n
    second = np.concatenate(([0.0], np.cumsum(x * x))) / n
    density, edges = np.histogram(x, bins="auto", density=True)

    def _count(t):
        return np.searchsorted(x, np.asarray(t, dtype=float), side="right")

    def pdf(t):
        idx = np.searchsorted(edges, np.asarray(t, dtype=float), side="right") - 1
        inside = (idx >= 0) & (idx < density.size)
        return np.where(inside, density[np.clip(idx, 0, density.size - 1)], 0.0)

    return ScalarDistribution(
        pdf=pdf,
        cdf=lambda t: _count(t) / n,
        sf=lambda t: 1.0 - _count(t) / n,
        m1=lambda t: first[_count(t)],
        upper1=lambda t: first[-1] - first[_count(t)],
        m2=lambda t: second[_count(t)],
        lo=float(x[0]),
        hi=float(x[-1]),
        name="empirical",
    )


def empirical_cdf(model: SdeModel, s0, t, samples, seed, steps=None, boundary="free", exact=False):
    """Empirical law of X_t from exact or fine Euler simulation."""
    if samples < 1:
        raise OracleError("empirical distribution needs at least one sample")
    steps = steps or max(1, int(round(1200 * t)))
    cfg = McConfig(
        seed=seed, paths=samples, steps=steps, monitoring_stride=steps, boundary=boundary, exact=exact
    )
    return sample_distribution(simulate_terminal(model, s0, t, cfg))


@dataclass(frozen=True)
class FdConfig:
    time_steps: int = 600
    space_steps: int = 800
    s_max_mult: float = 4.0
    rannacher_steps: int = 2

    def __post_init__(self):
        if self.time_steps < 1 or self.space_steps < 3 or not self.s_max_mult > 0:
            raise OracleError("finite-difference grid sizes must be positive")
        if self.rannacher_steps < 0:
            raise OracleError("rannacher_steps must be non-negative")


@dataclass(frozen=True)
class FdSolution:
    grid: np.ndarray
    values: np.ndarray
    terminal: np.ndarray
    price: float


def _operator(model, s, r):
    """Tridiagonal generator on the interior nodes, with the linearity
    condition substituted into the last row."""
    ds = s[1] - s[0]
    inner = s[1:-1]
    diffusion = 0.5 * model.b(inner) ** 2 / ds**2
    drift = 0.5 * model.a(inner) / ds
    lower = diffusion - drift
    diag = -2.0 * diffusion - r
    upper = diffusion + drift
    lower[-1], diag[-1] = lower[-1] - upper[-1], diag[-1] + 2.0 * upper[-1]
    return lower, diag, upper


def _banded(lower, diag, upper, scale):
    ab = np.zeros((3, diag.size))
    ab[0, 1:] = -scale * upper[:-1]
    ab[1, :] = 1.0 - scale * diag
    ab[2, :-1] = -scale * lower[1:]
    return ab


def _apply(lower, diag, upper, v):
    out = diag * v
    out[1:] += lower[1:] * v[:-1]
    out[:-1] += upper[:-1] * v[1:]
    return out


def cn_solve(model: SdeModel, payoff, s0, r, T, cfg=FdConfig(), exercise_times=()):
    """Crank-Nicolson in time-to-maturity with early exercise at ``exercise_times``.

    The value at s = 0 is held at the payoff there, and the second derivative
    vanishes at the top of the grid.
    """
    s = np.linspace(0.0, cfg.s_max_mult * s0, cfg.space_steps + 1)
    terminal = np.asarray(payoff(s), dtype=float)
    dtau = T / cfg.time_steps
    exercise_steps = set()
    for t in exercise_times:
        if not 0 < t < T:
            raise OracleError(f"exercise time {t} outside (0, {T})")
        exercise_steps.add(int(round((T - t) / dtau)))

    lower, diag, upper = _operator(model, s, r)
    v0 = terminal[0]
    inner = terminal[1:-1].copy()
    intrinsic = inner.copy()
    implicit_left = cfg.rannacher_steps
    for n in range(1, cfg.time_steps + 1):
        theta = 1.0 if implicit_left > 0 else 0.5
        implicit_left -= 1
        rhs = inner + (1.0 - theta) * dtau * _apply(lower, diag, upper, inner)
        rhs[0] += dtau * lower[0] * v0
        inner = solve_banded((1, 1), _banded(lower, diag, upper, theta * dtau), rhs)
        if n in exercise_steps:
            inner = np.maximum(inner, intrinsic)
            implicit_left = cfg.rannacher_steps

    values = np.concatenate(([v0], inner, [2.0 * inner[-1] - inner[-2]]))
    scale = max(1.0, float(np.max(np.abs(values))))
    if values.min() < -1e-8 * scale:
        warnings.warn(
            f"finite-difference solution has negative values (min {values.min():.3g}); refine the grid",
            RuntimeWarning,
        )
    price = float(np.interp(s0, s, values))
    logger.debug(f"cn: {cfg.time_steps}x{cfg.space_steps} grid, value {price:.6f}")
    return FdSolution(grid=s, values=values, terminal=terminal, price=price)


def cn_bermudan(model: SdeModel, payoff, exercise_times, cfg=FdConfig(), r=0.05, s0=100.0, T=1.0):
    return cn_solve(model, payoff, s0, r, T, cfg, exercise_times).price
