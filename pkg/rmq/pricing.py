"""Pricing of European, Bermudan and discretely monitored up-and-out claims
on a quantization sequence."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from rmq.engine import QuantizationSequence
from rmq.errors import ConfigError

logger = logging.getLogger(__name__)

INSTRUMENTS = ("european", "bermudan", "barrier")


@dataclass(frozen=True)
class VanillaPayoff:
    kind: str
    strike: float = 0.0
    func: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in ("call", "put", "custom"):
            raise ConfigError(f"unknown payoff kind {self.kind!r}")
        if self.strike < 0:
            raise ConfigError(f"strike must be non-negative, got {self.strike}")
        if self.kind == "custom" and self.func is None:
            raise ConfigError("a custom payoff needs a function of the terminal state")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "call":
            return np.maximum(x - self.strike, 0.0)
        if self.kind == "put":
            return np.maximum(self.strike - x, 0.0)
        return np.broadcast_to(np.asarray(self.func(x), dtype=float), x.shape)


@dataclass(frozen=True)
class BarrierSpec:
    level: float
    direction: str = "up-and-out"

    def __post_init__(self):
        if not self.level > 0:
            raise ConfigError(f"barrier level must be positive, got {self.level}")
        if self.direction != "up-and-out":
            raise ConfigError(f"unsupported barrier direction {self.direction!r}")

    def survival(self, x, y):
        """Indicator that neither endpoint of a monitoring interval breaches the level."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return (np.maximum(x[:, None], y[None, :]) < self.level).astype(float)


def european_price(seq: QuantizationSequence, payoff: VanillaPayoff, r):
    K = seq.K
    value = seq.probabilities(K) @ payoff(seq.states(K))
    return float(np.exp(-r * seq.schedule.T) * value)


def bermudan_price(seq: QuantizationSequence, payoff: VanillaPayoff, r):
    """Backward dynamic programming with exercise at every step time."""
    discount = np.exp(-r * seq.schedule.dt)
    h = payoff(seq.states(seq.K))
    for k in range(seq.K - 1, 0, -1):
        continuation = discount * (seq.kernel(k + 1) @ h)
        h = np.maximum(payoff(seq.states(k)), continuation)
    return float(discount * (seq.kernel(1)[0] @ h))


def barrier_up_out_price(seq: QuantizationSequence, payoff: VanillaPayoff, barrier: BarrierSpec, r):
    # inception is a monitoring date: s0 >= level knocks out immediately
    alive = seq.kernel(1)[0] * barrier.survival(seq.states(0), seq.states(1))[0]
    for k in range(2, seq.K + 1):
        alive = alive @ (seq.kernel(k) * barrier.survival(seq.states(k - 1), seq.states(k)))
    return float(np.exp(-r * seq.schedule.T) * (alive @ payoff(seq.states(seq.K))))


def price(seq, payoff, r, instrument="european", barrier=None):
    if instrument == "european":
        return european_price(seq, payoff, r)
    if instrument == "bermudan":
        return bermudan_price(seq, payoff, r)
    if instrument == "barrier":
        if barrier is None:
            raise ConfigError("barrier pricing needs a barrier level")
        return barrier_up_out_price(seq, payoff, barrier, r)
    raise ConfigError(f"unknown instrument {instrument!r}; expected one of {INSTRUMENTS}")


def price_many(seq, payoffs, r, instrument="european", barriers=None, threads=1):
    """Price a list of payoffs (optionally paired with barriers) on one sequence.

    Results come back in input order.
    """
    payoffs = list(payoffs)
    if barriers is None:
        barriers = [None] * len(payoffs)
    barriers = list(barriers)
    if len(barriers) != len(payoffs):
        raise ConfigError(f"{len(barriers)} barriers for {len(payoffs)} payoffs")

    def work(pair):
        payoff, barrier = pair
        return price(seq, payoff, r, instrument=instrument, barrier=barrier)

    pairs = list(zip(payoffs, barriers))
    if threads > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            prices = list(pool.map(work, pairs))
    else:
        prices = [work(p) for p in pairs]
    logger.debug(f"priced {len(prices)} {instrument} claims on a K={seq.K} sequence")
    return prices
