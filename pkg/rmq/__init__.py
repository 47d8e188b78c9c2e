"""Recursive marginal quantization of scalar diffusions and the pricing of
European, Bermudan and discretely monitored barrier claims on the resulting
grids."""
from rmq.engine import BoundaryMode, QuantizationSequence, Schedule, rmq_run
from rmq.pricing import BarrierSpec, VanillaPayoff, barrier_up_out_price, bermudan_price, european_price

__all__ = [
    "BarrierSpec",
    "BoundaryMode",
    "QuantizationSequence",
    "Schedule",
    "VanillaPayoff",
    "barrier_up_out_price",
    "bermudan_price",
    "european_price",
    "rmq_run",
]
