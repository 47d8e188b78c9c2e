import numpy as np
import pytest

from rmq.engine import BoundaryMode, Schedule, rmq_run
from rmq.sde_models import CevParams, GbmParams, cev_model, gbm_model

S0 = 100.0
RATE = 0.05
SIGMA = 0.3


@pytest.fixture(scope="session")
def gbm_params():
    return GbmParams(s0=S0, r=RATE, sigma=SIGMA)


@pytest.fixture(scope="session")
def gbm(gbm_params):
    return gbm_model(gbm_params)


@pytest.fixture(scope="session")
def cev_low_alpha():
    """CEV case whose unconstrained recursion leaves the positive half-line."""
    p = CevParams(s0=0.5, r=RATE, alpha=0.35, sigma_ln=0.5)
    return p, cev_model(p)


@pytest.fixture(scope="session")
def gbm_sequences(gbm):
    """Default experiment: T=1, K=12, N=200, 50 VQ and 5 RMQ iterations."""
    schedule = Schedule.uniform(T=1.0, K=12, N=200)
    return {scheme: rmq_run(gbm, scheme, S0, schedule) for scheme in ("euler", "milstein", "weak2")}


@pytest.fixture(scope="session")
def small_sequence(gbm):
    return rmq_run(gbm, "weak2", S0, Schedule.uniform(T=1.0, K=6, N=40))


@pytest.fixture(scope="session")
def absorbing_cev_sequence(cev_low_alpha):
    p, model = cev_low_alpha
    return rmq_run(model, "euler", p.s0, Schedule.uniform(T=1.0, K=12, N=50), boundary=BoundaryMode.ABSORBING)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
