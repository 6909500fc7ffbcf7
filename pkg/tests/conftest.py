import numpy as np
import pytest
from hypothesis import settings

from erlq.config import benchmark_experiment
from erlq.exact import solve_are
from erlq.model import InitialStateDist, SystemParams

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# Frozen values, computed independently (bisection on the scalar Riccati map and
# plain summation of the second-moment series), not by this package.
P_STAR = 0.6535535113050934
K_STAR = np.array([0.020802706445689895, 0.042617197650743226, 0.06463806838667852])
SIGMA_STAR = np.array([
    [0.049319128823173415, -0.0007277601366328117, -0.0007973217898825689],
    [-0.0007277601366328118, 0.04890052316507943, -0.0013061292721367503],
    [-0.0007973217898825691, -0.0013061292721367503, 0.0482329496916399],
])
F_STAR = 1.0082251175556
S_STAR = 1.3045280608301513
F_ZERO_I = 5.964288593018686
S_ZERO_I = 1.631303425882976
F_ZERO_HALF = 3.0957301959972168
S_ZERO_HALF = 1.478298323504075
TRACE_G = 0.2309
V_ZERO = 0.4909
ETA1_AUTO = 0.7746433922084138
ETA2_AUTO = 0.06000723850921585


@pytest.fixture(scope="session")
def bench():
    return benchmark_experiment().system


@pytest.fixture(scope="session")
def solution(bench):
    return solve_are(bench)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def scalar_system(A=1.0, B=1.0, C=0.0, D=0.0, Q=1.0, R=1.0, gamma=0.5, tau=0.1, **kw):
    return SystemParams(A=A, B=[B], C=C, D=[[D]], Q=Q, R=[[R]], gamma=gamma, tau=tau, **kw)


def two_point(mu=1.0):
    return InitialStateDist.two_point(mu)
