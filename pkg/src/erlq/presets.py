"""Parameter presets."""

import numpy as np

from .model import InitialStateDist, SystemParams

BENCH_D = [[0.05, 0.13, 0.12], [0.13, 0.07, 0.10], [0.12, 0.10, 0.03]]


def benchmark_params(noise: str = "gaussian") -> SystemParams:
    """Three-input experiment: A=0.7, B=(0.1, 0.2, 0.3), C=0.03, Q=0.5, gamma=0.5, tau=0.1."""
    return SystemParams(A=0.7, B=[0.1, 0.2, 0.3], C=0.03, D=BENCH_D, Q=0.5, R=np.eye(3),
                        gamma=0.5, tau=0.1, init=InitialStateDist.two_point(1.0), noise=noise)
