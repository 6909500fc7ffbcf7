"""Central finite differences of the closed-form cost and random policy sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exact import cost_f, grad_k, grad_sigma
from .model import SystemParams, v_k


def random_spd(rng: np.random.Generator, n: int, lo: float, hi: float) -> np.ndarray:
    """Random orthogonal frame with eigenvalues drawn uniformly from [lo, hi]."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    S = (q * rng.uniform(lo, hi, n)) @ q.T
    return 0.5 * (S + S.T)


def random_policy(params: SystemParams, rng: np.random.Generator, margin: float = 0.9,
                  eig=(0.05, 1.0), scale: float = 2.0):
    """Draw (K, Sigma) with gamma V_K <= margin and spec(Sigma) inside ``eig``."""
    n = params.n
    while True:
        K = rng.standard_normal(n) * rng.uniform(0.0, scale)
        if params.gamma * v_k(params, K) <= margin:
            return K, random_spd(rng, n, *eig)


def fd_grad_k(params: SystemParams, K, Sigma, h: float = 1e-5) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    out = np.empty_like(K)
    for i in range(K.size):
        e = np.zeros_like(K)
        e[i] = h
        out[i] = (cost_f(params, K + e, Sigma) - cost_f(params, K - e, Sigma)) / (2 * h)
    return out


def fd_grad_sigma(params: SystemParams, K, Sigma, h: float = 1e-5) -> np.ndarray:
    """Symmetric gradient: off-diagonal pairs are moved together and the slope halved."""
    Sigma = np.asarray(Sigma, dtype=float)
    n = Sigma.shape[0]
    out = np.empty_like(Sigma)
    for i in range(n):
        for j in range(i, n):
            E = np.zeros_like(Sigma)
            E[i, j] = E[j, i] = h
            slope = (cost_f(params, K, Sigma + E) - cost_f(params, K, Sigma - E)) / (2 * h)
            out[i, j] = out[j, i] = slope if i == j else 0.5 * slope
    return out


@dataclass(frozen=True)
class GradcheckRow:
    sample: int
    f: float
    grad_k_norm: float
    grad_sigma_norm: float
    rel_err_k: float
    rel_err_sigma: float


def _rel(approx, exact) -> float:
    scale = float(np.linalg.norm(exact))
    err = float(np.linalg.norm(approx - exact))
    return err / scale if scale > 0 else err


def gradcheck(params: SystemParams, samples: int, seed: int = 0, h: float = 1e-5) -> list[GradcheckRow]:
    rng = np.random.default_rng(seed)
    rows = []
    for s in range(samples):
        K, Sigma = random_policy(params, rng)
        gk, gs = grad_k(params, K, Sigma), grad_sigma(params, K, Sigma)
        rows.append(GradcheckRow(sample=s, f=cost_f(params, K, Sigma),
                                 grad_k_norm=float(np.linalg.norm(gk)),
                                 grad_sigma_norm=float(np.linalg.norm(gs)),
                                 rel_err_k=_rel(fd_grad_k(params, K, Sigma, h), gk),
                                 rel_err_sigma=_rel(fd_grad_sigma(params, K, Sigma, h), gs)))
    return rows
