"""Closed-form policy evaluation, analytic gradients and the Riccati baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCovarianceError, InadmissibleError, RiccatiError
from .model import LOG_2PI, SystemParams, is_admissible, GaussianPolicy, v_k

ARE_DIVERGENCE = 1e12


def _vec(K):
    return np.asarray(K, dtype=float).reshape(-1)


def _mat(Sigma):
    return np.asarray(Sigma, dtype=float)


def _logdet_pd(Sigma) -> float:
    try:
        L = np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError:
        raise DegenerateCovarianceError() from None
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def _stable_denominator(params: SystemParams, K) -> tuple[float, float]:
    V = v_k(params, K)
    den = 1.0 - params.gamma * V
    if not den > 0:
        raise InadmissibleError()
    return V, den


def p_k(params: SystemParams, K) -> float:
    """Value coefficient (Q + K^T R K) / (1 - gamma V_K)."""
    K = _vec(K)
    _, den = _stable_denominator(params, K)
    return float(params.Q + K @ params.R @ K) / den


def m_k(params: SystemParams, K) -> np.ndarray:
    """R + gamma P_K G, the curvature of the cost in the action."""
    return params.R + params.gamma * p_k(params, K) * params.G


def psi(params: SystemParams, Sigma) -> float:
    """Per-step exploration cost Tr(Sigma R) - (tau/2)(n + log((2 pi)^n det Sigma))."""
    Sigma = _mat(Sigma)
    n = Sigma.shape[0]
    return float(np.sum(Sigma * params.R)) - 0.5 * params.tau * (n + n * LOG_2PI + _logdet_pd(Sigma))


def q_k_sigma(params: SystemParams, K, Sigma) -> float:
    Sigma = _mat(Sigma)
    n = Sigma.shape[0]
    M = m_k(params, K)
    ent = 0.5 * params.tau * (n + n * LOG_2PI + _logdet_pd(Sigma))
    return (float(np.sum(Sigma * M)) - ent) / (1.0 - params.gamma)


def cost_f(params: SystemParams, K, Sigma) -> float:
    """f(K, Sigma) = P_K mu + q_{K,Sigma}."""
    return p_k(params, K) * params.mu + q_k_sigma(params, K, Sigma)


def s_k_sigma(params: SystemParams, K, Sigma) -> float:
    """Discounted second-moment sum sum_t gamma^t E x_t^2.

    Written as [(1-g) mu + g Tr(Sigma G)] / [(1-g)(1-g V_K)], which has no
    removable singularity at V_K = 1. Sigma may be singular here.
    """
    g = params.gamma
    _, den = _stable_denominator(params, _vec(K))
    inflow = float(np.sum(_mat(Sigma) * params.G))
    return ((1.0 - g) * params.mu + g * inflow) / ((1.0 - g) * den)


def e_k(params: SystemParams, K) -> np.ndarray:
    """2 R K + 2 gamma P_K (G K - A B^T)."""
    K = _vec(K)
    P = p_k(params, K)
    return 2.0 * params.R @ K + 2.0 * params.gamma * P * (params.G @ K - params.A * params.B)


def grad_k(params: SystemParams, K, Sigma) -> np.ndarray:
    return e_k(params, K) * s_k_sigma(params, K, Sigma)


def grad_sigma(params: SystemParams, K, Sigma) -> np.ndarray:
    Sigma = _mat(Sigma)
    _logdet_pd(Sigma)
    g = (m_k(params, K) - 0.5 * params.tau * np.linalg.inv(Sigma)) / (1.0 - params.gamma)
    return 0.5 * (g + g.T)


def optimal_sigma_for(params: SystemParams, K) -> np.ndarray:
    """Minimiser of f(K, .) for a fixed gain: (tau/2) M_K^{-1}."""
    S = 0.5 * params.tau * np.linalg.inv(m_k(params, K))
    return 0.5 * (S + S.T)


@dataclass(frozen=True)
class EvalReport:
    v_k: float
    p_k: float
    q: float
    f: float
    s: float
    e_k: np.ndarray
    grad_k: np.ndarray
    grad_sigma: np.ndarray

    def to_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}


def evaluate(params: SystemParams, K, Sigma) -> EvalReport:
    K, Sigma = _vec(K), _mat(Sigma)
    E = e_k(params, K)
    s = s_k_sigma(params, K, Sigma)
    P = p_k(params, K)
    q = q_k_sigma(params, K, Sigma)
    return EvalReport(v_k=v_k(params, K), p_k=P, q=q, f=P * params.mu + q, s=s,
                      e_k=E, grad_k=E * s, grad_sigma=grad_sigma(params, K, Sigma))


def truncated_s(params: SystemParams, K, Sigma, l: int) -> float:
    """sum_{t<l} gamma^t E x_t^2 by iterating the second-moment recursion from mu."""
    if l < 1:
        raise ValueError("l must be >= 1")
    K = _vec(K)
    _stable_denominator(params, K)
    V = v_k(params, K)
    inflow = float(np.sum(_mat(Sigma) * params.G))
    m, disc, total = params.mu, 1.0, 0.0
    for _ in range(l):
        total += disc * m
        m = V * m + inflow
        disc *= params.gamma
    return total


def truncated_cost(params: SystemParams, K, Sigma, l: int) -> float:
    """Expected discounted cost of an l-step rollout."""
    K = _vec(K)
    g = params.gamma
    stage = float(params.Q + K @ params.R @ K)
    return stage * truncated_s(params, K, Sigma, l) + (1.0 - g**l) * psi(params, Sigma) / (1.0 - g)


# -- Riccati baseline -----------------------------------------------------------

@dataclass(frozen=True)
class RiccatiSolution:
    p_star: float
    q_star: float
    k_star: np.ndarray
    sigma_star: np.ndarray
    f_star: float
    iterations: int
    residual: float

    @property
    def policy(self) -> GaussianPolicy:
        return GaussianPolicy(self.k_star, self.sigma_star)

    def to_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}


def riccati_map(params: SystemParams, P: float) -> float:
    """One value-iteration sweep of the algebraic Riccati equation."""
    g, A, B = params.gamma, params.A, params.B
    M = params.R + g * P * params.G
    return params.Q + g * P * (A**2 + params.C**2) - (g * A * P) ** 2 * float(B @ np.linalg.solve(M, B))


def solve_are(params: SystemParams, tol: float = 1e-12, max_iter: int = 100_000) -> RiccatiSolution:
    if not tol > 0:
        raise ValueError("tol must be positive")
    P = params.Q
    for it in range(1, max_iter + 1):
        P_next = riccati_map(params, P)
        if not np.isfinite(P_next) or abs(P_next) > ARE_DIVERGENCE:
            raise RiccatiError(f"ARE value iteration failed: iterate diverged at step {it}")
        done = abs(P_next - P) < tol
        P = P_next
        if done:
            break
    else:
        raise RiccatiError(f"ARE value iteration failed: no convergence in {max_iter} iterations")

    g = params.gamma
    M = params.R + g * P * params.G
    K = g * params.A * P * np.linalg.solve(M, params.B)
    Sigma = 0.5 * params.tau * np.linalg.inv(M)
    Sigma = 0.5 * (Sigma + Sigma.T)
    if not is_admissible(params, GaussianPolicy(K, Sigma)):
        raise RiccatiError("solved policy outside Omega")
    q = q_k_sigma(params, K, Sigma)
    return RiccatiSolution(p_star=P, q_star=q, k_star=K, sigma_star=Sigma, f_star=P * params.mu + q,
                           iterations=it, residual=abs(riccati_map(params, P) - P))


def evaluate_many(params: SystemParams, Ks, Sigmas) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised (f, S) for stacks of gains (M, n) and/or covariances (M, n, n).

    Either argument may be a single policy component, which is broadcast.
    """
    Ks = np.atleast_2d(np.asarray(Ks, dtype=float))
    Sigmas = np.asarray(Sigmas, dtype=float)
    if Sigmas.ndim == 2:
        Sigmas = Sigmas[None]
    n, g = params.n, params.gamma
    V = (params.A**2 + params.C**2 + np.einsum("mi,ij,mj->m", Ks, params.G, Ks)
         - 2.0 * params.A * (Ks @ params.B))
    den = 1.0 - g * V
    if np.any(den <= 0):
        raise InadmissibleError()
    P = (params.Q + np.einsum("mi,ij,mj->m", Ks, params.R, Ks)) / den
    inflow = np.einsum("mij,ij->m", Sigmas, params.G)
    sign, logdet = np.linalg.slogdet(Sigmas)
    if np.any(sign <= 0):
        raise DegenerateCovarianceError()
    trR = np.einsum("mij,ij->m", Sigmas, params.R)
    q = (trR + g * P * inflow - 0.5 * params.tau * (n + n * LOG_2PI + logdet)) / (1.0 - g)
    S = ((1.0 - g) * params.mu + g * inflow) / ((1.0 - g) * den)
    return P * params.mu + q, S
