"""Model-based regularized policy gradient with fixed step sizes."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import InadmissibleError, StepSizeError
from .exact import RiccatiSolution, cost_f, e_k, m_k, p_k, s_k_sigma, solve_are
from .history import IterationRecord, RunHistory
from .model import GaussianPolicy, SystemParams, is_admissible

log = logging.getLogger(__name__)

RpgRecord = IterationRecord
MAX_HALVINGS = 20


@dataclass(frozen=True)
class RpgConfig:
    eta1: Union[float, str] = "auto"
    eta2: Union[float, str] = "auto"
    epsilon: float = 1e-6
    max_iter: int = 100_000
    record_every: int = 1
    recompute_steps: bool = False  # re-derive auto steps at every iterate

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        for name in ("eta1", "eta2"):
            v = getattr(self, name)
            if v != "auto" and not (isinstance(v, (int, float)) and v > 0):
                raise ValueError(f"{name} must be positive or 'auto'")
        if self.max_iter < 0 or self.record_every < 1:
            raise ValueError("max_iter >= 0 and record_every >= 1 required")


def sigma_update(params: SystemParams, K, Sigma, eta2: float) -> np.ndarray:
    """Sigma - eta2/(1-gamma) * Sigma (M_K - tau/2 Sigma^{-1}) Sigma, symmetrised."""
    Sigma = np.asarray(Sigma, dtype=float)
    M = m_k(params, K)
    step = Sigma @ M @ Sigma - 0.5 * params.tau * Sigma
    new = Sigma - eta2 / (1.0 - params.gamma) * step
    return 0.5 * (new + new.T)


def rpg_step(params: SystemParams, K, Sigma, eta1: float, eta2: float):
    """One exact update of (K, Sigma); raises InadmissibleError carrying both policies."""
    K = np.asarray(K, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    K_new = K - eta1 * e_k(params, K)
    Sigma_new = sigma_update(params, K, Sigma, eta2)
    if not is_admissible(params, GaussianPolicy(K_new, Sigma_new)):
        raise InadmissibleError("RPG step left the admissible set",
                                policy=(K_new, Sigma_new), previous=(K, Sigma))
    return K_new, Sigma_new


def auto_step_sizes(params: SystemParams, K, Sigma) -> tuple[float, float]:
    """The step-size pair guaranteed to contract from (K, Sigma)."""
    K = np.asarray(K, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    g, tau, n = params.gamma, params.tau, params.n
    smin_R = params.sigma_min_R
    smin_S = float(np.linalg.eigvalsh(Sigma)[0])
    if smin_R > math.pi * tau:
        f = cost_f(params, K, Sigma)
        lower = tau * n / (2.0 * (1.0 - g)) * math.log(smin_R / (math.pi * tau))
        first = 1.0 / (params.norm_R + g / params.mu * params.norm_G * (f - lower))
    else:
        first = 1.0 / (params.norm_R + g * p_k(params, K) * params.norm_G)
    eta1 = min(first, 2.0 / (tau * smin_S))
    return eta1, 2.0 * tau * (1.0 - g) * eta1**2


def contraction_phi(params: SystemParams, K, Sigma, eta1: float, eta2: float,
                    solution: Optional[RiccatiSolution] = None) -> float:
    """Per-step contraction factor with a = tau * eta1."""
    sol = solution or solve_are(params)
    s_star = s_k_sigma(params, sol.k_star, sol.sigma_star)
    a = params.tau * eta1
    smin_R = params.sigma_min_R
    phi = min(eta1 * params.mu * smin_R / s_star,
              eta2 * a * smin_R / (2.0 * (1.0 - params.gamma)))
    if not 0.0 < phi < 1.0:
        raise StepSizeError(f"step sizes violate contraction preconditions (phi = {phi:g})")
    return phi


def theoretical_iterations(params: SystemParams, eta1: float, gap0: float, epsilon: float,
                           solution: Optional[RiccatiSolution] = None) -> int:
    """Iteration count guaranteeing gap <= epsilon, for fixed automatic steps."""
    if gap0 <= epsilon:
        return 0
    sol = solution or solve_are(params)
    s_star = abs(s_k_sigma(params, sol.k_star, sol.sigma_star))
    smin_R = params.sigma_min_R
    rate = max(s_star / (2.0 * params.mu * eta1 * smin_R),
               1.0 / (params.tau**2 * eta1**3 * smin_R))
    return math.ceil(rate * math.log(gap0 / epsilon))


def envelope_iterations(phi: float, gap0: float, epsilon: float) -> int:
    """Smallest t with (1 - phi)^t gap0 <= epsilon."""
    if gap0 <= epsilon:
        return 0
    return math.ceil(math.log(epsilon / gap0) / math.log1p(-phi))


def _record(params, sol, it, K, Sigma, eta1, eta2, phi, backtracks=0):
    f = cost_f(params, K, Sigma)
    return IterationRecord(iter=it, K=np.array(K), Sigma=np.array(Sigma), f=f, gap=f - sol.f_star,
                           eta1=eta1, eta2=eta2, phi=phi, backtracks=backtracks)


def run_rpg(params: SystemParams, K0, Sigma0, config: RpgConfig = RpgConfig(),
            solution: Optional[RiccatiSolution] = None) -> RunHistory:
    """Iterate exact updates until the gap to the Riccati optimum is at most epsilon."""
    K = np.asarray(K0, dtype=float).copy()
    Sigma = np.asarray(Sigma0, dtype=float).copy()
    if not is_admissible(params, GaussianPolicy(K, Sigma)):
        raise InadmissibleError("initial policy is not admissible", policy=(K, Sigma))
    sol = solution or solve_are(params)
    hist = RunHistory(kind="rpg", f_star=sol.f_star, k_star=sol.k_star, sigma_star=sol.sigma_star)
    if np.linalg.eigvalsh(Sigma)[-1] > 1.0:
        hist.events.append({"iter": 0, "event": "hypothesis", "detail": "Sigma0 is not below I"})

    def steps(K, Sigma):
        a1, a2 = auto_step_sizes(params, K, Sigma)
        e1 = a1 if config.eta1 == "auto" else float(config.eta1)
        e2 = a2 if config.eta2 == "auto" else float(config.eta2)
        return e1, e2

    def phi_of(e1, e2):
        try:
            return contraction_phi(params, K, Sigma, e1, e2, sol)
        except StepSizeError:
            return None

    eta1, eta2 = steps(K, Sigma)
    phi = phi_of(eta1, eta2)
    rec = _record(params, sol, 0, K, Sigma, eta1, eta2, phi)
    hist.append(rec)
    gap0 = rec.gap
    hist.meta.update(eta1=eta1, eta2=eta2, phi=phi, gap0=gap0, epsilon=config.epsilon,
                     theoretical_N=theoretical_iterations(params, eta1, gap0, config.epsilon, sol),
                     envelope_N=envelope_iterations(phi, gap0, config.epsilon) if phi else None)

    it, gap = 0, rec.gap
    while gap > config.epsilon and it < config.max_iter:
        if config.recompute_steps and it > 0:
            eta1, eta2 = steps(K, Sigma)
            phi = phi_of(eta1, eta2)
        e1, e2, halvings = eta1, eta2, 0
        while True:
            try:
                K_new, Sigma_new = rpg_step(params, K, Sigma, e1, e2)
                break
            except InadmissibleError as err:
                if halvings >= MAX_HALVINGS:
                    err.previous = hist.last
                    raise
                halvings += 1
                e1, e2 = e1 / 2.0, e2 / 2.0
                log.info("iteration %d: inadmissible step, halving to eta1=%g eta2=%g", it + 1, e1, e2)
                hist.events.append({"iter": it + 1, "event": "halve", "eta1": e1, "eta2": e2})
        K, Sigma, it = K_new, Sigma_new, it + 1
        f = cost_f(params, K, Sigma)
        gap = f - sol.f_star
        if it % config.record_every == 0 or gap <= config.epsilon or it == config.max_iter:
            hist.append(IterationRecord(iter=it, K=K.copy(), Sigma=Sigma.copy(), f=f, gap=gap,
                                        eta1=e1, eta2=e2, phi=phi, backtracks=halvings))
    hist.meta.update(iterations=it, converged=bool(gap <= config.epsilon))
    return hist
