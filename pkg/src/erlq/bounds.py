"""Theoretical constants, perturbation moduli and sample-complexity schedules.

Everything here is diagnostic: the optimisers never read these values.
Where a nominal constant is not a valid modulus, the report carries it
unchanged next to a ``*_corrected`` field, and the schedule uses the
corrected one.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import InadmissibleError
from .exact import RiccatiSolution, cost_f, e_k, grad_sigma, m_k, p_k, psi, s_k_sigma, solve_are
from .model import GaussianPolicy, SystemParams, is_admissible, v_k
from .rpg import auto_step_sizes, contraction_phi, theoretical_iterations
from .sbrpg import smoothing_coefficient

DEFAULT_GAMMA_RATIO = 10.0


def _div(a: float, b: float) -> float:
    """a / b with a / 0 read as +inf (a > 0), matching how the bounds degrade."""
    if b == 0:
        return math.inf if a > 0 else (0.0 if a == 0 else -math.inf)
    return a / b


def _ceil(x: float, slack: bool = False) -> int:
    if not math.isfinite(x):
        raise ValueError(f"bound is not finite ({x})")
    return math.ceil(x) + (1 if slack else 0)


def m_nominal(a: float) -> float:
    """Nominal curvature constant (log a - a + 1)/(a - 1)^2; negative on (0, 1)."""
    return (math.log(a) - a + 1.0) / (a - 1.0) ** 2


def m_corrected(a: float) -> float:
    """Smallest m with lam - 1 - log(lam) <= m (lam - 1)^2 for every lam >= a."""
    if not 0 < a < 1:
        raise ValueError("a must lie in (0, 1)")
    return (a - 1.0 - math.log(a)) / (a - 1.0) ** 2


def lower_bound(params: SystemParams, K) -> Optional[float]:
    """mu P_K + tau n/(2(1-gamma)) log(sigma_min(R)/(pi tau)); None when the log is negative."""
    ratio = params.sigma_min_R / (math.pi * params.tau)
    if ratio <= 1.0:
        return None
    n, g = params.n, params.gamma
    return params.mu * p_k(params, K) + params.tau * n / (2.0 * (1.0 - g)) * math.log(ratio)


def s_bounds(params: SystemParams, K, Sigma) -> tuple[float, float]:
    """Lower and upper envelopes of S_{K,Sigma} in terms of f."""
    g = params.gamma
    lo = params.mu / (1.0 - g * v_k(params, K))
    hi = _div(cost_f(params, K, Sigma) - psi(params, Sigma) / (1.0 - g), params.Q)
    return lo, hi


def domination_terms(params: SystemParams, K, Sigma, f_star: float) -> tuple[float, float, float]:
    """(lambda1 E^T E / 4, gap, lambda2 |grad_K|^2 + (1-gamma) Tr(grad_Sigma^2)/sigma_min(R)).

    E_K carries the factor 2 of the gradient, so the lower end is a quarter
    of lambda1 E^T E.
    """
    K = np.asarray(K, dtype=float)
    E = e_k(params, K)
    lam1 = params.mu / np.linalg.norm(m_k(params, K), 2)
    gk = E * s_k_sigma(params, K, Sigma)
    gs = grad_sigma(params, K, Sigma)
    upper = (float(gk @ gk) / (params.mu * params.sigma_min_R)
             + (1.0 - params.gamma) * float(np.sum(gs * gs)) / params.sigma_min_R)
    return 0.25 * lam1 * float(E @ E), cost_f(params, K, Sigma) - f_star, upper


def almost_smooth_sides(params: SystemParams, K, Sigma, K2, Sigma2, a: float) -> tuple[float, float]:
    """(f(K2, Sigma2) - f(K, Sigma), its quadratic majorant) for aI < Sigma, Sigma2 < I.

    The majorant is S_{K2,Sigma2} [dK^T M_K dK + dK^T E_K] + Tr(grad_Sigma dSigma)
    + tau m/(2(1-gamma)) Tr((Sigma^{-1} Sigma2 - I)^2), with the corrected m.
    """
    K, K2 = (np.asarray(x, dtype=float).reshape(-1) for x in (K, K2))
    Sigma, Sigma2 = np.asarray(Sigma, dtype=float), np.asarray(Sigma2, dtype=float)
    dK = K2 - K
    X = np.linalg.solve(Sigma, Sigma2) - np.eye(params.n)
    quad = float(dK @ m_k(params, K) @ dK + dK @ e_k(params, K))
    rhs = (s_k_sigma(params, K2, Sigma2) * quad
           + float(np.sum(grad_sigma(params, K, Sigma) * (Sigma2 - Sigma)))
           + params.tau * m_corrected(a) / (2.0 * (1.0 - params.gamma)) * float(np.trace(X @ X)))
    return cost_f(params, K2, Sigma2) - cost_f(params, K, Sigma), rhs


@dataclass(frozen=True)
class BoundReport:
    lambda1: float
    lambda2: float
    grad_k_bound: float
    grad_k_bound_corrected: float
    grad_sigma_bound: float
    h_sigma: float
    h_sigma_wide: float
    g_sigma: float
    h_k: float
    h2: float
    h5: float
    h_E: float
    h6: float
    h6_corrected: float
    h7: float
    h7_corrected: float
    h8: float
    h9: float
    h9_corrected: float
    h10: float
    h10_corrected: float
    h11: float
    h11_corrected: float
    a: float
    m: float
    m_corrected: float
    eta1: float
    eta2: float
    phi: Optional[float]
    f: float
    f_star: float
    s: float
    psi: float
    N_rpg: Optional[int] = None
    N_sb: Optional[int] = None
    epsilon: Optional[float] = None
    kappa: Optional[float] = None
    eps1: Optional[float] = None
    eps2: Optional[float] = None
    eps2_proof: Optional[float] = None
    eps3: Optional[float] = None
    kappa1: Optional[float] = None
    kappa2: Optional[float] = None
    kappa3: Optional[float] = None
    schedule: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _h_sigma(c: float, normG: float, scale: float) -> float:
    # 0.5 s^2 / (sqrt(0.5 s^2 |G| + c^2) + c), with s = mu/S or s = 1 - gamma V_K
    return _div(0.5 * scale**2, math.sqrt(0.5 * scale**2 * normG + c * c) + c)


def _mul(a: float, b: float) -> float:
    """a * b with 0 * inf read as 0 (an uncoupled term stays uncoupled at any radius)."""
    return 0.0 if a == 0 or b == 0 else a * b


def perturbation_report(params: SystemParams, K, Sigma, solution: Optional[RiccatiSolution] = None,
                        eta1: Optional[float] = None, eta2: Optional[float] = None,
                        h_sigma_form: str = "moment") -> BoundReport:
    """Every perturbation modulus and norm bound at (K, Sigma).

    ``h_sigma_form="gain"`` swaps in the wider radius built from
    (1 - gamma V_K)^2 instead of (mu/S)^2; all dependent constants follow it.
    Step sizes default to the automatic pair at (K, Sigma).
    """
    K = np.asarray(K, dtype=float).reshape(-1)
    Sigma = np.asarray(Sigma, dtype=float)
    if not is_admissible(params, GaussianPolicy(K, Sigma)):
        raise InadmissibleError("bounds requested at an inadmissible policy", policy=(K, Sigma))
    if h_sigma_form not in ("moment", "gain"):
        raise ValueError("h_sigma_form must be 'moment' or 'gain'")
    sol = solution or solve_are(params)
    g, tau, mu, n = params.gamma, params.tau, params.mu, params.n
    G, R = params.G, params.R
    normG, trG, normR = params.norm_G, float(np.trace(G)), params.norm_R
    normK = float(np.linalg.norm(K))
    eig = np.linalg.eigvalsh(Sigma)
    smin_S, norm_S = float(eig[0]), float(eig[-1])
    Sinv = np.linalg.inv(Sigma)

    V = v_k(params, K)
    den = 1.0 - g * V
    P = p_k(params, K)
    M = m_k(params, K)
    normM = float(np.linalg.norm(M, 2))
    f = cost_f(params, K, Sigma)
    S = s_k_sigma(params, K, Sigma)
    ps = psi(params, Sigma)
    gap = max(f - sol.f_star, 0.0)

    lam1 = mu / normM
    lam2 = 1.0 / (mu * params.sigma_min_R)
    root = math.sqrt(gap / lam1)
    grad_k_bound = _div(f, params.Q) * root
    # |E_K| <= 2 sqrt(gap/lambda1) once the factor 2 in E_K is accounted for
    root_c = 2.0 * root
    grad_k_bound_corr = _div(f - ps / (1.0 - g), params.Q) * root_c
    grad_sigma_bound = (normM + tau / (2.0 * smin_S)) / (1.0 - g)

    c = float(np.linalg.norm(G @ K - params.A * params.B))
    hs_moment = _h_sigma(c, normG, mu / S)
    hs_app = _h_sigma(c, normG, den)
    hs = hs_moment if h_sigma_form == "moment" else hs_app
    g_sigma = 2.0 / den**2 * (2.0 * c + _mul(normG, hs))
    h2 = g * trG / ((1.0 - g) * den)
    h_k = 2.0 * g_sigma * ((1.0 - g) * mu + g * float(np.sum(Sigma * G))) / (1.0 - g)
    h5 = 3.0 * normK * normR / den + (params.Q + 4.0 * normR * normK**2) * g_sigma
    h_E = 2.0 * (normR + g * abs(params.A) * h5 * float(np.linalg.norm(params.B))
                 + g * P * normG + 2.0 * g * h5 * normG * normK)
    s_major = S + _mul(h_k, hs) + h2 * norm_S
    h6 = h_k * root + h_E * s_major
    h6_corr = h_k * root_c + h_E * s_major
    h7 = h2 * root
    h7_corr = h2 * root_c
    h8 = g * normG * h5 / (1.0 - g)
    h9 = tau * smin_S / (4.0 * (1.0 - g))
    h9_corr = tau / ((1.0 - g) * smin_S**2)
    h10 = (2.0 * g * norm_S * normG / (1.0 - g) + mu) * h5
    h10_corr = (2.0 * g * norm_S * trG / (1.0 - g) + mu) * h5

    if eta1 is None or eta2 is None:
        a1, a2 = auto_step_sizes(params, K, Sigma)
        eta1 = a1 if eta1 is None else eta1
        eta2 = a2 if eta2 is None else eta2
    a = tau * eta1
    try:
        phi = contraction_phi(params, K, Sigma, eta1, eta2, sol)
    except Exception:
        phi = None
    if 0 < a < 1:
        m_p, m_c = m_nominal(a), m_corrected(a)
    else:
        m_p = m_c = math.nan
    norm_Sinv_F = float(np.linalg.norm(Sinv))
    h11 = m_p * norm_Sinv_F / 2.0 + grad_sigma_bound
    # On the cone aI < Sigma, Sigma' < I the step |Sigma' - Sigma|_F is at most sqrt(n)(1 - a),
    # which turns the quadratic remainder into a Lipschitz term.
    radius = math.sqrt(n) * (1.0 - a)
    h11_corr = grad_sigma_bound + tau * m_c * float(np.linalg.norm(Sinv, 2)) ** 2 * radius / (2.0 * (1.0 - g))

    return BoundReport(
        lambda1=lam1, lambda2=lam2, grad_k_bound=grad_k_bound, grad_k_bound_corrected=grad_k_bound_corr,
        grad_sigma_bound=grad_sigma_bound, h_sigma=hs, h_sigma_wide=hs_app, g_sigma=g_sigma,
        h_k=h_k, h2=h2, h5=h5, h_E=h_E, h6=h6, h6_corrected=h6_corr, h7=h7, h7_corrected=h7_corr, h8=h8, h9=h9, h9_corrected=h9_corr,
        h10=h10, h10_corrected=h10_corr, h11=h11, h11_corrected=h11_corr, a=a, m=m_p,
        m_corrected=m_c, eta1=eta1, eta2=eta2, phi=phi, f=f, f_star=sol.f_star, s=S, psi=ps)


def rollout_length(params: SystemParams, K, Sigma, epsilon: float, slack: bool = False,
                   form: str = "tail") -> tuple[int, int]:
    """Horizons (l_S, l_f) after which the truncated S and f are within epsilon.

    ``form="tail"`` (default) returns the smallest l whose exact remainder
    gamma^l S(m_l) is at most epsilon, where m_l = E[x_l^2] and S(m) is the
    discounted moment sum restarted from m. ``form="nominal"`` uses
    (log eps - log S)/log gamma, which is only a valid horizon while the
    second moment stays below mu. The f horizon uses |psi| in the tail so
    the log stays defined when the entropy term makes psi negative.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if form not in ("tail", "nominal"):
        raise ValueError("form must be 'tail' or 'nominal'")
    K = np.asarray(K, dtype=float).reshape(-1)
    g = params.gamma
    S = s_k_sigma(params, K, Sigma)
    stage = float(params.Q + K @ params.R @ K)
    ps = abs(psi(params, Sigma)) / (1.0 - g)
    extra = int(slack)
    if g == 0.0:
        return 1 + extra, 1 + extra

    if form == "nominal":
        def length(scale):
            if scale <= 0:
                return 1 + extra
            return max(1, _ceil((math.log(epsilon) - math.log(scale)) / math.log(g))) + extra
        return length(S), length(stage * S + ps)

    V, den = v_k(params, K), 1.0 - g * v_k(params, K)
    inflow = float(np.sum(np.asarray(Sigma, dtype=float) * params.G))

    def restart(m):
        return ((1.0 - g) * m + g * inflow) / ((1.0 - g) * den)

    l_s = l_f = None
    m, disc, l = params.mu, 1.0, 0
    while l_s is None or l_f is None:
        tail = disc * restart(m)
        if l_s is None and tail <= epsilon:
            l_s = max(l, 1)
        if l_f is None and stage * tail + disc * ps <= epsilon:
            l_f = max(l, 1)
        m, disc, l = V * m + inflow, disc * g, l + 1
    return l_s + extra, l_f + extra


def bernstein_sample_size(sigma_sq: float, range_: float, epsilon: float, kappa: float, dim: int,
                          slack: bool = False) -> int:
    """Smallest N with N >= (2d/eps^2)(sigma^2 + R eps/(3 sqrt d)) log(d/kappa)."""
    if not (sigma_sq > 0 and range_ > 0 and epsilon > 0 and dim >= 1):
        raise ValueError("sigma_sq, range and epsilon must be positive and dim >= 1")
    if not 0 < kappa < 1:
        raise ValueError("kappa must lie in (0, 1)")
    d = float(dim)
    n_req = 2.0 * d / epsilon**2 * (sigma_sq + range_ * epsilon / (3.0 * math.sqrt(d))) * math.log(d / kappa)
    return max(1, _ceil(n_req, slack))


def _log_gamma_length(params, target: float, scale: float, slack: bool) -> int:
    if params.gamma == 0.0 or scale <= 0:
        return 1
    return max(1, _ceil((math.log(target) - math.log(scale)) / math.log(params.gamma), slack))


def sbrpg_schedule(params: SystemParams, K0, Sigma0, epsilon: float, kappa: float,
                   Gamma: float = DEFAULT_GAMMA_RATIO, solution: Optional[RiccatiSolution] = None,
                   slack: bool = False, coefficient_mode: str = "ambient-dim") -> BoundReport:
    """Worst-case iteration count, tolerance/probability splits and (M, l, r1, r2)."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not 0 < kappa < 1:
        raise ValueError("kappa must lie in (0, 1)")
    if not Gamma >= 1:
        raise ValueError("Gamma must be at least 1")
    sol = solution or solve_are(params)
    K0 = np.asarray(K0, dtype=float).reshape(-1)
    Sigma0 = np.asarray(Sigma0, dtype=float)
    rep = perturbation_report(params, K0, Sigma0, sol)
    if rep.phi is None:
        raise ValueError("automatic step sizes give no contraction at this start")
    g, mu, n = params.gamma, params.mu, params.n
    phi, eta1, eta2 = rep.phi, rep.eta1, rep.eta2
    gap0 = rep.f - sol.f_star

    N_rpg = theoretical_iterations(params, eta1, gap0, epsilon, sol) + int(slack)
    N_sb = max(N_rpg, _ceil(N_rpg * math.log1p(-phi) / math.log1p(-phi / 2.0), slack)) if N_rpg else 0
    steps = max(N_sb, 1)
    kappa1 = -math.expm1(math.log1p(-kappa) / (4.0 * steps))
    kappa2 = -math.expm1(math.log1p(-kappa) / (2.0 * steps))

    h_sum = rep.h10_corrected + rep.h11_corrected
    norm_S = float(np.linalg.eigvalsh(Sigma0)[-1])
    eps1 = mu * phi * epsilon / (8.0 * eta1 * h_sum)
    eps2 = phi * norm_S * epsilon / (2.0 * eta2 * h_sum)
    eps2_proof = phi * epsilon / (2.0 * norm_S**2 * eta2 * h_sum)
    gk_bar = rep.grad_k_bound_corrected
    eps3 = mu**2 * phi * epsilon / (8.0 * eta1 * gk_bar * h_sum) if gk_bar > 0 else math.inf

    L = params.init.L
    f = rep.f
    normK = float(np.linalg.norm(K0))
    normR, Q = params.norm_R, params.Q
    dK = smoothing_coefficient(n, "vec", coefficient_mode)
    dS = smoothing_coefficient(n, "sym", coefficient_mode)
    dim_sigma = n * (n + 1) // 2

    # gain estimate
    r1 = eps1 / (2.0 * rep.h6_corrected)
    base1 = eps1 / 6.0 + gk_bar
    sigma1 = (2.0 * dK * f / r1) ** 2 + base1**2
    R1 = 2.0 * dK * f / r1 + base1
    base2 = eps1 / 2.0 + gk_bar
    R2 = 2.0 * Gamma * L**2 * f * r1 + base2
    sigma2 = R2**2
    k1 = math.sqrt(kappa1)
    M_k = max(bernstein_sample_size(sigma1, R1, eps1 / 6.0, k1, n, slack),
              bernstein_sample_size(sigma2, R2, eps1 / 3.0, k1, n, slack)) if math.isfinite(R2) else None
    ps = abs(rep.psi)
    invQ = _div(1.0, abs(Q))
    l_k = _log_gamma_length(params, r1 / n * epsilon / 3.0,
                            2.0 * abs(f) * (2.0 * normK**2 * normR + invQ) + ps * (1.0 + invQ + 1.0 / (1.0 - g)),
                            slack)

    # covariance estimate
    r2 = eps2 / (2.0 * rep.h9_corrected)
    baseS = eps2 / 2.0 + rep.grad_sigma_bound
    RS = 2.0 * dS * f / r2 + baseS
    sigmaS = (2.0 * dS * f / r2) ** 2 + baseS**2
    RS2 = 2.0 * Gamma * L**2 * f * r2 + 5.0 * eps2 / 6.0 + rep.grad_sigma_bound
    M_sigma = max(bernstein_sample_size(sigmaS, RS, eps2 / 2.0, kappa2, dim_sigma, slack),
                  bernstein_sample_size(RS2**2, RS2, eps2 / 3.0, kappa2, dim_sigma, slack)) \
        if math.isfinite(RS2) else None
    logdet = float(np.linalg.slogdet(Sigma0)[1])
    psi2 = abs(float(np.sum(Sigma0 * params.R))
               + params.tau / 2.0 * (n + 2.0 * (n * math.log(2.0 * math.pi) + logdet)))
    ratio = 1.0 + normK**2 * normR * invQ
    l_sigma = _log_gamma_length(params, eps2 * r2 / (3.0 * n),
                                ratio * 2.0 * f + (ratio + 1.0 / (1.0 - g)) * psi2, slack)

    # second-moment estimate
    S = rep.s
    r3 = min(S / (2.0 * rep.h_k), eps3 / (3.0 * rep.h_k), rep.h_sigma)
    l_s = _log_gamma_length(params, eps3 / 3.0, S / 2.0, slack)
    M_s = max(1, _ceil(math.sqrt(3.0 * S / eps3 * math.log(n / kappa1)), slack))

    sched = {
        "r1": r1, "r2": r2, "r3": r3, "Gamma": Gamma, "L": L,
        "sigma1": sigma1, "R1": R1, "sigma2": sigma2, "R2": R2,
        "sigma_Sigma": sigmaS, "R_Sigma": RS, "R_Sigma_prime": RS2,
        "M_K": M_k, "M_Sigma": M_sigma, "M_S": M_s,
        "M": None if M_k is None or M_sigma is None else max(M_k, M_sigma, M_s),
        "l_K": l_k, "l_Sigma": l_sigma, "l_S": l_s, "l": max(l_k, l_sigma, l_s),
        "coefficient_mode": coefficient_mode, "slack": slack,
    }
    return BoundReport(**{**rep.to_dict(), "N_rpg": N_rpg, "N_sb": N_sb, "epsilon": epsilon, "kappa": kappa,
                          "eps1": eps1, "eps2": eps2, "eps2_proof": eps2_proof, "eps3": eps3,
                          "kappa1": kappa1, "kappa2": kappa2, "kappa3": kappa1, "schedule": sched})
