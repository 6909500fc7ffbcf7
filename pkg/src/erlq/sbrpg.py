"""Model-free sample-based RPG: sphere smoothing over finite rollouts."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import InadmissibleError, SmoothingRadiusError
from .exact import RiccatiSolution, cost_f, evaluate_many, solve_are
from .history import IterationRecord, RunHistory
from .model import (GaussianPolicy, Seed, SystemParams, is_admissible, rowdot, rowmatvec,
                    noise_from_normals, noise_width, normal_block, simulate_noise, stream)

log = logging.getLogger(__name__)

COEFFICIENT_MODES = ("ambient-dim", "paper-n", "paper-n2")
PURPOSE_K, PURPOSE_SIGMA = 0, 1
MAX_HALVINGS = 20


@dataclass(frozen=True)
class SbrpgConfig:
    # defaults found by grid search on the three-input benchmark (scripts/grid_search.py)
    M: int = 1500
    l: int = 10
    r1: float = 0.3
    r2: float = 0.03
    eta1: float = 0.01
    eta2: float = 0.05
    N: int = 150
    seed: int = 0
    coefficient_mode: str = "ambient-dim"
    estimator: str = "rollout"  # or "exact-f": closed-form cost in place of rollouts
    workers: int = 1
    max_retries: int = 100
    oracle_eval: bool = True  # report the closed-form cost alongside estimates
    record_every: int = 1

    def __post_init__(self):
        if self.M < 1 or self.l < 1:
            raise ValueError("M and l must be >= 1")
        if not (self.r1 > 0 and self.r2 > 0):
            raise ValueError("smoothing radii must be positive")
        if not (self.eta1 > 0 and self.eta2 > 0):
            raise ValueError("step sizes must be positive")
        if self.N < 0 or self.record_every < 1 or self.workers < 1 or self.max_retries < 1:
            raise ValueError("N >= 0, record_every >= 1, workers >= 1, max_retries >= 1 required")
        if self.coefficient_mode not in COEFFICIENT_MODES:
            raise ValueError(f"coefficient_mode must be one of {COEFFICIENT_MODES}")
        if self.estimator not in ("rollout", "exact-f"):
            raise ValueError("estimator must be 'rollout' or 'exact-f'")


@dataclass(frozen=True)
class GradientEstimate:
    value: Union[np.ndarray, float]
    samples_used: int
    rejected: int
    empirical_std: float  # norm-scale std of a single summand

    @property
    def attempts(self) -> int:
        return self.samples_used + self.rejected


@dataclass(frozen=True)
class StepDiagnostics:
    grad_k: GradientEstimate
    s_hat: GradientEstimate
    grad_sigma: GradientEstimate
    f_estimate: float
    eta1: float = 0.0
    eta2: float = 0.0
    halvings_k: int = 0
    halvings_sigma: int = 0


def smoothing_coefficient(n: int, kind: str, mode: str = "ambient-dim") -> float:
    """Dimension d in the d / r^2 prefactor of the sphere-smoothing identity."""
    if mode not in COEFFICIENT_MODES:
        raise ValueError(f"unknown coefficient mode {mode!r}")
    if kind not in ("vec", "sym"):
        raise ValueError(f"unknown perturbation kind {kind!r}")
    if kind == "vec" or mode == "paper-n":
        return float(n)
    if mode == "paper-n2":
        return float(n * n)
    return n * (n + 1) / 2.0


# -- sphere sampling --------------------------------------------------------------

def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else stream(seed)


def sphere_vec(rng: np.random.Generator, n: int, r: float) -> np.ndarray:
    g = rng.standard_normal(n)
    return g * (r / np.linalg.norm(g))


def sym_from_coords(c: np.ndarray, n: int) -> np.ndarray:
    """Isometric embedding of R^{n(n+1)/2} into symmetric matrices (Frobenius norm)."""
    S = np.zeros((n, n))
    iu = np.triu_indices(n)
    w = np.where(iu[0] == iu[1], 1.0, 1.0 / np.sqrt(2.0))
    S[iu] = c * w
    return S + np.triu(S, 1).T


def sphere_sym(rng: np.random.Generator, n: int, r: float) -> np.ndarray:
    S = sym_from_coords(rng.standard_normal(n * (n + 1) // 2), n)
    return S * (r / np.sqrt(np.sum(S * S)))


def sample_sphere_vec(n: int, r: float, seed: Seed) -> np.ndarray:
    """Uniform draw from the radius-r sphere in R^n."""
    return sphere_vec(_rng(seed), n, r)


def sample_sphere_sym(n: int, r: float, seed: Seed) -> np.ndarray:
    """Uniform draw from the Frobenius radius-r sphere of symmetric n x n matrices."""
    return sphere_sym(_rng(seed), n, r)


# -- estimators ------------------------------------------------------------------

def _prefix(seed: Seed, purpose: int) -> tuple:
    words = (int(seed),) if isinstance(seed, (int, np.integer)) else tuple(int(s) for s in seed)
    if len(words) == 1:
        words = words + (0,)
    if len(words) != 2:
        raise ValueError("estimator seed must be an int or (master, iteration)")
    return words + (purpose,)


def _embed(params, kind, coords, r):
    """Scale raw normal coordinates (M, d) onto the radius-r sphere."""
    if kind == "vec":
        P = coords
    else:
        n = params.n
        iu = np.triu_indices(n)
        w = np.where(iu[0] == iu[1], 1.0, 1.0 / np.sqrt(2.0))
        P = np.zeros((coords.shape[0], n, n))
        P[:, iu[0], iu[1]] = coords * w
        P[:, iu[1], iu[0]] = coords * w
    norms = np.sqrt(np.sum(P.reshape(P.shape[0], -1) ** 2, axis=1))
    return P * (r / norms).reshape((-1,) + (1,) * (P.ndim - 1))


def _admissible_rows(params, K, Sigma, kind, P):
    """Vectorised admissibility of the perturbed policies."""
    if kind == "vec":
        Ks = K + P
        GK = rowmatvec(params.G, Ks)
        V = (params.A**2 + params.C**2 + rowdot(Ks, GK)
             - 2.0 * params.A * rowdot(Ks, np.broadcast_to(params.B, Ks.shape)))
        return params.gamma * V < 1.0
    return np.linalg.eigvalsh(Sigma + P)[:, 0] > 0.0


def _perturbed_values(params, K, Sigma, kind, r, cfg: SbrpgConfig, prefix):
    """Per-sample perturbations, costs and discounted squared states.

    Index i owns the stream ``prefix + (i,)``; each attempt consumes one
    block of normals holding the perturbation coordinates followed by the
    rollout noise. Rejected attempts (inadmissible perturbation or diverged
    rollout) draw a fresh block from the same stream.
    """
    n = params.n
    d = n if kind == "vec" else n * (n + 1) // 2
    width = d + (noise_width(params, cfg.l) if cfg.estimator == "rollout" else 0)

    master, words = prefix[0], prefix[1:]

    def run(lo, hi):
        m = hi - lo
        blocks = np.array([normal_block(master, words + (i,), width) for i in range(lo, hi)])
        pert = _embed(params, kind, blocks[:, :d], r)
        f = np.empty(m)
        s = np.empty(m)
        attempts = np.ones(m, dtype=int)
        rejected = 0
        pending = np.arange(m)
        while pending.size:
            ok = _admissible_rows(params, K, Sigma, kind, pert[pending])
            todo = pending[ok]
            if todo.size:
                P = pert[todo]
                if cfg.estimator == "exact-f":
                    fv, sv = (evaluate_many(params, K + P, Sigma) if kind == "vec"
                              else evaluate_many(params, K, Sigma + P))
                    good = np.ones(todo.size, dtype=bool)
                else:
                    noise = noise_from_normals(params, blocks[todo, d:], cfg.l)
                    if kind == "vec":
                        chol = np.linalg.cholesky(Sigma)
                        batch = simulate_noise(params, K + P, chol, 2.0 * np.sum(np.log(np.diag(chol))), noise)
                    else:
                        chol = np.linalg.cholesky(Sigma + P)
                        logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
                        batch = simulate_noise(params, K, chol, logdet, noise)
                    fv, sv = batch.costs, batch.sq_states
                    good = batch.diverged_at < 0
                f[todo[good]] = fv[good]
                s[todo[good]] = sv[good]
                retry = np.concatenate([pending[~ok], todo[~good]])
            else:
                retry = pending
            retry.sort()
            pending = retry
            if pending.size:
                rejected += pending.size
                attempts[pending] += 1
                if attempts.max() > cfg.max_retries:
                    raise SmoothingRadiusError()
                for j in pending:
                    blocks[j] = normal_block(master, words + (lo + j,), width, attempt=attempts[j] - 1)
                pert[pending] = _embed(params, kind, blocks[pending, :d], r)
        return pert, f, s, rejected

    workers = max(1, min(cfg.workers, cfg.M))
    size = -(-cfg.M // workers)
    bounds = [(lo, min(lo + size, cfg.M)) for lo in range(0, cfg.M, size)]
    if len(bounds) == 1:
        parts = [run(*bounds[0])]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: run(*b), bounds))
    pert = np.concatenate([p[0] for p in parts])
    f = np.concatenate([p[1] for p in parts])
    s = np.concatenate([p[2] for p in parts])
    return pert, f, s, sum(p[3] for p in parts)


def _summarise(terms: np.ndarray, rejected: int) -> GradientEstimate:
    M = terms.shape[0]
    mean = terms.mean(axis=0)
    flat = terms.reshape(M, -1)
    std = float(np.sqrt(np.sum(flat.var(axis=0, ddof=1)))) if M > 1 else 0.0
    if mean.ndim == 0:
        mean = float(mean)
    return GradientEstimate(value=mean, samples_used=M, rejected=rejected, empirical_std=std)


def estimate_grad_k_and_s(params: SystemParams, K, Sigma, cfg: SbrpgConfig, seed: Seed):
    """Smoothed-gradient estimate in K and the matching S estimate from shared rollouts.

    Returns (grad_k estimate, S estimate, mean sampled cost).
    """
    K = np.asarray(K, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    coef = smoothing_coefficient(params.n, "vec", cfg.coefficient_mode) / cfg.r1**2
    U, f, s, rejected = _perturbed_values(params, K, Sigma, "vec", cfg.r1, cfg, _prefix(seed, PURPOSE_K))
    g = _summarise(coef * f[:, None] * U, rejected)
    s_hat = _summarise(s, rejected)
    return g, s_hat, float(f.mean())


def estimate_grad_sigma(params: SystemParams, K, Sigma, cfg: SbrpgConfig, seed: Seed) -> GradientEstimate:
    """Smoothed-gradient estimate in Sigma from symmetric sphere perturbations."""
    K = np.asarray(K, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    coef = smoothing_coefficient(params.n, "sym", cfg.coefficient_mode) / cfg.r2**2
    V, f, _, rejected = _perturbed_values(params, K, Sigma, "sym", cfg.r2, cfg, _prefix(seed, PURPOSE_SIGMA))
    est = _summarise(coef * f[:, None, None] * V, rejected)
    value = 0.5 * (est.value + est.value.T)
    return GradientEstimate(value=value, samples_used=est.samples_used, rejected=rejected,
                            empirical_std=est.empirical_std)


def sbrpg_step(params: SystemParams, K, Sigma, cfg: SbrpgConfig, seed: Seed):
    """K update from estimated gradient and S, then Sigma update estimated at the new K."""
    K = np.asarray(K, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    gk, s_hat, f_est = estimate_grad_k_and_s(params, K, Sigma, cfg, seed)
    eta1, hk = cfg.eta1, 0
    while True:
        K_new = K - eta1 * gk.value / s_hat.value
        if is_admissible(params, GaussianPolicy(K_new, Sigma)):
            break
        if hk >= MAX_HALVINGS:
            raise InadmissibleError("SB-RPG K step left the admissible set",
                                    policy=(K_new, Sigma), previous=(K, Sigma))
        hk += 1
        eta1 /= 2.0
        log.info("inadmissible K step, halving eta1 to %g", eta1)

    gs = estimate_grad_sigma(params, K_new, Sigma, cfg, seed)
    eta2, hs = cfg.eta2, 0
    while True:
        Sigma_new = Sigma - eta2 * Sigma @ gs.value @ Sigma
        Sigma_new = 0.5 * (Sigma_new + Sigma_new.T)
        admissible = is_admissible(params, GaussianPolicy(K_new, Sigma_new))
        # keep every radius-r2 perturbation of the next iterate positive definite
        if admissible and np.linalg.eigvalsh(Sigma_new)[0] > cfg.r2:
            break
        if hs >= MAX_HALVINGS:
            if admissible:
                log.info("Sigma step pinned at the smoothing margin; keeping Sigma")
                Sigma_new, eta2 = Sigma.copy(), 0.0
                break
            raise InadmissibleError("SB-RPG Sigma step left the admissible set",
                                    policy=(K_new, Sigma_new), previous=(K, Sigma))
        hs += 1
        eta2 /= 2.0
        log.info("inadmissible Sigma step, halving eta2 to %g", eta2)
    diag = StepDiagnostics(grad_k=gk, s_hat=s_hat, grad_sigma=gs, f_estimate=f_est,
                           eta1=eta1, eta2=eta2, halvings_k=hk, halvings_sigma=hs)
    return K_new, Sigma_new, diag


def run_sbrpg(params: SystemParams, K0, Sigma0, cfg: SbrpgConfig,
              solution: Optional[RiccatiSolution] = None) -> RunHistory:
    """N outer iterations; iteration j draws from streams keyed by (seed, j)."""
    K = np.asarray(K0, dtype=float).copy()
    Sigma = np.asarray(Sigma0, dtype=float).copy()
    if not is_admissible(params, GaussianPolicy(K, Sigma)):
        raise InadmissibleError("initial policy is not admissible", policy=(K, Sigma))
    sol = solution
    if sol is None and cfg.oracle_eval:
        sol = solve_are(params)
    hist = RunHistory(kind="sbrpg",
                      f_star=sol.f_star if sol else None,
                      k_star=sol.k_star if sol else None,
                      sigma_star=sol.sigma_star if sol else None)
    hist.meta.update(f_source="oracle-eval" if cfg.oracle_eval else "rollout-estimate",
                     estimator=cfg.estimator, coefficient_mode=cfg.coefficient_mode)

    def oracle(K, Sigma):
        if not cfg.oracle_eval:
            return None, None
        f = cost_f(params, K, Sigma)
        return f, f - sol.f_star

    f, gap = oracle(K, Sigma)
    hist.append(IterationRecord(iter=0, K=K.copy(), Sigma=Sigma.copy(), f=f, gap=gap,
                                eta1=cfg.eta1, eta2=cfg.eta2))
    for j in range(1, cfg.N + 1):
        K, Sigma, d = sbrpg_step(params, K, Sigma, cfg, (cfg.seed, j))
        halvings = d.halvings_k + d.halvings_sigma
        if halvings:
            hist.events.append({"iter": j, "event": "halve", "halvings_k": d.halvings_k,
                                "halvings_sigma": d.halvings_sigma})
        if j % cfg.record_every and j != cfg.N:
            continue
        f, gap = oracle(K, Sigma)
        hist.append(IterationRecord(
            iter=j, K=K.copy(), Sigma=Sigma.copy(), f=f, gap=gap,
            eta1=d.eta1, eta2=d.eta2,
            f_estimate=d.f_estimate, s_hat=d.s_hat.value,
            grad_k_std=d.grad_k.empirical_std, grad_sigma_std=d.grad_sigma.empirical_std,
            samples=d.grad_k.samples_used + d.grad_sigma.samples_used,
            rejected=d.grad_k.rejected + d.grad_sigma.rejected, backtracks=halvings))
    return hist
