"""Plant, Gaussian policies and the Monte Carlo rollout simulator.

The state is scalar and the control is an n-vector:

    x_{t+1} = (A + w^x_t C) x_t + (B + w^u_t D) u_t,    u_t ~ N(-K x_t, Sigma)

with w^x_t a scalar and w^u_t a row n-vector of zero-mean, unit-variance,
mutually independent noises.
"""

from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Sequence, Union

import numpy as np

from .errors import DegenerateCovarianceError, RolloutDivergedError

LOG_2PI = math.log(2.0 * math.pi)
DIVERGENCE_LIMIT = 1e15

Seed = Union[int, Sequence[int]]


_erf = np.vectorize(math.erf, otypes=[float])


def _frozen_array(a, ndim):
    arr = np.array(a, dtype=float, ndmin=ndim)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class InitialStateDist:
    """Distribution of x_0.

    ``scale`` is the point magnitude for ``two-point``, the half-width for
    ``uniform`` and the standard deviation for ``gaussian``.
    """

    kind: str = "two-point"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("two-point", "uniform", "gaussian"):
            raise ValueError(f"unknown initial-state kind {self.kind!r}")
        if not self.scale > 0:
            raise ValueError("initial-state scale must be positive")

    @property
    def mu(self) -> float:
        """E[x_0^2]."""
        if self.kind == "uniform":
            return self.scale**2 / 3.0
        return self.scale**2

    @property
    def L(self) -> float:
        """Essential bound on |x_0|."""
        return math.inf if self.kind == "gaussian" else self.scale

    @classmethod
    def two_point(cls, mu: float = 1.0) -> "InitialStateDist":
        return cls("two-point", math.sqrt(mu))

    def from_normal(self, g):
        """Transform standard normal drivers into draws of x_0."""
        g = np.asarray(g, dtype=float)
        if self.kind == "two-point":
            return self.scale * np.where(g >= 0, 1.0, -1.0)
        if self.kind == "uniform":
            return self.scale * _erf(g / math.sqrt(2.0))
        return self.scale * g

    def sample(self, rng: np.random.Generator, size=None):
        return self.from_normal(rng.standard_normal(size))


@dataclass(frozen=True)
class SystemParams:
    A: float
    B: np.ndarray
    C: float
    D: np.ndarray
    Q: float
    R: np.ndarray
    gamma: float
    tau: float
    init: InitialStateDist = field(default_factory=InitialStateDist)
    noise: str = "gaussian"

    def __post_init__(self):
        B = _frozen_array(self.B, 1)
        n = B.shape[0]
        D = _frozen_array(self.D, 2)
        R = _frozen_array(self.R, 2)
        if B.ndim != 1 or D.shape != (n, n) or R.shape != (n, n):
            raise ValueError(f"dimension mismatch: B {B.shape}, D {D.shape}, R {R.shape}")
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "R", R)
        for name in ("A", "C", "Q", "gamma", "tau"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not np.allclose(R, R.T, rtol=0, atol=1e-12):
            raise ValueError("R must be symmetric")
        if np.linalg.eigvalsh(R)[0] <= 0:
            raise ValueError("R must be positive definite")
        if self.Q < 0:
            raise ValueError("Q must be non-negative")
        # gamma = 0 is allowed so single-step reductions can be evaluated
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.noise not in ("gaussian", "bounded"):
            raise ValueError(f"unknown noise law {self.noise!r}")

    @property
    def n(self) -> int:
        return self.B.shape[0]

    @property
    def mu(self) -> float:
        return self.init.mu

    @cached_property
    def G(self) -> np.ndarray:
        """B^T B + D^T D, the control-noise coupling matrix."""
        G = np.outer(self.B, self.B) + self.D.T @ self.D
        G.setflags(write=False)
        return G

    @cached_property
    def sigma_min_R(self) -> float:
        return float(np.linalg.eigvalsh(self.R)[0])

    @cached_property
    def norm_R(self) -> float:
        return float(np.linalg.norm(self.R, 2))

    @cached_property
    def norm_G(self) -> float:
        return float(np.linalg.norm(self.G, 2))

    def assumption_violations(self) -> list[str]:
        """Standing assumptions of the convergence theory that fail here."""
        out = []
        if not self.Q > 0:
            out.append("Q > 0")
        if not self.gamma > 0:
            out.append("gamma > 0")
        if not self.tau < 2 * self.sigma_min_R:
            out.append("tau < 2 sigma_min(R)")
        return out


@dataclass(frozen=True)
class GaussianPolicy:
    """pi(u | x) = N(-K x, Sigma)."""

    K: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self):
        K = _frozen_array(self.K, 1)
        Sigma = _frozen_array(self.Sigma, 2)
        if Sigma.shape != (K.shape[0], K.shape[0]):
            raise ValueError(f"Sigma shape {Sigma.shape} does not match K {K.shape}")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "Sigma", Sigma)

    @property
    def n(self) -> int:
        return self.K.shape[0]

    @cached_property
    def chol(self) -> np.ndarray:
        try:
            return np.linalg.cholesky(self.Sigma)
        except np.linalg.LinAlgError:
            raise DegenerateCovarianceError() from None

    @cached_property
    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    discounted_cost: float
    discounted_sq_states: float
    seed: tuple

    @property
    def length(self) -> int:
        return self.actions.shape[0]


def v_k(params: SystemParams, K) -> float:
    """Closed-loop mean-square gain A^2 + C^2 + K^T G K - 2 A B K."""
    K = np.asarray(K, dtype=float)
    return float(params.A**2 + params.C**2 + K @ params.G @ K - 2.0 * params.A * (params.B @ K))


def is_symmetric_pd(Sigma, tol: float = 0.0) -> bool:
    Sigma = np.asarray(Sigma, dtype=float)
    if Sigma.ndim != 2 or Sigma.shape[0] != Sigma.shape[1]:
        return False
    if not np.array_equal(Sigma, Sigma.T) and not np.allclose(Sigma, Sigma.T, rtol=0, atol=1e-14):
        return False
    if not np.all(np.isfinite(Sigma)):
        return False
    return bool(np.linalg.eigvalsh(Sigma)[0] > tol)


def is_admissible(params: SystemParams, policy: GaussianPolicy, tol: float = 0.0) -> bool:
    return params.gamma * v_k(params, policy.K) < 1.0 and is_symmetric_pd(policy.Sigma, tol)


def log_pdf(policy: GaussianPolicy, x: float, u) -> float:
    """log N(u; -K x, Sigma)."""
    u = np.asarray(u, dtype=float)
    r = u + policy.K * x
    z = np.linalg.solve(policy.chol, r)
    return -0.5 * (policy.n * LOG_2PI + policy.logdet + float(z @ z))


def neg_entropy(Sigma) -> float:
    """E[log pi] = -(n + log((2 pi)^n det Sigma)) / 2."""
    Sigma = np.asarray(Sigma, dtype=float)
    sign, logdet = np.linalg.slogdet(Sigma)
    if sign <= 0:
        raise DegenerateCovarianceError()
    n = Sigma.shape[0]
    return -0.5 * (n + n * LOG_2PI + logdet)


def second_moment_step(params: SystemParams, policy: GaussianPolicy, m: float) -> float:
    """Propagate E[x_t^2] one step: V_K m + Tr(Sigma G)."""
    return v_k(params, policy.K) * m + float(np.sum(policy.Sigma * params.G))


# -- random streams -------------------------------------------------------------

@lru_cache(maxsize=256)
def _philox_key(master: int) -> tuple:
    return tuple(int(w) for w in np.random.SeedSequence(master).generate_state(2, np.uint64))


def stream(seed: Seed) -> np.random.Generator:
    """Counter-based generator for ``seed = (master, a, b, c)``.

    The master seed fixes the Philox key; the remaining (at most three)
    words select a disjoint counter block, so every (iteration, index,
    purpose) triple owns an independent stream regardless of the order in
    which streams are created.
    """
    words = (seed,) if isinstance(seed, (int, np.integer)) else tuple(int(s) for s in seed)
    if not words or len(words) > 4:
        raise ValueError("seed must be an int or a tuple of 1-4 ints")
    master, rest = int(words[0]), words[1:]
    counter = [0] + [w & 0xFFFFFFFFFFFFFFFF for w in rest] + [0] * (3 - len(rest))
    return np.random.Generator(np.random.Philox(key=_philox_key(master), counter=counter))


ATTEMPT_SHIFT = 48
_local = threading.local()


def normal_block(master: int, words: Sequence[int], size: int, attempt: int = 0) -> np.ndarray:
    """Standard normals from the stream ``(master, *words)``.

    Equivalent to ``stream((master, *words)).standard_normal(size)`` for
    attempt 0; attempt k starts 2**48 * k counter steps further along, so
    redraws never overlap the first block. A per-thread bit generator is
    re-keyed instead of constructed, which is several times cheaper.
    """
    words = [int(w) & 0xFFFFFFFFFFFFFFFF for w in words]
    if len(words) > 3:
        raise ValueError("at most three stream words besides the master seed")
    counter = np.array([attempt << ATTEMPT_SHIFT] + words + [0] * (3 - len(words)), dtype=np.uint64)
    cache = getattr(_local, "gens", None)
    if cache is None:
        cache = _local.gens = {}
    entry = cache.get(master)
    if entry is None:
        bg = np.random.Philox(key=_philox_key(int(master)))
        entry = cache[master] = (bg, np.random.Generator(bg), bg.state)
    bg, gen, state = entry
    state["state"]["counter"] = counter
    state["buffer_pos"] = 4
    state["has_uint32"] = 0
    state["uinteger"] = 0
    bg.state = state
    return gen.standard_normal(size)


@dataclass
class NoiseDraw:
    x0: np.ndarray  # (M,)
    z: np.ndarray  # (M, l, n) standard normals driving the action
    wx: np.ndarray  # (M, l)
    wu: np.ndarray  # (M, l, n)


def noise_width(params: SystemParams, l: int) -> int:
    """Number of standard normals consumed by one rollout of length l."""
    return 1 + l * (2 * params.n + 1)


def noise_from_normals(params: SystemParams, block: np.ndarray, l: int) -> NoiseDraw:
    """Map rows of standard normals (M, noise_width) to rollout randomness.

    Layout per row: x0 driver, then the action block (l x n), the state-noise
    block (l) and the control-noise block (l x n). Bounded noise takes the
    sign of the driver (Rademacher); the initial state is a monotone
    transform of its driver.
    """
    block = np.atleast_2d(block)
    M, n = block.shape[0], params.n
    x0 = params.init.from_normal(block[:, 0])
    z = block[:, 1:1 + l * n].reshape(M, l, n)
    wx = block[:, 1 + l * n:1 + l * n + l]
    wu = block[:, 1 + l * n + l:].reshape(M, l, n)
    if params.noise == "bounded":
        wx = np.where(wx >= 0, 1.0, -1.0)
        wu = np.where(wu >= 0, 1.0, -1.0)
    return NoiseDraw(x0, z, wx, wu)


def draw_noise(params: SystemParams, rng: np.random.Generator, l: int) -> np.ndarray:
    """All randomness of one rollout as a single block of standard normals."""
    return rng.standard_normal(noise_width(params, l))


@dataclass
class RolloutBatch:
    costs: np.ndarray
    sq_states: np.ndarray
    diverged_at: np.ndarray  # -1 where the rollout stayed finite
    states: np.ndarray | None = None
    actions: np.ndarray | None = None


def rowdot(a, b):
    """Row-wise inner product summed in a fixed order (batch-size independent)."""
    s = a[:, 0] * b[:, 0]
    for j in range(1, a.shape[1]):
        s = s + a[:, j] * b[:, j]
    return s


def rowmatvec(mat, v):
    """Row-wise mat @ v for mat of shape (n, n) or (M, n, n)."""
    out = np.empty_like(v)
    n = v.shape[1]
    for i in range(mat.shape[-2]):
        row = mat[i] if mat.ndim == 2 else mat[:, i, :]
        if mat.ndim == 2:
            acc = row[0] * v[:, 0]
            for j in range(1, n):
                acc = acc + row[j] * v[:, j]
        else:
            acc = rowdot(row, v)
        out[:, i] = acc
    return out


def simulate_noise(params: SystemParams, K, chol, logdet, noise: NoiseDraw,
                   record: bool = False) -> RolloutBatch:
    """Run M rollouts in lock-step from pre-drawn noise.

    ``K`` is (n,) or (M, n); ``chol`` is the Cholesky factor (n, n) or
    (M, n, n); ``logdet`` a scalar or (M,). Every reduction is an explicit
    row-local sum, so a row's result does not depend on which other rows
    share the batch.
    """
    M, l, n = noise.z.shape
    K = np.broadcast_to(np.asarray(K, dtype=float), (M, n))
    chol = np.asarray(chol, dtype=float)
    logdet = np.broadcast_to(np.asarray(logdet, dtype=float), (M,))
    A, C, B, D, Q, R, gamma, tau = (params.A, params.C, params.B, params.D,
                                    params.Q, params.R, params.gamma, params.tau)
    log_norm = n * LOG_2PI + logdet

    x = noise.x0.copy()
    costs = np.zeros(M)
    sq = np.zeros(M)
    diverged = np.full(M, -1, dtype=int)
    alive = np.ones(M, dtype=bool)
    if record:
        states = np.zeros((M, l + 1))
        actions = np.zeros((M, l, n))
        states[:, 0] = x
    DT = np.ascontiguousarray(D.T)
    disc = 1.0
    for t in range(l):
        zt = noise.z[:, t, :]
        u = -K * x[:, None] + rowmatvec(chol, zt)
        uRu = rowdot(u, rowmatvec(R, u))
        logpi = -0.5 * (log_norm + rowdot(zt, zt))
        costs += disc * np.where(alive, Q * x * x + uRu + tau * logpi, 0.0)
        sq += disc * np.where(alive, x * x, 0.0)
        gain = B[None, :] + rowmatvec(DT, noise.wu[:, t, :])
        x = (A + noise.wx[:, t] * C) * x + rowdot(gain, u)
        bad = alive & ~(np.abs(x) <= DIVERGENCE_LIMIT)
        if bad.any():
            diverged[bad] = t + 1
            alive &= ~bad
            x = np.where(alive, x, 0.0)
        if record:
            states[:, t + 1] = x
            actions[:, t, :] = u
        disc *= gamma
    batch = RolloutBatch(costs, sq, diverged)
    if record:
        batch.states, batch.actions = states, actions
    return batch


def _seed_block(seed: Seed, size: int) -> np.ndarray:
    words = _seed_words(seed)
    return normal_block(words[0], words[1:], size)


def _seed_words(seed: Seed) -> tuple:
    return (int(seed),) if isinstance(seed, (int, np.integer)) else tuple(int(s) for s in seed)


def simulate_rollouts(params: SystemParams, policy: GaussianPolicy, l: int, seeds,
                      workers: int = 1) -> RolloutBatch:
    """One rollout of length ``l`` per seed, optionally spread across threads.

    Raises RolloutDivergedError for the first rollout whose state left
    [-1e15, 1e15].
    """
    if l < 1:
        raise ValueError("rollout length must be >= 1")
    seeds = list(seeds)
    chol, logdet = policy.chol, policy.logdet

    def run(chunk):
        block = np.array([_seed_block(s, noise_width(params, l)) for s in chunk])
        return simulate_noise(params, policy.K, chol, logdet, noise_from_normals(params, block, l))

    chunks = _chunks(seeds, workers)
    if len(chunks) == 1:
        parts = [run(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, chunks))
    batch = RolloutBatch(np.concatenate([p.costs for p in parts]),
                         np.concatenate([p.sq_states for p in parts]),
                         np.concatenate([p.diverged_at for p in parts]))
    bad = np.flatnonzero(batch.diverged_at >= 0)
    if bad.size:
        raise RolloutDivergedError(int(batch.diverged_at[bad[0]]), int(bad[0]))
    return batch


def _chunks(items, workers):
    workers = max(1, int(workers))
    if workers == 1 or len(items) <= 1:
        return [items]
    size = -(-len(items) // workers)
    return [items[i:i + size] for i in range(0, len(items), size)]


def sample_rollout(params: SystemParams, policy: GaussianPolicy, l: int, seed: Seed) -> Trajectory:
    """Simulate a single trajectory of length ``l``; pure in (params, policy, l, seed)."""
    if l < 1:
        raise ValueError("rollout length must be >= 1")
    words = _seed_words(seed)
    noise = noise_from_normals(params, _seed_block(words, noise_width(params, l)), l)
    batch = simulate_noise(params, policy.K, policy.chol, policy.logdet, noise, record=True)
    if batch.diverged_at[0] >= 0:
        raise RolloutDivergedError(int(batch.diverged_at[0]))
    return Trajectory(states=batch.states[0], actions=batch.actions[0],
                      discounted_cost=float(batch.costs[0]),
                      discounted_sq_states=float(batch.sq_states[0]), seed=words)
