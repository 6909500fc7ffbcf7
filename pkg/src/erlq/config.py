"""Experiment configuration: JSON in, validated dataclasses out.

Every key is checked; unknown keys and wrong types raise ConfigError naming
the offending path (``sbrpg.M``, ``system.D[1]``...).
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .errors import ConfigError
from .model import InitialStateDist, SystemParams
from .presets import BENCH_D
from .rpg import RpgConfig
from .sbrpg import SbrpgConfig

SEED_ENV = "ERLQ_SEED"
SEED_MAX = 2**64 - 1


@dataclass(frozen=True)
class SolverConfig:
    are_tol: float = 1e-12
    max_iter: int = 100_000


@dataclass(frozen=True)
class PolicyConfig:
    """Starting (or evaluated) policy; None means K = 0, Sigma = 0.5 I."""
    K: Optional[list] = None
    Sigma: Optional[list] = None

    def arrays(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        K = np.zeros(n) if self.K is None else np.asarray(self.K, dtype=float)
        Sigma = 0.5 * np.eye(n) if self.Sigma is None else np.asarray(self.Sigma, dtype=float)
        if K.shape != (n,):
            raise ConfigError(f"policy.K: expected length {n}, got shape {K.shape}")
        if Sigma.shape != (n, n):
            raise ConfigError(f"policy.Sigma: expected {n}x{n}, got shape {Sigma.shape}")
        return K, Sigma


@dataclass(frozen=True)
class BoundsConfig:
    epsilon: float = 1e-3
    kappa: float = 0.1
    Gamma: float = 10.0
    slack: bool = False


@dataclass(frozen=True)
class GradcheckConfig:
    samples: int = 100
    step: float = 1e-5


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "out"
    csv: bool = True
    svg: bool = True
    record_every: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemParams
    solver: SolverConfig = SolverConfig()
    policy: PolicyConfig = PolicyConfig()
    rpg: RpgConfig = RpgConfig()
    sbrpg: SbrpgConfig = SbrpgConfig()
    bounds: BoundsConfig = BoundsConfig()
    gradcheck: GradcheckConfig = GradcheckConfig()
    output: OutputConfig = OutputConfig()
    seed: Optional[int] = None

    def to_dict(self) -> dict:
        s = self.system
        system = {"A": s.A, "B": s.B.tolist(), "C": s.C, "D": s.D.tolist(), "Q": s.Q,
                  "R": s.R.tolist(), "gamma": s.gamma, "tau": s.tau,
                  "init": {"kind": s.init.kind, "scale": s.init.scale}, "noise": s.noise}
        sb = asdict(self.sbrpg)
        sb.pop("seed")
        return {"system": system, "solver": asdict(self.solver), "policy": asdict(self.policy),
                "rpg": asdict(self.rpg), "sbrpg": sb, "bounds": asdict(self.bounds),
                "gradcheck": asdict(self.gradcheck), "output": asdict(self.output), "seed": self.seed}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


# -- field checking -------------------------------------------------------------

def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _number(v, path):
    if not _is_num(v):
        raise ConfigError(f"{path}: expected a number, got {v!r}")
    return float(v)


def _integer(v, path):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}: expected an integer, got {v!r}")
    return v


def _boolean(v, path):
    if not isinstance(v, bool):
        raise ConfigError(f"{path}: expected true/false, got {v!r}")
    return v


def _string(v, path):
    if not isinstance(v, str):
        raise ConfigError(f"{path}: expected a string, got {v!r}")
    return v


def _vector(v, path):
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{path}: expected a non-empty list of numbers")
    return [_number(x, f"{path}[{i}]") for i, x in enumerate(v)]


def _matrix(v, path):
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{path}: expected a list of rows")
    rows = [_vector(r, f"{path}[{i}]") for i, r in enumerate(v)]
    if any(len(r) != len(rows) for r in rows):
        raise ConfigError(f"{path}: expected a square matrix")
    return rows


def _step(v, path):
    if v == "auto":
        return v
    return _number(v, path)


def _optional(check):
    def inner(v, path):
        return None if v is None else check(v, path)
    return inner


def _section(raw, path, spec: dict) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object")
    out = {}
    for key, value in raw.items():
        sub = f"{path}.{key}" if path else key
        if key not in spec:
            raise ConfigError(f"{sub}: unknown key")
        out[key] = spec[key](value, sub)
    return out


def _build(cls, kwargs, path):
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        msg = str(err)
        head = msg.split(" ", 1)[0]
        where = f"{path}.{head}" if head in kwargs else path
        raise ConfigError(f"{where}: {msg}") from None


_INIT = {"kind": _string, "scale": _number}
_SYSTEM = {"A": _number, "B": _vector, "C": _number, "D": _matrix, "Q": _number, "R": _matrix,
           "gamma": _number, "tau": _number, "init": lambda v, p: _section(v, p, _INIT),
           "noise": _string}
_SOLVER = {"are_tol": _number, "max_iter": _integer}
_POLICY = {"K": _optional(_vector), "Sigma": _optional(_matrix)}
_RPG = {"eta1": _step, "eta2": _step, "epsilon": _number, "max_iter": _integer,
        "record_every": _integer, "recompute_steps": _boolean}
_SBRPG = {"M": _integer, "l": _integer, "r1": _number, "r2": _number, "eta1": _number,
          "eta2": _number, "N": _integer, "coefficient_mode": _string, "estimator": _string,
          "workers": _integer, "max_retries": _integer, "oracle_eval": _boolean,
          "record_every": _integer}
_BOUNDS = {"epsilon": _number, "kappa": _number, "Gamma": _number, "slack": _boolean}
_GRADCHECK = {"samples": _integer, "step": _number}
_OUTPUT = {"dir": _string, "csv": _boolean, "svg": _boolean, "record_every": _integer}


def _seed(v, path):
    v = _integer(v, path)
    if not 0 <= v <= SEED_MAX:
        raise ConfigError(f"{path}: seed must be a 64-bit unsigned integer")
    return v


_TOP = {"system": None, "solver": _SOLVER, "policy": _POLICY, "rpg": _RPG, "sbrpg": _SBRPG,
        "bounds": _BOUNDS, "gradcheck": _GRADCHECK, "output": _OUTPUT, "seed": None}


def _system(raw, path="system") -> SystemParams:
    d = _section(raw, path, _SYSTEM)
    missing = [k for k in ("A", "B", "C", "D", "Q", "R", "gamma", "tau") if k not in d]
    if missing:
        raise ConfigError(f"{path}.{missing[0]}: required key missing")
    init = _build(InitialStateDist, d.pop("init", {}), f"{path}.init")
    return _build(SystemParams, {**d, "init": init}, path)


def from_dict(raw: dict) -> ExperimentConfig:
    """Parse a config mapping; raises ConfigError on the first bad key."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>: expected an object")
    for key in raw:
        if key not in _TOP:
            raise ConfigError(f"{key}: unknown key")
    if "system" not in raw:
        raise ConfigError("system: required key missing")
    kw: dict[str, Any] = {"system": _system(raw["system"])}
    classes = {"solver": SolverConfig, "policy": PolicyConfig, "rpg": RpgConfig,
               "sbrpg": SbrpgConfig, "bounds": BoundsConfig, "gradcheck": GradcheckConfig,
               "output": OutputConfig}
    for name, cls in classes.items():
        if name in raw:
            kw[name] = _build(cls, _section(raw[name], name, _TOP[name]), name)
    if raw.get("seed") is not None:
        kw["seed"] = _seed(raw["seed"], "seed")
    cfg = ExperimentConfig(**kw)
    cfg.policy.arrays(cfg.system.n)
    return cfg


def load(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err.msg} at line {err.lineno})") from None
    return from_dict(raw)


def resolve_seed(cli_seed: Optional[int], cfg: ExperimentConfig, env=None) -> int:
    """--seed beats the config, which beats $ERLQ_SEED, which beats 0."""
    env = os.environ if env is None else env
    if cli_seed is not None:
        return _seed(cli_seed, "--seed")
    if cfg.seed is not None:
        return cfg.seed
    if env.get(SEED_ENV):
        try:
            return _seed(int(env[SEED_ENV], 0), SEED_ENV)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}: expected an integer, got {env[SEED_ENV]!r}") from None
    return 0


def with_overrides(cfg: ExperimentConfig, **sbrpg_fields) -> ExperimentConfig:
    """Copy of cfg with selected sbrpg fields replaced (None values ignored)."""
    changes = {k: v for k, v in sbrpg_fields.items() if v is not None}
    if not changes:
        return cfg
    sb = _build(SbrpgConfig, {**asdict(cfg.sbrpg), **changes}, "sbrpg")
    return ExperimentConfig(**{f.name: getattr(cfg, f.name) for f in fields(cfg)} | {"sbrpg": sb})


BENCHMARK_CONFIG = {
    "system": {
        "A": 0.7, "B": [0.1, 0.2, 0.3], "C": 0.03, "D": BENCH_D, "Q": 0.5,
        "R": [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        "gamma": 0.5, "tau": 0.1, "init": {"kind": "two-point", "scale": 1.0}, "noise": "gaussian",
    },
    "policy": {"K": [0.0, 0.0, 0.0], "Sigma": [[0.5, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 0.5]]},
    "sbrpg": {"M": 1500, "l": 10, "r1": 0.3, "r2": 0.03, "eta1": 0.01, "eta2": 0.05, "N": 150},
}


def benchmark_experiment() -> ExperimentConfig:
    return from_dict(copy.deepcopy(BENCHMARK_CONFIG))
