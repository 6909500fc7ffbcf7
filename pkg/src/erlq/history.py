"""Per-iteration records and their CSV serialisation."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np

STAT_COLUMNS = [
    "iter", "f", "f_estimate", "gap", "relative_gap", "k_sq_err", "sigma_sq_err",
    "eta1", "eta2", "phi", "s_hat", "grad_k_std", "grad_sigma_std",
    "samples", "rejected", "backtracks", "sigma_min_eig", "sigma_max_eig",
]


@dataclass
class IterationRecord:
    iter: int
    K: np.ndarray
    Sigma: np.ndarray
    f: Optional[float] = None
    gap: Optional[float] = None
    eta1: Optional[float] = None
    eta2: Optional[float] = None
    phi: Optional[float] = None
    f_estimate: Optional[float] = None
    s_hat: Optional[float] = None
    grad_k_std: Optional[float] = None
    grad_sigma_std: Optional[float] = None
    samples: Optional[int] = None
    rejected: Optional[int] = None
    backtracks: int = 0


def fmt(v) -> str:
    """17 significant digits, empty for missing values."""
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    if np.isnan(v):
        return ""
    return format(v, ".17g")


@dataclass
class RunHistory:
    kind: str
    records: list = field(default_factory=list)
    f_star: Optional[float] = None
    k_star: Optional[np.ndarray] = None
    sigma_star: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)
    events: list = field(default_factory=list)

    @property
    def last(self) -> IterationRecord:
        return self.records[-1]

    def append(self, rec: IterationRecord) -> None:
        if self.records and rec.iter <= self.records[-1].iter:
            raise ValueError("records must have strictly increasing iter")
        self.records.append(rec)

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if (v := self._row_values(r).get(name)) is None else v
                         for r in self.records], dtype=float)

    def columns(self) -> list[str]:
        n = self.records[0].K.shape[0] if self.records else 0
        ks = [f"K_{i}" for i in range(n)]
        ss = [f"Sigma_{i}{j}" for i in range(n) for j in range(i, n)]
        return STAT_COLUMNS + ks + ss

    def _row_values(self, r: IterationRecord) -> dict:
        out = {"iter": r.iter, "f": r.f, "f_estimate": r.f_estimate, "gap": r.gap,
               "eta1": r.eta1, "eta2": r.eta2, "phi": r.phi, "s_hat": r.s_hat,
               "grad_k_std": r.grad_k_std, "grad_sigma_std": r.grad_sigma_std,
               "samples": r.samples, "rejected": r.rejected, "backtracks": r.backtracks}
        out["relative_gap"] = (abs(r.gap) / self.f_star
                               if r.gap is not None and self.f_star and self.f_star > 0 else None)
        if self.k_star is not None:
            out["k_sq_err"] = float(np.sum((r.K - self.k_star) ** 2))
        if self.sigma_star is not None:
            out["sigma_sq_err"] = float(np.sum((r.Sigma - self.sigma_star) ** 2))
        eig = np.linalg.eigvalsh(0.5 * (r.Sigma + r.Sigma.T))
        out["sigma_min_eig"], out["sigma_max_eig"] = float(eig[0]), float(eig[-1])
        n = r.K.shape[0]
        for i in range(n):
            out[f"K_{i}"] = float(r.K[i])
            for j in range(i, n):
                out[f"Sigma_{i}{j}"] = float(r.Sigma[i, j])
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = self.columns()
        w.writerow(cols)
        for r in self.records:
            vals = self._row_values(r)
            w.writerow([fmt(vals.get(c)) for c in cols])
        return buf.getvalue()

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_csv(), encoding="utf-8", newline="")
        return path

    def write_meta(self, path) -> Path:
        path = Path(path)
        doc = {"kind": self.kind, "f_star": self.f_star,
               "k_star": None if self.k_star is None else self.k_star.tolist(),
               "sigma_star": None if self.sigma_star is None else self.sigma_star.tolist(),
               "meta": self.meta, "events": self.events}
        path.write_text(json.dumps(doc, indent=2, default=_json_default) + "\n", encoding="utf-8")
        return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    raise TypeError(f"not serialisable: {type(o)}")


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
