"""``erlq`` command-line entry point.

Exit codes: 0 success, 1 configuration or usage error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .bounds import sbrpg_schedule
from .config import ExperimentConfig, load, benchmark_experiment, resolve_seed, with_overrides
from .errors import ConfigError, ErlqError
from .exact import evaluate, solve_are
from .gradcheck import gradcheck
from .history import RunHistory, fmt
from .plotting import plot_rpg, plot_sbrpg
from .rpg import RpgConfig, run_rpg
from .sbrpg import COEFFICIENT_MODES, run_sbrpg

log = logging.getLogger("erlq")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not serialisable: {type(o)}")


def _write_json(path: Path, doc) -> Path:
    path.write_text(json.dumps(doc, indent=2, default=_json_default) + "\n", encoding="utf-8")
    return path


class Context:
    """Resolved configuration plus output plumbing for one invocation."""

    def __init__(self, cfg: ExperimentConfig, seed: int, out: Path, command: str):
        self.cfg, self.seed, self.out, self.command = cfg, seed, out, command
        self.started = _now()
        out.mkdir(parents=True, exist_ok=True)

    def meta(self, extra: Optional[dict] = None) -> dict:
        digest = self.cfg.digest()
        return {"command": self.command, "version": f"{__version__}+cfg.{digest[:12]}",
                "config_hash": digest, "seed": self.seed, "config": self.cfg.to_dict(),
                "started": self.started, "finished": _now(), **(extra or {})}

    def history_outputs(self, hist: RunHistory, stem: str, plot) -> list[Path]:
        written = []
        if self.cfg.output.csv:
            written.append(hist.write_csv(self.out / f"{stem}.csv"))
        if self.cfg.output.svg:
            written.extend(plot(hist, self.out))
        meta = self.meta({"run": hist.meta, "events": hist.events, "f_star": hist.f_star})
        written.append(_write_json(self.out / f"{stem}.meta.json", meta))
        return written


def _record_every(section: int, output: int) -> int:
    return section if section != 1 else output


# -- subcommands ----------------------------------------------------------------

def cmd_solve(ctx: Context) -> list[Path]:
    sol = solve_are(ctx.cfg.system, tol=ctx.cfg.solver.are_tol, max_iter=ctx.cfg.solver.max_iter)
    print(f"P* = {sol.p_star:.12g}")
    print(f"q* = {sol.q_star:.12g}")
    print(f"K* = {np.array2string(sol.k_star, precision=10)}")
    print(f"Sigma* =\n{np.array2string(sol.sigma_star, precision=10)}")
    print(f"f* = {sol.f_star:.12g}")
    print(f"residual = {sol.residual:.3g} after {sol.iterations} sweeps")
    return [_write_json(ctx.out / "riccati.json", {**sol.to_dict(), "meta": ctx.meta()})]


def cmd_eval(ctx: Context) -> list[Path]:
    K, Sigma = ctx.cfg.policy.arrays(ctx.cfg.system.n)
    rep = evaluate(ctx.cfg.system, K, Sigma)
    print(f"f = {rep.f:.12g}  S = {rep.s:.12g}  V_K = {rep.v_k:.12g}")
    doc = {"K": K, "Sigma": Sigma, **rep.to_dict(), "meta": ctx.meta()}
    return [_write_json(ctx.out / "eval.json", doc)]


def cmd_rpg(ctx: Context) -> list[Path]:
    cfg = ctx.cfg
    K, Sigma = cfg.policy.arrays(cfg.system.n)
    rc = cfg.rpg
    rc = RpgConfig(**{**rc.__dict__, "record_every": _record_every(rc.record_every, cfg.output.record_every)})
    sol = solve_are(cfg.system, tol=cfg.solver.are_tol, max_iter=cfg.solver.max_iter)
    hist = run_rpg(cfg.system, K, Sigma, rc, sol)
    m = hist.meta
    print(f"iterations = {m['iterations']}  final gap = {hist.last.gap:.3e}  "
          f"theoretical N = {m['theoretical_N']}  converged = {m['converged']}")
    return ctx.history_outputs(hist, "rpg", plot_rpg)


def _run_sbrpg(ctx: Context) -> list[Path]:
    cfg = ctx.cfg
    K, Sigma = cfg.policy.arrays(cfg.system.n)
    sc = with_overrides(cfg, seed=ctx.seed,
                        record_every=_record_every(cfg.sbrpg.record_every, cfg.output.record_every)).sbrpg
    sol = solve_are(cfg.system, tol=cfg.solver.are_tol, max_iter=cfg.solver.max_iter)
    hist = run_sbrpg(cfg.system, K, Sigma, sc, sol)
    last = hist.last
    rel = abs(last.gap) / hist.f_star if last.gap is not None and hist.f_star else float("nan")
    print(f"iterations = {last.iter}  f = {fmt(last.f)}  f* = {hist.f_star:.12g}  "
          f"relative gap = {rel:.4f}")
    return ctx.history_outputs(hist, "sbrpg", plot_sbrpg)


def cmd_gradcheck(ctx: Context) -> list[Path]:
    gc = ctx.cfg.gradcheck
    rows = gradcheck(ctx.cfg.system, gc.samples, seed=ctx.seed, h=gc.step)
    path = ctx.out / "gradcheck.csv"
    cols = ["sample", "f", "grad_k_norm", "grad_sigma_norm", "rel_err_k", "rel_err_sigma"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([fmt(getattr(r, c)) for c in cols])
    mk = max((r.rel_err_k for r in rows), default=0.0)
    ms = max((r.rel_err_sigma for r in rows), default=0.0)
    print(f"max relative error: grad_K {mk:.3e}  grad_Sigma {ms:.3e}  ({len(rows)} policies)")
    return [path]


def cmd_bounds(ctx: Context, slack: bool) -> list[Path]:
    cfg = ctx.cfg
    K, Sigma = cfg.policy.arrays(cfg.system.n)
    b = cfg.bounds
    sol = solve_are(cfg.system, tol=cfg.solver.are_tol, max_iter=cfg.solver.max_iter)
    rep = sbrpg_schedule(cfg.system, K, Sigma, b.epsilon, b.kappa, Gamma=b.Gamma, solution=sol,
                         slack=slack or b.slack, coefficient_mode=cfg.sbrpg.coefficient_mode)
    print(f"phi = {rep.phi:.4g}  N_rpg = {rep.N_rpg}  N_sb = {rep.N_sb}  "
          f"M = {rep.schedule['M']}  l = {rep.schedule['l']}")
    doc = {**rep.to_dict(), "violated_assumptions": cfg.system.assumption_violations(),
           "meta": ctx.meta()}
    return [_write_json(ctx.out / "bounds.json", doc)]


COMMANDS = ("solve", "eval", "rpg", "sbrpg", "gradcheck", "bounds", "paper-exp")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="JSON config (default: built-in three-input benchmark)")
    common.add_argument("--seed", type=int, help="master seed; overrides the config and $ERLQ_SEED")
    common.add_argument("--out", help="output directory (default: output.dir from the config)")
    common.add_argument("--coefficient-mode", choices=COEFFICIENT_MODES,
                        help="smoothing coefficient used by the sphere estimators")
    common.add_argument("--workers", type=int, help="threads for rollout batches")
    common.add_argument("--slack", action="store_true", help="add one to every integer bound")
    common.add_argument("-v", "--verbose", action="store_true")
    p = _Parser(prog="erlq", description="Entropy-regularised LQ control with multiplicative noise.")
    p.add_argument("--version", action="version", version=f"erlq {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {"solve": "solve the Riccati equation", "eval": "closed-form evaluation of a policy",
             "rpg": "exact regularised policy gradient", "sbrpg": "sample-based policy gradient",
             "gradcheck": "finite-difference audit of the analytic gradients",
             "bounds": "theoretical constants and sample-size schedule",
             "paper-exp": "three-input benchmark run end to end"}
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return p


def _config(args) -> ExperimentConfig:
    if args.command == "paper-exp" and not args.config:
        cfg = benchmark_experiment()
    elif args.config:
        cfg = load(args.config)
    else:
        cfg = benchmark_experiment()
    if args.workers is not None and args.workers < 1:
        raise ConfigError("--workers: must be >= 1")
    return with_overrides(cfg, coefficient_mode=args.coefficient_mode, workers=args.workers)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        seed = resolve_seed(args.seed, cfg)
        ctx = Context(cfg, seed, Path(args.out or cfg.output.dir), args.command)
    except ConfigError as err:
        print(f"erlq {args.command}: configuration error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"erlq {args.command}: cannot prepare output directory: {err}", file=sys.stderr)
        return 1
    runners = {"solve": cmd_solve, "eval": cmd_eval, "rpg": cmd_rpg, "sbrpg": _run_sbrpg,
               "gradcheck": cmd_gradcheck, "bounds": lambda c: cmd_bounds(c, args.slack),
               "paper-exp": _run_sbrpg}
    try:
        written = runners[args.command](ctx)
    except ConfigError as err:
        print(f"erlq {args.command}: configuration error: {err}", file=sys.stderr)
        return 1
    except (ErlqError, ValueError, np.linalg.LinAlgError, FloatingPointError) as err:
        print(f"erlq {args.command}: {args.command} failed: {type(err).__name__}: {err}", file=sys.stderr)
        return 2
    for path in written:
        log.info("wrote %s", path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
