import copy
import json
import subprocess
import sys

import pytest

from erlq import __version__
from erlq.cli import main
from erlq.config import BENCHMARK_CONFIG


def _config(tmp_path, name="cfg.json", **sections):
    raw = copy.deepcopy(BENCHMARK_CONFIG)
    raw["sbrpg"] = {"M": 40, "l": 5, "N": 4, "r1": 0.3, "r2": 0.03, "eta1": 0.01, "eta2": 0.05}
    raw["gradcheck"] = {"samples": 5}
    for key, value in sections.items():
        raw[key] = {**raw.get(key, {}), **value} if isinstance(value, dict) else value
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return str(path)


def test_solve(tmp_path, capsys):
    assert main(["solve", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "riccati.json").read_text())
    assert doc["p_star"] == pytest.approx(0.6535535113050934, rel=1e-12)
    assert doc["meta"]["version"].startswith(__version__ + "+cfg.")
    assert "P* = 0.65355351130" in capsys.readouterr().out


def test_eval_default_policy(tmp_path):
    assert main(["eval", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "eval.json").read_text())
    assert doc["f"] == pytest.approx(3.0957301959972168, rel=1e-13)
    assert doc["meta"]["seed"] == 0


def test_rpg_outputs(tmp_path):
    cfg = _config(tmp_path, rpg={"epsilon": 1e-4})
    assert main(["rpg", "-c", cfg, "--out", str(tmp_path)]) == 0
    for name in ("rpg.csv", "rpg_gap.svg", "rpg.meta.json"):
        assert (tmp_path / name).stat().st_size > 0
    meta = json.loads((tmp_path / "rpg.meta.json").read_text())
    assert meta["run"]["converged"] and len(meta["config_hash"]) == 64


def test_sbrpg_outputs_and_determinism(tmp_path):
    cfg = _config(tmp_path)
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(["sbrpg", "-c", cfg, "--seed", "3", "--out", str(a)]) == 0
    assert main(["sbrpg", "-c", cfg, "--seed", "3", "--out", str(b)]) == 0
    assert main(["sbrpg", "-c", cfg, "--seed", "3", "--workers", "3", "--out", str(c)]) == 0
    for name in ("sbrpg.csv", "sbrpg_cost.svg", "sbrpg_relative_gap.svg", "sbrpg_k_error.svg",
                 "sbrpg_sigma_error.svg"):
        assert (a / name).read_bytes() == (b / name).read_bytes() == (c / name).read_bytes()
    meta = json.loads((a / "sbrpg.meta.json").read_text())
    assert meta["seed"] == 3 and meta["run"]["f_source"] == "oracle-eval"


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("ERLQ_SEED", "11")
    cfg = _config(tmp_path)
    assert main(["sbrpg", "-c", cfg, "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "sbrpg.meta.json").read_text())["seed"] == 11


def test_output_switches(tmp_path):
    cfg = _config(tmp_path, output={"csv": False, "svg": False})
    assert main(["sbrpg", "-c", cfg, "--out", str(tmp_path)]) == 0
    assert not (tmp_path / "sbrpg.csv").exists()
    assert not list(tmp_path.glob("*.svg"))
    assert (tmp_path / "sbrpg.meta.json").exists()


def test_gradcheck(tmp_path, capsys):
    cfg = _config(tmp_path)
    assert main(["gradcheck", "-c", cfg, "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "gradcheck.csv").read_text().splitlines()
    assert lines[0] == "sample,f,grad_k_norm,grad_sigma_norm,rel_err_k,rel_err_sigma"
    assert len(lines) == 6
    assert "max relative error" in capsys.readouterr().out


def test_bounds(tmp_path):
    assert main(["bounds", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "bounds.json").read_text())
    assert doc["N_sb"] >= doc["N_rpg"] > 0
    assert doc["violated_assumptions"] == []
    assert main(["bounds", "--slack", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "bounds.json").read_text())["N_rpg"] == doc["N_rpg"] + 1


@pytest.mark.parametrize("argv", [
    ["solve", "-c", "/nonexistent/cfg.json"],
    ["sbrpg", "--workers", "0"],
    ["sbrpg", "--coefficient-mode", "bogus"],
    ["launch"],
    [],
])
def test_usage_and_config_errors_exit_1(tmp_path, argv):
    try:
        code = main(argv + ["--out", str(tmp_path)] if argv and argv[0] != "launch" else argv)
    except SystemExit as exit_:
        code = exit_.code
    assert code == 1


def test_bad_key_exit_1(tmp_path, capsys):
    cfg = _config(tmp_path, sbrpg={"Mx": 3})
    assert main(["sbrpg", "-c", cfg, "--out", str(tmp_path)]) == 1
    assert "sbrpg.Mx: unknown key" in capsys.readouterr().err


def test_numerical_failure_exit_2(tmp_path, capsys):
    cfg = _config(tmp_path, policy={"K": [50.0, 50.0, 50.0]})
    assert main(["eval", "-c", cfg, "--out", str(tmp_path)]) == 2
    assert "eval failed: InadmissibleError" in capsys.readouterr().err


def test_paper_exp_short(tmp_path):
    cfg = _config(tmp_path)
    assert main(["paper-exp", "-c", cfg, "--seed", "1", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "sbrpg.csv").exists()


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "erlq.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and __version__ in out.stdout
