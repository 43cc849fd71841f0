import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from anosovlab import cli
from anosovlab.config import DEFAULTS, EXPERIMENTS, load_config, validate_config
from anosovlab.errors import ConfigError

GOLDEN = Path(__file__).parent / "golden"


# ---------------------------------------------------------------- validation


def test_seed_required():
    with pytest.raises(ConfigError, match="seed required"):
        validate_config('experiment = "pressure"', env={})


def test_seed_from_environment():
    cfg = validate_config('experiment = "gromov"', env={"LAB_SEED": "42"})
    assert cfg.seed == 42
    cfg = validate_config('experiment = "gromov"\nseed = 7', env={"LAB_SEED": "42"})
    assert cfg.seed == 7
    with pytest.raises(ConfigError):
        validate_config('experiment = "gromov"', env={"LAB_SEED": "x"})


@pytest.mark.parametrize("text,path", [
    ('seed = 1\n[pressure]\nclosure_tol = -1e-9', "pressure.closure_tol"),
    ('seed = 1\n[pressure]\nclosure_tol = 0.0', "pressure.closure_tol"),
    ('seed = 1\n[pressure]\nqs = []', "pressure.qs"),
    ('seed = 1\n[pressure]\nn_sub = 1', "pressure.n_sub"),
    ('seed = 1\n[pressure]\nT = "ten"', "pressure.T"),
    ('seed = 1\n[model]\nkappa = 1.0\nx = 2', "model.x"),
    ('seed = 1\n[model]\nkind = "flat"', "model.kind"),
    ('seed = 1\n[gromov]\nn_triangle = 3', "gromov.n_triangle"),
    ('seed = 1\nbogus = 3', "bogus"),
    ('seed = -1', "seed"),
    ('seed = 1\nthreads = 0', "threads"),
    ('seed = 1\n[pressure]\nwindow_correction = true\nweighted = false',
     "pressure.window_correction"),
])
def test_rejections_carry_key_path(text, path):
    with pytest.raises(ConfigError) as exc:
        validate_config(text, "pressure", env={})
    assert exc.value.path == path


def test_experiment_kind_checks():
    with pytest.raises(ConfigError):
        validate_config("seed = 1", env={})
    with pytest.raises(ConfigError):
        validate_config('experiment = "gromov"\nseed = 1', "pressure", env={})
    with pytest.raises(ConfigError):
        validate_config('experiment = "nope"\nseed = 1', env={})
    with pytest.raises(ConfigError):
        validate_config('seed = 1\n[appendixA]\nqs = [0.0, 1.0, 2.0]', "appendixA", env={})
    with pytest.raises(ConfigError):
        validate_config("seed = [", "pressure", env={})


def test_golden_echo():
    cfg = load_config(GOLDEN / "pressure_minimal.toml", env={})
    assert cfg.echo() == (GOLDEN / "pressure_defaults.json").read_text()
    # the echo is itself a valid config that reproduces itself
    again = validate_config(cfg.echo(), env={})
    assert again.echo() == cfg.echo() and again.hash == cfg.hash


def test_json_and_toml_agree():
    t = validate_config('seed = 5\n[spherical]\nts = [1.0, 2.0]\n[model]\nkappa = 2.0',
                        "spherical", env={})
    j = validate_config(json.dumps({"seed": 5, "spherical": {"ts": [1.0, 2.0]},
                                    "model": {"kappa": 2.0}}), "spherical", env={})
    assert t.echo() == j.echo() and t.hash == j.hash


def test_hash_ignores_run_only_keys():
    a = validate_config("seed = 5", "gromov", env={})
    b = validate_config('seed = 5\nthreads = 4\noutput_dir = "elsewhere"', "gromov", env={})
    c = validate_config("seed = 6", "gromov", env={})
    assert a.hash == b.hash != c.hash
    assert len(a.hash) == 16


@given(st.sampled_from(EXPERIMENTS), st.integers(0, 2 ** 64 - 1))
def test_defaults_validate(exp, seed):
    cfg = validate_config({"seed": seed}, exp, env={})
    assert cfg.params == DEFAULTS[exp]
    assert cfg.seed == seed


def test_derived_seeds():
    s = cli.derived_seeds(1, 5)
    assert s == cli.derived_seeds(1, 5)
    assert len(set(s)) == 5 and all(0 <= x < 2 ** 63 for x in s)
    assert cli.derived_seeds(1, 3) == s[:3]


# ---------------------------------------------------------------- the command


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def run(argv, capsys):
    code = cli.main(argv)
    return code, capsys.readouterr()


SCHREIER = 'seed = 7\n[schreier]\nns = [60, 120]\nmax_radius = 4\n'
STRONG = 'seed = 3\n[strongconv]\nn = 40\ntrials = 6\nball_R = 4\n'


def test_exit_code_success_and_manifest(tmp_path, capsys):
    cfg = write(tmp_path, "s.toml", SCHREIER)
    out = tmp_path / "o"
    code, cap = run(["schreier", "--config", cfg, "--out", str(out)], capsys)
    assert code == 0
    line = json.loads(cap.out.strip())
    man = json.loads((out / "manifest.json").read_text())
    for key in ("config_hash", "seed", "versions", "wall_time_s", "files", "summary", "config"):
        assert key in man
    assert man["config_hash"] == line["config_hash"]
    assert set(man["versions"]) >= {"anosovlab", "numpy", "scipy", "numba", "python"}
    rows = list(csv.reader(open(out / "schreier.csv")))
    assert rows[0][-1] == "config_hash"
    assert all(r[-1] == man["config_hash"] for r in rows[1:])


def test_exit_code_config(tmp_path, capsys):
    code, cap = run(["pressure", "--config", write(tmp_path, "b.toml", "seed = 1\ntol = 1")],
                    capsys)
    assert code == 1 and "tol" in cap.err
    code, _ = run(["pressure", "--config", str(tmp_path / "missing.toml")], capsys)
    assert code == 1
    code, _ = run(["filtered", "--config",
                   write(tmp_path, "c.toml", 'seed = 1\n[model]\nkind = "perturbed"')], capsys)
    assert code == 1


def test_missing_seed_exit_one(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("LAB_SEED", raising=False)
    code, cap = run(["gromov", "--config", write(tmp_path, "a.toml", "[gromov]\neta = 0.5")],
                    capsys)
    assert code == 1 and "seed required" in cap.err
    monkeypatch.setenv("LAB_SEED", "9")
    code, cap = run(["gromov", "--config", write(tmp_path, "a.toml", "[gromov]\neta = 0.5"),
                     "--echo"], capsys)
    assert code == 0 and json.loads(cap.out)["seed"] == 9


def test_exit_code_numerical(tmp_path, capsys):
    cfg = write(tmp_path, "p.toml", "seed = 1\n[pressure]\nT = 0.5\nlength_margin = 0.1\n")
    code, cap = run(["pressure", "--config", cfg, "--out", str(tmp_path / "o")], capsys)
    assert code == 2 and "EmptyWindow" in cap.err


def test_exit_code_invariant(tmp_path, capsys):
    cfg = write(tmp_path, "c.toml", "seed = 1\n[consistency]\nT = 6.0\nradius = 8.0\n"
                "n_dir = 16\ntolerance = 1e-6\nenforce = true\n")
    code, cap = run(["consistency", "--config", cfg, "--out", str(tmp_path / "o")], capsys)
    assert code == 3 and "invariant" in cap.err


def test_cli_overrides(tmp_path, capsys):
    cfg = write(tmp_path, "s.toml", SCHREIER)
    code, cap = run(["schreier", "--config", cfg, "--seed", "11", "--threads", "2", "--echo"],
                    capsys)
    d = json.loads(cap.out)
    assert code == 0 and d["seed"] == 11 and d["threads"] == 2


def test_reruns_bit_identical_across_threads(tmp_path, capsys):
    cfg = write(tmp_path, "s.toml", STRONG)
    outs = []
    for k, threads in enumerate(("1", "1", "4")):
        out = tmp_path / f"o{k}"
        code, _ = run(["strongconv", "--config", cfg, "--threads", threads, "--out", str(out)],
                      capsys)
        assert code == 0
        outs.append((out / "strongconv.csv").read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_console_script(tmp_path):
    cfg = write(tmp_path, "g.toml", 'seed = 2\n[gromov]\nn_triangles = 5\n')
    r = subprocess.run([sys.executable, "-m", "anosovlab.cli", "gromov", "--config", cfg,
                        "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    rows = list(csv.reader(open(tmp_path / "o" / "gromov.csv")))
    assert rows[0] == cli.GROMOV_HEADER + ["config_hash"]
    checks = {r[0]: float(r[2]) for r in rows[1:] if r[0] != "divergence_rate"}
    assert checks["collinear_delta"] <= 1e-6
    assert checks["max_delta"] < np.log(3.0)
