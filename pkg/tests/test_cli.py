import csv
import json
import os

import pytest

from lindbeam.cli import main

CFG = """
[model]
a = 1.0
b = 0.5
mu = 0.1
eps0 = 0.02
omega_branch = -1
Mmax = 32
Nmax = 120

[run]
eps = 0.005
orders = 2
outdir = {out}
"""


def write_cfg(tmp_path, extra=""):
    cfg = tmp_path / "run.ini"
    cfg.write_text(CFG.format(out=tmp_path / "out") + extra)
    return str(cfg)


def test_coeffs_writes_files(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["--config", cfg, "coeffs"]) == 0
    out = tmp_path / "out"
    for name in ("coeffs.csv", "counterterms.csv", "nu.csv", "summary.json"):
        assert (out / name).exists()
    doc = json.loads((out / "summary.json").read_text())
    assert doc["schema_version"] == 1 and doc["q"] > 0
    rows = list(csv.DictReader(open(out / "coeffs.csv")))
    assert all(int(r["m"]) % 2 == 1 for r in rows)


def test_coeffs_deterministic(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["--config", cfg, "coeffs"]) == 0
    first = (tmp_path / "out" / "coeffs.csv").read_bytes()
    assert main(["--config", cfg, "coeffs"]) == 0
    assert (tmp_path / "out" / "coeffs.csv").read_bytes() == first


def test_linear_case_writes_primary_only(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["--config", cfg, "--a", "0", "--b", "0", "coeffs"]) == 0
    rows = list(csv.DictReader(open(tmp_path / "out" / "coeffs.csv")))
    assert {(int(r["k"]), int(r["n"]), int(r["m"])) for r in rows} == \
        {(0, 1, 1), (0, -1, 1)}
    assert all(float(r["value"]) == 0.0 for r in rows)


def test_invalid_mu_exit_2(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["--config", cfg, "--mu", "0.5", "coeffs"]) == 2
    assert not (tmp_path / "out" / "coeffs.csv").exists()


def test_unknown_config_key_rejected(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[model]\nfrobnicate = 3\n")
    assert main(["--config", str(cfg), "coeffs"]) == 2


def test_sign_excluded_exit_2(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["--config", cfg, "--omega-branch", "1", "coeffs"]) == 2


def test_trees_dump(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert main(["--config", cfg, "trees", "1", "2", "3"]) == 0
    out = capsys.readouterr().out
    assert "2 skeletons" in out and "mode=(2,3)" in out
    assert main(["--config", cfg, "trees", "2", "9", "3", "--special"]) == 0
    assert "special" in capsys.readouterr().out


def test_verify_pass_and_mutation_hook(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["--config", cfg, "verify"]) == 0
    rep = json.loads((tmp_path / "out" / "verify.json").read_text())
    assert all(c["ok"] for c in rep["checks"].values())
    assert main(["--config", cfg, "--kernel-sign-flip", "verify"]) == 1


def test_residual_run(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["--config", cfg, "--eps-lo", "0.0004", "--eps-hi", "0.004",
                 "--eps-count", "5", "residual"]) == 0
    doc = json.loads((tmp_path / "out" / "residual.json").read_text())
    assert doc["slope"] >= 1.7
    rows = list(csv.DictReader(open(tmp_path / "out" / "residual.csv")))
    assert len(rows) == 5


def test_residual_marks_excluded(tmp_path):
    # an eps parked on the (4,2) square resonance is excluded, not fatal
    cfg = write_cfg(tmp_path)
    import math
    eps_bad = (math.sqrt(1.1) * 4 - 4.0) / 4.0
    rc = main(["--config", cfg, "--eps0", "0.08", "--eps-lo", repr(eps_bad),
               "--eps-hi", repr(eps_bad), "--eps-count", "1", "residual"])
    assert rc == 0
    rows = list(csv.DictReader(open(tmp_path / "out" / "residual.csv")))
    assert rows[0]["status"].startswith("excluded")


def test_dioph_mass(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["--config", cfg, "--grid", "1000", "--Nmax", "120",
                 "dioph", "mass"]) == 0
    rows = list(csv.DictReader(open(tmp_path / "out" / "dioph_mass.csv")))
    assert len(rows) == 3
    for r in rows:
        assert float(r["excluded_measure"]) + float(r["tail_bound"]) \
            <= 6 * float(r["gamma"])
        assert "tail_bound" in r


def test_dioph_cantor_and_melnikov(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["--config", cfg, "dioph", "melnikov"]) == 0
    assert main(["--config", cfg, "dioph", "cantor"]) == 0
    doc = json.loads((tmp_path / "out" / "dioph_cantor.json").read_text())
    assert doc["accepted"] is True


def test_bruno_subcommand(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["--config", cfg, "--samples", "3", "bruno", "check"]) == 0
    rows = list(csv.DictReader(open(tmp_path / "out" / "bruno.csv")))
    assert [int(r["order"]) for r in rows] == [1, 2, 3]
    assert all(int(r["violations"]) == 0 for r in rows)


def test_kernel_dump(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["--config", cfg, "kernel"]) == 0
    rows = list(csv.DictReader(open(tmp_path / "out" / "kernel.csv")))
    assert all((int(r["m"]) + int(r["m1"]) + int(r["m2"])) % 2 == 1 for r in rows)


def test_outdir_env_override(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path)
    target = tmp_path / "elsewhere"
    monkeypatch.setenv("LINDBEAM_OUTDIR", str(target))
    assert main(["--config", cfg, "kernel"]) == 0
    assert (target / "kernel.csv").exists()
