import csv
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from kwreplica import cli, verify
from kwreplica.lattice import ReplicaLatticeSpec, build_switching_lattice
from kwreplica.oracle import exact_log_ratio

from synthetic import TRUTH, synthetic_points

SIM = """schema_version = 1
[geometry]
dimension = 2
n_replicas = 2
extents = [3, 3]
[physics]
beta = [0.35]
l = [0]
[protocol]
n_steps = 8
equilibration_sweeps = 20
n_trajectories = {n}
master_seed = 5
[io]
checkpoint_interval = 40
"""


def write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def tree_bytes(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


# simulate


def test_dry_run_plan(tmp_path, capsys):
    cfg = write(tmp_path, SIM.format(n=100))
    code, out, _ = run(["simulate", cfg, "-o", str(tmp_path / "o"), "--dry-run"], capsys)
    assert code == 0
    plan = json.loads(out)["plan"]
    g = build_switching_lattice(ReplicaLatticeSpec(2, 2, (3, 3), 1))
    assert plan[0]["n_sites"] == g.n_sites and plan[0]["geometry_hash"] == g.geometry_hash()
    assert plan[0]["estimated_sweeps"] == (20 + 8) * 100 * 2
    assert not (tmp_path / "o" / "records").exists()
    assert (tmp_path / "o" / "config.frozen.toml").exists()


def test_simulate_rerun_is_byte_identical(tmp_path, capsys):
    cfg = write(tmp_path, SIM.format(n=100))
    assert run(["simulate", cfg, "-o", str(tmp_path / "a")], capsys)[0] == 0
    assert run(["simulate", cfg, "-o", str(tmp_path / "b")], capsys)[0] == 0
    a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
    assert a == b
    assert {"records/point000_forward.jsonl", "records/point000_reverse.jsonl", "ratios.json", "cfunction.csv",
            "config.frozen.toml"} <= set(a)
    ratios = json.loads(a["ratios.json"])["points"][0]
    assert ratios["exact_log_ratio"] == pytest.approx(exact_log_ratio(build_switching_lattice(
        ReplicaLatticeSpec(2, 2, (3, 3), 1)), 0.35), rel=1e-14)
    rows = list(csv.DictReader(open(tmp_path / "a" / "cfunction.csv")))
    assert len(rows) == 1 and float(rows[0]["l"]) == 0.0


def test_crash_and_resume(tmp_path, capsys):
    full = tmp_path / "full"
    run(["simulate", write(tmp_path, SIM.format(n=100)), "-o", str(full)], capsys)
    # a partial run, then a crash that tears the last record line
    part = tmp_path / "part"
    run(["simulate", write(tmp_path, SIM.format(n=60), "short.toml"), "-o", str(part)], capsys)
    rec = part / "records" / "point000_forward.jsonl"
    data = rec.read_bytes()
    rec.write_bytes(data[: len(data) - 25])
    (part / "records" / "point000_reverse.jsonl").unlink()
    code, _, _ = run(["simulate", write(tmp_path, SIM.format(n=100)), "-o", str(part)], capsys)
    assert code == 0
    assert tree_bytes(part) == tree_bytes(full)


def test_resume_refuses_foreign_records(tmp_path, capsys):
    out = str(tmp_path / "o")
    run(["simulate", write(tmp_path, SIM.format(n=40)), "-o", out], capsys)
    other = SIM.format(n=80).replace("master_seed = 5", "master_seed = 6")
    code, _, err = run(["simulate", write(tmp_path, other, "b.toml"), "-o", out], capsys)
    assert code == 2 and "different configuration" in err


def test_config_errors_exit_2(tmp_path, capsys):
    bad = write(tmp_path, SIM.format(n=10) + "colour = 1\n")
    code, _, err = run(["simulate", bad, "--dry-run"], capsys)
    assert code == 2 and "unknown key [io].colour" in err
    assert run(["simulate", str(tmp_path / "missing.toml")], capsys)[0] == 2
    assert run(["frobnicate"], capsys)[0] == 2


# verify


def test_verify_suite_passes(tmp_path, capsys):
    code, out, _ = run(["verify", "scale-table", "-o", str(tmp_path)], capsys)
    assert code == 0
    doc = json.loads(out)
    assert doc["passed"] and doc["suites"][0]["suite"] == "scale-table"
    assert (tmp_path / "verify-scale-table.json").exists()


def test_verify_failure_exit_1(monkeypatch, capsys):
    def failing():
        return verify.SuiteReport("broken", [verify.Check("always fails", 1.0, 0.0, False)])

    monkeypatch.setitem(verify.SUITES, "broken", failing)
    code, out, _ = run(["verify", "broken"], capsys)
    assert code == 1 and not json.loads(out)["passed"]


def test_verify_unknown_suite(capsys):
    code, _, err = run(["verify", "nope"], capsys)
    assert code == 2 and "available" in err


# scale / dualize / lattice


def test_scale(capsys):
    code, out, _ = run(["scale", "18"], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["beta_c"] == 0.2228492 and doc["a_T_c"] == pytest.approx(1 / 18)
    assert run(["scale", "19"], capsys)[0] == 2


def test_dualize_beta(capsys):
    code, out, _ = run(["dualize", "beta", "0.226102"], capsys)
    assert code == 0 and json.loads(out)["beta_star"] == pytest.approx(0.751805, abs=1e-6)
    assert run(["dualize", "beta", "-1"], capsys)[0] == 2


def test_dualize_beta_with_geometry(tmp_path, capsys):
    cfg = write(tmp_path, SIM.format(n=10))
    code, out, _ = run(["dualize", "beta", "0.3", "--config", cfg], capsys)
    doc = json.loads(out)
    assert doc["prefactor"]["ln2_coefficient"] == "-1"
    assert doc["prefactor"]["ln_sinh_2beta_star_coefficient"] == "-18"


def test_dualize_coeffs(capsys):
    code, out, _ = run(["dualize", "coeffs", "--N", "2", "--beta", "0.7"], capsys)
    rows = list(csv.DictReader(out.splitlines()))
    assert code == 0
    assert float(rows[0]["C_k"]) == pytest.approx(np.cosh(0.7)) and float(rows[1]["C_k"]) == pytest.approx(np.sinh(0.7))


def test_lattice_dump(tmp_path, capsys):
    cfg = write(tmp_path, SIM.format(n=10))
    code, out, _ = run(["lattice", "dump", cfg, "--l", "1"], capsys)
    lines = out.splitlines()
    assert code == 0 and lines[0] == "site_a,site_b,class,sign"
    assert len(lines) - 1 == 2 * 18
    code, out, _ = run(["lattice", "dump", cfg, "--switching"], capsys)
    classes = [line.split(",")[2] for line in out.splitlines()[1:]]
    assert classes.count("SWITCH_ON") == 2 and classes.count("SWITCH_OFF") == 2


def test_console_script_entry_point():
    for cmd in ([sys.executable, "-m", "kwreplica"], [shutil.which("kwreplica")]):
        r = subprocess.run(cmd + ["scale", "8"], capture_output=True, text=True)
        assert r.returncode == 0 and json.loads(r.stdout)["beta_c"] == 0.226102


# analyze


def analysis_config(tmp_path, extra=""):
    return write(tmp_path, f"schema_version = 1\n[physics]\nn_tau_c = 8\n[geometry]\ndimension = 3\n"
                           f"extents = [32, 16, 16]\n[analysis]\nc2_cft = {TRUTH['c2_cft']}\n{extra}", "an.toml")


def points_csv(tmp_path, **kw):
    path = tmp_path / "pts.csv"
    cli.write_points_csv(path, [p.to_row() for p in synthetic_points(**kw)])
    return str(path)


def test_analyze_end_to_end(tmp_path, capsys):
    cfg = analysis_config(tmp_path, f"mg_over_tc = {TRUTH['mg_over_tc']}\nfits = [\"ansatz\"]\n")
    code, out, _ = run(["analyze", cfg, points_csv(tmp_path), "-o", str(tmp_path / "o")], capsys)
    assert code == 0
    ad = tmp_path / "o" / "analysis"
    fits = json.loads((ad / "fits.json").read_text())["fits"]
    assert fits[0]["model"] == "AnsatzBessel"
    assert abs(fits[0]["params"]["A"] - TRUTH["A"]) <= 2 * fits[0]["errors"]["A"]
    assert (ad / "cfunction.png").stat().st_size > 1000
    assert (ad / "thermo.csv").exists() and (ad / "continuum.csv").exists()


def test_analyze_single_volume_warns(tmp_path, capsys, caplog):
    cfg = analysis_config(tmp_path, f"mg_over_tc = {TRUTH['mg_over_tc']}\n")
    code, out, err = run(["analyze", cfg, points_csv(tmp_path, volumes=(2.0,)), "-o", str(tmp_path / "o")], capsys)
    assert code == 0
    assert any("fewer than 3 volumes" in w for w in json.loads(out)["warnings"])
    assert any("fewer than 3 volumes" in r.getMessage() and r.levelname == "WARNING" for r in caplog.records)


def test_analyze_without_mass_exit_2(tmp_path, capsys):
    code, _, err = run(["analyze", analysis_config(tmp_path), points_csv(tmp_path), "-o", str(tmp_path / "o")],
                       capsys)
    assert code == 2 and "glueball mass" in err


def test_analyze_mg_table(tmp_path, capsys):
    table = tmp_path / "mg.csv"
    table.write_text("beta,a_m_g\n" + "".join(f"{b},{TRUTH['mg_over_tc'] / n}\n" for n, b in
                                              ((8, 0.226102), (12, 0.223951), (16, 0.223101))))
    cfg = analysis_config(tmp_path, f"mg_table = \"{table}\"\nfits = [\"ansatz\"]\n")
    code, out, _ = run(["analyze", cfg, points_csv(tmp_path), "-o", str(tmp_path / "o")], capsys)
    assert code == 0
    assert json.loads((tmp_path / "o" / "analysis" / "fits.json").read_text())["mg_over_tc"] == pytest.approx(2.0)


def test_analyze_without_c2_exit_2(tmp_path, capsys):
    cfg = write(tmp_path, "schema_version = 1\n[physics]\nbeta = [0.3]\n[analysis]\nmg_over_tc = 2.0\n", "c.toml")
    code, _, err = run(["analyze", cfg, points_csv(tmp_path), "-o", str(tmp_path / "o")], capsys)
    assert code == 2 and "C_2^CFT" in err
