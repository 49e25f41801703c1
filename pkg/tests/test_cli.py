import csv
import json
from pathlib import Path

import pytest
import yaml

from ddrobin.cli import fmt, main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write(tmp_path, data, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return str(p)


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def corrosion(tmp_path, **params):
    return write(tmp_path, {"preset": "corrosion", "resolution": 32, "T": 0.2, "dt": 0.02, "params": params})


def test_run_zero_flux(tmp_path):
    cfg = write(tmp_path, {"preset": "generic-drift", "resolution": 32, "T": 1.0, "dt": 0.05,
                           "params": {"species": [{"alpha": 0.0, "u0": {"kind": "cosine", "mean": 1, "amplitude": 0.5}}]}})
    out = tmp_path / "o"
    assert main(["run", "--config", cfg, "--out", str(out)]) == 0
    traj = rows(out / "trajectory.csv")
    masses = [float(r["u1_mass"]) for r in traj]
    assert max(abs(m - masses[0]) for m in masses) <= 1e-12
    assert len(traj) == 21


def test_run_corrosion_default(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--config", str(CONFIGS / "corrosion.yaml"), "--out", str(out)]) == 0
    traj = rows(out / "trajectory.csv")
    for r in traj:
        for s in ("u1", "u2", "u3"):
            assert float(r[f"{s}_min"]) >= -1e-12
        assert r["flags"] == ""
    meta = json.loads((out / "run.json").read_text())
    assert meta["exit_code"] == 0 and meta["config"]["preset"] == "corrosion"
    assert meta["invariants"]["flag_counts"]["NegativityViolation"] == 0
    final = rows(out / "final_state.csv")
    assert len(final) == 128 and set(final[0]) == {"x", "u1", "u2", "u3", "V"}


def test_schema_documents_every_column(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--config", corrosion(tmp_path), "--out", str(out)]) == 0
    schema = json.loads((out / "schema.json").read_text())
    for name in ("trajectory.csv", "final_state.csv"):
        header = next(csv.reader(open(out / name)))
        assert set(header) == set(schema[name])


def test_run_negative_u0(tmp_path, capsys):
    cfg = corrosion(tmp_path, u0=[-0.1, 0.5, 0.5])
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("ddrobin: exit=1 kind=config reason=")


def test_run_missing_config(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.yaml")]) == 1


def test_run_solver_failure(tmp_path, capsys):
    cfg = write(tmp_path, {"preset": "corrosion", "resolution": 32, "T": 0.2, "dt": 0.1,
                           "picard": {"max_iter": 1}, "params": {"Psi": 0.5}})
    out = tmp_path / "o"
    assert main(["run", "--config", cfg, "--out", str(out)]) == 2
    assert "kind=solver" in capsys.readouterr().err
    assert (out / "trajectory.csv").exists() and (out / "final_state.csv").exists()
    assert json.loads((out / "run.json").read_text())["exit_code"] == 2


def test_byte_identical(tmp_path):
    cfg = corrosion(tmp_path, Psi=0.3)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", cfg, "--out", str(a)]) == 0
    assert main(["run", "--config", cfg, "--out", str(b)]) == 0
    for name in ("trajectory.csv", "final_state.csv", "schema.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv("DDROBIN_OUTPUT_ROOT", str(tmp_path / "root"))
    cfg = corrosion(tmp_path)
    assert main(["run", "--config", cfg, "--out", "rel"]) == 0
    assert (tmp_path / "root" / "rel" / "trajectory.csv").exists()


def test_validate(tmp_path, capsys):
    assert main(["validate", "--config", corrosion(tmp_path)]) == 0
    assert capsys.readouterr().out.startswith("ok preset=corrosion")
    assert main(["validate", "--config", corrosion(tmp_path, epsilon=0)]) == 1


def test_truncation_small_density(tmp_path):
    out = tmp_path / "t"
    assert main(["truncation-study", "--config", corrosion(tmp_path, Psi=0.5), "--out", str(out),
                 "--p-list", "2,4,8,16"]) == 0
    table = rows(out / "truncation.csv")
    assert [int(r["p"]) for r in table] == [2, 4, 8, 16]
    assert all(float(r["max_difference"]) == 0.0 for r in table)


def test_truncation_large_density(tmp_path):
    out = tmp_path / "t"
    assert main(["truncation-study", "--config", str(CONFIGS / "generic_large_density.yaml"),
                 "--out", str(out), "--p-list", "16,8,4,2"]) == 0
    diff = {int(r["p"]): float(r["max_difference"]) for r in rows(out / "truncation.csv")}
    assert diff[2] > diff[4] > diff[8] == 0.0 == diff[16]


def test_truncation_empty_list(tmp_path):
    assert main(["truncation-study", "--config", corrosion(tmp_path), "--p-list", ""]) == 1


@pytest.mark.parametrize("name", ["heat_neumann.yaml", "robin_poisson.yaml"])
def test_convergence(tmp_path, capsys, name):
    out = tmp_path / "c"
    assert main(["convergence", "--config", str(CONFIGS / name), "--out", str(out), "--resolutions", "16,32,64"]) == 0
    order = json.loads((out / "convergence.json").read_text())["order"]
    assert order == pytest.approx(2.0, abs=0.2)


def test_convergence_time(tmp_path):
    cfg = write(tmp_path, {"preset": "heat-neumann", "resolution": 128, "T": 0.2,
                           "params": {"variable": "time"}})
    assert main(["convergence", "--config", cfg, "--out", str(tmp_path / "c"), "--resolutions", "10,20,40"]) == 0


def test_convergence_single_resolution(tmp_path):
    assert main(["convergence", "--config", str(CONFIGS / "heat_neumann.yaml"), "--resolutions", "16"]) == 1


def test_convergence_wrong_preset(tmp_path):
    assert main(["convergence", "--config", corrosion(tmp_path)]) == 1


@pytest.mark.parametrize("jobs", ["1", "2"])
def test_sweep(tmp_path, jobs):
    out = tmp_path / "s"
    code = main(["sweep", "--config", corrosion(tmp_path), "--out", str(out), "--jobs", jobs,
                 "--grid", "params.Psi=0.0,0.5", "--grid", "params.epsilon=0.1,0.5"])
    assert code == 0
    index = rows(out / "index.csv")
    assert len(index) == 4 and all(r["status"] == "ok" for r in index)
    assert {(r["params.Psi"], r["params.epsilon"]) for r in index} == {("0.0", "0.1"), ("0.0", "0.5"), ("0.5", "0.1"), ("0.5", "0.5")}
    for r in index:
        assert (out / r["directory"] / "trajectory.csv").exists()


def test_sweep_invalid_point(tmp_path):
    out = tmp_path / "s"
    code = main(["sweep", "--config", corrosion(tmp_path), "--out", str(out), "--jobs", "2",
                 "--grid", "params.epsilon=0.1,0,0.5"])
    assert code == 1
    index = rows(out / "index.csv")
    assert [r["status"] for r in index] == ["ok", "config_error", "ok"]


def test_sweep_empty_grid(tmp_path):
    assert main(["sweep", "--config", corrosion(tmp_path)]) == 1
    assert main(["sweep", "--config", corrosion(tmp_path), "--grid", "params.Psi="]) == 1


def test_fmt_round_trip():
    for x in (0.1, 1 / 3, 1e-300, -2.5e17):
        assert float(fmt(x)) == x
    assert fmt(3) == "3" and fmt(True) == "1"
