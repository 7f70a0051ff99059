import json
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fplab import io as fio
from fplab.cli import main
from fplab.grid import PeriodicGrid, ScalarField
from fplab.pde import SolverConfig, solve_mild
from fplab import get_model
from fplab.scenario import Scenario, ScenarioError, build_scenario, dump_scenario, load_scenario
from fplab.suite import CHECKS, run_checks
from fplab.verify import VerificationReport

SMALL = 'model = "LINEAR"\nn = 64\nT = 0.02\nh = 0.005\nparticles = 2000\nparticle_dt = 0.005\n'


@pytest.fixture
def scenario_file(tmp_path):
    p = tmp_path / "s.toml"
    p.write_text(SMALL)
    return p


def _run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


# -- scenario ---------------------------------------------------------------


def test_scenario_roundtrip(tmp_path):
    s = build_scenario({"model": "CUBIC", "n": 128, "dealias": True, "bandwidth": 0.3})
    p = tmp_path / "x.toml"
    p.write_text(dump_scenario(s))
    assert load_scenario(p) == s


def test_scenario_overrides_from_text(scenario_file):
    s = load_scenario(scenario_file, {"n": "128", "dealias": "true", "h": "1e-3"})
    assert (s.n, s.dealias, s.h) == (128, True, 1e-3)


@pytest.mark.parametrize("values", [{"n": 100}, {"dimension": 3}, {"h": -1.0}, {"particles": 0},
                                    {"estimator": "spline"}, {"bandwidth": "wide"}, {"n": 64.5},
                                    {"dealias": 1}, {"tolerance": 1e-3}])
def test_scenario_rejects_invalid(values):
    with pytest.raises(ScenarioError):
        build_scenario(values)


def test_scenario_rejects_tables(tmp_path):
    p = tmp_path / "t.toml"
    p.write_text("[solver]\nh = 0.1\n")
    with pytest.raises(ScenarioError, match="flat"):
        load_scenario(p)


@settings(max_examples=30)
@given(n=st.sampled_from([16, 32, 64, 256]), h=st.floats(1e-5, 1.0), T=st.floats(0, 5),
       seed=st.integers(0, 2**31), model=st.sampled_from(["LINEAR", "CUBIC", "CUBIC-DRIFT"]))
def test_scenario_dump_load_roundtrip_property(tmp_path_factory, n, h, T, seed, model):
    s = Scenario(model=model, n=n, h=h, T=T, seed=seed)
    p = tmp_path_factory.mktemp("rt") / "s.toml"
    p.write_text(dump_scenario(s))
    assert load_scenario(p) == s


# -- io ---------------------------------------------------------------------


@pytest.mark.parametrize("d,n", [(1, 32), (2, 16)])
def test_field_binary_roundtrip(tmp_path, d, n):
    g = PeriodicGrid(d, 3.5, n)
    f = ScalarField(g, np.random.default_rng(0).standard_normal(g.shape))
    fio.write_field(tmp_path / "f.bin", f)
    back = fio.read_field(tmp_path / "f.bin")
    assert back.grid == g and np.array_equal(back.values, f.values)
    assert (tmp_path / "f.bin").stat().st_size == 16 + 8 * g.size


def test_field_csv_full_precision(tmp_path):
    g = PeriodicGrid(1, 1.0, 16)
    f = ScalarField(g, np.random.default_rng(1).standard_normal(16) / 3)
    fio.write_field_csv(tmp_path / "f.csv", f)
    data = np.loadtxt(tmp_path / "f.csv", delimiter=",", skiprows=1)
    assert np.array_equal(data[:, 1], f.values)
    assert (tmp_path / "f.csv").read_text().splitlines()[0] == "x,u"


def test_trajectory_roundtrip(tmp_path, gauss1d):
    traj = solve_mild(gauss1d, 0.02, get_model("CUBIC"), SolverConfig(h=0.01))
    fio.write_trajectory(tmp_path / "t", traj)
    back = fio.read_trajectory(tmp_path / "t")
    assert back.config == traj.config and back.model_name == "CUBIC"
    assert all(np.array_equal(a, b) for a, b in zip(back.fields, traj.fields))


def test_particles_roundtrip(tmp_path):
    pos = np.random.default_rng(2).standard_normal((50, 2))
    fio.write_particles(tmp_path / "p.bin", pos)
    assert np.array_equal(fio.read_particles(tmp_path / "p.bin"), pos)


def test_reports_text_and_csv(tmp_path):
    reps = [VerificationReport("a", 0.1, 1.0), VerificationReport("b", 2.0, 1.0, 0.5)]
    fio.write_reports(tmp_path, reps)
    lines = (tmp_path / "report.txt").read_text().splitlines()
    assert lines[0] == "name=a pass=true measured=0.10000000000000001 bound=1 tolerance=0"
    rows = fio.read_report_csv(tmp_path / "report.csv")
    assert [r["pass"] for r in rows] == ["true", "false"]


# -- suite ------------------------------------------------------------------


def test_run_checks_unknown_name():
    with pytest.raises(KeyError):
        run_checks(Scenario(), ["nope"])


def test_run_checks_threads_match_serial(monkeypatch):
    s = Scenario(n=64, T=0.02, h=0.005)
    names = ["mass", "functional-inequalities"]
    serial = [r.measured for r in run_checks(s, names)]
    monkeypatch.setenv("FPLAB_THREADS", "2")
    assert [r.measured for r in run_checks(s, names)] == serial


def test_check_registry_names():
    assert {"mass", "barrier", "gronwall", "particles", "weak-residual"} <= set(CHECKS)


# -- command line -----------------------------------------------------------


def test_run_pde_artifacts(tmp_path, scenario_file, capsys):
    out = tmp_path / "pde"
    code, stdout, _ = _run(["run-pde", scenario_file, "--output", out], capsys)
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["mass_drift"] <= 1e-10
    assert {"max_abs_u", "runtime_s", "steps"} <= set(summary)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "run-pde" and manifest["scenario"]["n"] == 64
    assert load_scenario(out / "scenario.toml") == build_scenario(manifest["scenario"])
    assert len(fio.read_trajectory(out / "trajectory")) == 5
    assert (out / "final.csv").exists()


def test_run_pde_rerun_is_bitwise(tmp_path, scenario_file, capsys):
    a, b = tmp_path / "a", tmp_path / "a_again"
    _run(["run-pde", scenario_file, "--output", a], capsys)
    first = {p.name: p.read_bytes() for p in (a / "trajectory").iterdir()}
    _run(["run-pde", a / "scenario.toml", "--output", b], capsys)
    second = {p.name: p.read_bytes() for p in (b / "trajectory").iterdir()}
    assert first == second


def test_set_overrides_scenario(tmp_path, scenario_file, capsys):
    out = tmp_path / "o"
    code, _, _ = _run(["run-pde", scenario_file, "--output", out, "--set", "model=CUBIC", "--set", "T=0.01"], capsys)
    assert code == 0
    m = json.loads((out / "manifest.json").read_text())["scenario"]
    assert (m["model"], m["T"]) == ("CUBIC", 0.01)


def test_malformed_scenario_exit_2_with_line(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text('model = "LINEAR"\nn = 64\nnewton_tolerance = 1e-9\n')
    code, _, err = _run(["run-pde", p], capsys)
    assert code == 2
    rec = json.loads(err)
    assert rec["error"] == "malformed-scenario" and "line 3" in rec["message"]
    p.write_text('model = "LINEAR"\nn = = 3\n')
    code, _, err = _run(["run-pde", p], capsys)
    assert code == 2 and "line 2" in json.loads(err)["message"]


def test_unknown_model_exit_3(tmp_path, capsys):
    p = tmp_path / "m.toml"
    p.write_text('model = "QUARTIC"\n')
    code, _, err = _run(["run-pde", p, "--output", tmp_path / "o"], capsys)
    assert code == 3
    rec = json.loads(err)
    assert "unknown model" in rec["message"] and "CUBIC-DRIFT" in rec["registry"]
    assert json.loads((tmp_path / "o" / "error.json").read_text()) == rec


def test_solver_failure_exit_4(tmp_path, capsys):
    p = tmp_path / "f.toml"
    p.write_text('model = "CUBIC"\nn = 64\nh = 0.5\nT = 0.5\nsigma = 0.3\ninitial_mass = 20.0\n'
                 'newton_max_iter = 1\ndamping = 0.001\nnewton_tol = 1e-14\n')
    code, _, err = _run(["run-pde", p, "--output", tmp_path / "o"], capsys)
    assert code == 4
    rec = json.loads(err)
    assert rec["error"] == "non-convergence" and rec["step"] == 0
    assert (tmp_path / "o" / "error.json").exists()


def test_run_particles_reference_and_determinism(tmp_path, scenario_file, capsys):
    ref = tmp_path / "ref"
    _run(["run-pde", scenario_file, "--output", ref], capsys)
    outs = []
    for name in ("p1", "p2"):
        out = tmp_path / name
        code, _, _ = _run(["run-particles", scenario_file, "--output", out, "--set", f"reference={ref}"], capsys)
        assert code == 0
        outs.append(out)
    text = (outs[0] / "distances.csv").read_text().splitlines()
    assert text[0] == "time,l1_distance" and len(text) == 6
    assert all(row.split(",")[1] for row in text[1:])
    summary = json.loads((outs[0] / "summary.json").read_text())
    assert len(summary["l1_to_reference"]) == 5
    for rel in ["particles.bin", "distances.csv", "summary.json", "densities/trajectory.json",
                "densities/field_00004.bin"]:
        assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes()
    assert fio.read_particles(outs[0] / "particles.bin").shape == (2000, 1)


def test_run_particles_rejects_zero_particles(tmp_path, scenario_file, capsys):
    code, _, err = _run(["run-particles", scenario_file, "--set", "particles=0"], capsys)
    assert code == 2 and "particles" in json.loads(err)["message"]


def test_run_verify_empty_and_unknown(tmp_path, scenario_file, capsys):
    out = tmp_path / "v"
    code, _, _ = _run(["run-verify", scenario_file, "--checks", "", "--output", out], capsys)
    assert code == 0
    assert (out / "report.txt").read_text() == ""
    assert (out / "report.csv").read_text().strip() == "name,pass,measured,bound,tolerance"
    code, _, err = _run(["run-verify", scenario_file, "--checks", "mass,bogus"], capsys)
    assert code == 3 and "bogus" in json.loads(err)["message"]


def test_run_verify_subset_exit_status(tmp_path, scenario_file, capsys):
    out = tmp_path / "v"
    code, stdout, _ = _run(["run-verify", scenario_file, "--checks", "mass,barrier,linearized", "--output", out],
                           capsys)
    assert code == 0
    rows = fio.read_report_csv(out / "report.csv")
    assert [r["name"] for r in rows] == ["mass", "barrier", "linearized-tracks-nonlinear"]
    assert stdout.count("PASS") == 3


@pytest.mark.slow
def test_run_verify_full_suite_linear(tmp_path, capsys):
    p = tmp_path / "lin.toml"
    p.write_text('model = "LINEAR"\nT = 0.25\n')
    code, stdout, _ = _run(["run-verify", p, "--output", tmp_path / "v"], capsys)
    assert code == 0, stdout
    assert "FAIL" not in stdout


def test_run_verify_failure_exit_1(tmp_path, scenario_file, capsys, monkeypatch):
    import fplab.suite as suite

    monkeypatch.setitem(suite.CHECKS, "mass", lambda s: [VerificationReport("mass", 1.0, 0.0)])
    code, _, _ = _run(["run-verify", scenario_file, "--checks", "mass", "--output", tmp_path / "v"], capsys)
    assert code == 1


def test_convergence_and_compare(tmp_path, scenario_file, capsys):
    out = tmp_path / "c"
    code, stdout, _ = _run(["convergence", scenario_file, "--output", out, "--h-list", "0.01,0.005,0.0025"], capsys)
    assert code == 0
    assert json.loads(stdout)["fitted_order"] > 0.8
    assert len((out / "convergence.csv").read_text().splitlines()) == 3
    code, _, _ = _run(["convergence", scenario_file, "--h-list", "0.01,0.004,0.002"], capsys)
    assert code == 2

    a, b = tmp_path / "a", tmp_path / "b"
    _run(["run-pde", scenario_file, "--output", a], capsys)
    _run(["run-pde", scenario_file, "--output", b, "--set", "model=CUBIC"], capsys)
    code, stdout, _ = _run(["compare", a, a], capsys)
    assert code == 0 and all(line.endswith(",0") for line in stdout.splitlines()[1:])
    code, stdout, _ = _run(["compare", a, b, "--output", tmp_path / "cmp.csv"], capsys)
    assert code == 0 and float(stdout.splitlines()[-1].split(",")[1]) > 0
    code, _, _ = _run(["compare", a, tmp_path / "missing"], capsys)
    assert code == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "fplab", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip() == "0.1.0"
