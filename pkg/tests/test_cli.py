import json
import subprocess
import sys

import numpy as np
import pytest

from vrql.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from vrql.example import example1_mdp, example1_qstar
from vrql.experiment import ExperimentConfig, rows_from_csv
from vrql.mdp import TabularMDP, load_mdp, random_mdp, save_mdp


@pytest.fixture
def ex1(tmp_path, capsys):
    path = tmp_path / "ex1.json"
    assert main(["example1", "--gamma", "0.9", "--lambda", "0.5", "--out", str(path)]) == EXIT_OK
    capsys.readouterr()
    return path


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_example1_writes_instance(ex1, capsys):
    loaded, expected = load_mdp(ex1), example1_mdp(0.9, 0.5)
    assert np.array_equal(loaded.transitions, expected.transitions)
    assert np.array_equal(loaded.rewards, expected.rewards) and loaded.gamma == 0.9
    code, out, _ = run(capsys, "example1", "--gamma", "0.9", "--lambda", "0.5")
    doc = json.loads(out)
    assert code == EXIT_OK
    assert np.allclose(doc["qstar"], example1_qstar(0.9, 0.5))
    assert doc["budget"] == 56889 and doc["argmax_policy"] == [0, 0]


def test_solve(ex1, capsys, tmp_path):
    out_path = tmp_path / "solve.json"
    assert run(capsys, "solve", str(ex1), "--out", str(out_path))[0] == EXIT_OK
    doc = json.loads(out_path.read_text())
    assert np.allclose(doc["qstar"], example1_qstar(0.9, 0.5), atol=1e-10)
    assert doc["policy"] == [0, 0] and doc["gap"] > 0 and doc["n_zero"] > 0


def test_solve_infinite_gap_is_null(capsys, tmp_path):
    P = np.stack([np.eye(2), np.eye(2)])
    path = tmp_path / "flat.json"
    save_mdp(TabularMDP(P, np.ones((2, 2)), 0.5), path)
    code, out, _ = run(capsys, "solve", str(path))
    assert code == EXIT_OK and json.loads(out)["gap"] is None


def test_complexity_formats(ex1, capsys):
    code, out, _ = run(capsys, "complexity", str(ex1))
    assert code == EXIT_OK and json.loads(out)["argmax_policy"] == [0, 0]
    code, out, _ = run(capsys, "complexity", str(ex1), "--format", "csv")
    assert out.splitlines()[0] == "state,action,nu,rho,sigma,phi_sq" and len(out.splitlines()) == 5


def test_run_ql(ex1, capsys, tmp_path):
    trace = tmp_path / "trace.csv"
    code, out, _ = run(capsys, "run-ql", str(ex1), "--budget", "2000", "--seed", "3", "--trace", str(trace), "--every", "100")
    doc = json.loads(out)
    assert code == EXIT_OK and doc["samples_used"] == 2000 and doc["final_error"] > 0
    rows = trace.read_text().splitlines()
    assert rows[0] == "epoch,iter,samples_used,err_linf" and len(rows) == 22
    assert rows[-1].startswith("1,2000,2000,")
    code, out2, _ = run(capsys, "run-ql", str(ex1), "--budget", "2000", "--seed", "3", "--stepsize", "poly:0.8")
    assert code == EXIT_OK and json.loads(out2)["stepsize"] == "poly:0.8"


def test_run_vrql_deterministic(ex1, capsys):
    args = ("run-vrql", str(ex1), "--budget", "60000", "--seed", "5", "--c1", "fill")
    code, a, _ = run(capsys, *args)
    _, b, _ = run(capsys, *args)
    assert code == EXIT_OK and a == b
    doc = json.loads(a)
    assert doc["samples_used"] <= 60000
    assert doc["schedules"][0]["c1_requested"] is not None


def test_run_vrql_budget_too_small(ex1, capsys):
    code, _, err = run(capsys, "run-vrql", str(ex1), "--budget", "100")
    assert code == EXIT_RUNTIME and "too small" in err


def test_lowerbound(capsys, tmp_path):
    path = tmp_path / "m.json"
    save_mdp(random_mdp(3, 2, 0.8, reward_noise=0.5, seed=1), path)
    code, out, _ = run(capsys, "lowerbound", str(path), "--n", "100000")
    doc = json.loads(out)
    assert code == EXIT_OK and doc["passed"] and "local_minimax_bound" in doc
    code, out, _ = run(capsys, "lowerbound", str(path), "--n", "100000", "--format", "csv")
    assert out.splitlines()[0] == "name,measured,threshold,pass"
    code, _, _ = run(capsys, "lowerbound", str(path), "--n", "1")
    assert code == EXIT_INVALID
    code, out, _ = run(capsys, "lowerbound", str(path), "--n", "1", "--allow-small-n")
    assert code == EXIT_OK and "local_minimax_bound" not in json.loads(out)


def test_experiment_and_fit(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    ExperimentConfig(gamma_grid=[0.6, 0.7], trials=2, trace_gamma=0.7).save(cfg)
    out_dir = tmp_path / "out"
    code, out, _ = run(capsys, "experiment", str(cfg), "--out", str(out_dir), "--trials", "3")
    summary = json.loads(out)
    assert code == EXIT_OK and summary["rows"] == 6
    assert len(rows_from_csv(out_dir / "rows.csv")) == 6
    for name in ("scaling.svg", "trace.csv", "trace.svg"):
        assert (out_dir / name).exists()
    code, out, _ = run(capsys, "fit", str(out_dir / "rows.csv"))
    assert code == EXIT_OK and json.loads(out)["slope"] == pytest.approx(summary["slope"])


def test_usage_errors(capsys):
    assert run(capsys, "bogus")[0] == EXIT_USAGE
    assert run(capsys)[0] == EXIT_USAGE
    assert run(capsys, "run-ql", "x.json")[0] == EXIT_USAGE
    assert run(capsys, "run-vrql", "x.json", "--budget", "10", "--c1", "-1")[0] == EXIT_USAGE


def test_invalid_inputs(capsys, tmp_path):
    assert run(capsys, "solve", str(tmp_path / "missing.json"))[0] == EXIT_INVALID
    bad = tmp_path / "bad.json"
    bad.write_text('{"transitions": [[[0.5, 0.2]]], "rewards": [[0.0]], "gamma": 0.9}')
    assert run(capsys, "solve", str(bad))[0] == EXIT_INVALID
    assert run(capsys, "example1", "--gamma", "0.2", "--lambda", "0")[0] == EXIT_INVALID
    code, _, _ = run(capsys, "run-ql", str(bad), "--budget", "10", "--stepsize", "cosine")
    assert code == EXIT_INVALID


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "vrql", "example1", "--gamma", "0.8", "--lambda", "1"],
        capture_output=True,
        text=True,
        check=True,
    )
    assert json.loads(proc.stdout)["tau"] == pytest.approx(0.8)
