import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from srmdp import experiments as ex
from srmdp.cli import main
from srmdp.errors import ArgumentError, ConvergenceError


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_solve_emits_one_row_and_is_deterministic(capsys):
    argv = ("solve", "--domain", "toy", "--algorithm", "rvi_s", "--alpha", "0.8", "--lambda", "0.5", "--seed", "1")
    code, first, _ = run_cli(capsys, *argv)
    assert code == 0
    assert first.splitlines()[0] == ",".join(ex.RESULT_HEADER)
    assert len(rows(first)) == 1
    assert run_cli(capsys, *argv)[1] == first


def test_brute_matches_milp_on_toy(capsys):
    common = ("solve", "--domain", "toy", "--lambda", "0.5", "--seed", "2")
    brute = rows(run_cli(capsys, *common, "--algorithm", "brute")[1])[0]
    milp = rows(run_cli(capsys, *common, "--algorithm", "milp")[1])[0]
    assert abs(float(brute["soft_robust_return"]) - float(milp["soft_robust_return"])) <= 1e-6


def test_lambda_zero_rvi_equals_mean_vi(capsys):
    common = ("solve", "--domain", "toy", "--lambda", "0", "--seed", "3")
    a = rows(run_cli(capsys, *common, "--algorithm", "rvi_s")[1])[0]
    b = rows(run_cli(capsys, *common, "--algorithm", "mean_vi")[1])[0]
    assert abs(float(a["mean_return"]) - float(b["mean_return"])) <= 1e-6


def test_eval_reproduces_milp_objective(capsys, tmp_path):
    pol = tmp_path / "pi.json"
    common = ("--domain", "toy", "--lambda", "0.5", "--seed", "4", "--eval-on", "train")
    code, out, _ = run_cli(capsys, "solve", "--algorithm", "milp", "--policy-out", str(pol), *common)
    assert code == 0
    solved = rows(out)[0]
    setup = ex.build_domain(ex.ExperimentConfig(domain="toy", seed=4))
    from srmdp.milp import build_model, solve_branch_and_bound
    from srmdp.risk import SoftRobustParams

    objective = solve_branch_and_bound(build_model(setup.mdp, setup.train, SoftRobustParams(0.8, 0.5))).objective
    evaluated = rows(run_cli(capsys, "eval", "--policy", str(pol), *common)[1])[0]
    assert abs(float(evaluated["soft_robust_return"]) - objective) <= 1e-9
    assert evaluated["soft_robust_return"] == solved["soft_robust_return"]
    # the one-hot randomized form of the same policy gives the identical row
    data = json.loads(pol.read_text())
    probs = np.eye(data["num_actions"])[data["actions"]].tolist()
    rnd = tmp_path / "rnd.json"
    rnd.write_text(json.dumps({"kind": "randomized", "action_probs": probs}))
    assert rows(run_cli(capsys, "eval", "--policy", str(rnd), *common)[1])[0] == evaluated
    # and the held-out ensemble gives a different number (generalization gap, no sign asserted)
    test_row = rows(run_cli(capsys, "eval", "--policy", str(pol), "--domain", "toy", "--lambda", "0.5", "--seed", "4")[1])[0]
    assert test_row["soft_robust_return"] != evaluated["soft_robust_return"]


def test_exit_codes(capsys, tmp_path, monkeypatch):
    code, _, err = run_cli(capsys, "solve", "--domain", "atlantis")
    assert code == 2 and json.loads(err)["error"] == "ArgumentError"
    assert run_cli(capsys, "solve", "--domain", "toy", "--lambda", "1.5")[0] == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"kind": "deterministic", "actions": [9, 9, 9], "num_actions": 2}')
    assert run_cli(capsys, "eval", "--domain", "toy", "--policy", str(bad))[0] == 2
    code, _, err = run_cli(capsys, "solve", "--domain", "riverswim", "--algorithm", "brute", "--models", "2")
    assert code == 4 and json.loads(err)["error"] == "UnsupportedError"

    def diverge(*args, **kwargs):
        raise ConvergenceError("stuck", 1.0, 5)

    monkeypatch.setattr(ex, "run_algorithm", diverge)
    code, _, err = run_cli(capsys, "solve", "--domain", "toy")
    assert code == 3 and "stuck" in json.loads(err)["message"]
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--alpha", "abc"])
    assert exc.value.code == 2


def test_config_file_and_override(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"domain": "toy", "algorithm": "mean_vi", "lambda": 0.25, "seed": 5}))
    r = rows(run_cli(capsys, "solve", "--config", str(cfg))[1])[0]
    assert (r["domain"], r["algorithm"], r["lambda"], r["seed"]) == ("toy", "mean_vi", "0.25", "5")
    r = rows(run_cli(capsys, "solve", "--config", str(cfg), "--seed", "6")[1])[0]
    assert r["seed"] == "6"
    cfg.write_text(json.dumps({"colour": "red"}))
    assert run_cli(capsys, "solve", "--config", str(cfg))[0] == 2


def test_export_and_posterior(capsys, tmp_path):
    from srmdp import io as sio

    mdp_path, ens_path = tmp_path / "m.json", tmp_path / "e.json"
    assert run_cli(capsys, "domain-export", "--domain", "riverswim", "--out", str(mdp_path))[0] == 0
    mdp, model = sio.mdp_from_dict(sio.read_json(mdp_path))
    assert mdp.num_states == 20
    assert run_cli(capsys, "posterior", "--domain", "toy", "--models", "3", "--out", str(ens_path))[0] == 0
    assert len(sio.ensemble_from_dict(sio.read_json(ens_path))) == 3
    # an exported domain file is itself a domain
    out = run_cli(capsys, "solve", "--domain", str(mdp_path), "--algorithm", "mean_vi", "--models", "3", "--test-models", "3")
    assert out[0] == 0 and rows(out[1])[0]["domain"] == str(mdp_path)


def test_tradeoff_and_threads_do_not_change_output(capsys, monkeypatch):
    argv = ("tradeoff", "--domain", "toy", "--algorithm", "milp,mean_vi", "--lambda-grid", "0,1", "--trials", "2")
    code, serial, _ = run_cli(capsys, *argv)
    assert code == 0
    got = rows(serial)
    assert [(r["seed"], r["algorithm"], r["lambda"]) for r in got][:4] == [
        ("0", "milp", "0.0"),
        ("0", "milp", "1.0"),
        ("0", "mean_vi", "0.0"),
        ("0", "mean_vi", "1.0"),
    ]
    monkeypatch.setenv("SRMDP_THREADS", "3")
    assert run_cli(capsys, *argv)[1] == serial
    monkeypatch.setenv("SRMDP_THREADS", "zero")
    assert run_cli(capsys, *argv)[0] == 2


def test_surprise_small_run(capsys, tmp_path):
    out = tmp_path / "trials.csv"
    code, summary, _ = run_cli(capsys, "surprise", "--trials", "4", "--seed", "9", "--out", str(out))
    assert code == 0
    per_trial = rows(out.read_text())
    assert len(per_trial) == 4 * len(ex.SURPRISE_METHODS)
    for r in per_trial:
        assert float(r["surprise"]) == pytest.approx(float(r["true_return"]) - float(r["estimated_return"]))
    assert [r["method"] for r in rows(summary)] == list(ex.SURPRISE_METHODS)
    assert run_cli(capsys, "surprise", "--trials", "4", "--seed", "9")[1] == summary


def test_result_row_invariant():
    with pytest.raises(ArgumentError):
        ex.ResultRow("d", "a", 0.5, 0.5, 0, 1.0, 0.0, 0.0, 0.9, 0.0, 1)
    with pytest.raises(ArgumentError):
        ex.ExperimentConfig(algorithm="qlearning")
    with pytest.raises(ArgumentError):
        ex.ExperimentConfig(trials=0)


def test_console_entry_point():
    res = subprocess.run(
        [sys.executable, "-m", "srmdp", "solve", "--domain", "toy", "--algorithm", "vi"],
        capture_output=True,
        text=True,
        check=False,
    )
    assert res.returncode == 0 and res.stdout.startswith("domain,algorithm")
