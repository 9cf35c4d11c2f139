from __future__ import annotations

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from advhedge.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from advhedge.networks import HedgerConfig, HedgerPolicy, save_checkpoint

TINY_TRAIN = ["--set", "train.epochs=4", "--set", "train.paths_per_epoch=32", "--set", "train.eval_paths=64",
              "--set", "train.snapshot_every=2", "--set", "hedger.hidden=4", "--set", "generator.hidden_dim=3",
              "--set", "generator.noise_dim=2"]


def _run(args, capsys):
    code = main(args)
    cap = capsys.readouterr()
    return code, cap.out, cap.err


@pytest.fixture(scope="module")
def synth_csv(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--n", "420", "--out", str(out)]) == EXIT_OK
    return out / "synthetic.csv"


def test_usage_errors_exit_1(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["backtest"])
    assert exc.value.code == EXIT_USAGE
    code, _, err = _run(["train", "--set", "train.epochs=x", "--out", str(tmp_path)], capsys)
    assert code == EXIT_USAGE and "train.epochs" in err
    code, _, err = _run(["toy", "--case", "7", "--out", str(tmp_path)], capsys)
    assert code == EXIT_USAGE


def test_missing_data_file_exit_1(tmp_path, capsys):
    code, _, err = _run(["backtest", "--data", str(tmp_path / "none.csv"), "--out", str(tmp_path)], capsys)
    assert code == EXIT_USAGE and "cannot read" in err


def test_runtime_error_exit_2(tmp_path, capsys):
    args = ["train", "--out", str(tmp_path), "--set", "train.lr_hedger=1e200", "--set", "train.optimizer=sgd",
            "--set", "train.epochs=5", "--set", "train.paths_per_epoch=16", "--set", "hedger.hidden=4",
            "--set", "run.figures=false"]
    with np.errstate(all="ignore"):
        code, _, err = _run(args, capsys)
    assert code == EXIT_RUNTIME and "runtime error" in err


def test_train_outputs_manifest_and_determinism(tmp_path, capsys):
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code, stdout, _ = _run(["train", "--set", "simulator.kind=adversarial", *TINY_TRAIN, "--out", str(out)],
                               capsys)
        assert code == EXIT_OK
        assert json.loads(stdout)["generator_steps"] == 4
        runs.append(out)
    manifest = json.loads((runs[0] / "manifest.json").read_text())
    assert manifest["format"] == "advhedge-run" and manifest["format_version"] == 1
    assert manifest["command"] == "train" and manifest["seed"] == 0 and len(manifest["config_sha256"]) == 64
    for rel in manifest["outputs"] + ["manifest.json"]:
        assert (runs[0] / rel).read_bytes() == (runs[1] / rel).read_bytes(), rel
    for rel in ("hedger.json", "hedger_final.json", "generator.json", "history.csv", "figures/history.png"):
        assert rel in manifest["outputs"]


def test_eval_with_checkpoint(tmp_path, capsys):
    train_out = tmp_path / "t"
    assert _run(["train", *TINY_TRAIN, "--set", "run.figures=false", "--out", str(train_out)], capsys)[0] == 0
    code, stdout, _ = _run(["eval", "--checkpoint", str(train_out / "hedger.json"), *TINY_TRAIN,
                            "--set", "train.eval_trials=2", "--out", str(tmp_path / "e")], capsys)
    assert code == EXIT_OK
    rows = json.loads(stdout)["rows"]
    assert [r["strategy"] for r in rows] == ["zero", "bs_delta", "hedger"]
    with open(tmp_path / "e" / "eval.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 3


def test_backtest_zero_hedge_and_report(tmp_path, synth_csv, capsys):
    out = tmp_path / "bt"
    code, stdout, _ = _run(["backtest", "--data", str(synth_csv), "--set", "backtest.strategies=zero",
                            "--out", str(out)], capsys)
    assert code == EXIT_OK
    rows = json.loads(stdout)
    assert len(rows) == 1 and rows[0]["strategy"] == "zero" and rows[0]["window_count"] == 20
    report = json.loads((out / "report.json").read_text())
    assert report["rows"][0]["cost"] == rows[0]["cost"]
    assert (out / "figures" / "pl_histogram.png").stat().st_size > 0
    again = tmp_path / "bt2"
    _run(["backtest", "--data", str(synth_csv), "--set", "backtest.strategies=zero", "--out", str(again)], capsys)
    for name in ("report.json", "report.txt", "histogram.csv"):
        assert (out / name).read_bytes() == (again / name).read_bytes()


def test_backtest_checkpoint_feature_mismatch(tmp_path, synth_csv, capsys):
    ckpt = save_checkpoint(HedgerPolicy(HedgerConfig(hidden=(2,))), tmp_path / "h.json")
    code, _, err = _run(["backtest", "--data", str(synth_csv), "--checkpoint", str(ckpt), "--set",
                         "option.kind=lookback", "--set",
                         "hedger.features=log_moneyness,time_to_maturity,prev_delta,running_max",
                         "--out", str(tmp_path / "o")], capsys)
    assert code == EXIT_USAGE and "running_max" in err


def test_toy_cases(tmp_path, capsys):
    small = ["--set", "toy.mc_samples=200000", "--set", "toy.grad_mc_samples=20000", "--set", "toy.delta_steps=101",
             "--set", "run.figures=false"]
    code, stdout, _ = _run(["toy", "--case", "1", *small, "--out", str(tmp_path / "c1")], capsys)
    assert code == EXIT_OK and abs(json.loads(stdout)["argmax_delta"] - 0.5011) <= 0.01
    code, stdout, _ = _run(["toy", "--case", "3", *small, "--out", str(tmp_path / "c3")], capsys)
    assert code == EXIT_OK
    with open(tmp_path / "c3" / "case3.csv") as fh:
        rows = [r for r in csv.DictReader(fh) if float(r["delta"]) == 0.5]
    costs = [-float(r["utility"]) for r in sorted(rows, key=lambda r: float(r["sigma"]))]
    assert all(b > a for a, b in zip(costs, costs[1:]))
    code, _, _ = _run(["toy", "--case", "2", *small, "--set", "toy.steps=5", "--set", "toy.lr_hedger=0",
                       "--set", "toy.lr_generator=0", "--set", "toy.mu_steps=3", "--out", str(tmp_path / "c2")],
                      capsys)
    assert code == EXIT_OK
    with open(tmp_path / "c2" / "case2_trajectory.csv") as fh:
        traj = list(csv.DictReader(fh))
    assert len(traj) == 6 and {(r["delta"], r["mu"]) for r in traj} == {("0.0", "0.3")}


def test_console_script_module_entry(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "advhedge.cli", "synth", "--n", "30", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["observations"] == 30
