"""Command-line behaviour: exit codes, outputs and argument validation."""

import json
import os

import numpy as np
import pytest

from jumpkit import cli
from jumpkit.io import read_csv
from jumpkit.sim import NumericalBlowup

TINY = """
ppo: {horizon: 16, num_envs: 8}
training: {eval_every: 0, eval_points: 3, eval_episodes: 1, widths: [16, 16]}
"""


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "tiny.yaml"
    cfg.write_text(TINY)
    out = d / "run"
    rc = cli.main(["train", "--config", str(cfg), "--updates", "2", "--out", str(out), "--seed", "5",
                   "--deterministic"])
    assert rc == cli.EXIT_OK
    return cfg, out


def test_train_writes_artifacts(trained):
    _, out = trained
    for name in ("policy.ckpt", "curves.csv", "curriculum.csv", "config.yaml", "summary.json"):
        assert (out / name).exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["updates"] == 2
    header, rows = read_csv(str(out / "curves.csv"), "curves")
    assert header == "# jumpkit-curves v1" and len(rows) == 2


def test_eval_row_count_and_ood(trained, capsys):
    cfg, out = trained
    rc = cli.main(["eval", "--config", str(cfg), "--out", str(out), "--grid", "0.3,0.5,0.9", "--episodes", "2"])
    assert rc == cli.EXIT_OK
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["rows"] == 6
    assert summary["out_of_distribution"] == 4
    _, rows = read_csv(str(out / "eval.csv"), "eval")
    assert len(rows) == 6
    assert [r["ood"] for r in rows] == [1, 1, 0, 0, 1, 1]
    # a range grid gives |grid| x episodes rows too
    assert cli.main(["eval", "--config", str(cfg), "--out", str(out), "--grid", "0.4:0.8:5"]) == cli.EXIT_OK
    assert len(read_csv(str(out / "eval.csv"))[1]) == 5


def test_eval_errors_are_config_errors(trained, tmp_path):
    cfg, out = trained
    base = ["eval", "--config", str(cfg), "--out", str(out)]
    assert cli.main(base + ["--grid", " "]) == cli.EXIT_CONFIG
    assert cli.main(base + ["--grid", "0.4:0.8:0"]) == cli.EXIT_CONFIG
    assert cli.main(base + ["--grid", "a,b"]) == cli.EXIT_CONFIG
    assert cli.main(base + ["--episodes", "0"]) == cli.EXIT_CONFIG
    assert cli.main(base + ["--task", "horizontal"]) == cli.EXIT_CONFIG
    assert cli.main(base + ["--checkpoint", str(tmp_path / "missing.ckpt")]) == cli.EXIT_CONFIG
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes((out / "policy.ckpt").read_bytes()[:-8])
    assert cli.main(base + ["--checkpoint", str(bad)]) == cli.EXIT_CONFIG


def test_config_error_exit_code(tmp_path, capsys):
    p = tmp_path / "c.yaml"
    p.write_text("rewards:\n  sigma: {sigma_1: 0.5}\n")
    assert cli.main(["train", "--config", str(p), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert "rewards.sigma.sigma_2: missing" in capsys.readouterr().err
    assert cli.main(["train", "--envs", "0", "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert cli.main(["train", "--updates", "-1", "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    with pytest.raises(SystemExit) as e:
        cli.main(["train", "--task", "sideways"])
    assert e.value.code == 2


def test_runtime_failure_exit_code(tmp_path, monkeypatch, capsys):
    import jumpkit.train

    def boom(*a, **k):
        raise NumericalBlowup("state became non-finite")

    monkeypatch.setattr(jumpkit.train, "train", boom)
    assert cli.main(["train", "--out", str(tmp_path / "o")]) == cli.EXIT_RUNTIME
    assert "runtime failure" in capsys.readouterr().err
    # an output path that is a regular file cannot become a directory
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["train", "--out", str(blocker)]) == cli.EXIT_RUNTIME


def test_check_command(tmp_path, capsys):
    assert cli.main(["check"]) == cli.EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "[PASS] config: all fields valid"
    assert lines[-1] == "5/5 checks passed"
    assert all(line.startswith("[PASS]") for line in lines[1:-1])
    p = tmp_path / "c.yaml"
    p.write_text("geometry: {thigh_length: -1.0}\n")
    assert cli.main(["check", "--config", str(p)]) == cli.EXIT_CONFIG
    assert capsys.readouterr().out.startswith("[FAIL] config: geometry.")


def test_plot_command(trained, tmp_path):
    _, out = trained
    assert cli.main(["plot", str(out / "curves.csv")]) == cli.EXIT_OK
    assert (out / "curves.svg").read_text().lstrip().startswith("<?xml")
    cli.main(["eval", "--config", str(trained[0]), "--out", str(out), "--grid", "0.5"])
    svg = tmp_path / "e.svg"
    assert cli.main(["plot", str(out / "eval.csv"), "--out", str(svg)]) == cli.EXIT_OK
    assert svg.exists()
    junk = tmp_path / "junk.csv"
    junk.write_text("a,b\n1,2\n")
    assert cli.main(["plot", str(junk)]) == cli.EXIT_CONFIG
    assert cli.main(["plot", str(tmp_path / "none.csv")]) == cli.EXIT_CONFIG


def test_parse_grid():
    np.testing.assert_allclose(cli.parse_grid("0.4:0.8:3", "vertical"), [0.4, 0.6, 0.8])
    np.testing.assert_allclose(cli.parse_grid("0.5, 0.6", "vertical"), [0.5, 0.6])
    assert cli.parse_grid(None, "horizontal").size == 9
