"""Training loop and evaluation: reproducibility, outputs and argument checks."""

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from jumpkit.env import EnvConfig
from jumpkit.io import read_csv
from jumpkit.ppo import PPOConfig, PolicyNetwork
from jumpkit.rewards import HORIZONTAL, VERTICAL
from jumpkit.train import EVAL_COLUMNS, default_grid, evaluate, load_policy, train, write_eval


def tiny_run(out, task=VERTICAL, seed=3, updates=3):
    with threadpool_limits(limits=1):
        res = train(EnvConfig(task=task), PPOConfig(num_envs=8, horizon=16, max_updates=updates, seed=seed),
                    out_dir=str(out), widths=(16, 16), eval_every=2, eval_grid=[0.5, 0.6], eval_episodes=1)
        net, _ = load_policy(str(out / "policy.ckpt"))
        ev = evaluate(net, EnvConfig(task=task), [0.45, 0.55, 0.65], episodes=2, seed=seed)
        write_eval(str(out / "eval.csv"), ev)
    return res


def test_deterministic_runs_are_bitwise_identical(tmp_path):
    a = tiny_run(tmp_path / "a")
    tiny_run(tmp_path / "b")
    for name in ("policy.ckpt", "eval.csv", "curves.csv", "curriculum.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    tiny_run(tmp_path / "c", seed=4)
    assert (tmp_path / "a" / "policy.ckpt").read_bytes() != (tmp_path / "c" / "policy.ckpt").read_bytes()
    assert len(a.curves) == 3
    # periodic evaluation ran at update 2 only
    ev = [r["eval_success"] for r in a.curves]
    assert np.isnan(ev[0]) and not np.isnan(ev[1])


def test_checkpoint_metadata(tmp_path):
    tiny_run(tmp_path, task=HORIZONTAL, updates=1)
    net, meta = load_policy(str(tmp_path / "policy.ckpt"))
    assert meta["task"] == HORIZONTAL
    assert (meta["obs_dim"], meta["act_dim"], tuple(meta["widths"])) == (19, 4, (16, 16))
    assert net.obs_dim == 19


def test_evaluate_rows_and_flags():
    net = PolicyNetwork(20, 4, widths=(8,), rng=np.random.default_rng(0))
    res = evaluate(net, EnvConfig(task=VERTICAL), [0.3, 0.6, 0.9], episodes=2, seed=0, max_envs=4)
    assert res["n"] == 6 == len(res["rows"])
    assert [r["command"] for r in res["rows"]] == [0, 0, 1, 1, 2, 2]
    assert [r["episode"] for r in res["rows"]] == [0, 1] * 3
    assert [bool(r["ood"]) for r in res["rows"]] == [True, True, False, False, True, True]
    assert set(res["rows"][0]) >= set(EVAL_COLUMNS)
    assert 0.0 <= res["success_rate"] <= 1.0


def test_evaluate_rejects_bad_arguments():
    net = PolicyNetwork(20, 4, widths=(8,))
    with pytest.raises(ValueError, match="empty"):
        evaluate(net, EnvConfig(), [], episodes=1)
    with pytest.raises(ValueError, match="episodes"):
        evaluate(net, EnvConfig(), [0.5], episodes=0)


def test_eval_csv_layout(tmp_path):
    net = PolicyNetwork(19, 4, widths=(8,), rng=np.random.default_rng(1))
    res = evaluate(net, EnvConfig(task=HORIZONTAL), [0.5], episodes=3)
    write_eval(str(tmp_path / "e.csv"), res)
    header, rows = read_csv(str(tmp_path / "e.csv"), "eval")
    assert header == "# jumpkit-eval v1" and len(rows) == 3
    assert list(rows[0]) == list(EVAL_COLUMNS)


def test_default_grids():
    np.testing.assert_allclose(default_grid(VERTICAL, 5), [0.4, 0.5, 0.6, 0.7, 0.8])
    np.testing.assert_allclose(default_grid(HORIZONTAL, 5), [0.3, 0.4, 0.5, 0.6, 0.7])
