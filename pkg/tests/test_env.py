"""Batched jumping environment: shapes, seeding, resets and outcomes."""

import numpy as np
import pytest

from jumpkit.curriculum import RSIStage
from jumpkit.env import EnvConfig, JumpEnv
from jumpkit.rewards import HORIZONTAL, VERTICAL
from jumpkit.sim import JumpPhase


def make(task=VERTICAL, n=8, seed=0, **kw):
    return JumpEnv(EnvConfig(task=task, num_envs=n, **kw), seed=seed)


@pytest.mark.parametrize("task,dim", [(VERTICAL, 20), (HORIZONTAL, 19)])
def test_reset_and_step_shapes(task, dim):
    env = make(task)
    obs = env.reset()
    assert obs.shape == (8, dim) == (env.n, env.obs_dim)
    obs, rew, done, info = env.step(np.zeros((8, 4)))
    assert obs.shape == (8, dim) and rew.shape == (8,) and done.shape == (8,)
    assert np.isfinite(obs).all() and np.isfinite(rew).all()
    assert set(info) >= {"truncated", "reasons", "outcomes", "terms"}


def test_same_seed_same_trajectory():
    rng = np.random.default_rng(0)
    acts = rng.uniform(-1, 1, (20, 4, 4))
    runs = []
    for _ in range(2):
        env = make(n=4, seed=7)
        obs = [env.reset()]
        for a in acts:
            obs.append(env.step(a)[0])
        runs.append(np.stack(obs))
    assert np.array_equal(runs[0], runs[1])
    other = make(n=4, seed=8)
    assert not np.array_equal(other.reset(), runs[0][0])


def test_commands_follow_curriculum_and_forcing():
    env = make(n=64)
    env.reset()
    assert np.all((env.h_star >= 0.5) & (env.h_star <= 0.6))
    env.forced_command = np.full(64, 0.72)
    env.forced_stage = int(RSIStage.STANDING_SQUATTING)
    env.reset()
    np.testing.assert_array_equal(env.h_star, 0.72)
    assert np.all(env.bs.state.phase == JumpPhase.STANCE)


def test_standing_still_policy_never_succeeds():
    # zero action holds the stance: no jump is executed, so no episode can succeed
    env = make(n=16, randomize=False)
    env.forced_stage = int(RSIStage.STANDING_SQUATTING)
    env.reset()
    outcomes = []
    for _ in range(int(3.0 * 60) + 5):
        _, _, _, info = env.step(np.zeros((16, 4)))
        outcomes += info["outcomes"]
    assert len(outcomes) >= 16
    assert not any(o.success for o in outcomes)
    assert not any(o.executed and np.isfinite(o.error) for o in outcomes)


def test_random_policy_rarely_succeeds():
    env = make(n=32)
    env.forced_stage = int(RSIStage.STANDING_SQUATTING)
    env.reset()
    rng = np.random.default_rng(1)
    outcomes = []
    for _ in range(200):
        _, _, _, info = env.step(rng.uniform(-1, 1, (32, 4)))
        outcomes += info["outcomes"]
    assert outcomes
    assert np.mean([o.success for o in outcomes]) < 0.1


def test_truncation_reports_final_observation():
    env = make(n=4, randomize=False, episode_length=0.1)
    env.forced_stage = int(RSIStage.STANDING_SQUATTING)
    env.reset()
    for k in range(6):
        obs, _, done, info = env.step(np.zeros((4, 4)))
        if info["truncated"].any():
            break
    assert info["truncated"].all() and done.all()
    assert info["final_obs"].shape == obs.shape
    assert len(info["episode_returns"]) == 4
    # the env was auto-reset: its clock starts again
    np.testing.assert_array_equal(env.episode_time, 0.0)


def test_config_validation():
    assert EnvConfig(task="walk").validation_errors()
    assert EnvConfig(profile="moon").validation_errors()
    assert not EnvConfig().validation_errors()
