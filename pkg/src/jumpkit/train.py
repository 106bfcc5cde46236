"""Training loop and evaluation harness around JumpEnv and PPO."""

from __future__ import annotations

from dataclasses import dataclass, field
import dataclasses
import json
import logging
import math
import os
import time

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .curriculum import CurriculumState, RSIStage, update_curriculum
from .env import EnvConfig, JumpEnv
from .io import atomic_write_text, write_csv
from .ppo import JUMPING_WIDTHS, PPO, Divergence, PPOConfig, PolicyNetwork, RolloutBuffer, act
from .rewards import VERTICAL

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("update", "env_steps", "mean_reward", "mean_return", "success_rate", "mean_error",
                 "range_lo", "range_hi", "breadth", "policy_loss", "value_loss", "entropy", "kl", "lr",
                 "eval_success", "eval_mae")
EVAL_COLUMNS = ("command", "episode", "target", "achieved", "error", "success", "executed", "reason", "ood")
TRACE_COLUMNS = ("update", "range_lo", "range_hi", "breadth", "window_success")


@dataclass
class TrainResult:
    net: PolicyNetwork
    curves: list = field(default_factory=list)
    curriculum_trace: list = field(default_factory=list)
    final_eval: dict | None = None
    checkpoint: str | None = None


def _task_range(curriculum: CurriculumState, task: str):
    return curriculum.vertical if task == VERTICAL else curriculum.forward


def default_grid(task: str, n: int = 9) -> np.ndarray:
    lo, hi = (0.4, 0.8) if task == VERTICAL else (0.3, 0.7)
    return np.linspace(lo, hi, n)


def train(env_cfg: EnvConfig, ppo_cfg: PPOConfig, out_dir: str | None = None, widths=JUMPING_WIDTHS,
          eval_every: int = 0, eval_grid=None, eval_episodes: int = 4, time_budget: float | None = None,
          stop_success: float | None = None, stop_mae: float | None = None, progress=None, env_kwargs: dict | None = None) -> TrainResult:
    """Run PPO on the jumping task.

    Curriculum decisions use standing-start episodes only, since those are
    the ones where the policy must produce the whole jump. ``stop_success``
    ends training early once a periodic evaluation reaches that success rate;
    ``stop_mae`` once every evaluation jump completes within that mean error.
    On Divergence the last rollout statistics are dumped to
    ``divergence.json`` in ``out_dir`` before re-raising.
    """
    env_kwargs = env_kwargs or {}
    env_cfg.num_envs = ppo_cfg.num_envs
    seed = ppo_cfg.seed
    env = JumpEnv(env_cfg, seed=seed, **env_kwargs)
    rng = np.random.default_rng(seed + 1)
    net = PolicyNetwork(env.obs_dim, env.act_dim, widths, np.random.default_rng(seed + 2),
                        init_log_std=ppo_cfg.init_log_std)
    algo = PPO(net, ppo_cfg)
    T, N = ppo_cfg.horizon, ppo_cfg.num_envs
    result = TrainResult(net=net)
    obs = env.reset()
    returns_seen = []
    t_start = time.perf_counter()
    grid = default_grid(env_cfg.task) if eval_grid is None else np.asarray(eval_grid, float)

    for update in range(1, ppo_cfg.max_updates + 1):
        buf = RolloutBuffer.empty(T, N, env.obs_dim, env.act_dim)
        outcomes = []
        net.obs_norm.update(obs)
        for t in range(T):
            a, u, logp, value, mu, x = act(net, obs, rng)
            obs_next, rew, done, info = env.step(a)
            r = rew.copy()
            trunc = info["truncated"]
            if trunc.any():
                # bootstrap time-limit ends from the pre-reset observation
                _, _, _, v_final, _, _ = act(net, info["final_obs"][trunc], rng, deterministic=True)
                r[trunc] += ppo_cfg.gamma * v_final
            buf.obs[t], buf.u[t], buf.mu[t], buf.logp[t] = x, u, mu, logp
            buf.rewards[t], buf.values[t], buf.dones[t] = r, value, done
            outcomes += info["outcomes"]
            if "episode_returns" in info:
                returns_seen += list(info["episode_returns"])
            obs = obs_next
            if t < T - 1:
                net.obs_norm.update(obs)
        _, _, _, last_v, _, _ = act(net, obs, rng, deterministic=True)
        buf.finish(last_v, ppo_cfg.gamma, ppo_cfg.lam)
        try:
            stats = algo.update(buf, rng)
        except Divergence as e:
            if out_dir:
                _dump_divergence(out_dir, e, update, buf, result)
            raise

        standing = [o for o in outcomes if o.stage == RSIStage.STANDING_SQUATTING]
        if standing:
            env.curriculum = update_curriculum(env.curriculum, [o.success for o in standing])
        lo, hi = _task_range(env.curriculum, env_cfg.task)
        succ = float(np.mean([o.success for o in standing])) if standing else float("nan")
        errs = [o.error for o in standing if math.isfinite(o.error)]
        row = {"update": update, "env_steps": update * T * N, "mean_reward": float(buf.rewards.mean()),
               "mean_return": float(np.mean(returns_seen[-200:])) if returns_seen else float("nan"),
               "success_rate": succ, "mean_error": float(np.mean(errs)) if errs else float("nan"),
               "range_lo": lo, "range_hi": hi, "breadth": env.curriculum.breadth,
               "policy_loss": stats["policy_loss"], "value_loss": stats["value_loss"],
               "entropy": stats["entropy"], "kl": stats["kl"], "lr": stats["lr"],
               "eval_success": float("nan"), "eval_mae": float("nan")}
        result.curriculum_trace.append({"update": update, "range_lo": lo, "range_hi": hi,
                                        "breadth": env.curriculum.breadth,
                                        "window_success": env.curriculum.success_rate()})
        last = update == ppo_cfg.max_updates
        over_time = time_budget is not None and time.perf_counter() - t_start > time_budget
        if (eval_every and update % eval_every == 0) or last or over_time:
            ev = evaluate(net, env_cfg, grid, eval_episodes, seed=seed, env_kwargs=env_kwargs)
            row["eval_success"], row["eval_mae"] = ev["success_rate"], ev["mean_abs_error"]
            result.final_eval = ev
            if stop_success is not None and ev["success_rate"] >= stop_success:
                last = True
            if stop_mae is not None and ev["completed_rate"] == 1.0 and ev["mean_abs_error"] <= stop_mae:
                last = True
        result.curves.append(row)
        if progress is not None:
            progress(row)
        if out_dir and (last or over_time or (eval_every and update % eval_every == 0)):
            _write_outputs(out_dir, net, env_cfg, ppo_cfg, widths, result, update)
        if last or over_time:
            break
    if out_dir:
        result.checkpoint = os.path.join(out_dir, "policy.ckpt")
    return result


def _write_outputs(out_dir, net, env_cfg, ppo_cfg, widths, result, update):
    os.makedirs(out_dir, exist_ok=True)
    meta = {"task": env_cfg.task, "obs_dim": net.obs_dim, "act_dim": net.act_dim, "widths": list(widths),
            "update": update, "seed": ppo_cfg.seed, "num_envs": ppo_cfg.num_envs}
    save_checkpoint(os.path.join(out_dir, "policy.ckpt"), net, meta)
    write_csv(os.path.join(out_dir, "curves.csv"), "curves", CURVE_COLUMNS, result.curves)
    write_csv(os.path.join(out_dir, "curriculum.csv"), "curriculum", TRACE_COLUMNS, result.curriculum_trace)


def _dump_divergence(out_dir, err, update, buf, result):
    info = {"update": update, "message": str(err), "diagnostics": err.diagnostics,
            "reward_min": float(np.min(buf.rewards)), "reward_max": float(np.max(buf.rewards)),
            "obs_absmax": float(np.max(np.abs(buf.obs))), "recent_curves": result.curves[-5:]}
    atomic_write_text(os.path.join(out_dir, "divergence.json"), json.dumps(info, indent=2, default=str) + "\n")


def load_policy(path: str) -> tuple[PolicyNetwork, dict]:
    meta, arrays = load_checkpoint(path)
    net = PolicyNetwork(meta["obs_dim"], meta["act_dim"], tuple(meta["widths"]), zero=True)
    net.load_arrays(arrays)
    return net, meta


def evaluate(net: PolicyNetwork, env_cfg: EnvConfig, grid, episodes: int = 1, seed: int = 0,
             randomize: bool = False, noise: bool = False, train_range=None, max_envs: int = 256,
             env_kwargs: dict | None = None) -> dict:
    """Deterministic evaluation from standing starts over a command grid.

    Returns a dict with ``rows`` (one per grid point and episode),
    ``success_rate``, ``mean_abs_error`` (over jumps with a finite error)
    and ``completed_rate`` (share of jumps with a finite error). Commands outside ``train_range`` are flagged ``ood``.
    """
    grid = np.asarray(grid, float).reshape(-1)
    if grid.size == 0:
        raise ValueError("evaluation grid is empty")
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if train_range is None:
        train_range = (0.4, 0.8) if env_cfg.task == VERTICAL else (0.3, 0.7)
    commands = np.repeat(grid, episodes)
    ep_index = np.tile(np.arange(episodes), grid.size)
    cmd_index = np.repeat(np.arange(grid.size), episodes)
    cfg = _eval_config(env_cfg, randomize, noise)
    rows = []
    for start in range(0, commands.size, max_envs):
        chunk = commands[start:start + max_envs]
        cfg.num_envs = chunk.size
        env = JumpEnv(cfg, seed=seed + start, **(env_kwargs or {}))
        env.forced_stage = int(RSIStage.STANDING_SQUATTING)
        env.forced_command = chunk
        obs = env.reset()
        got = [None] * chunk.size
        pending = np.ones(chunk.size, bool)
        limit = int(math.ceil(cfg.episode_length / cfg.rates.control_dt)) + 5
        for _ in range(limit):
            a, *_ = act(net, obs, None, deterministic=True)
            # ended environments keep running on reset copies; only first outcomes count
            obs, _, done, info = env.step(a)
            if done.any():
                for i, o in zip(np.nonzero(done)[0], info["outcomes"]):
                    if pending[i]:
                        got[i] = o
                        pending[i] = False
            if not pending.any():
                break
        for k, o in enumerate(got):
            j = start + k
            rows.append({"command": int(cmd_index[j]), "episode": int(ep_index[j]), "target": float(commands[j]),
                         "achieved": o.achieved, "error": o.error, "success": int(o.success),
                         "executed": int(o.executed), "reason": o.reason,
                         "ood": int(not (train_range[0] - 1e-9 <= commands[j] <= train_range[1] + 1e-9))})
    succ = float(np.mean([r["success"] for r in rows]))
    finite = [r["error"] for r in rows if math.isfinite(r["error"])]
    return {"rows": rows, "success_rate": succ,
            "mean_abs_error": float(np.mean(finite)) if finite else float("inf"),
            "completed_rate": len(finite) / len(rows),
            "n": len(rows)}


def _eval_config(env_cfg: EnvConfig, randomize: bool, noise: bool) -> EnvConfig:
    import copy
    cfg = copy.deepcopy(env_cfg)
    cfg.randomize = randomize
    cfg.noise = dataclasses.replace(cfg.noise, enabled=noise)
    if not randomize:
        cfg.push_interval = 1e9
    return cfg


def write_eval(path: str, result: dict) -> None:
    write_csv(path, "eval", EVAL_COLUMNS, result["rows"])
