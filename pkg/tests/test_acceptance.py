"""Acceptance criteria, one test each.

Every test records a single PASS/FAIL line; the lines are printed in the
"acceptance criteria" section at the end of the pytest run.

The learning criterion (8) evaluates the checkpoints under ``runs/`` (or
``$JUMPKIT_RUNS``) produced by ``jumpkit train --config configs/<task>.yaml``.
When a checkpoint is missing it is trained here first, which takes several
minutes per task on a single core.
"""

import json
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from jumpkit import cli
from jumpkit.actuation import FilterParams, predictive_filter, pd_torque, ActuatorParams
from jumpkit.ballistics import BallisticState, estimate_apex, estimate_landing
from jumpkit.checks import random_closed_angles
from jumpkit.curriculum import (CurriculumConfig, CurriculumState, RSIStage, sample_command, sample_initial_states,
                                update_curriculum)
from jumpkit.env import EnvConfig
from jumpkit.geometry import (LegGeometry, LegJointState, NoConvergence, OutOfWorkspace, ckc_jacobian, ckc_residual,
                              closed_leg, default_stance, in_workspace, paw_and_jacobian, stacked_residual,
                              weighted_ik)
from jumpkit.ppo import PPOConfig, PolicyNetwork, compute_gae, gaussian_logp, ppo_loss_and_grads
from jumpkit.rewards import HORIZONTAL, VERTICAL
from jumpkit.sim import SimParams, make_state, step
from jumpkit.train import default_grid, evaluate, load_policy

ROOT = Path(__file__).resolve().parents[1]
RUNS = Path(os.environ.get("JUMPKIT_RUNS", ROOT / "runs"))
DEG = math.pi / 180.0
G = LegGeometry()


@pytest.fixture
def report(request):
    lines = request.config._jumpkit_acceptance

    def emit(number, name, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] {number:2d} {name}: {detail}"
        lines.append(line)
        print(line)
        return passed

    return emit


def test_01_ik_round_trip(report):
    rng = np.random.default_rng(100)
    ang = random_closed_angles(G, rng, 4000)
    paw, _, _ = paw_and_jacobian(G, ang[:, 0], ang[:, 1])
    targets = paw[in_workspace(G, paw)][:2000].reshape(1000, 2, 2) + np.asarray(G.hip_positions, float)[:2]
    guess = default_stance(G)
    weighted_ik(G, targets[0], np.zeros(3), guess)   # compile outside the timed loop
    ok = 0
    t0 = time.perf_counter()
    for k in range(1000):
        try:
            cfg = weighted_ik(G, targets[k], np.zeros(3), guess)
        except (NoConvergence, OutOfWorkspace):
            continue
        ok += float(np.max(np.abs(stacked_residual(G, cfg, targets[k])))) <= 1e-6
    elapsed = time.perf_counter() - t0
    passed = ok >= 990 and elapsed < 5.0
    assert report(1, "IK round-trip", passed, f"{ok}/1000 converged to 1e-6 m in {elapsed:.2f} s")


def test_02_jacobian(report):
    rng = np.random.default_rng(101)
    ang = random_closed_angles(G, rng, 100)
    leg = closed_leg(G, ang[:, 0], ang[:, 1])
    q = leg.as_array()
    J = ckc_jacobian(G, leg)
    h = 1e-6
    worst = 0.0
    for k in range(5):
        dq = np.zeros(5)
        dq[k] = h
        fd = (ckc_residual(G, LegJointState.from_array(q + dq))
              - ckc_residual(G, LegJointState.from_array(q - dq))) / (2 * h)
        worst = max(worst, float(np.max(np.abs(fd - J[..., k]))))
    assert report(2, "Jacobian vs finite differences", worst < 1e-5, f"max |J - FD| = {worst:.2e} over 100 configs")


def test_03_filter_safety(report):
    filt = FilterParams(sum_bounds=G.transversal_sum_bounds)
    act = ActuatorParams()
    rng = np.random.default_rng(102)
    lo, hi = G.transversal_limits
    lo, hi = np.tile(lo, 2), np.tile(hi, 2)
    n = 16
    q = rng.uniform(lo + 0.2, hi - 0.2, (n, 4))
    for i, j in ((0, 1), (2, 3)):
        q[:, j] = np.clip(q[:, j], filt.sum_bounds[0] - q[:, i] + 0.01, filt.sum_bounds[1] - q[:, i] - 0.01)
    v = np.zeros((n, 4))
    dt = 0.001
    worst, sum_ok = 0.0, True
    target = safe = q.copy()
    steps = 100_000
    for k in range(steps):
        if k % 16 == 0:
            target = rng.uniform(lo - 1.5, hi + 1.5, (n, 4))
        if k % 2 == 0:
            safe = predictive_filter(target, q, v, lo, hi, filt)
            s = safe[:, [0, 2]] + safe[:, [1, 3]]
            sum_ok &= bool(np.all((s >= filt.sum_bounds[0]) & (s <= filt.sum_bounds[1])))
        v = v + dt * pd_torque(safe, q, v, act) / act.armature
        q = q + dt * v
        worst = max(worst, float(np.max(np.maximum(q - hi, lo - q))))
    far = np.full((8, 4), 40 * DEG) + rng.uniform(-0.1, 0.1, (8, 4))
    identity = np.array_equal(predictive_filter(far, far, np.zeros_like(far), lo, hi, filt), far)
    passed = worst <= 0.5 * DEG and sum_ok and identity
    assert report(3, "Filter safety", passed, f"max limit excess {worst / DEG:.3f} deg over {steps} steps, "
                                              f"sum bound exact {sum_ok}, identity {identity}")


def test_04_ballistic_oracle(report):
    sim = SimParams()
    g = sim.gravity
    z0, vx0, vz0 = 2.0, 0.6, 2.5
    state = make_state([[0.0, z0]], 0.0, [vx0, vz0], 0.0, np.full(4, 60 * DEG))
    land_h = 2.05
    b0 = BallisticState(0.0, z0, vx0, vz0, g)
    apex0 = float(estimate_apex(b0))
    x_land0, _ = estimate_landing(b0, land_h)
    free_err = drift_apex = drift_land = 0.0
    zs, xs = [z0], [0.0]
    k = 0
    while True:
        state = step(state, np.zeros((1, 4)), 0.001, sim)
        k += 1
        t = k * 0.001
        x, z = float(state.pos[0, 0]), float(state.pos[0, 1])
        if t <= 0.2 + 1e-12:
            free_err = max(free_err, abs(z - (z0 + vz0 * t - 0.5 * g * t * t)))
        b = BallisticState(x, z, float(state.vel[0, 0]), float(state.vel[0, 1]), g)
        if state.vel[0, 1] > 0:
            drift_apex = max(drift_apex, abs(float(estimate_apex(b)) - apex0))
        if z > land_h:
            drift_land = max(drift_land, abs(float(estimate_landing(b, land_h)[0]) - x_land0))
        zs.append(z)
        xs.append(x)
        if z < land_h and state.vel[0, 1] < 0:
            break
    # realized apex and crossing of the landing height (linear interpolation between steps)
    apex_real = max(zs)
    f = (zs[-2] - land_h) / (zs[-2] - zs[-1])
    x_real = xs[-2] + f * (xs[-1] - xs[-2])
    apex_miss = abs(apex_real - apex0)
    land_miss = abs(x_real - x_land0)
    passed = free_err <= 1e-4 and drift_apex <= 1e-3 and drift_land <= 1e-3 and apex_miss <= 5e-3 and land_miss <= 5e-3
    assert report(4, "Ballistic oracle", passed,
                  f"z(t) error {free_err:.1e} m, estimate drift {max(drift_apex, drift_land):.1e} m, "
                  f"realized apex/landing miss {apex_miss * 1e3:.2f}/{land_miss * 1e3:.2f} mm")


def test_05_reward_unit_suite(report):
    suite = ROOT / "tests" / "test_rewards.py"
    res = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", str(suite)],
                         capture_output=True, text=True, cwd=ROOT)
    tail = res.stdout.strip().splitlines()[-1] if res.stdout.strip() else res.stderr.strip()[-200:]
    assert report(5, "Reward unit suite", res.returncode == 0, tail)


def test_06_rsi_consistency(report):
    rng = np.random.default_rng(106)
    cur = CurriculumState.initial()
    g = 9.81
    sim = SimParams()
    worst_arc = worst_close = worst_resim = 0.0
    fallbacks = total = 0
    for mode in (VERTICAL, HORIZONTAL):
        n = 5000
        cmd = sample_command(mode, cur, rng, n)
        stages = np.where(np.arange(n) % 2 == 0, RSIStage.IN_FLIGHT, RSIStage.TOUCHDOWN)
        state, fb = sample_initial_states(stages, cmd, G, cur, rng, return_fallback=True)
        fallbacks += int(fb.sum())
        total += n
        t = (state.takeoff_vel[:, 1] - state.vel[:, 1]) / g
        z = state.takeoff_pos[:, 1] + state.takeoff_vel[:, 1] * t - 0.5 * g * t * t
        x = state.takeoff_pos[:, 0] + state.takeoff_vel[:, 0] * t
        worst_arc = max(worst_arc, float(np.max(np.hypot(z - state.pos[:, 1], x - state.pos[:, 0]))))
        for leg in range(2):
            cl = closed_leg(G, state.q[:, 2 * leg], state.q[:, 2 * leg + 1])
            worst_close = max(worst_close, float(np.max(np.abs(ckc_residual(G, cl)))))
        # re-simulate 50 ms of free flight (lifted clear of the ground) and compare with the arc
        free = state.copy()
        free.pos[:, 1] += 5.0
        for _ in range(50):
            free = step(free, np.zeros((n, 4)), 0.001, sim)
        tt = t + 0.05
        z_arc = state.takeoff_pos[:, 1] + state.takeoff_vel[:, 1] * tt - 0.5 * g * tt * tt + 5.0
        x_arc = state.takeoff_pos[:, 0] + state.takeoff_vel[:, 0] * tt
        worst_resim = max(worst_resim, float(np.max(np.hypot(free.pos[:, 1] - z_arc, free.pos[:, 0] - x_arc))))
    passed = fallbacks == 0 and worst_arc <= 1e-3 and worst_resim <= 1e-3 and worst_close <= 1e-8
    assert report(6, "RSI consistency", passed,
                  f"{total} states, {fallbacks} fallbacks, arc {worst_arc:.1e} m, re-sim {worst_resim:.1e} m, "
                  f"closure {worst_close:.1e} m")


def _brute_gae(r, v, d, gamma, lam, last):
    T = len(r)
    v_next = np.append(v[1:], last)
    delta = r + gamma * v_next * (1 - d) - v
    out = np.zeros(T)
    for t in range(T):
        acc, w = 0.0, 1.0
        for k in range(t, T):
            acc += w * delta[k]
            if d[k]:
                break
            w *= gamma * lam
        out[t] = acc
    return out


def test_07_gradient_and_gae(report):
    rng = np.random.default_rng(107)
    net = PolicyNetwork(4, 2, widths=(8, 6), rng=rng)
    net.actor.params[-2][...] = rng.normal(0, 0.3, net.actor.params[-2].shape)
    B = 16
    x = rng.normal(size=(B, 4))
    mu = net.actor.forward(x)
    u = mu + np.exp(net.log_std) * rng.normal(size=mu.shape)
    batch = {"obs": x, "u": u, "logp_old": gaussian_logp(u, mu, net.log_std) + rng.uniform(-0.05, 0.05, B),
             "adv": rng.normal(size=B), "ret_n": rng.normal(size=B)}
    cfg = PPOConfig(entropy_coef=0.01)
    _, _, ga, gc = ppo_loss_and_grads(net, batch, cfg)
    worst_grad = 0.0
    eps = 1e-6
    for p, gr in zip(net.actor_params() + net.critic.params, ga + gc):
        num = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + eps
            fp = ppo_loss_and_grads(net, batch, cfg)[0]
            p[idx] = old - eps
            fm = ppo_loss_and_grads(net, batch, cfg)[0]
            p[idx] = old
            num[idx] = (fp - fm) / (2 * eps)
        worst_grad = max(worst_grad, float(np.max(np.abs(gr - num)) / max(np.max(np.abs(num)), 1e-8)))
    worst_gae = 0.0
    for _ in range(500):
        r, v = rng.normal(size=5), rng.normal(size=5)
        d = (rng.random(5) < 0.3).astype(float)
        last, gamma, lam = rng.normal(), rng.uniform(0.5, 1.0), rng.uniform(0.0, 1.0)
        adv, _ = compute_gae(r, v, d, gamma, lam, last)
        worst_gae = max(worst_gae, float(np.max(np.abs(adv - _brute_gae(r, v, d, gamma, lam, last)))))
    passed = worst_grad <= 1e-4 and worst_gae <= 1e-12
    assert report(7, "Trainer gradient/GAE", passed,
                  f"max relative gradient error {worst_grad:.1e}, max GAE error {worst_gae:.1e}")


def _trained(task):
    out = RUNS / task
    if not (out / "policy.ckpt").exists() or not (out / "summary.json").exists():
        rc = cli.main(["train", "--config", str(ROOT / "configs" / f"{task}.yaml"), "--out", str(out)])
        assert rc == cli.EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    net, meta = load_policy(str(out / "policy.ckpt"))
    assert meta["task"] == task
    return net, summary


def _budget(summary):
    return summary["updates"] <= 1500 and summary["wall_time"] is not None and summary["wall_time"] <= 2700.0


def test_08a_learning_vertical(report):
    net, summary = _trained(VERTICAL)
    # fresh evaluation seed, independent of the periodic evaluation used while training
    res = evaluate(net, EnvConfig(task=VERTICAL), default_grid(VERTICAL, 9), episodes=8, seed=2024)
    passed = res["success_rate"] >= 0.8 and _budget(summary)
    assert report(8, "Desk-scale learning (vertical)", passed,
                  f"success {res['success_rate']:.1%} over h* in [0.4, 0.8] m ({res['n']} jumps, "
                  f"MAE {res['mean_abs_error']:.3f} m) after {summary['updates']} updates / "
                  f"{summary['wall_time'] / 60:.1f} min")


def test_08b_learning_horizontal(report):
    net, summary = _trained(HORIZONTAL)
    res = evaluate(net, EnvConfig(task=HORIZONTAL), default_grid(HORIZONTAL, 9), episodes=8, seed=2024)
    passed = res["completed_rate"] >= 0.95 and res["mean_abs_error"] <= 0.05 and _budget(summary)
    assert report(8, "Desk-scale learning (horizontal)", passed,
                  f"landing MAE {res['mean_abs_error']:.3f} m over x* in [0.3, 0.7] m, "
                  f"{res['completed_rate']:.1%} of {res['n']} jumps landed, after {summary['updates']} updates / "
                  f"{summary['wall_time'] / 60:.1f} min")


def test_09_curriculum(report):
    c = CurriculumConfig()
    s = CurriculumState.initial(c)
    mono = True
    for _ in range(80):
        n = update_curriculum(s, [True] * c.window)
        mono &= n.vertical[0] <= s.vertical[0] and n.vertical[1] >= s.vertical[1]
        mono &= n.forward[0] <= s.forward[0] and n.forward[1] >= s.forward[1]
        s = n
    at_caps = s.vertical == c.vertical_cap and s.forward == c.forward_cap
    never_below = True
    for _ in range(80):
        s = update_curriculum(s, [False] * c.window)
        never_below &= s.vertical[0] <= c.vertical_initial[0] and s.vertical[1] >= c.vertical_initial[1]
        never_below &= s.forward[0] <= c.forward_initial[0] and s.forward[1] >= c.forward_initial[1]
    back = s.vertical == c.vertical_initial and s.forward == c.forward_initial
    passed = mono and at_caps and never_below and back
    assert report(9, "Curriculum behavior", passed,
                  f"monotone growth {mono}, caps reached {at_caps}, contracted to initial {back}, "
                  f"never below {never_below}")


def test_10_determinism(report, tmp_path):
    cfg = tmp_path / "tiny.yaml"
    cfg.write_text("ppo: {horizon: 16, num_envs: 16}\n"
                   "training: {eval_every: 2, eval_points: 3, eval_episodes: 1, widths: [32, 32]}\n")
    for run in ("a", "b"):
        out = str(tmp_path / run)
        assert cli.main(["train", "--config", str(cfg), "--updates", "4", "--seed", "9", "--out", out,
                         "--deterministic"]) == cli.EXIT_OK
        assert cli.main(["eval", "--config", str(cfg), "--seed", "9", "--out", out, "--episodes", "2",
                         "--deterministic"]) == cli.EXIT_OK
    same = {name: (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
            for name in ("policy.ckpt", "eval.csv")}
    assert report(10, "Determinism", all(same.values()),
                  ", ".join(f"{k} {'identical' if v else 'differs'}" for k, v in same.items()))
