"""Reward library: each formula against hand evaluations, gating and terminations."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from jumpkit.rewards import (DEFAULT_SIGMA, DEFAULT_WEIGHTS, HORIZONTAL, VERTICAL, JumpCommand, RewardBreakdown,
                             RewardConfig, TerminationLimits, TerminationReason, common_jump_rewards,
                             horizontal_jump_rewards, kernel_exp, kernel_laplace, regularization_rewards,
                             soft_impact, termination_check, vertical_jump_rewards, walking_rewards)
from jumpkit.sim import JumpPhase, make_state, update_jump_phase

DEG = math.pi / 180.0
E = math.exp
STANCE, FLIGHT, LANDED = int(JumpPhase.STANCE), int(JumpPhase.IN_FLIGHT), int(JumpPhase.LANDED)


def cfg(sig):
    """Config with the listed kernel widths replaced, keyed by subscript."""
    sigma = dict(DEFAULT_SIGMA)
    sigma.update({f"sigma_{k}": v for k, v in sig.items()})
    return RewardConfig(sigma=sigma)


# ---------------------------------------------------------------- kernels
def test_kernel_values():
    assert kernel_exp(0.0, 0.3) == 1.0
    assert kernel_exp(0.3, 0.3) == pytest.approx(0.36788, abs=1e-5)
    assert kernel_exp(-0.6, 0.3) == pytest.approx(E(-4.0))
    assert kernel_laplace(0.0, 0.2) == 1.0
    assert kernel_laplace(0.4, 0.2) == pytest.approx(0.13534, abs=1e-5)
    assert kernel_laplace(-0.1, 0.2) == pytest.approx(E(-0.5))
    with pytest.raises(ValueError):
        kernel_exp(1.0, 0.0)
    with pytest.raises(ValueError):
        kernel_laplace(1.0, -1.0)


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(1e-3, 10))
def test_kernels_even_bounded_decreasing(x, y, s):
    for k in (kernel_exp, kernel_laplace):
        assert k(x, s) == k(-x, s)
        assert 0.0 <= k(x, s) <= 1.0
        if abs(x) < abs(y):
            assert k(x, s) >= k(y, s)


# ---------------------------------------------------------- regularization
def test_regularization_hand_values():
    c = RewardConfig()
    targets = np.array([[0.5, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], [0.2, 0.2, 0.2, 0.2]])
    safe = np.array([[0.4, 0.0, 0.0, 0.0], [0.5, 0.5, 0.0, 0.0], [0.2, 0.2, 0.2, 0.2]])
    tau = np.array([[1.0, -2.0, 0.0, 3.0], [1.0, 1.0, 1.0, 1.0], [-1.0, -1.0, 1.0, 1.0]])
    prev_tau = np.array([[1.0, 2.0, 0.0, -3.0], [1.0, 1.0, 1.0, 1.0], [1.0, 1.0, -1.0, 1.0]])
    acc = np.array([[10.0, 0, 0, 0], [0, 0, 3.0, 4.0], [0, 0, 0, 0]])
    a = np.array([[0.1, 0.1, 0.1, 0.1], [0.0, 0.0, 0.0, 0.0], [0.5, 0.0, 0.0, 0.0]])
    pa = np.array([[0.1, 0.1, 0.1, 0.1], [0.3, 0.4, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]])
    out = regularization_rewards(targets, safe, tau, acc, a, pa, prev_tau, c)
    np.testing.assert_allclose(out.raw("action_clip"), [0.01, 0.5, 0.0])
    np.testing.assert_allclose(out.raw("motor_torque"), [14.0, 4.0, 4.0])
    np.testing.assert_allclose(out.raw("joint_acceleration"), [100.0, 25.0, 0.0])
    np.testing.assert_allclose(out.raw("action_rate"), [0.0, 0.25, 0.25])
    np.testing.assert_allclose(out.raw("jerk"), [2.0, 0.0, 3.0])
    # penalties carry negative weights
    for name in ("action_clip", "motor_torque", "joint_acceleration", "action_rate", "jerk"):
        assert DEFAULT_WEIGHTS[name] < 0


def test_jerk_counts_three_of_twelve():
    c = RewardConfig()
    tau = np.ones(12)
    prev = np.ones(12)
    prev[[1, 5, 9]] = -1.0
    z = np.zeros(12)
    out = regularization_rewards(z, z, tau, z, z, z, prev, c)
    assert out.raw("jerk") == 3.0


# ---------------------------------------------------------------- walking
def test_walking_hand_values():
    c = cfg({1: 0.5, 2: 0.5, 3: 1.0, 4: 0.5, 5: 0.5})
    stand = np.tile([60 * DEG, 60 * DEG], 4)
    theta_l = np.full(4, 45 * DEG)
    v = np.array([[0.5, 0.0, 0.0], [0.5, 0.0, 0.3], [0.0, 0.5, 0.0]])
    w = np.array([[0.0, 0.0, 0.2], [0.1, 0.2, 0.0], [0.0, 0.0, 0.7]])
    g = np.array([[0.0, 0.0, -1.0], [0.3, 0.4, -0.8], [0.0, 0.1, -0.99]])
    cmd = np.array([[0.5, 0.0, 0.2], [0.0, 0.0, 0.0], [0.5, 0.0, 0.2]])
    theta_t = np.stack([np.tile([55 * DEG, 55 * DEG], 4), stand + 0.5 / math.sqrt(8), stand + 1.0 / math.sqrt(8)])
    th_l = np.stack([theta_l, theta_l + 0.5, theta_l])
    out = walking_rewards(v, w, g, cmd, theta_t, th_l, c)
    np.testing.assert_allclose(out.raw("linear_velocity"), [1.0, E(-1.0), E(-2.0)])
    np.testing.assert_allclose(out.raw("yaw_rate"), [1.0, 1.0, E(-1.0)])
    np.testing.assert_allclose(out.raw("vertical_velocity"), [0.0, 0.09, 0.0])
    np.testing.assert_allclose(out.raw("lateral_stability"), [0.0, 0.05, 0.0])
    np.testing.assert_allclose(out.raw("flat"), [0.0, 0.25, 0.01])
    # rows 0 and 2 carry a moving command (moving targets), row 1 a zero command (standing targets)
    err2 = float(np.linalg.norm(theta_t[2] - np.tile([55 * DEG, 55 * DEG], 4)))
    np.testing.assert_allclose(out.raw("stand"), [1.0, E(-0.25), E(-err2 ** 2)])
    np.testing.assert_allclose(out.raw("lateral_position"), [0.0, E(-(0.5 ** 4) ** 2 / 0.25) - 1.0,
                                                             E(-(err2 ** 4) ** 2 / 0.25) - 1.0])
    np.testing.assert_allclose(out.raw("transversal_position"), [0.0, E(-(1.0 ** 10) ** 2 / 0.25) - 1.0, 0.0])


# ----------------------------------------------------------- vertical jump
def test_jump_height_hand_values():
    c = cfg({6: 0.1, 7: 0.1, 8: 0.1, 9: 0.1})
    h_star = 0.6
    h_max = np.array([0.6, 0.7, 0.4])
    h_hat = np.array([0.7, 0.6, 0.5])
    apex = np.array([True, True, True])
    phase = np.full(3, FLIGHT)
    reached = np.zeros(3, bool)
    out = vertical_jump_rewards(h_max, h_hat, h_star, apex, phase, reached, np.zeros((3, 8)), np.zeros((3, 4)), c)
    np.testing.assert_allclose(out.raw("jump_height"), [4.0, E(-1) + 3 * E(-1), E(-4) + 3 * E(-2)])
    np.testing.assert_allclose(out.raw("est_jump_height"), [1.4715, 4.0, E(-1) + 3 * E(-1)], atol=1e-4)


def test_joint_symmetry_hand_values():
    c = cfg({10: 0.05, 11: 0.2})
    theta = np.array([np.full(8, 1.0), np.r_[np.zeros(4), np.full(4, 0.2)], np.r_[np.zeros(4), np.full(4, 0.2)]])
    lat = np.array([np.zeros(4), np.zeros(4), np.array([0.2, 0.0, 0.0, 0.0])])
    phase = np.array([STANCE, FLIGHT, STANCE])
    out = vertical_jump_rewards(np.zeros(3), np.zeros(3), 0.5, np.zeros(3, bool), phase, np.zeros(3, bool),
                                theta, lat, c)
    # population variance of four zeros and four 0.2s is 0.01
    np.testing.assert_allclose(out.raw("joint_symmetry"), [1.0, E(-(0.01 / 0.05) ** 2),
                                                           E(-(0.01 / 0.05) ** 2) * E(-1.0)])
    landed = vertical_jump_rewards(np.zeros(1), np.zeros(1), 0.5, np.zeros(1, bool), np.array([LANDED]),
                                   np.zeros(1, bool), theta[:1], lat[:1], c)
    assert landed.raw("joint_symmetry")[0] == 0.0


def test_est_height_gated_to_takeoff_apex():
    c = RewardConfig()
    phase = np.array([STANCE, FLIGHT, FLIGHT, LANDED])
    reached = np.array([False, False, True, True])
    out = vertical_jump_rewards(np.full(4, 0.5), np.full(4, 0.5), 0.5, np.zeros(4, bool), phase, reached,
                                np.zeros((4, 8)), np.zeros((4, 4)), c)
    np.testing.assert_allclose(out.raw("est_jump_height"), [0.0, 4.0, 0.0, 0.0])
    np.testing.assert_array_equal(out.raw("jump_height"), 0.0)


def test_jump_height_fires_once_on_scripted_episode():
    c = RewardConfig()
    s = make_state([[0.0, 0.4]], 0.0, np.zeros(2), 0.0, np.full(4, 60 * DEG))
    g, dt = 9.81, 1.0 / 60.0
    fired, est_steps = [], []
    # 0.3 s stance, ballistic flight from vz = 2.5, then contact
    for k in range(60):
        t = k * dt
        apex0 = s.apex_reached.copy()
        if t < 0.3:
            s.contact[:] = True
        else:
            tf = t - 0.3
            s.pos[0, 1] = 0.4 + 2.5 * tf - 0.5 * g * tf * tf
            s.vel[0, 1] = 2.5 - g * tf
            s.contact[:] = s.pos[0, 1] < 0.4 and tf > 0.1
        s.time[:] = t
        update_jump_phase(s)
        out = vertical_jump_rewards(s.max_height, s.pos[:, 1] + np.maximum(s.vel[:, 1], 0) ** 2 / (2 * g), 0.7,
                                    s.apex_reached & ~apex0, s.phase, s.apex_reached, np.zeros((1, 8)),
                                    np.zeros((1, 4)), c)
        fired.append(out.raw("jump_height")[0] > 0)
        est_steps.append(out.raw("est_jump_height")[0] > 0)
    assert sum(fired) == 1
    k_apex = fired.index(True)
    # estimate only between takeoff and the apex step
    assert all(not e for e in est_steps[k_apex:])
    assert any(est_steps[:k_apex])
    assert s.phase[0] == LANDED


# ---------------------------------------------------------- horizontal jump
def test_horizontal_hand_values():
    c = cfg({12: 0.2, 13: 0.1, 14: 0.1, 15: 0.2})
    e = np.array([[0.1, 0.0], [0.0, 0.0], [0.2, 0.0]])
    e_hat = np.array([[0.1, 0.0], [0.0, 0.05], [0.2, 0.0]])
    phase = np.array([FLIGHT, FLIGHT, STANCE])
    left = np.zeros((3, 4))
    right = np.array([np.zeros(4), np.full(4, 0.1), np.full(4, 0.05)])
    out = horizontal_jump_rewards(e, e_hat, phase, left, right, c)
    np.testing.assert_allclose(out.raw("tracking"), [0.7788, 1.0, E(-1.0)], atol=1e-4)
    np.testing.assert_allclose(out.raw("est_tracking"), [0.4047, 1.1 * E(-0.25), 0.0], atol=1e-4)
    np.testing.assert_allclose(out.raw("horizontal_symmetry"), [1.0, E(-1.0), E(-0.25)])


# -------------------------------------------------------------- common jump
def test_soft_impact_hand_values():
    a_max = 60.0
    a = np.array([[0.0, 60.0], [0.0, 30.0], [0.0, -60.0], [5.0, 5.0]])
    v = np.array([[0.0, -1.0], [0.0, -2.0], [0.0, -1.0], [0.0, 0.0]])
    np.testing.assert_allclose(soft_impact(a, v, a_max), [0.0, 0.5, 1.0, 1.0])


def test_common_hand_values():
    c = cfg({16: 1.0, 17: 0.1, 18: 0.5})
    phase = np.array([STANCE, FLIGHT, LANDED])
    omega = np.array([[0.0], [1.0], [2.0]])
    pitch = np.array([0.0, 0.1, math.sqrt(0.2)])
    flight_t = np.tile([55 * DEG, 55 * DEG], 2)
    landed_t = np.tile([60 * DEG, 60 * DEG], 2)
    theta = np.stack([flight_t, flight_t + 0.25, landed_t])
    force = np.array([[[1.0, 2.0], [0.0, 2.0]], np.zeros((2, 2)), [[0.0, 100.0], [0.0, 0.0]]])
    a_body = np.zeros((3, 2))
    v_body = np.array([[0.0, 0.0], [0.0, 0.5], [0.0, -0.5]])
    qd = np.array([np.zeros(4), np.full(4, 2.0), np.array([0.2, 0.4, 0.6, 0.0])])
    since = np.array([0.0, 0.0, 0.1])
    out = common_jump_rewards(omega, pitch, theta, phase, force, a_body, v_body, qd, since, c)
    np.testing.assert_allclose(out.raw("angular_velocity"), [1.0, E(-1.0), E(-4.0)])
    np.testing.assert_allclose(out.raw("orientation"), [1.0, E(-1e-4 / 0.01), E(-0.04 / 0.01)])
    np.testing.assert_allclose(out.raw("desired_joint_pos"), [0.0, E(-1.0), 1.0])
    np.testing.assert_allclose(out.raw("ground_force"), [9.0, 0.0, 1e4])
    np.testing.assert_allclose(out.raw("catch_landing"), [0.0, 0.0, 0.5])
    np.testing.assert_allclose(out.raw("damp_landing"), [0.0, 0.0, 0.3])


def test_landing_terms_only_inside_window():
    c = RewardConfig()
    since = np.array([0.0, 0.1, 0.29, 0.31, 1.0])
    n = since.size
    out = common_jump_rewards(np.zeros((n, 1)), np.zeros(n), np.zeros((n, 4)), np.full(n, LANDED),
                              np.zeros((n, 2, 2)), np.zeros((n, 2)), np.tile([0.0, -2.0], (n, 1)),
                              np.full((n, 4), 3.0), since, c)
    np.testing.assert_allclose(out.raw("catch_landing"), [1, 1, 1, 0, 0])
    np.testing.assert_allclose(out.raw("damp_landing"), [1, 1, 1, 0, 0])
    flying = common_jump_rewards(np.zeros((1, 1)), np.zeros(1), np.zeros((1, 4)), np.array([FLIGHT]),
                                 np.zeros((1, 2, 2)), np.zeros((1, 2)), np.array([[0.0, -2.0]]),
                                 np.full((1, 4), 3.0), np.zeros(1), c)
    assert flying.raw("catch_landing")[0] == 0.0


def test_breakdown_total_is_weighted_sum():
    c = RewardConfig()
    rng = np.random.default_rng(0)
    n = 16
    out = regularization_rewards(*(rng.normal(size=(n, 4)) for _ in range(6)), rng.normal(size=(n, 4)), c)
    out.merge(common_jump_rewards(rng.normal(size=(n, 1)), rng.normal(size=n), rng.normal(size=(n, 4)),
                                  rng.integers(0, 3, n), rng.normal(size=(n, 2, 2)), rng.normal(size=(n, 2)),
                                  rng.normal(size=(n, 2)), rng.normal(size=(n, 4)), rng.uniform(0, 1, n), c))
    manual = sum(c.w(k) * raw for k, (raw, _) in out.terms.items())
    np.testing.assert_allclose(out.total, manual, atol=1e-12)
    assert RewardBreakdown().total == 0.0


# ------------------------------------------------------------- termination
def term(**kw):
    base = dict(phase=np.array([STANCE]), time_in_stance=np.zeros(1), predicted_error=np.array([np.nan]),
                measured_error=np.zeros(1), measured_valid=np.zeros(1, bool), base_z=np.array([0.35]),
                pitch=np.zeros(1), joint_excess=np.zeros(1), decel_peak=np.zeros(1), drift=np.zeros(1),
                limits=TerminationLimits(no_jump_timeout=2.5))
    base.update({k: np.atleast_1d(v) for k, v in kw.items()})
    return int(termination_check(**base)[0])


def test_termination_reasons():
    assert term() == TerminationReason.NONE
    assert term(time_in_stance=3.0) == TerminationReason.NO_JUMP_TIMEOUT
    assert term(base_z=0.10) == TerminationReason.COLLISION
    assert term(pitch=1.2) == TerminationReason.COLLISION
    assert term(predicted_error=0.6, phase=FLIGHT) == TerminationReason.PREDICTED_PERFORMANCE
    assert term(measured_error=0.6, measured_valid=True, phase=LANDED) == TerminationReason.MEASURED_PERFORMANCE
    assert term(measured_error=0.6, measured_valid=False, phase=LANDED) == TerminationReason.NONE
    assert term(decel_peak=200.0, phase=LANDED) == TerminationReason.EXCESSIVE_DECELERATION
    assert term(drift=0.5) == TerminationReason.DRIFTED_WITHOUT_JUMP
    assert term(drift=0.5, phase=FLIGHT) == TerminationReason.NONE
    # first criterion wins when several trigger
    assert term(time_in_stance=3.0, base_z=0.05) == TerminationReason.NO_JUMP_TIMEOUT


def test_config_and_command_validation():
    bad = RewardConfig(sigma={k: v for k, v in DEFAULT_SIGMA.items() if k != "sigma_7"})
    assert "rewards.sigma.sigma_7: missing" in bad.validation_errors()
    assert RewardConfig(sigma={**DEFAULT_SIGMA, "sigma_3": -1.0}).validation_errors()
    assert JumpCommand(VERTICAL, h_star=0.0).validation_errors()
    assert not JumpCommand(VERTICAL, h_star=0.5).validation_errors()
    assert JumpCommand(HORIZONTAL, p_star=(np.inf, 0.0)).validation_errors()
    assert JumpCommand("sideways").validation_errors()
