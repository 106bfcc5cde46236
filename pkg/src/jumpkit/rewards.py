"""Reward terms for walking and jumping, phase gating, and termination checks.

Every term function returns a ``RewardBreakdown`` whose raw values are arrays
over environments. Penalty terms are returned as non-negative raw values and
carry negative weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
import math

import numpy as np

from .sim import JumpPhase

DEG = math.pi / 180.0

# kernel widths; none of these are published values
DEFAULT_SIGMA = {
    "sigma_1": 0.25,   # m/s, planar velocity error
    "sigma_2": 0.25,   # rad/s, yaw-rate error
    "sigma_3": 0.5,    # rad, stand pose error
    "sigma_4": 0.1,    # rad^4, lateral-position error (argument is ||.||^4)
    "sigma_5": 0.1,    # rad^10, transversal-position error (argument is ||.||^10)
    "sigma_6": 0.1,    # m, realized apex error
    "sigma_7": 0.1,    # m
    "sigma_8": 0.1,    # m, predicted apex error
    "sigma_9": 0.1,    # m
    "sigma_10": 0.05,  # rad^2, transversal variance
    "sigma_11": 0.2,   # rad, lateral deviation
    "sigma_12": 0.25,  # m, horizontal tracking error
    "sigma_13": 0.15,  # m, predicted landing error
    "sigma_14": 0.05,  # m
    "sigma_15": 0.2,   # rad, left/right transversal mismatch
    "sigma_16": 2.0,   # rad/s, body angular speed
    "sigma_17": 0.05,  # rad^2, squared orientation error
    "sigma_18": 0.8,   # rad, desired joint position error
}

DEFAULT_WEIGHTS = {
    # regularization
    "action_clip": -0.05,
    "motor_torque": -1e-4,
    "joint_acceleration": -2.5e-7,
    "action_rate": -0.01,
    "jerk": -0.005,
    # walking
    "linear_velocity": 1.0,
    "yaw_rate": 0.5,
    "vertical_velocity": -2.0,
    "lateral_stability": -0.05,
    "flat": -1.0,
    "stand": 0.5,
    "lateral_position": 0.5,
    "transversal_position": 0.5,
    # vertical jump
    "jump_height": 10.0,
    "est_jump_height": 0.5,
    "joint_symmetry": 0.1,
    # horizontal jump
    "tracking": 1.0,
    "est_tracking": 1.0,
    "horizontal_symmetry": 0.1,
    # common jump
    "angular_velocity": 0.05,
    "orientation": 0.1,
    "desired_joint_pos": 0.1,
    "ground_force": -2e-7,
    "soft_impact": 0.05,
    "catch_landing": 0.1,
    "damp_landing": 0.1,
}


@dataclass
class RewardConfig:
    sigma: dict = field(default_factory=lambda: dict(DEFAULT_SIGMA))
    weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    a_max: float = 60.0
    landing_window: float = 0.3
    # desired transversal angles (theta_it, theta_ot) while airborne and after landing
    flight_joint_target: tuple = (55 * DEG, 55 * DEG)
    landed_joint_target: tuple = (60 * DEG, 60 * DEG)
    # walking joint targets, (theta_it, theta_ot) and lateral
    stand_joint_target: tuple = (60 * DEG, 60 * DEG)
    moving_joint_target: tuple = (55 * DEG, 55 * DEG)
    lateral_target: float = 45 * DEG
    moving_threshold: float = 0.1

    def validation_errors(self) -> list[str]:
        errors = []
        for i in range(1, 19):
            key = f"sigma_{i}"
            v = self.sigma.get(key)
            if v is None:
                errors.append(f"rewards.sigma.{key}: missing")
            elif not (isinstance(v, (int, float)) and v > 0):
                errors.append(f"rewards.sigma.{key}: must be > 0")
        if not self.landing_window > 0:
            errors.append("rewards.landing_window: must be > 0")
        if not self.a_max > 0:
            errors.append("rewards.a_max: must be > 0")
        unknown = set(self.weights) - set(DEFAULT_WEIGHTS)
        for key in sorted(unknown):
            errors.append(f"rewards.weights.{key}: unknown term")
        return errors

    def s(self, i: int) -> float:
        return float(self.sigma[f"sigma_{i}"])

    def w(self, name: str) -> float:
        return float(self.weights.get(name, DEFAULT_WEIGHTS[name]))


@dataclass
class RewardBreakdown:
    terms: dict = field(default_factory=dict)   # name -> (raw, weighted)

    def add(self, name: str, raw, weight: float) -> None:
        raw = np.asarray(raw, float)
        self.terms[name] = (raw, weight * raw)

    def merge(self, other: "RewardBreakdown") -> "RewardBreakdown":
        self.terms.update(other.terms)
        return self

    @property
    def total(self):
        if not self.terms:
            return 0.0
        return sum(w for _, w in self.terms.values())

    def raw(self, name):
        return self.terms[name][0]


def kernel_exp(x, sigma):
    """exp(-x^2 / sigma^2)."""
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    x = np.asarray(x, float)
    return np.exp(-(x * x) / (sigma * sigma))


def kernel_laplace(x, sigma):
    """exp(-|x| / sigma)."""
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    return np.exp(-np.abs(np.asarray(x, float)) / sigma)


def _norm(x):
    x = np.asarray(x, float)
    return np.sqrt(np.sum(x * x, axis=-1))


def _sq(x):
    x = np.asarray(x, float)
    return np.sum(x * x, axis=-1)


def regularization_rewards(targets, safe_targets, torques, joint_acc, actions, prev_actions, prev_torques,
                           cfg: RewardConfig) -> RewardBreakdown:
    out = RewardBreakdown()
    out.add("action_clip", _sq(np.asarray(targets) - np.asarray(safe_targets)), cfg.w("action_clip"))
    out.add("motor_torque", _sq(torques), cfg.w("motor_torque"))
    out.add("joint_acceleration", _sq(joint_acc), cfg.w("joint_acceleration"))
    out.add("action_rate", _sq(np.asarray(actions) - np.asarray(prev_actions)), cfg.w("action_rate"))
    flips = np.sign(np.asarray(torques, float)) != np.sign(np.asarray(prev_torques, float))
    out.add("jerk", np.sum(flips, axis=-1).astype(float), cfg.w("jerk"))
    return out


def walking_rewards(v_body, omega_body, gravity_body, command, theta_t, theta_l, cfg: RewardConfig) -> RewardBreakdown:
    """Velocity tracking and gait regularization.

    v_body, omega_body, gravity_body: (..., 3); command: (..., 3) as (v_x*, v_y*, w_z*);
    theta_t: (..., 8) transversal angles ordered (it, ot) per leg; theta_l: (..., 4).
    Joint targets switch between standing and moving sets on the command norm.
    """
    v = np.asarray(v_body, float)
    w = np.asarray(omega_body, float)
    g = np.asarray(gravity_body, float)
    c = np.asarray(command, float)
    theta_t = np.asarray(theta_t, float)
    theta_l = np.asarray(theta_l, float)
    moving = _norm(c) > cfg.moving_threshold
    stand_t = np.tile(np.asarray(cfg.stand_joint_target, float), theta_t.shape[-1] // 2)
    move_t = np.tile(np.asarray(cfg.moving_joint_target, float), theta_t.shape[-1] // 2)
    target_t = np.where(moving[..., None], move_t, stand_t)
    err_t = _norm(theta_t - target_t)
    err_l = _norm(theta_l - cfg.lateral_target)

    out = RewardBreakdown()
    out.add("linear_velocity", kernel_exp(_norm(v[..., :2] - c[..., :2]), cfg.s(1)), cfg.w("linear_velocity"))
    out.add("yaw_rate", kernel_exp(w[..., 2] - c[..., 2], cfg.s(2)), cfg.w("yaw_rate"))
    out.add("vertical_velocity", v[..., 2] ** 2, cfg.w("vertical_velocity"))
    out.add("lateral_stability", _sq(w[..., :2]), cfg.w("lateral_stability"))
    out.add("flat", _sq(g[..., :2]), cfg.w("flat"))
    out.add("stand", kernel_exp(err_t, cfg.s(3)), cfg.w("stand"))
    out.add("lateral_position", kernel_exp(err_t ** 4, cfg.s(4)) - 1.0, cfg.w("lateral_position"))
    out.add("transversal_position", kernel_exp(err_l ** 10, cfg.s(5)) - 1.0, cfg.w("transversal_position"))
    return out


def jump_height_score(error, cfg: RewardConfig, est: bool = False):
    s1, s2 = (cfg.s(8), cfg.s(9)) if est else (cfg.s(6), cfg.s(7))
    return kernel_exp(error, s1) + 3.0 * kernel_laplace(error, s2)


def vertical_jump_rewards(h_max, h_hat, h_star, apex_event, phase, apex_reached, theta_t, theta_l_rel,
                          cfg: RewardConfig) -> RewardBreakdown:
    """Apex reward (once per jump), predicted-apex reward (takeoff to apex), symmetry.

    apex_event: bool mask for the control step at which the apex was detected.
    theta_l_rel: lateral angles relative to their default.
    """
    phase = np.asarray(phase)
    apex_event = np.asarray(apex_event, bool)
    before_apex = (phase == JumpPhase.IN_FLIGHT) & ~np.asarray(apex_reached, bool)
    out = RewardBreakdown()
    out.add("jump_height", np.where(apex_event, jump_height_score(np.asarray(h_max) - h_star, cfg), 0.0),
            cfg.w("jump_height"))
    out.add("est_jump_height", np.where(before_apex, jump_height_score(np.asarray(h_hat) - h_star, cfg, est=True), 0.0),
            cfg.w("est_jump_height"))
    var = np.var(np.asarray(theta_t, float), axis=-1)
    sym = kernel_exp(var, cfg.s(10)) * kernel_exp(_norm(theta_l_rel), cfg.s(11))
    out.add("joint_symmetry", np.where(phase != JumpPhase.LANDED, sym, 0.0), cfg.w("joint_symmetry"))
    return out


def horizontal_jump_rewards(error, error_hat, phase, theta_left, theta_right, cfg: RewardConfig) -> RewardBreakdown:
    """error, error_hat: (..., 2) target minus (current | predicted landing) position."""
    phase = np.asarray(phase)
    flying = phase == JumpPhase.IN_FLIGHT
    e_hat = _norm(error_hat)
    out = RewardBreakdown()
    out.add("tracking", kernel_exp(_norm(error), cfg.s(12)), cfg.w("tracking"))
    est = kernel_exp(e_hat, cfg.s(13)) + 0.1 * kernel_exp(e_hat, cfg.s(14))
    out.add("est_tracking", np.where(flying, est, 0.0), cfg.w("est_tracking"))
    out.add("horizontal_symmetry", kernel_exp(_norm(np.asarray(theta_left) - np.asarray(theta_right)), cfg.s(15)),
            cfg.w("horizontal_symmetry"))
    return out


def soft_impact(a_body, v_body, a_max):
    """max(0, 1 - |min(0, a/a_max . v_hat)|); v_hat is zero below 1e-6 m/s."""
    a = np.asarray(a_body, float)
    v = np.asarray(v_body, float)
    speed = _norm(v)
    v_hat = np.where(speed[..., None] > 1e-6, v / np.maximum(speed, 1e-12)[..., None], 0.0)
    proj = np.sum(a / a_max * v_hat, axis=-1)
    return np.maximum(0.0, 1.0 - np.abs(np.minimum(0.0, proj)))


def common_jump_rewards(omega_body, pitch_error, theta_m, phase, ground_force, a_body, v_body, theta_t_dot,
                        time_since_touchdown, cfg: RewardConfig) -> RewardBreakdown:
    """Posture, joint reference (airborne and landed only), impact and landing terms.

    theta_m: (..., 2k) transversal angles ordered (it, ot) per leg.
    time_since_touchdown: seconds since the Landed transition (ignored unless Landed).
    """
    phase = np.asarray(phase)
    theta_m = np.asarray(theta_m, float)
    reps = theta_m.shape[-1] // 2
    flight_t = np.tile(np.asarray(cfg.flight_joint_target, float), reps)
    landed_t = np.tile(np.asarray(cfg.landed_joint_target, float), reps)
    flying = phase == JumpPhase.IN_FLIGHT
    landed = phase == JumpPhase.LANDED
    target = np.where(flying[..., None], flight_t, landed_t)
    joint_ref = np.where(flying | landed, kernel_exp(_norm(theta_m - target), cfg.s(18)), 0.0)
    window = landed & (np.asarray(time_since_touchdown, float) <= cfg.landing_window)
    v = np.asarray(v_body, float)

    out = RewardBreakdown()
    out.add("angular_velocity", kernel_exp(_norm(omega_body), cfg.s(16)), cfg.w("angular_velocity"))
    out.add("orientation", kernel_exp(np.asarray(pitch_error, float) ** 2, cfg.s(17)), cfg.w("orientation"))
    out.add("desired_joint_pos", joint_ref, cfg.w("desired_joint_pos"))
    f = np.asarray(ground_force, float)
    out.add("ground_force", np.sum(f.reshape(f.shape[:-2] + (-1,)) ** 2, axis=-1) if f.ndim >= 2 else f ** 2,
            cfg.w("ground_force"))
    out.add("soft_impact", soft_impact(a_body, v, cfg.a_max), cfg.w("soft_impact"))
    out.add("catch_landing", np.where(window, np.clip(-v[..., -1], 0.0, 1.0), 0.0), cfg.w("catch_landing"))
    damp = np.clip(np.mean(np.asarray(theta_t_dot, float), axis=-1), 0.0, 1.0)
    out.add("damp_landing", np.where(window, damp, 0.0), cfg.w("damp_landing"))
    return out


class TerminationReason(IntEnum):
    NONE = 0
    NO_JUMP_TIMEOUT = 1
    PREDICTED_PERFORMANCE = 2
    MEASURED_PERFORMANCE = 3
    COLLISION = 4
    EXCESSIVE_DECELERATION = 5
    DRIFTED_WITHOUT_JUMP = 6
    NUMERICAL_BLOWUP = 7


@dataclass
class TerminationLimits:
    no_jump_timeout: float = 1.5
    predicted_error: float = 0.5
    measured_error: float = 0.5
    min_base_height: float = 0.12
    max_pitch: float = 60 * DEG
    joint_crash_margin: float = 10 * DEG
    max_deceleration: float = 150.0
    drift_distance: float = 0.3

    def validation_errors(self) -> list[str]:
        bad = [k for k, v in vars(self).items() if not v > 0]
        return [f"termination.{k}: must be > 0" for k in bad]


def termination_check(*, phase, time_in_stance, predicted_error, measured_error, measured_valid, base_z, pitch,
                      joint_excess, decel_peak, drift, limits: TerminationLimits):
    """First triggered termination reason per environment (TerminationReason.NONE if none).

    predicted_error is NaN where no prediction applies; measured_valid marks
    environments whose realized outcome is known.
    """
    phase = np.asarray(phase)
    stance = phase == JumpPhase.STANCE
    checks = [
        (TerminationReason.NO_JUMP_TIMEOUT, stance & (np.asarray(time_in_stance) > limits.no_jump_timeout)),
        (TerminationReason.PREDICTED_PERFORMANCE,
         np.nan_to_num(np.asarray(predicted_error, float), nan=0.0) > limits.predicted_error),
        (TerminationReason.MEASURED_PERFORMANCE,
         np.asarray(measured_valid, bool) & (np.nan_to_num(np.asarray(measured_error, float)) > limits.measured_error)),
        (TerminationReason.COLLISION,
         (np.asarray(base_z) < limits.min_base_height) | (np.abs(np.asarray(pitch)) > limits.max_pitch)
         | (np.asarray(joint_excess) > limits.joint_crash_margin)),
        (TerminationReason.EXCESSIVE_DECELERATION, np.asarray(decel_peak) > limits.max_deceleration),
        (TerminationReason.DRIFTED_WITHOUT_JUMP, stance & (np.asarray(drift) > limits.drift_distance)),
    ]
    reason = np.zeros(np.shape(phase), dtype=np.int64)
    for code, hit in reversed(checks):
        reason = np.where(hit, int(code), reason)
    return reason


VERTICAL = "vertical"
HORIZONTAL = "horizontal"


@dataclass
class JumpCommand:
    """Jump command; fields may be scalars or per-environment arrays."""

    mode: str
    h_star: object = 0.0
    p_star: object = (0.0, 0.0)
    c: object = 1

    def validation_errors(self) -> list[str]:
        if self.mode == VERTICAL:
            return [] if np.all(np.asarray(self.h_star) > 0) else ["vertical command requires h_star > 0"]
        if self.mode == HORIZONTAL:
            return [] if np.all(np.isfinite(self.p_star)) else ["horizontal command requires finite p_star"]
        return [f"unknown mode {self.mode!r}"]
