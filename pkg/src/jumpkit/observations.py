"""Observation vectors, observation noise, domain randomization and action latency.

Planar reduction: body linear velocity is (v_x, v_z), body angular velocity
is the pitch rate, projected gravity is the unit down vector in the body
frame, and the horizontal tracking error is the x-error (yaw is identity).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, fields
import math

import numpy as np

from .sim import SimState

DEG = math.pi / 180.0
GRAVITY = 9.81

WALKING = "walking"
VERTICAL_JUMP = "vertical"
HORIZONTAL_JUMP = "horizontal"

_TAIL = [("base_lin_vel", 2), ("base_ang_vel", 1), ("projected_gravity", 2)]
_JOINTS = [("joint_pos_rel", 4), ("joint_vel", 4), ("prev_action", 4)]

LAYOUTS = {
    WALKING: _TAIL + [("command", 3)] + _JOINTS,
    VERTICAL_JUMP: [("h_star", 1), ("jump_command", 1), ("base_height", 1)] + _TAIL + _JOINTS,
    HORIZONTAL_JUMP: [("tracking_error", 1), ("base_height", 1)] + _TAIL + _JOINTS,
}


@dataclass(frozen=True)
class ObservationSpec:
    mode: str
    layout: tuple

    @classmethod
    def for_mode(cls, mode: str) -> "ObservationSpec":
        if mode not in LAYOUTS:
            raise ValueError(f"unknown observation mode {mode!r}")
        return cls(mode=mode, layout=tuple(LAYOUTS[mode]))

    @property
    def dim(self) -> int:
        return sum(d for _, d in self.layout)

    def slices(self) -> dict:
        out, i = {}, 0
        for name, d in self.layout:
            out[name] = slice(i, i + d)
            i += d
        return out


@dataclass(frozen=True)
class NoiseConfig:
    """Standard deviations in physical units; joint velocity noise is in deg/s."""

    lin_vel: float = 0.1
    ang_vel: float = 0.1
    gravity: float = 0.5        # m/s^2, applied to the unit vector as gravity / g
    joint_pos_deg: float = 3.0
    joint_vel_deg: float = 10.0
    enabled: bool = True

    def segment_std(self) -> dict:
        if not self.enabled:
            return {}
        return {
            "base_lin_vel": self.lin_vel,
            "base_ang_vel": self.ang_vel,
            "projected_gravity": self.gravity / GRAVITY,
            "joint_pos_rel": self.joint_pos_deg * DEG,
            "joint_vel": self.joint_vel_deg * DEG,
        }


def body_velocity(state: SimState):
    c, s = np.cos(state.pitch), np.sin(state.pitch)
    vx, vz = state.vel[:, 0], state.vel[:, 1]
    return np.stack([c * vx + s * vz, -s * vx + c * vz], -1)


def projected_gravity(pitch):
    """Unit world-down vector expressed in the body frame."""
    return np.stack([-np.sin(pitch), -np.cos(pitch)], -1)


def build_observation(mode: str, state: SimState, cmd, prev_action, noise: NoiseConfig | None = None,
                      rng: np.random.Generator | None = None, joint_default=None, command_vec=None,
                      positions=None) -> np.ndarray:
    """Observation matrix (N, dim) for ``mode``.

    ``cmd`` is a JumpCommand for the jump modes; walking reads ``command_vec``
    (N, 3). ``positions`` optionally overrides the base position used for the
    tracking error (e.g. the start-relative frame).
    """
    spec = ObservationSpec.for_mode(mode)
    n = state.n
    parts = {}
    parts["base_lin_vel"] = body_velocity(state)
    parts["base_ang_vel"] = state.pitch_rate[:, None]
    parts["projected_gravity"] = projected_gravity(state.pitch)
    default = np.zeros(4) if joint_default is None else np.asarray(joint_default, float)
    parts["joint_pos_rel"] = state.q - default
    parts["joint_vel"] = state.qd
    parts["prev_action"] = np.broadcast_to(np.asarray(prev_action, float), (n, 4))
    pos = state.pos if positions is None else positions
    if mode == VERTICAL_JUMP:
        parts["h_star"] = np.broadcast_to(np.asarray(cmd.h_star, float), (n,))[:, None]
        parts["jump_command"] = np.broadcast_to(np.asarray(cmd.c, float), (n,))[:, None]
        parts["base_height"] = pos[:, 1:2]
    elif mode == HORIZONTAL_JUMP:
        p_star = np.broadcast_to(np.asarray(cmd.p_star, float), (n, 2))
        parts["tracking_error"] = (p_star[:, 0] - pos[:, 0])[:, None]
        parts["base_height"] = pos[:, 1:2]
    else:
        parts["command"] = np.broadcast_to(np.asarray(command_vec, float), (n, 3))
    obs = np.concatenate([parts[name] for name, _ in spec.layout], axis=-1)
    if noise is not None and noise.enabled:
        if rng is None:
            raise ValueError("noise requires an rng")
        sl = spec.slices()
        for name, std in noise.segment_std().items():
            s = sl[name]
            obs[:, s] += rng.normal(0.0, std, (n, s.stop - s.start))
    return obs


@dataclass(frozen=True)
class RandomizationRanges:
    """One interval per randomized quantity; scale rows are multiplicative."""

    static_friction: tuple
    dynamic_friction: tuple
    base_mass_delta: tuple       # kg, added
    link_mass_scale: tuple       # legs are massless: scales the base pitch inertia
    com_shift: tuple             # m, body x
    actuator_gain_scale: tuple   # kp and kd
    no_load_speed_scale: tuple
    cutoff_speed_scale: tuple
    motor_friction: tuple        # N m s / rad
    armature_scale: tuple
    joint_offset_deg: tuple
    latency_ms: tuple
    external_force: tuple        # N, per axis
    external_torque: tuple       # N m

    def validation_errors(self) -> list[str]:
        return [f"randomization.{f.name}: low > high" for f in fields(self)
                if getattr(self, f.name)[0] > getattr(self, f.name)[1]]

    @classmethod
    def off(cls, nominal) -> "RandomizationRanges":
        """Zero-width ranges at the nominal values (randomization disabled)."""
        out = {}
        for f in fields(cls):
            if f.name.endswith("_scale"):
                out[f.name] = (1.0, 1.0)
            else:
                out[f.name] = (0.0, 0.0)
        out["static_friction"] = (nominal.mu_static,) * 2
        out["dynamic_friction"] = (nominal.mu_dynamic,) * 2
        out["motor_friction"] = (nominal.viscous_friction,) * 2
        return cls(**out)


PROFILES = {
    WALKING: RandomizationRanges(
        static_friction=(0.8, 0.95), dynamic_friction=(0.7, 0.8), base_mass_delta=(-1.0, 2.0),
        link_mass_scale=(0.8, 1.2), com_shift=(-0.03, 0.03), actuator_gain_scale=(0.6, 1.4),
        no_load_speed_scale=(0.6, 1.2), cutoff_speed_scale=(0.6, 1.4), motor_friction=(0.0, 0.04),
        armature_scale=(0.6, 1.4), joint_offset_deg=(-2.0, 2.0), latency_ms=(0.0, 32.0),
        external_force=(-10.0, 10.0), external_torque=(-3.0, 3.0),
    ),
    "jumping": RandomizationRanges(
        static_friction=(0.9, 1.2), dynamic_friction=(0.8, 0.9), base_mass_delta=(-1.0, 2.0),
        link_mass_scale=(0.8, 1.2), com_shift=(-0.03, 0.03), actuator_gain_scale=(0.6, 1.4),
        no_load_speed_scale=(0.8, 1.2), cutoff_speed_scale=(0.8, 1.4), motor_friction=(0.005, 0.04),
        armature_scale=(0.6, 1.4), joint_offset_deg=(-2.0, 2.0), latency_ms=(0.0, 16.0),
        external_force=(-5.0, 5.0), external_torque=(-3.0, 3.0),
    ),
}

# randomized parameter each range row drives (coverage is checked by the tests)
ROW_TARGETS = {
    "static_friction": "mu_s", "dynamic_friction": "mu_d", "base_mass_delta": "mass", "link_mass_scale": "inertia",
    "com_shift": "com_shift", "actuator_gain_scale": "kp,kd", "no_load_speed_scale": "no_load",
    "cutoff_speed_scale": "cutoff", "motor_friction": "visc", "armature_scale": "armature",
    "joint_offset_deg": "joint_offset", "latency_ms": "delay_steps", "external_force": "ext_f",
    "external_torque": "ext_tau",
}


@dataclass
class EpisodeDomain:
    """Per-environment sampled parameters (arrays of length N)."""

    mu_s: np.ndarray
    mu_d: np.ndarray
    mass: np.ndarray
    inertia: np.ndarray
    com_shift: np.ndarray
    kp: np.ndarray
    kd: np.ndarray
    no_load: np.ndarray
    cutoff: np.ndarray
    visc: np.ndarray
    armature: np.ndarray
    joint_offset: np.ndarray
    latency: np.ndarray
    delay_steps: np.ndarray
    ext_f: np.ndarray
    ext_tau: np.ndarray


def _u(rng, interval, n, size=None):
    lo, hi = interval
    shape = (n,) if size is None else (n, size)
    if hi == lo:
        return np.full(shape, float(lo))
    return rng.uniform(lo, hi, shape)


def sample_external(ranges: RandomizationRanges, rng: np.random.Generator, n: int):
    return _u(rng, ranges.external_force, n, 2), _u(rng, ranges.external_torque, n)


def randomize_domain(nominal, ranges: RandomizationRanges, rng: np.random.Generator, n: int,
                     control_dt: float = 1.0 / 60.0) -> EpisodeDomain:
    """Sample every row of ``ranges`` uniformly for ``n`` environments.

    ``nominal`` provides mass, pitch_inertia, mu_static, mu_dynamic, kp, kd,
    no_load_speed, cutoff_speed, viscous_friction and armature (attribute
    access). Friction and motor-friction rows are absolute values.
    """
    mu_s = _u(rng, ranges.static_friction, n)
    mu_d = np.minimum(_u(rng, ranges.dynamic_friction, n), mu_s)
    gain = _u(rng, ranges.actuator_gain_scale, n)
    no_load = nominal.no_load_speed * _u(rng, ranges.no_load_speed_scale, n)
    # the torque-speed curve needs cutoff < no-load speed
    cutoff = np.minimum(nominal.cutoff_speed * _u(rng, ranges.cutoff_speed_scale, n), 0.95 * no_load)
    latency = _u(rng, ranges.latency_ms, n) * 1e-3
    ext_f, ext_tau = sample_external(ranges, rng, n)
    return EpisodeDomain(
        mu_s=mu_s,
        mu_d=mu_d,
        mass=nominal.mass + _u(rng, ranges.base_mass_delta, n),
        inertia=nominal.pitch_inertia * _u(rng, ranges.link_mass_scale, n),
        com_shift=_u(rng, ranges.com_shift, n),
        kp=nominal.kp * gain,
        kd=nominal.kd * gain,
        no_load=no_load,
        cutoff=cutoff,
        visc=_u(rng, ranges.motor_friction, n),
        armature=nominal.armature * _u(rng, ranges.armature_scale, n),
        joint_offset=_u(rng, ranges.joint_offset_deg, n, 4) * DEG,
        latency=latency,
        delay_steps=latency_steps(latency, control_dt),
        ext_f=ext_f,
        ext_tau=ext_tau,
    )


def latency_steps(latency, control_dt):
    """Whole control periods of delay covering ``latency`` (ceil, with a float guard)."""
    return np.ceil(np.asarray(latency, float) / control_dt - 1e-9).astype(np.int64).clip(min=0)


def apply_latency(actions, delay: int, zero=None) -> np.ndarray:
    """FIFO-delay an action stream (T, ...) by ``delay`` steps; leading slots hold the zero action."""
    a = np.asarray(actions, float)
    if delay < 0:
        raise ValueError("delay must be >= 0")
    if delay == 0:
        return a.copy()
    fill = np.zeros_like(a[:1]) if zero is None else np.broadcast_to(zero, a[:1].shape)
    buf = deque([fill[0]] * delay)
    out = np.empty_like(a)
    for t in range(a.shape[0]):
        buf.append(a[t])
        out[t] = buf.popleft()
    return out


@dataclass
class ActionDelay:
    """Per-environment action FIFO used inside the batched environment."""

    max_delay: int
    n: int
    dim: int
    buf: np.ndarray = field(init=False)

    def __post_init__(self):
        self.buf = np.zeros((self.max_delay + 1, self.n, self.dim))

    def reset(self, idx, value=0.0) -> None:
        self.buf[:, idx] = value

    def push(self, actions, delay_steps) -> np.ndarray:
        """Insert this step's actions and return what each env executes now."""
        self.buf = np.roll(self.buf, 1, axis=0)
        self.buf[0] = actions
        d = np.clip(np.asarray(delay_steps), 0, self.max_delay)
        return self.buf[d, np.arange(self.n)]
