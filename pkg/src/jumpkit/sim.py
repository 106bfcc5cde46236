"""Sagittal-plane jumper simulation.

The body is a single rigid base (x, z, pitch); the two sagittal legs are
massless five-bar linkages that transmit paw contact forces to the base and to
the motors. Each sagittal leg stands in for a left/right pair, so its motors see
half the leg's ground load. Motor rotor inertia (armature) is the only joint
inertia.

Everything is batched over a leading environment axis. Pitch is positive
nose-up; the body-to-world rotation is ``[[c, -s], [s, c]]`` on (x, z).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from enum import IntEnum

import numpy as np

from .actuation import ActuatorParams
from .geometry import LegGeometry, _angle_of, _close, wrap_angle

N_LEGS = 2
N_JOINTS = 4
# consecutive airborne physics steps before a takeoff is accepted
TAKEOFF_DEBOUNCE = 2
# base below this height counts as a body collision
COLLISION_HEIGHT = 0.12


class JumpPhase(IntEnum):
    STANCE = 0
    IN_FLIGHT = 1
    LANDED = 2


class NumericalBlowup(RuntimeError):
    pass


class NoJump(ValueError):
    pass


@dataclass(frozen=True)
class BodyParams:
    mass: float = 14.5
    pitch_inertia: float = 0.35
    body_length: float = 0.67
    nominal_height: float = 0.35
    gravity: float = 9.81

    def validation_errors(self) -> list[str]:
        errors = []
        if not self.mass > 0:
            errors.append("mass must be > 0")
        if not self.pitch_inertia > 0:
            errors.append("pitch_inertia must be > 0")
        if not self.gravity > 0:
            errors.append("gravity must be > 0")
        return errors


@dataclass(frozen=True)
class ContactParams:
    stiffness: float = 2.0e4
    damping: float = 300.0
    mu_static: float = 1.0
    mu_dynamic: float = 0.85
    tangential_stiffness: float = 2.0e4
    tangential_damping: float = 300.0

    def validation_errors(self) -> list[str]:
        errors = []
        if not (self.stiffness > 0 and self.damping > 0):
            errors.append("contact stiffness and damping must be > 0")
        if not 0 < self.mu_dynamic <= self.mu_static:
            errors.append("need 0 < mu_dynamic <= mu_static")
        return errors


@dataclass(frozen=True)
class SimParams:
    """Flat parameter set read by ``step``. Any numeric field may be a per-env array."""

    geometry: LegGeometry = field(default_factory=LegGeometry)
    mass: object = 14.5
    pitch_inertia: object = 0.35
    gravity: float = 9.81
    stiffness: object = 2.0e4
    damping: object = 300.0
    mu_static: object = 1.0
    mu_dynamic: object = 0.85
    tangential_stiffness: object = 2.0e4
    tangential_damping: object = 300.0
    armature: object = 0.02
    leg_multiplicity: float = 2.0
    limit_stiffness: float = 400.0
    limit_damping: float = 4.0
    com_shift: object = 0.0
    ext_force: object = 0.0      # (..., 2) world-frame wrench on the base
    ext_torque: object = 0.0
    ground_height: object = 0.0
    blowup_speed: float = 100.0

    @classmethod
    def from_parts(cls, geometry=None, body=None, contact=None, actuator=None, **kw):
        geometry = geometry or LegGeometry()
        body = body or BodyParams()
        contact = contact or ContactParams()
        actuator = actuator or ActuatorParams()
        return cls(
            geometry=geometry, mass=body.mass, pitch_inertia=body.pitch_inertia, gravity=body.gravity,
            stiffness=contact.stiffness, damping=contact.damping, mu_static=contact.mu_static,
            mu_dynamic=contact.mu_dynamic, tangential_stiffness=contact.tangential_stiffness,
            tangential_damping=contact.tangential_damping, armature=actuator.armature, **kw,
        )

    def with_(self, **kw) -> "SimParams":
        return replace(self, **kw)

    def take(self, idx) -> "SimParams":
        """Per-env fields restricted to ``idx``."""
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray) and v.ndim >= 1:
                out[f.name] = v[idx]
        return replace(self, **out)


@dataclass
class SimState:
    time: np.ndarray
    pos: np.ndarray            # (N, 2) base x, z
    pitch: np.ndarray          # (N,)
    vel: np.ndarray            # (N, 2)
    pitch_rate: np.ndarray     # (N,)
    q: np.ndarray              # (N, 4) front_it, front_ot, back_it, back_ot
    qd: np.ndarray             # (N, 4)
    passive: np.ndarray        # (N, 4) front_ik, front_ok, back_ik, back_ok
    contact: np.ndarray        # (N, 2) bool per paw
    ground_force: np.ndarray   # (N, 2, 2) world-frame force on each paw
    anchor: np.ndarray         # (N, 2) stick anchor x per paw, nan when free
    accel: np.ndarray          # (N, 2) last base linear acceleration
    phase: np.ndarray          # (N,) JumpPhase
    phase_entry_time: np.ndarray
    airborne_steps: np.ndarray
    max_height: np.ndarray
    apex_reached: np.ndarray
    takeoff_pos: np.ndarray
    takeoff_vel: np.ndarray

    @property
    def n(self) -> int:
        return self.pos.shape[0]

    def copy(self) -> "SimState":
        return SimState(**{f.name: np.array(getattr(self, f.name), copy=True) for f in fields(self)})

    def take(self, idx) -> "SimState":
        return SimState(**{f.name: np.array(getattr(self, f.name)[idx], copy=True) for f in fields(self)})

    def put(self, idx, other: "SimState") -> None:
        for f in fields(self):
            getattr(self, f.name)[idx] = getattr(other, f.name)


def make_state(pos, pitch, vel, pitch_rate, q, qd=None, time=0.0, phase=JumpPhase.STANCE,
               geometry: LegGeometry | None = None) -> SimState:
    """Build a batched state; passive joints are closed from q."""
    pos = np.atleast_2d(np.asarray(pos, float))
    n = pos.shape[0]
    geometry = geometry or LegGeometry()
    q = np.broadcast_to(np.asarray(q, float), (n, N_JOINTS)).copy()
    qd = np.zeros((n, N_JOINTS)) if qd is None else np.broadcast_to(np.asarray(qd, float), (n, N_JOINTS)).copy()
    vel = np.broadcast_to(np.asarray(vel, float), (n, 2)).copy()
    phase_arr = np.broadcast_to(np.asarray(phase, dtype=np.int64), (n,)).copy()
    t = np.broadcast_to(np.asarray(time, float), (n,)).copy()
    state = SimState(
        time=t,
        pos=pos.copy(),
        pitch=np.broadcast_to(np.asarray(pitch, float), (n,)).copy(),
        vel=vel,
        pitch_rate=np.broadcast_to(np.asarray(pitch_rate, float), (n,)).copy(),
        q=q,
        qd=qd,
        passive=passive_angles(geometry, q),
        contact=np.zeros((n, N_LEGS), dtype=bool),
        ground_force=np.zeros((n, N_LEGS, 2)),
        anchor=np.full((n, N_LEGS), np.nan),
        accel=np.zeros((n, 2)),
        phase=phase_arr,
        phase_entry_time=t.copy(),
        airborne_steps=np.zeros(n, dtype=np.int64),
        max_height=pos[:, 1].copy(),
        apex_reached=np.zeros(n, dtype=bool),
        takeoff_pos=pos.copy(),
        takeoff_vel=vel.copy(),
    )
    in_flight = phase_arr == JumpPhase.IN_FLIGHT
    state.apex_reached[in_flight] = vel[in_flight, 1] <= 0.0
    return state


def passive_angles(geometry: LegGeometry, q) -> np.ndarray:
    out = np.empty(np.shape(q))
    for leg in range(N_LEGS):
        a, b = q[..., 2 * leg], q[..., 2 * leg + 1]
        knee_i, knee_o, ankle, _ = _close(geometry, a, b)
        out[..., 2 * leg] = wrap_angle(_angle_of(ankle - knee_i) - a)
        out[..., 2 * leg + 1] = wrap_angle(-_angle_of(ankle - knee_o) - b)
    return out


def rotation(pitch) -> np.ndarray:
    c, s = np.cos(pitch), np.sin(pitch)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def leg_kinematics(params: SimParams, state: SimState):
    """Body-frame paw positions (N, L, 2), jacobians (N, L, 2, 2), passive angles (N, 4)."""
    g = params.geometry
    hips = np.asarray(g.hip_positions, float)
    shift = np.asarray(params.com_shift, float)
    offset = np.stack([shift, np.zeros_like(shift)], -1)
    paws, jacs = [], []
    passive = np.empty_like(state.q)
    for leg in range(N_LEGS):
        a, b = state.q[:, 2 * leg], state.q[:, 2 * leg + 1]
        knee_i, knee_o, ankle, _, d_ankle = _close(g, a, b, with_jacobian=True)
        passive[:, 2 * leg] = wrap_angle(_angle_of(ankle - knee_i) - a)
        passive[:, 2 * leg + 1] = wrap_angle(-_angle_of(ankle - knee_o) - b)
        if g.paw_offset:
            k = g.paw_offset / g.shank_length
            d_knee_o = np.zeros_like(d_ankle)
            d_knee_o[:, :, 1] = -g.thigh_length * np.stack([np.cos(-b), np.sin(-b)], -1)
            ankle = ankle + k * (ankle - knee_o)
            d_ankle = (1.0 + k) * d_ankle - k * d_knee_o
        paws.append(ankle + hips[leg] - offset)
        jacs.append(d_ankle)
    return np.stack(paws, 1), np.stack(jacs, 1), passive


def paw_world(params: SimParams, state: SimState):
    """World paw positions and velocities, (N, L, 2) each."""
    paw_b, jac, _ = leg_kinematics(params, state)
    return _paw_world(state, paw_b, jac)


def _paw_world(state, paw_b, jac):
    R = rotation(state.pitch)                                   # (N, 2, 2)
    r = np.einsum("nij,nlj->nli", R, paw_b)                      # world offset from CoM
    qd = state.qd.reshape(-1, N_LEGS, 2)
    v_rel_b = np.einsum("nlij,nlj->nli", jac, qd)
    v_rel = np.einsum("nij,nlj->nli", R, v_rel_b)
    w = state.pitch_rate[:, None]
    omega_cross = np.stack([-w * r[..., 1], w * r[..., 0]], -1)
    pos = state.pos[:, None, :] + r
    vel = state.vel[:, None, :] + omega_cross + v_rel
    return pos, vel, r, R


def contact_forces(params: SimParams, paw_pos, paw_vel, anchor):
    """Penalty normal force plus stick/slip Coulomb friction.

    Returns (force (N, L, 2), contact (N, L), new_anchor (N, L)).
    """
    ground = np.asarray(params.ground_height, float)
    ground = ground[:, None] if ground.ndim else ground
    pen = ground - paw_pos[..., 1]
    contact = pen > 0.0
    k = _col(params.stiffness)
    c = _col(params.damping)
    fn = np.where(contact, np.maximum(k * pen - c * paw_vel[..., 1], 0.0), 0.0)

    x = paw_pos[..., 0]
    vx = paw_vel[..., 0]
    anchor = np.where(contact, np.where(np.isnan(anchor), x, anchor), np.nan)
    kt = _col(params.tangential_stiffness)
    ct = _col(params.tangential_damping)
    ft_trial = np.where(contact, -kt * (x - anchor) - ct * vx, 0.0)
    mu_s = _col(params.mu_static)
    mu_d = _col(params.mu_dynamic)
    stick = np.abs(ft_trial) <= mu_s * fn
    direction = np.where(vx != 0.0, -np.sign(vx), np.sign(ft_trial))
    ft = np.where(stick, ft_trial, mu_d * fn * direction)
    # slipping paws drag their anchor along
    anchor = np.where(contact & ~stick, x, anchor)
    return np.stack([ft, fn], -1), contact, anchor


def _col(v):
    v = np.asarray(v, float)
    return v[:, None] if v.ndim == 1 else v


def step(state: SimState, torques, dt: float, params: SimParams, check: bool = True) -> SimState:
    """Advance one physics step.

    Non-gravity forces use semi-implicit Euler; the uniform gravity term is
    integrated exactly so free flight follows the closed-form parabola.
    ``check=False`` skips the blowup exception (callers then use ``blown_up``).
    """
    if not 0.0 < dt <= 0.005:
        raise ValueError("dt must be in (0, 5 ms]")
    tau = np.asarray(torques, float)
    paw_b, jac, _ = leg_kinematics(params, state)
    paw_pos, paw_vel, r, R = _paw_world(state, paw_b, jac)
    force, contact, anchor = contact_forces(params, paw_pos, paw_vel, state.anchor)

    mass = np.asarray(params.mass, float)
    inertia = np.asarray(params.pitch_inertia, float)
    gvec = np.array([0.0, -params.gravity])
    ext_f = np.broadcast_to(np.asarray(params.ext_force, float), state.vel.shape)
    f_net = force.sum(1) + ext_f
    acc_other = f_net / (mass[:, None] if mass.ndim else mass)
    moment = (r[..., 0] * force[..., 1] - r[..., 1] * force[..., 0]).sum(1) + params.ext_torque
    alpha = moment / inertia

    # ground load on each motor: J^T R^T F, shared across the lumped legs
    f_body = np.einsum("nji,nlj->nli", R, force)
    tau_ext = np.einsum("nlji,nlj->nli", jac, f_body).reshape(-1, N_JOINTS) / params.leg_multiplicity
    lo, hi = params.geometry.transversal_limits
    lo = np.tile(lo, N_LEGS)
    hi = np.tile(hi, N_LEGS)
    over = np.maximum(state.q - hi, 0.0)
    under = np.maximum(lo - state.q, 0.0)
    beyond = (over > 0) | (under > 0)
    tau_lim = params.limit_stiffness * (under - over) - np.where(beyond, params.limit_damping * state.qd, 0.0)
    arm = _col(params.armature)
    qdd = (tau + tau_ext + tau_lim) / arm

    vel = state.vel + (acc_other + gvec) * dt
    pos = state.pos + (vel - 0.5 * gvec * dt) * dt
    pitch_rate = state.pitch_rate + alpha * dt
    pitch = state.pitch + pitch_rate * dt
    qd = state.qd + qdd * dt
    q = state.q + qd * dt

    new = SimState(
        time=state.time + dt, pos=pos, pitch=pitch, vel=vel, pitch_rate=pitch_rate, q=q, qd=qd,
        passive=state.passive, contact=contact, ground_force=force, anchor=anchor,
        accel=(vel - state.vel) / dt, phase=state.phase, phase_entry_time=state.phase_entry_time,
        airborne_steps=state.airborne_steps, max_height=state.max_height, apex_reached=state.apex_reached,
        takeoff_pos=state.takeoff_pos, takeoff_vel=state.takeoff_vel,
    )
    new.passive = passive_angles(params.geometry, q)
    if check and blown_up(new, params).any():
        raise NumericalBlowup("state exceeded sane bounds")
    return new


def blown_up(state: SimState, params: SimParams) -> np.ndarray:
    speed = np.maximum(np.abs(state.vel).max(-1), np.abs(state.pitch_rate))
    bad = ~np.isfinite(state.pos).all(-1) | ~np.isfinite(state.q).all(-1) | ~np.isfinite(state.qd).all(-1)
    return bad | (speed > params.blowup_speed) | (np.abs(state.qd).max(-1) > 10 * params.blowup_speed)


def update_jump_phase(state: SimState) -> SimState:
    """Stance -> InFlight after TAKEOFF_DEBOUNCE airborne steps; InFlight -> Landed on touch.

    Mutates and returns ``state``. Takeoff position/velocity are captured at the
    Stance -> InFlight edge; the apex flag latches on the first descending
    in-flight step.
    """
    airborne = ~state.contact.any(-1)
    state.airborne_steps = np.where(airborne, state.airborne_steps + 1, 0)
    stance = state.phase == JumpPhase.STANCE
    flight = state.phase == JumpPhase.IN_FLIGHT

    takeoff = stance & (state.airborne_steps >= TAKEOFF_DEBOUNCE)
    touch = flight & ~airborne
    state.phase = np.where(takeoff, JumpPhase.IN_FLIGHT, np.where(touch, JumpPhase.LANDED, state.phase)).astype(np.int64)
    state.phase_entry_time = np.where(takeoff | touch, state.time, state.phase_entry_time)
    state.takeoff_pos = np.where(takeoff[:, None], state.pos, state.takeoff_pos)
    state.takeoff_vel = np.where(takeoff[:, None], state.vel, state.takeoff_vel)
    state.max_height = np.where(takeoff, state.pos[:, 1], state.max_height)

    still_flying = state.phase == JumpPhase.IN_FLIGHT
    state.max_height = np.where(still_flying, np.maximum(state.max_height, state.pos[:, 1]), state.max_height)
    state.apex_reached = np.where(takeoff, False, state.apex_reached)
    state.apex_reached = state.apex_reached | (still_flying & (state.vel[:, 1] <= 0.0))
    return state


def rearm(state: SimState, idx) -> None:
    """Landed -> Stance for environments receiving a new jump command."""
    landed = state.phase[idx] == JumpPhase.LANDED
    sel = np.asarray(idx)[landed] if np.ndim(idx) else (idx if landed else [])
    state.phase[sel] = JumpPhase.STANCE
    state.phase_entry_time[sel] = state.time[sel]
    state.apex_reached[sel] = False


@dataclass
class JumpOutcome:
    h_max: float
    landing_x: float
    decel_peak: float
    jump_executed: bool
    touchdown_time: float = float("nan")


def measure_episode(history, settle_time: float = 0.5, landing_window: float = 0.3) -> JumpOutcome:
    """Summarize one environment's recorded trajectory.

    ``history`` maps 'time', 'base_x', 'base_z', 'vel_x', 'vel_z', 'phase' to
    equal-length 1-D arrays. Raises NoJump if the phase never left Stance.
    """
    t = np.asarray(history["time"], float)
    phase = np.asarray(history["phase"])
    z = np.asarray(history["base_z"], float)
    x = np.asarray(history["base_x"], float)
    if not np.any(phase != JumpPhase.STANCE):
        raise NoJump("phase never left stance")
    flying = phase == JumpPhase.IN_FLIGHT
    h_max = float(z[flying].max()) if flying.any() else float("nan")
    landed_idx = np.nonzero(phase == JumpPhase.LANDED)[0]
    if landed_idx.size == 0:
        return JumpOutcome(h_max=h_max, landing_x=float("nan"), decel_peak=float("nan"), jump_executed=True)
    i0 = landed_idx[0]
    t_touch = t[i0]
    settle = np.nonzero(t >= t_touch + settle_time)[0]
    landing_x = float(x[settle[0]] if settle.size else x[-1])
    v = np.stack([history["vel_x"], history["vel_z"]], -1).astype(float)
    window = np.nonzero((t >= t_touch) & (t <= t_touch + landing_window))[0]
    decel = 0.0
    if window.size >= 1:
        lo = max(window[0] - 1, 0)
        seg_t = t[lo:window[-1] + 1]
        seg_v = v[lo:window[-1] + 1]
        if seg_t.size >= 2:
            a = np.diff(seg_v, axis=0) / np.diff(seg_t)[:, None]
            decel = float(np.linalg.norm(a, axis=-1).max())
    return JumpOutcome(h_max=h_max, landing_x=landing_x, decel_peak=decel, jump_executed=True, touchdown_time=float(t_touch))


TRAJECTORY_COLUMNS = (
    ["time", "base_x", "base_z", "pitch", "vel_x", "vel_z", "pitch_rate"]
    + [f"q{i}" for i in range(N_JOINTS)]
    + [f"qd{i}" for i in range(N_JOINTS)]
    + [f"tau{i}" for i in range(N_JOINTS)]
    + ["contact_front", "contact_back", "phase"]
)


def trajectory_row(state: SimState, torques, env: int = 0) -> list:
    tau = np.broadcast_to(np.asarray(torques, float), state.q.shape)
    return (
        [state.time[env], state.pos[env, 0], state.pos[env, 1], state.pitch[env], state.vel[env, 0],
         state.vel[env, 1], state.pitch_rate[env]]
        + list(state.q[env]) + list(state.qd[env]) + list(tau[env])
        + [int(state.contact[env, 0]), int(state.contact[env, 1]), int(state.phase[env])]
    )
