"""Batched control-period stepping on top of the compiled kernel.

``BatchSim`` owns a ``SimState`` plus per-environment physical parameters and
advances whole control periods (filter + PD at the PD rate, physics at the
physics rate) in one call. ``reference_control_step`` runs the same chain with
the pure-numpy functions and is used to cross-check the kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .actuation import ActuatorParams, FilterParams, pd_torque, predictive_filter
from .geometry import LegGeometry
from .sim import (N_JOINTS, N_LEGS, TAKEOFF_DEBOUNCE, SimParams, SimState, step, update_jump_phase)


@dataclass
class Rates:
    physics_dt: float = 0.001
    pd_hz: float = 500.0
    policy_hz: float = 60.0

    def validation_errors(self) -> list[str]:
        errors = []
        if not 0 < self.physics_dt <= 0.005:
            errors.append("physics_dt: must be in (0, 0.005]")
        if not self.pd_hz > 0 or not self.policy_hz > 0:
            errors.append("pd_hz/policy_hz: must be > 0")
        elif self.policy_hz > self.pd_hz or self.pd_hz > 1.0 / self.physics_dt + 1e-9:
            errors.append("policy_hz: need policy_hz <= pd_hz <= physics rate")
        return errors

    @property
    def pd_every(self) -> int:
        return max(1, int(round(1.0 / (self.pd_hz * self.physics_dt))))

    @property
    def control_dt(self) -> float:
        return 1.0 / self.policy_hz

    def substeps(self, control_index: int) -> int:
        """Physics steps in control period ``control_index``; 1000/60 alternates 16 and 17."""
        per = 1.0 / (self.policy_hz * self.physics_dt)
        return int(round((control_index + 1) * per)) - int(round(control_index * per))


@dataclass
class EnvParams:
    """Per-environment physical and actuator parameters (arrays of length N)."""

    mass: np.ndarray
    inertia: np.ndarray
    k_n: np.ndarray
    c_n: np.ndarray
    mu_s: np.ndarray
    mu_d: np.ndarray
    k_t: np.ndarray
    c_t: np.ndarray
    armature: np.ndarray
    com_shift: np.ndarray
    ext_f: np.ndarray         # (N, 2)
    ext_tau: np.ndarray
    ground_h: np.ndarray
    kp: np.ndarray
    kd: np.ndarray
    peak: np.ndarray
    no_load: np.ndarray
    cutoff: np.ndarray
    visc: np.ndarray
    joint_offset: np.ndarray  # (N, 4) encoder offset seen by the PD loop

    @classmethod
    def nominal(cls, n: int, sim: SimParams, act: ActuatorParams) -> "EnvParams":
        full = lambda v: np.full(n, float(v))
        return cls(
            mass=full(sim.mass), inertia=full(sim.pitch_inertia), k_n=full(sim.stiffness), c_n=full(sim.damping),
            mu_s=full(sim.mu_static), mu_d=full(sim.mu_dynamic), k_t=full(sim.tangential_stiffness),
            c_t=full(sim.tangential_damping), armature=full(act.armature), com_shift=full(0.0),
            ext_f=np.zeros((n, 2)), ext_tau=full(0.0), ground_h=full(0.0), kp=full(act.kp), kd=full(act.kd),
            peak=full(act.peak_torque), no_load=full(act.no_load_speed), cutoff=full(act.cutoff_speed),
            visc=full(act.viscous_friction), joint_offset=np.zeros((n, N_JOINTS)),
        )

    def put(self, idx, other: "EnvParams") -> None:
        for k, v in vars(other).items():
            getattr(self, k)[idx] = v

    def sim_params(self, base: SimParams) -> SimParams:
        return base.with_(mass=self.mass, pitch_inertia=self.inertia, stiffness=self.k_n, damping=self.c_n,
                          mu_static=self.mu_s, mu_dynamic=self.mu_d, tangential_stiffness=self.k_t,
                          tangential_damping=self.c_t, armature=self.armature, com_shift=self.com_shift,
                          ext_force=self.ext_f, ext_torque=self.ext_tau, ground_height=self.ground_h)


@dataclass
class BatchSim:
    state: SimState
    params: EnvParams
    sim: SimParams = field(default_factory=SimParams)
    filt: FilterParams = field(default_factory=FilterParams)
    rates: Rates = field(default_factory=Rates)
    landing_window: float = 0.3

    def __post_init__(self):
        n = self.state.n
        self.safe = np.zeros((n, N_JOINTS))
        self.tau = np.zeros((n, N_JOINTS))
        self.tau_hold = np.zeros((n, N_JOINTS))
        self.decel_peak = np.zeros(n)
        self.touched = np.zeros(n, dtype=bool)
        self.alive = np.ones(n, dtype=bool)
        self.control_index = 0
        self.physics_steps = 0

    def reset_envs(self, idx, state: SimState) -> None:
        self.state.put(idx, state)
        self.tau_hold[idx] = 0.0
        self.tau[idx] = 0.0
        self.decel_peak[idx] = 0.0
        self.touched[idx] = False
        self.alive[idx] = True

    def control_step(self, targets) -> np.ndarray:
        """Advance one control period with joint targets (N, 4); returns the physics steps taken."""
        s = self.state
        p = self.params
        g: LegGeometry = self.sim.geometry
        lo, hi = g.transversal_limits
        n_sub = self.rates.substeps(self.control_index)
        targets = np.ascontiguousarray(targets, dtype=float)
        _kernels.advance(
            n_sub, self.physics_steps, self.rates.pd_every, self.rates.physics_dt,
            s.time, s.pos, s.pitch, s.vel, s.pitch_rate, s.q, s.qd, s.passive, s.contact, s.ground_force,
            s.anchor, s.accel, s.phase, s.phase_entry_time, s.airborne_steps, s.max_height, s.apex_reached,
            s.takeoff_pos, s.takeoff_vel,
            targets, self.safe, self.tau, self.tau_hold, self.decel_peak, self.touched,
            p.mass, p.inertia, p.k_n, p.c_n, p.mu_s, p.mu_d, p.k_t, p.c_t, p.armature, p.com_shift, p.ext_f,
            p.ext_tau, p.ground_h, p.kp, p.kd, p.peak, p.no_load, p.cutoff, p.visc, p.joint_offset,
            g.thigh_length, g.shank_length, g.hip_axis_offset, g.paw_offset,
            np.asarray(g.hip_positions, float), np.tile(lo, N_LEGS), np.tile(hi, N_LEGS),
            float(self.filt.sum_bounds[0]), float(self.filt.sum_bounds[1]),
            self.filt.prediction_horizon, self.filt.max_overshoot, self.filt.brake_time,
            self.filt.min_approach_speed, self.sim.gravity, self.sim.leg_multiplicity,
            self.sim.limit_stiffness, self.sim.limit_damping, TAKEOFF_DEBOUNCE, self.sim.blowup_speed,
            self.landing_window, self.alive,
        )
        self.control_index += 1
        self.physics_steps += n_sub
        return n_sub


def reference_control_step(state: SimState, targets, params: EnvParams, sim: SimParams, filt: FilterParams,
                           act: ActuatorParams, rates: Rates, n_sub: int, step0: int = 0, tau_hold=None):
    """Pure-numpy equivalent of one ``BatchSim.control_step`` (no decel tracking)."""
    sp = params.sim_params(sim)
    lo, hi = sim.geometry.transversal_limits
    lo_v = np.tile(lo, N_LEGS)
    hi_v = np.tile(hi, N_LEGS)
    act = ActuatorParams(peak_torque=act.peak_torque, no_load_speed=act.no_load_speed,
                         cutoff_speed=act.cutoff_speed, viscous_friction=act.viscous_friction,
                         armature=act.armature)
    tau = np.zeros_like(state.q) if tau_hold is None else tau_hold
    safe = None
    for k in range(n_sub):
        if (step0 + k) % rates.pd_every == 0:
            qm = state.q + params.joint_offset
            safe = predictive_filter(targets, qm, state.qd, lo_v, hi_v, filt)
            tau = pd_torque(safe, qm, state.qd, act, kp=params.kp[:, None], kd=params.kd[:, None])
        state = step(state, tau, rates.physics_dt, sp)
        state = update_jump_phase(state)
    return state, safe, tau
