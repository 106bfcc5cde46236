"""Vectorized jumping environment: RSI resets, randomization, rewards, terminations."""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .actuation import ACTION_PRESETS, ActionScaling, ActuatorParams, FilterParams, rescale_actions
from .ballistics import BallisticState, estimate_apex, estimate_landing_masked
from .batchsim import BatchSim, EnvParams, Rates
from .curriculum import CurriculumConfig, CurriculumState, RSIStage, sample_command, sample_initial_states, sample_stages
from .geometry import LegGeometry
from .observations import (PROFILES, ActionDelay, NoiseConfig, ObservationSpec, RandomizationRanges, build_observation,
                           randomize_domain, sample_external)
from .rewards import (HORIZONTAL, VERTICAL, JumpCommand, RewardBreakdown, RewardConfig, TerminationLimits,
                      TerminationReason, common_jump_rewards, horizontal_jump_rewards, regularization_rewards,
                      termination_check, vertical_jump_rewards)
from .sim import JumpPhase, SimParams, make_state

DEG = math.pi / 180.0


@dataclass
class EnvConfig:
    task: str = VERTICAL
    num_envs: int = 256
    episode_length: float = 3.0
    settle_time: float = 0.5
    randomize: bool = True
    profile: str = "jumping"
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    push_interval: float = 1.0
    action_preset: str = "jumping"
    success_tolerance: float = 0.1
    rates: Rates = field(default_factory=Rates)
    rewards: RewardConfig = field(default_factory=RewardConfig)
    termination: TerminationLimits = field(default_factory=TerminationLimits)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)

    def validation_errors(self) -> list[str]:
        errors = []
        if self.task not in (VERTICAL, HORIZONTAL):
            errors.append(f"env.task: must be '{VERTICAL}' or '{HORIZONTAL}'")
        if self.num_envs < 1:
            errors.append("env.num_envs: must be >= 1")
        if not self.episode_length > 0:
            errors.append("env.episode_length: must be > 0")
        if self.profile not in PROFILES:
            errors.append(f"env.profile: unknown randomization profile {self.profile!r}")
        if self.action_preset not in ACTION_PRESETS:
            errors.append(f"env.action_preset: unknown preset {self.action_preset!r}")
        errors += [f"rates.{e}" for e in self.rates.validation_errors()]
        errors += self.rewards.validation_errors()
        errors += self.termination.validation_errors()
        errors += self.curriculum.validation_errors()
        return errors


@dataclass
class EpisodeOutcome:
    stage: int
    target: float
    achieved: float
    error: float
    success: bool
    executed: bool
    reason: int
    decel_peak: float


class JumpEnv:
    """Batched environment stepping all ``num_envs`` copies per control period.

    ``step`` auto-resets finished environments and reports their outcomes in
    ``info['outcomes']``; ``info['truncated']`` marks time-limit ends whose
    pre-reset observation is in ``info['final_obs']``.
    """

    def __init__(self, config: EnvConfig, geometry: LegGeometry | None = None, sim: SimParams | None = None,
                 actuator: ActuatorParams | None = None, filt: FilterParams | None = None,
                 scaling: ActionScaling | None = None, seed: int = 0, curriculum: CurriculumState | None = None):
        self.cfg = config
        self.geometry = geometry or LegGeometry()
        self.sim_params = sim or SimParams(geometry=self.geometry)
        self.actuator = actuator or ActuatorParams()
        self.filt = filt or FilterParams()
        self.scaling = scaling or ACTION_PRESETS[config.action_preset]
        self.rng = np.random.default_rng(seed)
        self.curriculum = curriculum or CurriculumState.initial(config.curriculum)
        self.spec = ObservationSpec.for_mode(config.task)
        self.n = config.num_envs
        self.ranges = PROFILES[config.profile] if config.randomize else RandomizationRanges.off(self._nominal())
        self.max_delay = 3
        self.forced_stage = None
        self.forced_command = None
        self._build()

    @property
    def obs_dim(self) -> int:
        return self.spec.dim

    @property
    def act_dim(self) -> int:
        return 4

    def _nominal(self):
        s, a = self.sim_params, self.actuator

        class _N:
            mass = s.mass
            pitch_inertia = s.pitch_inertia
            mu_static = s.mu_static
            mu_dynamic = s.mu_dynamic
            kp = a.kp
            kd = a.kd
            no_load_speed = a.no_load_speed
            cutoff_speed = a.cutoff_speed
            viscous_friction = a.viscous_friction
            armature = a.armature
        return _N

    def _build(self):
        n = self.n
        q = np.full((n, 4), 60 * DEG)
        state = make_state(np.tile([0.0, 0.35], (n, 1)), 0.0, np.zeros(2), 0.0, q, geometry=self.geometry)
        self.bs = BatchSim(state, EnvParams.nominal(n, self.sim_params, self.actuator), self.sim_params, self.filt,
                           self.cfg.rates, landing_window=self.cfg.rewards.landing_window)
        self.h_star = np.zeros(n)
        self.p_star = np.zeros((n, 2))
        self.stage = np.zeros(n, dtype=np.int64)
        self.start_x = np.zeros(n)
        self.episode_time = np.zeros(n)
        self.next_push = np.zeros(n)
        self.delay_steps = np.zeros(n, dtype=np.int64)
        self.actions = np.zeros((n, 4))
        self.prev_actions = np.zeros((n, 4))
        self.prev_tau = np.zeros((n, 4))
        self.delay = ActionDelay(self.max_delay, n, 4)
        self.episode_return = np.zeros(n)
        self.noise_enabled = self.cfg.noise.enabled

    # ----------------------------------------------------------------- resets
    def command(self, idx=None) -> JumpCommand:
        idx = slice(None) if idx is None else idx
        if self.cfg.task == VERTICAL:
            return JumpCommand(VERTICAL, h_star=self.h_star[idx], c=1)
        return JumpCommand(HORIZONTAL, p_star=self.p_star[idx], c=1)

    def reset(self) -> np.ndarray:
        self._reset_envs(np.arange(self.n))
        return self.observe()

    def _reset_envs(self, idx):
        idx = np.asarray(idx)
        m = idx.size
        if m == 0:
            return
        rng = self.rng
        cmd = sample_command(self.cfg.task, self.curriculum, rng, m)
        if self.forced_command is not None:
            cmd = JumpCommand(self.cfg.task, h_star=self.forced_command[idx], c=1) if self.cfg.task == VERTICAL else \
                JumpCommand(self.cfg.task, p_star=np.stack([self.forced_command[idx], np.zeros(m)], -1), c=1)
        stages = sample_stages(self.curriculum, rng, m) if self.forced_stage is None else np.full(m, self.forced_stage)
        dom = randomize_domain(self._nominal(), self.ranges, rng, m, self.cfg.rates.control_dt)
        state = sample_initial_states(stages, cmd, self.geometry, self.curriculum, rng,
                                      gravity=self.sim_params.gravity, mass=float(np.mean(dom.mass)),
                                      contact_stiffness=float(np.asarray(self.sim_params.stiffness)),
                                      sum_bounds=self.filt.sum_bounds)
        # episode clocks restart at zero
        state.time[:] = 0.0
        state.phase_entry_time[:] = 0.0
        self.bs.reset_envs(idx, state)
        p = self.bs.params
        p.mass[idx] = dom.mass
        p.inertia[idx] = dom.inertia
        p.mu_s[idx] = dom.mu_s
        p.mu_d[idx] = dom.mu_d
        p.armature[idx] = dom.armature
        p.com_shift[idx] = dom.com_shift
        p.ext_f[idx] = dom.ext_f
        p.ext_tau[idx] = dom.ext_tau
        p.kp[idx] = dom.kp
        p.kd[idx] = dom.kd
        p.no_load[idx] = dom.no_load
        p.cutoff[idx] = dom.cutoff
        p.visc[idx] = dom.visc
        p.joint_offset[idx] = dom.joint_offset
        self.delay_steps[idx] = np.minimum(dom.delay_steps, self.max_delay)
        if self.cfg.task == VERTICAL:
            self.h_star[idx] = cmd.h_star
        else:
            self.p_star[idx] = cmd.p_star
        self.stage[idx] = stages
        self.start_x[idx] = 0.0
        self.episode_time[idx] = 0.0
        self.next_push[idx] = self.cfg.push_interval
        # hold the sampled pose: the previous action is the one reproducing the current joints
        hold = np.clip((state.q - np.asarray(self.scaling.defaults)) / np.asarray(self.scaling.scales), -1, 1)
        self.actions[idx] = hold
        self.prev_actions[idx] = hold
        self.delay.reset(idx, hold)
        self.prev_tau[idx] = 0.0
        self.episode_return[idx] = 0.0

    # ------------------------------------------------------------ observation
    def observe(self, noise: bool | None = None) -> np.ndarray:
        use_noise = self.noise_enabled if noise is None else noise
        return build_observation(self.cfg.task, self.bs.state, self.command(), self.actions,
                                 self.cfg.noise if use_noise else None, self.rng,
                                 joint_default=self.scaling.defaults)

    # ------------------------------------------------------------------- step
    def step(self, actions):
        cfg = self.cfg
        s = self.bs.state
        dt_c = cfg.rates.control_dt
        a = np.clip(np.asarray(actions, float), -1.0, 1.0)
        self.prev_actions = self.actions
        self.actions = a
        executed = self.delay.push(a, self.delay_steps)
        targets = rescale_actions(executed, self.scaling)

        vel0 = s.vel.copy()
        qd0 = s.qd.copy()
        apex0 = s.apex_reached.copy()
        self.bs.control_step(targets)
        self.episode_time += dt_c
        s = self.bs.state

        # periodic pushes
        due = self.episode_time >= self.next_push
        if due.any():
            f, t = sample_external(self.ranges, self.rng, int(due.sum()))
            self.bs.params.ext_f[due] = f
            self.bs.params.ext_tau[due] = t
            self.next_push[due] += cfg.push_interval

        rew, info_terms = self._rewards(targets, vel0, qd0, apex0)
        reason, measured, outcome_done = self._terminations()
        blown = ~self.bs.alive
        reason = np.where(blown, int(TerminationReason.NUMERICAL_BLOWUP), reason)
        rew = np.where(np.isfinite(rew), rew, 0.0)
        truncated = (self.episode_time >= cfg.episode_length - 1e-9) & (reason == 0) & ~outcome_done
        done = (reason != 0) | outcome_done | truncated
        self.prev_tau = self.bs.tau.copy()
        self.episode_return += rew

        info = {"truncated": truncated, "reasons": reason, "outcomes": [], "terms": info_terms}
        if done.any():
            idx = np.nonzero(done)[0]
            if truncated.any():
                info["final_obs"] = self.observe()
            info["outcomes"] = self._outcomes(idx, reason, measured)
            info["episode_returns"] = self.episode_return[idx].copy()
            self._reset_envs(idx)
        return self.observe(), rew, done, info

    def _rewards(self, targets, vel0, qd0, apex0):
        cfg = self.cfg
        s = self.bs.state
        rc = cfg.rewards
        dt_c = cfg.rates.control_dt
        out = regularization_rewards(targets, self.bs.safe, self.bs.tau, (s.qd - qd0) / dt_c, self.actions,
                                     self.prev_actions, self.prev_tau, rc)
        c, sn = np.cos(s.pitch), np.sin(s.pitch)
        a_world = (s.vel - vel0) / dt_c
        a_body = np.stack([c * a_world[:, 0] + sn * a_world[:, 1], -sn * a_world[:, 0] + c * a_world[:, 1]], -1)
        v_body = np.stack([c * s.vel[:, 0] + sn * s.vel[:, 1], -sn * s.vel[:, 0] + c * s.vel[:, 1]], -1)
        since_touch = s.time - s.phase_entry_time
        out.merge(common_jump_rewards(s.pitch_rate[:, None], s.pitch, s.q, s.phase, s.ground_force, a_body, v_body,
                                      s.qd, since_touch, rc))
        b = BallisticState(s.pos[:, 0], s.pos[:, 1], s.vel[:, 0], s.vel[:, 1], self.sim_params.gravity)
        if cfg.task == VERTICAL:
            apex_event = s.apex_reached & ~apex0
            h_hat = estimate_apex(b)
            out.merge(vertical_jump_rewards(s.max_height, h_hat, self.h_star, apex_event, s.phase, s.apex_reached,
                                            s.q, np.zeros((self.n, 4)), rc))
        else:
            x_land, _, valid = estimate_landing_masked(b, s.takeoff_pos[:, 1])
            e = np.stack([self.p_star[:, 0] - s.pos[:, 0], np.zeros(self.n)], -1)
            e_hat = np.stack([np.where(valid, self.p_star[:, 0] - x_land, e[:, 0]), np.zeros(self.n)], -1)
            out.merge(horizontal_jump_rewards(e, e_hat, s.phase, s.q, s.q, rc))
        return out.total, out

    def _terminations(self):
        cfg = self.cfg
        s = self.bs.state
        lim = cfg.termination
        stance = s.phase == JumpPhase.STANCE
        time_in_stance = np.where(stance, s.time - s.phase_entry_time, 0.0)
        b = BallisticState(s.pos[:, 0], s.pos[:, 1], s.vel[:, 0], s.vel[:, 1], self.sim_params.gravity)
        flying = s.phase == JumpPhase.IN_FLIGHT
        landed = s.phase == JumpPhase.LANDED
        settled = landed & (s.time - s.phase_entry_time >= cfg.settle_time)
        if cfg.task == VERTICAL:
            pred = np.where(flying & ~s.apex_reached, np.abs(estimate_apex(b) - self.h_star), np.nan)
            measured = np.abs(s.max_height - self.h_star)
            measured_valid = s.apex_reached & (s.phase != JumpPhase.STANCE)
        else:
            x_land, _, valid = estimate_landing_masked(b, s.takeoff_pos[:, 1])
            pred = np.where(flying & valid, np.abs(x_land - self.p_star[:, 0]), np.nan)
            measured = np.abs(s.pos[:, 0] - self.p_star[:, 0])
            measured_valid = settled
        lo, hi = self.geometry.transversal_limits
        excess = np.maximum(np.maximum(s.q - np.tile(hi, 2), np.tile(lo, 2) - s.q), 0.0).max(-1)
        reason = termination_check(
            phase=s.phase, time_in_stance=time_in_stance, predicted_error=pred, measured_error=measured,
            measured_valid=measured_valid, base_z=s.pos[:, 1], pitch=s.pitch, joint_excess=excess,
            decel_peak=self.bs.decel_peak, drift=np.abs(s.pos[:, 0] - self.start_x), limits=lim)
        return reason, measured, settled

    def _outcomes(self, idx, reason, measured):
        s = self.bs.state
        out = []
        for i in idx:
            executed = bool(self.bs.touched[i] or s.phase[i] != JumpPhase.STANCE)
            if self.cfg.task == VERTICAL:
                target = float(self.h_star[i])
                achieved = float(s.max_height[i]) if s.apex_reached[i] else float("nan")
                err = abs(achieved - target) if s.apex_reached[i] else float("inf")
            else:
                target = float(self.p_star[i, 0])
                achieved = float(s.pos[i, 0])
                landed = s.phase[i] == JumpPhase.LANDED
                err = abs(achieved - target) if landed else float("inf")
            ok = bool(err < self.cfg.success_tolerance)
            out.append(EpisodeOutcome(stage=int(self.stage[i]), target=target, achieved=achieved, error=err,
                                      success=ok, executed=executed, reason=int(reason[i]),
                                      decel_peak=float(self.bs.decel_peak[i])))
        return out
