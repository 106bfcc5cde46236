"""Jump commands, reference state initialization (RSI), and curriculum progression."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from enum import IntEnum
import math

import numpy as np

from .geometry import CONVERGED, LegGeometry, batch_ik, default_stance
from .rewards import HORIZONTAL, VERTICAL, JumpCommand
from .sim import JumpPhase, SimState, make_state

DEG = math.pi / 180.0

# full training ranges of the hardware policies; the planar model defaults below are smaller
HARDWARE_VERTICAL_RANGE = (0.6, 1.1)
HARDWARE_FORWARD_RANGE = (0.4, 1.0)
HARDWARE_LATERAL_RANGE = (-0.3, 0.3)


class RSIStage(IntEnum):
    STANDING_SQUATTING = 0
    IN_FLIGHT = 1
    TOUCHDOWN = 2
    LANDED_NEAR_GOAL = 3


@dataclass
class CurriculumConfig:
    stage_weights: tuple = (0.55, 0.2, 0.15, 0.1)
    vertical_initial: tuple = (0.5, 0.6)
    vertical_cap: tuple = (0.4, 0.8)
    forward_initial: tuple = (0.45, 0.55)
    forward_cap: tuple = (0.3, 0.7)
    lateral_initial: tuple = (0.0, 0.0)
    lateral_cap: tuple = (0.0, 0.0)
    promote: float = 0.8
    demote: float = 0.3
    window: int = 200
    step: float = 0.05
    breadth_step: float = 0.1
    success_tolerance: float = 0.1
    # standing base-height bands: deep squat vs the full range
    squat_band: tuple = (0.30, 0.33)
    stand_band: tuple = (0.30, 0.44)
    pitch_spread: float = 4 * DEG
    forward_pitch: float = -5 * DEG
    paw_forward: float = 0.04
    # base height at takeoff and at sampled touchdowns (legs near full extension)
    takeoff_height: tuple = (0.40, 0.45)
    touchdown_height: float = 0.38
    horizontal_rise: tuple = (0.08, 0.2)
    ik_retries: int = 5

    def validation_errors(self) -> list[str]:
        errors = []
        w = np.asarray(self.stage_weights, float)
        if w.shape != (4,) or (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
            errors.append("curriculum.stage_weights: need 4 non-negative weights summing to 1")
        for name in ("vertical", "forward", "lateral"):
            ini = getattr(self, f"{name}_initial")
            cap = getattr(self, f"{name}_cap")
            if not (cap[0] <= ini[0] <= ini[1] <= cap[1]):
                errors.append(f"curriculum.{name}_initial: must lie inside {name}_cap with low <= high")
        if self.vertical_initial[0] <= 0:
            errors.append("curriculum.vertical_initial: heights must be > 0")
        if not 0 <= self.demote < self.promote <= 1:
            errors.append("curriculum.promote/demote: need 0 <= demote < promote <= 1")
        if self.window < 1:
            errors.append("curriculum.window: must be >= 1")
        if not self.step > 0:
            errors.append("curriculum.step: must be > 0")
        if not self.squat_band[0] <= self.squat_band[1] <= self.stand_band[1]:
            errors.append("curriculum.squat_band: must sit inside stand_band")
        return errors


@dataclass
class CurriculumState:
    config: CurriculumConfig
    vertical: tuple
    forward: tuple
    lateral: tuple
    breadth: float = 0.0
    outcomes: deque = field(default_factory=deque)
    updates: int = 0

    @classmethod
    def initial(cls, config: CurriculumConfig | None = None) -> "CurriculumState":
        config = config or CurriculumConfig()
        return cls(config=config, vertical=tuple(config.vertical_initial), forward=tuple(config.forward_initial),
                   lateral=tuple(config.lateral_initial), outcomes=deque(maxlen=config.window))

    def success_rate(self) -> float:
        return float(np.mean(self.outcomes)) if self.outcomes else float("nan")

    def copy(self) -> "CurriculumState":
        return replace(self, outcomes=deque(self.outcomes, maxlen=self.config.window))

    def at_caps(self) -> bool:
        c = self.config
        return (self.vertical == tuple(c.vertical_cap) and self.forward == tuple(c.forward_cap)
                and self.lateral == tuple(c.lateral_cap))


def _grow(rng, cap, step):
    return (max(cap[0], rng[0] - step), min(cap[1], rng[1] + step))


def _shrink(rng, initial, step):
    return (min(initial[0], rng[0] + step), max(initial[1], rng[1] - step))


def update_curriculum(state: CurriculumState, outcomes) -> CurriculumState:
    """Feed episode outcomes (bool success or absolute error in meters) and apply the promotion rule.

    A decision is taken once the window is full; after a range change the
    window restarts so the next decision uses fresh episodes.
    """
    new = state.copy()
    c = new.config
    for o in outcomes:
        o = bool(o) if isinstance(o, (bool, np.bool_)) else bool(abs(float(o)) < c.success_tolerance)
        new.outcomes.append(o)
    if len(new.outcomes) < c.window:
        return new
    rate = new.success_rate()
    if rate >= c.promote:
        grown = (_grow(new.vertical, c.vertical_cap, c.step), _grow(new.forward, c.forward_cap, c.step),
                 _grow(new.lateral, c.lateral_cap, c.step))
        changed = grown != (new.vertical, new.forward, new.lateral)
        new.vertical, new.forward, new.lateral = grown
        new.breadth = min(1.0, new.breadth + c.breadth_step)
        if changed:
            new.outcomes.clear()
            new.updates += 1
    elif rate <= c.demote:
        shrunk = (_shrink(new.vertical, c.vertical_initial, c.step), _shrink(new.forward, c.forward_initial, c.step),
                  _shrink(new.lateral, c.lateral_initial, c.step))
        if shrunk != (new.vertical, new.forward, new.lateral):
            new.vertical, new.forward, new.lateral = shrunk
            new.outcomes.clear()
            new.updates += 1
    return new


def sample_command(mode: str, curriculum: CurriculumState, rng: np.random.Generator, n: int | None = None) -> JumpCommand:
    """Uniform command inside the current range; the planar model keeps y* at 0."""
    shape = () if n is None else (n,)
    if mode == VERTICAL:
        lo, hi = curriculum.vertical
        return JumpCommand(mode=VERTICAL, h_star=rng.uniform(lo, hi, shape) if hi > lo else np.full(shape, lo), c=1)
    if mode == HORIZONTAL:
        lo, hi = curriculum.forward
        x = rng.uniform(lo, hi, shape) if hi > lo else np.full(shape, lo)
        ylo, yhi = curriculum.lateral
        y = rng.uniform(ylo, yhi, shape) if yhi > ylo else np.full(shape, ylo)
        return JumpCommand(mode=HORIZONTAL, p_star=np.stack([x, y], -1), c=1)
    raise ValueError(f"unknown mode {mode!r}")


def sample_stages(curriculum: CurriculumState, rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.choice(4, size=n, p=np.asarray(curriculum.config.stage_weights, float))


@dataclass
class Arc:
    """Contact-free base trajectory x(t) = x0 + vx t, z(t) = z0 + vz t - g t^2 / 2."""

    x0: np.ndarray
    z0: np.ndarray
    vx: np.ndarray
    vz: np.ndarray
    gravity: float = 9.81

    def at(self, t):
        g = self.gravity
        return (self.x0 + self.vx * t, self.z0 + self.vz * t - 0.5 * g * t * t, self.vx + 0 * t, self.vz - g * t)

    def apex(self):
        return self.z0 + np.maximum(self.vz, 0.0) ** 2 / (2 * self.gravity)

    def time_at_height(self, z, descending=True):
        g = self.gravity
        disc = np.sqrt(np.maximum(self.vz ** 2 + 2 * g * (self.z0 - z), 0.0))
        return (self.vz + disc) / g if descending else (self.vz - disc) / g


def command_arc(cmd: JumpCommand, cfg: CurriculumConfig, rng: np.random.Generator, n: int, gravity: float = 9.81) -> Arc:
    """Ballistic arc realizing the command: apex h* (vertical) or landing at x* (horizontal).

    Horizontal arcs come back down to their takeoff height at x*, the same
    flat-ground reference the landing prediction uses.
    """
    z0 = rng.uniform(*cfg.takeoff_height, n)
    if cmd.mode == VERTICAL:
        h = np.broadcast_to(np.asarray(cmd.h_star, float), (n,))
        z0 = np.minimum(z0, h - 0.01)
        rise = h - z0
        return Arc(np.zeros(n), z0, np.zeros(n), np.sqrt(2 * gravity * rise), gravity)
    x_star = np.broadcast_to(np.asarray(cmd.p_star, float), (n, 2))[:, 0]
    rise = rng.uniform(*cfg.horizontal_rise, n)
    vz = np.sqrt(2 * gravity * rise)
    arc = Arc(np.zeros(n), z0, np.zeros(n), vz, gravity)
    arc.vx = x_star / arc.time_at_height(z0)
    return arc


def _world_to_body(pitch, vec):
    c, s = np.cos(pitch), np.sin(pitch)
    return np.stack([c * vec[..., 0] + s * vec[..., 1], -s * vec[..., 0] + c * vec[..., 1]], -1)


def _solve_legs(geometry: LegGeometry, targets_body, rng, make_targets, retries):
    """IK for (N, 2, 2) body-frame paw targets, resampling failures via ``make_targets(idx)``."""
    n = targets_body.shape[0]
    guess = default_stance(geometry, batch=n)
    q = np.empty((n, 4))
    pending = np.arange(n)
    tgt = targets_body.copy()
    for attempt in range(retries + 1):
        g = default_stance(geometry, batch=pending.size)
        configs, status, _ = batch_ik(geometry, tgt[pending], np.zeros((pending.size, 3)), g)
        ok = status == CONVERGED
        for leg in range(2):
            q[pending[ok], 2 * leg] = configs.legs[leg].theta_it[ok]
            q[pending[ok], 2 * leg + 1] = configs.legs[leg].theta_ot[ok]
        pending = pending[~ok]
        if pending.size == 0:
            break
        if attempt < retries:
            tgt[pending] = make_targets(pending)
    fallback = np.zeros(n, dtype=bool)
    if pending.size:
        fallback[pending] = True
        for leg in range(2):
            q[pending, 2 * leg] = guess.legs[leg].theta_it[pending]
            q[pending, 2 * leg + 1] = guess.legs[leg].theta_ot[pending]
    return q, fallback


def _transversal_ok(geometry: LegGeometry, q, sum_bounds) -> np.ndarray:
    lo, hi = geometry.transversal_limits
    lo, hi = np.tile(lo, 2), np.tile(hi, 2)
    s = q[:, 0::2] + q[:, 1::2]
    return ((q >= lo) & (q <= hi)).all(-1) & ((s >= sum_bounds[0]) & (s <= sum_bounds[1])).all(-1)


def sample_initial_states(stages, cmd: JumpCommand, geometry: LegGeometry, curriculum: CurriculumState,
                          rng: np.random.Generator, gravity: float = 9.81, mass: float = 14.5,
                          contact_stiffness: float = 2.0e4, sum_bounds=(-20 * DEG, 150 * DEG),
                          return_fallback: bool = False):
    """Batched RSI: one initial ``SimState`` row per entry of ``stages``.

    Every leg configuration comes out of batch_ik with closed passive joints.
    Items whose IK keeps failing fall back to the default stance at rest;
    ``return_fallback=True`` also returns that mask.
    """
    cfg = curriculum.config
    stages = np.asarray(stages, dtype=np.int64)
    n = stages.size
    hips = np.asarray(geometry.hip_positions, float)
    horizontal = cmd.mode == HORIZONTAL
    breadth = curriculum.breadth

    pos = np.zeros((n, 2))
    vel = np.zeros((n, 2))
    pitch = np.zeros(n)
    phase = np.full(n, JumpPhase.STANCE, dtype=np.int64)
    takeoff_pos = np.zeros((n, 2))
    takeoff_vel = np.zeros((n, 2))

    # standing / squatting and landed: paws on the ground, at rest
    grounded = (stages == RSIStage.STANDING_SQUATTING) | (stages == RSIStage.LANDED_NEAR_GOAL)
    band_hi = cfg.squat_band[1] + breadth * (cfg.stand_band[1] - cfg.squat_band[1])
    pos[:, 1] = rng.uniform(cfg.squat_band[0], band_hi, n)
    pitch[:] = rng.uniform(-1.0, 1.0, n) * cfg.pitch_spread * max(breadth, 0.25)
    if horizontal:
        pitch[stages == RSIStage.STANDING_SQUATTING] += cfg.forward_pitch
    # keep the lower hip inside the band when the body is pitched
    pos[:, 1] += np.abs(hips[:, 0]).max() * np.abs(np.sin(pitch))
    landed = stages == RSIStage.LANDED_NEAR_GOAL
    if landed.any():
        goal = (np.broadcast_to(np.asarray(cmd.p_star, float), (n, 2))[:, 0] if horizontal else np.zeros(n))
        pos[landed, 0] = goal[landed] + rng.uniform(-0.05, 0.05, landed.sum())
        phase[landed] = JumpPhase.LANDED

    # flight stages: a point on the command arc
    airborne = ~grounded
    arc = command_arc(cmd, cfg, rng, n, gravity)
    t_apex = np.where(arc.vz > 0, arc.vz / gravity, 0.0)
    t_land = arc.time_at_height(arc.z0)
    flying = stages == RSIStage.IN_FLIGHT
    touchdown = stages == RSIStage.TOUCHDOWN
    # vertical in-flight samples sit on the rising branch, where the apex estimate is exact
    t_hi = t_apex if not horizontal else t_land
    t_fly = rng.uniform(0.0, 1.0, n) * t_hi
    z_td = cfg.touchdown_height + rng.uniform(0.0, 0.05, n)
    z_td = np.minimum(z_td, arc.apex() - 1e-3)
    t_td = arc.time_at_height(z_td)
    t = np.where(flying, t_fly, t_td)
    x, z, vx, vz = arc.at(t)
    z = np.where(touchdown, z_td, z)
    pos[airborne] = np.stack([x, z], -1)[airborne]
    vel[airborne] = np.stack([vx, vz], -1)[airborne]
    pitch[airborne] = rng.uniform(-1.0, 1.0, airborne.sum()) * cfg.pitch_spread * 0.5
    phase[airborne] = JumpPhase.IN_FLIGHT
    takeoff_pos[airborne] = np.stack([arc.x0, arc.z0], -1)[airborne]
    takeoff_vel[airborne] = np.stack([arc.vx, arc.vz], -1)[airborne]

    pen = mass * gravity / (2 * contact_stiffness)

    def make_targets(idx):
        m = idx.size
        c, s = np.cos(pitch[idx]), np.sin(pitch[idx])
        hip_w = np.einsum("mij,lj->mli", np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2), hips)
        out = np.empty((m, 2, 2))
        g_idx = grounded[idx]
        # grounded: paws under the hips (with jitter) and pressed in to carry the weight
        jitter = rng.uniform(-1.0, 1.0, (m, 2)) * (0.01 + 0.03 * breadth)
        paw_w = np.empty((m, 2, 2))
        paw_w[..., 0] = hip_w[..., 0] + jitter
        paw_w[..., 1] = -pen - pos[idx, 1][:, None]
        # airborne: random leg length, paws kept above the ground
        clearance = pos[idx, 1][:, None] + hip_w[..., 1] - 0.01
        depth = rng.uniform(0.30, 0.46, (m, 2))
        depth = np.minimum(depth, clearance)
        fwd = rng.uniform(-0.04, 0.04, (m, 2))
        if horizontal:
            fwd = fwd + np.where(touchdown[idx][:, None], cfg.paw_forward, 0.0)
        air_w = np.stack([hip_w[..., 0] + fwd, hip_w[..., 1] - depth], -1)
        paw_w = np.where(g_idx[:, None, None], paw_w, air_w)
        for leg in range(2):
            out[:, leg] = _world_to_body(pitch[idx], paw_w[:, leg])
        return out

    idx_all = np.arange(n)
    q, fallback = _solve_legs(geometry, make_targets(idx_all), rng, make_targets, cfg.ik_retries)
    bad = ~_transversal_ok(geometry, q, sum_bounds)
    fallback |= bad
    if fallback.any():
        stance = default_stance(geometry)
        for leg in range(2):
            q[fallback, 2 * leg] = stance.legs[leg].theta_it
            q[fallback, 2 * leg + 1] = stance.legs[leg].theta_ot
        pos[fallback] = np.stack([np.zeros(fallback.sum()), np.full(fallback.sum(), float(stance.base_z) - pen)], -1)
        vel[fallback] = 0.0
        pitch[fallback] = 0.0
        phase[fallback] = JumpPhase.STANCE
    state = make_state(pos, pitch, vel, 0.0, q, geometry=geometry)
    state.phase = phase
    state.takeoff_pos = takeoff_pos
    state.takeoff_vel = takeoff_vel
    state.max_height = pos[:, 1].copy()
    state.apex_reached = (phase == JumpPhase.IN_FLIGHT) & (vel[:, 1] <= 0.0)
    return (state, fallback) if return_fallback else state


def sample_initial_state(stage: RSIStage, cmd: JumpCommand, geometry: LegGeometry, curriculum: CurriculumState,
                         rng: np.random.Generator, **kw) -> SimState:
    """Single-environment convenience wrapper around ``sample_initial_states``."""
    if cmd.mode == HORIZONTAL:
        cmd = replace(cmd, p_star=np.asarray(cmd.p_star, float).reshape(1, 2))
    return sample_initial_states(np.array([int(stage)]), cmd, geometry, curriculum, rng, **kw)
