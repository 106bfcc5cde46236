"""Action rescaling, the predictive motor-command filter, and the PD actuator model."""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

DEG = math.pi / 180.0


@dataclass(frozen=True)
class ActuatorParams:
    kp: float = 30.0
    kd: float = 0.8
    peak_torque: float = 18.0
    no_load_speed: float = 30.0
    cutoff_speed: float = 15.0
    viscous_friction: float = 0.02
    armature: float = 0.02

    def validation_errors(self) -> list[str]:
        errors = []
        if not 0 < self.cutoff_speed < self.no_load_speed:
            errors.append("cutoff_speed: need 0 < cutoff_speed < no_load_speed")
        if not self.peak_torque > 0:
            errors.append("peak_torque: must be > 0")
        if self.kp < 0 or self.kd < 0:
            errors.append("kp/kd: must be >= 0")
        if not self.armature > 0:
            errors.append("armature: must be > 0")
        if self.viscous_friction < 0:
            errors.append("viscous_friction: must be >= 0")
        return errors


@dataclass(frozen=True)
class ActionScaling:
    scales: tuple
    defaults: tuple

    def validation_errors(self) -> list[str]:
        if len(self.scales) != len(self.defaults):
            return ["scales: scales and defaults must have equal length"]
        if not all(s > 0 for s in self.scales):
            return ["scales: action scales must be > 0"]
        return []


# per-task presets for the planar layout (front_it, front_ot, back_it, back_ot)
# default joint angle: both thighs at 60 deg, the nominal standing pose
STANCE_ANGLE = 60 * DEG
ACTION_PRESETS = {
    "walking": ActionScaling(scales=(60 * DEG,) * 4, defaults=(STANCE_ANGLE,) * 4),
    "jumping": ActionScaling(scales=(90 * DEG,) * 4, defaults=(STANCE_ANGLE,) * 4),
}
LATERAL_SCALES = {"walking": 60 * DEG, "jumping": 15 * DEG}


@dataclass(frozen=True)
class FilterParams:
    prediction_horizon: float = 0.1
    max_overshoot: float = 30 * DEG
    sum_bounds: tuple = (-20 * DEG, 150 * DEG)
    # velocity-proportional pull-back applied as a limit is about to be crossed
    brake_time: float = 0.08
    # approach speed floor for the time-to-violation used by the ramp
    min_approach_speed: float = 2.0

    def validation_errors(self) -> list[str]:
        errors = []
        if not self.prediction_horizon > 0:
            errors.append("prediction_horizon: must be > 0")
        if self.max_overshoot < 0:
            errors.append("max_overshoot: must be >= 0")
        if self.brake_time < 0:
            errors.append("brake_time: must be >= 0")
        l, u = self.sum_bounds
        if not l < u:
            errors.append("sum_bounds: requires l < u")
        return errors


def rescale_actions(actions, scaling: ActionScaling, report: bool = False):
    """target = clip(a, -1, 1) * scale + default.

    With ``report=True`` also returns the number of clamped entries.
    """
    a = np.asarray(actions, float)
    clipped = np.clip(a, -1.0, 1.0)
    target = clipped * np.asarray(scaling.scales, float) + np.asarray(scaling.defaults, float)
    if report:
        return target, int(np.count_nonzero(clipped != a))
    return target


def time_to_violation(positions, velocities, limits_min, limits_max):
    """Seconds until the limit being approached is crossed; inf when moving away or still."""
    q = np.asarray(positions, float)
    v = np.asarray(velocities, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_up = np.where(v > 0, np.maximum(limits_max - q, 0.0) / v, np.inf)
        t_lo = np.where(v < 0, np.maximum(q - limits_min, 0.0) / -v, np.inf)
    return t_lo, t_up


def _side_allowance(t_v, speed, params: FilterParams):
    """Signed allowance past one limit.

    Far from violation (t_v >= horizon) the full overshoot is allowed. Inside the
    horizon the allowance ramps linearly with t_v and is offset by a pull-back
    proportional to the approach speed, so at t_v = 0 the bound sits
    ``speed * brake_time`` inside the limit and the PD loop brakes.
    """
    ramp = np.clip(t_v / params.prediction_horizon, 0.0, 1.0)
    ramp = np.where(np.isfinite(t_v), ramp, 1.0)
    pull = speed * params.brake_time
    return (params.max_overshoot + pull) * ramp - pull


def filter_bounds(positions, velocities, limits_min, limits_max, params: FilterParams):
    q = np.asarray(positions, float)
    v = np.asarray(velocities, float)
    floor = params.min_approach_speed
    if floor > 0:
        # a near-stationary joint still gets a finite time-to-violation
        t_up = np.maximum(limits_max - q, 0.0) / np.maximum(v, floor)
        t_lo = np.maximum(q - limits_min, 0.0) / np.maximum(-v, floor)
    else:
        t_lo, t_up = time_to_violation(q, v, limits_min, limits_max)
    up = limits_max + _side_allowance(t_up, np.maximum(v, 0.0), params)
    lo = limits_min - _side_allowance(t_lo, np.maximum(-v, 0.0), params)
    return lo, up


def project_sum(a, b, bounds):
    """Shift (a, b) equally along (1, 1) so that l <= a + b <= u holds exactly."""
    l, u = bounds
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    s = a + b
    shift = np.where(s > u, 0.5 * (s - u), np.where(s < l, 0.5 * (s - l), 0.0))
    a = a - shift
    b = b - shift
    # rounding can leave the sum a few ulps outside; step b inward with a
    # doubling stride so tiny |b| (fine ulp) still converges quickly
    stride = np.zeros_like(b)
    for _ in range(128):
        s = a + b
        direction = np.where(s > u, -1.0, np.where(s < l, 1.0, 0.0))
        if not direction.any():
            break
        ulp = np.abs(np.nextafter(b, np.where(direction < 0, -np.inf, np.inf)) - b)
        stride = np.where(direction != 0, np.maximum(2.0 * stride, ulp), 0.0)
        b = b + direction * stride
    return a, b


def predictive_filter(targets, positions, velocities, limits_min, limits_max, params: FilterParams,
                      pairs=((0, 1), (2, 3))):
    """Safe joint targets from raw targets.

    Per joint, the target is clamped to the velocity-aware window from
    ``filter_bounds``; then each (theta_it, theta_ot) pair listed in ``pairs`` is
    projected onto the transversal-sum bounds.
    """
    tgt = np.asarray(targets, float)
    lo, up = filter_bounds(positions, velocities, limits_min, limits_max, params)
    safe = np.clip(tgt, lo, np.maximum(up, lo))
    safe = np.array(safe, copy=True)
    for i, j in pairs:
        a, b = project_sum(safe[..., i], safe[..., j], params.sum_bounds)
        safe[..., i] = a
        safe[..., j] = b
    return safe


def torque_envelope(velocities, params: ActuatorParams):
    """Drive-direction torque capacity: flat to cutoff, linear to zero at no-load."""
    speed = np.abs(np.asarray(velocities, float))
    frac = (params.no_load_speed - speed) / (params.no_load_speed - params.cutoff_speed)
    return params.peak_torque * np.clip(frac, 0.0, 1.0)


def pd_torque(safe_targets, positions, velocities, params: ActuatorParams, feedforward=0.0, kp=None, kd=None):
    """PD torque with the torque-speed envelope, minus viscous joint friction.

    ``kp``/``kd`` override the nominal gains (domain randomization passes
    per-environment arrays here).
    """
    q = np.asarray(positions, float)
    v = np.asarray(velocities, float)
    kp = params.kp if kp is None else kp
    kd = params.kd if kd is None else kd
    raw = kp * (np.asarray(safe_targets, float) - q) - kd * v + feedforward
    drive = torque_envelope(v, params)
    peak = params.peak_torque
    upper = np.where(v > 0, drive, peak)
    lower = np.where(v < 0, -drive, -peak)
    return np.clip(raw, lower, upper) - params.viscous_friction * v
