"""Five-bar leg kinematics in the sagittal plane.

Frame conventions (motor-housing frame, shared orientation with the body frame):
x points forward, z points up. A link direction angle ``alpha`` is measured from
straight down, positive toward +x, so the unit vector along a link is
``(sin(alpha), -cos(alpha))``.

The inner thigh rotates toward +x with positive ``theta_it``; the outer thigh is
mirrored and rotates toward -x with positive ``theta_ot``. The sum
``theta_it + theta_ot`` is therefore the opening angle between the thighs, and
equal angles put the ankle on the leg's symmetry axis. Knee angles are relative
to their thigh with the same handedness as the thigh they hang from.

All functions broadcast over leading batch dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import math

import numpy as np

DEG = math.pi / 180.0

# column order of the per-leg joint vector used by jacobians
LEG_JOINTS = ("theta_l", "theta_it", "theta_ot", "theta_ik", "theta_ok")

WORKSPACE_MARGIN = 1e-3


class KinematicsError(Exception):
    pass


class Unreachable(KinematicsError):
    """The two shank circles do not intersect for the requested thigh angles."""


class OutOfWorkspace(KinematicsError):
    """An IK target lies outside the reachable annulus of its leg."""


class NoConvergence(KinematicsError):
    """IK iterations ended above tolerance. ``best`` holds the best iterate."""

    def __init__(self, max_iters, residual, best=None):
        super().__init__(f"IK did not converge in {max_iters} iterations (residual {residual:.3e} m)")
        self.max_iters = max_iters
        self.residual = residual
        self.best = best


@dataclass(frozen=True)
class LegGeometry:
    thigh_length: float = 0.175
    shank_length: float = 0.3
    hip_axis_offset: float = 0.0
    paw_offset: float = 0.0
    # actuated joints, ordered (theta_l, theta_it, theta_ot), radians
    joint_limits_min: tuple = (15.0 * DEG, -40.0 * DEG, -40.0 * DEG)
    joint_limits_max: tuple = (75.0 * DEG, 130.0 * DEG, 130.0 * DEG)
    transversal_sum_bounds: tuple = (-20.0 * DEG, 150.0 * DEG)
    # body-frame hip axis positions for the (front, back) sagittal legs
    hip_positions: tuple = ((0.25, 0.0), (-0.25, 0.0))
    lateral_default: float = 45.0 * DEG

    def __post_init__(self):
        errors = self.validation_errors()
        if errors:
            raise ValueError("; ".join(errors))

    def validation_errors(self) -> list[str]:
        errors = []
        if not self.thigh_length > 0:
            errors.append("thigh_length: must be > 0")
        if not self.shank_length > 0:
            errors.append("shank_length: must be > 0")
        lo = np.asarray(self.joint_limits_min, dtype=float)
        hi = np.asarray(self.joint_limits_max, dtype=float)
        if lo.shape != (3,) or hi.shape != (3,):
            errors.append("joint_limits: need 3 entries (theta_l, theta_it, theta_ot)")
        elif not np.all(lo < hi):
            errors.append("joint_limits_min: must be < joint_limits_max elementwise")
        l, u = self.transversal_sum_bounds
        if not l < u:
            errors.append("transversal_sum_bounds: requires l < u")
        return errors

    @property
    def hip_inner(self) -> np.ndarray:
        return np.array([0.5 * self.hip_axis_offset, 0.0])

    @property
    def hip_outer(self) -> np.ndarray:
        return np.array([-0.5 * self.hip_axis_offset, 0.0])

    @property
    def transversal_limits(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-joint (min, max) for (theta_it, theta_ot)."""
        return np.asarray(self.joint_limits_min[1:], float), np.asarray(self.joint_limits_max[1:], float)

    def with_(self, **kw) -> "LegGeometry":
        return replace(self, **kw)


@dataclass
class LegJointState:
    theta_it: np.ndarray | float
    theta_ot: np.ndarray | float
    theta_ik: np.ndarray | float = 0.0
    theta_ok: np.ndarray | float = 0.0
    theta_l: np.ndarray | float = 45.0 * DEG

    def actuated(self) -> np.ndarray:
        return np.stack(np.broadcast_arrays(self.theta_it, self.theta_ot), axis=-1)

    def as_array(self) -> np.ndarray:
        """Stack in LEG_JOINTS order along the last axis."""
        return np.stack(
            np.broadcast_arrays(self.theta_l, self.theta_it, self.theta_ot, self.theta_ik, self.theta_ok),
            axis=-1,
        ).astype(float)

    @classmethod
    def from_array(cls, q) -> "LegJointState":
        q = np.asarray(q, dtype=float)
        return cls(theta_l=q[..., 0], theta_it=q[..., 1], theta_ot=q[..., 2], theta_ik=q[..., 3], theta_ok=q[..., 4])


@dataclass
class RobotConfiguration:
    base_x: np.ndarray | float
    base_z: np.ndarray | float
    base_pitch: np.ndarray | float
    legs: list = field(default_factory=list)  # [front, back] LegJointState

    def leg_array(self) -> np.ndarray:
        """(..., n_legs, 5) joint array."""
        return np.stack([leg.as_array() for leg in self.legs], axis=-2)


# the vector helpers fill preallocated arrays: np.stack dominates small-batch IK time

def _u(alpha):
    """Unit vector of a link at direction angle ``alpha``."""
    alpha = np.asarray(alpha, float)
    out = np.empty(alpha.shape + (2,))
    np.sin(alpha, out=out[..., 0])
    np.cos(alpha, out=out[..., 1])
    np.negative(out[..., 1], out=out[..., 1])
    return out


def _du(alpha):
    alpha = np.asarray(alpha, float)
    out = np.empty(alpha.shape + (2,))
    np.cos(alpha, out=out[..., 0])
    np.sin(alpha, out=out[..., 1])
    return out


def _perp(v):
    out = np.empty(np.shape(v))
    np.negative(v[..., 1], out=out[..., 0])
    out[..., 1] = v[..., 0]
    return out


def _dot(a, b):
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1]


def _angle_of(v):
    return np.arctan2(v[..., 0], -v[..., 1])


def wrap_angle(x):
    return (x + np.pi) % (2.0 * np.pi) - np.pi


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("joint angles must be finite")


def forward_points(geometry: LegGeometry, joints: LegJointState):
    """Inner ankle, outer ankle and paw positions in the motor-housing frame.

    Passive angles are taken as given, so the two ankle points only coincide when
    the chain is closed.
    """
    a = np.asarray(joints.theta_it, float)
    b = np.asarray(joints.theta_ot, float)
    ik = np.asarray(joints.theta_ik, float)
    ok = np.asarray(joints.theta_ok, float)
    _check_finite(a, b, ik, ok)
    t, s = geometry.thigh_length, geometry.shank_length
    knee_i = geometry.hip_inner + t * _u(a)
    knee_o = geometry.hip_outer + t * _u(-b)
    shank_o = _u(-b - ok)
    p_ia = knee_i + s * _u(a + ik)
    p_oa = knee_o + s * shank_o
    p_paw = p_oa + geometry.paw_offset * shank_o
    return p_ia, p_oa, p_paw


def ckc_residual(geometry: LegGeometry, joints: LegJointState) -> np.ndarray:
    p_ia, p_oa, _ = forward_points(geometry, joints)
    return p_ia - p_oa


def ckc_jacobian(geometry: LegGeometry, joints: LegJointState) -> np.ndarray:
    """d(ckc_residual)/d(theta_l, theta_it, theta_ot, theta_ik, theta_ok), shape (..., 2, 5).

    The lateral column is identically zero: lateral rotation moves the whole
    housing out of plane and leaves the in-plane residual unchanged.
    """
    a = np.asarray(joints.theta_it, float)
    b = np.asarray(joints.theta_ot, float)
    ik = np.asarray(joints.theta_ik, float)
    ok = np.asarray(joints.theta_ok, float)
    _check_finite(a, b, ik, ok)
    a, b, ik, ok = np.broadcast_arrays(a, b, ik, ok)
    t, s = geometry.thigh_length, geometry.shank_length
    d_shank_i = s * _du(a + ik)
    d_shank_o = s * _du(-b - ok)
    col_it = t * _du(a) + d_shank_i
    col_ot = t * _du(-b) + d_shank_o
    zero = np.zeros_like(col_it)
    return np.stack([zero, col_it, col_ot, d_shank_i, d_shank_o], axis=-1)


def ckc_jacobian_full(geometry: LegGeometry, config: RobotConfiguration, leg_index: int) -> np.ndarray:
    """Residual jacobian of one leg against the whole configuration vector.

    The configuration vector is (base_x, base_z, base_pitch, leg0 joints, leg1 joints, ...).
    Base columns and the other legs' columns are zero because the residual is
    expressed in that leg's own housing frame.
    """
    n_legs = len(config.legs)
    leg_jac = ckc_jacobian(geometry, config.legs[leg_index])
    full = np.zeros(leg_jac.shape[:-1] + (3 + 5 * n_legs,))
    start = 3 + 5 * leg_index
    full[..., start:start + 5] = leg_jac
    return full


def _close(geometry: LegGeometry, a, b, branch=1, with_jacobian=False):
    """Closed-form ankle for actuated thigh angles.

    Returns (knee_i, knee_o, ankle, reachable[, d_ankle]) where d_ankle has shape
    (..., 2, 2) with columns d/d theta_it and d/d theta_ot.
    """
    t, s = geometry.thigh_length, geometry.shank_length
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    a, b = np.broadcast_arrays(a, b)
    knee_i = geometry.hip_inner + t * _u(a)
    knee_o = geometry.hip_outer + t * _u(-b)
    D = knee_o - knee_i
    dist = np.sqrt(_dot(D, D))
    h2 = s * s - 0.25 * dist * dist
    reachable = h2 >= 0.0
    h = np.sqrt(np.maximum(h2, 0.0))

    degenerate = dist < 1e-9
    safe_dist = np.where(degenerate, 1.0, dist)
    e = D / safe_dist[..., None]
    n = _perp(e)
    # knees coincide: the perpendicular of the mean thigh direction is the limit
    n_lim = _perp(_perp(_u(0.5 * (a - b))))
    n = np.where(degenerate[..., None], -n_lim, n)
    sign = np.where(n[..., 1] > 0.0, -1.0, 1.0) * branch
    p = sign[..., None] * n
    mid = 0.5 * (knee_i + knee_o)
    ankle = mid + h[..., None] * p
    if not with_jacobian:
        return knee_i, knee_o, ankle, reachable

    dD_da = -t * _du(a)
    dD_db = -t * _du(-b)
    dM_da = 0.5 * t * _du(a)
    dM_db = -0.5 * t * _du(-b)
    safe_h = np.where(h > 1e-12, h, 1e-12)
    cols = []
    for dD, dM, half in ((dD_da, dM_da, 0.5), (dD_db, dM_db, -0.5)):
        dh = -_dot(D, dD) / (4.0 * safe_h)
        de = (dD - e * _dot(e, dD)[..., None]) / safe_dist[..., None]
        dn = _perp(de)
        dn = np.where(degenerate[..., None], half * _du(0.5 * (a - b)), dn)
        dh = np.where(degenerate, 0.0, dh)
        cols.append(dM + dh[..., None] * p + h[..., None] * sign[..., None] * dn)
    return knee_i, knee_o, ankle, reachable, np.stack(cols, axis=-1)


def solve_passive_joints(geometry: LegGeometry, theta_it, theta_ot, branch: int = 1):
    """Passive knee angles that close the chain for the given thigh angles.

    ``branch=+1`` places the ankle below the line joining the knees (the working
    mode), ``-1`` above it. Raises Unreachable if any element cannot close.
    """
    theta_ik, theta_ok, reachable = close_passive(geometry, theta_it, theta_ot, branch)
    if not np.all(reachable):
        raise Unreachable("shank circles do not intersect for the given thigh angles")
    return theta_ik, theta_ok


def close_passive(geometry: LegGeometry, theta_it, theta_ot, branch: int = 1):
    """Non-raising variant of solve_passive_joints: also returns the reachable mask."""
    a = np.asarray(theta_it, float)
    b = np.asarray(theta_ot, float)
    knee_i, knee_o, ankle, reachable = _close(geometry, a, b, branch)
    theta_ik = wrap_angle(_angle_of(ankle - knee_i) - a)
    theta_ok = wrap_angle(-_angle_of(ankle - knee_o) - b)
    return theta_ik, theta_ok, reachable


def closed_leg(geometry: LegGeometry, theta_it, theta_ot, theta_l=None, branch: int = 1) -> LegJointState:
    theta_ik, theta_ok = solve_passive_joints(geometry, theta_it, theta_ot, branch)
    if theta_l is None:
        theta_l = geometry.lateral_default
    return LegJointState(theta_it=np.asarray(theta_it, float), theta_ot=np.asarray(theta_ot, float),
                         theta_ik=theta_ik, theta_ok=theta_ok, theta_l=theta_l)


def paw_and_jacobian(geometry: LegGeometry, theta_it, theta_ot, branch: int = 1):
    """Paw position of the closed chain and its jacobian w.r.t. (theta_it, theta_ot).

    Used by the simulator every physics step; the jacobian is exact for the
    closed chain, including the passive-joint motion.
    """
    knee_i, knee_o, ankle, reachable, d_ankle = _close(geometry, theta_it, theta_ot, branch, with_jacobian=True)
    if geometry.paw_offset == 0.0:
        return ankle, d_ankle, reachable
    s = geometry.shank_length
    k = geometry.paw_offset / s
    paw = ankle + k * (ankle - knee_o)
    d_knee_o = np.zeros_like(d_ankle)
    d_knee_o[..., :, 1] = -geometry.thigh_length * _du(-np.asarray(theta_ot, float))
    return paw, (1.0 + k) * d_ankle - k * d_knee_o, reachable


def paw_in_body(geometry: LegGeometry, leg_index: int, joints: LegJointState) -> np.ndarray:
    return np.asarray(geometry.hip_positions[leg_index], float) + forward_points(geometry, joints)[2]


def _stacked(geometry, q, targets):
    """Stacked constraint (ckc; paw - target) and its 4x4 jacobian, per leg.

    q: (..., 4) as (theta_it, theta_ot, theta_ik, theta_ok); targets relative to hip.
    """
    t, s = geometry.thigh_length, geometry.shank_length
    a, b, ik, ok = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    knee_i = geometry.hip_inner + t * _u(a)
    knee_o = geometry.hip_outer + t * _u(-b)
    reach_o = s + geometry.paw_offset
    p_ia = knee_i + s * _u(a + ik)
    p_oa = knee_o + s * _u(-b - ok)
    paw = knee_o + reach_o * _u(-b - ok)
    resid = np.concatenate([p_ia - p_oa, paw - targets], axis=-1)

    zero = np.zeros(a.shape + (2,))
    d_si = s * _du(a + ik)
    d_so = s * _du(-b - ok)
    ckc = np.stack([t * _du(a) + d_si, t * _du(-b) + d_so, d_si, d_so], axis=-1)
    d_paw_b = -t * _du(-b) - reach_o * _du(-b - ok)
    d_paw_ok = -reach_o * _du(-b - ok)
    paw_j = np.stack([zero, d_paw_b, zero, d_paw_ok], axis=-1)
    return resid, np.concatenate([ckc, paw_j], axis=-2)


def in_workspace(geometry: LegGeometry, target_rel_hip) -> np.ndarray:
    """Annulus pre-filter on hip-relative paw targets."""
    t, s = geometry.thigh_length, geometry.shank_length
    r = np.linalg.norm(np.asarray(target_rel_hip, float), axis=-1)
    return (r >= abs(t - s) + WORKSPACE_MARGIN) & (r <= t + s - WORKSPACE_MARGIN)


# per-item IK status codes
CONVERGED = "converged"
NO_CONVERGENCE = "no_convergence"
OUT_OF_WORKSPACE = "out_of_workspace"


def _ik_core(geometry, targets, q0, weights, damping, max_iters, tol, branch):
    """Compiled per-item solve; falls back to the numpy reference for unusual weight shapes."""
    w = np.asarray(weights, float) * np.ones(4)
    if w.shape != (4,):
        return _ik_core_numpy(geometry, targets, q0, weights, damping, max_iters, tol, branch)
    from ._kernels import ik_solve
    n = targets.shape[0]
    q = np.empty_like(q0)
    best_q = np.empty_like(q0)
    err = np.empty(n)
    best_err = np.empty(n)
    iters = np.empty(n, dtype=np.int64)
    ik_solve(np.ascontiguousarray(targets), np.ascontiguousarray(q0), w, float(damping), int(max_iters), float(tol),
             geometry.thigh_length, geometry.shank_length, geometry.paw_offset, geometry.hip_axis_offset,
             float(branch), q, err, iters, best_q, best_err)
    return q, err, iters, best_q, best_err


def _ik_core_numpy(geometry, targets, q0, weights, damping, max_iters, tol, branch):
    """Damped least squares on the stacked constraint, masked per item.

    targets: (N, L, 2) hip-relative; q0: (N, L, 4). Each item iterates until its
    own residual is below tol so results never depend on the rest of the batch.
    """
    q = q0.copy()
    n = q.shape[0]
    w = np.asarray(weights, float) * np.ones(4)
    active = np.ones(n, dtype=bool)
    iters = np.zeros(n, dtype=int)
    resid, jac = _stacked(geometry, q, targets)
    err = np.sqrt(np.sum(resid * resid, axis=(-1, -2)))
    best_q = q.copy()
    best_err = err.copy()
    active &= err > tol
    eye = np.eye(4)
    for _ in range(max_iters):
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        r = resid[idx]
        J = jac[idx]
        JtW = np.swapaxes(J, -1, -2) * w
        A = JtW @ J + damping * eye
        g = (JtW @ r[..., None])[..., 0]
        dq = -np.linalg.solve(A, g[..., None])[..., 0]
        qn = q[idx] + dq
        ik, ok, _ = close_passive(geometry, qn[..., 0], qn[..., 1], branch)
        qn[..., 2] = ik
        qn[..., 3] = ok
        rn, jn = _stacked(geometry, qn, targets[idx])
        en = np.sqrt(np.sum(rn * rn, axis=(-1, -2)))
        q[idx] = qn
        resid[idx] = rn
        jac[idx] = jn
        err[idx] = en
        iters[idx] += 1
        better = en < best_err[idx]
        best_q[idx[better]] = qn[better]
        best_err[idx[better]] = en[better]
        active[idx] = en > tol
    return q, err, iters, best_q, best_err


def _guess_array(geometry, guess: RobotConfiguration):
    legs = guess.legs
    return np.stack(
        [np.stack(np.broadcast_arrays(l.theta_it, l.theta_ot, l.theta_ik, l.theta_ok), axis=-1) for l in legs],
        axis=-2,
    ).astype(float)


def _configs_from(q, base_pose, theta_l):
    legs = [
        LegJointState(theta_it=q[..., i, 0], theta_ot=q[..., i, 1], theta_ik=q[..., i, 2],
                      theta_ok=q[..., i, 3], theta_l=theta_l)
        for i in range(q.shape[-2])
    ]
    return RobotConfiguration(base_x=base_pose[..., 0], base_z=base_pose[..., 1], base_pitch=base_pose[..., 2], legs=legs)


def batch_ik(geometry: LegGeometry, targets, base_poses, guesses: RobotConfiguration,
             weights=1.0, damping=1e-4, max_iters=100, tol=1e-6, branch=1):
    """Vectorized weighted IK.

    targets: (N, L, 2) desired body-frame paw positions; base_poses: (N, 3) as
    (x, z, pitch); guesses: RobotConfiguration whose leg angles have shape (N,).
    Returns (configs, statuses, residuals). Items fail independently.
    """
    targets = np.asarray(targets, float)
    if targets.ndim != 3 or targets.shape[0] == 0:
        raise ValueError("targets must be a non-empty (N, L, 2) array")
    base_poses = np.broadcast_to(np.asarray(base_poses, float), (targets.shape[0], 3))
    hips = np.asarray(geometry.hip_positions, float)[: targets.shape[1]]
    rel = targets - hips
    q0 = np.broadcast_to(_guess_array(geometry, guesses), targets.shape[:2] + (4,)).copy()
    ok_ws = np.all(in_workspace(geometry, rel), axis=-1)

    q = q0.copy()
    err = np.full(targets.shape[0], np.nan)
    statuses = np.full(targets.shape[0], OUT_OF_WORKSPACE, dtype=object)
    if ok_ws.any():
        sel = np.nonzero(ok_ws)[0]
        qs, es, _, bq, be = _ik_core(geometry, rel[sel], q0[sel], weights, damping, max_iters, tol, branch)
        conv = es <= tol
        q[sel] = np.where(conv[:, None, None], qs, bq)
        err[sel] = np.where(conv, es, be)
        statuses[sel] = np.where(conv, CONVERGED, NO_CONVERGENCE)
    theta_l = np.full(targets.shape[0], geometry.lateral_default)
    return _configs_from(q, base_poses, theta_l), statuses, err


def weighted_ik(geometry: LegGeometry, desired_paw_positions, base_pose, initial_guess: RobotConfiguration,
                weights=1.0, max_iters=100, tol=1e-6, damping=1e-4, branch=1) -> RobotConfiguration:
    """Solve for leg angles putting each paw at its body-frame target.

    Raises OutOfWorkspace before iterating if a target is outside the annulus,
    and NoConvergence (carrying the best iterate) if tol is not met.
    """
    targets = np.asarray(desired_paw_positions, float)[None]
    guess = RobotConfiguration(
        base_x=initial_guess.base_x, base_z=initial_guess.base_z, base_pitch=initial_guess.base_pitch,
        legs=[LegJointState(*(np.atleast_1d(np.asarray(v, float)) for v in
                              (l.theta_it, l.theta_ot, l.theta_ik, l.theta_ok, l.theta_l)))
              for l in initial_guess.legs],
    )
    configs, statuses, err = batch_ik(geometry, targets, np.asarray(base_pose, float)[None], guess,
                                      weights=weights, damping=damping, max_iters=max_iters, tol=tol, branch=branch)
    result = _squeeze(configs)
    if statuses[0] == OUT_OF_WORKSPACE:
        raise OutOfWorkspace("paw target outside the reachable annulus")
    if statuses[0] == NO_CONVERGENCE:
        raise NoConvergence(max_iters, float(err[0]), best=result)
    return result


def _squeeze(configs: RobotConfiguration) -> RobotConfiguration:
    legs = [LegJointState(**{k: np.asarray(getattr(l, k))[0] for k in ("theta_it", "theta_ot", "theta_ik", "theta_ok", "theta_l")})
            for l in configs.legs]
    return RobotConfiguration(base_x=np.asarray(configs.base_x)[0], base_z=np.asarray(configs.base_z)[0],
                              base_pitch=np.asarray(configs.base_pitch)[0], legs=legs)


def stacked_residual(geometry: LegGeometry, config: RobotConfiguration, desired_paw_positions) -> np.ndarray:
    """Full stacked constraint vector (all ckc residuals, then all paw errors)."""
    hips = np.asarray(geometry.hip_positions, float)
    ckc, paw = [], []
    for i, leg in enumerate(config.legs):
        p_ia, p_oa, p_paw = forward_points(geometry, leg)
        ckc.append(p_ia - p_oa)
        paw.append(hips[i] + p_paw - np.asarray(desired_paw_positions, float)[..., i, :])
    return np.concatenate(ckc + paw, axis=-1)


def default_stance(geometry: LegGeometry, opening: float = 120.0 * DEG, n_legs: int = 2, batch=None) -> RobotConfiguration:
    """Symmetric closed configuration with both thighs at half the opening angle."""
    half = 0.5 * opening
    shape = () if batch is None else (batch,)
    a = np.full(shape, half)
    legs = [closed_leg(geometry, a, a.copy()) for _ in range(n_legs)]
    _, _, paw = forward_points(geometry, legs[0])
    z = -float(np.asarray(paw)[..., 1].ravel()[0])
    return RobotConfiguration(base_x=np.zeros(shape), base_z=np.full(shape, z), base_pitch=np.zeros(shape), legs=legs)
