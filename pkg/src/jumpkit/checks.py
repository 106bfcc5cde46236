"""Fast self-check suite run by ``jumpkit check``.

Each check is seeded and finishes in well under a second or two, so the
report is reproducible run to run.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .actuation import ActuatorParams, FilterParams, predictive_filter, pd_torque, project_sum
from .ballistics import BallisticState, estimate_apex, estimate_landing
from .geometry import (CONVERGED, LegGeometry, LegJointState, batch_ik, ckc_jacobian,
                       ckc_residual, closed_leg, default_stance, in_workspace, paw_and_jacobian)
from .rewards import kernel_exp, kernel_laplace
from .sim import SimParams, make_state, step

DEG = math.pi / 180.0


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def random_closed_angles(geometry: LegGeometry, rng, n: int, margin: float = 5 * DEG):
    """Actuated thigh pairs inside the joint and sum limits whose chain closes."""
    lo, hi = geometry.transversal_limits
    s_lo, s_hi = geometry.transversal_sum_bounds
    out = np.empty((0, 2))
    while out.shape[0] < n:
        cand = rng.uniform(lo + margin, hi - margin, (4 * n, 2))
        s = cand.sum(-1)
        cand = cand[(s > s_lo + margin) & (s < s_hi - margin)]
        _, _, ok = paw_and_jacobian(geometry, cand[:, 0], cand[:, 1])
        out = np.concatenate([out, cand[ok]])
    return out[:n]


def check_ik_roundtrip(geometry: LegGeometry, n: int = 200, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    # reachable = closed chain with the paw inside the annulus pre-filter
    ang = random_closed_angles(geometry, rng, 4 * n)
    paw, _, _ = paw_and_jacobian(geometry, ang[:, 0], ang[:, 1])
    paw = paw[in_workspace(geometry, paw)][:2 * n].reshape(n, 2, 2)
    targets = paw + np.asarray(geometry.hip_positions, float)[:2]
    guess = default_stance(geometry, batch=n)
    _, status, err = batch_ik(geometry, targets, np.zeros((n, 3)), guess)
    rate = float(np.mean((status == CONVERGED) & (err <= 1e-6)))
    return CheckResult("ik_roundtrip", rate >= 0.99, f"{rate:.1%} of {n} targets converged to 1e-6 m")


def check_jacobian_fd(geometry: LegGeometry, n: int = 50, seed: int = 1) -> CheckResult:
    rng = np.random.default_rng(seed)
    ang = random_closed_angles(geometry, rng, n)
    leg = closed_leg(geometry, ang[:, 0], ang[:, 1])
    q = leg.as_array()
    J = ckc_jacobian(geometry, leg)
    h = 1e-6
    worst = 0.0
    for k in range(5):
        dq = np.zeros(5)
        dq[k] = h
        rp = ckc_residual(geometry, LegJointState.from_array(q + dq))
        rm = ckc_residual(geometry, LegJointState.from_array(q - dq))
        worst = max(worst, float(np.max(np.abs((rp - rm) / (2 * h) - J[..., k]))))
    return CheckResult("jacobian_fd", worst < 1e-5, f"max |J - FD| = {worst:.2e}")


def check_filter_fuzz(geometry: LegGeometry, actuator: ActuatorParams | None = None,
                      filt: FilterParams | None = None, steps: int = 5000, seed: int = 2) -> CheckResult:
    """Unloaded joints driven through the filter by random targets far outside the limits."""
    actuator = actuator or ActuatorParams()
    filt = filt or FilterParams(sum_bounds=geometry.transversal_sum_bounds)
    rng = np.random.default_rng(seed)
    lo, hi = geometry.transversal_limits
    lo, hi = np.tile(lo, 2), np.tile(hi, 2)
    n = 64
    q = rng.uniform(lo + 0.2, hi - 0.2, (n, 4))
    q[:, 1] = np.minimum(q[:, 1], filt.sum_bounds[1] - q[:, 0] - 0.01)
    q[:, 3] = np.minimum(q[:, 3], filt.sum_bounds[1] - q[:, 2] - 0.01)
    v = np.zeros((n, 4))
    dt = 0.001
    worst = 0.0
    sum_ok = True
    target = q.copy()
    for k in range(steps):
        if k % 16 == 0:
            target = rng.uniform(lo - 1.5, hi + 1.5, (n, 4))
        if k % 2 == 0:
            safe = predictive_filter(target, q, v, lo, hi, filt)
            s = safe[:, [0, 2]] + safe[:, [1, 3]]
            sum_ok &= bool(np.all((s >= filt.sum_bounds[0]) & (s <= filt.sum_bounds[1])))
        tau = pd_torque(safe, q, v, actuator)
        v = v + dt * tau / actuator.armature
        q = q + dt * v
        worst = max(worst, float(np.max(np.maximum(q - hi, lo - q))))
    far = np.full((8, 4), 40 * DEG)
    identity = np.array_equal(predictive_filter(far, far, np.zeros_like(far), lo, hi, filt), far)
    ok = worst <= 0.5 * DEG and sum_ok and identity
    return CheckResult("filter_fuzz", ok, f"max excess {worst / DEG:.3f} deg over {steps} steps, "
                       f"sum bound exact: {sum_ok}, pass-through identity: {identity}")


def check_ballistic(sim: SimParams | None = None) -> CheckResult:
    sim = sim or SimParams()
    g = sim.gravity
    # apex at vz0 / g = 0.31 s, so the whole 0.2 s window is on the rising branch
    z0, vz0, vx0 = 2.0, 3.0, 0.7
    q = np.full(4, 60 * DEG)
    state = make_state([[0.0, z0]], 0.0, [vx0, vz0], 0.0, q, geometry=sim.geometry)
    worst = 0.0
    apex_pred = float(estimate_apex(BallisticState(0.0, z0, vx0, vz0, g)))
    drift = 0.0
    for k in range(200):
        state = step(state, np.zeros((1, 4)), 0.001, sim)
        t = (k + 1) * 0.001
        z = z0 + vz0 * t - 0.5 * g * t * t
        worst = max(worst, abs(float(state.pos[0, 1]) - z))
        b = BallisticState(state.pos[0, 0], state.pos[0, 1], state.vel[0, 0], state.vel[0, 1], g)
        drift = max(drift, abs(float(estimate_apex(b)) - apex_pred))
    x_land, _ = estimate_landing(BallisticState(0.0, z0, vx0, vz0, g), 0.5)
    t_land = (vz0 + math.sqrt(vz0 ** 2 + 2 * g * (z0 - 0.5))) / g
    land_err = abs(float(x_land) - vx0 * t_land)
    ok = worst <= 1e-4 and drift <= 1e-3 and land_err <= 1e-9
    return CheckResult("ballistic_oracle", ok, f"free-flight z error {worst:.2e} m, apex drift {drift:.2e} m")


def check_kernels(seed: int = 3) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=100)
    ok = bool(np.allclose(kernel_exp(x, 0.3), kernel_exp(-x, 0.3)) and kernel_exp(0.0, 0.3) == 1.0
              and np.all(kernel_exp(x, 0.3) <= 1.0) and np.allclose(kernel_laplace(x, 0.3), np.exp(-np.abs(x) / 0.3)))
    a, b = rng.uniform(-2, 4, (2, 100))
    pa, pb = project_sum(a, b, (-20 * DEG, 150 * DEG))
    qa, qb = project_sum(pa, pb, (-20 * DEG, 150 * DEG))
    ok &= bool(np.array_equal(pa, qa) and np.array_equal(pb, qb))
    return CheckResult("kernel_identities", ok, "Gaussian/Laplace kernels and sum projection idempotence")


def run_checks(geometry: LegGeometry | None = None, actuator: ActuatorParams | None = None,
               filt: FilterParams | None = None, sim: SimParams | None = None) -> list[CheckResult]:
    geometry = geometry or LegGeometry()
    return [
        check_ik_roundtrip(geometry),
        check_jacobian_fd(geometry),
        check_filter_fuzz(geometry, actuator, filt),
        check_ballistic(sim),
        check_kernels(),
    ]
