"""Single-rigid-body projectile predictions used to densify jump rewards."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NeverReaches(ValueError):
    """The ballistic arc stays above the requested landing height."""


@dataclass
class BallisticState:
    x: np.ndarray | float
    z: np.ndarray | float
    vx: np.ndarray | float
    vz: np.ndarray | float
    gravity: float = 9.81

    def __post_init__(self):
        if not self.gravity > 0:
            raise ValueError("gravity must be > 0")


def estimate_apex(b: BallisticState):
    """Peak height of the arc; the current height once the body is descending."""
    vz_up = np.maximum(np.asarray(b.vz, float), 0.0)
    return np.asarray(b.z, float) + vz_up * vz_up / (2.0 * b.gravity)


def _landing_terms(b: BallisticState, landing_height):
    z = np.asarray(b.z, float)
    vz = np.asarray(b.vz, float)
    disc = vz * vz + 2.0 * b.gravity * (z - np.asarray(landing_height, float))
    return vz, disc


def estimate_landing(b: BallisticState, landing_height):
    """(x_land, t_land) where the descending arc crosses ``landing_height``.

    Raises NeverReaches when the apex is below ``landing_height``.
    """
    vz, disc = _landing_terms(b, landing_height)
    if np.any(disc < 0):
        raise NeverReaches("landing height above the apex of the arc")
    t = (vz + np.sqrt(disc)) / b.gravity
    return np.asarray(b.x, float) + np.asarray(b.vx, float) * t, t


def estimate_landing_masked(b: BallisticState, landing_height):
    """Vectorized variant: returns (x_land, t_land, valid) without raising."""
    vz, disc = _landing_terms(b, landing_height)
    valid = disc >= 0
    t = (vz + np.sqrt(np.where(valid, disc, 0.0))) / b.gravity
    x = np.asarray(b.x, float) + np.asarray(b.vx, float) * t
    return np.where(valid, x, np.asarray(b.x, float)), np.where(valid, t, 0.0), valid
