"""Mapping between normalized policy actions and physical quantities."""

from __future__ import annotations

import numpy as np


def scale_action(alpha: float, v_max: float = 10.0) -> float:
    """Speed-reference multiplier in [-1, 1] to a reference speed in m/s."""
    return v_max * (float(alpha) + 1.0) / 2.0


def scale_control(action: np.ndarray,
                  accel_bounds: tuple[float, float] = (-5.0, 3.0),
                  steer_bounds: tuple[float, float] = (-0.6, 0.6)) -> tuple[float, float]:
    """2-d end-to-end action in [-1, 1]^2 to (acceleration, steering angle)."""
    a_lo, a_hi = accel_bounds
    d_lo, d_hi = steer_bounds
    alpha, beta = float(action[0]), float(action[1])
    accel = a_lo + (alpha + 1.0) / 2.0 * (a_hi - a_lo)
    steer = d_lo + (beta + 1.0) / 2.0 * (d_hi - d_lo)
    return accel, steer
