"""Kinematic bicycle model.

Continuous dynamics with slip angle, discretized by forward Euler. The same
scalar transition is used by the simulator and by the tracking controller's
internal rollouts, so predictions and simulated motion agree bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    m = theta % TWO_PI
    return m if m <= math.pi else m - TWO_PI


@dataclass(frozen=True)
class VehicleParams:
    """Geometry of one vehicle.

    Attributes:
        wheelbase: distance between axles [m].
        rear_axle_to_cg: distance from the rear axle to the center of gravity [m].
        length: footprint length [m].
        width: footprint width [m].
    """

    wheelbase: float = 2.5
    rear_axle_to_cg: float = 1.25
    length: float = 5.0
    width: float = 2.0

    def __post_init__(self) -> None:
        if not (0.0 < self.rear_axle_to_cg < self.wheelbase):
            raise ValueError("rear_axle_to_cg must lie strictly inside the wheelbase")
        if self.length <= 0.0 or self.width <= 0.0:
            raise ValueError("length and width must be positive")


@dataclass(frozen=True)
class VehicleState:
    """Planar pose plus longitudinal speed.

    heading is kept in (-pi, pi]; speed is never negative (no reverse gear).
    """

    x: float
    y: float
    theta: float
    v: float


@dataclass(frozen=True)
class ControlInput:
    """Longitudinal acceleration [m/s^2] and front steering angle [rad]."""

    a: float
    delta: float


def slip_angle(delta: float, params: VehicleParams) -> float:
    """Slip angle induced by steering geometry: arctan((l_r/L) tan delta)."""
    return math.atan(params.rear_axle_to_cg / params.wheelbase * math.tan(delta))


def _step_scalar(
    x: float,
    y: float,
    theta: float,
    v: float,
    a: float,
    delta: float,
    ts: float,
    wheelbase: float,
    rear_axle_to_cg: float,
) -> tuple[float, float, float, float]:
    # Shared by VehicleState stepping and the MPC's internal rollouts; any
    # change here changes both identically.
    beta = math.atan(rear_axle_to_cg / wheelbase * math.tan(delta))
    hdg = theta + beta
    x_next = x + v * math.cos(hdg) * ts
    y_next = y + v * math.sin(hdg) * ts
    theta_next = wrap_angle(theta + v / wheelbase * math.sin(beta) * ts)
    v_next = v + a * ts
    if v_next < 0.0:
        v_next = 0.0
    return x_next, y_next, theta_next, v_next


def step(state: VehicleState, inp: ControlInput, ts: float, params: VehicleParams) -> VehicleState:
    """Advance one sampling interval with forward Euler.

    The slip angle is retained in the discrete update. The returned heading is
    wrapped to (-pi, pi] and speed is floored at zero.
    """
    if ts <= 0.0:
        raise ValueError("sampling time must be positive")
    x, y, theta, v = _step_scalar(
        state.x, state.y, state.theta, state.v, inp.a, inp.delta, ts,
        params.wheelbase, params.rear_axle_to_cg,
    )
    return VehicleState(x, y, theta, v)


def rollout(
    state: VehicleState,
    inputs: Sequence[ControlInput],
    ts: float,
    params: VehicleParams,
) -> list[VehicleState]:
    """Apply a sequence of inputs; returns len(inputs)+1 states starting at `state`."""
    if len(inputs) == 0:
        raise ValueError("rollout needs at least one input")
    states = [state]
    for inp in inputs:
        states.append(step(states[-1], inp, ts, params))
    return states
