"""Surrounding-vehicle population: spawning and route-following motion.

Traffic vehicles track their assigned route exactly, regulate speed with a
bounded-acceleration gap controller against the next vehicle on the same
route, and are blind to the ego and to crossing traffic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .collision import footprints_overlap
from .dynamics import VehicleParams, VehicleState
from .scenario import Scenario

TARGET_SPEED_RANGE = (7.0, 10.0)
ACCEL_BOUNDS = (-5.0, 1.5)
GAP_STANDSTILL = 6.0
GAP_TIME = 1.0
K_SPEED = 1.5
K_GAP = 0.5
K_LEAD = 1.0

EGO_CLEAR_RADIUS = 25.0
SPAWN_CLEAR_RADIUS = 10.0
MAX_PLACEMENT_TRIES = 40


@dataclass
class SurroundingVehicle:
    """One traffic vehicle pinned to a route at arc-length progress s."""

    route_index: int
    s: float
    speed: float
    target_speed: float
    params: VehicleParams

    def state(self, scenario: Scenario) -> VehicleState:
        x, y, heading, _, _ = scenario.routes[self.route_index].sample_at(self.s)
        return VehicleState(x, y, heading, self.speed)


def _blocked(candidate: SurroundingVehicle, scenario: Scenario,
             traffic: list[SurroundingVehicle], ego: VehicleState | None) -> bool:
    cs = candidate.state(scenario)
    if ego is not None and (cs.x - ego.x) ** 2 + (cs.y - ego.y) ** 2 < EGO_CLEAR_RADIUS**2:
        return True
    for other in traffic:
        os = other.state(scenario)
        if (cs.x - os.x) ** 2 + (cs.y - os.y) ** 2 < SPAWN_CLEAR_RADIUS**2:
            return True
        if footprints_overlap(cs, candidate.params, os, other.params):
            return True
    return False


def place_initial_traffic(
    scenario: Scenario,
    count: int,
    rng: np.random.Generator,
    ego: VehicleState,
    params: VehicleParams,
) -> tuple[list[SurroundingVehicle], int]:
    """Scatter `count` vehicles over random routes with random progress.

    Keeps a clear zone around the ego start and rejects overlapping
    placements; a vehicle whose placement cannot be resolved is skipped.
    Returns (vehicles, skipped count).
    """
    traffic: list[SurroundingVehicle] = []
    skipped = 0
    for _ in range(count):
        placed = False
        for _ in range(MAX_PLACEMENT_TRIES):
            pool = scenario.spawn_route_indices
            route_index = pool[int(rng.integers(len(pool)))]
            route = scenario.routes[route_index]
            s = float(rng.uniform(0.0, max(route.length - params.length, 1.0)))
            target = float(rng.uniform(*TARGET_SPEED_RANGE))
            cand = SurroundingVehicle(route_index, s, target, target, params)
            if not _blocked(cand, scenario, traffic, ego):
                traffic.append(cand)
                placed = True
                break
        if not placed:
            skipped += 1
    return traffic, skipped


def try_spawn(
    scenario: Scenario,
    traffic: list[SurroundingVehicle],
    rng: np.random.Generator,
    ego: VehicleState,
    params: VehicleParams,
) -> SurroundingVehicle | None:
    """One spawn attempt at the entry of a random spawnable route.

    The randomness is always consumed in the same order regardless of the
    outcome, keeping episode streams reproducible. Returns the new vehicle or
    None when the entry is blocked.
    """
    route_index = scenario.spawn_route_indices[int(rng.integers(len(scenario.spawn_route_indices)))]
    target = float(rng.uniform(*TARGET_SPEED_RANGE))
    cand = SurroundingVehicle(route_index, 0.0, target, target, params)
    # Entry spawns only need local clearance, not the reset-time ego zone.
    if _blocked(cand, scenario, traffic, None):
        return None
    cs = cand.state(scenario)
    if (cs.x - ego.x) ** 2 + (cs.y - ego.y) ** 2 < SPAWN_CLEAR_RADIUS**2:
        return None
    traffic.append(cand)
    return cand


def advance_traffic(scenario: Scenario, traffic: list[SurroundingVehicle], ts: float) -> None:
    """Advance every vehicle one step; vehicles finishing their route vanish.

    Accelerations are computed from a frozen snapshot, then applied, so the
    update is independent of list order.
    """
    accels = []
    for veh in traffic:
        leader = None
        for other in traffic:
            if other is veh or other.route_index != veh.route_index or other.s <= veh.s:
                continue
            if leader is None or other.s < leader.s:
                leader = other
        a = K_SPEED * (veh.target_speed - veh.speed)
        if leader is not None:
            gap = leader.s - veh.s - veh.params.length
            desired = GAP_STANDSTILL + GAP_TIME * veh.speed
            a = min(a, K_GAP * (gap - desired) + K_LEAD * (leader.speed - veh.speed))
        accels.append(min(max(a, ACCEL_BOUNDS[0]), ACCEL_BOUNDS[1]))

    finished = []
    for veh, a in zip(traffic, accels):
        veh.s += veh.speed * ts
        veh.speed = max(veh.speed + a * ts, 0.0)
        if veh.s >= scenario.routes[veh.route_index].length:
            finished.append(veh)
    for veh in finished:
        traffic.remove(veh)
