"""Road layouts: a four-arm unsignalized intersection and a highway on-ramp merge.

Each builder returns a Scenario holding the lane centerlines (used for the
off-road test), the routes surrounding traffic may follow, and the ego's
reference trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .geometry import Path, PathBuilder, ReferenceTrajectory

INTERSECTION = "intersection"
MERGE = "merge"

SCENARIO_CODES = {INTERSECTION: 0, MERGE: 1}


@dataclass
class Scenario:
    """One road network plus the ego's task on it."""

    name: str
    lanes: list[Path]
    routes: list[Path]
    ego_ref: ReferenceTrajectory
    lane_width: float
    start_speed: float = 0.0
    spawn_route_indices: list[int] = field(default_factory=list)

    @property
    def code(self) -> int:
        return SCENARIO_CODES[self.name]


def build_intersection(
    lane_width: float = 4.0,
    nominal_speed: float = 10.0,
    arm_length: float = 60.0,
    lane_offset: float = 2.0,
    turn_radius: float = 9.0,
) -> Scenario:
    """Four perpendicular arms; ego approaches from the south and turns left.

    Right-hand traffic: the northbound lane sits at x=+lane_offset, southbound
    at -lane_offset, eastbound at y=-lane_offset, westbound at +lane_offset.
    """
    L = arm_length
    o = lane_offset
    northbound = PathBuilder(o, -L, math.pi / 2).line(2 * L).build()
    southbound = PathBuilder(-o, L, -math.pi / 2).line(2 * L).build()
    eastbound = PathBuilder(-L, -o, 0.0).line(2 * L).build()
    westbound = PathBuilder(L, o, math.pi).line(2 * L).build()
    routes = [northbound, southbound, eastbound, westbound]

    # Left turn: north up the x=+o lane, quarter arc, west out the y=+o lane.
    ego_path = (
        PathBuilder(o, -35.0, math.pi / 2)
        .line(35.0 - (turn_radius - o))  # north to the arc entry at y=-(turn_radius-o)
        .arc(turn_radius, math.pi / 2)
        .line(38.0)
        .build()
    )
    ego_ref = ReferenceTrajectory(ego_path, nominal_speed)
    lanes = routes + [ego_path]
    return Scenario(
        name=INTERSECTION,
        lanes=lanes,
        routes=routes,
        ego_ref=ego_ref,
        lane_width=lane_width,
        # Traffic never reacts to the ego, so vehicles sharing its entry lane
        # would rear-end it whenever it yields; spawn on the other arms only.
        spawn_route_indices=[1, 2, 3],
    )


def build_merge(
    lane_width: float = 4.0,
    nominal_speed: float = 10.0,
    main_start: float = -90.0,
    main_end: float = 60.0,
    ramp_drop: float = 8.0,
    blend_radius: float = 60.0,
) -> Scenario:
    """Straight eastbound main lane at y=0 with an on-ramp joining from the south.

    The ego reference runs up the ramp, levels onto the main centerline, and
    ends in the main lane. Traffic lives on the main lane only.
    """
    main = PathBuilder(main_start, 0.0, 0.0).line(main_end - main_start).build()

    phi = math.atan2(ramp_drop, 60.0)
    rise_on_arc = blend_radius * (1.0 - math.cos(phi))
    line_len = (ramp_drop - rise_on_arc) / math.sin(phi)
    ego_path = (
        PathBuilder(-80.0, -ramp_drop, phi)
        .line(line_len)
        .arc(blend_radius, -phi)
        .line(10.0 - (-80.0 + line_len * math.cos(phi) + blend_radius * math.sin(phi)))
        .build()
    )
    ego_ref = ReferenceTrajectory(ego_path, nominal_speed)
    return Scenario(
        name=MERGE,
        lanes=[main, ego_path],
        routes=[main],
        ego_ref=ego_ref,
        lane_width=lane_width,
        # An on-ramp is entered rolling; the intersection approach starts
        # from a standstill at the arm entrance.
        start_speed=nominal_speed,
        spawn_route_indices=[0],
    )


def build_scenario(name: str, lane_width: float = 4.0, nominal_speed: float = 10.0) -> Scenario:
    if name == INTERSECTION:
        return build_intersection(lane_width=lane_width, nominal_speed=nominal_speed)
    if name == MERGE:
        return build_merge(lane_width=lane_width, nominal_speed=nominal_speed)
    raise ValueError(f"unknown scenario: {name!r}")
