"""Footprint overlap and off-road tests.

Vehicles are oriented rectangles centered on their state position. Overlap is
decided by the separating-axis theorem; a rectangle pair only needs the four
edge normals (two per rectangle) as candidate axes.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

from .dynamics import VehicleParams, VehicleState
from .geometry import Path


def _corners(x: float, y: float, theta: float, length: float, width: float):
    c, s = math.cos(theta), math.sin(theta)
    hl, hw = 0.5 * length, 0.5 * width
    return [
        (x + c * dx - s * dy, y + s * dx + c * dy)
        for dx, dy in ((hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw))
    ]


def rectangles_overlap(
    pose_a: tuple[float, float, float],
    size_a: tuple[float, float],
    pose_b: tuple[float, float, float],
    size_b: tuple[float, float],
) -> bool:
    """Separating-axis overlap test for two oriented rectangles.

    pose is (x, y, theta); size is (length, width). Touching counts as overlap.
    """
    # Cheap circle prune before the axis projections.
    ra = 0.5 * math.hypot(*size_a)
    rb = 0.5 * math.hypot(*size_b)
    dx, dy = pose_b[0] - pose_a[0], pose_b[1] - pose_a[1]
    if dx * dx + dy * dy > (ra + rb) ** 2:
        return False

    ca = _corners(*pose_a, *size_a)
    cb = _corners(*pose_b, *size_b)
    for theta in (pose_a[2], pose_b[2]):
        for ax, ay in ((math.cos(theta), math.sin(theta)), (-math.sin(theta), math.cos(theta))):
            pa = [ax * px + ay * py for px, py in ca]
            pb = [ax * px + ay * py for px, py in cb]
            if max(pa) < min(pb) or max(pb) < min(pa):
                return False
    return True


def footprints_overlap(
    a: VehicleState, params_a: VehicleParams, b: VehicleState, params_b: VehicleParams
) -> bool:
    return rectangles_overlap(
        (a.x, a.y, a.theta),
        (params_a.length, params_a.width),
        (b.x, b.y, b.theta),
        (params_b.length, params_b.width),
    )


def check_collision(
    ego: VehicleState,
    ego_params: VehicleParams,
    others: Iterable[tuple[VehicleState, VehicleParams]],
) -> bool:
    """True if the ego footprint overlaps any other footprint."""
    return any(footprints_overlap(ego, ego_params, s, p) for s, p in others)


def check_offroad(ego: VehicleState, lanes: Sequence[Path], lane_width: float) -> bool:
    """True iff the ego center is strictly more than lane_width from every centerline.

    The drivable region is the union of lane corridors of half-width
    lane_width/2; leaving it by more than lane_width/2 means the center is more
    than lane_width from the nearest centerline. Exactly at that distance is
    still on-road.
    """
    d = min(lane.distance_to(ego.x, ego.y) for lane in lanes)
    return d > lane_width
