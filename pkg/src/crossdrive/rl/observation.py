"""Fixed-size observation vector for the policy networks.

Ten vehicle slots of eight features each (ego first, then the nearest nine
by distance, zero-padded), followed by six scalar context features. All
features are normalized by fixed ranges and softly clipped to [-1.2, 1.2].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import math

import numpy as np

from ..dynamics import VehicleState

FEATURES_PER_VEHICLE = 8
VEHICLE_SLOTS = 10
CONTEXT_FEATURES = 6
OBS_DIM = VEHICLE_SLOTS * FEATURES_PER_VEHICLE + CONTEXT_FEATURES


@dataclass(frozen=True)
class ObsConfig:
    v_max: float = 10.0
    position_range: float = 100.0
    distance_range: float = 50.0
    max_neighbors: int = VEHICLE_SLOTS - 1
    clip_limit: float = 1.2

    def __post_init__(self):
        if self.v_max <= 0.0 or self.position_range <= 0.0:
            raise ValueError("ranges must be positive")
        if self.distance_range <= 0.0:
            raise ValueError("distance range must be positive")
        if self.max_neighbors < 0:
            raise ValueError("neighbor count must be nonnegative")


def _vehicle_features(state: VehicleState, cfg: ObsConfig) -> np.ndarray:
    vx = state.v * math.cos(state.theta)
    vy = state.v * math.sin(state.theta)
    return np.array([
        1.0,
        state.x / cfg.position_range,
        state.y / cfg.position_range,
        vx / (2.0 * cfg.v_max),
        vy / (2.0 * cfg.v_max),
        state.theta / math.pi,
        math.sin(state.theta),
        math.cos(state.theta),
    ])


def build_observation(ego: VehicleState, traffic: Sequence[VehicleState],
                      progress_fraction: float, time_remaining_fraction: float,
                      conflict_distance: float | None = None,
                      cfg: ObsConfig = ObsConfig()) -> np.ndarray:
    """86-dim observation: ego slot, nearest neighbors, context scalars.

    conflict_distance is the distance from the ego to the nearest predicted
    conflict point, or None when the safety layer reports no conflict.
    """
    out = np.zeros(OBS_DIM)
    out[:FEATURES_PER_VEHICLE] = _vehicle_features(ego, cfg)

    dists = np.array([math.hypot(s.x - ego.x, s.y - ego.y) for s in traffic])
    order = np.argsort(dists, kind="stable")[:cfg.max_neighbors]
    for slot, idx in enumerate(order, start=1):
        lo = slot * FEATURES_PER_VEHICLE
        out[lo:lo + FEATURES_PER_VEHICLE] = _vehicle_features(traffic[idx], cfg)

    nearest = float(dists[order[0]]) if len(order) else math.inf
    d_min = min(max(nearest / cfg.distance_range, 0.0), 1.0)
    if conflict_distance is None:
        d_conflict = 1.0
    else:
        d_conflict = min(max(conflict_distance / cfg.distance_range, 0.0), 1.0)

    ctx = OBS_DIM - CONTEXT_FEATURES
    out[ctx + 0] = ego.v / cfg.v_max
    out[ctx + 1] = progress_fraction
    out[ctx + 2] = d_min
    out[ctx + 3] = d_conflict
    out[ctx + 4] = len(order) / max(cfg.max_neighbors, 1)
    out[ctx + 5] = time_remaining_fraction
    return np.clip(out, -cfg.clip_limit, cfg.clip_limit)
