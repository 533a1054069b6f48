"""TTC-triggered speed-reference override.

Surrounding vehicles are extrapolated at constant velocity; wherever a
predicted path crosses the ego's planned path, the time for the ego to come
within a proximity threshold of the crossing point is the time-to-collision.
A TTC under the threshold swaps the speed reference for a linear ramp to zero.

Crossing detection covers two geometries: transversal polyline intersections,
and same-corridor conflicts (a leader ahead in the ego's lane, or traffic
converging into it at a merge) where the paths run near-parallel and never
properly cross. Vehicles following directly behind the ego are excluded:
braking cannot resolve a threat from behind.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import VehicleState


@dataclass(frozen=True)
class SafetyConfig:
    prediction_horizon: int = 20
    dt: float = 0.1
    d_min: float = 4.0
    ttc_threshold: float = 3.0
    k_stop: int = 10
    corridor_width: float = 2.0
    follower_cos: float = 0.7

    def __post_init__(self) -> None:
        if min(self.prediction_horizon, self.dt, self.d_min, self.ttc_threshold, self.k_stop) <= 0:
            raise ValueError("safety parameters must be positive")


CROSSING = "crossing"
CORRIDOR = "corridor"


@dataclass(frozen=True)
class ConflictReport:
    per_vehicle_ttc: tuple  # float seconds or None, in input order
    conflict_point: tuple[float, float] | None
    min_ttc: float | None
    triggered: bool
    conflict_vehicle: int | None = None
    conflict_kind: str | None = None  # CROSSING or CORRIDOR for the min conflict


def predict_constant_velocity(state: VehicleState, horizon: int, dt: float) -> np.ndarray:
    """(horizon+1, 2) future positions under frozen speed and heading."""
    k = np.arange(horizon + 1)
    x = state.x + state.v * math.cos(state.theta) * dt * k
    y = state.y + state.v * math.sin(state.theta) * dt * k
    return np.column_stack([x, y])


def _polyline_dir(points: np.ndarray) -> np.ndarray | None:
    d = points[-1] - points[0]
    n = float(np.hypot(d[0], d[1]))
    if n < 1e-9:
        return None
    return d / n


def _segment_intersections(plan: np.ndarray, pred: np.ndarray) -> np.ndarray:
    """Proper crossings between two polylines, as an (n, 2) point array."""
    p1 = plan[:-1]
    d1 = plan[1:] - p1
    q1 = pred[:-1]
    d2 = pred[1:] - q1
    den = d1[:, None, 0] * d2[None, :, 1] - d1[:, None, 1] * d2[None, :, 0]
    dq = q1[None, :, :] - p1[:, None, :]
    num_t = dq[:, :, 0] * d2[None, :, 1] - dq[:, :, 1] * d2[None, :, 0]
    num_s = dq[:, :, 0] * d1[:, None, 1] - dq[:, :, 1] * d1[:, None, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = num_t / den
        s = num_s / den
    hit = (np.abs(den) > 1e-12) & (t >= 0.0) & (t <= 1.0) & (s >= 0.0) & (s <= 1.0)
    if not hit.any():
        return np.empty((0, 2))
    ti, tj = np.nonzero(hit)
    return p1[ti] + t[ti, tj, None] * d1[ti]

def _corridor_candidates(plan: np.ndarray, pred: np.ndarray, width: float) -> np.ndarray:
    """Predicted positions that come within `width` of the planned path.

    Only vehicles moving along the local plan direction qualify (a leader
    ahead, or traffic converging at a merge); transversal traffic that skims
    the corridor is the crossing detector's business. Stationary vehicles
    block the corridor regardless of heading.
    """
    a = plan[:-1]
    d = plan[1:] - a
    len2 = np.maximum((d**2).sum(axis=1), 1e-18)
    rel = pred[:, None, :] - a[None, :, :]
    t = np.clip((rel * d[None, :, :]).sum(axis=2) / len2[None, :], 0.0, 1.0)
    closest = a[None, :, :] + t[:, :, None] * d[None, :, :]
    dist2 = ((pred[:, None, :] - closest) ** 2).sum(axis=2)
    near = dist2.min(axis=1) <= width * width
    pdir = _polyline_dir(pred)
    if pdir is None:
        return pred[near]
    seg_dir = d / np.sqrt(len2)[:, None]
    nearest_seg = dist2.argmin(axis=1)
    aligned = seg_dir[nearest_seg] @ pdir > 0.7
    return pred[near & aligned]


def _ttc_for_points(plan: np.ndarray, points: np.ndarray, d_min: float, dt: float) -> tuple[float, tuple[float, float]] | None:
    if len(points) == 0:
        return None
    dist = np.hypot(plan[:, None, 0] - points[None, :, 0], plan[:, None, 1] - points[None, :, 1])
    within = dist <= d_min
    best = None
    for j in range(points.shape[0]):
        ks = np.nonzero(within[:, j])[0]
        if len(ks) == 0:
            continue
        ttc = float(ks[0]) * dt
        if best is None or ttc < best[0]:
            best = (ttc, (float(points[j, 0]), float(points[j, 1])))
    return best


def compute_ttc(
    ego_plan: np.ndarray,
    predictions: list[np.ndarray],
    cfg: SafetyConfig,
    corridor_limit: int | None = None,
) -> ConflictReport:
    """Scan every vehicle's predicted path against the ego's planned one.

    ego_plan and each prediction are (n, 2) position polylines. The report is
    independent of the order vehicles are listed in (min over vehicles).
    corridor_limit restricts same-corridor (leader) conflicts to the first
    samples of the plan, so a long lookahead for transversal crossings does
    not turn distant lane leaders into stop triggers.
    """
    ego_plan = np.asarray(ego_plan, dtype=float)
    corridor_plan = ego_plan if corridor_limit is None else ego_plan[:corridor_limit]
    ego_dir = _polyline_dir(ego_plan)
    per_vehicle: list[float | None] = []
    min_ttc = None
    conflict_point = None
    conflict_vehicle = None
    conflict_kind = None
    for i, pred in enumerate(predictions):
        pred = np.asarray(pred, dtype=float)
        if ego_dir is not None:
            v_dir = _polyline_dir(pred)
            if v_dir is not None and float(v_dir @ ego_dir) > cfg.follower_cos:
                rel = pred[0] - ego_plan[0]
                e_par = float(rel @ ego_dir)
                e_perp = float(-rel[0] * ego_dir[1] + rel[1] * ego_dir[0])
                if e_par < 0.0 and abs(e_perp) < cfg.corridor_width:
                    per_vehicle.append(None)
                    continue
        best = None
        kind = None
        for points, label in (
            (_segment_intersections(ego_plan, pred), CROSSING),
            (_corridor_candidates(corridor_plan, pred, cfg.corridor_width), CORRIDOR),
        ):
            cand = _ttc_for_points(ego_plan, points, cfg.d_min, cfg.dt)
            if cand is not None and (best is None or cand[0] < best[0]):
                best = cand
                kind = label
        if best is None:
            per_vehicle.append(None)
            continue
        ttc, point = best
        per_vehicle.append(ttc)
        if min_ttc is None or ttc < min_ttc:
            min_ttc = ttc
            conflict_point = point
            conflict_vehicle = i
            conflict_kind = kind
    triggered = min_ttc is not None and min_ttc < cfg.ttc_threshold
    return ConflictReport(tuple(per_vehicle), conflict_point, min_ttc, triggered,
                          conflict_vehicle, conflict_kind)


def modulate_reference(
    v_current: float, report: ConflictReport, cfg: SafetyConfig, n_samples: int
) -> np.ndarray | None:
    """Linear ramp from the current speed to zero when a conflict triggered.

    Returns the override speed profile for the reference window, or None when
    the report is untriggered (upstream reference stands).
    """
    if not report.triggered:
        return None
    k = np.arange(n_samples)
    profile = v_current * (1.0 - k / cfg.k_stop)
    return np.maximum(profile, 0.0)
