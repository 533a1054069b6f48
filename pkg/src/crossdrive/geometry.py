"""Paths, reference trajectories, and reference windows.

A Path is a densely sampled polyline with arc-length bookkeeping and unit
tangents. Scenario builders assemble paths from straight segments and circular
arcs; both the ego reference and the routes of surrounding vehicles are Paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_SPACING = 0.5


class PathBuilder:
    """Assembles a path from straights and arcs, then samples it uniformly."""

    def __init__(self, x: float, y: float, heading: float):
        self._pts = [(x, y)]
        self._heading = heading

    @property
    def heading(self) -> float:
        return self._heading

    def line(self, length: float, n: int | None = None) -> "PathBuilder":
        if length <= 0.0:
            raise ValueError("segment length must be positive")
        if n is None:
            n = max(2, int(math.ceil(length / DEFAULT_SPACING)) + 1)
        x0, y0 = self._pts[-1]
        c, s = math.cos(self._heading), math.sin(self._heading)
        for i in range(1, n):
            t = length * i / (n - 1)
            self._pts.append((x0 + c * t, y0 + s * t))
        return self

    def arc(self, radius: float, angle: float, n: int | None = None) -> "PathBuilder":
        """Turn through `angle` radians (positive = left) along a circle."""
        if radius <= 0.0 or angle == 0.0:
            raise ValueError("radius must be positive and angle nonzero")
        length = abs(angle) * radius
        if n is None:
            n = max(8, int(math.ceil(length / DEFAULT_SPACING)) + 1)
        x0, y0 = self._pts[-1]
        side = 1.0 if angle > 0.0 else -1.0
        cx = x0 - side * radius * math.sin(self._heading)
        cy = y0 + side * radius * math.cos(self._heading)
        phi0 = math.atan2(y0 - cy, x0 - cx)
        for i in range(1, n):
            phi = phi0 + angle * i / (n - 1)
            self._pts.append((cx + radius * math.cos(phi), cy + radius * math.sin(phi)))
        self._heading += angle
        return self

    def build(self, spacing: float = DEFAULT_SPACING) -> "Path":
        return Path.from_waypoints(np.asarray(self._pts, dtype=float), spacing=spacing)


class Path:
    """Uniformly resampled polyline with arc length and unit tangents."""

    def __init__(self, points: np.ndarray):
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != 2 or points.shape[0] < 2:
            raise ValueError("a path needs at least two 2-d points")
        seg = np.diff(points, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len <= 0.0):
            raise ValueError("path points must be strictly advancing")
        self.points = points
        self.s = np.concatenate([[0.0], np.cumsum(seg_len)])
        # Tangent per sample: segment directions averaged at interior points.
        tan = np.empty_like(points)
        unit = seg / seg_len[:, None]
        tan[0] = unit[0]
        tan[-1] = unit[-1]
        if len(points) > 2:
            mid = unit[:-1] + unit[1:]
            norm = np.hypot(mid[:, 0], mid[:, 1])
            norm[norm == 0.0] = 1.0
            tan[1:-1] = mid / norm[:, None]
        self.tangents = tan

    @classmethod
    def from_waypoints(cls, waypoints: np.ndarray, spacing: float = DEFAULT_SPACING) -> "Path":
        """Resample a waypoint polyline at (approximately) uniform arc spacing."""
        waypoints = np.asarray(waypoints, dtype=float)
        seg = np.diff(waypoints, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        keep = seg_len > 1e-12
        if not np.all(keep):
            waypoints = np.concatenate([waypoints[:1], waypoints[1:][keep]])
            seg = np.diff(waypoints, axis=0)
            seg_len = np.hypot(seg[:, 0], seg[:, 1])
        s = np.concatenate([[0.0], np.cumsum(seg_len)])
        total = s[-1]
        n = max(2, int(round(total / spacing)) + 1)
        su = np.linspace(0.0, total, n)
        x = np.interp(su, s, waypoints[:, 0])
        y = np.interp(su, s, waypoints[:, 1])
        return cls(np.column_stack([x, y]))

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def sample_at(self, s: float) -> tuple[float, float, float, float, float]:
        """Position, heading, and unit tangent at arc length s (clamped to the path).

        Returns (x, y, heading, tan_x, tan_y).
        """
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.s, s, side="right")) - 1
        i = min(max(i, 0), len(self.s) - 2)
        ds = self.s[i + 1] - self.s[i]
        t = (s - self.s[i]) / ds
        x = self.points[i, 0] + t * (self.points[i + 1, 0] - self.points[i, 0])
        y = self.points[i, 1] + t * (self.points[i + 1, 1] - self.points[i, 1])
        tx = self.tangents[i, 0] + t * (self.tangents[i + 1, 0] - self.tangents[i, 0])
        ty = self.tangents[i, 1] + t * (self.tangents[i + 1, 1] - self.tangents[i, 1])
        norm = math.hypot(tx, ty)
        tx, ty = tx / norm, ty / norm
        return x, y, math.atan2(ty, tx), tx, ty

    def project(self, x: float, y: float) -> tuple[float, float]:
        """Arc length and distance of the closest point on the path to (x, y)."""
        p = self.points
        a = p[:-1]
        d = p[1:] - a
        seg_len2 = d[:, 0] ** 2 + d[:, 1] ** 2
        t = ((x - a[:, 0]) * d[:, 0] + (y - a[:, 1]) * d[:, 1]) / seg_len2
        t = np.clip(t, 0.0, 1.0)
        px = a[:, 0] + t * d[:, 0]
        py = a[:, 1] + t * d[:, 1]
        dist2 = (px - x) ** 2 + (py - y) ** 2
        i = int(np.argmin(dist2))
        s = self.s[i] + t[i] * math.sqrt(seg_len2[i])
        return float(s), float(math.sqrt(dist2[i]))

    def distance_to(self, x: float, y: float) -> float:
        return self.project(x, y)[1]


@dataclass(frozen=True)
class ReferenceWindow:
    """N+1 reference samples handed to the tracking controller.

    Positions are produced by integrating the active speed profile along the
    path; v_ref holds that profile. Tangents are unit vectors.
    """

    x: np.ndarray
    y: np.ndarray
    v_ref: np.ndarray
    theta: np.ndarray
    tan_x: np.ndarray
    tan_y: np.ndarray

    def __len__(self) -> int:
        return len(self.x)


class ReferenceTrajectory:
    """A Path annotated with a reference speed.

    Exposes window extraction for the receding-horizon controller and progress
    tracking for episode bookkeeping.
    """

    def __init__(self, path: Path, nominal_speed: float):
        if nominal_speed <= 0.0:
            raise ValueError("nominal speed must be positive")
        self.path = path
        self.nominal_speed = nominal_speed

    @property
    def length(self) -> float:
        return self.path.length

    def project(self, x: float, y: float) -> tuple[float, float]:
        return self.path.project(x, y)

    def start_state(self) -> tuple[float, float, float]:
        x, y, heading, _, _ = self.path.sample_at(0.0)
        return x, y, heading

    def window(self, s0: float, n_samples: int, ts: float, speed_profile: np.ndarray) -> ReferenceWindow:
        """Extract n_samples references starting at arc length s0.

        Sample k+1 sits speed_profile[k] * ts further along the path than
        sample k, so lowering the profile slows the reference itself down.
        Past the path end, samples saturate at the final point.
        """
        profile = np.asarray(speed_profile, dtype=float)
        if len(profile) != n_samples:
            raise ValueError("speed profile length must equal the window length")
        xs = np.empty(n_samples)
        ys = np.empty(n_samples)
        ths = np.empty(n_samples)
        txs = np.empty(n_samples)
        tys = np.empty(n_samples)
        s = s0
        for k in range(n_samples):
            xs[k], ys[k], ths[k], txs[k], tys[k] = self.path.sample_at(s)
            if k + 1 < n_samples:
                s = s + profile[k] * ts
        return ReferenceWindow(xs, ys, profile.copy(), ths, txs, tys)

    def constant_profile(self, n_samples: int, speed: float | None = None) -> np.ndarray:
        return np.full(n_samples, self.nominal_speed if speed is None else speed, dtype=float)
