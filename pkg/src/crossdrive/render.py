"""Static vector frames of recorded episodes.

One SVG file per step, drawn from the per-step trace rows: road bands, the
ego reference path, vehicle footprints, and the committed MPC plan. Output
depends only on the record content, with all coordinates formatted at fixed
precision, so a rerun produces byte-identical files.
"""

from __future__ import annotations

import json
import math
from pathlib import Path as FilePath

from .dynamics import VehicleParams
from .pipeline import EpisodeRecord
from .scenario import SCENARIO_CODES, build_scenario

SCALE = 6.0  # px per meter
MARGIN = 8.0  # meters of canvas around the road extents

ROAD_COLOR = "#c9c9c9"
CENTERLINE_COLOR = "#9a9a9a"
REFERENCE_COLOR = "#2c6fbb"
PLAN_COLOR = "#1d8a46"
EGO_COLOR = "#3566a8"
TRAFFIC_COLOR = "#b0483f"
TEXT_COLOR = "#222222"


def _fmt(value: float) -> str:
    out = f"{value:.2f}"
    return "0.00" if out == "-0.00" else out


class _Canvas:
    """World-to-SVG mapping with the y axis flipped to point up."""

    def __init__(self, min_x, min_y, max_x, max_y):
        self.min_x = min_x - MARGIN
        self.max_y = max_y + MARGIN
        self.width = (max_x - min_x + 2 * MARGIN) * SCALE
        self.height = (max_y - min_y + 2 * MARGIN) * SCALE

    def point(self, x: float, y: float) -> str:
        return (f"{_fmt((x - self.min_x) * SCALE)},"
                f"{_fmt((self.max_y - y) * SCALE)}")

    def polyline(self, points, color, width, dashed=False, opacity=None) -> str:
        attrs = [f'points="{" ".join(self.point(x, y) for x, y in points)}"',
                 f'stroke="{color}"', f'stroke-width="{_fmt(width)}"',
                 'fill="none"', 'stroke-linecap="round"',
                 'stroke-linejoin="round"']
        if dashed:
            attrs.append('stroke-dasharray="6,5"')
        if opacity is not None:
            attrs.append(f'opacity="{opacity}"')
        return f"<polyline {' '.join(attrs)} />"

    def polygon(self, points, fill, opacity="0.85") -> str:
        pts = " ".join(self.point(x, y) for x, y in points)
        return (f'<polygon points="{pts}" fill="{fill}" opacity="{opacity}" '
                f'stroke="#333333" stroke-width="1.00" />')


def _footprint(x: float, y: float, theta: float, params: VehicleParams):
    c, s = math.cos(theta), math.sin(theta)
    hl, hw = params.length / 2.0, params.width / 2.0
    return [(x + c * dx - s * dy, y + s * dx + c * dy)
            for dx, dy in ((hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw))]


def _decimate(points, max_points: int = 200):
    step = max(1, len(points) // max_points)
    kept = list(points[::step])
    if tuple(kept[-1]) != tuple(points[-1]):
        kept.append(points[-1])
    return kept


def render_frame(scenario, row: dict, params: VehicleParams,
                 canvas: _Canvas) -> str:
    """One complete SVG document for one step row."""
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" '
        f'width="{_fmt(canvas.width)}" height="{_fmt(canvas.height)}" '
        f'viewBox="0 0 {_fmt(canvas.width)} {_fmt(canvas.height)}">',
        f'<rect width="100%" height="100%" fill="#f4f3ef" />',
    ]
    for lane in scenario.lanes:
        pts = _decimate(lane.points)
        parts.append(canvas.polyline(pts, ROAD_COLOR,
                                     scenario.lane_width * SCALE))
    for lane in scenario.lanes:
        pts = _decimate(lane.points)
        parts.append(canvas.polyline(pts, CENTERLINE_COLOR, 1.0))
    parts.append(canvas.polyline(_decimate(scenario.ego_ref.path.points),
                                 REFERENCE_COLOR, 1.5, dashed=True))

    plan = row.get("plan") or []
    if len(plan) >= 2:
        parts.append(canvas.polyline(plan, PLAN_COLOR, 2.0))

    for x, y, theta in row.get("others", []):
        parts.append(canvas.polygon(_footprint(x, y, theta, params),
                                    TRAFFIC_COLOR))
    ex, ey, etheta, ev = row["ego"]
    parts.append(canvas.polygon(_footprint(ex, ey, etheta, params), EGO_COLOR))

    v_ref = row.get("v_ref")
    hud = [f"step {row['step']}", f"v {_fmt(ev)} m/s"]
    if v_ref is not None:
        hud.append(f"v_ref {_fmt(v_ref)} m/s")
    if row.get("ttc_triggered"):
        hud.append("TTC")
    parts.append(f'<text x="10.00" y="20.00" fill="{TEXT_COLOR}" '
                 f'font-family="monospace" font-size="14">'
                 f'{"  ".join(hud)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_steps(scenario_name: str, rows: list[dict],
                 out_dir: str | FilePath, lane_width: float = 4.0,
                 params: VehicleParams | None = None) -> list[FilePath]:
    """Renders one frame per step row; returns the written paths in order."""
    scenario = build_scenario(scenario_name, lane_width)
    params = params or VehicleParams()
    xs = [p[0] for lane in scenario.lanes for p in lane.points]
    ys = [p[1] for lane in scenario.lanes for p in lane.points]
    canvas = _Canvas(min(xs), min(ys), max(xs), max(ys))

    out = FilePath(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for i, row in enumerate(rows):
        frame = render_frame(scenario, row, params, canvas)
        path = out / f"frame_{i:04d}.svg"
        path.write_text(frame)
        written.append(path)
    return written


def render_record(record: EpisodeRecord, out_dir: str | FilePath,
                  lane_width: float = 4.0) -> list[FilePath]:
    """Renders an in-memory EpisodeRecord's trace."""
    rows = [step.row() for step in record.trace]
    return render_steps(record.scenario, rows, out_dir, lane_width)


class RecordLoadError(ValueError):
    """The episode record file cannot be resolved into step rows."""


def _read_jsonl(path: FilePath) -> list[dict]:
    rows = []
    for line in path.read_text().splitlines():
        if line.strip():
            rows.append(json.loads(line))
    return rows


def load_episode_steps(record_path: str | FilePath,
                       episode_id: str | None = None):
    """Resolves a record file into (scenario_name, episode_id, step rows).

    Accepts either a per-step trace file, or an episode summary file whose
    trace sidecar (traces.jsonl next to it) carries the steps. With several
    episodes in the file, episode_id picks one; a lone episode needs no id.
    """
    path = FilePath(record_path)
    if not path.exists():
        raise RecordLoadError(f"no such episode record: {path}")
    rows = _read_jsonl(path)
    if not rows:
        raise RecordLoadError(f"episode record {path} is empty")

    if "step" not in rows[0]:
        # Summary lines: the steps live in the sidecar next to the file.
        ids = [r["episode_id"] for r in rows if "episode_id" in r]
        episode_id = _pick_episode(ids, episode_id, path)
        summary = next(r for r in rows if r.get("episode_id") == episode_id)
        scenario_name = summary.get("scenario", episode_id.split(":", 1)[0])
        sidecar = path.parent / "traces.jsonl"
        if not sidecar.exists():
            raise RecordLoadError(
                f"{path} holds episode summaries and no trace sidecar "
                f"{sidecar} exists")
        rows = [r for r in _read_jsonl(sidecar)
                if r.get("episode_id") == episode_id]
        if not rows:
            raise RecordLoadError(
                f"trace sidecar {sidecar} has no steps for {episode_id}")
    else:
        ids = list(dict.fromkeys(r.get("episode_id", "?") for r in rows))
        episode_id = _pick_episode(ids, episode_id, path)
        rows = [r for r in rows if r.get("episode_id", "?") == episode_id]
        scenario_name = episode_id.split(":", 1)[0]

    if scenario_name not in SCENARIO_CODES:
        raise RecordLoadError(
            f"cannot tell which scenario {episode_id!r} was recorded on")
    rows.sort(key=lambda r: r["step"])
    return scenario_name, episode_id, rows


def _pick_episode(ids: list[str], wanted: str | None, path: FilePath) -> str:
    unique = list(dict.fromkeys(ids))
    if wanted is not None:
        if wanted not in unique:
            raise RecordLoadError(f"{path} has no episode {wanted}")
        return wanted
    if len(unique) == 1:
        return unique[0]
    raise RecordLoadError(
        f"{path} holds {len(unique)} episodes; pick one with --episode-id "
        f"(e.g. {unique[0]})")
