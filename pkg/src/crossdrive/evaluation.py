"""Batch experiments, outcome statistics, exact tests, and runtime benchmarks.

Every (difficulty, episode index) cell derives one seed shared by all
controllers, so the methods face identical traffic realizations; pairing is
part of the protocol and stated in the report header. Episodes fan out over a
process pool and are reduced single-threaded in submission order, which keeps
results files deterministic for a fixed spec regardless of worker count.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .config import RunConfig
from .env import COLLISION, DIFFICULTY_CODES, OFFROAD, SUCCESS, TIMEOUT
from .pipeline import (Controller, EpisodeRecord, PipelineState, control_step,
                       make_env, run_episode)

OUTCOME_KINDS = (SUCCESS, COLLISION, OFFROAD, TIMEOUT)
POOLED = "pooled"

STAR_THRESHOLDS = ((0.001, "***"), (0.01, "**"), (0.05, "*"))


def significance_stars(p: float) -> str:
    for threshold, stars in STAR_THRESHOLDS:
        if p < threshold:
            return stars
    return ""


@dataclass(frozen=True)
class ExperimentSpec:
    """One batch: a scenario, difficulty levels, controllers, and seeds."""

    scenario: str
    difficulties: tuple[str, ...]
    controllers: tuple[tuple[str, Controller], ...]
    episodes: int
    base_seed: int
    run_cfg: RunConfig = field(default_factory=RunConfig)

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if not self.controllers:
            raise ValueError("need at least one controller")
        labels = [label for label, _ in self.controllers]
        if len(set(labels)) != len(labels):
            raise ValueError("controller labels must be unique")
        for difficulty in self.difficulties:
            if difficulty.lower() not in DIFFICULTY_CODES:
                raise ValueError(f"unknown difficulty {difficulty!r}")


@dataclass
class CellCounts:
    success: int = 0
    collision: int = 0
    offroad: int = 0
    timeout: int = 0

    @property
    def episodes(self) -> int:
        return self.success + self.collision + self.offroad + self.timeout

    def add(self, kind: str) -> None:
        setattr(self, kind, getattr(self, kind) + 1)

    def count(self, kind: str) -> int:
        return getattr(self, kind)

    def rate(self, kind: str) -> float:
        n = self.episodes
        return getattr(self, kind) / n if n else 0.0

    def merged(self, other: "CellCounts") -> "CellCounts":
        return CellCounts(self.success + other.success,
                          self.collision + other.collision,
                          self.offroad + other.offroad,
                          self.timeout + other.timeout)


@dataclass
class OutcomeTable:
    """Counts per (controller label, difficulty), plus pooled views."""

    scenario: str
    episodes_per_cell: int
    cells: dict[tuple[str, str], CellCounts] = field(default_factory=dict)

    def cell(self, label: str, difficulty: str) -> CellCounts:
        return self.cells.setdefault((label, difficulty.lower()), CellCounts())

    def pooled(self, label: str) -> CellCounts:
        total = CellCounts()
        for (cell_label, _), counts in sorted(self.cells.items()):
            if cell_label == label:
                total = total.merged(counts)
        return total

    def labels(self) -> list[str]:
        seen: list[str] = []
        for label, _ in self.cells:
            if label not in seen:
                seen.append(label)
        return seen

    def difficulties(self) -> list[str]:
        seen: list[str] = []
        for _, difficulty in self.cells:
            if difficulty not in seen:
                seen.append(difficulty)
        return seen


@dataclass(frozen=True)
class EpisodeFailure:
    label: str
    difficulty: str
    episode_index: int
    error: str


@dataclass
class ExperimentResult:
    table: OutcomeTable
    records: list[EpisodeRecord]
    failures: list[EpisodeFailure]


_WORKER: dict = {}


def _init_worker(spec: ExperimentSpec) -> None:
    _WORKER["spec"] = spec
    _WORKER["controllers"] = dict(spec.controllers)


def _run_cell_episode(label: str, difficulty: str, index: int):
    spec: ExperimentSpec = _WORKER["spec"]
    controller: Controller = _WORKER["controllers"][label]
    return _run_episode_for(spec, controller, difficulty, index)


def _run_episode_for(spec: ExperimentSpec, controller: Controller,
                     difficulty: str, index: int) -> EpisodeRecord:
    cfg = replace(spec.run_cfg, scenario=spec.scenario, difficulty=difficulty)
    return run_episode(spec.scenario, difficulty, controller, spec.base_seed,
                       episode_index=index, traffic_cfg=cfg.traffic(),
                       lane_width=cfg.lane_width_m,
                       nominal_speed=cfg.nominal_speed_mps,
                       max_episode_steps=cfg.max_episode_steps)


def run_experiment(spec: ExperimentSpec, workers: int = 1, record_sink=None,
                   keep_records: bool = True) -> ExperimentResult:
    """Runs every (controller, difficulty, episode) cell of the spec.

    record_sink, when given, receives each EpisodeRecord in deterministic
    (difficulty, episode, controller) order; keep_records=False drops records
    after sinking so arbitrarily large batches stay in bounded memory. An
    episode that fails outright is recorded as a failure and skipped in the
    table; the batch always runs to completion.
    """
    table = OutcomeTable(spec.scenario, spec.episodes)
    for label, _ in spec.controllers:
        for difficulty in spec.difficulties:
            table.cell(label, difficulty)
    records: list[EpisodeRecord] = []
    failures: list[EpisodeFailure] = []

    jobs = [(label, difficulty, index)
            for difficulty in spec.difficulties
            for index in range(spec.episodes)
            for label, _ in spec.controllers]

    def consume(label, difficulty, index, outcome):
        if isinstance(outcome, EpisodeRecord):
            table.cell(label, difficulty).add(outcome.outcome)
            if record_sink is not None:
                record_sink(outcome)
            if keep_records:
                records.append(outcome)
        else:
            failures.append(EpisodeFailure(label, difficulty.lower(), index,
                                           str(outcome)))

    if workers <= 1:
        controllers = dict(spec.controllers)
        for label, difficulty, index in jobs:
            try:
                record = _run_episode_for(spec, controllers[label],
                                          difficulty, index)
            except Exception as exc:
                record = f"{type(exc).__name__}: {exc}"
            consume(label, difficulty, index, record)
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(spec,)) as pool:
            futures = [pool.submit(_run_cell_episode, *job) for job in jobs]
            for (label, difficulty, index), future in zip(jobs, futures):
                try:
                    record = future.result()
                except Exception as exc:
                    record = f"{type(exc).__name__}: {exc}"
                consume(label, difficulty, index, record)

    return ExperimentResult(table, records, failures)


def fisher_exact(table) -> float:
    """Two-sided exact p-value for a 2x2 contingency table.

    Enumerates the hypergeometric distribution over all tables with the
    observed margins and sums the probabilities no larger than the observed
    table's. Arithmetic is exact rational, so ties are decided exactly;
    degenerate tables with a zero margin return 1.0.
    """
    (a, b), (c, d) = table
    cells = (a, b, c, d)
    if any(int(v) != v or v < 0 for v in cells):
        raise ValueError("table entries must be nonnegative integers")
    a, b, c, d = (int(v) for v in cells)
    row1, row2 = a + b, c + d
    col1 = a + c
    n = row1 + row2
    if row1 == 0 or row2 == 0 or col1 == 0 or col1 == n:
        return 1.0
    denom = math.comb(n, col1)

    def prob(k: int) -> Fraction:
        return Fraction(math.comb(row1, k) * math.comb(row2, col1 - k), denom)

    observed = prob(a)
    lo = max(0, col1 - row2)
    hi = min(row1, col1)
    total = sum((p for k in range(lo, hi + 1)
                 if (p := prob(k)) <= observed), Fraction(0))
    return min(float(total), 1.0)


@dataclass(frozen=True)
class Comparison:
    controller_a: str
    controller_b: str
    difficulty: str
    metric: str
    delta: float  # rate_a - rate_b, percentage points
    p_value: float

    @property
    def stars(self) -> str:
        return significance_stars(self.p_value)


def compare_controllers(table: OutcomeTable,
                        metrics: tuple[str, ...] = (SUCCESS, COLLISION)) -> list[Comparison]:
    """Pairwise metric-vs-rest Fisher tests, per difficulty and pooled."""
    labels = table.labels()
    rows = [(d, None) for d in table.difficulties()]
    if len(table.difficulties()) > 1:
        rows.append((POOLED, None))
    out: list[Comparison] = []
    for i, label_a in enumerate(labels):
        for label_b in labels[i + 1:]:
            for difficulty, _ in rows:
                if difficulty == POOLED:
                    cell_a, cell_b = table.pooled(label_a), table.pooled(label_b)
                else:
                    cell_a = table.cell(label_a, difficulty)
                    cell_b = table.cell(label_b, difficulty)
                if cell_a.episodes == 0 or cell_b.episodes == 0:
                    continue
                for metric in metrics:
                    k_a, n_a = cell_a.count(metric), cell_a.episodes
                    k_b, n_b = cell_b.count(metric), cell_b.episodes
                    p = fisher_exact([[k_a, n_a - k_a], [k_b, n_b - k_b]])
                    delta = 100.0 * (k_a / n_a - k_b / n_b)
                    out.append(Comparison(label_a, label_b, difficulty,
                                          metric, delta, p))
    return out


def format_report(table: OutcomeTable,
                  comparisons: list[Comparison] | None = None) -> str:
    """Human-readable outcome table plus pairwise significance lines."""
    if not table.cells:
        return ""
    lines = [
        f"scenario: {table.scenario}   episodes per cell: {table.episodes_per_cell}",
        "seeding: paired (every controller sees the same traffic per episode index)",
        "",
        f"{'difficulty':<10} {'controller':<12} {'succ':>5} {'coll':>5} "
        f"{'offrd':>5} {'tmout':>5} {'succ%':>7} {'coll%':>7}",
    ]
    difficulties = table.difficulties()
    rows = list(difficulties)
    if len(difficulties) > 1:
        rows.append(POOLED)
    for difficulty in rows:
        for label in table.labels():
            cell = (table.pooled(label) if difficulty == POOLED
                    else table.cell(label, difficulty))
            if cell.episodes == 0:
                continue
            lines.append(
                f"{difficulty:<10} {label:<12} {cell.success:>5} {cell.collision:>5} "
                f"{cell.offroad:>5} {cell.timeout:>5} "
                f"{100 * cell.rate(SUCCESS):>6.1f}% {100 * cell.rate(COLLISION):>6.1f}%")
    if comparisons:
        lines.append("")
        lines.append(f"{'difficulty':<10} {'pair':<26} {'metric':<10} "
                     f"{'delta':>7} {'p':>10}  sig")
        for cmp in comparisons:
            pair = f"{cmp.controller_a} vs {cmp.controller_b}"
            lines.append(
                f"{cmp.difficulty:<10} {pair:<26} {cmp.metric:<10} "
                f"{cmp.delta:>+6.1f}% {cmp.p_value:>10.4g}  {cmp.stars}")
        lines.append("significance: * p<0.05, ** p<0.01, *** p<0.001")
    return "\n".join(lines) + "\n"


def results_records(table: OutcomeTable,
                    comparisons: list[Comparison] | None = None) -> list[dict]:
    """Machine-readable rows: outcome cells (incl. pooled), then comparisons."""
    out: list[dict] = []
    difficulties = table.difficulties()
    rows = list(difficulties)
    if len(difficulties) > 1:
        rows.append(POOLED)
    for difficulty in rows:
        for label in table.labels():
            cell = (table.pooled(label) if difficulty == POOLED
                    else table.cell(label, difficulty))
            if cell.episodes == 0:
                continue
            out.append({
                "record": "outcomes",
                "scenario": table.scenario,
                "difficulty": difficulty,
                "controller": label,
                "success": cell.success,
                "collision": cell.collision,
                "offroad": cell.offroad,
                "timeout": cell.timeout,
                "episodes": cell.episodes,
            })
    for cmp in comparisons or []:
        out.append({
            "record": "comparison",
            "scenario": table.scenario,
            "difficulty": cmp.difficulty,
            "controller_a": cmp.controller_a,
            "controller_b": cmp.controller_b,
            "metric": cmp.metric,
            "delta": cmp.delta,
            "p_value": cmp.p_value,
            "stars": cmp.stars,
        })
    return out


def write_results(path: str | Path, table: OutcomeTable,
                  comparisons: list[Comparison] | None = None) -> None:
    rows = results_records(table, comparisons)
    Path(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n"
                                  for r in rows))


@dataclass(frozen=True)
class RuntimeStats:
    mean_ms: float
    std_ms: float
    median_ms: float
    samples: int


def bench_runtime(controller: Controller, scenario: str = "intersection",
                  n_steps: int = 100, warmup: int = 10,
                  difficulty: str = "hard", base_seed: int = 0,
                  run_cfg: RunConfig | None = None) -> RuntimeStats:
    """Wall-clock statistics of control_step alone, in milliseconds.

    Environment stepping sits outside the timed span, and the first warmup
    calls are discarded (they include cold caches and an unseeded warm
    start). Episodes are restarted as needed until enough samples exist.
    """
    cfg = run_cfg or RunConfig()
    cfg = replace(cfg, scenario=scenario, difficulty=difficulty)
    times: list[float] = []
    episode_index = 0
    env = None
    state = None
    while len(times) < warmup + n_steps:
        if env is None or env.done:
            env = make_env(scenario, difficulty, base_seed, episode_index,
                           traffic_cfg=cfg.traffic(),
                           lane_width=cfg.lane_width_m,
                           nominal_speed=cfg.nominal_speed_mps,
                           max_episode_steps=cfg.max_episode_steps)
            state = PipelineState()
            episode_index += 1
        t0 = time.perf_counter()
        inp, _ = control_step(env, controller, state)
        times.append((time.perf_counter() - t0) * 1e3)
        env.step(inp)
    samples = np.array(times[warmup:])
    return RuntimeStats(float(samples.mean()), float(samples.std()),
                        float(np.median(samples)), len(samples))
