"""Episode simulation: ego stepping, traffic, spawning, and termination.

One TrafficEnv instance runs one episode at a time. All stochasticity flows
from a single seeded generator, so identical (seed, config) pairs reproduce
identical episodes step for step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dynamics
from .collision import check_collision, check_offroad
from .dynamics import ControlInput, VehicleParams, VehicleState
from .scenario import Scenario
from .traffic import SurroundingVehicle, advance_traffic, place_initial_traffic, try_spawn

TS = 0.1
ARRIVAL_TOLERANCE = 2.0

DIFFICULTY_CODES = {"easy": 0, "moderate": 1, "hard": 2}

# (initial_vehicle_count, spawn_probability) per (scenario, difficulty).
DIFFICULTY_PRESETS = {
    ("intersection", "easy"): (2, 0.1),
    ("intersection", "moderate"): (5, 0.3),
    ("intersection", "hard"): (10, 0.6),
    ("merge", "easy"): (1, 0.0),
    ("merge", "moderate"): (2, 0.0),
    ("merge", "hard"): (4, 0.0),
}

SUCCESS = "success"
COLLISION = "collision"
OFFROAD = "offroad"
TIMEOUT = "timeout"


class EpisodeTerminatedError(RuntimeError):
    """Raised when step() is called after the episode has ended."""


@dataclass(frozen=True)
class TrafficConfig:
    initial_vehicle_count: int
    spawn_probability: float
    max_episode_steps: int = 130

    def __post_init__(self) -> None:
        if self.initial_vehicle_count < 0:
            raise ValueError("initial_vehicle_count must be >= 0")
        if not 0.0 <= self.spawn_probability <= 1.0:
            raise ValueError("spawn_probability must be in [0, 1]")
        if self.max_episode_steps < 1:
            raise ValueError("max_episode_steps must be >= 1")

    @classmethod
    def preset(cls, scenario_name: str, difficulty: str, max_episode_steps: int = 130) -> "TrafficConfig":
        key = (scenario_name, difficulty.lower())
        if key not in DIFFICULTY_PRESETS:
            raise ValueError(f"no preset for {key}")
        count, prob = DIFFICULTY_PRESETS[key]
        return cls(count, prob, max_episode_steps)


@dataclass(frozen=True)
class EpisodeOutcome:
    kind: str
    step: int
    mean_speed: float
    min_clearance: float


def episode_seed(base_seed: int, scenario_code: int, difficulty_code: int, episode_index: int) -> np.random.SeedSequence:
    """Seed stream for one episode; identical across controllers by construction."""
    return np.random.SeedSequence([base_seed, scenario_code, difficulty_code, episode_index])


class TrafficEnv:
    """Single-episode simulator for one scenario."""

    def __init__(
        self,
        scenario: Scenario,
        cfg: TrafficConfig,
        seed: int | np.random.SeedSequence = 0,
        ego_params: VehicleParams | None = None,
        traffic_params: VehicleParams | None = None,
    ):
        self.scenario = scenario
        self.cfg = cfg
        self.ego_params = ego_params or VehicleParams()
        self.traffic_params = traffic_params or VehicleParams()
        self._seed = seed
        self.reset()

    def reset(self) -> VehicleState:
        self.rng = np.random.default_rng(self._seed)
        x, y, heading = self.scenario.ego_ref.start_state()
        self.ego = VehicleState(x, y, heading, self.scenario.start_speed)
        self.traffic, self.placement_skips = place_initial_traffic(
            self.scenario, self.cfg.initial_vehicle_count, self.rng, self.ego, self.traffic_params
        )
        self.t = 0
        self.progress = 0.0
        self.outcome: EpisodeOutcome | None = None
        self.spawn_attempts = self.cfg.initial_vehicle_count
        self.spawn_skips = self.placement_skips
        self._speed_sum = 0.0
        self._min_clearance = float("inf")
        return self.ego

    @property
    def done(self) -> bool:
        return self.outcome is not None

    @property
    def time_remaining_fraction(self) -> float:
        return max(1.0 - self.t / self.cfg.max_episode_steps, 0.0)

    def traffic_states(self) -> list[VehicleState]:
        return [v.state(self.scenario) for v in self.traffic]

    def clearance(self) -> float:
        """Center distance to the nearest traffic vehicle; inf when alone."""
        best = float("inf")
        for s in self.traffic_states():
            d = np.hypot(s.x - self.ego.x, s.y - self.ego.y)
            best = min(best, float(d))
        return best

    def step(self, ego_input: ControlInput) -> EpisodeOutcome | None:
        """Advance one control interval; returns the outcome once terminal."""
        if self.done:
            raise EpisodeTerminatedError("episode already terminated")

        self.ego = dynamics.step(self.ego, ego_input, TS, self.ego_params)
        advance_traffic(self.scenario, self.traffic, TS)
        if self.cfg.spawn_probability > 0.0:
            if self.rng.random() < self.cfg.spawn_probability:
                self.spawn_attempts += 1
                if try_spawn(self.scenario, self.traffic, self.rng, self.ego, self.traffic_params) is None:
                    self.spawn_skips += 1
        self.t += 1

        s_proj, _ = self.scenario.ego_ref.project(self.ego.x, self.ego.y)
        self.progress = max(self.progress, s_proj)
        self._speed_sum += self.ego.v
        self._min_clearance = min(self._min_clearance, self.clearance())

        kind = None
        others = [(v.state(self.scenario), v.params) for v in self.traffic]
        if check_collision(self.ego, self.ego_params, others):
            kind = COLLISION
        elif check_offroad(self.ego, self.scenario.lanes, self.scenario.lane_width):
            kind = OFFROAD
        elif self.progress >= self.scenario.ego_ref.length - ARRIVAL_TOLERANCE:
            kind = SUCCESS
        elif self.t >= self.cfg.max_episode_steps:
            kind = TIMEOUT
        if kind is not None:
            self.outcome = EpisodeOutcome(
                kind=kind,
                step=self.t,
                mean_speed=self._speed_sum / self.t,
                min_clearance=self._min_clearance,
            )
        return self.outcome
