"""Shared run configuration loaded from YAML files.

One file configures the environment, the MPC weights and bounds, and the
safety layer for every command. The flat top-level keys cover the scenario
and traffic; the optional ``mpc`` and ``safety`` mappings override individual
fields of the respective configs. Anything left out keeps its default, and
traffic density left unset follows the difficulty preset.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .env import DIFFICULTY_CODES, TrafficConfig
from .mpc import MPCConfig
from .pipeline import default_safety_config
from .safety import SafetyConfig
from .scenario import SCENARIO_CODES


class ConfigError(ValueError):
    """Unreadable, malformed, or invalid configuration."""


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs to reconstruct an environment.

    initial_vehicle_count and spawn_probability default to None, meaning the
    per-difficulty preset applies; setting either pins that value across all
    difficulties, which is usually only wanted in ablation runs.
    """

    scenario: str = "intersection"
    difficulty: str = "hard"
    initial_vehicle_count: int | None = None
    spawn_probability: float | None = None
    max_episode_steps: int = 130
    seed: int = 0
    lane_width_m: float = 4.0
    nominal_speed_mps: float = 10.0
    mpc: MPCConfig = field(default_factory=MPCConfig)
    safety: SafetyConfig = field(default_factory=default_safety_config)

    def __post_init__(self) -> None:
        if self.scenario not in SCENARIO_CODES:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.difficulty.lower() not in DIFFICULTY_CODES:
            raise ConfigError(f"unknown difficulty {self.difficulty!r}")
        if self.max_episode_steps < 1:
            raise ConfigError("max_episode_steps must be >= 1")
        if self.lane_width_m <= 0.0 or self.nominal_speed_mps <= 0.0:
            raise ConfigError("lane width and nominal speed must be positive")
        if self.initial_vehicle_count is not None and self.initial_vehicle_count < 0:
            raise ConfigError("initial_vehicle_count must be >= 0")
        if self.spawn_probability is not None and not 0.0 <= self.spawn_probability <= 1.0:
            raise ConfigError("spawn_probability must be in [0, 1]")

    def traffic(self) -> TrafficConfig:
        """Explicit density keys win; unset ones follow the preset."""
        preset = TrafficConfig.preset(self.scenario, self.difficulty,
                                      self.max_episode_steps)
        count = (preset.initial_vehicle_count
                 if self.initial_vehicle_count is None
                 else self.initial_vehicle_count)
        prob = (preset.spawn_probability
                if self.spawn_probability is None
                else self.spawn_probability)
        return TrafficConfig(count, prob, self.max_episode_steps)


def _build_section(name: str, default, data: dict):
    valid = {f.name for f in dataclasses.fields(default)}
    unknown = sorted(set(data) - valid)
    if unknown:
        raise ConfigError(f"unknown {name} config keys: {', '.join(unknown)}")
    try:
        return dataclasses.replace(default, **data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name} config: {exc}") from exc


_SCALAR_KEYS = {
    "scenario": str,
    "difficulty": str,
    "initial_vehicle_count": int,
    "spawn_probability": float,
    "max_episode_steps": int,
    "seed": int,
    "lane_width_m": float,
    "nominal_speed_mps": float,
}


def parse_config(data: dict, source: str = "<config>") -> RunConfig:
    """Builds a RunConfig from a parsed mapping, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: config must be a mapping")
    data = dict(data)
    sections = {}
    for name, default in (("mpc", MPCConfig()),
                          ("safety", default_safety_config())):
        raw = data.pop(name, None)
        if raw is None:
            sections[name] = default
            continue
        if not isinstance(raw, dict):
            raise ConfigError(f"{source}: {name} section must be a mapping")
        sections[name] = _build_section(name, default, raw)

    unknown = sorted(set(data) - set(_SCALAR_KEYS))
    if unknown:
        raise ConfigError(f"{source}: unknown config keys: {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if value is None:
            continue
        caster = _SCALAR_KEYS[key]
        try:
            kwargs[key] = caster(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: bad value for {key}: {value!r}") from exc
    try:
        return RunConfig(mpc=sections["mpc"], safety=sections["safety"], **kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_config(path: str | Path) -> RunConfig:
    """Reads and validates a YAML config file."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {p}: {exc.strerror or exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config file {p}: {exc}") from exc
    if data is None:
        data = {}
    return parse_config(data, source=str(p))
