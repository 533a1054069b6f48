"""Shaped step reward plus sparse terminal rewards.

Episode-ending events carry a flat terminal reward and suppress the shaped
components entirely; a timeout is not an event in that sense, so the final
step of a timed-out episode still earns the shaped reward.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..env import COLLISION, OFFROAD, SUCCESS

TERMINAL_REWARDS = {COLLISION: -50.0, OFFROAD: -10.0, SUCCESS: 20.0}


@dataclass(frozen=True)
class RewardBreakdown:
    alive: float
    speed: float
    proximity: float
    smooth: float
    center: float
    terminal: float

    @property
    def total(self) -> float:
        return (self.alive + self.speed + self.proximity + self.smooth
                + self.center + self.terminal)


def compute_reward(speed: float, d_min: float, accel_change: float,
                   lateral_offset: float, terminal_kind: str | None = None,
                   v_max: float = 10.0, a_max: float = 5.0,
                   lane_width: float = 4.0) -> RewardBreakdown:
    """Reward for one step.

    d_min is the normalized nearest-vehicle distance feature from the
    observation (1.0 when the road is clear); the proximity penalty only
    activates strictly below 0.5. terminal_kind is one of the episode
    outcome constants, or None mid-episode and on timeout.
    """
    if terminal_kind in TERMINAL_REWARDS:
        return RewardBreakdown(0.0, 0.0, 0.0, 0.0, 0.0,
                               TERMINAL_REWARDS[terminal_kind])
    alive = 0.2
    speed_term = 1.5 * min(speed / v_max, 1.5)
    proximity = -2.0 * (1.0 - 2.0 * d_min) ** 2 if d_min < 0.5 else 0.0
    smooth = -0.3 * abs(accel_change) / a_max
    center = 0.3 * max(0.0, 1.0 - abs(lateral_offset) / (lane_width / 2.0))
    return RewardBreakdown(alive, speed_term, proximity, smooth, center, 0.0)
