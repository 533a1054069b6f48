"""Per-step control loop binding policy, safety layer, and tracking MPC.

Three controller kinds share one loop. PureMPC tracks the nominal reference
speed; MpcRl lets the policy pick the reference speed each step; both pass
through the TTC safety layer and the MPC. PurePPO maps the 2-d policy action
straight to actuator bounds with neither MPC nor safety layer.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import ControlInput, VehicleState
from .env import (COLLISION, DIFFICULTY_CODES, OFFROAD, SUCCESS, TIMEOUT,
                  TrafficConfig, TrafficEnv, episode_seed)
from .mpc import MPCConfig, MPCSolution, SolverStatus, solve
from .rl.actions import scale_action, scale_control
from .rl.nets import ENDTOEND, SPEEDREF
from .rl.observation import ObsConfig, build_observation
from .rl.reward import compute_reward
from .safety import (CROSSING, ConflictReport, SafetyConfig, compute_ttc,
                     modulate_reference, predict_constant_velocity)
from .scenario import build_scenario

PURE_MPC = "PureMPC"
PURE_PPO = "PurePPO"
MPC_RL = "MpcRl"
CONTROLLER_KINDS = (PURE_MPC, PURE_PPO, MPC_RL)


def default_safety_config() -> SafetyConfig:
    """Safety configuration as the pipeline runs it.

    The sweep must cover the extended TTC plan and the transit simulation,
    both of which look past the bare MPC window, hence the longer horizon
    than the safety module's own default.
    """
    return SafetyConfig(prediction_horizon=60)


@dataclass(frozen=True)
class Controller:
    """A controller kind plus its policy and layer configuration.

    The safety layer cannot be disabled for MpcRl: it is part of the method
    during training and evaluation alike. PureMPC accepts the toggle so the
    layer's effect can be isolated experimentally.
    """

    kind: str
    policy: object | None = None
    stochastic: bool = False
    safety_enabled: bool = True
    mpc_cfg: MPCConfig = field(default_factory=MPCConfig)
    safety_cfg: SafetyConfig = field(default_factory=default_safety_config)
    obs_cfg: ObsConfig = field(default_factory=ObsConfig)

    def __post_init__(self):
        if self.kind not in CONTROLLER_KINDS:
            raise ValueError(f"unknown controller kind {self.kind!r}")
        if self.kind == PURE_MPC:
            if self.policy is not None:
                raise ValueError("PureMPC takes no policy")
        else:
            if self.policy is None:
                raise ValueError(f"{self.kind} requires a policy")
            mode = getattr(self.policy, "mode", None)
            wanted = ENDTOEND if self.kind == PURE_PPO else SPEEDREF
            if mode != wanted:
                raise ValueError(f"{self.kind} requires a {wanted} policy, got {mode!r}")
        if self.kind == MPC_RL and not self.safety_enabled:
            raise ValueError("the safety layer cannot be disabled for MpcRl")


@dataclass
class PipelineState:
    """Mutable cross-step state owned by one episode."""

    warm_start: MPCSolution | None = None
    last_plan: np.ndarray | None = None
    last_report: ConflictReport | None = None
    last_yielding: bool = False
    yield_v0: float = 0.0
    yield_elapsed: int = 0
    go_latch: bool = False
    zones: list[tuple[float, float]] | None = None
    commit_s: float = math.inf
    prev_accel: float = 0.0
    rng: np.random.Generator | None = None


@dataclass(frozen=True)
class StepDiagnostics:
    v_ref: float | None
    ttc_triggered: bool
    min_ttc: float | None
    solver_status: str | None
    solver_iterations: int
    fallback: bool
    observation: np.ndarray | None = None
    raw_action: np.ndarray | None = None
    log_prob: float | None = None
    value: float | None = None
    solution: MPCSolution | None = None


def policy_observation(env: TrafficEnv, controller: Controller,
                       state: PipelineState) -> np.ndarray:
    """The observation the policy sees this step.

    The conflict-distance feature comes from the safety report of the previous
    step; on step 0, or for controllers that never run the safety layer, there
    is no report and the feature saturates at its no-conflict value.
    """
    report = state.last_report
    conflict_distance = None
    if report is not None and report.conflict_point is not None:
        conflict_distance = float(np.hypot(report.conflict_point[0] - env.ego.x,
                                           report.conflict_point[1] - env.ego.y))
    ref = env.scenario.ego_ref
    progress = min(env.progress / ref.length, 1.0)
    return build_observation(env.ego, env.traffic_states(), progress,
                             env.time_remaining_fraction, conflict_distance,
                             controller.obs_cfg)


def _policy_action(controller: Controller, env: TrafficEnv, state: PipelineState):
    obs = policy_observation(env, controller, state)
    rng = state.rng if controller.stochastic else None
    action, raw, logp, value = controller.policy.act(obs, rng)
    return obs, action, raw, logp, value


# Commit-guard tuning. A stop must land the nose clear of the crossing lane
# (half the ego length plus half the other vehicle's width, with slack), and
# a stop may never land inside a crossing zone, where blind traffic would
# hit the parked ego.
YIELD_DECEL = 4.0
STOP_MARGIN = 4.0
ZONE_RADIUS = 3.5
ZONE_CLEARANCE = 3.0
LAUNCH_ACCEL = 3.0
LAUNCH_SPEED_EPS = 0.5

# Nose-to-tail contact between aligned footprints happens at a larger center
# distance than flank contact between crossing ones. A yield behind a moving
# leader floors at a fraction of its speed rather than ramping to a dead
# stop on the lane.
ALIGNED_EXTRA = 1.5
CROSSING_EXTRA = 1.0
OPPOSING_MARGIN = 3.0
ACC_FLOOR_FRACTION = 0.95

# The timed-window simulation must reach past the merge even when starting
# from rest at the stop line, or a launch gets approved with the tail of the
# transit unchecked; MERGE_TAIL sets how far past the last crossing band the
# window runs before car following takes over.
TRANSIT_STEPS = 48
MERGE_TAIL = 10.0
FOLLOW_RANGE = 15.0
COMMIT_BUFFER = 2.5
CONVERGE_DIST = 3.5

# The MPC window spans well under ttc_threshold seconds at nominal speed, so
# the TTC scan runs on the plan prolonged along the reference; crossing
# conflicts then surface while a clean stop is still feasible.
PLAN_EXTRA_STEPS = 16

DEBUG_TRACE = False


def _conflict_zones(scenario) -> list[tuple[float, float]]:
    """Arc-length intervals where the ego path crosses a traffic route.

    Only transversal overlap counts: stretches where the path runs along a
    route (its own approach lane, the lane it merges into) are places the ego
    is allowed to stand.
    """
    path = scenario.ego_ref.path
    ds = 0.25
    n = int(path.length / ds) + 1
    zones: list[list[float]] = []
    inside = False
    for i in range(n):
        s = min(i * ds, path.length)
        x, y, _, tx, ty = path.sample_at(s)
        near = False
        for route in scenario.routes:
            rs, dist = route.project(x, y)
            if dist >= ZONE_RADIUS:
                continue
            _, _, _, rtx, rty = route.sample_at(rs)
            if abs(tx * rtx + ty * rty) < 0.85:
                near = True
                break
        if near and not inside:
            zones.append([s, s])
            inside = True
        elif near:
            zones[-1][1] = s
        else:
            inside = False
    return [(lo, hi) for lo, hi in zones]


def _commit_point(scenario, zones: list[tuple[float, float]]) -> float:
    """Arc length past which a stop no longer keeps the ego out of traffic.

    Either the first crossing band, or the point where the path converges
    onto a route it did not start on (an on-ramp blending into its target
    lane); whichever comes first.
    """
    commit = min((lo for lo, _ in zones), default=math.inf) - ZONE_CLEARANCE
    path = scenario.ego_ref.path
    x0, y0, _, _, _ = path.sample_at(0.0)
    ds = 0.5
    n = int(path.length / ds) + 1
    for route in scenario.routes:
        _, d_start = route.project(x0, y0)
        if d_start <= CONVERGE_DIST + 1.0:
            continue
        for i in range(n):
            s = min(i * ds, path.length)
            x, y, _, tx, ty = path.sample_at(s)
            rs, dist = route.project(x, y)
            if dist >= CONVERGE_DIST:
                continue
            _, _, _, rtx, rty = route.sample_at(rs)
            if tx * rtx + ty * rty > 0.85:
                commit = min(commit, s)
                break
    return commit


def _stop_in_zone(s0: float, v: float, zones: list[tuple[float, float]]) -> bool:
    s_stop = s0 + v * v / (2.0 * YIELD_DECEL)
    return any(s_stop + ZONE_CLEARANCE > lo and s_stop - ZONE_CLEARANCE < hi
               for lo, hi in zones)


def _stop_lands_clear(s0: float, v: float, zones: list[tuple[float, float]],
                      d_conflict: float) -> bool:
    """Whether braking now parks the ego outside every crossing zone."""
    if d_conflict < v * v / (2.0 * YIELD_DECEL) + STOP_MARGIN:
        return False
    return not _stop_in_zone(s0, v, zones)


def _is_follower(ego: VehicleState, other: VehicleState) -> bool:
    heading_ok = math.cos(other.theta - ego.theta) > 0.7
    if not heading_ok:
        return False
    dx = other.x - ego.x
    dy = other.y - ego.y
    e_par = dx * math.cos(ego.theta) + dy * math.sin(ego.theta)
    e_perp = -dx * math.sin(ego.theta) + dy * math.cos(ego.theta)
    return e_par < 0.0 and abs(e_perp) < 2.0


def _find_leader(ref, s0: float, zones: list[tuple[float, float]],
                 others: list[VehicleState]) -> VehicleState | None:
    """Nearest vehicle the ego is actually following on its own lane.

    A leader sits close to the reference line ahead of the ego, heads the
    same way, and has no crossing zone between itself and the ego; a vehicle
    across the intersection box is subject to transit timing, not to
    car-following.
    """
    best = None
    for other in others:
        s_other, dist = ref.project(other.x, other.y)
        if dist > 2.5 or s_other <= s0 + 1.0 or s_other - s0 > FOLLOW_RANGE:
            continue
        _, _, _, tx, ty = ref.path.sample_at(s_other)
        if tx * math.cos(other.theta) + ty * math.sin(other.theta) < 0.7:
            continue
        if any(s0 < edge < s_other for lo, hi in zones for edge in (lo, hi)):
            continue
        if best is None or s_other < best[0]:
            best = (s_other, other)
    return None if best is None else best[1]


def _transit_clear(ref, s0: float, v0: float, v_ref: float, ts: float,
                   ego: VehicleState, others: list[VehicleState],
                   predictions: list[np.ndarray], n_steps: int,
                   d_min: float, s_cap: float = math.inf) -> bool:
    """Whether driving on from (s0, v0) stays clear of every prediction.

    Unlike the TTC trigger, this compares positions at equal times: the ego
    follows an accelerate-to-reference profile while each vehicle follows its
    constant-velocity prediction. Followers are ignored; braking cannot help
    against them either. The window stops at arc length s_cap: past the
    merge the operative regime is car following, and counting a slower
    same-lane vehicle there as a transit conflict would veto every launch.

    Contact distance depends on relative heading: crossing rectangles touch
    around d_min, aligned ones nose-to-tail earlier, so the margin widens
    with alignment.
    """
    profile = np.minimum(v_ref, v0 + LAUNCH_ACCEL * ts * np.arange(n_steps))
    s_ahead = s0 + np.cumsum(profile) * ts
    n_used = int(np.searchsorted(s_ahead, s_cap)) + 1
    n_used = min(n_used, n_steps)
    profile = profile[:n_used]
    win = ref.window(s0, n_used, ts, profile)
    for other, pred in zip(others, predictions):
        if _is_follower(ego, other):
            continue
        k = min(n_used, pred.shape[0])
        align = (win.tan_x[:k] * math.cos(other.theta)
                 + win.tan_y[:k] * math.sin(other.theta))
        # Same direction risks nose-to-tail contact; opposing traffic on the
        # adjacent lane passes at full lane offset and only lateral clearance
        # matters; anything transversal can still touch corner-to-corner at
        # almost the full footprint diagonal.
        margin = np.where(align > 0.7, d_min + ALIGNED_EXTRA,
                          np.where(align < -0.7, OPPOSING_MARGIN,
                                   d_min + CROSSING_EXTRA))
        d2 = (win.x[:k] - pred[:k, 0]) ** 2 + (win.y[:k] - pred[:k, 1]) ** 2
        if bool((d2 < margin * margin).any()):
            return False
    return True


def control_step(env: TrafficEnv, controller: Controller,
                 state: PipelineState) -> tuple[ControlInput, StepDiagnostics]:
    """One control interval: produces the input to apply to the ego."""
    if env.done:
        raise RuntimeError("episode is not live")

    if controller.kind == PURE_PPO:
        obs, action, raw, logp, value = _policy_action(controller, env, state)
        accel, steer = scale_control(
            action,
            (controller.mpc_cfg.a_min, controller.mpc_cfg.a_max),
            (controller.mpc_cfg.delta_min, controller.mpc_cfg.delta_max))
        diag = StepDiagnostics(None, False, None, None, 0, False,
                               obs, raw, logp, value)
        return ControlInput(accel, steer), diag

    mpc_cfg = controller.mpc_cfg
    ref = env.scenario.ego_ref
    n = mpc_cfg.horizon + 1
    ego = env.ego

    obs = raw = logp = value = None
    if controller.kind == MPC_RL:
        obs, action, raw, logp, value = _policy_action(controller, env, state)
        v_ref = scale_action(float(action[0]), controller.obs_cfg.v_max)
    else:
        v_ref = ref.nominal_speed

    s0, _ = ref.project(ego.x, ego.y)
    triggered = False
    min_ttc = None
    profile = None
    if controller.safety_enabled:
        # The committed MPC plan carries the ego's intention, except while an
        # override is already braking it: the shrunken plan would drop the
        # conflict and release the trigger early, so fall back to the nominal
        # intention window (also the step-0 rule) until the conflict clears.
        if state.last_plan is not None and not state.last_yielding:
            base = state.last_plan
        else:
            win0 = ref.window(s0, n, mpc_cfg.ts, ref.constant_profile(n, v_ref))
            base = np.column_stack([win0.x, win0.y])
        s_end, _ = ref.project(base[-1, 0], base[-1, 1])
        tail = ref.window(s_end, PLAN_EXTRA_STEPS + 1, mpc_cfg.ts,
                          ref.constant_profile(PLAN_EXTRA_STEPS + 1, v_ref))
        plan = np.vstack([base, np.column_stack([tail.x, tail.y])[1:]])
        safety_cfg = controller.safety_cfg
        others = env.traffic_states()
        predictions = [predict_constant_velocity(s, safety_cfg.prediction_horizon,
                                                 safety_cfg.dt)
                       for s in others]
        report = compute_ttc(plan, predictions, safety_cfg, corridor_limit=n)
        state.last_report = report
        triggered = report.triggered
        min_ttc = report.min_ttc
        if state.zones is None:
            state.zones = _conflict_zones(env.scenario)
            state.commit_s = _commit_point(env.scenario, state.zones)
        # The TTC trigger is timing-blind (it sweeps predicted paths as
        # spatial sets), so it flags streams that will in fact be long gone.
        # Decisions therefore come from three sources: a same-lane leader
        # scan, the crossing zones, and an equal-time transit simulation.
        hazard_crossing = triggered and report.conflict_kind == CROSSING
        leader = _find_leader(ref, s0, state.zones, others)
        s_cap = (max(hi for _, hi in state.zones) + MERGE_TAIL
                 if state.zones else math.inf)
        clear = _transit_clear(ref, s0, ego.v, v_ref, mpc_cfg.ts, ego,
                               others, predictions, TRANSIT_STEPS,
                               safety_cfg.d_min, s_cap)
        in_zone = (s0 >= state.commit_s
                   or any(lo - ZONE_CLEARANCE < s0 < hi + ZONE_CLEARANCE
                          for lo, hi in state.zones))
        if leader is not None:
            # Car following: shed speed toward the leader's pace. Traffic
            # never stops, so the floored ramp keeps the ego rolling.
            yield_now = True
        elif state.last_yielding:
            # Braking or standing: resume as soon as a timed window opens.
            if clear:
                yield_now = False
                state.go_latch = True
            else:
                yield_now = True
        elif in_zone:
            # The crossing zone is transited atomically: a stop inside it
            # parks the ego astride a live lane.
            yield_now = False
        elif state.go_latch:
            # An abort makes sense only while a crossing band still lies
            # ahead; past the box the only hazards are same-lane ones, and
            # stopping on the shared lane is never the answer to those.
            zone_ahead = any(s0 < lo for lo, _ in state.zones)
            if (zone_ahead and not clear
                    and _stop_lands_clear(s0, ego.v, state.zones, math.inf)):
                yield_now = True
                state.go_latch = False
            else:
                yield_now = False
        else:
            # Receding-horizon gate: while a stop short of the commit point
            # stays available, a dirty window far ahead is no reason to brake
            # yet; the decision is re-posed every step and taken for good at
            # the last point where the stop still lands clear.
            brake_len = ego.v * ego.v / (2.0 * YIELD_DECEL) + COMMIT_BUFFER
            can_defer = s0 + brake_len < state.commit_s
            if clear:
                yield_now = False
                state.go_latch = not can_defer
            elif can_defer:
                yield_now = False
            else:
                if hazard_crossing and report.conflict_point is not None:
                    px, py = report.conflict_point
                    d_conflict = float(np.hypot(px - ego.x, py - ego.y))
                else:
                    d_conflict = math.inf
                # Brake only when the stop provably lands short of the
                # conflict and outside the crossing bands; otherwise braking
                # strands the ego astride a live lane at crawl speed, which
                # is strictly worse than transiting at speed.
                if _stop_lands_clear(s0, ego.v, state.zones, d_conflict):
                    yield_now = True
                else:
                    yield_now = False
                    state.go_latch = True
        if DEBUG_TRACE and (triggered or yield_now):
            print(f"  s0={s0:5.1f} v={ego.v:4.1f} kind={report.conflict_kind} "
                  f"yield={yield_now} latch={state.go_latch} clear={clear} "
                  f"leader={leader is not None} pt={report.conflict_point} "
                  f"ttc={report.min_ttc}")
        if yield_now:
            # The ramp seed is frozen at yield onset: re-seeding from the
            # decaying current speed every replan would flatten the commanded
            # deceleration and let the ego creep into the conflict zone
            # instead of stopping. The leader scan and the transit check can
            # demand a yield the TTC report never triggered, hence the forced
            # report.
            if not state.last_yielding:
                state.yield_v0 = ego.v
                state.yield_elapsed = 0
            e = min(state.yield_elapsed, safety_cfg.k_stop)
            forced = replace(report, triggered=True)
            ramp = modulate_reference(state.yield_v0, forced, safety_cfg, n + e)
            profile = ramp[e:]
            state.yield_elapsed += 1
            if leader is not None:
                # Match the leader's pace instead of ramping to a stop:
                # parking on a live lane invites the next vehicle into the
                # ego's rear.
                profile = np.maximum(profile, ACC_FLOOR_FRACTION * leader.v)
        state.last_yielding = yield_now
    if profile is None:
        profile = ref.constant_profile(n, v_ref)

    window = ref.window(s0, n, mpc_cfg.ts, profile)
    sol = solve(ego, window, warm_start=state.warm_start, cfg=mpc_cfg,
                params=env.ego_params)
    if sol.status is SolverStatus.DEGENERATE:
        state.warm_start = None
        state.last_plan = None
        diag = StepDiagnostics(v_ref, triggered, min_ttc, sol.status.value,
                               sol.iterations, True, obs, raw, logp, value, sol)
        return ControlInput(mpc_cfg.a_min / 2.0, 0.0), diag

    state.warm_start = sol
    state.last_plan = np.array([[s.x, s.y] for s in sol.predicted_states])
    diag = StepDiagnostics(v_ref, triggered, min_ttc, sol.status.value,
                           sol.iterations, False, obs, raw, logp, value, sol)
    return sol.first_input, diag


@dataclass
class StepTrace:
    step: int
    ego: tuple[float, float, float, float]
    inp: tuple[float, float]
    v_ref: float | None
    ttc_triggered: bool
    min_ttc: float | None
    solver_status: str | None
    solver_iterations: int
    fallback: bool
    plan: list[tuple[float, float]]
    others: list[tuple[float, float, float]]
    wall_clock_ms: float
    reward: float | None = None

    def canonical(self) -> dict:
        """Everything deterministic about the step; wall clock excluded."""
        return {
            "step": self.step,
            "ego": [float(v) for v in self.ego],
            "input": [float(v) for v in self.inp],
            "v_ref": None if self.v_ref is None else float(self.v_ref),
            "ttc_triggered": bool(self.ttc_triggered),
            "min_ttc": None if self.min_ttc is None else float(self.min_ttc),
            "solver_status": self.solver_status,
            "solver_iterations": int(self.solver_iterations),
            "fallback": bool(self.fallback),
            "plan": [[float(x), float(y)] for x, y in self.plan],
            "others": [[float(x), float(y), float(t)] for x, y, t in self.others],
            "reward": None if self.reward is None else float(self.reward),
        }

    def row(self) -> dict:
        out = self.canonical()
        out["wall_clock_ms"] = float(self.wall_clock_ms)
        return out


@dataclass
class EpisodeRecord:
    episode_id: str
    scenario: str
    difficulty: str
    controller: str
    base_seed: int
    episode_index: int
    outcome: str
    steps: int
    mean_speed: float
    min_clearance: float | None
    total_reward: float | None
    ttc_trigger_count: int
    fallback_count: int
    trace: list[StepTrace]

    def to_json(self) -> str:
        """One canonical record line; identical across reruns of the episode."""
        digest = hashlib.sha256()
        for step in self.trace:
            digest.update(json.dumps(step.canonical(), sort_keys=True).encode())
        payload = {
            "episode_id": self.episode_id,
            "scenario": self.scenario,
            "difficulty": self.difficulty,
            "controller": self.controller,
            "base_seed": self.base_seed,
            "episode_index": self.episode_index,
            "outcome": self.outcome,
            "steps": self.steps,
            "mean_speed": float(self.mean_speed),
            "min_clearance": None if self.min_clearance is None else float(self.min_clearance),
            "total_reward": None if self.total_reward is None else float(self.total_reward),
            "ttc_trigger_count": self.ttc_trigger_count,
            "fallback_count": self.fallback_count,
            "trace_digest": digest.hexdigest(),
        }
        return json.dumps(payload, sort_keys=True)

    def trace_lines(self) -> list[str]:
        """Sidecar rows, one JSON object per step (wall clock included)."""
        return [json.dumps({"episode_id": self.episode_id, **step.row()},
                           sort_keys=True) for step in self.trace]


def make_env(scenario_name: str, difficulty: str, base_seed: int,
             episode_index: int = 0, traffic_cfg: TrafficConfig | None = None,
             lane_width: float = 4.0, nominal_speed: float = 10.0,
             max_episode_steps: int = 130) -> TrafficEnv:
    """Environment wired to the shared per-episode seed derivation."""
    scenario = build_scenario(scenario_name, lane_width, nominal_speed)
    cfg = traffic_cfg or TrafficConfig.preset(scenario_name, difficulty,
                                              max_episode_steps)
    seed = episode_seed(base_seed, scenario.code,
                        DIFFICULTY_CODES[difficulty.lower()], episode_index)
    return TrafficEnv(scenario, cfg, seed)


def run_episode(scenario_name: str, difficulty: str, controller: Controller,
                base_seed: int, episode_index: int = 0,
                traffic_cfg: TrafficConfig | None = None,
                collect_rewards: bool = False, lane_width: float = 4.0,
                nominal_speed: float = 10.0,
                max_episode_steps: int = 130) -> EpisodeRecord:
    """Runs one episode to termination and records it.

    Controller failures never propagate: a raising control step falls back to
    comfort braking and is recorded in the trace as a fallback.
    """
    env = make_env(scenario_name, difficulty, base_seed, episode_index,
                   traffic_cfg, lane_width, nominal_speed, max_episode_steps)
    seed = episode_seed(base_seed, env.scenario.code,
                        DIFFICULTY_CODES[difficulty.lower()], episode_index)
    rng = np.random.default_rng(seed.spawn(1)[0]) if controller.stochastic else None
    state = PipelineState(rng=rng)

    trace: list[StepTrace] = []
    rewards: list[float] = []
    ttc_triggers = 0
    fallbacks = 0
    while not env.done:
        t0 = time.perf_counter()
        try:
            inp, diag = control_step(env, controller, state)
        except Exception:
            inp = ControlInput(controller.mpc_cfg.a_min / 2.0, 0.0)
            diag = StepDiagnostics(None, False, None, "error", 0, True)
            state.warm_start = None
            state.last_plan = None
        elapsed_ms = (time.perf_counter() - t0) * 1e3
        step_index = env.t
        outcome = env.step(inp)

        reward = None
        if collect_rewards:
            kind = outcome.kind if outcome is not None else None
            d_min = min(env.clearance() / controller.obs_cfg.distance_range, 1.0)
            _, lateral = env.scenario.ego_ref.project(env.ego.x, env.ego.y)
            reward = compute_reward(
                env.ego.v, d_min, inp.a - state.prev_accel, lateral,
                terminal_kind=kind, v_max=controller.obs_cfg.v_max,
                a_max=abs(controller.mpc_cfg.a_min),
                lane_width=env.scenario.lane_width).total
            rewards.append(reward)
        state.prev_accel = inp.a

        plan = [] if diag.solution is None else [(s.x, s.y)
                                                 for s in diag.solution.predicted_states]
        ttc_triggers += int(diag.ttc_triggered)
        fallbacks += int(diag.fallback)
        trace.append(StepTrace(
            step=step_index,
            ego=(env.ego.x, env.ego.y, env.ego.theta, env.ego.v),
            inp=(inp.a, inp.delta),
            v_ref=diag.v_ref,
            ttc_triggered=diag.ttc_triggered,
            min_ttc=diag.min_ttc,
            solver_status=diag.solver_status,
            solver_iterations=diag.solver_iterations,
            fallback=diag.fallback,
            plan=plan,
            others=[(s.x, s.y, s.theta) for s in env.traffic_states()],
            wall_clock_ms=elapsed_ms,
            reward=reward,
        ))

    outcome = env.outcome
    clearance = outcome.min_clearance
    return EpisodeRecord(
        episode_id=f"{scenario_name}:{difficulty.lower()}:{controller.kind}:"
                   f"{base_seed}:{episode_index}",
        scenario=scenario_name,
        difficulty=difficulty.lower(),
        controller=controller.kind,
        base_seed=base_seed,
        episode_index=episode_index,
        outcome=outcome.kind,
        steps=outcome.step,
        mean_speed=outcome.mean_speed,
        min_clearance=None if np.isinf(clearance) else float(clearance),
        total_reward=sum(rewards) if collect_rewards else None,
        ttc_trigger_count=ttc_triggers,
        fallback_count=fallbacks,
        trace=trace,
    )
