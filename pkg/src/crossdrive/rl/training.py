"""PPO training over the closed-loop driving stack.

SpeedRef mode rolls the full hybrid pipeline (policy, safety layer, MPC) for
every environment step, so the agent trains against exactly the controller it
is later evaluated with. EndToEnd maps its 2-d action straight to actuator
bounds. Rollouts, updates, logging, and checkpointing run in one process;
the whole run is a pure function of the seed.

Episodes span batch boundaries: when the buffer fills mid-episode the value
estimate of the next observation bootstraps the advantage tail, and the
episode continues under the freshly updated parameters.
"""

from __future__ import annotations

import json
import traceback
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..config import RunConfig
from ..env import DIFFICULTY_CODES, episode_seed
from ..pipeline import (MPC_RL, PURE_PPO, Controller, PipelineState,
                        control_step, make_env, policy_observation)
from .checkpoint import load_checkpoint, save_checkpoint
from .nets import ACTION_DIMS, SPEEDREF, Adam, GaussianPolicy
from .observation import OBS_DIM
from .ppo import PPOConfig, TransitionBatch, ppo_update
from .reward import compute_reward

LATEST_CHECKPOINT = "latest.ckpt"
TRAINER_STATE = "trainer_state.json"
OPTIMIZER_STATE = "optimizer.npz"
LOG_NAME = "training_log.jsonl"
REWARD_WINDOW = 20


class TrainingError(RuntimeError):
    """A rollout or update failure that terminated the run."""


@dataclass
class TrainResult:
    checkpoint_path: Path
    log_path: Path
    records: list[dict]
    env_steps: int
    updates: int


def _controller_for(mode: str, policy: GaussianPolicy, cfg: RunConfig) -> Controller:
    kind = MPC_RL if mode == SPEEDREF else PURE_PPO
    return Controller(kind=kind, policy=policy, stochastic=True,
                      mpc_cfg=cfg.mpc, safety_cfg=cfg.safety)


class _Rollout:
    """Steps episodes back to back and appends transitions to a buffer."""

    def __init__(self, run_cfg: RunConfig, controller: Controller,
                 seed: int, episode_index: int):
        self.run_cfg = run_cfg
        self.controller = controller
        self.seed = seed
        self.episode_index = episode_index
        self.env = None
        self.state = None
        self.prev_accel = 0.0
        self.episode_reward = 0.0
        self.finished_rewards: list[float] = []

    def _begin_episode(self) -> None:
        cfg = self.run_cfg
        self.env = make_env(cfg.scenario, cfg.difficulty, self.seed,
                            self.episode_index, traffic_cfg=cfg.traffic(),
                            lane_width=cfg.lane_width_m,
                            nominal_speed=cfg.nominal_speed_mps,
                            max_episode_steps=cfg.max_episode_steps)
        seq = episode_seed(self.seed, self.env.scenario.code,
                           DIFFICULTY_CODES[cfg.difficulty.lower()],
                           self.episode_index)
        self.state = PipelineState(rng=np.random.default_rng(seq.spawn(1)[0]))
        self.prev_accel = 0.0
        self.episode_reward = 0.0
        self.episode_index += 1

    def step(self, buf: "_Buffer") -> None:
        """One environment step appended to the buffer."""
        if self.env is None or self.env.done:
            self._begin_episode()
        env, state, controller = self.env, self.state, self.controller
        inp, diag = control_step(env, controller, state)
        outcome = env.step(inp)

        kind = outcome.kind if outcome is not None else None
        d_min = min(env.clearance() / controller.obs_cfg.distance_range, 1.0)
        _, lateral = env.scenario.ego_ref.project(env.ego.x, env.ego.y)
        reward = compute_reward(
            env.ego.v, d_min, inp.a - self.prev_accel, lateral,
            terminal_kind=kind, v_max=controller.obs_cfg.v_max,
            a_max=abs(controller.mpc_cfg.a_min),
            lane_width=env.scenario.lane_width).total
        self.prev_accel = inp.a
        self.episode_reward += reward
        if outcome is not None:
            self.finished_rewards.append(self.episode_reward)

        buf.append(diag.observation, diag.raw_action, diag.log_prob,
                   reward, diag.value, outcome is not None)

    def bootstrap_value(self) -> float:
        """Value estimate of the state the next step would start from."""
        if self.env is None or self.env.done:
            return 0.0
        obs = policy_observation(self.env, self.controller, self.state)
        _, _, value = self.controller.policy.forward(obs.reshape(1, -1))
        return float(value[0])

    def drain_finished(self) -> list[float]:
        out = self.finished_rewards
        self.finished_rewards = []
        return out


class _Buffer:
    def __init__(self, size: int, act_dim: int):
        self.observations = np.empty((size, OBS_DIM))
        self.actions = np.empty((size, act_dim))
        self.log_probs = np.empty(size)
        self.rewards = np.empty(size)
        self.values = np.empty(size)
        self.terminals = np.empty(size, dtype=bool)
        self.n = 0

    @property
    def full(self) -> bool:
        return self.n == self.observations.shape[0]

    def append(self, obs, action, log_prob, reward, value, terminal) -> None:
        i = self.n
        self.observations[i] = obs
        self.actions[i] = action
        self.log_probs[i] = log_prob
        self.rewards[i] = reward
        self.values[i] = value
        self.terminals[i] = terminal
        self.n = i + 1

    def to_batch(self) -> TransitionBatch:
        return TransitionBatch(self.observations.copy(), self.actions.copy(),
                               self.log_probs.copy(), self.rewards.copy(),
                               self.values.copy(), self.terminals.copy())


def _shuffle_rng(seed: int) -> np.random.Generator:
    # Stream 97 keeps minibatch shuffling independent of the per-episode
    # spawn and action streams, which hang off [seed, scenario, ...].
    return np.random.default_rng(np.random.SeedSequence([seed, 97]))


def _save_state(out_dir: Path, policy: GaussianPolicy, optimizer: Adam,
                rng: np.random.Generator, mode: str, seed: int,
                env_steps: int, update_index: int, episode_index: int,
                recent_rewards: list[float]) -> None:
    save_checkpoint(out_dir / LATEST_CHECKPOINT, policy)
    arrays = {"t": np.array(optimizer.t)}
    for i, (m, v) in enumerate(zip(optimizer.m, optimizer.v)):
        arrays[f"m_{i:03d}"] = m
        arrays[f"v_{i:03d}"] = v
    np.savez(out_dir / OPTIMIZER_STATE, **arrays)
    state = {
        "format": 1,
        "mode": mode,
        "seed": seed,
        "env_steps": env_steps,
        "update_index": update_index,
        "episode_index": episode_index,
        "recent_rewards": recent_rewards,
        "shuffle_rng": rng.bit_generator.state,
    }
    (out_dir / TRAINER_STATE).write_text(json.dumps(state, indent=2))


def _load_state(out_dir: Path, mode: str, seed: int):
    state = json.loads((out_dir / TRAINER_STATE).read_text())
    if state.get("format") != 1:
        raise TrainingError(f"unsupported trainer state in {out_dir}")
    if state["mode"] != mode or state["seed"] != seed:
        raise TrainingError(
            f"cannot resume: saved run was mode={state['mode']} seed={state['seed']}, "
            f"requested mode={mode} seed={seed}")
    policy = load_checkpoint(out_dir / LATEST_CHECKPOINT)
    if policy.mode != mode:
        raise TrainingError("checkpoint mode does not match trainer state")
    with np.load(out_dir / OPTIMIZER_STATE) as data:
        optimizer = Adam(policy.params())
        optimizer.t = int(data["t"])
        optimizer.m = [data[f"m_{i:03d}"].copy() for i in range(len(optimizer.m))]
        optimizer.v = [data[f"v_{i:03d}"].copy() for i in range(len(optimizer.v))]
    rng = _shuffle_rng(seed)
    rng.bit_generator.state = state["shuffle_rng"]
    return policy, optimizer, rng, state


def _truncate_log(log_path: Path, last_update: int) -> list[dict]:
    """Drops records past the restored update; returns what remains."""
    if not log_path.exists():
        return []
    kept: list[dict] = []
    for line in log_path.read_text().splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        if record.get("update_index", 0) <= last_update:
            kept.append(record)
    log_path.write_text("".join(json.dumps(r) + "\n" for r in kept))
    return kept


def train(run_cfg: RunConfig, mode: str, ppo_cfg: PPOConfig, seed: int,
          out_dir: str | Path, checkpoint_every: int = 10,
          resume: bool = False, on_update=None) -> TrainResult:
    """Trains a policy and leaves checkpoints plus a loss log under out_dir.

    With resume=True the run restarts from the state saved at the last
    checkpoint: parameters, optimizer moments, counters, and the shuffle
    stream are restored, log records past that point are dropped, and the
    partially collected episode is abandoned. Total steps below the restored
    counter make the call a no-op.
    """
    if mode not in ACTION_DIMS:
        raise ValueError(f"unknown agent mode {mode!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / LOG_NAME

    if resume and (out / TRAINER_STATE).exists():
        policy, optimizer, shuffle_rng, saved = _load_state(out, mode, seed)
        optimizer.lr = ppo_cfg.learning_rate
        env_steps = saved["env_steps"]
        update_index = saved["update_index"]
        episode_index = saved["episode_index"]
        recent = list(saved["recent_rewards"])
        records = _truncate_log(log_path, update_index)
    else:
        policy = GaussianPolicy(OBS_DIM, mode, seed=seed)
        optimizer = Adam(policy.params(), lr=ppo_cfg.learning_rate)
        shuffle_rng = _shuffle_rng(seed)
        env_steps = 0
        update_index = 0
        episode_index = 0
        recent = []
        records = []
        log_path.write_text("")
        _save_state(out, policy, optimizer, shuffle_rng, mode, seed,
                    env_steps, update_index, episode_index, recent)

    controller = _controller_for(mode, policy, run_cfg)
    rollout = _Rollout(run_cfg, controller, seed, episode_index)
    act_dim = ACTION_DIMS[mode]

    with log_path.open("a") as log:
        while env_steps < ppo_cfg.total_steps:
            buf = _Buffer(min(ppo_cfg.batch_size,
                              ppo_cfg.total_steps - env_steps), act_dim)
            # A short final batch keeps total_steps exact; minibatch slicing
            # tolerates any length.
            try:
                while not buf.full:
                    rollout.step(buf)
            except Exception as exc:
                diagnostic = {
                    "error": f"{type(exc).__name__}: {exc}",
                    "env_steps": env_steps + buf.n,
                    "episode_index": rollout.episode_index,
                    "traceback": traceback.format_exc(),
                }
                log.write(json.dumps(diagnostic) + "\n")
                log.flush()
                raise TrainingError(
                    f"rollout failed at env step {env_steps + buf.n}: {exc}") from exc

            batch = buf.to_batch()
            batch.fill_gae(ppo_cfg.gamma, ppo_cfg.gae_lambda,
                           rollout.bootstrap_value())
            stats = ppo_update(policy, batch, ppo_cfg, shuffle_rng, optimizer)
            env_steps += buf.n
            update_index += 1

            recent.extend(rollout.drain_finished())
            recent = recent[-REWARD_WINDOW:]
            record = {
                "update_index": update_index,
                "env_steps": env_steps,
                "policy_loss": stats.policy_loss,
                "value_loss": stats.value_loss,
                "entropy": stats.entropy,
                "total_loss": stats.total_loss,
                "mean_episode_reward":
                    float(np.mean(recent)) if recent else None,
            }
            if stats.diverged:
                record["diverged"] = True
            log.write(json.dumps(record) + "\n")
            log.flush()
            records.append(record)
            if on_update is not None:
                on_update(record)

            if update_index % checkpoint_every == 0 or env_steps >= ppo_cfg.total_steps:
                save_checkpoint(out / f"checkpoint_{update_index:06d}.ckpt", policy)
                _save_state(out, policy, optimizer, shuffle_rng, mode, seed,
                            env_steps, update_index, rollout.episode_index,
                            recent)

    return TrainResult(checkpoint_path=out / LATEST_CHECKPOINT,
                       log_path=log_path, records=records,
                       env_steps=env_steps, updates=update_index)
