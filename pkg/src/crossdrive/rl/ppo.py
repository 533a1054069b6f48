"""Clipped-surrogate policy optimization on hand-rolled gradients.

The update maximizes min(rho * A, clip(rho) * A) minus a value-function loss
plus an entropy bonus, with advantages normalized per batch and the global
gradient norm capped. All gradients are assembled analytically from the MLP
backward passes; there is no autodiff anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nets import Adam, GaussianPolicy


@dataclass(frozen=True)
class PPOConfig:
    total_steps: int = 200_000
    batch_size: int = 4096
    minibatch_size: int = 64
    epochs: int = 10
    learning_rate: float = 1e-4
    gamma: float = 0.99
    clip_epsilon: float = 0.2
    gae_lambda: float = 0.95
    vf_coef: float = 0.5
    ent_coef: float = 0.01
    max_grad_norm: float = 0.5

    def __post_init__(self):
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if self.batch_size <= 0 or self.minibatch_size <= 0:
            raise ValueError("batch and minibatch sizes must be positive")
        if self.batch_size % self.minibatch_size != 0:
            raise ValueError("minibatch size must divide batch size")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip epsilon must be in (0, 1)")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae lambda must be in [0, 1]")
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if self.learning_rate <= 0.0:
            raise ValueError("learning rate must be positive")
        if self.vf_coef < 0.0 or self.ent_coef < 0.0:
            raise ValueError("loss coefficients must be nonnegative")
        if self.max_grad_norm <= 0.0:
            raise ValueError("gradient norm cap must be positive")


def compute_gae(rewards: np.ndarray, values: np.ndarray, terminals: np.ndarray,
                gamma: float, lam: float, last_value: float = 0.0):
    """Generalized advantage estimation over one rollout segment.

    ``last_value`` bootstraps the step after the segment when it was cut
    mid-episode; a terminal flag zeroes the bootstrap regardless. Returns
    (advantages, returns) with returns = advantages + values.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    terminals = np.asarray(terminals, dtype=bool)
    if not rewards.shape == values.shape == terminals.shape:
        raise ValueError("rewards, values and terminals must share a shape")
    n = rewards.shape[0]
    advantages = np.zeros(n)
    next_value = float(last_value)
    carry = 0.0
    for t in range(n - 1, -1, -1):
        nonterminal = 0.0 if terminals[t] else 1.0
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        carry = delta + gamma * lam * nonterminal * carry
        advantages[t] = carry
        next_value = values[t]
    return advantages, advantages + values


def normalize_advantages(advantages: np.ndarray) -> np.ndarray:
    adv = np.asarray(advantages, dtype=float)
    return (adv - adv.mean()) / (adv.std() + 1e-8)


@dataclass
class TransitionBatch:
    """One on-policy batch; advantages/returns are filled before any update."""

    observations: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    terminals: np.ndarray
    advantages: np.ndarray = field(default=None)
    returns: np.ndarray = field(default=None)

    def __post_init__(self):
        n = self.observations.shape[0]
        for name in ("actions", "log_probs", "rewards", "values", "terminals"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"{name} length does not match observations")

    def __len__(self) -> int:
        return self.observations.shape[0]

    def fill_gae(self, gamma: float, lam: float, last_value: float = 0.0) -> None:
        self.advantages, self.returns = compute_gae(
            self.rewards, self.values, self.terminals, gamma, lam, last_value)


@dataclass(frozen=True)
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    total_loss: float
    diverged: bool = False


def ppo_loss_and_grads(policy: GaussianPolicy, obs: np.ndarray, actions: np.ndarray,
                       old_log_probs: np.ndarray, advantages: np.ndarray,
                       returns: np.ndarray, cfg: PPOConfig):
    """Losses and exact gradients of the combined objective on one minibatch.

    Returns (stats, grads) with grads matching policy.params() order. The
    surrogate gradient of a clip-saturated sample is exactly zero: gradient
    flows only where the unclipped branch attains the minimum.
    """
    n = obs.shape[0]
    z, trunk_cache = policy.trunk.forward(obs)
    mean = np.tanh(z)
    std = np.exp(policy.log_std)
    diff = actions - mean
    log_probs = (-0.5 * (diff / std) ** 2 - policy.log_std
                 - 0.5 * np.log(2.0 * np.pi)).sum(axis=1)
    ratio = np.exp(log_probs - old_log_probs)
    clipped = np.clip(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon)
    surr1 = ratio * advantages
    surr2 = clipped * advantages
    policy_loss = -np.minimum(surr1, surr2).mean()

    v_out, value_cache = policy.value_net.forward(obs)
    v = v_out[:, 0]
    value_loss = np.mean((v - returns) ** 2)
    entropy = policy.entropy()
    total = policy_loss + cfg.vf_coef * value_loss - cfg.ent_coef * entropy

    # d policy_loss / d log_prob, nonzero only on the unclipped branch.
    active = surr1 <= surr2
    d_logp = -(active * ratio * advantages) / n
    d_mean = d_logp[:, None] * diff / std**2
    d_z = d_mean * (1.0 - mean**2)
    trunk_grads, _ = policy.trunk.backward(trunk_cache, d_z)

    d_v = cfg.vf_coef * 2.0 * (v - returns) / n
    value_grads, _ = policy.value_net.backward(value_cache, d_v[:, None])

    d_log_std = (d_logp[:, None] * ((diff / std) ** 2 - 1.0)).sum(axis=0)
    d_log_std -= cfg.ent_coef
    grads = trunk_grads + value_grads + [d_log_std]
    stats = UpdateStats(float(policy_loss), float(value_loss),
                        float(entropy), float(total))
    return stats, grads


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> float:
    """Scales the gradient list in place; returns the pre-clip global norm."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if total > max_norm and total > 0.0:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


def ppo_update(policy: GaussianPolicy, batch: TransitionBatch, cfg: PPOConfig,
               rng: np.random.Generator,
               optimizer: Adam | None = None) -> UpdateStats:
    """Runs the full epoch/minibatch pass over one batch, updating in place.

    A non-finite minibatch loss aborts the update and restores the parameters
    (and optimizer state) from before the call; the returned stats then carry
    diverged=True so callers can log the event.
    """
    if batch.advantages is None or batch.returns is None:
        raise ValueError("batch advantages must be populated before the update")
    if optimizer is None:
        optimizer = Adam(policy.params(), lr=cfg.learning_rate)
    params = policy.params()
    snapshot = [p.copy() for p in params]
    opt_snapshot = ([m.copy() for m in optimizer.m],
                    [v.copy() for v in optimizer.v], optimizer.t)

    adv = normalize_advantages(batch.advantages)
    n = len(batch)
    totals = np.zeros(4)
    count = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start:start + cfg.minibatch_size]
            stats, grads = ppo_loss_and_grads(
                policy, batch.observations[idx], batch.actions[idx],
                batch.log_probs[idx], adv[idx], batch.returns[idx], cfg)
            if not np.isfinite(stats.total_loss):
                policy.set_params(snapshot)
                optimizer.m = [m.copy() for m in opt_snapshot[0]]
                optimizer.v = [v.copy() for v in opt_snapshot[1]]
                optimizer.t = opt_snapshot[2]
                return UpdateStats(stats.policy_loss, stats.value_loss,
                                   stats.entropy, stats.total_loss, diverged=True)
            clip_grad_norm(grads, cfg.max_grad_norm)
            optimizer.step(grads)
            totals += (stats.policy_loss, stats.value_loss,
                       stats.entropy, stats.total_loss)
            count += 1
    mean = totals / max(count, 1)
    return UpdateStats(float(mean[0]), float(mean[1]), float(mean[2]), float(mean[3]))
