import math

import numpy as np
import pytest

from crossdrive.dynamics import VehicleState
from crossdrive.env import COLLISION, SUCCESS
from crossdrive.rl import (ENDTOEND, SPEEDREF, Adam, GaussianPolicy, MLP,
                           OBS_DIM, ObsConfig, PPOConfig, TransitionBatch,
                           build_observation, compute_gae, compute_reward,
                           normalize_advantages, ppo_loss_and_grads,
                           ppo_update, scale_action, scale_control)


def small_policy(obs_dim=5, hidden=(8, 8), mode=SPEEDREF, seed=3):
    return GaussianPolicy(obs_dim, mode, hidden=hidden, seed=seed)


# --- networks ---

def test_mlp_zero_weights_outputs_zero():
    net = MLP([4, 8, 2])
    out, _ = net.forward(np.ones((3, 4)))
    assert np.all(out == 0.0)


def test_mlp_forward_matches_reference_implementation():
    # Independent re-implementation: per-sample loops, no shared code path.
    rng = np.random.default_rng(11)
    for _ in range(3):
        sizes = [int(rng.integers(2, 6)) for _ in range(4)]
        net = MLP(sizes, rng)
        x = rng.normal(size=(5, sizes[0]))
        out, _ = net.forward(x)
        for i in range(5):
            h = x[i]
            for layer, (w, b) in enumerate(zip(net.weights, net.biases)):
                z = np.array([np.dot(h, w[:, j]) + b[j] for j in range(w.shape[1])])
                h = z if layer == len(net.weights) - 1 else np.tanh(z)
            assert np.allclose(out[i], h, atol=1e-10)


def test_mlp_constant_loss_zero_gradients():
    net = MLP([3, 8, 8, 2], np.random.default_rng(0))
    _, cache = net.forward(np.ones((4, 3)))
    grads, _ = net.backward(cache, np.zeros((4, 2)))
    assert all(np.all(g == 0.0) for g in grads)


def test_mlp_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    net = MLP([4, 8, 8, 1], rng)
    x = rng.normal(size=(6, 4))
    target = rng.normal(size=(6, 1))

    def loss():
        out, _ = net.forward(x)
        return float(np.mean((out - target) ** 2))

    out, cache = net.forward(x)
    grads, _ = net.backward(cache, 2.0 * (out - target) / out.shape[0])
    h = 1e-5
    worst = 0.0
    for p, g in zip(net.params(), grads):
        flat_p, flat_g = p.ravel(), g.ravel()
        for k in range(flat_p.size):
            orig = flat_p[k]
            flat_p[k] = orig + h
            hi = loss()
            flat_p[k] = orig - h
            lo = loss()
            flat_p[k] = orig
            fd = (hi - lo) / (2.0 * h)
            rel = abs(fd - flat_g[k]) / max(abs(fd), abs(flat_g[k]), 1e-6)
            worst = max(worst, rel)
    assert worst < 1e-4


def test_mlp_batch_gradient_is_sum_of_sample_gradients():
    rng = np.random.default_rng(9)
    net = MLP([3, 6, 2], rng)
    x = rng.normal(size=(4, 3))
    dout = rng.normal(size=(4, 2))
    _, cache = net.forward(x)
    batch_grads, _ = net.backward(cache, dout)
    summed = [np.zeros_like(g) for g in batch_grads]
    for i in range(4):
        _, ci = net.forward(x[i:i + 1])
        gi, _ = net.backward(ci, dout[i:i + 1])
        for acc, g in zip(summed, gi):
            acc += g
    for a, b in zip(batch_grads, summed):
        assert np.allclose(a, b, atol=1e-12)


def test_adam_descends_quadratic():
    p = np.array([4.0])
    opt = Adam([p], lr=0.1)
    for _ in range(200):
        opt.step([2.0 * p])
    assert abs(p[0]) < 0.5


def test_policy_zero_weights_mean_and_value_zero():
    pol = GaussianPolicy(6, SPEEDREF, hidden=(8, 8), seed=None)
    mean, std, value = pol.forward(np.ones((2, 6)))
    assert np.all(mean == 0.0)
    assert np.all(value == 0.0)
    assert np.allclose(std, 0.3)


def test_policy_outputs_finite():
    pol = small_policy()
    obs = np.random.default_rng(1).uniform(-1.2, 1.2, size=(50, 5))
    mean, std, value = pol.forward(obs)
    assert np.all(np.isfinite(mean)) and np.all(np.isfinite(std))
    assert np.all(np.isfinite(value))
    assert np.all(np.abs(mean) <= 1.0)


def test_log_prob_matches_gaussian_density_oracle():
    pol = small_policy(mode=ENDTOEND)
    rng = np.random.default_rng(2)
    obs = rng.normal(size=(10, 5))
    mean, std, _ = pol.forward(obs)
    actions = mean + std * rng.standard_normal(mean.shape)
    got = pol.log_prob(mean, actions)
    for i in range(10):
        expect = 0.0
        for d in range(2):
            z = (actions[i, d] - mean[i, d]) / std[d]
            expect += -0.5 * z * z - math.log(std[d]) - 0.5 * math.log(2.0 * math.pi)
        assert math.isfinite(got[i])
        assert abs(got[i] - expect) < 1e-10


def test_policy_entropy_formula():
    pol = small_policy()
    expect = 0.5 * math.log(2.0 * math.pi * math.e) + math.log(0.3)
    assert abs(pol.entropy() - expect) < 1e-12


def test_act_deterministic_and_sampled():
    pol = small_policy()
    obs = np.linspace(-1.0, 1.0, 5)
    a_det, raw_det, _, v = pol.act(obs)
    mean, _, _ = pol.forward(obs.reshape(1, -1))
    assert np.allclose(a_det, mean[0])
    assert np.allclose(raw_det, mean[0])
    a_s, raw_s, logp, _ = pol.act(obs, np.random.default_rng(0))
    assert np.all(np.abs(a_s) <= 1.0)
    m, s, _ = pol.forward(obs.reshape(1, -1))
    assert abs(logp - float(pol.log_prob(m, raw_s.reshape(1, -1))[0])) < 1e-12
    assert math.isfinite(v)


# --- GAE ---

def test_gae_single_terminal_step():
    adv, ret = compute_gae(np.array([2.0]), np.array([0.7]),
                           np.array([True]), 1.0, 1.0)
    assert abs(adv[0] - 1.3) < 1e-12
    assert abs(ret[0] - 2.0) < 1e-12


def test_gae_zero_rewards_zero_values():
    adv, ret = compute_gae(np.zeros(5), np.zeros(5),
                           np.zeros(5, dtype=bool), 0.99, 0.95)
    assert np.all(adv == 0.0)
    assert np.all(ret == 0.0)


def test_gae_three_step_hand_oracle():
    # Hand recursion: delta_2=1.4, delta_1=0.94, delta_0=0.79;
    # A_1 = 0.94 + 0.72*1.4, A_0 = 0.79 + 0.72*A_1.
    adv, ret = compute_gae(np.array([1.0, 0.5, 2.0]),
                           np.array([0.3, 0.1, 0.6]),
                           np.array([False, False, True]), 0.9, 0.8)
    assert np.allclose(adv, [2.19256, 1.948, 1.4], atol=1e-12)
    assert np.allclose(ret, [2.49256, 2.048, 2.0], atol=1e-12)


def test_gae_bootstrap_cut_by_terminal():
    args = (np.array([1.0, 1.0]), np.array([0.5, 0.5]),
            np.array([False, True]), 0.99, 0.95)
    a1, _ = compute_gae(*args, last_value=0.0)
    a2, _ = compute_gae(*args, last_value=100.0)
    assert np.allclose(a1, a2)


def test_gae_bootstrap_used_when_truncated():
    adv, _ = compute_gae(np.array([1.0]), np.array([0.5]),
                         np.array([False]), 0.9, 0.95, last_value=2.0)
    assert abs(adv[0] - (1.0 + 0.9 * 2.0 - 0.5)) < 1e-12


def test_advantage_normalization():
    adv = np.random.default_rng(3).normal(2.0, 5.0, size=256)
    out = normalize_advantages(adv)
    assert abs(out.mean()) < 1e-9
    assert abs(out.std() - 1.0) < 1e-6


# --- PPO losses and update ---

def make_batch(pol, n=32, seed=7):
    rng = np.random.default_rng(seed)
    obs = rng.normal(size=(n, pol.obs_dim))
    mean, std, values = pol.forward(obs)
    actions = mean + std * rng.standard_normal(mean.shape)
    logp = pol.log_prob(mean, actions)
    rewards = rng.normal(size=n)
    terminals = np.zeros(n, dtype=bool)
    terminals[-1] = True
    batch = TransitionBatch(obs, actions, logp, rewards, values, terminals)
    batch.fill_gae(0.99, 0.95)
    return batch


def test_ratio_one_surrogate_equals_mean_advantage():
    pol = small_policy()
    batch = make_batch(pol)
    adv = normalize_advantages(batch.advantages)
    cfg = PPOConfig()
    stats, _ = ppo_loss_and_grads(pol, batch.observations, batch.actions,
                                  batch.log_probs, adv, batch.returns, cfg)
    assert abs(stats.policy_loss - (-adv.mean())) < 1e-10


def test_clip_saturated_samples_have_zero_surrogate_gradient():
    pol = small_policy()
    batch = make_batch(pol, n=8)
    cfg = PPOConfig()
    adv = np.ones(8)
    # Shift old log-probs so every ratio exceeds 1 + epsilon with A > 0.
    old = batch.log_probs - math.log(2.0)
    _, grads = ppo_loss_and_grads(pol, batch.observations, batch.actions,
                                  old, adv, batch.returns, cfg)
    trunk_grads = grads[:len(pol.trunk.params())]
    assert all(np.all(g == 0.0) for g in trunk_grads)


def test_ppo_gradients_match_finite_differences():
    pol = small_policy(obs_dim=5, hidden=(8, 8), mode=ENDTOEND, seed=13)
    batch = make_batch(pol, n=16, seed=4)
    cfg = PPOConfig()
    adv = normalize_advantages(batch.advantages)
    # Uniform ratio exp(0.05) stays strictly inside the clip interval, so
    # the objective is smooth at the evaluation point.
    old = batch.log_probs - 0.05
    args = (batch.observations, batch.actions, old, adv, batch.returns, cfg)
    _, grads = ppo_loss_and_grads(pol, *args)
    h = 1e-5
    worst = 0.0
    checked = 0
    for p, g in zip(pol.params(), grads):
        flat_p, flat_g = p.ravel(), g.ravel()
        for k in range(flat_p.size):
            orig = flat_p[k]
            flat_p[k] = orig + h
            hi = ppo_loss_and_grads(pol, *args)[0].total_loss
            flat_p[k] = orig - h
            lo = ppo_loss_and_grads(pol, *args)[0].total_loss
            flat_p[k] = orig
            fd = (hi - lo) / (2.0 * h)
            rel = abs(fd - flat_g[k]) / max(abs(fd), abs(flat_g[k]), 1e-6)
            worst = max(worst, rel)
            checked += 1
    assert checked > 100
    assert worst < 1e-4


def test_ppo_update_decreases_loss_on_fixed_batch():
    pol = small_policy(seed=21)
    batch = make_batch(pol, n=64, seed=8)
    cfg = PPOConfig(batch_size=64, minibatch_size=32, epochs=1)
    adv = normalize_advantages(batch.advantages)
    before = ppo_loss_and_grads(pol, batch.observations, batch.actions,
                                batch.log_probs, adv, batch.returns, cfg)[0]
    stats = ppo_update(pol, batch, cfg, np.random.default_rng(0))
    assert not stats.diverged
    after = ppo_loss_and_grads(pol, batch.observations, batch.actions,
                               batch.log_probs, adv, batch.returns, cfg)[0]
    assert after.total_loss < before.total_loss


def test_ppo_update_aborts_on_non_finite_loss():
    pol = small_policy(seed=2)
    batch = make_batch(pol, n=64, seed=5)
    batch.observations[3, 0] = np.nan
    cfg = PPOConfig(batch_size=64, minibatch_size=64, epochs=1)
    before = [p.copy() for p in pol.params()]
    stats = ppo_update(pol, batch, cfg, np.random.default_rng(0))
    assert stats.diverged
    for a, b in zip(pol.params(), before):
        assert np.array_equal(a, b)


def test_ppo_update_requires_filled_advantages():
    pol = small_policy()
    batch = make_batch(pol)
    batch.advantages = None
    with pytest.raises(ValueError):
        ppo_update(pol, batch, PPOConfig(), np.random.default_rng(0))


def test_ppo_config_validation():
    with pytest.raises(ValueError):
        PPOConfig(batch_size=100, minibatch_size=64)
    with pytest.raises(ValueError):
        PPOConfig(gamma=0.0)
    with pytest.raises(ValueError):
        PPOConfig(clip_epsilon=1.0)


# --- observations ---

def ego_at(x=0.0, y=0.0, heading=0.0, speed=0.0):
    return VehicleState(x, y, heading, speed)


def test_observation_ego_alone():
    obs = build_observation(ego_at(speed=3.0), [], 0.0, 1.0)
    assert obs.shape == (OBS_DIM,)
    assert np.all(obs[8:80] == 0.0)
    assert obs[80] == pytest.approx(0.3)
    assert obs[84] == 0.0  # n_vis
    assert obs[85] == 1.0  # t_rem
    assert obs[83] == 1.0  # no conflict


def test_observation_at_v_max():
    obs = build_observation(ego_at(speed=10.0), [], 0.5, 0.5)
    assert obs[80] == pytest.approx(1.0)


def test_observation_nearest_selection_and_padding():
    ego = ego_at()
    traffic = [ego_at(x=30.0), ego_at(x=5.0), ego_at(x=-12.0)]
    obs = build_observation(ego, traffic, 0.0, 1.0)
    # Slots sorted by distance: 5, 12, 30.
    assert obs[9] == pytest.approx(0.05)
    assert obs[17] == pytest.approx(-0.12)
    assert obs[25] == pytest.approx(0.30)
    assert np.all(obs[32:80] == 0.0)
    assert obs[82] == pytest.approx(5.0 / 50.0)
    assert obs[84] == pytest.approx(3.0 / 9.0)


def test_observation_caps_at_nine_neighbors():
    traffic = [ego_at(x=float(5 + i)) for i in range(12)]
    obs = build_observation(ego_at(), traffic, 0.0, 1.0)
    assert obs[84] == 1.0
    # Farthest included neighbor is the ninth-nearest, at x = 13.
    assert obs[73] == pytest.approx(0.13)


def test_observation_soft_clip():
    obs = build_observation(ego_at(x=150.0), [], 0.0, 1.0)
    assert obs[1] == pytest.approx(1.2)


def test_observation_translation_consistency():
    ego = ego_at(x=3.0, y=-2.0, heading=0.7, speed=4.0)
    traffic = [ego_at(x=10.0, y=5.0, heading=-1.0, speed=8.0)]
    base = build_observation(ego, traffic, 0.3, 0.8)
    dx, dy = 7.0, -4.0
    moved = build_observation(
        ego_at(ego.x + dx, ego.y + dy, ego.theta, ego.v),
        [ego_at(traffic[0].x + dx, traffic[0].y + dy,
                traffic[0].theta, traffic[0].v)],
        0.3, 0.8)
    expect = base.copy()
    for slot in range(2):
        expect[slot * 8 + 1] += dx / 100.0
        expect[slot * 8 + 2] += dy / 100.0
    assert np.allclose(moved, expect, atol=1e-12)


def test_observation_conflict_distance_feature():
    far = build_observation(ego_at(), [], 0.0, 1.0, conflict_distance=80.0)
    near = build_observation(ego_at(), [], 0.0, 1.0, conflict_distance=10.0)
    assert far[83] == 1.0
    assert near[83] == pytest.approx(0.2)


def test_obs_config_validation():
    with pytest.raises(ValueError):
        ObsConfig(v_max=0.0)
    with pytest.raises(ValueError):
        ObsConfig(distance_range=-1.0)


# --- actions and rewards ---

def test_scale_action_endpoints_and_midpoint():
    assert scale_action(-1.0) == 0.0
    assert scale_action(1.0) == 10.0
    assert scale_action(0.0) == 5.0


def test_scale_control_maps_bounds():
    a, d = scale_control(np.array([-1.0, 1.0]))
    assert (a, d) == (-5.0, 0.6)
    a, d = scale_control(np.array([0.0, 0.0]))
    assert a == pytest.approx(-1.0)
    assert d == pytest.approx(0.0)


def test_reward_collision_constant():
    r = compute_reward(5.0, 1.0, 0.0, 0.0, terminal_kind=COLLISION)
    assert r.total == -50.0
    assert r.alive == r.speed == r.proximity == r.smooth == r.center == 0.0


def test_reward_success_constant():
    assert compute_reward(5.0, 1.0, 0.0, 0.0, terminal_kind=SUCCESS).total == 20.0


def test_reward_cruise_example():
    # 0.2 alive + 1.5 speed + 0 proximity + 0 smooth + 0.3 centered.
    r = compute_reward(10.0, 0.6, 0.0, 0.0)
    assert r.total == pytest.approx(2.0)


def test_reward_proximity_boundary_inactive():
    assert compute_reward(5.0, 0.5, 0.0, 0.0).proximity == 0.0
    assert compute_reward(5.0, 0.49, 0.0, 0.0).proximity < 0.0


def test_reward_total_is_component_sum():
    r = compute_reward(7.3, 0.2, 1.7, 0.8)
    parts = r.alive + r.speed + r.proximity + r.smooth + r.center + r.terminal
    assert r.total == parts


def test_reward_center_term_floored():
    r = compute_reward(5.0, 1.0, 0.0, 5.0)
    assert r.center == 0.0


def test_reward_timeout_keeps_step_reward():
    r = compute_reward(10.0, 1.0, 0.0, 0.0, terminal_kind="timeout")
    assert r.total == pytest.approx(2.0)
    assert r.terminal == 0.0
