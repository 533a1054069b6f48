"""Fully connected networks with hand-written reverse-mode gradients.

Everything is float64 numpy. An MLP applies tanh on hidden layers and leaves
the final layer linear; the Gaussian policy squashes the final layer with tanh
to keep the action mean in [-1, 1] and carries a state-independent log-std.
"""

from __future__ import annotations

import math

import numpy as np


class MLP:
    """Weights W: (n_in, n_out) with x @ W + b per layer."""

    def __init__(self, sizes: list[int], rng: np.random.Generator | None = None,
                 out_scale: float = 1.0):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = list(sizes)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            if rng is None:
                w = np.zeros((n_in, n_out))
            else:
                w = rng.normal(0.0, 1.0 / math.sqrt(n_in), size=(n_in, n_out))
                if i == len(sizes) - 2:
                    w *= out_scale
            self.weights.append(w)
            self.biases.append(np.zeros(n_out))

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def forward(self, x: np.ndarray):
        """Returns (output, cache). x is (batch, n_in); output is linear."""
        h = np.atleast_2d(np.asarray(x, dtype=float))
        cache = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if i == last else np.tanh(z)
            cache.append(h)
        return h, cache

    def backward(self, cache: list[np.ndarray], dout: np.ndarray):
        """Gradients of a scalar loss given dloss/doutput.

        Returns (grads, dx) where grads matches params() order.
        """
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        delta = np.atleast_2d(dout)
        for i in range(len(self.weights) - 1, -1, -1):
            h_in = cache[i]
            grads_w[i] = h_in.T @ delta
            grads_b[i] = delta.sum(axis=0)
            delta = delta @ self.weights[i].T
            if i > 0:
                # cache[i] stores tanh(z) for hidden layers.
                delta = delta * (1.0 - cache[i] ** 2)
        grads = []
        for gw, gb in zip(grads_w, grads_b):
            grads.append(gw)
            grads.append(gb)
        return grads, delta


class Adam:
    """Adam over a fixed list of parameter arrays, updated in place."""

    def __init__(self, params: list[np.ndarray], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameter list")
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


SPEEDREF = "speedref"
ENDTOEND = "endtoend"
ACTION_DIMS = {SPEEDREF: 1, ENDTOEND: 2}


class GaussianPolicy:
    """Tanh-mean Gaussian policy with a separate value trunk.

    mode selects the action dimensionality: a 1-d speed-reference multiplier
    or a 2-d direct (accel, steer) head.
    """

    def __init__(self, obs_dim: int, mode: str, hidden: tuple[int, int] = (512, 256),
                 seed: int | None = 0, log_std_init: float = math.log(0.3)):
        if mode not in ACTION_DIMS:
            raise ValueError(f"unknown mode {mode!r}")
        self.obs_dim = obs_dim
        self.mode = mode
        self.act_dim = ACTION_DIMS[mode]
        self.hidden = tuple(hidden)
        rng = None if seed is None else np.random.default_rng(seed)
        self.trunk = MLP([obs_dim, *hidden, self.act_dim], rng, out_scale=0.01)
        self.value_net = MLP([obs_dim, *hidden, 1], rng)
        self.log_std = np.full(self.act_dim, float(log_std_init))

    def params(self) -> list[np.ndarray]:
        return self.trunk.params() + self.value_net.params() + [self.log_std]

    def set_params(self, values: list[np.ndarray]) -> None:
        own = self.params()
        if len(values) != len(own):
            raise ValueError("parameter list length mismatch")
        for dst, src in zip(own, values):
            if dst.shape != src.shape:
                raise ValueError("parameter shape mismatch")
            dst[...] = src

    def forward(self, obs: np.ndarray):
        """(mean, std, value) for a batch of observations."""
        z, _ = self.trunk.forward(obs)
        mean = np.tanh(z)
        std = np.exp(self.log_std)
        v, _ = self.value_net.forward(obs)
        return mean, std, v[:, 0]

    def log_prob(self, mean: np.ndarray, actions: np.ndarray) -> np.ndarray:
        std = np.exp(self.log_std)
        z = (actions - mean) / std
        return (-0.5 * z**2 - self.log_std - 0.5 * math.log(2.0 * math.pi)).sum(axis=1)

    def entropy(self) -> float:
        return float((self.log_std + 0.5 * math.log(2.0 * math.pi * math.e)).sum())

    def act(self, obs: np.ndarray, rng: np.random.Generator | None = None):
        """Single-observation action. Deterministic mean when rng is None.

        Returns (env_action, raw_action, log_prob, value): the environment
        receives the sample clipped to [-1, 1], while the raw sample and its
        log-probability are what belongs in the training buffer.
        """
        mean, std, value = self.forward(obs.reshape(1, -1))
        if rng is None:
            raw = mean[0].copy()
        else:
            raw = mean[0] + std * rng.standard_normal(self.act_dim)
        logp = float(self.log_prob(mean, raw.reshape(1, -1))[0])
        return np.clip(raw, -1.0, 1.0), raw, logp, float(value[0])
