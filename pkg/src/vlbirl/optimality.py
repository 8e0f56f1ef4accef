"""Optimality distributions and the reward objective.

Two estimates of the probability that a state-action pair is expert-optimal
are compared:

* ``p`` - a logistic classifier on state-action features (expert vs learner);
* ``q`` - a sigmoid of the advantage ``r + gamma * V(s') - V(s)`` built from a
  reward sampled from a Gaussian reward head via ``r = mu + sigma * eps``.

The reward head is fitted by minimizing ``KL(q || p)`` (Bernoulli, reverse
direction) plus ``lambda_var * sigma**2``. The classifier and the critic are
frozen targets during this step: only the reward head receives gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .approximator import GradientBundle, Network, backward, forward, init_network, sigmoid
from .env import Batch

PROB_CLAMP = 1e-6
LOG_STD_BOUNDS = (-10.0, 3.0)


def clamp_prob(x):
    return np.clip(x, PROB_CLAMP, 1.0 - PROB_CLAMP)


def _logit(p):
    return np.log(p) - np.log1p(-p)


def bernoulli_reverse_kl(q, p):
    """``KL(Bern(q) || Bern(p))``, both arguments clamped to ``[1e-6, 1 - 1e-6]``."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(q)) or np.any(~np.isfinite(p)) or np.any((q < 0) | (q > 1) | (p < 0) | (p > 1)):
        raise ValueError("bernoulli_reverse_kl expects probabilities in [0, 1]")
    q, p = clamp_prob(q), clamp_prob(p)
    kl = q * (np.log(q) - np.log(p)) + (1.0 - q) * (np.log1p(-q) - np.log1p(-p))
    # rounding can leave tiny negatives when q == p
    kl = np.maximum(kl, 0.0)
    return float(kl) if kl.ndim == 0 else kl


@dataclass
class RewardHead:
    """Network mapping state-action features to ``(mu, log_sigma)``."""

    net: Network
    deterministic_mode: bool = False

    def mean_std(self, features):
        out = forward(self.net, np.atleast_2d(features))
        mu = out[:, 0]
        if self.deterministic_mode:
            return mu, np.zeros_like(mu)
        return mu, np.exp(np.clip(out[:, 1], *LOG_STD_BOUNDS))

    def mean(self, features) -> np.ndarray:
        return forward(self.net, np.atleast_2d(features))[:, 0]


@dataclass
class Classifier:
    """Logistic classifier: ``sigmoid(net(features))`` is P(expert | s, a)."""

    net: Network

    def logits(self, features) -> np.ndarray:
        return forward(self.net, np.atleast_2d(features))[:, 0]


def make_reward_head(feature_dim: int, rng: np.random.Generator, hidden=(16, 16),
                     deterministic: bool = False, init_log_std: float = -1.0) -> RewardHead:
    net = init_network([feature_dim, *hidden, 2], rng)
    net.layers[-1].b[1] = init_log_std
    return RewardHead(net, deterministic)


def make_classifier(feature_dim: int, rng: np.random.Generator, hidden=(16, 16)) -> Classifier:
    return Classifier(init_network([feature_dim, *hidden, 1], rng))


def sample_reward(head: RewardHead, features, noise_eps):
    """Reparameterized draw ``r = mu + sigma * noise_eps``; returns ``(r, mu, sigma)``."""
    mu, sigma = head.mean_std(features)
    eps = np.broadcast_to(np.asarray(noise_eps, dtype=float), mu.shape)
    r = mu + sigma * eps
    if np.ndim(features) == 1:
        return float(r[0]), float(mu[0]), float(sigma[0])
    return r, mu, sigma


def q_advantage(r, v_s, v_next, gamma: float, done):
    """``sigmoid(r + gamma * v_next * (1 - done) - v_s)``, clamped."""
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    z = np.asarray(r, float) + gamma * np.asarray(v_next, float) * (1.0 - np.asarray(done, float)) - np.asarray(v_s, float)
    q = clamp_prob(sigmoid(z))
    return float(q) if q.ndim == 0 else q


def q_exp_reward(r, scale: float = 1.0):
    """Bounded monotone surrogate for ``q proportional to exp(r)``: ``sigmoid(r / scale)``."""
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    q = clamp_prob(sigmoid(np.asarray(r, float) / scale))
    return float(q) if q.ndim == 0 else q


def p_optimality(clf: Classifier, features):
    p = clamp_prob(sigmoid(clf.logits(features)))
    return float(p[0]) if np.ndim(features) == 1 else p


class RewardLoss(NamedTuple):
    loss: float
    grads: GradientBundle
    kl: float
    variance: float


def reward_loss(head: RewardHead, clf: Classifier, critic, batch: Batch, gamma: float, lambda_var: float,
                rng: np.random.Generator | None = None, noise=None, mode: str = "advantage",
                exp_scale: float = 1.0) -> RewardLoss:
    """Mean reverse KL between ``q`` and ``p`` plus ``lambda_var * mean(sigma**2)``.

    ``noise`` overrides the standard-normal draws taken from ``rng``. Critic
    values and classifier outputs enter as constants.
    """
    n = len(batch)
    if n == 0:
        raise ValueError("reward_loss needs a nonempty batch")
    if mode not in ("advantage", "exp_reward"):
        raise ValueError(f"unknown optimality mode {mode!r}")
    x = batch.features
    out = forward(head.net, x)
    mu = out[:, 0]
    log_sigma = out[:, 1]
    if head.deterministic_mode:
        sigma = np.zeros(n)
        eps = np.zeros(n)
    else:
        sigma = np.exp(np.clip(log_sigma, *LOG_STD_BOUNDS))
        if noise is not None:
            eps = np.broadcast_to(np.asarray(noise, dtype=float), (n,))
        elif rng is not None:
            eps = rng.standard_normal(n)
        else:
            raise ValueError("stochastic reward head needs rng or explicit noise")
    r = mu + sigma * eps

    if mode == "advantage":
        v_s = np.asarray(critic.predict(batch.states), dtype=float)
        v_next = np.asarray(critic.predict(batch.next_states), dtype=float)
        if not (np.all(np.isfinite(v_s)) and np.all(np.isfinite(v_next))):
            raise FloatingPointError("critic returned non-finite values")
        z = r + gamma * v_next * (1.0 - batch.dones) - v_s
        dz_dr = 1.0
    else:
        z = r / exp_scale
        dz_dr = 1.0 / exp_scale

    q_raw = sigmoid(z)
    q = clamp_prob(q_raw)
    p = p_optimality(clf, x)
    kl = bernoulli_reverse_kl(q, p)
    var = sigma**2
    loss = float(np.mean(kl) + lambda_var * np.mean(var))

    active = (q_raw > PROB_CLAMP) & (q_raw < 1.0 - PROB_CLAMP)
    dkl_dz = np.where(active, q * (1.0 - q) * (_logit(q) - _logit(p)), 0.0)
    dkl_dr = dkl_dz * dz_dr
    upstream = np.zeros_like(out)
    upstream[:, 0] = dkl_dr / n
    if not head.deterministic_mode:
        inside = (log_sigma > LOG_STD_BOUNDS[0]) & (log_sigma < LOG_STD_BOUNDS[1])
        upstream[:, 1] = np.where(inside, dkl_dr * eps * sigma + 2.0 * lambda_var * var, 0.0) / n
    grads = backward(head.net, x, upstream)
    return RewardLoss(loss, grads, float(np.mean(kl)), float(np.mean(var)))
