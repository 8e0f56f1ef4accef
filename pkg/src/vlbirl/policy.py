"""Exact solvers for tabular specs and a compact advantage actor-critic.

Learners come in two shapes sharing one interface (``act``, ``action_probs``
for discrete policies, ``predict`` for critics):

* tabular: :class:`TabularPolicy` (softmax over a logit table) and
  :class:`ValueTable`;
* network: :class:`DiscreteActor`, :class:`GaussianActor` and
  :class:`NetworkCritic`, each owning an Adam state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .approximator import (AdamState, GradientBundle, Network, adam_update, backward, clip_by_norm, forward,
                          init_network, load_arrays, load_network, save_arrays, save_network)
from .env import Batch, MdpSpec, encode_states, make_batch, rollout, run_episode, step

LOG_STD_BOUNDS = (-5.0, 2.0)


def softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=float)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


# --------------------------------------------------------------------------
# tabular models


@dataclass
class TabularMdp:
    """Explicit model: ``P[s, a, s']`` transition probabilities, ``R[s, a]`` expected reward."""

    P: np.ndarray
    R: np.ndarray
    discount: float
    terminal: np.ndarray | None = None

    @property
    def n_states(self):
        return self.P.shape[0]

    @property
    def n_actions(self):
        return self.P.shape[1]


def tabular_model(spec: MdpSpec) -> TabularMdp:
    if not spec.is_tabular:
        raise TypeError(f"{spec.name} is continuous; no tabular model exists")
    S, A = spec.n_states, spec.n_actions
    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    for s in range(S):
        for a in range(A):
            nxt, r, _ = step(spec, s, a)
            P[s, a, nxt] = 1.0
            R[s, a] = r
    terminal = np.array([spec.is_terminal(s) for s in range(S)])
    return TabularMdp(P, R, spec.discount, terminal)


def _as_model(mdp) -> TabularMdp:
    if isinstance(mdp, TabularMdp):
        return mdp
    if isinstance(mdp, MdpSpec):
        return tabular_model(mdp)
    raise TypeError(f"expected MdpSpec or TabularMdp, got {type(mdp).__name__}")


@dataclass
class ValueTable:
    values: np.ndarray
    residuals: list = field(default_factory=list)

    def predict(self, states):
        return self.values[np.asarray(states, dtype=int)]

    def copy(self) -> "ValueTable":
        return ValueTable(self.values.copy())


class TabularPolicy:
    """``pi(a|s) = softmax(beta * logits[s])``. ``-inf`` logits mark forbidden actions."""

    def __init__(self, logits, beta: float = 1.0):
        self.logits = np.array(logits, dtype=float)
        self.beta = float(beta)

    @property
    def n_states(self):
        return self.logits.shape[0]

    @property
    def n_actions(self):
        return self.logits.shape[1]

    def probs_table(self) -> np.ndarray:
        return softmax(self.beta * self.logits, axis=1)

    def action_probs(self, state):
        return softmax(self.beta * self.logits[int(state)])

    def greedy_action(self, state) -> int:
        row = self.logits[int(state)]
        # lowest index among (numerically) tied maxima
        return int(np.flatnonzero(row >= row.max() - 1e-12 * (1.0 + abs(row.max())))[0])

    def act(self, state, rng, deterministic=False):
        if deterministic:
            return self.greedy_action(state)
        cdf = np.cumsum(self.action_probs(state))
        return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), self.n_actions - 1))

    def copy(self) -> "TabularPolicy":
        return TabularPolicy(self.logits.copy(), self.beta)


def q_values(mdp, values) -> np.ndarray:
    m = _as_model(mdp)
    return m.R + m.discount * m.P @ values


def greedy_from_q(Q: np.ndarray) -> TabularPolicy:
    best = Q.max(axis=1, keepdims=True)
    tied = Q >= best - 1e-12 * (1.0 + np.abs(best))
    first = np.argmax(tied, axis=1)
    logits = np.full(Q.shape, -np.inf)
    logits[np.arange(Q.shape[0]), first] = 0.0
    return TabularPolicy(logits)


def value_iteration(mdp, tol: float = 1e-10, max_iter: int = 1_000_000) -> tuple[ValueTable, TabularPolicy]:
    """Bellman optimality sweeps until the sup-norm residual drops below ``tol``."""
    if isinstance(mdp, MdpSpec) and not mdp.is_tabular:
        raise TypeError(f"value_iteration needs a tabular spec; {mdp.name} is continuous")
    if tol <= 0:
        raise ValueError("tol must be positive")
    m = _as_model(mdp)
    V = np.zeros(m.n_states)
    residuals = []
    for _ in range(max_iter):
        V_new = (m.R + m.discount * m.P @ V).max(axis=1)
        res = float(np.max(np.abs(V_new - V)))
        residuals.append(res)
        V = V_new
        if res < tol:
            break
    else:
        raise RuntimeError(f"value iteration did not converge in {max_iter} sweeps (residual {res:.3g})")
    return ValueTable(V, residuals), greedy_from_q(q_values(m, V))


def policy_matrix(mdp, policy, deterministic: bool = False) -> np.ndarray:
    """``pi[s, a]`` for any discrete policy; one-hot greedy rows when ``deterministic``."""
    S = mdp.n_states
    if isinstance(policy, TabularPolicy):
        if not deterministic:
            return policy.probs_table()
        out = np.zeros((S, policy.n_actions))
        for s in range(S):
            out[s, policy.greedy_action(s)] = 1.0
        return out
    if deterministic:
        n = mdp.n_actions
        out = np.zeros((S, n))
        for s in range(S):
            out[s, policy.act(s, None, deterministic=True)] = 1.0
        return out
    return np.array([policy.action_probs(s) for s in range(S)])


def policy_evaluation(mdp, policy, tol: float = 1e-10, deterministic: bool = False) -> ValueTable:
    """Exact ``V^pi`` under the model's (true) reward, by a direct linear solve."""
    if isinstance(mdp, MdpSpec) and not mdp.is_tabular:
        raise TypeError(f"policy_evaluation needs a tabular spec; use mc_value_estimate for {mdp.name}")
    m = _as_model(mdp)
    pi = policy_matrix(m, policy, deterministic)
    P_pi = np.einsum("sa,sat->st", pi, m.P)
    R_pi = np.sum(pi * m.R, axis=1)
    V = np.linalg.solve(np.eye(m.n_states) - m.discount * P_pi, R_pi)
    residual = float(np.max(np.abs(R_pi + m.discount * P_pi @ V - V)))
    if residual >= tol:
        # polish with Bellman sweeps if the solve was ill-conditioned
        for _ in range(100_000):
            V = R_pi + m.discount * P_pi @ V
            residual = float(np.max(np.abs(R_pi + m.discount * P_pi @ V - V)))
            if residual < tol:
                break
    return ValueTable(V, [residual])


def mc_value_estimate(spec: MdpSpec, policy, n_episodes: int, seed: int = 0,
                      deterministic: bool = False) -> tuple[float, float]:
    """Mean and standard error of discounted true returns from the start distribution."""
    if n_episodes < 2:
        raise ValueError("mc_value_estimate needs n_episodes >= 2")
    returns = np.array([t.discounted_return(spec.discount)
                        for t in rollout(spec, policy, n_episodes, seed, deterministic)])
    return float(returns.mean()), float(returns.std(ddof=1) / np.sqrt(n_episodes))


def optimal_expert(spec: MdpSpec, beta: float | None = None) -> TabularPolicy:
    """Value-iteration expert: greedy (lowest-index ties) or Boltzmann over ``Q*`` with ``beta``."""
    V, greedy = value_iteration(spec)
    if beta is None:
        return greedy
    return TabularPolicy(q_values(spec, V.values), beta)


# --------------------------------------------------------------------------
# network learners


class NetworkCritic:
    def __init__(self, spec: MdpSpec, net: Network, lr: float = 1e-3):
        self.spec = spec
        self.net = net
        self.opt = AdamState.for_network(net, lr)

    def predict(self, states):
        return forward(self.net, encode_states(self.spec, states))[:, 0]


class DiscreteActor:
    """Softmax policy whose logits come from a network over encoded states."""

    def __init__(self, spec: MdpSpec, net: Network, lr: float = 1e-3):
        self.spec = spec
        self.net = net
        self.n_actions = net.output_dim
        self.opt = AdamState.for_network(net, lr)

    def logits(self, states):
        return forward(self.net, encode_states(self.spec, states))

    def action_probs(self, state):
        return softmax(self.logits([state])[0])

    def act(self, state, rng, deterministic=False):
        p = self.action_probs(state)
        if deterministic:
            return int(np.argmax(p))
        cdf = np.cumsum(p)
        return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), self.n_actions - 1))


class GaussianActor:
    """Diagonal Gaussian policy; the network emits ``[mean, log_std]`` per action dim."""

    def __init__(self, spec: MdpSpec, net: Network, lr: float = 1e-3):
        self.spec = spec
        self.net = net
        self.action_dim = net.output_dim // 2
        self.action_bound = spec.kind.max_force
        self.opt = AdamState.for_network(net, lr)

    def mean_log_std(self, states):
        out = forward(self.net, encode_states(self.spec, states))
        d = self.action_dim
        return out[:, :d], np.clip(out[:, d:], *LOG_STD_BOUNDS)

    def act(self, state, rng, deterministic=False):
        mean, log_std = self.mean_log_std([state])
        if deterministic:
            return np.clip(mean[0], -self.action_bound, self.action_bound)
        return mean[0] + np.exp(log_std[0]) * rng.standard_normal(self.action_dim)


def make_learner(spec: MdpSpec, rng: np.random.Generator, hidden=(32, 32), lr_actor: float = 1e-3,
                 lr_critic: float = 1e-3, tabular: bool | None = None):
    """Fresh ``(policy, critic)``: tabular on gridworlds unless ``tabular=False``."""
    if tabular is None:
        tabular = spec.is_tabular
    if tabular:
        return TabularPolicy(np.zeros((spec.n_states, spec.n_actions))), ValueTable(np.zeros(spec.n_states))
    critic = NetworkCritic(spec, init_network([spec.state_dim, *hidden, 1], rng), lr_critic)
    if spec.is_tabular:
        actor = DiscreteActor(spec, init_network([spec.state_dim, *hidden, spec.n_actions], rng), lr_actor)
    else:
        net = init_network([spec.state_dim, *hidden, 2 * spec.action_dim], rng)
        net.layers[-1].b[spec.action_dim:] = -0.5
        actor = GaussianActor(spec, net, lr_actor)
    return actor, critic


# --------------------------------------------------------------------------
# losses (exposed for gradient checks) and the update


def _state_weights(states) -> np.ndarray:
    """``1 / count(s_i)``: per-state averaging for tabular updates."""
    s = np.asarray(states, dtype=int)
    return 1.0 / np.bincount(s)[s]


def critic_loss(critic, batch: Batch, targets) -> tuple[float, list[np.ndarray]]:
    """Squared TD error against fixed ``targets``; returns ``(loss, grads)`` in parameter order."""
    targets = np.asarray(targets, dtype=float)
    if isinstance(critic, ValueTable):
        w = _state_weights(batch.states)
        err = critic.values[batch.states] - targets
        g = np.zeros_like(critic.values)
        np.add.at(g, batch.states, w * err)
        return float(0.5 * np.sum(w * err**2)), [g]
    n = len(batch)
    x = encode_states(critic.spec, batch.states)
    err = forward(critic.net, x)[:, 0] - targets
    grads = backward(critic.net, x, (err / n)[:, None])
    return float(0.5 * np.mean(err**2)), grads.params


def actor_loss(policy, batch: Batch, advantages, ent_coef: float = 0.01) -> tuple[float, list[np.ndarray]]:
    """``-(A * log pi(a|s)) - ent_coef * H(pi(.|s))`` averaged; returns ``(loss, grads)``."""
    A = np.asarray(advantages, dtype=float)
    n = len(batch)
    if isinstance(policy, TabularPolicy):
        w = _state_weights(batch.states)
        z = policy.beta * policy.logits[batch.states]
        pi = softmax(z, axis=1)
        logp_all = np.log(np.maximum(pi, 1e-300))
        ent = -np.sum(np.where(pi > 0, pi * logp_all, 0.0), axis=1)
        logp = logp_all[np.arange(n), batch.actions]
        loss = float(-np.sum(w * (A * logp + ent_coef * ent)))
        onehot = np.zeros_like(pi)
        onehot[np.arange(n), batch.actions] = 1.0
        dent_dz = -pi * (np.where(pi > 0, logp_all, 0.0) + ent[:, None])
        dz = -(w[:, None]) * (A[:, None] * (onehot - pi) + ent_coef * dent_dz)
        g = np.zeros_like(policy.logits)
        np.add.at(g, batch.states, policy.beta * dz)
        return loss, [g]
    x = encode_states(policy.spec, batch.states)
    out = forward(policy.net, x)
    if isinstance(policy, DiscreteActor):
        pi = softmax(out, axis=1)
        logp_all = np.log(np.maximum(pi, 1e-300))
        ent = -np.sum(pi * logp_all, axis=1)
        logp = logp_all[np.arange(n), batch.actions]
        loss = float(-np.mean(A * logp + ent_coef * ent))
        onehot = np.zeros_like(pi)
        onehot[np.arange(n), batch.actions] = 1.0
        dent = -pi * (logp_all + ent[:, None])
        up = -(A[:, None] * (onehot - pi) + ent_coef * dent) / n
        return loss, backward(policy.net, x, up).params
    d = policy.action_dim
    mean, raw_log_std = out[:, :d], out[:, d:]
    log_std = np.clip(raw_log_std, *LOG_STD_BOUNDS)
    std = np.exp(log_std)
    u = (np.asarray(batch.actions, float).reshape(n, d) - mean) / std
    logp = np.sum(-0.5 * u**2 - log_std - 0.5 * np.log(2 * np.pi), axis=1)
    ent = np.sum(log_std + 0.5 * np.log(2 * np.pi * np.e), axis=1)
    loss = float(-np.mean(A * logp + ent_coef * ent))
    up = np.zeros_like(out)
    up[:, :d] = -(A[:, None] * u / std) / n
    inside = (raw_log_std > LOG_STD_BOUNDS[0]) & (raw_log_std < LOG_STD_BOUNDS[1])
    up[:, d:] = np.where(inside, -(A[:, None] * (u**2 - 1.0) + ent_coef) / n, 0.0)
    return loss, backward(policy.net, x, up).params


def learned_rewards(reward_source, batch: Batch) -> np.ndarray:
    """Rewards for a batch: a reward head's mean, or any ``batch -> rewards`` callable."""
    if hasattr(reward_source, "mean"):
        r = reward_source.mean(batch.features)
    else:
        r = np.asarray(reward_source(batch), dtype=float)
    if r.shape != (len(batch),) or not np.all(np.isfinite(r)):
        raise FloatingPointError("reward source produced non-finite or misshapen rewards")
    return r


def actor_critic_update(policy, critic, batch: Batch, reward_source, gamma: float, lr_actor: float,
                        lr_critic: float, rng=None, ent_coef: float = 0.01, max_grad_norm: float = 10.0):
    """One TD(0) advantage actor-critic step on learned rewards. Updates in place.

    Tabular learners take plain gradient steps with per-state averaging;
    network learners take Adam steps. Returns ``(policy, critic)``.
    """
    if len(batch) == 0:
        raise ValueError("actor_critic_update needs a nonempty batch")
    r = learned_rewards(reward_source, batch)
    v_s = critic.predict(batch.states)
    v_next = critic.predict(batch.next_states) * (1.0 - batch.dones)
    targets = r + gamma * v_next
    adv = targets - v_s

    _, cg = critic_loss(critic, batch, targets)
    _, ag = actor_loss(policy, batch, adv, ent_coef)
    if isinstance(critic, ValueTable):
        critic.values -= lr_critic * clip_by_norm(cg, max_grad_norm)[0]
    else:
        critic.opt.learning_rate = lr_critic
        critic.opt.max_grad_norm = max_grad_norm
        adam_update(critic.net.params(), cg, critic.opt)
    if isinstance(policy, TabularPolicy):
        policy.logits -= lr_actor * clip_by_norm(ag, max_grad_norm)[0]
    else:
        policy.opt.learning_rate = lr_actor
        policy.opt.max_grad_norm = max_grad_norm
        adam_update(policy.net.params(), ag, policy.opt)
    return policy, critic


def true_reward_source(spec: MdpSpec) -> Callable[[Batch], np.ndarray]:
    """Reward callable that recomputes the ground-truth reward from the env definition."""
    def fn(batch: Batch):
        return np.array([spec.true_reward(s, a, n) for s, a, n in zip(batch.states, batch.actions, batch.next_states)])
    return fn


def train_on_reward(spec: MdpSpec, policy, critic, reward_source, n_transitions: int, seed: int = 0,
                    episodes_per_update: int = 4, lr_actor: float = 0.5, lr_critic: float = 0.5,
                    ent_coef: float = 0.01, eval_every: int = 0, patience: int = 20, eval_episodes: int = 20):
    """On-policy actor-critic training against a fixed reward source.

    With ``eval_every > 0`` training stops once the deterministic mean return
    has not improved for ``patience`` evaluations; the best snapshot is kept.
    """
    seen, it = 0, 0
    best, best_policy, stale = -np.inf, None, 0
    while seen < n_transitions:
        trajs = rollout(spec, policy, episodes_per_update, seed + it * episodes_per_update)
        batch = make_batch(spec, [t.strip() for tr in trajs for t in tr.transitions])
        actor_critic_update(policy, critic, batch, reward_source, spec.discount, lr_actor, lr_critic,
                            ent_coef=ent_coef)
        seen += len(batch)
        it += 1
        if eval_every and it % eval_every == 0:
            ret = float(np.mean([t.total_reward() for t in rollout(spec, policy, eval_episodes, 10**9, True)]))
            if ret > best + 1e-9:
                best, stale = ret, 0
                best_policy = _snapshot(policy)
            else:
                stale += 1
                if stale >= patience:
                    break
    if best_policy is not None:
        _restore(policy, best_policy)
    return policy, critic


def _snapshot(policy):
    if isinstance(policy, TabularPolicy):
        return policy.logits.copy()
    return policy.net.copy()


def _restore(policy, snap):
    if isinstance(policy, TabularPolicy):
        policy.logits[...] = snap
    else:
        policy.net = snap


def train_continuous_expert(spec: MdpSpec, seed: int = 0, max_transitions: int = 200_000,
                            patience: int = 20, eval_every: int = 10):
    """Actor-critic on the true reward until the mean return plateaus, then frozen."""
    rng = np.random.default_rng(seed)
    actor, critic = make_learner(spec, rng, lr_actor=3e-3, lr_critic=3e-3)
    train_on_reward(spec, actor, critic, true_reward_source(spec), max_transitions, seed=seed,
                    lr_actor=3e-3, lr_critic=3e-3, ent_coef=0.0, eval_every=eval_every, patience=patience)
    return actor


# --------------------------------------------------------------------------
# checkpoints


def save_model(path: str, model) -> None:
    """Write a policy or critic (tabular or network) to ``path``."""
    if isinstance(model, TabularPolicy):
        save_arrays(path, {"logits": model.logits}, kind="tabular_policy", beta=model.beta)
    elif isinstance(model, ValueTable):
        save_arrays(path, {"values": model.values}, kind="value_table")
    elif isinstance(model, (DiscreteActor, GaussianActor, NetworkCritic)):
        save_network(path, model.net, kind=type(model).__name__)
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")


def load_model(path: str, spec: MdpSpec):
    with open(path, "rb") as fh:
        fmt = json.loads(fh.readline()).get("format")
    if fmt == "vlbirl-arrays-v1":
        arrays, meta = load_arrays(path)
        if meta.get("kind") == "tabular_policy":
            return TabularPolicy(arrays["logits"], meta.get("beta", 1.0))
        return ValueTable(arrays["values"])
    net, meta = load_network(path)
    cls = {"DiscreteActor": DiscreteActor, "GaussianActor": GaussianActor, "NetworkCritic": NetworkCritic}
    if meta.get("kind") not in cls:
        raise ValueError(f"{path}: unknown model kind {meta.get('kind')!r}")
    return cls[meta["kind"]](spec, net)
