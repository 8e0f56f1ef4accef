"""Comparison learners: behavior cloning and a JS-discriminator imitator.

Both reuse the environment, buffer, network and evaluation code of the main
trainer, so measured differences come from the objective alone.
"""

from __future__ import annotations

import enum

import numpy as np

from .approximator import AdamState, adam_update, backward, forward, get_flat, init_network, set_flat
from .env import MdpSpec, _strip, encode_states
from .optimality import LOG_STD_BOUNDS
from .policy import DiscreteActor, GaussianActor, TabularPolicy, softmax
from .trainer import TrainConfig, _run


class BaselineKind(enum.Enum):
    BEHAVIOR_CLONING = "behavior_cloning"
    JS_IMITATOR = "js_imitator"


HOLDOUT_FRACTION = 0.1


def _split(n: int, rng: np.random.Generator):
    idx = rng.permutation(n)
    n_hold = int(round(n * HOLDOUT_FRACTION)) if n >= 2 else 0
    n_hold = max(n_hold, 1) if n >= 2 else 0
    return idx[n_hold:], idx[:n_hold]


class _TabularModel:
    def __init__(self, spec: MdpSpec):
        self.logits = np.zeros((spec.n_states, spec.n_actions))

    def params(self):
        return [self.logits]

    def nll(self, states, actions):
        s = states.astype(int)
        a = actions.astype(int)
        p = softmax(self.logits[s])
        n = len(s)
        loss = float(-np.mean(np.log(np.maximum(p[np.arange(n), a], 1e-300))))
        g = p.copy()
        g[np.arange(n), a] -= 1.0
        grad = np.zeros_like(self.logits)
        np.add.at(grad, s, g / n)
        return loss, [grad]

    def snapshot(self):
        return self.logits.copy()

    def restore(self, snap):
        self.logits[...] = snap

    def policy(self, spec):
        return TabularPolicy(self.logits.copy())


class _DiscreteNetModel:
    def __init__(self, spec: MdpSpec, hidden, rng):
        self.spec = spec
        self.net = init_network([spec.state_dim, *hidden, spec.n_actions], rng)

    def params(self):
        return self.net.params()

    def nll(self, states, actions):
        x = encode_states(self.spec, states)
        z = forward(self.net, x)
        p = softmax(z)
        n = len(actions)
        a = actions.astype(int)
        loss = float(-np.mean(np.log(np.maximum(p[np.arange(n), a], 1e-300))))
        g = p.copy()
        g[np.arange(n), a] -= 1.0
        return loss, backward(self.net, x, g / n).params

    def snapshot(self):
        return get_flat(self.net)

    def restore(self, snap):
        set_flat(self.net, snap)

    def policy(self, spec):
        return DiscreteActor(spec, self.net.copy())


class _GaussianNetModel:
    def __init__(self, spec: MdpSpec, hidden, rng):
        self.spec = spec
        self.d = spec.action_dim
        self.net = init_network([spec.state_dim, *hidden, 2 * self.d], rng)
        self.net.layers[-1].b[self.d:] = -0.5

    def params(self):
        return self.net.params()

    def nll(self, states, actions):
        x = encode_states(self.spec, states)
        out = forward(self.net, x)
        mean, raw = out[:, :self.d], out[:, self.d:]
        log_std = np.clip(raw, *LOG_STD_BOUNDS)
        u = (actions - mean) * np.exp(-log_std)
        n = len(actions)
        loss = float(np.mean(np.sum(0.5 * u**2 + log_std + 0.5 * np.log(2 * np.pi), axis=1)))
        g = np.zeros_like(out)
        g[:, :self.d] = -u * np.exp(-log_std)
        inside = (raw > LOG_STD_BOUNDS[0]) & (raw < LOG_STD_BOUNDS[1])
        g[:, self.d:] = np.where(inside, 1.0 - u**2, 0.0)
        return loss, backward(self.net, x, g / n).params

    def snapshot(self):
        return get_flat(self.net)

    def restore(self, snap):
        set_flat(self.net, snap)

    def policy(self, spec):
        return GaussianActor(spec, self.net.copy())


def behavior_cloning(spec: MdpSpec, expert_trajectories, policy_arch="tabular", epochs: int = 500,
                     lr: float = 0.05, seed: int = 0, patience: int = 10):
    """Maximum-likelihood fit of the expert's actions given states.

    ``policy_arch`` is ``"tabular"`` (gridworlds only) or a tuple of hidden
    layer widths. Full-batch Adam on 90% of the transitions; training stops
    once the loss on the remaining 10% has not improved for ``patience``
    epochs and the best parameters are restored.
    """
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    data = [_strip(t) for traj in expert_trajectories for t in traj.transitions] if expert_trajectories else []
    if not data:
        raise ValueError("behavior cloning needs nonempty expert data")
    rng = np.random.default_rng(seed)
    dtype = int if spec.is_tabular else float
    states = np.array([t[0] for t in data], dtype=dtype)
    actions = np.array([t[1] for t in data], dtype=dtype)

    if policy_arch == "tabular":
        if not spec.is_tabular:
            raise TypeError(f"tabular behavior cloning needs a tabular spec; {spec.name} is continuous")
        model = _TabularModel(spec)
    elif spec.is_tabular:
        model = _DiscreteNetModel(spec, tuple(policy_arch), rng)
    else:
        model = _GaussianNetModel(spec, tuple(policy_arch), rng)

    train_idx, hold_idx = _split(len(data), rng)
    opt = AdamState.for_params(model.params(), lr)
    best, best_snap, stale = np.inf, model.snapshot(), 0
    for _ in range(epochs):
        _, grads = model.nll(states[train_idx], actions[train_idx])
        adam_update(model.params(), grads, opt)
        if len(hold_idx) == 0:
            best_snap = model.snapshot()
            continue
        hold_loss, _ = model.nll(states[hold_idx], actions[hold_idx])
        if hold_loss < best - 1e-12:
            best, best_snap, stale = hold_loss, model.snapshot(), 0
        else:
            stale += 1
            if stale >= patience:
                break
    model.restore(best_snap)
    return model.policy(spec)


def js_imitator_train(spec: MdpSpec, expert_trajectories, config: TrainConfig, expert_policy=None,
                      on_eval=None):
    """Adversarial imitation with a logistic discriminator D and policy reward
    ``-ln(1 - D(s, a))``. Returns ``(policy, report)``."""
    res = _run(spec, expert_trajectories, config, "js", expert_policy, on_eval)
    return res.policy, res.report


def run_baseline(kind: BaselineKind, spec: MdpSpec, expert_trajectories, config: TrainConfig | None = None,
                 **bc_kwargs):
    """Dispatch on ``kind``. Returns ``(policy, report_or_None)``."""
    if kind is BaselineKind.BEHAVIOR_CLONING:
        return behavior_cloning(spec, expert_trajectories, **bc_kwargs), None
    if kind is BaselineKind.JS_IMITATOR:
        return js_imitator_train(spec, expert_trajectories, config or TrainConfig())
    raise ValueError(f"unhandled baseline kind {kind!r}")
