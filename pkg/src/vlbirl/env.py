"""Built-in environments with a hidden ground-truth reward.

Two families are provided:

* ``Gridworld`` - deterministic grid, actions ``up, down, left, right``.
  States are flat indices ``row * width + col``. Entering a goal cell pays
  ``goal_reward - step_penalty`` and ends the episode; goal and trap cells are
  absorbing (self-loop, zero reward).
* ``PointMass`` - 2-D point with state ``(x, y, vx, vy)`` driven by a clipped
  force, integrated with explicit Euler and additive Gaussian state noise.

The true reward is stored on :class:`Transition` for evaluation only. Every
learner consumes :class:`ObservedTransition`, which has no reward field.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

ACTION_NAMES = ("up", "down", "left", "right")
_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass(frozen=True)
class Gridworld:
    width: int = 5
    height: int = 5
    goal_cells: tuple[int, ...] = (24,)
    trap_cells: tuple[int, ...] = ()
    step_penalty: float = 0.01
    goal_reward: float = 1.0
    trap_reward: float = -1.0


@dataclass(frozen=True)
class PointMass:
    arena_half_width: float = 1.0
    goal_center: tuple[float, float] = (0.5, 0.5)
    goal_radius: float = 0.1
    max_force: float = 1.0
    max_speed: float = 1.0
    dt: float = 0.1
    noise_std: float = 0.01
    step_penalty: float = 0.01
    goal_reward: float = 1.0


@dataclass(frozen=True)
class MdpSpec:
    """An environment description. Immutable, safe to share across workers."""

    name: str
    kind: Gridworld | PointMass
    discount: float = 0.99
    horizon: int = 50

    def __post_init__(self):
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if isinstance(self.kind, Gridworld):
            n = self.kind.width * self.kind.height
            for c in self.kind.goal_cells + self.kind.trap_cells:
                if not 0 <= c < n:
                    raise ValueError(f"cell {c} outside a {self.kind.width}x{self.kind.height} grid")
            if set(self.kind.goal_cells) & set(self.kind.trap_cells):
                raise ValueError("a cell cannot be both goal and trap")

    @property
    def is_tabular(self) -> bool:
        return isinstance(self.kind, Gridworld)

    @property
    def n_states(self) -> int:
        if not self.is_tabular:
            raise TypeError(f"{self.name} has a continuous state space")
        return self.kind.width * self.kind.height

    @property
    def n_actions(self) -> int:
        if not self.is_tabular:
            raise TypeError(f"{self.name} has a continuous action space")
        return len(_MOVES)

    @property
    def state_dim(self) -> int:
        return self.n_states if self.is_tabular else 4

    @property
    def action_dim(self) -> int:
        return self.n_actions if self.is_tabular else 2

    @property
    def feature_dim(self) -> int:
        return self.state_dim + self.action_dim

    def terminal_states(self) -> tuple[int, ...]:
        return tuple(self.kind.goal_cells) + tuple(self.kind.trap_cells)

    def in_goal(self, state) -> bool:
        if self.is_tabular:
            return int(state) in self.kind.goal_cells
        k = self.kind
        return float(np.hypot(state[0] - k.goal_center[0], state[1] - k.goal_center[1])) <= k.goal_radius

    def is_terminal(self, state) -> bool:
        if self.is_tabular:
            return int(state) in self.terminal_states()
        return self.in_goal(state)

    def true_reward(self, state, action, next_state) -> float:
        """Ground-truth reward. Hidden from learners; used only for evaluation."""
        if self.is_terminal(state):
            return 0.0
        k = self.kind
        r = -k.step_penalty
        if self.in_goal(next_state):
            r += k.goal_reward
        elif self.is_tabular and int(next_state) in k.trap_cells:
            r += k.trap_reward
        return r


class Transition(NamedTuple):
    state: object
    action: object
    next_state: object
    done: bool
    true_reward: float

    def strip(self) -> "ObservedTransition":
        return ObservedTransition(self.state, self.action, self.next_state, self.done)


class ObservedTransition(NamedTuple):
    """Learner-facing view of a transition. Carries no reward."""

    state: object
    action: object
    next_state: object
    done: bool


@dataclass
class Trajectory:
    transitions: list = field(default_factory=list)
    seed: int = 0

    def __len__(self):
        return len(self.transitions)

    def stripped(self) -> "Trajectory":
        return Trajectory([_strip(t) for t in self.transitions], self.seed)

    def total_reward(self) -> float:
        return float(sum(t.true_reward for t in self.transitions))

    def discounted_return(self, gamma: float) -> float:
        return float(sum(gamma**i * t.true_reward for i, t in enumerate(self.transitions)))


def _strip(t):
    return t.strip() if isinstance(t, Transition) else ObservedTransition(*t[:4])


# --------------------------------------------------------------------------
# dynamics


def step(spec: MdpSpec, state, action, rng: np.random.Generator | None = None):
    """Advance one step. Returns ``(next_state, true_reward, done)``."""
    if spec.is_tabular:
        return _grid_step(spec, state, action)
    return _point_step(spec, state, action, rng)


def _grid_step(spec: MdpSpec, state, action):
    k = spec.kind
    n = k.width * k.height
    if isinstance(state, (bool, np.bool_)) or not isinstance(state, (int, np.integer)) or not 0 <= state < n:
        raise ValueError(f"invalid gridworld state {state!r}; expected an int in [0, {n})")
    if isinstance(action, (bool, np.bool_)) or not isinstance(action, (int, np.integer)) or not 0 <= action < 4:
        raise ValueError(f"invalid gridworld action {action!r}; expected an int in [0, 4)")
    state, action = int(state), int(action)
    if state in k.goal_cells or state in k.trap_cells:
        return state, 0.0, True
    row, col = divmod(state, k.width)
    dr, dc = _MOVES[action]
    row = min(max(row + dr, 0), k.height - 1)
    col = min(max(col + dc, 0), k.width - 1)
    nxt = row * k.width + col
    done = nxt in k.goal_cells or nxt in k.trap_cells
    return nxt, spec.true_reward(state, action, nxt), done


def _point_step(spec: MdpSpec, state, action, rng):
    k = spec.kind
    s = np.asarray(state, dtype=float)
    a = np.asarray(action, dtype=float)
    if s.shape != (4,) or not np.all(np.isfinite(s)):
        raise ValueError(f"invalid pointmass state {state!r}; expected 4 finite floats")
    if a.shape != (2,) or not np.all(np.isfinite(a)):
        raise ValueError(f"invalid pointmass action {action!r}; expected 2 finite floats")
    if spec.in_goal(s):
        return s.copy(), 0.0, True
    a = np.clip(a, -k.max_force, k.max_force)
    vel = np.clip(s[2:] + k.dt * a, -k.max_speed, k.max_speed)
    pos = s[:2] + k.dt * vel
    nxt = np.concatenate([pos, vel])
    if k.noise_std > 0:
        if rng is None:
            raise ValueError("pointmass dynamics are stochastic; pass an rng")
        nxt = nxt + rng.normal(0.0, k.noise_std, size=4)
    w = k.arena_half_width
    nxt[:2] = np.clip(nxt[:2], -w, w)
    done = spec.in_goal(nxt)
    return nxt, spec.true_reward(s, a, nxt), done


def initial_state(spec: MdpSpec, rng: np.random.Generator):
    """Sample a start state: uniform over non-terminal cells, or over the arena at rest."""
    if spec.is_tabular:
        cells = [s for s in range(spec.n_states) if not spec.is_terminal(s)]
        return int(cells[rng.integers(len(cells))])
    w = spec.kind.arena_half_width
    while True:
        pos = rng.uniform(-w, w, size=2)
        s = np.array([pos[0], pos[1], 0.0, 0.0])
        if not spec.in_goal(s):
            return s


def run_episode(spec: MdpSpec, policy, seed: int, start=None, deterministic: bool = False) -> Trajectory:
    rng = np.random.default_rng(seed)
    s = initial_state(spec, rng) if start is None else start
    out = []
    for _ in range(spec.horizon):
        a = policy.act(s, rng, deterministic=deterministic)
        nxt, r, done = step(spec, s, a, rng)
        out.append(Transition(s, a, nxt, bool(done), float(r)))
        if done:
            break
        s = nxt
    return Trajectory(out, seed)


def rollout(spec: MdpSpec, policy, n_episodes: int, seed: int = 0, deterministic: bool = False) -> list[Trajectory]:
    """Run ``n_episodes`` episodes; episode ``i`` uses its own stream seeded ``seed + i``."""
    if n_episodes < 1:
        raise ValueError(f"n_episodes must be >= 1, got {n_episodes}")
    return [run_episode(spec, policy, seed + i, deterministic=deterministic) for i in range(n_episodes)]


# --------------------------------------------------------------------------
# noisy experts


class UniformRandomPolicy:
    """Uniform over the action space of ``spec``."""

    def __init__(self, spec: MdpSpec):
        self.discrete = spec.is_tabular
        if self.discrete:
            self.n_actions = spec.n_actions
        else:
            self.action_dim = spec.action_dim
            self.action_bound = spec.kind.max_force

    def action_probs(self, state):
        return np.full(self.n_actions, 1.0 / self.n_actions)

    def act(self, state, rng, deterministic=False):
        if self.discrete:
            return int(rng.integers(self.n_actions))
        return rng.uniform(-self.action_bound, self.action_bound, size=self.action_dim)


class EpsilonNoisyPolicy:
    """Takes a uniformly random action with probability ``epsilon``."""

    def __init__(self, policy, epsilon: float):
        self.policy = policy
        self.epsilon = float(epsilon)
        self.discrete = hasattr(policy, "n_actions")
        if self.discrete:
            self.n_actions = policy.n_actions
        else:
            self.action_dim = policy.action_dim
            self.action_bound = policy.action_bound

    def action_probs(self, state):
        return (1.0 - self.epsilon) * self.policy.action_probs(state) + self.epsilon / self.n_actions

    def act(self, state, rng, deterministic=False):
        # epsilon == 0 must consume the wrapped policy's rng stream unchanged
        if self.epsilon == 0.0:
            return self.policy.act(state, rng, deterministic=deterministic)
        if rng.random() < self.epsilon:
            if self.discrete:
                return int(rng.integers(self.n_actions))
            return rng.uniform(-self.action_bound, self.action_bound, size=self.action_dim)
        return self.policy.act(state, rng, deterministic=deterministic)


def corrupt_policy(policy, epsilon: float) -> EpsilonNoisyPolicy:
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    return EpsilonNoisyPolicy(policy, epsilon)


# --------------------------------------------------------------------------
# features


def encode_states(spec: MdpSpec, states) -> np.ndarray:
    """Row-per-state input for value and policy networks."""
    if spec.is_tabular:
        idx = np.asarray(states, dtype=int).reshape(-1)
        out = np.zeros((idx.size, spec.n_states))
        out[np.arange(idx.size), idx] = 1.0
        return out
    k = spec.kind
    s = np.asarray(states, dtype=float).reshape(-1, 4)
    return s / np.array([k.arena_half_width, k.arena_half_width, k.max_speed, k.max_speed])


def encode_actions(spec: MdpSpec, actions) -> np.ndarray:
    if spec.is_tabular:
        idx = np.asarray(actions, dtype=int).reshape(-1)
        out = np.zeros((idx.size, spec.n_actions))
        out[np.arange(idx.size), idx] = 1.0
        return out
    return np.asarray(actions, dtype=float).reshape(-1, 2) / spec.kind.max_force


def encode(spec: MdpSpec, states, actions) -> np.ndarray:
    """State-action features: state encoding concatenated with action encoding."""
    return np.hstack([encode_states(spec, states), encode_actions(spec, actions)])


@dataclass
class Batch:
    """Column view of a list of observed transitions plus their features."""

    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    features: np.ndarray

    def __len__(self):
        return len(self.dones)


def make_batch(spec: MdpSpec, transitions: Sequence) -> Batch:
    if len(transitions) == 0:
        raise ValueError("cannot build a batch from zero transitions")
    dtype = int if spec.is_tabular else float
    states = np.array([t[0] for t in transitions], dtype=dtype)
    actions = np.array([t[1] for t in transitions], dtype=dtype)
    nexts = np.array([t[2] for t in transitions], dtype=dtype)
    dones = np.array([bool(t[3]) for t in transitions])
    return Batch(states, actions, nexts, dones, encode(spec, states, actions))


def concat_batches(a: Batch, b: Batch) -> Batch:
    return Batch(*(np.concatenate([x, y]) for x, y in zip(
        (a.states, a.actions, a.next_states, a.dones, a.features),
        (b.states, b.actions, b.next_states, b.dones, b.features))))


# --------------------------------------------------------------------------
# registry


def make_env(name: str, **overrides) -> MdpSpec:
    """Build a registered environment. ``overrides`` replace spec or kind fields."""
    if name == "gridworld":
        spec = MdpSpec("gridworld", Gridworld(), discount=0.99, horizon=50)
    elif name == "gridworld-traps":
        spec = MdpSpec("gridworld-traps", Gridworld(trap_cells=(12, 13)), discount=0.99, horizon=50)
    elif name == "pointmass":
        spec = MdpSpec("pointmass", PointMass(), discount=0.99, horizon=100)
    else:
        raise KeyError(f"unknown environment {name!r}; registered: {', '.join(ENV_NAMES)}")
    top = {k: overrides.pop(k) for k in ("discount", "horizon") if k in overrides}
    if overrides:
        spec = replace(spec, kind=replace(spec.kind, **overrides))
    return replace(spec, **top) if top else spec


ENV_NAMES = ("gridworld", "gridworld-traps", "pointmass")


# --------------------------------------------------------------------------
# trajectory files


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return [float(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    return x


def _restore(x):
    return np.array(x, dtype=float) if isinstance(x, list) else x


def meta_path(path: str) -> str:
    return str(path) + ".meta.json"


def save_trajectories(path: str, trajectories: Sequence[Trajectory], spec_name: str, seed: int,
                      include_true_reward: bool = False, **extra) -> None:
    """One JSON record per transition, plus a ``<path>.meta.json`` sidecar."""
    lines = []
    for ep, traj in enumerate(trajectories):
        for t, tr in enumerate(traj.transitions):
            rec = {"episode_id": ep, "t": t, "state": _jsonable(tr[0]), "action": _jsonable(tr[1]),
                   "next_state": _jsonable(tr[2]), "done": bool(tr[3])}
            if include_true_reward:
                rec["true_reward"] = float(tr.true_reward)
            lines.append(json.dumps(rec, sort_keys=True))
    meta = {"spec": spec_name, "seed": int(seed), "includes_true_reward": bool(include_true_reward),
            "n_episodes": len(trajectories), "episode_seeds": [int(t.seed) for t in trajectories]}
    meta.update(extra)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))
    with open(meta_path(path), "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=1)


def load_trajectories(path: str) -> tuple[list[Trajectory], dict]:
    if not os.path.exists(path):
        raise FileNotFoundError(f"trajectory file not found: {path}")
    meta = {}
    if os.path.exists(meta_path(path)):
        with open(meta_path(path)) as fh:
            meta = json.load(fh)
    episodes: dict[int, list] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                args = (_restore(rec["state"]), _restore(rec["action"]), _restore(rec["next_state"]), bool(rec["done"]))
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed transition record ({exc})") from exc
            tr = Transition(*args, float(rec["true_reward"])) if "true_reward" in rec else ObservedTransition(*args)
            episodes.setdefault(int(rec["episode_id"]), []).append((int(rec["t"]), tr))
    seeds = meta.get("episode_seeds", [])
    out = []
    for ep in sorted(episodes):
        steps = [tr for _, tr in sorted(episodes[ep], key=lambda p: p[0])]
        out.append(Trajectory(steps, seeds[ep] if ep < len(seeds) else ep))
    return out, meta
