"""Interleaved classifier / reward / policy training.

Each iteration collects learner rollouts into the buffer, draws learner and
expert minibatches, takes classifier steps (expert = 1, learner = 0), takes
reward-head steps on the reverse-KL objective over the union of both
minibatches, then takes actor-critic steps on the learned reward. Nothing is
nested: one pass of each per iteration, ratios set by the config.
"""

from __future__ import annotations

import csv
import dataclasses
import time
from dataclasses import dataclass, field, fields
from typing import NamedTuple

import numpy as np

from .approximator import AdamState, adam_update, backward, sigmoid
from .buffer import RolloutBuffer
from .env import Batch, MdpSpec, _strip, concat_batches, make_batch, rollout
from .evaluation import continuous_ile, episode_returns, ile, mean_return_eval
from .optimality import Classifier, RewardHead, make_classifier, make_reward_head, reward_loss
from .policy import actor_critic_update, make_learner, optimal_expert, policy_evaluation, value_iteration


class TrainingDiverged(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class TrainConfig:
    n_iterations: int = 1000
    rollout_episodes_per_iter: int = 4
    batch_size: int = 64
    classifier_steps_per_iter: int = 1
    reward_steps_per_iter: int = 5
    policy_steps_per_iter: int = 1
    gamma: float = 0.99
    lambda_var: float = 0.1
    lr_classifier: float = 1e-2
    lr_reward: float = 1e-2
    lr_actor: float = 0.1
    lr_critic: float = 0.05
    buffer_capacity: int = 200_000
    seed: int = 0
    optimality_mode: str = "advantage"
    deterministic_reward: bool = False
    eval_every: int = 10
    eval_episodes: int = 50
    eval_seed: int = 12345
    eval_deterministic: bool = True
    ent_coef: float = 0.01
    exp_scale: float = 1.0
    max_grad_norm: float = 10.0
    hidden: tuple = (16, 16)
    learner_hidden: tuple = (32, 32)
    tabular_learner: bool = True
    ile_grid: int = 3
    ile_episodes: int = 10

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.learner_hidden = tuple(int(h) for h in self.learner_hidden)
        for name in ("n_iterations", "rollout_episodes_per_iter", "batch_size", "classifier_steps_per_iter",
                     "reward_steps_per_iter", "policy_steps_per_iter", "buffer_capacity", "eval_episodes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.eval_every < 0:
            raise ValueError(f"eval_every must be >= 0, got {self.eval_every}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.lambda_var < 0:
            raise ValueError(f"lambda_var must be >= 0, got {self.lambda_var}")
        if self.optimality_mode not in ("advantage", "exp_reward"):
            raise ValueError(f"optimality_mode must be 'advantage' or 'exp_reward', got {self.optimality_mode!r}")

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# Network learners step with Adam, so they take Adam-scale rates instead of
# the tabular SGD rates above.
NETWORK_LEARNER_RATES = {"lr_actor": 3e-3, "lr_critic": 3e-3, "lr_reward": 1e-3, "lr_classifier": 1e-3}


def config_for(spec: MdpSpec, **overrides) -> TrainConfig:
    """Default config for ``spec``; explicit overrides win."""
    base = {} if spec.is_tabular else dict(NETWORK_LEARNER_RATES)
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class EvalRecord:
    iteration: int
    classifier_loss: float
    classifier_accuracy: float
    reward_kl_loss: float
    variance_term: float
    learner_mean_return: float
    learner_std_return: float
    ile: float
    wall_time: float = field(default=0.0, compare=False)


REPORT_COLUMNS = [f.name for f in fields(EvalRecord) if f.name != "wall_time"]


@dataclass
class TrainReport:
    records: list[EvalRecord] = field(default_factory=list)
    final_returns: list[float] = field(default_factory=list)

    def add(self, rec: EvalRecord):
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise ValueError("report iterations must be strictly increasing")
        self.records.append(rec)

    @property
    def final(self) -> EvalRecord:
        return self.records[-1]

    def to_csv(self, path: str) -> None:
        """Deterministic columns only; wall times go to :meth:`timings_to_csv`."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_COLUMNS)
            for r in self.records:
                w.writerow([repr(getattr(r, c)) if isinstance(getattr(r, c), float) else getattr(r, c)
                            for c in REPORT_COLUMNS])

    def timings_to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "wall_time"])
            for r in self.records:
                w.writerow([r.iteration, f"{r.wall_time:.3f}"])

    @classmethod
    def from_csv(cls, path: str) -> "TrainReport":
        rep = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rep.records.append(EvalRecord(int(row["iteration"]),
                                              *(float(row[c]) for c in REPORT_COLUMNS[1:])))
        return rep


# --------------------------------------------------------------------------
# classifier


def _features(x):
    return x.features if isinstance(x, Batch) else np.atleast_2d(np.asarray(x, dtype=float))


def classifier_loss(clf: Classifier, expert, learner):
    """Binary cross-entropy, expert labelled 1 and learner 0, on balanced halves.

    Returns ``(loss, grads, accuracy)``.
    """
    xe, xl = _features(expert), _features(learner)
    if len(xe) == 0 or len(xl) == 0:
        raise ValueError("classifier needs nonempty expert and learner batches")
    n = min(len(xe), len(xl))
    x = np.vstack([xe[:n], xl[:n]])
    y = np.concatenate([np.ones(n), np.zeros(n)])
    logit = clf.logits(x)
    # log(1 + exp(-|z|)) form keeps the loss finite for large logits
    loss = float(np.mean(np.maximum(logit, 0) - logit * y + np.log1p(np.exp(-np.abs(logit)))))
    grads = backward(clf.net, x, ((sigmoid(logit) - y) / (2 * n))[:, None])
    acc = float(np.mean((logit > 0) == (y > 0.5)))
    return loss, grads, acc


def classifier_update(clf: Classifier, expert_batch, learner_batch, lr: float, steps: int,
                      opt: AdamState | None = None, max_grad_norm: float = 10.0):
    """``steps`` Adam steps of logistic regression. Returns ``(clf, loss, accuracy, opt)``."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if opt is None:
        opt = AdamState.for_network(clf.net, lr, max_grad_norm=max_grad_norm)
    opt.learning_rate = lr
    loss = acc = float("nan")
    for _ in range(steps):
        loss, grads, acc = classifier_loss(clf, expert_batch, learner_batch)
        adam_update(clf.net.params(), grads.params, opt)
    return clf, loss, acc, opt


# --------------------------------------------------------------------------
# training loop


def _check_expert(expert_trajectories) -> list:
    if not expert_trajectories:
        raise ValueError("expert_trajectories must be nonempty")
    out = [_strip(t) for traj in expert_trajectories for t in traj.transitions]
    if not out:
        raise ValueError("expert trajectories contain no transitions")
    return out


def _evaluate(spec, policy, config, expert_values, expert_policy, it, losses, t0) -> EvalRecord:
    mean, std = mean_return_eval(spec, policy, config.eval_episodes, config.eval_seed,
                                 deterministic=config.eval_deterministic)
    if spec.is_tabular:
        v_l = policy_evaluation(spec, policy, deterministic=config.eval_deterministic)
        err = ile(expert_values, v_l)
    elif expert_policy is not None:
        err = continuous_ile(spec, expert_policy, policy, config.ile_grid, config.ile_episodes,
                             config.eval_seed, deterministic=config.eval_deterministic)
    else:
        err = float("nan")
    return EvalRecord(it, *losses, mean, std, err, time.perf_counter() - t0)


class TrainResult(NamedTuple):
    reward_head: RewardHead | None
    policy: object
    classifier: Classifier
    report: TrainReport
    critic: object


def train(spec: MdpSpec, expert_trajectories, config: TrainConfig, expert_policy=None, on_eval=None) -> TrainResult:
    """Run VLB-IRL. Returns ``(reward_head, policy, classifier, report, critic)``.

    ILE is measured against ``expert_policy`` when given, otherwise against the
    value-iteration optimum (tabular specs). ``on_eval(result)`` is called with a
    :class:`TrainResult` view of the live models after every evaluation.
    """
    return _run(spec, expert_trajectories, config, "vlbirl", expert_policy, on_eval)


def _run(spec, expert_trajectories, config: TrainConfig, method: str, expert_policy=None, on_eval=None):
    expert = make_batch(spec, _check_expert(expert_trajectories))
    rng = np.random.default_rng(config.seed)
    t0 = time.perf_counter()

    clf = make_classifier(spec.feature_dim, rng, config.hidden)
    head = make_reward_head(spec.feature_dim, rng, config.hidden, config.deterministic_reward) \
        if method == "vlbirl" else None
    policy, critic = make_learner(spec, rng, config.learner_hidden, config.lr_actor, config.lr_critic,
                                  tabular=config.tabular_learner and spec.is_tabular)
    clf_opt = AdamState.for_network(clf.net, config.lr_classifier, max_grad_norm=config.max_grad_norm)
    head_opt = AdamState.for_network(head.net, config.lr_reward, max_grad_norm=config.max_grad_norm) \
        if head is not None else None
    buffer = RolloutBuffer(config.buffer_capacity)

    expert_values = None
    if spec.is_tabular:
        expert_values = (policy_evaluation(spec, expert_policy) if expert_policy is not None
                         else value_iteration(spec)[0])

    if method == "vlbirl":
        reward_source = head
    else:
        # -ln(1 - D) is always positive, which would pay the learner for never
        # terminating. Episodes therefore continue in a virtual absorbing state
        # that the discriminator scores like any other pair; its discounted
        # value is credited on the terminal transition.
        absorbing = np.zeros(spec.feature_dim)

        def reward_source(batch):
            r = _softplus(clf.logits(batch.features))
            r_abs = float(_softplus(clf.logits(absorbing))[0])
            return r + batch.dones * config.gamma * r_abs / (1.0 - config.gamma)

        def with_absorbing(batch):
            x = np.vstack([batch.features, np.repeat(absorbing[None], int(batch.dones.sum()), axis=0)])
            return x[rng.permutation(len(x))]

    report = TrainReport()
    losses = [float("nan")] * 4
    if config.eval_every:
        report.add(_evaluate(spec, policy, config, expert_values, expert_policy, 0, losses, t0))
        if on_eval is not None:
            on_eval(TrainResult(head, policy, clf, report, critic))

    n_exp = len(expert)
    for it in range(1, config.n_iterations + 1):
        base = int(rng.integers(2**31 - 1))
        trajs = rollout(spec, policy, config.rollout_episodes_per_iter, base)
        fresh = [t.strip() for tr in trajs for t in tr.transitions]
        for tr in trajs:
            buffer.push(tr)
        fresh_batch = make_batch(spec, fresh)

        for _ in range(config.classifier_steps_per_iter):
            lb = make_batch(spec, buffer.sample(config.batch_size, rng))
            eb = _take(expert, rng.integers(0, n_exp, size=config.batch_size))
            if method == "js":
                eb, lb = with_absorbing(eb), with_absorbing(lb)
            loss, grads, acc = classifier_loss(clf, eb, lb)
            adam_update(clf.net.params(), grads.params, clf_opt)
            losses[0], losses[1] = loss, acc

        if head is not None:
            for _ in range(config.reward_steps_per_iter):
                lb = make_batch(spec, buffer.sample(config.batch_size, rng))
                eb = _take(expert, rng.integers(0, n_exp, size=config.batch_size))
                res = reward_loss(head, clf, critic, concat_batches(eb, lb), config.gamma, config.lambda_var,
                                  rng, mode=config.optimality_mode, exp_scale=config.exp_scale)
                if not np.isfinite(res.loss):
                    raise TrainingDiverged(f"non-finite reward loss at iteration {it}", report)
                adam_update(head.net.params(), res.grads.params, head_opt)
                losses[2], losses[3] = res.kl, res.variance

        for _ in range(config.policy_steps_per_iter):
            actor_critic_update(policy, critic, fresh_batch, reward_source, config.gamma, config.lr_actor,
                                config.lr_critic, rng, config.ent_coef, config.max_grad_norm)

        if not np.isfinite(losses[0]):
            raise TrainingDiverged(f"non-finite classifier loss at iteration {it}", report)
        if config.eval_every and (it % config.eval_every == 0 or it == config.n_iterations):
            report.add(_evaluate(spec, policy, config, expert_values, expert_policy, it, losses, t0))
            if on_eval is not None:
                on_eval(TrainResult(head, policy, clf, report, critic))

    report.final_returns = list(episode_returns(spec, policy, config.eval_episodes, config.eval_seed,
                                                config.eval_deterministic))
    if not config.eval_every:
        report.add(_evaluate(spec, policy, config, expert_values, expert_policy, config.n_iterations, losses, t0))
    return TrainResult(head, policy, clf, report, critic)


def _softplus(z):
    return np.maximum(z, 0) + np.log1p(np.exp(-np.abs(z)))


def _take(batch: Batch, idx) -> Batch:
    return Batch(batch.states[idx], batch.actions[idx], batch.next_states[idx], batch.dones[idx],
                 batch.features[idx])
