"""Metrics, significance testing and numerical bound checks.

* :func:`ile` - L2 distance between expert and learner value tables under the
  true reward.
* :func:`welch_t_test` - two-sided unequal-variance t-test; the t CDF is
  computed through the regularized incomplete beta function below.
* :func:`verify_jensen_gap` - Monte Carlo check of
  ``|E f(X) - f(E X)| <= M Var(X)`` for functions with ``|f''| <= M``.
* :func:`argmax_consistency` - fraction of states where the expert's greedy
  action maximizes the learned advantage.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .approximator import sigmoid
from .env import MdpSpec, make_batch, rollout, run_episode, step

# max |sigmoid''| = 1 / (6 sqrt 3), attained where sigmoid = (3 +- sqrt 3) / 6
SIGMOID_SECOND_DERIVATIVE_MAX = 1.0 / (6.0 * math.sqrt(3.0))


# --------------------------------------------------------------------------
# returns and ILE


def ile(v_expert, v_learner) -> float:
    a = np.asarray(getattr(v_expert, "values", v_expert), dtype=float)
    b = np.asarray(getattr(v_learner, "values", v_learner), dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"value tables differ in shape: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def episode_returns(spec: MdpSpec, policy, n_episodes: int = 50, seed: int = 0,
                    deterministic: bool = False) -> np.ndarray:
    """Undiscounted true-reward return of each episode."""
    return np.array([t.total_reward() for t in rollout(spec, policy, n_episodes, seed, deterministic)])


def mean_return_eval(spec: MdpSpec, policy, n_episodes: int = 50, seed: int = 0,
                     deterministic: bool = False) -> tuple[float, float]:
    """Sample mean and standard deviation of undiscounted episode returns."""
    if n_episodes < 2:
        raise ValueError("mean_return_eval needs n_episodes >= 2")
    r = episode_returns(spec, policy, n_episodes, seed, deterministic)
    return float(r.mean()), float(r.std(ddof=1))


def continuous_ile(spec: MdpSpec, expert_policy, learner_policy, grid: int = 3, episodes: int = 10,
                   seed: int = 0, deterministic: bool = False) -> float:
    """ILE over a ``grid x grid`` lattice of start positions (at rest), Monte Carlo values."""
    w = spec.kind.arena_half_width
    ticks = np.linspace(-w, w, grid + 2)[1:-1]
    diffs = []
    for i, x in enumerate(ticks):
        for j, y in enumerate(ticks):
            start = np.array([x, y, 0.0, 0.0])
            if spec.in_goal(start):
                continue
            vals = []
            for pol, det in ((expert_policy, False), (learner_policy, deterministic)):
                base = seed + 1000 * (i * grid + j)
                vals.append(np.mean([run_episode(spec, pol, base + k, start=start, deterministic=det)
                                     .discounted_return(spec.discount) for k in range(episodes)]))
            diffs.append(vals[0] - vals[1])
    return float(np.linalg.norm(diffs))


# --------------------------------------------------------------------------
# Welch t-test


def _betacf(a: float, b: float, x: float, max_iter: int = 500, eps: float = 3e-16) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)``."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc needs a, b > 0")
    if not 0.0 <= x <= 1.0:
        raise ValueError("betainc needs x in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t: float, dof: float) -> float:
    """``P(|T| >= |t|)`` for Student's t with ``dof`` degrees of freedom."""
    if math.isinf(t):
        return 0.0
    return betainc(dof / 2.0, 0.5, dof / (dof + t * t))


def t_cdf(t: float, dof: float) -> float:
    tail = 0.5 * t_sf_two_sided(t, dof)
    return 1.0 - tail if t > 0 else tail


@dataclass(frozen=True)
class WelchResult:
    t_statistic: float
    dof: float
    significant: bool
    p_value: float

    def __iter__(self):
        return iter((self.t_statistic, self.dof, self.significant))


def welch_t_test(sample_a: Sequence[float], sample_b: Sequence[float], alpha: float = 0.01) -> WelchResult:
    """Two-sided Welch test with Welch-Satterthwaite degrees of freedom.

    Unpacks as ``(t_statistic, dof, significant)``; ``p_value`` is an attribute.
    """
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("welch_t_test needs at least two observations per sample")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    diff = a.mean() - b.mean()
    se2 = va + vb
    if se2 == 0.0:
        dof = float(a.size + b.size - 2)
        if diff == 0.0:
            return WelchResult(0.0, dof, False, 1.0)
        return WelchResult(math.copysign(math.inf, diff), dof, True, 0.0)
    t = float(diff / math.sqrt(se2))
    dof = float(se2**2 / (va**2 / (a.size - 1) + vb**2 / (b.size - 1)))
    p = t_sf_two_sided(t, dof)
    return WelchResult(t, dof, bool(p < alpha), p)


# --------------------------------------------------------------------------
# Jensen gap


def _linear(x):
    return 2.0 * x + 0.5


def _square(x):
    return x * x


# name -> (function, certified bound on |f''|)
JENSEN_FUNCTIONS: dict[str, tuple[Callable, float]] = {
    "sigmoid": (sigmoid, 0.1),
    "linear": (_linear, 0.0),
    "square_bounded": (_square, 2.0),
}


@dataclass
class JensenGapResult:
    empirical_gap: float
    bound: float
    n_samples: int
    function: str
    distribution: str
    variance: float
    stderr: float
    violated: bool


def verify_jensen_gap(function: str, mu: float, sigma: float, M: float | None = None,
                      n_samples: int = 1_000_000, rng: np.random.Generator | None = None) -> JensenGapResult:
    """Monte Carlo check of ``|mean f(x) - f(mean x)| <= M * var(x)`` under ``N(mu, sigma^2)``.

    A violation is flagged only when the gap exceeds the bound by more than
    five standard errors of ``mean f(x)``.
    """
    if function not in JENSEN_FUNCTIONS:
        raise KeyError(f"unknown function {function!r}; registered: {', '.join(JENSEN_FUNCTIONS)}")
    if n_samples < 10_000:
        raise ValueError(f"n_samples must be >= 1e4, got {n_samples}")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    f, certified = JENSEN_FUNCTIONS[function]
    M = certified if M is None else M
    dist = f"normal(mu={mu:g}, sigma={sigma:g})"
    if sigma == 0.0:
        return JensenGapResult(0.0, 0.0, n_samples, function, dist, 0.0, 0.0, False)
    rng = np.random.default_rng() if rng is None else rng
    x = rng.normal(mu, sigma, size=n_samples)
    fx = f(x)
    gap = float(abs(fx.mean() - f(x.mean())))
    var = float(x.var())
    se = float(fx.std(ddof=1) / math.sqrt(n_samples))
    bound = M * var
    return JensenGapResult(gap, bound, n_samples, function, dist, var, se, gap > bound + 5.0 * se)


# --------------------------------------------------------------------------
# reward-ambiguity probe


def argmax_consistency(reward_source, critic, spec: MdpSpec, expert_policy, tol: float = 1e-9) -> float:
    """Fraction of non-terminal states whose expert greedy action maximizes
    ``r(s, a) + gamma * V(s') * (1 - done) - V(s)``.

    ``reward_source`` is a reward head (its mean is used) or a callable on a batch.
    """
    from .policy import learned_rewards

    if not spec.is_tabular:
        raise TypeError(f"argmax_consistency needs a tabular spec; {spec.name} is continuous")
    states = [s for s in range(spec.n_states) if not spec.is_terminal(s)]
    A = spec.n_actions
    trans = []
    for s in states:
        for a in range(A):
            nxt, _, done = step(spec, s, a)
            trans.append((s, a, nxt, done))
    batch = make_batch(spec, trans)
    r = learned_rewards(reward_source, batch)
    v_s = np.asarray(critic.predict(batch.states), dtype=float)
    v_n = np.asarray(critic.predict(batch.next_states), dtype=float)
    adv = (r + spec.discount * v_n * (1.0 - batch.dones) - v_s).reshape(len(states), A)
    hits = 0
    for i, s in enumerate(states):
        a_e = expert_policy.act(s, None, deterministic=True)
        hits += adv[i, a_e] >= adv[i].max() - tol
    return hits / len(states)


# --------------------------------------------------------------------------
# reports


EVAL_COLUMNS = ["method", "env", "seed", "mean_return", "std_return", "ile", "n_episodes"]


@dataclass
class EvalReport:
    method: str
    env: str
    per_seed_returns: dict[int, float]
    per_seed_std: dict[int, float] = field(default_factory=dict)
    per_seed_ile: dict[int, float] = field(default_factory=dict)
    n_episodes: int = 50
    significance: dict[str, bool] = field(default_factory=dict)

    @property
    def seed_means(self) -> list[float]:
        return [self.per_seed_returns[k] for k in sorted(self.per_seed_returns)]

    @property
    def mean(self) -> float:
        return float(np.mean(self.seed_means))

    @property
    def std(self) -> float:
        v = self.seed_means
        return float(np.std(v, ddof=1)) if len(v) >= 2 else 0.0

    @property
    def ile(self) -> float:
        v = list(self.per_seed_ile.values())
        return float(np.mean(v)) if v else float("nan")

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(EVAL_COLUMNS)
            for s in sorted(self.per_seed_returns):
                w.writerow([self.method, self.env, s, repr(float(self.per_seed_returns[s])),
                            repr(float(self.per_seed_std.get(s, float("nan")))),
                            repr(float(self.per_seed_ile.get(s, float("nan")))), self.n_episodes])

    @classmethod
    def from_csv(cls, path: str) -> "EvalReport":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: empty evaluation report")
        missing = set(EVAL_COLUMNS) - set(rows[0])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        methods = {r["method"] for r in rows}
        envs = {r["env"] for r in rows}
        if len(methods) != 1 or len(envs) != 1:
            raise ValueError(f"{path}: one method and one env per report expected")
        rep = cls(rows[0]["method"], rows[0]["env"], {}, n_episodes=int(rows[0]["n_episodes"]))
        for r in rows:
            s = int(r["seed"])
            rep.per_seed_returns[s] = float(r["mean_return"])
            rep.per_seed_std[s] = float(r["std_return"])
            rep.per_seed_ile[s] = float(r["ile"])
        return rep


def compare_reports(reports: Sequence[EvalReport], alpha: float = 0.01) -> list[EvalReport]:
    """Fill each report's pairwise significance flags.

    ``significance[other]`` is true when this method's per-seed mean returns
    exceed ``other``'s with Welch ``p < alpha``.
    """
    if len(reports) < 2:
        raise ValueError("compare needs at least two reports")
    envs = {r.env for r in reports}
    if len(envs) != 1:
        raise ValueError(f"reports cover different environments: {sorted(envs)}")
    for r in reports:
        r.significance = {}
        for o in reports:
            if o is r:
                continue
            res = welch_t_test(r.seed_means, o.seed_means, alpha)
            r.significance[o.method] = bool(res.significant and res.t_statistic > 0)
    return list(reports)


def best_marker(report: EvalReport) -> str:
    """``*`` when the method significantly beats every other compared method."""
    return "*" if report.significance and all(report.significance.values()) else ""


def render_table(reports: Sequence[EvalReport]) -> str:
    env = reports[0].env
    rows = [("Algorithm", env)]
    for r in reports:
        rows.append((r.method, f"{r.mean:.4f} +- {r.std:.4f}{best_marker(r)}"))
    w0 = max(len(a) for a, _ in rows)
    w1 = max(len(b) for _, b in rows)
    lines = [f"{rows[0][0]:<{w0}}  {rows[0][1]:>{w1}}", "-" * (w0 + w1 + 2)]
    lines += [f"{a:<{w0}}  {b:>{w1}}" for a, b in rows[1:]]
    return "\n".join(lines)


def comparison_to_csv(reports: Sequence[EvalReport], path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "env", "mean_return", "std_return", "n_seeds", "ile", "best"])
        for r in reports:
            w.writerow([r.method, r.env, repr(r.mean), repr(r.std), len(r.per_seed_returns), repr(r.ile),
                        best_marker(r)])
