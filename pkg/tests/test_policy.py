import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import kink_pattern, max_rel_error, numeric_grads
from vlbirl.env import Batch, UniformRandomPolicy, make_batch, make_env, rollout, Transition
from vlbirl.policy import (DiscreteActor, GaussianActor, NetworkCritic, TabularMdp, TabularPolicy, ValueTable,
                           actor_critic_update, actor_loss, critic_loss, load_model, make_learner,
                           mc_value_estimate, optimal_expert, policy_evaluation, q_values, save_model, softmax,
                           train_on_reward, true_reward_source, value_iteration)


def _zero_reward_grid():
    return make_env("gridworld", step_penalty=0.0, goal_reward=0.0)


# --------------------------------------------------------------------------
# value iteration


def test_single_absorbing_state_geometric_value():
    mdp = TabularMdp(np.ones((1, 1, 1)), np.ones((1, 1)), 0.9)
    V, pol = value_iteration(mdp)
    assert V.values[0] == pytest.approx(10.0, abs=1e-8)
    assert pol.act(0, None, deterministic=True) == 0


def test_zero_reward_gives_zero_values():
    spec = _zero_reward_grid()
    V, pol = value_iteration(spec)
    assert np.all(V.values == 0)
    # every action ties, lexicographic tie-break picks action 0
    assert all(pol.act(s, None, deterministic=True) == 0 for s in range(spec.n_states))


def _vi_oracle(sweeps=10_000, gamma=0.99, penalty=0.01, goal=24):
    """Independent in-place Bellman sweeps over an explicitly coded 5x5 grid."""
    V = [0.0] * 25
    for _ in range(sweeps):
        for s in range(25):
            if s == goal:
                continue
            r, c = divmod(s, 5)
            best = -1e300
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                n = min(max(r + dr, 0), 4) * 5 + min(max(c + dc, 0), 4)
                q = -penalty + (1.0 + gamma * 0.0 if n == goal else gamma * V[n])
                best = max(best, q)
            V[s] = best
    return np.array(V)


def test_value_iteration_matches_sweep_oracle(grid):
    V, _ = value_iteration(grid)
    oracle = _vi_oracle()
    assert np.max(np.abs(V.values - oracle)) < 1e-8
    assert V.values[23] == pytest.approx(-0.01 + 1.0 + 0.99 * V.values[24])
    assert V.values[24] == 0.0


def test_value_iteration_residual_and_contraction(grid):
    V, _ = value_iteration(grid, tol=1e-10)
    r = V.residuals
    assert r[-1] < 1e-10
    assert all(b <= a + 1e-15 for a, b in zip(r[1:], r[2:]))


def test_value_iteration_rejects_continuous(point):
    with pytest.raises(TypeError):
        value_iteration(point)
    with pytest.raises(TypeError):
        policy_evaluation(point, None)


def test_greedy_expert_is_optimal_and_tie_broken(grid, expert):
    V, _ = value_iteration(grid)
    Q = q_values(grid, V.values)
    for s in range(grid.n_states):
        a = expert.act(s, None, deterministic=True)
        assert Q[s, a] == pytest.approx(Q[s].max())
        assert a == int(np.flatnonzero(Q[s] >= Q[s].max() - 1e-12)[0])


def test_boltzmann_expert():
    spec = make_env("gridworld")
    soft = optimal_expert(spec, beta=10.0)
    p = soft.action_probs(0)
    assert p.sum() == pytest.approx(1.0) and np.all(p > 0)


# --------------------------------------------------------------------------
# policy evaluation


def test_policy_evaluation_of_greedy_matches_vi(grid, expert):
    V, _ = value_iteration(grid)
    assert np.max(np.abs(policy_evaluation(grid, expert).values - V.values)) < 1e-9


def test_uniform_policy_zero_reward():
    spec = _zero_reward_grid()
    assert np.all(policy_evaluation(spec, UniformRandomPolicy(spec)).values == 0)


def _mc_uniform_values(n_per_state=4000, seed=0, gamma=0.99, max_steps=3000):
    """Vectorized discounted returns of the uniform walk from every start cell."""
    rng = np.random.default_rng(seed)
    starts = np.repeat(np.arange(24), n_per_state)
    row, col = starts // 5, starts % 5
    alive = np.ones(starts.size, bool)
    ret = np.zeros(starts.size)
    disc = 1.0
    dr = np.array([-1, 1, 0, 0])
    dc = np.array([0, 0, -1, 1])
    steps = 0
    for _ in range(max_steps):
        if not alive.any():
            break
        a = rng.integers(0, 4, starts.size)
        row = np.where(alive, np.clip(row + dr[a], 0, 4), row)
        col = np.where(alive, np.clip(col + dc[a], 0, 4), col)
        hit = alive & (row * 5 + col == 24)
        ret += disc * np.where(alive, -0.01 + hit * 1.0, 0.0)
        steps += int(alive.sum())
        alive &= ~hit
        disc *= gamma
    ret = ret.reshape(24, n_per_state)
    return ret.mean(axis=1), ret.std(axis=1, ddof=1) / np.sqrt(n_per_state), steps


def test_uniform_policy_matches_monte_carlo(grid):
    V = policy_evaluation(grid, UniformRandomPolicy(grid)).values
    mean, se, steps = _mc_uniform_values()
    assert steps >= 1_000_000
    z = np.abs(V[:24] - mean) / se
    assert np.all(z < 3.0 + 1.0) and np.mean(z < 3.0) > 0.95


def test_mc_value_estimate_zero_reward():
    spec = _zero_reward_grid()
    assert mc_value_estimate(spec, UniformRandomPolicy(spec), 20, seed=1) == (0.0, 0.0)
    with pytest.raises(ValueError):
        mc_value_estimate(spec, UniformRandomPolicy(spec), 1)


def test_mc_value_estimate_deterministic_start_has_zero_se(grid, expert):
    from vlbirl.env import run_episode
    rets = [run_episode(grid, expert, seed, start=7).discounted_return(grid.discount) for seed in range(10)]
    assert np.ptp(rets) < 1e-12


def test_mc_value_estimate_matches_exact(grid, expert):
    V = policy_evaluation(grid, expert).values
    exact = V[:24].mean()
    mean, se = mc_value_estimate(grid, expert, 2000, seed=5)
    assert abs(mean - exact) < 3 * se + 1e-12


# --------------------------------------------------------------------------
# softmax and policies


@settings(max_examples=100)
@given(logits=st.lists(st.floats(-30, 30), min_size=2, max_size=6), shift=st.floats(-100, 100))
def test_softmax_shift_invariance(logits, shift):
    z = np.array(logits)
    p, q = softmax(z), softmax(z + shift)
    assert p.sum() == pytest.approx(1.0)
    assert np.allclose(p, q, atol=1e-12)
    pol_a = TabularPolicy(z[None, :])
    pol_b = TabularPolicy(z[None, :] + shift)
    assert pol_a.greedy_action(0) == pol_b.greedy_action(0) or np.isclose(z.max(), np.sort(z)[-2])


def test_tabular_sampling_frequencies():
    pol = TabularPolicy(np.log(np.array([[0.1, 0.2, 0.3, 0.4]])))
    rng = np.random.default_rng(0)
    draws = np.bincount([pol.act(0, rng) for _ in range(40_000)], minlength=4) / 40_000
    assert np.allclose(draws, [0.1, 0.2, 0.3, 0.4], atol=0.01)


def test_gaussian_log_std_bounded(point):
    actor, _ = make_learner(point, np.random.default_rng(0))
    actor.net.layers[-1].b[2:] = 50.0
    _, log_std = actor.mean_log_std([np.zeros(4)])
    assert np.all(log_std <= 2.0)
    actor.net.layers[-1].b[2:] = -50.0
    assert np.all(actor.mean_log_std([np.zeros(4)])[1] >= -5.0)


# --------------------------------------------------------------------------
# actor-critic


def test_zero_advantage_leaves_logits(grid):
    rng = np.random.default_rng(1)
    pol = TabularPolicy(rng.normal(size=(25, 4)))
    critic = ValueTable(rng.normal(size=25))
    trs = [(int(s), int(a), int(n), False) for s, a, n in zip(rng.integers(0, 24, 16), rng.integers(0, 4, 16),
                                                                rng.integers(0, 24, 16))]
    batch = make_batch(grid, trs)
    before = pol.logits.copy()

    def zero_adv(b):
        return critic.predict(b.states) - 0.99 * critic.predict(b.next_states)

    actor_critic_update(pol, critic, batch, zero_adv, 0.99, 1.0, 0.0, ent_coef=0.0)
    assert np.allclose(pol.logits, before, atol=1e-15)


def test_one_step_tabular_td_with_unit_rate(grid):
    pol, critic = make_learner(grid, np.random.default_rng(0))
    critic.values[:] = 0.3
    batch = make_batch(grid, [(3, 1, 8, False)])
    actor_critic_update(pol, critic, batch, lambda b: np.array([0.7]), 0.9, 0.0, 1.0)
    assert critic.values[3] == pytest.approx(0.7 + 0.9 * 0.3)


def test_update_ignores_true_reward_field(grid):
    pol, critic = make_learner(grid, np.random.default_rng(0))
    batch = make_batch(grid, [Transition(3, 1, 8, False, float("nan"))])
    assert not hasattr(batch, "true_reward")
    actor_critic_update(pol, critic, batch, lambda b: np.array([0.5]), 0.99, 0.5, 0.5)
    assert np.all(np.isfinite(pol.logits)) and np.all(np.isfinite(critic.values))


def test_non_finite_learned_rewards_rejected(grid):
    pol, critic = make_learner(grid, np.random.default_rng(0))
    batch = make_batch(grid, [(3, 1, 8, False)])
    with pytest.raises(FloatingPointError):
        actor_critic_update(pol, critic, batch, lambda b: np.array([np.inf]), 0.99, 0.5, 0.5)


def test_training_on_true_reward_reaches_optimum(grid, expert):
    pol, critic = make_learner(grid, np.random.default_rng(0))
    train_on_reward(grid, pol, critic, true_reward_source(grid), 20_000, seed=0)
    opt = np.mean([t.total_reward() for t in rollout(grid, expert, 50, 77, True)])
    got = np.mean([t.total_reward() for t in rollout(grid, pol, 50, 77, True)])
    assert got >= 0.95 * opt


def test_network_learners_update(grid, point):
    rng = np.random.default_rng(2)
    for spec in (grid, point):
        actor, critic = make_learner(spec, rng, hidden=(8,), tabular=False)
        trajs = rollout(spec, actor, 2, seed=0)
        batch = make_batch(spec, [t.strip() for tr in trajs for t in tr.transitions])
        a0 = actor.net.layers[0].W.copy()
        c0 = critic.net.layers[0].W.copy()
        actor_critic_update(actor, critic, batch, lambda b: np.ones(len(b)), 0.99, 1e-2, 1e-2)
        assert not np.array_equal(a0, actor.net.layers[0].W)
        assert not np.array_equal(c0, critic.net.layers[0].W)


# --------------------------------------------------------------------------
# gradient checks for the actor and critic losses


def _grid_batch(rng, spec, n=6):
    s = rng.integers(0, 24, n)
    return Batch(s, rng.integers(0, 4, n), rng.integers(0, 25, n), np.zeros(n), np.zeros((n, 1)))


def _point_batch(rng, n=5):
    s = rng.uniform(-1, 1, (n, 4))
    return Batch(s, rng.normal(size=(n, 2)), s, np.zeros(n), np.zeros((n, 1)))


def actor_critic_gradient_errors(seed):
    rng = np.random.default_rng(seed)
    grid = make_env("gridworld")
    point = make_env("pointmass")
    errs = []
    # tabular
    pol = TabularPolicy(rng.normal(size=(25, 4)), beta=rng.uniform(0.5, 2))
    vt = ValueTable(rng.normal(size=25))
    b = _grid_batch(rng, grid)
    adv, tgt, ent = rng.normal(size=len(b)), rng.normal(size=len(b)), rng.uniform(0, 0.1)
    errs.append(max_rel_error(actor_loss(pol, b, adv, ent)[1], numeric_grads(lambda: actor_loss(pol, b, adv, ent)[0],
                                                                             [pol.logits])))
    errs.append(max_rel_error(critic_loss(vt, b, tgt)[1], numeric_grads(lambda: critic_loss(vt, b, tgt)[0],
                                                                        [vt.values])))
    # networks
    disc, crit = make_learner(grid, rng, hidden=(5,), tabular=False)
    x = np.eye(25)[b.states]
    errs.append(max_rel_error(actor_loss(disc, b, adv, ent)[1],
                              numeric_grads(lambda: actor_loss(disc, b, adv, ent)[0], disc.net.params(),
                                            pattern_fn=lambda: kink_pattern(disc.net, x))))
    errs.append(max_rel_error(critic_loss(crit, b, tgt)[1],
                              numeric_grads(lambda: critic_loss(crit, b, tgt)[0], crit.net.params(),
                                            pattern_fn=lambda: kink_pattern(crit.net, x))))
    gauss, _ = make_learner(point, rng, hidden=(5,))
    pb = _point_batch(rng)
    px = pb.states / np.array([1.0, 1.0, 1.0, 1.0])
    adv = rng.normal(size=len(pb))
    errs.append(max_rel_error(actor_loss(gauss, pb, adv, ent)[1],
                              numeric_grads(lambda: actor_loss(gauss, pb, adv, ent)[0], gauss.net.params(),
                                            pattern_fn=lambda: kink_pattern(gauss.net, px))))
    return max(errs)


def test_actor_and_critic_gradients_match_finite_differences():
    assert max(actor_critic_gradient_errors(seed) for seed in range(20)) < 1e-4


# --------------------------------------------------------------------------
# checkpoints


def test_model_checkpoint_roundtrip(tmp_path, grid, point):
    rng = np.random.default_rng(0)
    models = [TabularPolicy(rng.normal(size=(25, 4)), 2.0), ValueTable(rng.normal(size=25))]
    models += list(make_learner(grid, rng, hidden=(4,), tabular=False)) + list(make_learner(point, rng, hidden=(4,)))
    specs = [grid, grid, grid, grid, point, point]
    for i, (m, spec) in enumerate(zip(models, specs)):
        path = str(tmp_path / f"m{i}.bin")
        save_model(path, m)
        back = load_model(path, spec)
        assert type(back) is type(m)
        if isinstance(m, TabularPolicy):
            assert np.array_equal(back.logits, m.logits) and back.beta == m.beta
        elif isinstance(m, ValueTable):
            assert np.array_equal(back.values, m.values)
        else:
            x = np.zeros((1, spec.state_dim))
            assert np.array_equal(back.net(x), m.net(x))
    assert isinstance(models[2], DiscreteActor) and isinstance(models[3], NetworkCritic)
    assert isinstance(models[4], GaussianActor)
