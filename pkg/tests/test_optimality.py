import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import kink_pattern, max_rel_error, numeric_grads
from vlbirl.approximator import AdamState, Layer, Network, adam_update, get_flat
from vlbirl.env import Batch
from vlbirl.optimality import (PROB_CLAMP, Classifier, RewardHead, bernoulli_reverse_kl, make_classifier,
                               make_reward_head, p_optimality, q_advantage, q_exp_reward, reward_loss, sample_reward)
from vlbirl.policy import ValueTable
from vlbirl.trainer import classifier_update


def _kl_oracle(q, p):
    q = min(max(q, PROB_CLAMP), 1 - PROB_CLAMP)
    p = min(max(p, PROB_CLAMP), 1 - PROB_CLAMP)
    return q * math.log(q / p) + (1 - q) * math.log((1 - q) / (1 - p))


# --------------------------------------------------------------------------
# bernoulli_reverse_kl


def test_kl_identical_is_zero():
    assert bernoulli_reverse_kl(0.3, 0.3) == 0.0


def test_kl_spot_value():
    assert bernoulli_reverse_kl(0.8, 0.5) == pytest.approx(0.19274, abs=1e-5)


def test_kl_clamped_target_is_finite():
    v = bernoulli_reverse_kl(0.5, 0.0)
    expected = 0.5 * math.log(0.5 / 1e-6) + 0.5 * math.log(0.5 / (1 - 1e-6))
    assert math.isfinite(v)
    assert v == pytest.approx(expected, rel=1e-9)
    assert bernoulli_reverse_kl(0.5, 1e-6) == pytest.approx(expected, rel=1e-9)


@pytest.mark.parametrize("q,p", [(-0.1, 0.5), (0.5, 1.2), (float("nan"), 0.5), (0.5, float("inf"))])
def test_kl_rejects_non_probabilities(q, p):
    with pytest.raises(ValueError):
        bernoulli_reverse_kl(q, p)


def test_kl_vectorized_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    q, p = rng.uniform(size=500), rng.uniform(size=500)
    out = bernoulli_reverse_kl(q, p)
    assert np.allclose(out, [_kl_oracle(a, b) for a, b in zip(q, p)], rtol=1e-12, atol=1e-15)


def test_kl_nonnegative_and_zero_iff_equal_10k_pairs():
    rng = np.random.default_rng(1)
    q = rng.uniform(size=10_000)
    p = np.where(rng.random(10_000) < 0.2, q, rng.uniform(size=10_000))
    kl = bernoulli_reverse_kl(q, p)
    assert np.all(kl >= 0)
    gap = np.abs(np.clip(q, 1e-6, 1 - 1e-6) - np.clip(p, 1e-6, 1 - 1e-6))
    assert np.all(kl[gap < 1e-9] < 1e-12)
    # Pinsker: KL >= 2 gap^2, so a vanishing KL pins the gap below sqrt(KL / 2)
    assert np.all(gap[kl < 1e-12] < math.sqrt(0.5e-12))
    assert np.all(kl >= 2 * gap**2 - 1e-15)


@settings(max_examples=200)
@given(q=st.floats(0, 1), p=st.floats(0, 1))
def test_kl_property(q, p):
    v = bernoulli_reverse_kl(q, p)
    assert v >= 0 and math.isfinite(v)


# --------------------------------------------------------------------------
# reward head sampling and optimality maps


def _const_head(mu, log_sigma, dim=3, deterministic=False):
    W = np.zeros((dim, 2))
    return RewardHead(Network([Layer(W, np.array([mu, log_sigma]), "identity")]), deterministic)


def test_sample_reward_examples():
    head = _const_head(1.0, math.log(0.5))
    f = np.zeros(3)
    r, mu, sigma = sample_reward(head, f, 2.0)
    assert (r, mu) == (pytest.approx(2.0), pytest.approx(1.0)) and sigma == pytest.approx(0.5)
    assert sample_reward(head, f, 0.0)[0] == pytest.approx(1.0)
    det = _const_head(1.0, math.log(0.5), deterministic=True)
    assert sample_reward(det, f, 3.7)[0] == pytest.approx(1.0)


def test_reparameterization_moments():
    rng = np.random.default_rng(2)
    head = make_reward_head(5, rng, init_log_std=-0.3)
    f = rng.normal(size=5)
    eps = rng.standard_normal(100_000)
    r, mu, sigma = sample_reward(head, np.tile(f, (100_000, 1)), eps)
    assert abs(r.mean() - mu[0]) < 3 * sigma[0] / math.sqrt(len(r))
    var_se = sigma[0] ** 2 * math.sqrt(2.0 / (len(r) - 1))
    assert abs(r.var(ddof=1) - sigma[0] ** 2) < 3 * var_se


def test_q_advantage_examples():
    c = 3.0
    gamma = 0.9
    # v_s chosen so that r + gamma * v_next - v_s = 0
    assert q_advantage(0.0, gamma * c, c, gamma, False) == pytest.approx(0.5)
    assert q_advantage(1.0, 0.0, 0.0, 0.99, False) == pytest.approx(0.73106, abs=1e-5)
    assert q_advantage(2.0, 0.0, 1e6, 0.99, True) == pytest.approx(0.88080, abs=1e-5)
    with pytest.raises(ValueError):
        q_advantage(0.0, 0.0, 0.0, 1.0, False)


@settings(max_examples=200)
@given(r1=st.floats(-50, 50), dr=st.floats(1e-3, 10), vs=st.floats(-20, 20), vn=st.floats(-20, 20),
       done=st.booleans())
def test_q_advantage_range_and_monotone(r1, dr, vs, vn, done):
    a = q_advantage(r1, vs, vn, 0.99, done)
    b = q_advantage(r1 + dr, vs, vn, 0.99, done)
    assert 0 < a < 1 and 0 < b < 1
    assert b >= a


def test_q_exp_reward_examples():
    assert q_exp_reward(0.0) == 0.5
    assert q_exp_reward(2.5, scale=2.5) == pytest.approx(0.73106, abs=1e-5)
    rng = np.random.default_rng(3)
    a = rng.uniform(-5, 5, size=1000)
    b = a + rng.uniform(1e-3, 3, size=1000)
    assert np.all(q_exp_reward(a) < q_exp_reward(b))
    with pytest.raises(ValueError):
        q_exp_reward(1.0, scale=0.0)


def test_p_optimality_examples():
    zero = Classifier(Network([Layer(np.zeros((4, 3)), np.zeros(3), "leaky_relu"),
                               Layer(np.zeros((3, 1)), np.zeros(1), "identity")]))
    rng = np.random.default_rng(4)
    assert np.all(p_optimality(zero, rng.normal(size=(10, 4))) == 0.5)
    big = Classifier(Network([Layer(np.zeros((2, 1)), np.array([100.0]), "identity")]))
    assert p_optimality(big, np.zeros(2)) == 1 - 1e-6


def test_p_optimality_after_separable_training():
    rng = np.random.default_rng(5)
    xe = rng.normal(size=(64, 2)) + [2.0, 2.0]
    xl = rng.normal(size=(64, 2)) - [2.0, 2.0]
    clf = make_classifier(2, rng)
    clf, _, _, _ = classifier_update(clf, xe, xl, 1e-2, 300)
    assert np.mean(p_optimality(clf, xe)) > 0.9
    assert np.mean(p_optimality(clf, xl)) < 0.1


# --------------------------------------------------------------------------
# reward_loss


class _ArrayCritic:
    def __init__(self, values):
        self.values = np.asarray(values, float)

    def predict(self, states):
        return self.values[np.asarray(states, int)]


def _batch(rng, n=4, n_states=6, dim=5):
    s = rng.integers(0, n_states, size=n)
    nxt = rng.integers(0, n_states, size=n)
    dones = (rng.random(n) < 0.3).astype(float)
    return Batch(s, rng.integers(0, 4, size=n), nxt, dones, rng.normal(size=(n, dim)))


def _matched_models(b, log_sigma, dim=5):
    head = _const_head(b, log_sigma, dim)
    clf = Classifier(Network([Layer(np.zeros((dim, 1)), np.array([b]), "identity")]))
    return head, clf


def test_reward_loss_zero_when_q_equals_p():
    rng = np.random.default_rng(6)
    batch = _batch(rng)
    head, clf = _matched_models(0.7, -1.0)
    critic = _ArrayCritic(np.zeros(6))
    res = reward_loss(head, clf, critic, batch, 0.99, 0.0, noise=0.0)
    assert res.loss == pytest.approx(0.0, abs=1e-15)
    assert res.grads.norm() < 1e-8


def test_reward_loss_variance_term_alone():
    rng = np.random.default_rng(7)
    batch = _batch(rng)
    head, clf = _matched_models(-0.4, math.log(0.5))
    res = reward_loss(head, clf, _ArrayCritic(np.zeros(6)), batch, 0.99, 1.0, noise=0.0)
    assert res.loss == pytest.approx(0.25, abs=1e-12)
    assert res.variance == pytest.approx(0.25)


def test_reward_loss_rejects_empty_and_non_finite():
    rng = np.random.default_rng(8)
    head, clf = _matched_models(0.0, -1.0)
    empty = Batch(np.zeros(0, int), np.zeros(0, int), np.zeros(0, int), np.zeros(0), np.zeros((0, 5)))
    with pytest.raises(ValueError):
        reward_loss(head, clf, _ArrayCritic(np.zeros(6)), empty, 0.99, 0.1, noise=0.0)
    with pytest.raises(FloatingPointError):
        reward_loss(head, clf, _ArrayCritic(np.full(6, np.nan)), _batch(rng), 0.99, 0.1, noise=0.0)
    with pytest.raises(ValueError):
        reward_loss(head, clf, _ArrayCritic(np.zeros(6)), _batch(rng), 0.99, 0.1)


def reward_loss_gradient_error(seed, mode="advantage", deterministic=False):
    rng = np.random.default_rng(seed)
    dim = 5
    head = make_reward_head(dim, rng, hidden=(4, 3), deterministic=deterministic,
                            init_log_std=rng.uniform(-1.5, 0.5))
    for layer in head.net.layers:
        layer.b[:] += rng.normal(scale=0.3, size=layer.b.shape)
    clf = make_classifier(dim, rng, hidden=(4,))
    critic = _ArrayCritic(rng.normal(size=6))
    batch = _batch(rng, 4, 6, dim)
    noise = rng.standard_normal(4)
    lam = rng.uniform(0, 1)
    gamma = rng.uniform(0.5, 0.99)

    def loss():
        return reward_loss(head, clf, critic, batch, gamma, lam, noise=noise, mode=mode).loss

    analytic = reward_loss(head, clf, critic, batch, gamma, lam, noise=noise, mode=mode).grads.params
    numeric = numeric_grads(loss, head.net.params(), pattern_fn=lambda: kink_pattern(head.net, batch.features))
    return max_rel_error(analytic, numeric)


@pytest.mark.parametrize("mode", ["advantage", "exp_reward"])
def test_reward_loss_gradient_matches_finite_differences(mode):
    worst = max(reward_loss_gradient_error(seed, mode) for seed in range(25))
    assert worst < 1e-4


def test_reward_loss_gradient_deterministic_mode():
    worst = max(reward_loss_gradient_error(seed, deterministic=True) for seed in range(10))
    assert worst < 1e-4


def test_reward_loss_leaves_classifier_and_critic_untouched():
    rng = np.random.default_rng(9)
    batch = _batch(rng)
    head = make_reward_head(5, rng)
    clf = make_classifier(5, rng)
    critic = ValueTable(rng.normal(size=6))
    clf_before, v_before = get_flat(clf.net).copy(), critic.values.copy()
    res = reward_loss(head, clf, critic, batch, 0.99, 0.1, rng)
    assert len(res.grads.params) == len(head.net.params())
    assert all(g.shape == p.shape for g, p in zip(res.grads.params, head.net.params()))
    adam_update(head.net.params(), res.grads.params, AdamState.for_network(head.net, 0.1))
    assert np.array_equal(get_flat(clf.net), clf_before)
    assert np.array_equal(critic.values, v_before)


def test_reward_loss_descends():
    rng = np.random.default_rng(10)
    batch = _batch(rng, 32)
    head = make_reward_head(5, rng)
    clf = make_classifier(5, rng)
    for layer in clf.net.layers:
        layer.W *= 3
    critic = _ArrayCritic(np.zeros(6))
    opt = AdamState.for_network(head.net, 1e-2)
    first = reward_loss(head, clf, critic, batch, 0.99, 0.1, noise=0.0).loss
    for _ in range(300):
        adam_update(head.net.params(), reward_loss(head, clf, critic, batch, 0.99, 0.1, noise=0.0).grads.params, opt)
    assert reward_loss(head, clf, critic, batch, 0.99, 0.1, noise=0.0).loss < 0.5 * first
