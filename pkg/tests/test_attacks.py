import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from advrl.agents import DdpgOracle, DdqnOracle, RbfOracle
from advrl.attacks import (AttackConfig, attack, attack_batch, attack_gradient, attack_hfsgm,
                           attack_naive, attack_sgd, gradient_direction)
from advrl.nn_core import make_rng, mlp, softmax, spawn_rng
from advrl.rbf_core import RbfNet
from conftest import linear_oracle

KINDS = ("naive", "gradient", "sgd", "hfsgm")


def _toy_1d():
    # Q(s, .) = [s, 1 - s], crossing at s = 0.5
    return linear_oracle([[1.0], [-1.0]], [0.0, 1.0])


class QuadraticOracle:
    """Attack loss ``|s - c|^2``; two actions whose values never change."""

    discrete = True
    num_actions = 2

    def __init__(self, center):
        self.c = np.asarray(center, dtype=float)
        self.state_dim = len(self.c)

    def policy_action(self, S):
        return np.zeros(len(S), dtype=int)

    def action_value(self, S, A):
        return np.zeros(len(S))

    def best_value(self, S):
        return np.zeros(len(S))

    def worst_action(self, S):
        return np.ones(len(S), dtype=int)

    def attack_loss_grad(self, S, worst=None):
        return 2.0 * (S - self.c)


@pytest.mark.parametrize("kind", KINDS)
def test_zero_epsilon_is_identity(kind):
    oracle = _toy_1d()
    s = np.array([0.45])
    out = attack(oracle, s, AttackConfig(epsilon=0.0, kind=kind), make_rng(0))
    np.testing.assert_array_equal(out.s_adv, s)
    assert not out.improved


def test_zero_epsilon_draws_no_randomness():
    rng = make_rng(4)
    attack_naive(_toy_1d(), np.array([0.45]), AttackConfig(epsilon=0.0, kind="naive"), rng)
    assert rng.random() == make_rng(4).random()


def _flip_rate(fn, n, seeds=200):
    oracle = _toy_1d()
    cfg = AttackConfig(epsilon=0.2, n_samples=n, kind="naive" if fn is attack_naive else "gradient")
    flips = 0
    for seed in range(seeds):
        out = fn(oracle, np.array([0.45]), cfg, make_rng(seed))
        flips += out.fooled_action == 0
    return flips / seeds


def test_naive_flips_toy_action():
    assert _flip_rate(attack_naive, 500) > 0.99


def test_gradient_needs_fewer_samples_than_naive():
    grad10 = _flip_rate(attack_gradient, 10)
    naive10 = _flip_rate(attack_naive, 10)
    naive100 = _flip_rate(attack_naive, 100)
    assert grad10 >= 0.99
    assert naive10 < grad10
    assert naive100 >= 0.99


def test_gradient_direction_closed_form():
    rng = make_rng(1)
    for _ in range(10):
        W = rng.normal(size=(2, 3))
        oracle = linear_oracle(W, rng.normal(size=2))
        s = rng.random(3)
        q = W @ s + oracle.target.unflatten(oracle.target.params)[0][1]
        w = int(np.argmin(q))
        o = 1 - w
        expected = (W[o] - W[w]) / np.linalg.norm(W[o] - W[w])
        g, zero = gradient_direction(oracle, s[None])
        assert not zero[0]
        np.testing.assert_allclose(g[0], expected, atol=1e-9)


def test_gradient_zero_gradient_flag():
    oracle = linear_oracle([[0.0, 0.0], [0.0, 0.0]], [1.0, 0.0])
    out = attack_gradient(oracle, np.array([0.3, 0.3]), AttackConfig(epsilon=0.1), make_rng(0))
    assert out.zero_gradient and not out.improved
    np.testing.assert_array_equal(out.s_adv, [0.3, 0.3])


def test_descending_loss_raises_worst_action_probability():
    rng = make_rng(2)
    for _ in range(10):
        oracle = linear_oracle(rng.normal(size=(3, 4)), rng.normal(size=3))
        s = rng.random(4)
        w = oracle.worst_action(s[None])[0]
        g, _ = gradient_direction(oracle, s[None])
        before = softmax(oracle.target_q(s[None]))[0, w]
        after = softmax(oracle.target_q((s - 1e-4 * g[0])[None]))[0, w]
        assert after > before


def test_hfsgm_and_gradient_target_different_actions():
    # pmf (0.5, 0.3, 0.2) at s = 0 with dq1/ds = (1, 0), dq2/ds = (-1, 1)
    W = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 1.0]])
    oracle = linear_oracle(W, np.log([0.5, 0.3, 0.2]))
    s = np.zeros(2)
    p0 = softmax(oracle.online_q(s[None]))[0]
    eps = 0.05
    hf = attack_hfsgm(oracle, s, AttackConfig(epsilon=eps, kind="hfsgm"))
    p_hf = softmax(oracle.online_q(hf.s_adv[None]))[0]
    assert p_hf[1] > p0[1] and p_hf[2] < p0[2]
    g, _ = gradient_direction(oracle, s[None])
    p_gb = softmax(oracle.target_q((s - eps * g[0])[None]))[0]
    assert p_gb[2] > p0[2]
    assert np.linalg.norm(hf.s_adv - s) == pytest.approx(eps)


def test_hfsgm_matches_gradient_flip_on_binary_toy():
    oracle = _toy_1d()
    hf = attack_hfsgm(oracle, np.array([0.45]), AttackConfig(epsilon=0.2, kind="hfsgm"))
    gb = attack_gradient(oracle, np.array([0.45]), AttackConfig(epsilon=0.2, n_samples=50), make_rng(0))
    assert hf.fooled_action == gb.fooled_action == 0


def test_hfsgm_rejects_continuous():
    agent_actor = mlp(3, (4,), 1, make_rng(0), output_activation="tanh")
    critic = mlp(4, (4,), 1, make_rng(1))
    with pytest.raises(ValueError):
        attack_hfsgm(DdpgOracle(agent_actor, critic, 2.0), np.zeros(3), AttackConfig(kind="hfsgm"))


def test_sgd_no_steps_and_convex_descent():
    oracle = QuadraticOracle([0.8, 0.1])
    s = np.array([0.5, 0.5])
    out = attack_sgd(oracle, s, AttackConfig(epsilon=0.5, n_samples=0, kind="sgd"))
    np.testing.assert_array_equal(out.s_adv, s)
    out = attack_sgd(oracle, s, AttackConfig(epsilon=0.5, n_samples=20, kind="sgd", sgd_step=0.01))
    assert np.linalg.norm(out.s_adv - oracle.c) < np.linalg.norm(s - oracle.c)


def test_sgd_projection_lands_on_sphere():
    oracle = QuadraticOracle([5.0, 5.0])
    s = np.array([0.5, 0.5])
    out = attack_sgd(oracle, s, AttackConfig(epsilon=0.1, n_samples=100, kind="sgd", sgd_step=0.05))
    assert np.linalg.norm(out.s_adv - s) == pytest.approx(0.1, abs=1e-12)


def test_batch_rows_independent_of_batch_composition():
    rng = make_rng(3)
    oracle = DdqnOracle(mlp(4, (8,), 2, rng), mlp(4, (8,), 2, rng))
    S = rng.random((5, 4))
    cfg = AttackConfig(epsilon=0.1, n_samples=30, kind="naive")
    full = attack_batch(oracle, S, cfg, [spawn_rng(0, i) for i in range(5)])
    for i in range(5):
        single = attack(oracle, S[i], cfg, spawn_rng(0, i))
        np.testing.assert_array_equal(full.s_adv[i], single.s_adv)


def _random_oracle(rng, kind):
    d = int(rng.integers(1, 5))
    if kind == "ddqn":
        na = int(rng.integers(2, 4))
        return DdqnOracle(mlp(d, (6,), na, rng), mlp(d, (6,), na, rng)), d
    if kind == "rbf":
        na = int(rng.integers(2, 4))
        b = int(rng.integers(2, 4))
        return RbfOracle(RbfNet(b, d, na, output_weights=rng.normal(size=(na, b ** d)))), d
    actor = mlp(d, (6,), 1, rng, output_activation="tanh")
    return DdpgOracle(actor, mlp(d + 1, (6,), 1, rng), 2.0), d


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["ddqn", "rbf", "ddpg"]), st.sampled_from(KINDS),
       st.floats(0.0, 0.5))
def test_attack_soundness(seed, oracle_kind, kind, eps):
    rng = make_rng(seed)
    oracle, d = _random_oracle(rng, oracle_kind)
    if kind == "hfsgm" and not oracle.discrete:
        return
    s = rng.random(d)
    out = attack(oracle, s, AttackConfig(epsilon=eps, n_samples=20, kind=kind, sgd_step=0.02), rng)
    assert np.linalg.norm(out.s_adv - s) <= eps + 1e-9
    if out.improved:
        assert out.predicted_value <= oracle.best_value(s[None])[0]


def test_naive_budget_monotone_in_expectation():
    rng = make_rng(7)
    oracle = DdqnOracle(mlp(3, (8,), 3, rng), mlp(3, (8,), 3, rng))
    states = rng.random((300, 3))
    means, ses = [], []
    for n in (1, 4, 16, 64):
        cfg = AttackConfig(epsilon=0.3, n_samples=n, kind="naive")
        v = attack_batch(oracle, states, cfg, [spawn_rng(n, i) for i in range(300)]).predicted_value
        means.append(v.mean())
        ses.append(v.std() / np.sqrt(len(v)))
    for k in range(3):
        assert means[k + 1] <= means[k] + 3 * max(ses[k], ses[k + 1])


def test_attack_config_validation():
    with pytest.raises(ValueError):
        AttackConfig(kind="bogus")
    with pytest.raises(ValueError):
        AttackConfig(epsilon=-0.1)
    with pytest.raises(ValueError):
        AttackConfig(n_samples=0)
    with pytest.raises(ValueError):
        AttackConfig(alpha_b=0.0)
    AttackConfig(n_samples=0, kind="sgd")


def test_gradient_ray_can_miss_reachable_worst_action_with_three_actions():
    # Three-action linear policy: the worst action owns part of the eps-ball, but the
    # descent ray of the worst-action loss leaves through the other actions' regions.
    W = np.array([[2.288, 0.6], [2.505, -0.687], [-1.676, 0.482]])
    s = np.array([0.396, 0.754])
    oracle = linear_oracle(W, np.array([0.0554, 0.1526, 0.0574]) - W @ s)
    eps = 0.166
    ax = np.linspace(-eps, eps, 301)
    grid = np.stack(np.meshgrid(ax, ax), -1).reshape(-1, 2)
    grid = s + grid[np.linalg.norm(grid, axis=1) <= eps]
    worst = oracle.worst_action(s[None])[0]
    assert np.mean(oracle.policy_action(grid) == worst) > 0.05
    out = attack_gradient(oracle, s, AttackConfig(epsilon=eps, n_samples=2000), make_rng(0))
    assert out.fooled_action != worst
