import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings, strategies as st
from scipy import stats

from advrl import envs
from advrl.agents import (Batch, DdpgAgent, DdpgHyper, DdqnAgent, DdqnHyper, ReplayBuffer,
                          ddpg_act, ddqn_act, ddqn_learn_step, default_hyper, make_agent,
                          replay_push, replay_sample, train_vanilla)
from advrl.errors import ContractError, ShapeError
from advrl.nn_core import DenseNet, forward, make_rng


def _set_linear_q(net: DenseNet, weight, bias):
    """Make a single-layer identity net compute ``weight @ s + bias``."""
    (W, b), = net.unflatten(net.params)
    W[...] = weight
    b[...] = bias
    net.touch()


def _tabular_ddqn(hyper=None):
    agent = DdqnAgent(2, 2, hyper or DdqnHyper(hidden=()), make_rng(0))
    return agent


def test_make_agent_shapes():
    a = make_agent("ddqn", envs.CARTPOLE, rng=make_rng(0))
    assert a.online.dims == (4, 16, 16, 16, 2)
    assert make_agent("ddqn", envs.MOUNTAIN_CAR, rng=make_rng(0)).online.dims == (2, 100, 100, 3)
    d = make_agent("ddpg", envs.PENDULUM, rng=make_rng(0))
    assert d.critic.input_dim == 4 and d.actor.output_dim == 1 and d.action_bound == 2.0
    with pytest.raises(ShapeError):
        make_agent("ddqn", envs.PENDULUM)
    with pytest.raises(ShapeError):
        make_agent("ddpg", envs.CARTPOLE)


def test_ddqn_act_argmax_and_tie_break():
    agent = _tabular_ddqn()
    _set_linear_q(agent.online, np.zeros((2, 2)), [1.0, 3.0])
    assert ddqn_act(agent, np.zeros(2), make_rng(0), explore=False) == 1
    _set_linear_q(agent.online, np.zeros((2, 2)), [2.0, 2.0])
    assert ddqn_act(agent, np.zeros(2), make_rng(0), explore=False) == 0


def test_ddqn_full_epsilon_is_uniform():
    agent = _tabular_ddqn(DdqnHyper(hidden=(), eps_start=1.0, eps_end=1.0))
    agent.online.params[:] = 0.0
    agent.online.unflatten(agent.online.params)[0][1][:] = [5.0, 0.0]
    assert agent.epsilon == 1.0
    rng = make_rng(1)
    counts = np.bincount([agent.act(np.zeros(2), rng, explore=True) for _ in range(10_000)], minlength=2)
    assert stats.chisquare(counts).pvalue > 0.01


def test_epsilon_schedule():
    agent = _tabular_ddqn(DdqnHyper(hidden=(), steps=1000, eps_fraction=0.1))
    assert agent.epsilon == 1.0
    agent.total_steps = 50
    assert agent.epsilon == pytest.approx(1.0 - 0.95 * 0.5)
    agent.total_steps = 100
    assert agent.epsilon == pytest.approx(0.05)
    agent.total_steps = 10_000
    assert agent.epsilon == pytest.approx(0.05)


def test_ddqn_targets_terminal_and_hand_computed():
    agent = _tabular_ddqn()
    _set_linear_q(agent.online, [[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])
    _set_linear_q(agent.target, [[2.0, 0.0], [0.0, -1.0]], [0.5, 0.5])
    s_next = np.array([[0.2, 0.9], [0.7, 0.1]])
    batch = Batch(np.zeros((2, 2)), np.zeros(2, dtype=int), np.array([1.0, 0.5]), s_next,
                  np.array([1.0, 0.0]))
    y = agent.td_targets(batch)
    assert y[0] == 1.0  # terminal: no bootstrap
    # online picks action 0 at (0.7, 0.1); target values it at 2 * 0.7 + 0.5
    assert y[1] == pytest.approx(0.5 + 0.99 * (2 * 0.7 + 0.5), abs=1e-12)


def test_ddqn_learn_tau_one_syncs_target():
    agent = make_agent("ddqn", envs.CARTPOLE, replace(DdqnHyper(), tau=1.0, batch_size=4), make_rng(0))
    rng = make_rng(1)
    for _ in range(8):
        agent.buffer.push(rng.random(4), int(rng.integers(2)), 1.0, rng.random(4), False)
    before = agent.online.params.copy()
    ddqn_learn_step(agent, agent.buffer, 4, rng)
    assert not np.array_equal(agent.online.params, before)
    np.testing.assert_array_equal(agent.target.params, agent.online.params)


def test_ddqn_hard_sync_period():
    h = replace(DdqnHyper(), target_update="hard", hard_period=3, batch_size=4)
    agent = make_agent("ddqn", envs.CARTPOLE, h, make_rng(0))
    rng = make_rng(1)
    for _ in range(8):
        agent.buffer.push(rng.random(4), int(rng.integers(2)), 1.0, rng.random(4), False)
    t0 = agent.target.params.copy()
    agent.learn(4, rng)
    agent.learn(4, rng)
    np.testing.assert_array_equal(agent.target.params, t0)
    agent.learn(4, rng)
    np.testing.assert_array_equal(agent.target.params, agent.online.params)


def test_ddqn_learn_underfull_buffer():
    agent = make_agent("ddqn", envs.CARTPOLE, rng=make_rng(0))
    with pytest.raises(ContractError):
        agent.learn(64, make_rng(0))


def test_ddqn_oracle_consistency():
    agent = make_agent("ddqn", envs.CARTPOLE, rng=make_rng(0))
    agent.target.params[:] += make_rng(3).normal(size=agent.target.params.size) * 0.1
    agent.target.touch()
    oracle = agent.oracle()
    S = make_rng(4).random((50, 4))
    np.testing.assert_array_equal(oracle.greedy_action(S), np.argmax(forward(agent.online, S)[0], axis=1))
    np.testing.assert_array_equal(oracle.best_value(S), forward(agent.target, S)[0].max(axis=1))
    a = oracle.policy_action(S)
    np.testing.assert_array_equal(oracle.action_value(S, a), forward(agent.target, S)[0][np.arange(50), a])


# --- DDPG ----------------------------------------------------------------------------------------

def _ddpg(bound=2.0, **kw):
    return DdpgAgent(3, 1, bound, replace(DdpgHyper(hidden=(8, 8)), **kw), make_rng(0))


def test_ddpg_zero_actor_acts_zero():
    agent = _ddpg()
    agent.actor.params[:] = 0.0
    agent.actor.touch()
    np.testing.assert_array_equal(ddpg_act(agent, np.full(3, 0.5), make_rng(0), explore=False), [0.0])


def test_ddpg_zero_noise_equals_greedy():
    agent = _ddpg(noise_scale=0.0)
    obs = np.array([0.2, 0.4, 0.9])
    np.testing.assert_array_equal(agent.act(obs, make_rng(0), True), agent.act(obs, make_rng(0), False))


def test_ddpg_action_clipped_to_bound():
    agent = _ddpg(noise_scale=100.0)
    (_, _), (_, _), (W, b) = agent.actor.unflatten(agent.actor.params)
    b[...] = 50.0
    agent.actor.touch()
    acts = np.array([agent.act(np.full(3, 0.5), make_rng(s), True)[0] for s in range(50)])
    assert np.all(np.abs(acts) <= 2.0)
    assert np.any(acts == 2.0) and np.any(acts == -2.0)


def test_ddpg_actor_gradient_matches_fd():
    agent = _ddpg()
    s = np.array([[0.3, 0.8, 0.1]])
    grad = agent.actor_gradient(s)

    def q_of(params):
        actor = DenseNet(agent.actor.input_dim, agent.actor.dims[1:], agent.actor.activations, params)
        u = forward(actor, s)[0]
        return float(forward(agent.critic, np.concatenate([s, u], axis=1))[0][0, 0])

    p0 = agent.actor.params.copy()
    h = 1e-6
    fd = np.array([(q_of(p0 + h * e) - q_of(p0 - h * e)) / (2 * h) for e in np.eye(p0.size)])
    np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-8)


def test_ddpg_critic_target_terminal_and_tau_zero():
    agent = _ddpg(tau=0.0, batch_size=4)
    rng = make_rng(2)
    batch = Batch(rng.random((3, 3)), rng.uniform(-2, 2, (3, 1)), np.array([1.0, 2.0, 3.0]),
                  rng.random((3, 3)), np.array([1.0, 1.0, 1.0]))
    np.testing.assert_array_equal(agent.critic_targets(batch), [1.0, 2.0, 3.0])
    for _ in range(8):
        agent.buffer.push(rng.random(3), rng.uniform(-2, 2, 1), -1.0, rng.random(3), False)
    ta, tc = agent.target_actor.params.copy(), agent.target_critic.params.copy()
    for _ in range(3):
        agent.learn(4, rng)
    np.testing.assert_array_equal(agent.target_actor.params, ta)
    np.testing.assert_array_equal(agent.target_critic.params, tc)


def test_ddpg_actor_step_moves_towards_quadratic_optimum():
    agent = _ddpg(bound=1.0, actor_lr=1e-3)
    a_star = 0.3
    s = np.array([[0.5, 0.5, 0.5]])

    def dq_du(S, U):  # Q(s, a) = -(a - a*)^2
        return -2.0 * (U - a_star)

    d0 = abs(agent.act(s[0], None) - a_star)[0]
    agent.actor_step(s, dq_du)
    d1 = abs(agent.act(s[0], None) - a_star)[0]
    assert d1 < d0


def test_ddpg_oracle_loss_grad_is_total_derivative():
    agent = _ddpg()
    oracle = agent.oracle()
    s = np.array([0.3, 0.6, 0.2])
    g = oracle.attack_loss_grad(s[None])[0]
    h = 1e-6
    f = lambda x: oracle.best_value(x[None])[0]
    fd = np.array([(f(s + h * e) - f(s - h * e)) / (2 * h) for e in np.eye(3)])
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-8)


# --- replay ---------------------------------------------------------------------------------------

def test_replay_fifo_eviction():
    buf = ReplayBuffer(2, 1)
    for i in range(3):
        replay_push(buf, (np.array([float(i)]), i, 0.0, np.zeros(1), False))
    assert len(buf) == 2
    np.testing.assert_array_equal(buf.transitions().s[:, 0], [1.0, 2.0])


def test_replay_single_item_with_replacement():
    buf = ReplayBuffer(5, 1)
    buf.push(np.array([7.0]), 1, 0.5, np.zeros(1), True)
    batch = replay_sample(buf, 3, make_rng(0))
    np.testing.assert_array_equal(batch.s[:, 0], [7.0, 7.0, 7.0])


def test_replay_empty_sample_is_contract_error():
    with pytest.raises(ContractError):
        ReplayBuffer(3, 1).sample(1, make_rng(0))


def test_replay_uniform_sampling():
    buf = ReplayBuffer(10, 1)
    for i in range(10):
        buf.push(np.array([float(i)]), 0, 0.0, np.zeros(1), False)
    rng = make_rng(5)
    draws = np.array([int(buf.sample(1, rng).s[0, 0]) for _ in range(10_000)])
    counts = np.bincount(draws, minlength=10)
    sigma = np.sqrt(10_000 * 0.1 * 0.9)
    assert np.all(np.abs(counts - 1000) <= 3 * sigma)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(0, 30))
def test_replay_size_never_exceeds_capacity(cap, n):
    buf = ReplayBuffer(cap, 1)
    for i in range(n):
        buf.push(np.array([float(i)]), 0, 0.0, np.zeros(1), False)
    assert len(buf) == min(cap, n)
    np.testing.assert_array_equal(buf.transitions().s[:, 0], np.arange(max(0, n - cap), n))


# --- training loop -------------------------------------------------------------------------------

def test_train_zero_budget_returns_fresh_agent():
    env = envs.EnvInstance(envs.CARTPOLE)
    h = replace(default_hyper("ddqn", envs.CARTPOLE), steps=0)
    agent, log = train_vanilla("ddqn", env, h, make_rng(3))
    fresh = make_agent("ddqn", envs.CARTPOLE, h, make_rng(3).spawn(2)[0])
    np.testing.assert_array_equal(agent.online.params, fresh.online.params)
    assert log.episode_returns == [] and log.steps == 0


@pytest.mark.parametrize("kind,env_kind", [("ddqn", envs.CARTPOLE), ("rbf", envs.MOUNTAIN_CAR),
                                           ("ddpg", envs.PENDULUM)])
def test_short_training_log_bookkeeping(kind, env_kind):
    h = replace(default_hyper(kind, env_kind), steps=1500)
    if kind != "rbf":
        h = replace(h, warmup=200)
    counted = []
    env = envs.EnvInstance(env_kind)
    agent = make_agent(kind, env_kind, h, make_rng(0))
    from advrl.agents import interaction_loop
    log = interaction_loop(agent, env, 1500, make_rng(1),
                           on_step=lambda o, s, a, out: counted.append(out.done or out.truncated))
    assert len(log.episode_returns) == sum(counted)
    assert agent.total_steps == 1500 == log.steps


def test_training_is_deterministic():
    env_kind = envs.CARTPOLE
    h = replace(default_hyper("ddqn", env_kind), steps=1500, warmup=200)
    a1, l1 = train_vanilla("ddqn", envs.EnvInstance(env_kind), h, make_rng(9))
    a2, l2 = train_vanilla("ddqn", envs.EnvInstance(env_kind), h, make_rng(9))
    np.testing.assert_array_equal(a1.online.params, a2.online.params)
    assert l1.episode_returns == l2.episode_returns
