"""DDQN, DDPG and RBF-Q agents, the replay buffer, and the oracle views attacks consume.

Oracles are batched: every method takes states of shape ``(B, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from . import envs
from .errors import ContractError, ShapeError
from .nn_core import (AdamState, DenseNet, adam_step, backward, forward, make_rng, mlp,
                      soft_update, softmax)
from .rbf_core import RbfNet, rbf_q_input_gradient, rbf_q_values, rbf_td_update

# --- replay ----------------------------------------------------------------------------


class Batch(NamedTuple):
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions, sampled uniformly with replacement."""

    def __init__(self, capacity: int, obs_dim: int, action_dim: int | None = None):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.discrete = action_dim is None
        self.s = np.zeros((capacity, obs_dim))
        self.s_next = np.zeros((capacity, obs_dim))
        self.a = np.zeros(capacity, dtype=np.int64) if self.discrete else np.zeros((capacity, action_dim))
        self.r = np.zeros(capacity)
        self.done = np.zeros(capacity)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, s, a, r, s_next, done) -> None:
        i = self._next
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.s_next[i] = s_next
        self.done[i] = float(done)
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if self._size == 0:
            raise ContractError("sample from an empty replay buffer")
        idx = rng.integers(0, self._size, size=batch_size)
        return self._gather(idx)

    def _gather(self, idx) -> Batch:
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.done[idx])

    def transitions(self) -> Batch:
        """Current contents, oldest first."""
        if self._size < self.capacity:
            idx = np.arange(self._size)
        else:
            idx = (np.arange(self.capacity) + self._next) % self.capacity
        return self._gather(idx)


def replay_push(buffer: ReplayBuffer, transition) -> None:
    buffer.push(*transition)


def replay_sample(buffer: ReplayBuffer, batch_size: int, rng) -> Batch:
    return buffer.sample(batch_size, rng)


# --- hyperparameters ---------------------------------------------------------------------


@dataclass
class DdqnHyper:
    hidden: tuple = (16, 16, 16)
    steps: int = 50000
    gamma: float = 0.99
    lr: float = 1e-3
    target_update: str = "soft"  # or "hard"
    tau: float = 1e-2
    hard_period: int = 1000
    batch_size: int = 64
    buffer_capacity: int = 50000
    warmup: int = 1000
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.1
    train_freq: int = 1  # learn every k-th environment step
    grad_clip: float = 0.0  # global-norm clip on the TD gradient; 0 disables


@dataclass
class DdpgHyper:
    hidden: tuple = (64, 64)
    steps: int = 30000
    gamma: float = 0.99
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    tau: float = 1e-2
    noise_scale: float = 0.1  # fraction of the action range
    batch_size: int = 64
    buffer_capacity: int = 50000
    warmup: int = 1000


@dataclass
class RbfHyper:
    bins: int = 3
    steps: int = 40000
    gamma: float = 0.99
    lr: float = 1e-3
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.1


def default_hyper(agent_kind: str, env_kind: str):
    """Per-environment defaults."""
    if agent_kind == "ddqn":
        if env_kind == envs.MOUNTAIN_CAR:
            return DdqnHyper(hidden=(100, 100), steps=40000)
        # smaller batches and a shorter memory keep the cart-pole policy from oscillating late
        return DdqnHyper(batch_size=32, buffer_capacity=10000)
    if agent_kind == "rbf":
        if env_kind == envs.MOUNTAIN_CAR:
            return RbfHyper(bins=4, steps=60000, lr=1e-2)
        return RbfHyper()
    if agent_kind == "ddpg":
        if env_kind == envs.MOUNTAIN_CAR_CONTINUOUS:
            # sparse goal reward: wider noise and a longer budget so the goal is found at all
            return DdpgHyper(steps=100000, noise_scale=0.3)
        return DdpgHyper()
    raise ValueError(f"unknown agent kind {agent_kind!r}")


def _linear_epsilon(step, start, end, anneal_steps):
    if anneal_steps <= 0 or step >= anneal_steps:
        return end
    return start + (end - start) * step / anneal_steps


# --- oracles ----------------------------------------------------------------------------


def _rowwise_onehot(index, n):
    out = np.zeros((len(index), n))
    out[np.arange(len(index)), index] = 1.0
    return out


class DdqnOracle:
    """Acts with the online network, scores with the target network."""

    discrete = True

    def __init__(self, online: DenseNet, target: DenseNet):
        self.online = online
        self.target = target
        self.num_actions = online.output_dim
        self.state_dim = online.input_dim

    def online_q(self, S):
        return forward(self.online, S)[0]

    def target_q(self, S):
        return forward(self.target, S)[0]

    def policy_action(self, S):
        return np.argmax(self.online_q(S), axis=1)

    greedy_action = policy_action

    def action_value(self, S, A):
        q = self.target_q(S)
        return q[np.arange(len(q)), np.asarray(A, dtype=np.int64)]

    def best_value(self, S):
        return self.target_q(S).max(axis=1)

    def worst_action(self, S):
        return np.argmin(self.target_q(S), axis=1)

    def attack_loss_grad(self, S, worst=None):
        """d/ds of ``-log softmax(Q_target(s))[w]``.

        ``w`` defaults to ``argmin_a Q_target(s, a)`` at the given states.
        """
        q, cache = forward(self.target, S)
        w = np.argmin(q, axis=1) if worst is None else worst
        g = softmax(q) - _rowwise_onehot(w, q.shape[1])
        return backward(self.target, cache, g)[1]

    def hfsgm_loss_grad(self, S):
        """d/ds of ``-log softmax(Q_online(s))[a*]`` with ``a* = argmax_a Q_online(s, a)``."""
        q, cache = forward(self.online, S)
        best = np.argmax(q, axis=1)
        g = softmax(q) - _rowwise_onehot(best, q.shape[1])
        return backward(self.online, cache, g)[1]


class RbfOracle(DdqnOracle):
    """One RBF network plays both the online and the target role."""

    def __init__(self, net: RbfNet):
        self.net = net
        self.num_actions = net.num_actions
        self.state_dim = net.state_dim

    def online_q(self, S):
        return rbf_q_values(self.net, S)

    target_q = online_q

    def attack_loss_grad(self, S, worst=None):
        q = rbf_q_values(self.net, S)
        w = np.argmin(q, axis=1) if worst is None else worst
        return rbf_q_input_gradient(self.net, S, softmax(q) - _rowwise_onehot(w, q.shape[1]))

    def hfsgm_loss_grad(self, S):
        q = rbf_q_values(self.net, S)
        best = np.argmax(q, axis=1)
        return rbf_q_input_gradient(self.net, S, softmax(q) - _rowwise_onehot(best, q.shape[1]))


class DdpgOracle:
    """Acts with the online actor, scores with the target critic."""

    discrete = False

    def __init__(self, actor: DenseNet, target_critic: DenseNet, action_bound: float):
        self.actor = actor
        self.critic = target_critic
        self.action_bound = float(action_bound)
        self.state_dim = actor.input_dim
        self.action_dim = actor.output_dim

    def policy_action(self, S):
        return self.action_bound * forward(self.actor, S)[0]

    greedy_action = policy_action

    def action_value(self, S, A):
        SA = np.concatenate([np.atleast_2d(S), np.atleast_2d(A) / self.action_bound], axis=1)
        return forward(self.critic, SA)[0][:, 0]

    def best_value(self, S):
        return self.action_value(S, self.policy_action(S))

    def attack_loss_grad(self, S):
        """Total derivative of ``Q_target(s, U(s))`` w.r.t. ``s``: direct term plus chain through the actor."""
        S = np.atleast_2d(S)
        u, a_cache = forward(self.actor, S)
        q, c_cache = forward(self.critic, np.concatenate([S, u], axis=1))
        dsa = backward(self.critic, c_cache, np.ones_like(q))[1]
        d = self.state_dim
        ds_direct, du = dsa[:, :d], dsa[:, d:]
        return ds_direct + backward(self.actor, a_cache, du)[1]


# --- agents ----------------------------------------------------------------------------


class DdqnAgent:
    kind = "ddqn"

    def __init__(self, obs_dim: int, num_actions: int, hyper: DdqnHyper, rng: np.random.Generator):
        self.hyper = hyper
        self.obs_dim = obs_dim
        self.num_actions = num_actions
        self.online = mlp(obs_dim, hyper.hidden, num_actions, rng)
        self.target = self.online.copy()
        self.optimizer = AdamState.for_params(self.online.params, hyper.lr)
        self.buffer = ReplayBuffer(hyper.buffer_capacity, obs_dim)
        self.total_steps = 0
        self.learn_steps = 0
        self.anneal_steps = int(hyper.eps_fraction * hyper.steps)
        if not 0.0 <= hyper.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")

    def oracle(self) -> DdqnOracle:
        return DdqnOracle(self.online, self.target)

    @property
    def epsilon(self) -> float:
        h = self.hyper
        return _linear_epsilon(self.total_steps, h.eps_start, h.eps_end, self.anneal_steps)

    def random_action(self, rng):
        return int(rng.integers(self.num_actions))

    def act(self, obs, rng, explore: bool = False) -> int:
        if explore and rng.random() < self.epsilon:
            return int(rng.integers(self.num_actions))
        return int(np.argmax(forward(self.online, obs)[0]))

    def td_targets(self, batch: Batch) -> np.ndarray:
        a_next = np.argmax(forward(self.online, batch.s_next)[0], axis=1)
        q_next = forward(self.target, batch.s_next)[0][np.arange(len(a_next)), a_next]
        return batch.r + self.hyper.gamma * (1.0 - batch.done) * q_next

    def learn(self, batch_size: int, rng) -> float:
        if len(self.buffer) < batch_size:
            raise ContractError(f"replay holds {len(self.buffer)} < batch_size={batch_size}")
        batch = self.buffer.sample(batch_size, rng)
        y = self.td_targets(batch)
        q, cache = forward(self.online, batch.s)
        rows = np.arange(batch_size)
        err = q[rows, batch.a] - y
        g = np.zeros_like(q)
        g[rows, batch.a] = 2.0 * err / batch_size
        grad = backward(self.online, cache, g)[0]
        if self.hyper.grad_clip > 0:
            norm = float(np.linalg.norm(grad))
            if norm > self.hyper.grad_clip:
                grad *= self.hyper.grad_clip / norm
        adam_step(self.online.params, grad, self.optimizer)
        self.online.touch()
        self.learn_steps += 1
        h = self.hyper
        if h.target_update == "soft":
            soft_update(self.target, self.online, h.tau)
        elif self.learn_steps % h.hard_period == 0:
            soft_update(self.target, self.online, 1.0)
        return float(np.mean(err * err))


class RbfAgent:
    """Online TD(0) learner: one update per environment step, no replay, no target net."""

    kind = "rbf"

    def __init__(self, obs_dim: int, num_actions: int, hyper: RbfHyper, rng=None):
        self.hyper = hyper
        self.obs_dim = obs_dim
        self.num_actions = num_actions
        self.net = RbfNet(hyper.bins, obs_dim, num_actions)
        self.total_steps = 0
        self.anneal_steps = int(hyper.eps_fraction * hyper.steps)
        self.buffer = None

    def oracle(self) -> RbfOracle:
        return RbfOracle(self.net)

    @property
    def epsilon(self) -> float:
        h = self.hyper
        return _linear_epsilon(self.total_steps, h.eps_start, h.eps_end, self.anneal_steps)

    def act(self, obs, rng, explore: bool = False) -> int:
        if explore and rng.random() < self.epsilon:
            return int(rng.integers(self.num_actions))
        return int(np.argmax(rbf_q_values(self.net, obs)))

    def update(self, s, a, r, s_next, done) -> float:
        return rbf_td_update(self.net, s, a, r, s_next, done, self.hyper.gamma, self.hyper.lr)


class DdpgAgent:
    kind = "ddpg"

    def __init__(self, obs_dim: int, action_dim: int, action_bound: float, hyper: DdpgHyper,
                 rng: np.random.Generator):
        self.hyper = hyper
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.action_bound = float(action_bound)
        self.actor = mlp(obs_dim, hyper.hidden, action_dim, rng, output_activation="tanh")
        self.critic = mlp(obs_dim + action_dim, hyper.hidden, 1, rng)
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.actor_opt = AdamState.for_params(self.actor.params, hyper.actor_lr)
        self.critic_opt = AdamState.for_params(self.critic.params, hyper.critic_lr)
        self.buffer = ReplayBuffer(hyper.buffer_capacity, obs_dim, action_dim)
        self.total_steps = 0
        self.learn_steps = 0
        if not 0.0 <= hyper.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")

    def oracle(self) -> DdpgOracle:
        return DdpgOracle(self.actor, self.target_critic, self.action_bound)

    @property
    def noise_std(self) -> float:
        return self.hyper.noise_scale * 2.0 * self.action_bound

    def random_action(self, rng):
        return rng.uniform(-self.action_bound, self.action_bound, size=self.action_dim)

    def act(self, obs, rng, explore: bool = False) -> np.ndarray:
        a = self.action_bound * forward(self.actor, obs)[0]
        if explore:
            a = a + rng.normal(0.0, 1.0, size=a.shape) * self.noise_std
        return np.clip(a, -self.action_bound, self.action_bound)

    def _critic_input(self, S, A):
        return np.concatenate([S, A / self.action_bound], axis=1)

    def critic_targets(self, batch: Batch) -> np.ndarray:
        u_next = forward(self.target_actor, batch.s_next)[0]
        q_next = forward(self.target_critic, np.concatenate([batch.s_next, u_next], axis=1))[0][:, 0]
        return batch.r + self.hyper.gamma * (1.0 - batch.done) * q_next

    def actor_gradient(self, S, dq_du: Callable | None = None) -> np.ndarray:
        """Gradient of ``mean_b Q(s_b, U(s_b))`` w.r.t. the actor's flat parameters.

        ``dq_du(S, U)`` returns dQ/dU per row; defaults to the online critic's
        input gradient on its action slots.
        """
        S = np.atleast_2d(S)
        u, a_cache = forward(self.actor, S)
        if dq_du is None:
            q, c_cache = forward(self.critic, np.concatenate([S, u], axis=1))
            dsa = backward(self.critic, c_cache, np.full_like(q, 1.0 / len(S)))[1]
            g_u = dsa[:, self.obs_dim:]
        else:
            g_u = dq_du(S, u) / len(S)
        return backward(self.actor, a_cache, g_u)[0]

    def actor_step(self, S, dq_du: Callable | None = None) -> None:
        grad = self.actor_gradient(S, dq_du)
        adam_step(self.actor.params, -grad, self.actor_opt)  # ascend Q
        self.actor.touch()

    def learn(self, batch_size: int, rng) -> float:
        if len(self.buffer) < batch_size:
            raise ContractError(f"replay holds {len(self.buffer)} < batch_size={batch_size}")
        batch = self.buffer.sample(batch_size, rng)
        y = self.critic_targets(batch)
        q, cache = forward(self.critic, self._critic_input(batch.s, batch.a))
        err = q[:, 0] - y
        grad = backward(self.critic, cache, (2.0 * err / batch_size)[:, None])[0]
        adam_step(self.critic.params, grad, self.critic_opt)
        self.critic.touch()
        self.actor_step(batch.s)
        soft_update(self.target_critic, self.critic, self.hyper.tau)
        soft_update(self.target_actor, self.actor, self.hyper.tau)
        self.learn_steps += 1
        return float(np.mean(err * err))


def make_agent(agent_kind: str, env_kind: str, hyper=None, rng=None):
    spec = envs.SPECS[env_kind]
    hyper = default_hyper(agent_kind, env_kind) if hyper is None else hyper
    rng = make_rng(0) if rng is None else rng
    d = envs.obs_dim(env_kind)
    if agent_kind in ("ddqn", "rbf"):
        if not spec.num_actions:
            raise ShapeError(f"{agent_kind} needs a discrete-action environment, got {env_kind}")
        cls = DdqnAgent if agent_kind == "ddqn" else RbfAgent
        agent = cls(d, spec.num_actions, hyper, rng)
    elif agent_kind == "ddpg":
        if spec.num_actions:
            raise ShapeError(f"ddpg needs a continuous-action environment, got {env_kind}")
        agent = DdpgAgent(d, spec.action_dim, spec.action_bound, hyper, rng)
    else:
        raise ValueError(f"unknown agent kind {agent_kind!r}")
    agent.env_kind = env_kind
    return agent


# --- functional aliases ------------------------------------------------------------------

def ddqn_act(agent: DdqnAgent, obs, rng, explore: bool) -> int:
    return agent.act(obs, rng, explore)


def ddqn_learn_step(agent: DdqnAgent, buffer: ReplayBuffer, batch_size: int, rng) -> float:
    if buffer is not agent.buffer:
        agent.buffer = buffer
    return agent.learn(batch_size, rng)


def ddpg_act(agent: DdpgAgent, obs, rng, explore: bool) -> np.ndarray:
    return agent.act(obs, rng, explore)


def ddpg_learn_step(agent: DdpgAgent, buffer: ReplayBuffer, batch_size: int, rng) -> float:
    if buffer is not agent.buffer:
        agent.buffer = buffer
    return agent.learn(batch_size, rng)


# --- interaction loop -------------------------------------------------------------------


@dataclass
class TrainLog:
    episode_returns: list = field(default_factory=list)
    steps: int = 0
    attacked_steps: int = 0


def interaction_loop(agent, env: envs.EnvInstance, steps: int, rng: np.random.Generator,
                     perturb: Callable | None = None, store_perturbed: bool = True,
                     on_step: Callable | None = None) -> TrainLog:
    """Run ``steps`` environment steps with learning.

    ``perturb(obs, step_index, rng)`` returns the observation the agent acts
    from (or ``None`` to act on the true one); it gets its own random stream so
    the other streams are unaffected by whether it draws. The environment
    always evolves from its true state. With ``store_perturbed`` the replay
    keeps the observation the agent acted on.
    """
    env_rng, act_rng, replay_rng, attack_rng = rng.spawn(4)
    log = TrainLog()
    if steps <= 0:
        return log
    obs = env.reset(env_rng)
    ep_return = 0.0
    is_rbf = agent.kind == "rbf"
    hyper = agent.hyper
    for t in range(steps):
        seen = obs
        if perturb is not None:
            adv = perturb(obs, t, attack_rng)
            if adv is not None:
                seen = adv
                log.attacked_steps += 1
        if not is_rbf and agent.total_steps < hyper.warmup:
            action = agent.random_action(act_rng)
        else:
            action = agent.act(seen, act_rng, explore=True)
        out = env.step(action)
        if on_step is not None:
            on_step(obs, seen, action, out)
        stored = seen if store_perturbed else obs
        if is_rbf:
            agent.update(stored, action, out.reward, out.obs, out.done)
        else:
            agent.buffer.push(stored, action, out.reward, out.obs, out.done)
            if (agent.total_steps >= hyper.warmup and len(agent.buffer) >= hyper.batch_size
                    and agent.total_steps % getattr(hyper, "train_freq", 1) == 0):
                agent.learn(hyper.batch_size, replay_rng)
        agent.total_steps += 1
        ep_return += out.reward
        obs = out.obs
        if out.done or out.truncated:
            log.episode_returns.append(ep_return)
            ep_return = 0.0
            obs = env.reset(env_rng)
    log.steps = steps
    return log


def train_vanilla(agent_or_kind, env: envs.EnvInstance, hyperparams=None,
                  rng: np.random.Generator | None = None, steps: int | None = None):
    """Train a fresh agent (pass a kind string) or continue training an existing one.

    Returns ``(agent, TrainLog)``.
    """
    rng = make_rng(0) if rng is None else rng
    init_rng, loop_rng = rng.spawn(2)
    if isinstance(agent_or_kind, str):
        agent = make_agent(agent_or_kind, env.kind, hyperparams, init_rng)
    else:
        agent = agent_or_kind
    budget = agent.hyper.steps if steps is None else steps
    log = interaction_loop(agent, env, budget, loop_rng)
    return agent, log
