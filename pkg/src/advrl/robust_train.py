"""Adversarial retraining: keep training a pre-trained agent while it acts on attacked observations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .agents import TrainLog, interaction_loop
from .attacks import AttackConfig, attack_gradient_batch
from . import envs
from .envs import EnvInstance
from .nn_core import make_rng

# "sampling frequency 100" read as an attack period
APPENDIX_PERIOD_PRESET = 100


@dataclass
class AdvTrainConfig:
    attack: AttackConfig = field(default_factory=lambda: AttackConfig(epsilon=0.03, n_samples=200))
    retrain_steps: int | None = None  # None: the agent's own vanilla budget
    attack_period: int = 1
    store_adversarial: bool = True  # replay keeps the observation the agent acted on

    def __post_init__(self):
        if self.attack.kind != "gradient":
            raise ValueError("adversarial retraining uses the gradient attack")
        if self.retrain_steps is not None and self.retrain_steps < 0:
            raise ValueError("retrain_steps must be >= 0")
        if self.attack_period < 1:
            raise ValueError("attack_period must be >= 1")


def default_adv_config(env_kind: str, **overrides) -> AdvTrainConfig:
    """Per-environment defaults: epsilon 0.05 on continuous mountain car, 0.03 elsewhere."""
    eps = 0.05 if env_kind == envs.MOUNTAIN_CAR_CONTINUOUS else 0.03
    return AdvTrainConfig(attack=AttackConfig(epsilon=eps, n_samples=200), **overrides)


def adv_train(agent, env: EnvInstance, cfg: AdvTrainConfig, rng: np.random.Generator | None = None,
              on_step=None):
    """Retrain ``agent`` in place for exactly ``cfg.retrain_steps`` environment steps
    (``agent.hyper.steps`` when unset).

    On attack steps (every ``attack_period``-th step) the agent acts on the
    gradient-attack state while the environment advances from the true state.
    Random streams are split exactly as :func:`advrl.agents.train_vanilla`
    splits them, so with ``epsilon == 0`` the run reproduces vanilla
    continuation training bit for bit.

    Returns ``(agent, TrainLog)``.
    """
    rng = make_rng(0) if rng is None else rng
    _, loop_rng = rng.spawn(2)
    oracle = agent.oracle()

    def perturb(obs, t, attack_rng):
        if t % cfg.attack_period:
            return None
        return attack_gradient_batch(oracle, obs[None, :], cfg.attack, attack_rng).s_adv[0]

    steps = agent.hyper.steps if cfg.retrain_steps is None else cfg.retrain_steps
    log: TrainLog = interaction_loop(agent, env, steps, loop_rng, perturb,
                                     cfg.store_adversarial, on_step=on_step)
    return agent, log
