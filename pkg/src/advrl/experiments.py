"""Experiment pipelines built on the harness: multi-seed training, attack
comparisons and equal-budget robustness comparisons."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import envs, harness
from .agents import train_vanilla
from .attacks import AttackConfig
from .nn_core import make_rng
from .robust_train import AdvTrainConfig, adv_train, default_adv_config


def train_seeds(agent_kind: str, env_kind: str, seeds: Sequence[int], hyper=None,
                env_params=None) -> list:
    """One vanilla agent per training seed, on the given (default) physics."""
    out = []
    for seed in seeds:
        agent, _ = train_vanilla(agent_kind, envs.EnvInstance(env_kind, env_params), hyper,
                                 make_rng(seed))
        out.append(agent)
    return out


@dataclass
class AttackComparison:
    """Attack sweeps of several agents of one kind, one sweep per agent."""
    env_kind: str
    sweeps: list = field(default_factory=list)  # SweepResult per agent

    def mean_return(self, kind: str, epsilon: float) -> float:
        return float(np.mean([s.cell(kind=kind, epsilon=epsilon).mean_return for s in self.sweeps]))

    def normalized(self, kind: str, epsilon: float) -> float:
        """Normalized return of the agent-averaged means."""
        return harness.normalized_return(self.mean_return(kind, epsilon),
                                         self.mean_return(kind, 0.0))


def attack_comparison(agents: Sequence, env_kind: str, kinds: Sequence[str],
                      epsilons: Sequence[float], spec: harness.EvalSpec,
                      n_samples: int = 200) -> AttackComparison:
    base = AttackConfig(n_samples=n_samples)
    return AttackComparison(env_kind, [
        harness.sweep_attack_magnitude(a.oracle(), env_kind, kinds, epsilons, spec, base)
        for a in agents])


@dataclass
class RobustnessComparison:
    """Grid sweeps of adversarially retrained and plainly retrained twins."""
    env_kind: str
    robust: list = field(default_factory=list)   # SweepResult per seed
    vanilla: list = field(default_factory=list)

    def grid_means(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([s.grid_mean() for s in self.robust]),
                np.array([s.grid_mean() for s in self.vanilla]))

    def wins(self) -> int:
        r, v = self.grid_means()
        return int(np.sum(r > v))


def retrain_pair(agent, env_kind: str, adv_cfg: AdvTrainConfig, seed: int, env_params=None):
    """Continue training two copies of ``agent`` for the same number of steps
    with the same random streams: one under attack, one with epsilon 0."""
    plain_cfg = replace(adv_cfg, attack=replace(adv_cfg.attack, epsilon=0.0))
    robust, _ = adv_train(copy.deepcopy(agent), envs.EnvInstance(env_kind, env_params), adv_cfg,
                          make_rng(seed))
    plain, _ = adv_train(copy.deepcopy(agent), envs.EnvInstance(env_kind, env_params), plain_cfg,
                         make_rng(seed))
    return robust, plain


def robustness_comparison(agents: Sequence, env_kind: str, seeds: Sequence[int], grid: dict,
                          spec: harness.EvalSpec, adv_cfg: AdvTrainConfig | None = None
                          ) -> RobustnessComparison:
    """For each pretrained agent: equal-budget retraining, then both twins swept over ``grid``.

    ``seeds[i]`` drives the retraining streams of ``agents[i]``.
    """
    adv_cfg = default_adv_config(env_kind) if adv_cfg is None else adv_cfg
    out = RobustnessComparison(env_kind)
    for agent, seed in zip(agents, seeds, strict=True):
        robust, plain = retrain_pair(agent, env_kind, adv_cfg, seed)
        out.robust.append(harness.sweep_params_grid(robust.oracle(), env_kind, grid, spec))
        out.vanilla.append(harness.sweep_params_grid(plain.oracle(), env_kind, grid, spec))
    return out
