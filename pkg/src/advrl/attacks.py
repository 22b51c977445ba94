"""Observation-space attacks on trained agents.

All attacks are computed for a batch of true states ``S`` of shape ``(B, d)``;
the single-state functions (:func:`attack_naive` etc.) wrap the batched core.
Random draws come from one generator per row so a row's result does not
depend on which other rows share the batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .nn_core import sample_beta

KINDS = ("naive", "gradient", "sgd", "hfsgm")
ZERO_GRAD = 1e-12


@dataclass
class AttackConfig:
    epsilon: float = 0.05
    n_samples: int = 200
    alpha_b: float = 1.0
    beta_b: float = 1.0
    kind: str = "gradient"
    sgd_step: float = 0.01

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be >= 0")
        if self.n_samples < 0 or (self.kind in ("naive", "gradient") and self.n_samples < 1):
            raise ValueError("n_samples must be >= 1")
        if not (self.alpha_b > 0 and self.beta_b > 0):
            raise ValueError("beta shape parameters must be positive")


class AttackOutcome(NamedTuple):
    s_adv: np.ndarray
    fooled_action: object
    predicted_value: float
    improved: bool
    zero_gradient: bool = False


class BatchOutcome(NamedTuple):
    s_adv: np.ndarray         # (B, d)
    fooled_action: np.ndarray  # (B,) or (B, action_dim)
    predicted_value: np.ndarray
    improved: np.ndarray
    zero_gradient: np.ndarray


def _as_rng_list(rngs, n_rows):
    if isinstance(rngs, np.random.Generator):
        return None
    rngs = list(rngs)
    if len(rngs) != n_rows:
        raise ValueError(f"need one generator per state, got {len(rngs)} for {n_rows}")
    return rngs


def _draw(rngs, n_rows, cfg, shape_per_row):
    rng_list = _as_rng_list(rngs, n_rows)
    if rng_list is None:
        return sample_beta(rngs, cfg.alpha_b, cfg.beta_b, size=(n_rows,) + shape_per_row)
    return np.stack([sample_beta(r, cfg.alpha_b, cfg.beta_b, size=shape_per_row) for r in rng_list])


def _unattacked(oracle, S, zero_gradient=None):
    a = oracle.policy_action(S)
    v = oracle.action_value(S, a)
    zg = np.zeros(len(S), dtype=bool) if zero_gradient is None else zero_gradient
    return BatchOutcome(S.copy(), a, v, np.zeros(len(S), dtype=bool), zg)


def _select(oracle, S, cand, zero_gradient=None):
    """Keep, per row, the candidate whose induced action scores lowest at the true state.

    A candidate is accepted only if it scores strictly below ``best_value(s)``;
    ties resolve to the earliest candidate.
    """
    B, n, d = cand.shape
    best = oracle.best_value(S)
    flat = cand.reshape(B * n, d)
    a_adv = oracle.policy_action(flat)
    v = oracle.action_value(np.repeat(S, n, axis=0), a_adv).reshape(B, n)
    i = np.argmin(v, axis=1)
    rows = np.arange(B)
    v_min = v[rows, i]
    improved = v_min < best
    if zero_gradient is not None:
        improved &= ~zero_gradient
    base = _unattacked(oracle, S, zero_gradient)
    a_sel = a_adv.reshape((B, n) + a_adv.shape[1:])[rows, i]
    mask = improved.reshape((B,) + (1,) * (a_sel.ndim - 1))
    return BatchOutcome(
        np.where(improved[:, None], cand[rows, i], S),
        np.where(mask, a_sel, base.fooled_action),
        np.where(improved, v_min, base.predicted_value),
        improved,
        base.zero_gradient,
    )


def _project(S, X, eps):
    delta = X - S
    norm = np.linalg.norm(delta, axis=1)
    over = norm > eps
    if over.any():
        delta[over] *= (eps / norm[over])[:, None]
    return S + delta


def naive_candidates(S, cfg: AttackConfig, rngs):
    B, d = S.shape
    noise = cfg.epsilon * (_draw(rngs, B, cfg, (cfg.n_samples, d)) - 0.5)
    norm = np.linalg.norm(noise, axis=2)
    over = norm > cfg.epsilon
    if over.any():
        noise[over] *= (cfg.epsilon / norm[over])[:, None]
    return S[:, None, :] + noise


def gradient_direction(oracle, S, worst=None):
    """Unit descent direction of the attack loss per row, plus a zero-gradient mask."""
    G = oracle.attack_loss_grad(S) if worst is None else oracle.attack_loss_grad(S, worst)
    norm = np.linalg.norm(G, axis=1)
    zero = norm < ZERO_GRAD
    safe = np.where(zero, 1.0, norm)
    return np.where(zero[:, None], 0.0, G / safe[:, None]), zero


def attack_naive_batch(oracle, S, cfg: AttackConfig, rngs) -> BatchOutcome:
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    if cfg.epsilon == 0:
        return _unattacked(oracle, S)
    return _select(oracle, S, naive_candidates(S, cfg, rngs))


def attack_gradient_batch(oracle, S, cfg: AttackConfig, rngs) -> BatchOutcome:
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    if cfg.epsilon == 0:
        return _unattacked(oracle, S)
    g, zero = gradient_direction(oracle, S)
    m = cfg.epsilon * _draw(rngs, len(S), cfg, (cfg.n_samples,))
    cand = S[:, None, :] - m[:, :, None] * g[:, None, :]
    return _select(oracle, S, cand, zero)


def attack_sgd_batch(oracle, S, cfg: AttackConfig, rngs=None) -> BatchOutcome:
    """Normalized gradient steps projected onto the epsilon-ball; returns the last iterate."""
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    if cfg.epsilon == 0 or cfg.n_samples == 0:
        return _unattacked(oracle, S)
    worst = oracle.worst_action(S) if oracle.discrete else None
    X = S.copy()
    active = np.ones(len(S), dtype=bool)
    stalled = np.zeros(len(S), dtype=bool)
    for _ in range(cfg.n_samples):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        g, zero = gradient_direction(oracle, X[idx], None if worst is None else worst[idx])
        stalled[idx[zero]] = True
        active[idx[zero]] = False
        X[idx] = _project(S[idx], X[idx] - cfg.sgd_step * g, cfg.epsilon)
    a = oracle.policy_action(X)
    v = oracle.action_value(S, a)
    improved = v < oracle.best_value(S)
    return BatchOutcome(X, a, v, improved, stalled & np.all(X == S, axis=1))


def attack_hfsgm_batch(oracle, S, cfg: AttackConfig, rngs=None) -> BatchOutcome:
    """One sign step that lowers the probability of the best action.

    The sign vector is rescaled to l2 length epsilon so the result stays in
    the same ball as the other attacks.
    """
    if not oracle.discrete:
        raise ValueError("hfsgm is defined for discrete-action agents only")
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    if cfg.epsilon == 0:
        return _unattacked(oracle, S)
    sgn = np.sign(oracle.hfsgm_loss_grad(S))
    k = np.sqrt((sgn != 0).sum(axis=1))
    zero = k == 0
    step = np.where(zero[:, None], 0.0, sgn / np.where(zero, 1.0, k)[:, None])
    X = S + cfg.epsilon * step
    a = oracle.policy_action(X)
    v = oracle.action_value(S, a)
    return BatchOutcome(X, a, v, v < oracle.best_value(S), zero)


BATCH_ATTACKS = {
    "naive": attack_naive_batch,
    "gradient": attack_gradient_batch,
    "sgd": attack_sgd_batch,
    "hfsgm": attack_hfsgm_batch,
}


def attack_batch(oracle, S, cfg: AttackConfig, rngs) -> BatchOutcome:
    return BATCH_ATTACKS[cfg.kind](oracle, S, cfg, rngs)


def _single(outcome: BatchOutcome) -> AttackOutcome:
    a = outcome.fooled_action[0]
    a = int(a) if np.ndim(a) == 0 else np.asarray(a)
    return AttackOutcome(outcome.s_adv[0], a, float(outcome.predicted_value[0]),
                         bool(outcome.improved[0]), bool(outcome.zero_gradient[0]))


def attack_naive(oracle, s, cfg: AttackConfig, rng) -> AttackOutcome:
    return _single(attack_naive_batch(oracle, s, cfg, [rng]))


def attack_gradient(oracle, s, cfg: AttackConfig, rng) -> AttackOutcome:
    return _single(attack_gradient_batch(oracle, s, cfg, [rng]))


def attack_sgd(oracle, s, cfg: AttackConfig, rng=None) -> AttackOutcome:
    return _single(attack_sgd_batch(oracle, s, cfg))


def attack_hfsgm(oracle, s, cfg: AttackConfig, rng=None) -> AttackOutcome:
    return _single(attack_hfsgm_batch(oracle, s, cfg))


def attack(oracle, s, cfg: AttackConfig, rng) -> AttackOutcome:
    return _single(attack_batch(oracle, s, cfg, [rng]))
