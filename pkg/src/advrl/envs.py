"""Classic-control environments with physics parameters exposed and [0,1] observations.

Physics functions are vectorized over a leading batch axis so evaluation can
roll many episodes in lock-step; :class:`EnvInstance` wraps a single episode.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from typing import NamedTuple

import numpy as np

from .errors import ContractError, ShapeError

CARTPOLE = "cartpole"
MOUNTAIN_CAR = "mountain_car"
MOUNTAIN_CAR_CONTINUOUS = "mountain_car_continuous"
PENDULUM = "pendulum"
KINDS = (CARTPOLE, MOUNTAIN_CAR, MOUNTAIN_CAR_CONTINUOUS, PENDULUM)

THETA_LIMIT = 12 * 2 * math.pi / 360
X_LIMIT = 2.4


@dataclass(frozen=True)
class CartPoleParams:
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_length: float = 0.5  # half the pole's length, as in the classic formulation
    gravity: float = 9.8
    force_mag: float = 10.0
    dt: float = 0.02


@dataclass(frozen=True)
class MountainCarParams:
    power: float = 0.001
    gravity_scale: float = 1.0


@dataclass(frozen=True)
class PendulumParams:
    mass: float = 1.0
    length: float = 1.0
    max_torque: float = 2.0
    dt: float = 0.05
    gravity: float = 10.0


def _check_positive(params) -> None:
    for f in fields(params):
        v = getattr(params, f.name)
        if not (v > 0 and math.isfinite(v)):
            raise ValueError(f"{type(params).__name__}.{f.name} must be positive, got {v}")


class EnvSpec(NamedTuple):
    obs_low: np.ndarray
    obs_high: np.ndarray
    num_actions: int  # 0 for continuous
    action_dim: int
    action_bound: float
    cap: int
    param_type: type


SPECS = {
    CARTPOLE: EnvSpec(np.array([-X_LIMIT, -3.0, -THETA_LIMIT, -3.0]),
                      np.array([X_LIMIT, 3.0, THETA_LIMIT, 3.0]), 2, 1, 0.0, 500, CartPoleParams),
    MOUNTAIN_CAR: EnvSpec(np.array([-1.2, -0.07]), np.array([0.6, 0.07]), 3, 1, 0.0, 500,
                          MountainCarParams),
    MOUNTAIN_CAR_CONTINUOUS: EnvSpec(np.array([-1.2, -0.07]), np.array([0.6, 0.07]), 0, 1, 1.0,
                                     500, MountainCarParams),
    PENDULUM: EnvSpec(np.array([-1.0, -1.0, -8.0]), np.array([1.0, 1.0, 8.0]), 0, 1, 2.0, 200,
                      PendulumParams),
}


def default_params(kind: str):
    if kind == MOUNTAIN_CAR_CONTINUOUS:
        return MountainCarParams(power=0.0015)
    return SPECS[kind].param_type()


def params_from_dict(kind: str, values: dict):
    p = replace(default_params(kind), **values)
    _check_positive(p)
    return p


def params_to_dict(params) -> dict:
    return asdict(params)


def is_discrete(kind: str) -> bool:
    return SPECS[kind].num_actions > 0


def obs_dim(kind: str) -> int:
    return len(SPECS[kind].obs_low)


# --- physics (batched over axis 0) -------------------------------------------------------

def initial_state(kind: str, rng: np.random.Generator) -> np.ndarray:
    if kind == CARTPOLE:
        return rng.uniform(-0.05, 0.05, size=4)
    if kind in (MOUNTAIN_CAR, MOUNTAIN_CAR_CONTINUOUS):
        return np.array([rng.uniform(-0.6, -0.4), 0.0])
    if kind == PENDULUM:
        return np.array([rng.uniform(-math.pi, math.pi), rng.uniform(-1.0, 1.0)])
    raise ValueError(f"unknown environment kind {kind!r}")


def raw_observation(kind: str, state: np.ndarray) -> np.ndarray:
    if kind == PENDULUM:
        th, thdot = state[..., 0], state[..., 1]
        return np.stack([np.cos(th), np.sin(th), thdot], axis=-1)
    return state.copy()


def _angle_normalize(x):
    return ((x + np.pi) % (2 * np.pi)) - np.pi


def physics_step(kind: str, params, state: np.ndarray, action: np.ndarray):
    """Advance ``state`` (B, n) under ``action`` (B,) or (B, 1).

    Returns ``(next_state, reward, terminal)``.
    """
    if kind == CARTPOLE:
        p = params
        x, x_dot, th, th_dot = state.T
        force = np.where(np.asarray(action).reshape(-1) == 1, p.force_mag, -p.force_mag)
        cos, sin = np.cos(th), np.sin(th)
        total_mass = p.cart_mass + p.pole_mass
        pml = p.pole_mass * p.pole_length
        temp = (force + pml * th_dot ** 2 * sin) / total_mass
        th_acc = (p.gravity * sin - cos * temp) / (
            p.pole_length * (4.0 / 3.0 - p.pole_mass * cos ** 2 / total_mass))
        x_acc = temp - pml * th_acc * cos / total_mass
        x = x + p.dt * x_dot
        x_dot = x_dot + p.dt * x_acc
        th = th + p.dt * th_dot
        th_dot = th_dot + p.dt * th_acc
        nxt = np.stack([x, x_dot, th, th_dot], axis=1)
        terminal = (x < -X_LIMIT) | (x > X_LIMIT) | (th < -THETA_LIMIT) | (th > THETA_LIMIT)
        return nxt, np.ones(len(state)), terminal

    if kind in (MOUNTAIN_CAR, MOUNTAIN_CAR_CONTINUOUS):
        pos, vel = state.T
        if kind == MOUNTAIN_CAR:
            push = np.asarray(action).reshape(-1) - 1.0
            goal = 0.5
        else:
            push = np.clip(np.asarray(action, dtype=np.float64).reshape(-1), -1.0, 1.0)
            goal = 0.45
        vel = vel + push * params.power - 0.0025 * params.gravity_scale * np.cos(3 * pos)
        vel = np.clip(vel, -0.07, 0.07)
        pos = np.clip(pos + vel, -1.2, 0.6)
        vel = np.where((pos == -1.2) & (vel < 0), 0.0, vel)
        terminal = (pos >= goal) & (vel >= 0)
        reward = -np.ones(len(state))
        if kind == MOUNTAIN_CAR_CONTINUOUS:
            reward = reward + 100.0 * terminal
        return np.stack([pos, vel], axis=1), reward, terminal

    if kind == PENDULUM:
        p = params
        th, th_dot = state.T
        u = np.clip(np.asarray(action, dtype=np.float64).reshape(-1), -p.max_torque, p.max_torque)
        cost = _angle_normalize(th) ** 2 + 0.1 * th_dot ** 2 + 0.001 * u ** 2
        th_dot = th_dot + (3 * p.gravity / (2 * p.length) * np.sin(th)
                           + 3.0 / (p.mass * p.length ** 2) * u) * p.dt
        th_dot = np.clip(th_dot, -8.0, 8.0)
        th = th + th_dot * p.dt
        return np.stack([th, th_dot], axis=1), -cost, np.zeros(len(state), dtype=bool)

    raise ValueError(f"unknown environment kind {kind!r}")


# --- normalization -----------------------------------------------------------------------

def normalize_obs(kind: str, raw: np.ndarray) -> np.ndarray:
    spec = SPECS[kind]
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[-1] != len(spec.obs_low):
        raise ShapeError(f"{kind} observation has {len(spec.obs_low)} components")
    return (np.clip(raw, spec.obs_low, spec.obs_high) - spec.obs_low) / (spec.obs_high - spec.obs_low)


def denormalize_obs(kind: str, normalized: np.ndarray) -> np.ndarray:
    spec = SPECS[kind]
    normalized = np.asarray(normalized, dtype=np.float64)
    if normalized.shape[-1] != len(spec.obs_low):
        raise ShapeError(f"{kind} observation has {len(spec.obs_low)} components")
    return spec.obs_low + normalized * (spec.obs_high - spec.obs_low)


# --- single-episode wrapper ---------------------------------------------------------------

class StepOutcome(NamedTuple):
    obs: np.ndarray
    reward: float
    done: bool
    truncated: bool


class EnvInstance:
    def __init__(self, kind: str, params=None, cap: int | None = None):
        if kind not in SPECS:
            raise ValueError(f"unknown environment kind {kind!r}")
        self.kind = kind
        self.params = default_params(kind) if params is None else params
        _check_positive(self.params)
        self.spec = SPECS[kind]
        self.cap = self.spec.cap if cap is None else int(cap)
        self.raw_state: np.ndarray | None = None
        self.step_count = 0
        self._finished = True

    @property
    def obs_bounds(self):
        return self.spec.obs_low, self.spec.obs_high

    @property
    def obs_dim(self) -> int:
        return len(self.spec.obs_low)

    def observation(self) -> np.ndarray:
        return normalize_obs(self.kind, raw_observation(self.kind, self.raw_state))

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.raw_state = initial_state(self.kind, rng)
        self.step_count = 0
        self._finished = self.cap <= 0
        return self.observation()

    def step(self, action) -> StepOutcome:
        if self._finished:
            raise ContractError("step() on a finished episode; call reset() first")
        if self.spec.num_actions:
            a = int(action)
            if not 0 <= a < self.spec.num_actions:
                raise ValueError(f"action {a} invalid for {self.kind}")
            act = np.array([a])
        else:
            act = np.asarray(action, dtype=np.float64).reshape(1, -1)
        nxt, reward, terminal = physics_step(self.kind, self.params, self.raw_state[None, :], act)
        self.raw_state = nxt[0]
        self.step_count += 1
        done = bool(terminal[0])
        truncated = not done and self.step_count >= self.cap
        self._finished = done or truncated
        return StepOutcome(self.observation(), float(reward[0]), done, truncated)

    def normalize_obs(self, raw):
        return normalize_obs(self.kind, raw)

    def denormalize_obs(self, normalized):
        return denormalize_obs(self.kind, normalized)


def env_reset(env: EnvInstance, rng: np.random.Generator) -> np.ndarray:
    return env.reset(rng)


def env_step(env: EnvInstance, action) -> StepOutcome:
    return env.step(action)
