"""Evaluation, sweeps, CVaR statistics, results CSV and agent checkpoints.

Seed protocol: episode ``e`` of seed index ``j`` draws its initial state from
the stream keyed ``(seed_j, j, e)``, shared by every sweep cell so all cells
start from the same states. Attack noise for that episode in cell ``c`` comes
from the stream keyed ``(seed_j, j, e, c + 1)``. Results therefore do not
depend on batching or execution order.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import envs
from .agents import DdpgHyper, DdqnHyper, RbfHyper, make_agent
from .attacks import AttackConfig, attack_batch
from .errors import FormatError, ShapeError
from .nn_core import load_dense, make_rng, save_dense, spawn_rng
from .rbf_core import load_rbf, save_rbf


@dataclass
class EvalSpec:
    episodes: int = 100
    seeds: tuple = (0, 1, 2, 3)
    attack: AttackConfig | None = None
    greedy: bool = True
    cap: int | None = None  # episode cap override

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if len(self.seeds) == 0:
            raise ValueError("at least one seed required")
        if not self.greedy:
            raise ValueError("evaluation always runs the greedy policy")
        self.seeds = tuple(int(s) for s in self.seeds)


class EvalResult(NamedTuple):
    mean: float
    std: float
    per_episode_returns: np.ndarray  # (n_seeds, episodes)
    per_seed_means: np.ndarray


def _check_oracle(oracle, env_kind):
    d = envs.obs_dim(env_kind)
    if oracle.state_dim != d:
        raise ShapeError(f"agent expects {oracle.state_dim}-dim observations, {env_kind} gives {d}")
    if oracle.discrete != envs.is_discrete(env_kind):
        raise ShapeError(f"agent action type does not match {env_kind}")
    if oracle.discrete and oracle.num_actions != envs.SPECS[env_kind].num_actions:
        raise ShapeError(f"agent has {oracle.num_actions} actions, {env_kind} has "
                         f"{envs.SPECS[env_kind].num_actions}")


def evaluate(oracle, env_kind: str, env_params=None, spec: EvalSpec | None = None,
             cell: int = 0) -> EvalResult:
    """Greedy rollouts for every (seed, episode), optionally under attack.

    All episodes advance in lock-step as one batch; the agent is never modified.
    """
    spec = EvalSpec() if spec is None else spec
    _check_oracle(oracle, env_kind)
    params = envs.default_params(env_kind) if env_params is None else env_params
    cap = envs.SPECS[env_kind].cap if spec.cap is None else spec.cap
    n_seeds, n_eps = len(spec.seeds), spec.episodes
    total = n_seeds * n_eps
    keys = [(j, e) for j in range(n_seeds) for e in range(n_eps)]
    state = np.stack([envs.initial_state(env_kind, spawn_rng(spec.seeds[j], j, e)) for j, e in keys])
    attack_rngs = None
    if spec.attack is not None and spec.attack.epsilon > 0:
        attack_rngs = [spawn_rng(spec.seeds[j], j, e, cell + 1) for j, e in keys]
    returns = np.zeros(total)
    active = np.arange(total)
    steps = 0
    while active.size and steps < cap:
        obs = envs.normalize_obs(env_kind, envs.raw_observation(env_kind, state[active]))
        if attack_rngs is not None:
            out = attack_batch(oracle, obs, spec.attack, [attack_rngs[i] for i in active])
            action = out.fooled_action
        else:
            action = oracle.policy_action(obs)
        nxt, reward, terminal = envs.physics_step(env_kind, params, state[active], action)
        state[active] = nxt
        returns[active] += reward
        steps += 1
        active = active[~terminal]
    per_ep = returns.reshape(n_seeds, n_eps)
    return EvalResult(float(returns.mean()), float(returns.std()), per_ep, per_ep.mean(axis=1))


# --- sweeps ---------------------------------------------------------------------------------


def normalized_return(mean: float, baseline: float) -> float:
    """Return relative to the unattacked baseline (1.0 = no degradation).

    For negative baselines (cost-style rewards) the ratio is inverted so lower
    is still worse.
    """
    if baseline > 0:
        return mean / baseline
    if baseline < 0 and mean != 0:
        return baseline / mean
    return float("nan")


@dataclass
class Cell:
    index: tuple
    values: tuple
    mean_return: float
    std_return: float
    n: int
    per_seed_means: list


@dataclass
class SweepResult:
    axes: dict  # axis name -> list of values, in sweep order
    cells: list = field(default_factory=list)
    baseline_return: float | None = None

    def __post_init__(self):
        if not self.axes:
            raise ValueError("a sweep needs at least one axis")

    def normalized(self, cell: Cell) -> float:
        if self.baseline_return is None:
            raise ValueError("sweep has no baseline")
        return normalized_return(cell.mean_return, self.baseline_return)

    def cell(self, **coords) -> Cell:
        names = list(self.axes)
        for c in self.cells:
            if all(c.values[names.index(k)] == v for k, v in coords.items()):
                return c
        raise KeyError(coords)

    def grid_mean(self) -> float:
        return float(np.mean([c.mean_return for c in self.cells]))

    def seed_grid_means(self) -> np.ndarray:
        """Mean over cells of each seed's mean return."""
        return np.mean([c.per_seed_means for c in self.cells], axis=0)


def _cell_from_eval(index, values, res: EvalResult) -> Cell:
    return Cell(tuple(index), tuple(values), res.mean, res.std, res.per_episode_returns.size,
                [float(x) for x in res.per_seed_means])


def sweep_attack_magnitude(oracle, env_kind: str, kinds: Sequence[str], epsilons: Sequence[float],
                           spec: EvalSpec | None = None, base_attack: AttackConfig | None = None,
                           env_params=None) -> SweepResult:
    """One evaluation per (attack kind, epsilon); normalized against the epsilon=0 row."""
    spec = EvalSpec() if spec is None else spec
    epsilons = [float(e) for e in epsilons]
    if not epsilons or epsilons[0] != 0.0 or any(b < a for a, b in zip(epsilons, epsilons[1:])):
        raise ValueError("epsilons must be ascending and start at 0")
    base_attack = AttackConfig() if base_attack is None else base_attack
    baseline = evaluate(oracle, env_kind, env_params, replace(spec, attack=None))
    result = SweepResult({"kind": list(kinds), "epsilon": epsilons}, baseline_return=baseline.mean)
    for ki, kind in enumerate(kinds):
        for ei, eps in enumerate(epsilons):
            if eps == 0.0:
                res = baseline
            else:
                cfg = replace(base_attack, kind=kind, epsilon=eps)
                res = evaluate(oracle, env_kind, env_params, replace(spec, attack=cfg),
                               cell=ki * len(epsilons) + ei)
            result.cells.append(_cell_from_eval((ki, ei), (kind, eps), res))
    return result


def default_grid(env_kind: str, steps: int = 9, span: float = 0.5) -> dict:
    """``steps`` values per axis spanning +-``span`` around the default parameters."""
    axes = {
        envs.CARTPOLE: ("cart_mass", "pole_length"),
        envs.MOUNTAIN_CAR: ("power", "gravity_scale"),
        envs.MOUNTAIN_CAR_CONTINUOUS: ("power", "gravity_scale"),
        envs.PENDULUM: ("mass", "length"),
    }[env_kind]
    base = envs.default_params(env_kind)
    return {name: [float(v) for v in np.linspace((1 - span) * getattr(base, name),
                                                 (1 + span) * getattr(base, name), steps)]
            for name in axes}


def sweep_params_grid(oracle, env_kind: str, grid: dict, spec: EvalSpec | None = None,
                      base_params=None) -> SweepResult:
    """Unattacked evaluation at every point of the parameter lattice."""
    spec = replace(EvalSpec() if spec is None else spec, attack=None)
    base_params = envs.default_params(env_kind) if base_params is None else base_params
    names = list(grid)
    if not names:
        raise ValueError("a sweep needs at least one axis")
    for name in names:
        if any(not v > 0 for v in grid[name]):
            raise ValueError(f"grid values for {name} must be positive")
    result = SweepResult({k: list(v) for k, v in grid.items()})
    for cell_no, index in enumerate(itertools.product(*(range(len(grid[n])) for n in names))):
        values = tuple(grid[n][i] for n, i in zip(names, index))
        params = envs.params_from_dict(env_kind, {**asdict(base_params), **dict(zip(names, values))})
        res = evaluate(oracle, env_kind, params, spec, cell=cell_no)
        result.cells.append(_cell_from_eval(index, values, res))
    return result


# --- CVaR -------------------------------------------------------------------------------------


class CvarResult(NamedTuple):
    threshold_beta: float
    cvar: float


def cvar_statistic(returns, alpha: float) -> CvarResult:
    """Mean of the returns at or below the empirical alpha-quantile (lower interpolation)."""
    r = np.asarray(returns, dtype=np.float64).ravel()
    if r.size == 0:
        raise ValueError("returns must be non-empty")
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    beta = float(np.quantile(r, alpha, method="lower"))
    tail = r[r <= beta]
    return CvarResult(beta, math.fsum(tail.tolist()) / tail.size)


# --- CSV ---------------------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_results_csv(result: SweepResult, path) -> None:
    names = list(result.axes)
    if not names:
        raise ValueError("a sweep needs at least one axis")
    rows = sorted(result.cells, key=lambda c: c.index)
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names + ["mean", "std", "n"])
            for c in rows:
                w.writerow([_fmt(v) for v in c.values] + [_fmt(c.mean_return), _fmt(c.std_return), c.n])
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc.strerror or exc}") from exc


def read_results_csv(path) -> tuple[list, list[dict]]:
    """Parse a results CSV back into ``(axis_names, rows)``; numeric fields become floats."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][-3:] != ["mean", "std", "n"]:
        raise FormatError(f"{path}: not a results CSV")
    header = rows[0]
    out = []
    for r in rows[1:]:
        rec = {}
        for k, v in zip(header, r):
            try:
                rec[k] = int(v) if k == "n" else float(v)
            except ValueError:
                rec[k] = v
        out.append(rec)
    return header[:-3], out


# --- checkpoints -----------------------------------------------------------------------------

SIDECAR = "agent.json"
_HYPER = {"ddqn": DdqnHyper, "ddpg": DdpgHyper, "rbf": RbfHyper}


def _hyper_to_json(h) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(h).items()}


def _hyper_from_json(kind, d) -> object:
    cls = _HYPER[kind]
    d = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}
    return cls(**d)


def checkpoint_save(agent, path, env_kind: str | None = None) -> Path:
    """Write ``agent`` into directory ``path``: one file per network plus a JSON sidecar."""
    env_kind = env_kind or getattr(agent, "env_kind", None)
    if env_kind is None:
        raise ValueError("environment kind unknown; pass env_kind")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if agent.kind == "ddqn":
        nets = {"online": agent.online, "target": agent.target}
    elif agent.kind == "ddpg":
        nets = {"actor": agent.actor, "critic": agent.critic,
                "target_actor": agent.target_actor, "target_critic": agent.target_critic}
    else:
        nets = {}
    files = {}
    for name, net in nets.items():
        files[name] = f"{name}.ckpt"
        save_dense(net, path / files[name])
    if agent.kind == "rbf":
        files["rbf"] = "rbf.ckpt"
        save_rbf(agent.net, path / "rbf.ckpt")
    meta = {
        "format": "advrl-agent",
        "version": 1,
        "agent_kind": agent.kind,
        "env_kind": env_kind,
        "hyper": _hyper_to_json(agent.hyper),
        "total_steps": agent.total_steps,
        "networks": files,
    }
    (path / SIDECAR).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def checkpoint_load(path):
    """Rebuild an agent from :func:`checkpoint_save` output (``agent.env_kind`` is restored).

    Optimizer moments and replay contents are not stored; a loaded agent starts
    those fresh.
    """
    path = Path(path)
    try:
        meta = json.loads((path / SIDECAR).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable agent sidecar ({exc})") from None
    if meta.get("format") != "advrl-agent" or meta.get("version") != 1:
        raise FormatError(f"{path}: expected advrl-agent v1 sidecar, found "
                          f"{meta.get('format')!r} v{meta.get('version')!r}")
    kind, env_kind = meta["agent_kind"], meta["env_kind"]
    hyper = _hyper_from_json(kind, meta["hyper"])
    agent = make_agent(kind, env_kind, hyper, make_rng(0))
    files = meta["networks"]
    if kind == "rbf":
        net = load_rbf(path / files["rbf"])
        if (net.state_dim, net.num_actions) != (agent.net.state_dim, agent.net.num_actions):
            raise ShapeError(f"{path}: RBF shape does not match {env_kind}")
        agent.net = net
    else:
        for name in files:
            net = load_dense(path / files[name])
            current = getattr(agent, name)
            if not net.same_architecture(current):
                raise ShapeError(f"{path}/{files[name]}: architecture {net.descriptor()} does not "
                                 f"match expected {current.descriptor()}")
            current.params[...] = net.params
            current.touch()
    agent.total_steps = int(meta.get("total_steps", 0))
    return agent
