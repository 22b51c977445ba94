"""Run configuration: a flat ``section.key = value`` text format.

Grammar, one assignment per line::

    # comment (also allowed after a value)
    env.kind = cartpole
    env.pole_length = 0.5
    agent.hidden = 16, 16, 16
    sweep.epsilons = 0, 0.02, 0.05, 0.1

Values are read as int, float, bool (``true``/``false``), comma-separated
lists of those, or bare strings. Sections:

``env``     ``kind`` plus the physics parameters of that environment
``agent``   ``kind`` (ddqn, rbf, ddpg) plus its hyperparameters
``attack``  attack configuration fields
``adv``     ``retrain_steps``, ``attack_period`` (integer or ``preset``), ``store_adversarial``
``eval``    ``episodes``, ``seeds``, ``cap``
``sweep``   ``kinds``, ``epsilons``, ``grid_steps``, ``grid_span``
``grid``    explicit axis values, one key per physics parameter

Keys outside these sets are errors, reported with file and line.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from . import envs
from .agents import default_hyper
from .attacks import AttackConfig
from .errors import ConfigError
from .harness import EvalSpec, default_grid
from .robust_train import APPENDIX_PERIOD_PRESET, AdvTrainConfig, default_adv_config

SECTIONS = ("env", "agent", "attack", "adv", "eval", "sweep", "grid")
_FIXED_KEYS = {
    "attack": {f.name for f in fields(AttackConfig)},
    "adv": {"retrain_steps", "attack_period", "store_adversarial"},
    "eval": {"episodes", "seeds", "cap"},
    "sweep": {"kinds", "epsilons", "grid_steps", "grid_span"},
}


def _scalar(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def _format_value(v) -> str:
    if isinstance(v, list):
        return ", ".join(_format_value(x) for x in v)
    if isinstance(v, bool):
        return str(v).lower()
    return str(v)


def parse_value(text: str):
    text = text.strip()
    if "," in text:
        return [_scalar(t.strip()) for t in text.split(",") if t.strip()]
    return _scalar(text)


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {s: {} for s in SECTIONS})
    origin: dict = field(default_factory=dict)  # (section, key) -> "file:line"

    def set(self, dotted: str, raw: str, where: str = "override") -> None:
        section, sep, key = dotted.strip().partition(".")
        if not sep or not key:
            raise ConfigError(f"{where}: expected section.key, got {dotted.strip()!r}")
        if section not in SECTIONS:
            raise ConfigError(f"{where}: unknown section {section!r}")
        self.values[section][key] = parse_value(raw)
        self.origin[(section, key)] = where

    def get(self, section: str, key: str, default=None):
        return self.values[section].get(key, default)

    # --- resolution --------------------------------------------------------------------

    @property
    def env_kind(self) -> str:
        kind = self.get("env", "kind", envs.CARTPOLE)
        if kind not in envs.SPECS:
            raise ConfigError(f"env.kind: unknown environment {kind!r}")
        return kind

    @property
    def agent_kind(self) -> str:
        kind = self.get("agent", "kind", "ddqn" if envs.is_discrete(self.env_kind) else "ddpg")
        if kind not in ("ddqn", "rbf", "ddpg"):
            raise ConfigError(f"agent.kind: unknown agent {kind!r}")
        return kind

    def validate(self) -> None:
        """Reject any key that does not belong to its section."""
        env_kind, agent_kind = self.env_kind, self.agent_kind
        param_names = {f.name for f in fields(envs.default_params(env_kind))}
        allowed = dict(_FIXED_KEYS)
        allowed["env"] = {"kind"} | param_names
        allowed["grid"] = param_names
        allowed["agent"] = {"kind"} | {f.name for f in fields(default_hyper(agent_kind, env_kind))}
        for section in SECTIONS:
            for key in self.values[section]:
                if key not in allowed[section]:
                    where = self.origin.get((section, key), "config")
                    raise ConfigError(f"{where}: unknown key {section}.{key}")

    def _build(self, what, fn):
        try:
            return fn()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid {what} settings: {exc}") from None

    def env_params(self):
        overrides = {k: float(v) for k, v in self.values["env"].items() if k != "kind"}
        return self._build("env", lambda: replace(envs.default_params(self.env_kind), **overrides))

    def hyper(self):
        base = default_hyper(self.agent_kind, self.env_kind)
        over = {}
        for k, v in self.values["agent"].items():
            if k == "kind":
                continue
            if k == "hidden":
                v = tuple(v) if isinstance(v, list) else (v,)
            over[k] = v
        return self._build("agent", lambda: replace(base, **over))

    def attack(self, **defaults) -> AttackConfig:
        kw = {**defaults, **self.values["attack"]}
        return self._build("attack", lambda: AttackConfig(**kw))

    def adv(self) -> AdvTrainConfig:
        kw = dict(self.values["adv"])
        if kw.get("attack_period") == "preset":
            kw["attack_period"] = APPENDIX_PERIOD_PRESET
        base = default_adv_config(self.env_kind)
        attack = self.attack(**{**asdict(base.attack), "kind": "gradient"})
        return self._build("adv", lambda: AdvTrainConfig(attack=attack, **kw))

    def eval_spec(self, seed: int) -> EvalSpec:
        ev = self.values["eval"]
        seeds = ev.get("seeds", [seed + j for j in range(4)])
        seeds = tuple(seeds) if isinstance(seeds, list) else (seeds,)
        return self._build("eval", lambda: EvalSpec(episodes=ev.get("episodes", 100), seeds=seeds,
                                                     cap=ev.get("cap")))

    def sweep_kinds(self) -> list:
        kinds = self.get("sweep", "kinds", ["naive", "gradient"])
        return kinds if isinstance(kinds, list) else [kinds]

    def sweep_epsilons(self) -> list:
        eps = self.get("sweep", "epsilons", [0.0, 0.02, 0.05, 0.1])
        return [float(e) for e in (eps if isinstance(eps, list) else [eps])]

    def grid(self) -> dict:
        if self.values["grid"]:
            return {k: [float(x) for x in (v if isinstance(v, list) else [v])]
                    for k, v in self.values["grid"].items()}
        return self._build("sweep", lambda: default_grid(
            self.env_kind, int(self.get("sweep", "grid_steps", 9)),
            float(self.get("sweep", "grid_span", 0.5))))

    def dump(self) -> str:
        lines = []
        for section in SECTIONS:
            for key, v in sorted(self.values[section].items()):
                lines.append(f"{section}.{key} = {_format_value(v)}")
        return "\n".join(lines) + "\n"


def parse_config(text: str, source: str = "<config>", cfg: RunConfig | None = None) -> RunConfig:
    cfg = RunConfig() if cfg is None else cfg
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        where = f"{source}:{lineno}"
        if not sep:
            raise ConfigError(f"{where}: expected 'section.key = value'")
        if not value.strip():
            raise ConfigError(f"{where}: missing value for {key.strip()}")
        cfg.set(key, value, where)
    return cfg


def load_config(path=None, overrides=()) -> RunConfig:
    """Read ``path`` (optional) then apply ``section.key=value`` overrides, and validate."""
    cfg = RunConfig()
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except UnicodeDecodeError as exc:
            raise ConfigError(f"{path}: not UTF-8 ({exc.reason})") from None
        parse_config(text, str(path), cfg)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set {item!r}: expected section.key=value")
        cfg.set(key, value, f"--set {key.strip()}")
    cfg.validate()
    return cfg
