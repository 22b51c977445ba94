"""Command-line entry point: ``advrl <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import envs, harness
from .agents import train_vanilla
from .config import load_config
from .errors import ConfigError, FormatError, NumericError, ShapeError
from .nn_core import make_rng
from .robust_train import adv_train

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _experiment_parser(sub, name, help_text, needs_checkpoint):
    p = sub.add_parser(name, help=help_text)
    p.add_argument("--config", type=Path, help="config file (section.key = value)")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value; repeatable")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    if needs_checkpoint:
        p.add_argument("--checkpoint", type=Path, required=True, help="agent checkpoint directory")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="advrl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    _experiment_parser(sub, "train", "train an agent from scratch", False)
    _experiment_parser(sub, "adv-train", "retrain a checkpoint under the gradient attack", True)
    _experiment_parser(sub, "attack-eval", "evaluate a checkpoint under one attack", True)
    _experiment_parser(sub, "sweep-attack", "attack kinds x magnitudes sweep", True)
    _experiment_parser(sub, "sweep-grid", "physics parameter grid sweep", True)
    rep = sub.add_parser("report", help="summarize result CSVs")
    rep.add_argument("csv", nargs="+", type=Path)
    rep.add_argument("--baseline", type=Path,
                     help="grid CSV to compare against (e.g. the vanilla agent's)")
    return parser


def _prepare(args):
    cfg = load_config(args.config, args.set)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    (args.out_dir / "config.resolved").write_text(cfg.dump())
    return cfg


def _load_checkpoint(args, cfg):
    agent = harness.checkpoint_load(args.checkpoint)
    if cfg.get("env", "kind") is not None and cfg.env_kind != agent.env_kind:
        raise ConfigError(f"checkpoint was trained on {agent.env_kind}, config asks for {cfg.env_kind}")
    return agent


def _write_log(path, log):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "return"])
        for i, r in enumerate(log.episode_returns):
            w.writerow([i, format(float(r), ".17g")])


def cmd_train(args) -> int:
    cfg = _prepare(args)
    env = envs.EnvInstance(cfg.env_kind, cfg.env_params())
    agent, log = train_vanilla(cfg.agent_kind, env, cfg.hyper(), make_rng(args.seed))
    harness.checkpoint_save(agent, args.out_dir / "agent")
    _write_log(args.out_dir / "train_log.csv", log)
    tail = log.episode_returns[-10:]
    print(f"trained {cfg.agent_kind} on {cfg.env_kind} for {log.steps} steps; "
          f"last {len(tail)} episode mean {np.mean(tail) if tail else float('nan'):.1f}")
    return EXIT_OK


def cmd_adv_train(args) -> int:
    cfg = _prepare(args)
    agent = _load_checkpoint(args, cfg)
    env = envs.EnvInstance(agent.env_kind, cfg.env_params() if cfg.get("env", "kind") else None)
    agent, log = adv_train(agent, env, cfg.adv(), make_rng(args.seed))
    harness.checkpoint_save(agent, args.out_dir / "agent")
    _write_log(args.out_dir / "train_log.csv", log)
    print(f"retrained for {log.steps} steps, {log.attacked_steps} attacked")
    return EXIT_OK


def _eval_env(cfg, agent):
    if cfg.get("env", "kind") is None:
        return agent.env_kind, envs.default_params(agent.env_kind)
    return cfg.env_kind, cfg.env_params()


def cmd_attack_eval(args) -> int:
    cfg = _prepare(args)
    agent = _load_checkpoint(args, cfg)
    env_kind, params = _eval_env(cfg, agent)
    attack = cfg.attack()
    spec = cfg.eval_spec(args.seed)
    result = harness.sweep_attack_magnitude(agent.oracle(), env_kind, [attack.kind],
                                            [0.0, attack.epsilon] if attack.epsilon else [0.0],
                                            spec, attack, params)
    harness.write_results_csv(result, args.out_dir / "attack_eval.csv")
    for c in result.cells:
        print(f"{c.values[0]} eps={c.values[1]:g}: mean {c.mean_return:.2f} "
              f"std {c.std_return:.2f} normalized {result.normalized(c):.3f}")
    return EXIT_OK


def cmd_sweep_attack(args) -> int:
    cfg = _prepare(args)
    agent = _load_checkpoint(args, cfg)
    env_kind, params = _eval_env(cfg, agent)
    result = harness.sweep_attack_magnitude(agent.oracle(), env_kind, cfg.sweep_kinds(),
                                            cfg.sweep_epsilons(), cfg.eval_spec(args.seed),
                                            cfg.attack(), params)
    harness.write_results_csv(result, args.out_dir / "sweep_attack.csv")
    print(f"wrote {len(result.cells)} cells to {args.out_dir / 'sweep_attack.csv'}")
    return EXIT_OK


def cmd_sweep_grid(args) -> int:
    cfg = _prepare(args)
    agent = _load_checkpoint(args, cfg)
    env_kind, params = _eval_env(cfg, agent)
    result = harness.sweep_params_grid(agent.oracle(), env_kind, cfg.grid(),
                                       cfg.eval_spec(args.seed), params)
    harness.write_results_csv(result, args.out_dir / "sweep_grid.csv")
    print(f"wrote {len(result.cells)} cells to {args.out_dir / 'sweep_grid.csv'}; "
          f"grid mean {result.grid_mean():.2f}")
    return EXIT_OK


def _report_one(path, baseline_rows=None):
    axes, rows = harness.read_results_csv(path)
    print(f"== {path} ({len(rows)} cells)")
    if axes == ["kind", "epsilon"]:
        base = {r["kind"]: r["mean"] for r in rows if r["epsilon"] == 0.0}
        for r in rows:
            b = base.get(r["kind"])
            shown = "n/a" if b is None else f"{harness.normalized_return(r['mean'], b):.3f}"
            print(f"  {r['kind']:>8} eps={r['epsilon']:<6g} mean {r['mean']:9.2f}  normalized {shown}")
        return
    mean = float(np.mean([r["mean"] for r in rows]))
    print(f"  grid mean {mean:.2f}  min {min(r['mean'] for r in rows):.2f}  "
          f"max {max(r['mean'] for r in rows):.2f}")
    if baseline_rows is not None:
        bmean = float(np.mean([r["mean"] for r in baseline_rows]))
        print(f"  baseline grid mean {bmean:.2f}  difference {mean - bmean:+.2f}")


def cmd_report(args) -> int:
    baseline = harness.read_results_csv(args.baseline)[1] if args.baseline else None
    for path in args.csv:
        _report_one(path, baseline)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "adv-train": cmd_adv_train,
    "attack-eval": cmd_attack_eval,
    "sweep-attack": cmd_sweep_attack,
    "sweep-grid": cmd_sweep_grid,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ShapeError) as exc:
        print(f"advrl: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"advrl: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, FormatError) as exc:
        print(f"advrl: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
