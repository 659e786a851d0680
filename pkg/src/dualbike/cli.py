"""``dualbike`` command line: generate, train, evaluate, ablate, simulate.

Every subcommand reads an optional JSON ``--config``; command-line flags
override it. Exit codes: 0 success, 2 configuration error, 1 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import dqn
from .core import load_system, save_system, validate
from .evaluate import config_digest, evaluate
from .policies import HeuristicConfig, compute_empirical_targets
from .presets import layout_system, toy_system
from .scenario import (DatasetError, GeneratorConfig, generate_days, read_dataset,
                       split_train_test, write_dataset)
from .simulator import DecisionPoint, Simulator
from .env import RebalancingEnv
from .trainer import (LEARNING_MODES, STREAM_DATASET, STREAM_EVALUATION, Agent, AgentConfig,
                      load_agent, train)

log = logging.getLogger("dualbike")

SYSTEM_FILE = "system.json"
DATASET_FILE = "dataset.csv"
RUN_FILE = "run.json"

ABLATION_GRIDS = {
    # name -> (mode, list of (label, agent overrides))
    "m": ("DPRL", [(f"m={m:g}", {"m": m}) for m in (0.0, 1.0, 2.0, math.inf)]),
    "alpha": ("RIHR", [(f"alpha={a:g}", {"alpha": a, "m": 1.0}) for a in (0.0, 0.1, 0.5, 0.8, 1.0)]),
    "rihr_m": ("RIHR", [(f"m={m:g}", {"m": m}) for m in (0.0, 1.0, 2.0, math.inf)]),
    "activation": ("DPRL", [(str(a), {"output_activation": a}) for a in (None, "leaky_relu", "prelu")]),
    "depth": ("DPRL", [(f"layers={k}", {"depth": k}) for k in (2, 3, 4, 5)]),
}


class ConfigError(Exception):
    """Bad or missing input; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- config

def _load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{p}: top level must be an object")
    return cfg


def _as_m(value) -> float:
    if isinstance(value, str) and value.lower() in ("inf", "infinity", "∞"):
        return math.inf
    return float(value)


def _train_config(cfg: dict, seed: int | None) -> dqn.TrainConfig:
    raw = dict(cfg.get("train", {}))
    known = {f.name for f in fields(dqn.TrainConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown train settings: {sorted(unknown)}")
    if seed is not None:
        raw["seed"] = seed
    try:
        return dqn.TrainConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train settings: {exc}") from exc


def _agent_config(cfg: dict, mode: str, seed: int | None, overrides: dict | None = None,
                  targets=None) -> AgentConfig:
    a = dict(cfg.get("agent", {}))
    a.update(overrides or {})
    try:
        heuristic = HeuristicConfig(float(a.get("alpha", 0.8)), _as_m(a.get("m", 1.0)))
        hidden = tuple(int(x) for x in a.get("hidden_layers", (1024, 512)))
        if "depth" in a:
            hidden = _deepen(hidden, int(a["depth"]))
        return AgentConfig(mode=mode, heuristic=heuristic,
                           heuristic_init=bool(a.get("heuristic_init", True)),
                           heuristic_init_fraction=float(a.get("heuristic_init_fraction", 0.1)),
                           targets=targets, train=_train_config(cfg, seed), hidden_layers=hidden,
                           output_activation=a.get("output_activation"))
    except ValueError as exc:
        raise ConfigError(f"agent settings: {exc}") from exc


def _deepen(hidden: tuple, depth: int) -> tuple:
    # extra layers halve the previous width
    if depth < 1:
        raise ValueError("depth must be at least 1")
    out = list(hidden[:depth])
    while len(out) < depth:
        out.append(max(out[-1] // 2, 1))
    return tuple(out)


def _load_data(data_dir, cfg: dict):
    data_dir = Path(data_dir) if data_dir else None
    if data_dir is None or not data_dir.is_dir():
        raise ConfigError(f"data directory not found: {data_dir}")
    sys_path, ds_path = data_dir / SYSTEM_FILE, data_dir / DATASET_FILE
    for p in (sys_path, ds_path):
        if not p.is_file():
            raise ConfigError(f"missing {p.name} in {data_dir}")
    try:
        system = load_system(sys_path)
        days = read_dataset(ds_path)
    except (DatasetError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    if "fleet" not in system or "episode" not in system:
        raise ConfigError(f"{sys_path} lacks fleet or episode settings")
    problems = validate(system["network"], system["fleet"], system["episode"])
    if problems:
        raise ConfigError("invalid system: " + "; ".join(problems))
    train_count = int(cfg.get("dataset", {}).get("train_days", round(len(days) * 2 / 3)))
    try:
        train_days, test_days = split_train_test(days, train_count)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    limit = cfg.get("evaluate", {}).get("test_days")
    if limit is not None:
        test_days = test_days[:int(limit)]
    return system, days, train_days, test_days


def _targets(system, train_days):
    if "targets" in system:
        return system["targets"]
    ep = system["episode"]
    return compute_empirical_targets(train_days, system["network"], (ep.horizon_start, ep.horizon_end))


# ---------------------------------------------------------------- commands

def cmd_generate(args, cfg) -> int:
    sc = cfg.get("system", {})
    preset = args.layout or sc.get("preset", "GT1")
    seed = args.seed if args.seed is not None else int(sc.get("seed", 0))
    if preset == "toy":
        try:
            system = toy_system(seed=int(sc.get("network_seed", 3)), **sc.get("toy", {}))
        except TypeError as exc:
            raise ConfigError(f"toy settings: {exc}") from exc
    elif preset in ("GT1", "GT2"):
        system = layout_system(preset, seed=int(sc.get("network_seed", 7)))
    else:
        raise ConfigError(f"unknown layout {preset!r} (expected GT1, GT2 or toy)")
    gen = system.generator
    if "generator" in cfg:
        try:
            gen = GeneratorConfig(**{**asdict(gen), **cfg["generator"]})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"generator settings: {exc}") from exc
    n_days = int(args.days or cfg.get("dataset", {}).get("days", 150))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    days = generate_days(system.network, gen, n_days, int(np.random.default_rng(
        [seed, STREAM_DATASET]).integers(2**31)))
    save_system(out / SYSTEM_FILE, system.network, system.fleet, system.episode)
    write_dataset(days, out / DATASET_FILE)
    (out / "generator.json").write_text(json.dumps(asdict(gen), indent=1))
    print(f"wrote {n_days} days for {preset} ({system.network.station_count} stations) to {out}")
    return 0


def _resolve_mode(args, cfg) -> str:
    mode = (args.mode or cfg.get("agent", {}).get("mode", "DPRL")).upper()
    if mode not in LEARNING_MODES:
        raise ConfigError(f"mode must be one of {LEARNING_MODES}, got {mode!r}")
    return mode


def _train_one(agent_cfg, system, train_days, out_dir, log_wall_clock):
    res = train(agent_cfg, train_days, system["network"], system["fleet"], system["episode"],
                out_dir=out_dir, log_wall_clock=log_wall_clock)
    heads = {p.stem.split("_")[1]: p.name for p in res.checkpoints if p.stem.endswith("_final")}
    run = {"mode": agent_cfg.mode, "heads": heads,
           "alpha": agent_cfg.heuristic.alpha, "m": _m_str(agent_cfg.heuristic.m_exponent),
           "train": asdict(agent_cfg.train), "hidden_layers": list(agent_cfg.hidden_layers),
           "output_activation": agent_cfg.output_activation,
           "targets": None if agent_cfg.targets is None else [int(x) for x in agent_cfg.targets],
           "episodes": len(res.log.episode_lost), "updates": res.log.updates}
    Path(out_dir, RUN_FILE).write_text(json.dumps(run, indent=1, sort_keys=True))
    return res


def _m_str(m):
    return "inf" if math.isinf(m) else m


def cmd_train(args, cfg) -> int:
    system, _, train_days, _ = _load_data(args.data, cfg)
    mode = _resolve_mode(args, cfg)
    targets = _targets(system, train_days) if mode == "RRHI" else None
    agent_cfg = _agent_config(cfg, mode, args.seed, targets=targets)
    if args.steps is not None:
        agent_cfg = agent_cfg.replace(train=agent_cfg.train.replace(total_steps=args.steps))
    out = Path(args.out)
    res = _train_one(agent_cfg, system, train_days, out, not args.no_wall_clock)
    print(f"{mode}: {len(res.log.episode_lost)} episodes, updates {res.log.updates}, output in {out}")
    return 0


def _agent_from_run(run_dir, system, train_days):
    run_dir = Path(run_dir)
    if not (run_dir / RUN_FILE).is_file():
        raise ConfigError(f"no {RUN_FILE} in {run_dir}")
    run = json.loads((run_dir / RUN_FILE).read_text())
    heur = HeuristicConfig(float(run["alpha"]), _as_m(run["m"]))
    targets = run.get("targets")
    if run["mode"] == "RRHI" and targets is None:
        targets = _targets(system, train_days)
    paths = {h: run_dir / name for h, name in run["heads"].items()}
    return load_agent(run["mode"], paths, system["network"], system["fleet"], heur,
                      None if targets is None else np.asarray(targets))


def _scripted_agent(policy, cfg, system, train_days):
    if policy == "none":
        return None
    a = cfg.get("agent", {})
    heur = HeuristicConfig(float(a.get("alpha", 0.8)), _as_m(a.get("m", math.inf)))
    return Agent("HEURISTIC", heuristic=heur, targets=_targets(system, train_days))


def _evaluate_agent(agent, policy_id, cfg, system, test_days, epsilon, seed, out_dir, stem=None):
    ev = cfg.get("evaluate", {})
    reps = ev.get("repetitions")
    digest = config_digest(cfg, policy_id, epsilon, seed)
    report = evaluate(agent, test_days, system["network"], system["fleet"], system["episode"],
                      epsilon=epsilon, repetitions=reps, seed=seed, policy_id=policy_id,
                      digest=digest)
    report.write(out_dir, stem)
    return report


def cmd_evaluate(args, cfg) -> int:
    system, _, train_days, test_days = _load_data(args.data, cfg)
    eps = args.epsilon if args.epsilon is not None else float(cfg.get("evaluate", {}).get("epsilon", 0.0))
    if not 0.0 <= eps <= 1.0:
        raise ConfigError("epsilon must lie in [0, 1]")
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    if args.run:
        try:
            agent = _agent_from_run(args.run, system, train_days)
        except dqn.CheckpointError as exc:
            raise ConfigError(str(exc)) from exc
        policy = agent.mode
    else:
        policy = (args.policy or "none").lower()
        if policy not in ("none", "heuristic"):
            raise ConfigError("--policy must be 'none' or 'heuristic' (use --run for trained agents)")
        agent = _scripted_agent(policy, cfg, system, train_days)
        policy = policy.upper()
    report = _evaluate_agent(agent, policy, cfg, system, test_days, eps, seed, Path(args.out))
    print(f"{policy} eps={eps:g}: mean lost {report.mean:.3f} +/- {report.std:.3f} "
          f"over {len(report.rows)} episodes")
    return 0


def cmd_ablate(args, cfg) -> int:
    system, _, train_days, test_days = _load_data(args.data, cfg)
    if args.grid not in ABLATION_GRIDS:
        raise ConfigError(f"unknown grid {args.grid!r}; choose from {sorted(ABLATION_GRIDS)}")
    mode, variants = ABLATION_GRIDS[args.grid]
    epsilons = [0.0, 0.05] if args.epsilon is None else [args.epsilon]
    seed = args.seed if args.seed is not None else int(cfg.get("train", {}).get("seed", 0))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for label, over in variants:
        agent_cfg = _agent_config(cfg, mode, seed, over)
        if args.steps is not None:
            agent_cfg = agent_cfg.replace(train=agent_cfg.train.replace(total_steps=args.steps))
        run_dir = out / label.replace("=", "_")
        res = _train_one(agent_cfg, system, train_days, run_dir, not args.no_wall_clock)
        for eps in epsilons:
            rep = _evaluate_agent(res.agent, f"{mode}[{label}]", cfg, system, test_days, eps,
                                  seed, run_dir, f"eval_eps{eps:g}")
            summary.append([args.grid, label, mode, eps, rep.mean, rep.std, len(rep.rows)])
            print(f"{args.grid} {label} eps={eps:g}: {rep.mean:.3f} +/- {rep.std:.3f}")
    with open(out / f"ablation_{args.grid}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["grid", "variant", "mode", "epsilon", "mean_lost", "std_lost", "episodes"])
        w.writerows(summary)
    return 0


def cmd_simulate(args, cfg) -> int:
    system, all_days, train_days, _ = _load_data(args.data, cfg)
    days = {d.day_index: d for d in all_days}
    day_index = args.day if args.day is not None else min(days)
    if day_index not in days:
        raise ConfigError(f"day {day_index} not in dataset")
    policy = (args.policy or "heuristic").lower()
    if policy not in ("none", "heuristic"):
        raise ConfigError("--policy must be 'none' or 'heuristic'")
    agent = _scripted_agent(policy, cfg, system, train_days)
    seed = args.seed if args.seed is not None else 0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace_path = out / f"trace_day{day_index}.jsonl"
    net, fleet, ep = system["network"], system["fleet"], system["episode"]
    with open(trace_path, "w") as fh:
        if agent is None:
            sim = Simulator(net, fleet, ep, days[day_index], dispatch_vehicles=False, trace=fh)
            sim.advance()
        else:
            env = RebalancingEnv(net, fleet, ep, days[day_index], trace=fh)
            rng = np.random.default_rng([seed, STREAM_EVALUATION, day_index])
            dp = env.reset()
            dp = dp if isinstance(dp, DecisionPoint) else None
            while dp is not None:
                _, dp = agent.act(env, dp, 0.0, rng)
            sim = env.sim
    lr, lt = sim.lost_demand()
    print(f"day {day_index} {policy}: lost rentals {lr}, lost returns {lt}; trace {trace_path}")
    return 0


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON settings file")
    common.add_argument("--seed", type=int, help="root seed (overrides config)")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    data = _Parser(add_help=False)
    data.add_argument("--data", required=True, help="directory written by 'generate'")

    p = _Parser(prog="dualbike", description="Dual-policy bike rebalancing experiments")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", parents=[common], help="build a network and a demand dataset")
    g.add_argument("--layout", choices=["GT1", "GT2", "toy"])
    g.add_argument("--days", type=int)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", parents=[common, data], help="train one agent")
    t.add_argument("--mode", help="DPRL, RIHR, RRHI or RSIR")
    t.add_argument("--steps", type=int, help="total training steps (overrides config)")
    t.add_argument("--no-wall-clock", action="store_true", help="leave wall_ms empty in logs")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", parents=[common, data], help="evaluate on the test days")
    e.add_argument("--run", help="training output directory of a learned agent")
    e.add_argument("--policy", help="scripted policy when no --run: none or heuristic")
    e.add_argument("--epsilon", type=float)
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("ablate", parents=[common, data], help="train and evaluate a grid of variants")
    a.add_argument("--grid", required=True, help=", ".join(ABLATION_GRIDS))
    a.add_argument("--steps", type=int)
    a.add_argument("--epsilon", type=float, help="single epsilon (default: 0 and 0.05)")
    a.add_argument("--no-wall-clock", action="store_true")
    a.set_defaults(func=cmd_ablate)

    s = sub.add_parser("simulate", parents=[common, data], help="one scripted episode with a trace")
    s.add_argument("--day", type=int)
    s.add_argument("--policy", help="none or heuristic")
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args.config)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
