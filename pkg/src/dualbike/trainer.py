"""Training loop for the dual policy and the single-policy / joint-action baselines.

Modes
-----
DPRL  inventory head at arrivals, routing head at departures
RIHR  inventory head, heuristic routing
RRHI  routing head, target-level inventory rule
RSIR  one joint head at arrivals; the chosen station is latched and used
      at departure without re-querying
NONE / HEURISTIC are scripted agents used only for evaluation.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dqn
from .core import EpisodeConfig, FleetConfig, StationNetwork
from .env import RebalancingEnv, state_dim
from .policies import (HeuristicConfig, compute_empirical_targets, routing_distribution,
                       sample_routing, target_level_inventory)
from .scenario import DemandScenario
from .simulator import DecisionPoint, DecisionType

LEARNING_MODES = ("DPRL", "RIHR", "RRHI", "RSIR")
SCRIPTED_MODES = ("NONE", "HEURISTIC")
LOG_COLUMNS = ["step", "episode", "return", "td_loss", "mean_q", "epsilon", "wall_ms"]

# named seed substreams derived from the root seed
STREAM_DATASET, STREAM_WEIGHTS, STREAM_EXPLORATION, STREAM_EVALUATION, STREAM_REPLAY, STREAM_DAYS = range(6)


class TrainingError(RuntimeError):
    pass


def substream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *[int(k) for k in keys]])


@dataclass(frozen=True)
class AgentConfig:
    mode: str = "DPRL"
    heuristic: HeuristicConfig = field(default_factory=HeuristicConfig)
    heuristic_init: bool = True
    heuristic_init_fraction: float = 0.1
    targets: np.ndarray | None = None
    train: dqn.TrainConfig = field(default_factory=dqn.TrainConfig)
    hidden_layers: tuple = (1024, 512)
    output_activation: str | None = None
    head_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in LEARNING_MODES + SCRIPTED_MODES:
            raise ValueError(f"unknown mode {self.mode!r}")

    def replace(self, **kw) -> "AgentConfig":
        return replace(self, **kw)

    def head_outputs(self, n_stations: int) -> dict:
        return {
            "DPRL": {"inventory": 3, "routing": n_stations},
            "RIHR": {"inventory": 3},
            "RRHI": {"routing": n_stations},
            "RSIR": {"joint": 3 * n_stations},
        }.get(self.mode, {})

    def network_spec(self, head: str, input_dim: int, output_dim: int) -> dqn.NetworkSpec:
        over = self.head_overrides.get(head, {})
        return dqn.NetworkSpec(input_dim, output_dim,
                               tuple(over.get("hidden_layers", self.hidden_layers)),
                               "relu", over.get("output_activation", self.output_activation))


# which head learns from each reward stream
STREAM_HEADS = {
    "DPRL": {DecisionType.INVENTORY: "inventory", DecisionType.ROUTING: "routing"},
    "RIHR": {DecisionType.INVENTORY: "inventory"},
    "RRHI": {DecisionType.ROUTING: "routing"},
    "RSIR": {DecisionType.INVENTORY: "joint"},
}


def nearest_allowed(env: RebalancingEnv, vehicle: int, mask: np.ndarray) -> int:
    here = env.sim.destination[vehicle]
    d = np.where(mask, env.sim.distance[here], np.inf)
    return int(np.argmin(d))


def rsir_joint_semantics(env: RebalancingEnv, joint_action: int, latch: dict):
    """Apply the inventory half of a joint action now and latch the station.

    The latched station is applied at the vehicle's next routing decision by
    :func:`resolve_latched_route`.
    """
    dp = env.decision
    if dp.decision_type != DecisionType.INVENTORY:
        raise ValueError("joint actions are only taken at arrivals")
    n = env.n_stations
    fill, station = divmod(int(joint_action), n)
    latch[dp.vehicle] = station
    return env.step(fill, record_as=int(joint_action))


def resolve_latched_route(env: RebalancingEnv, latch: dict) -> tuple:
    """Depart toward the latched station; falls back to the nearest allowed one on conflict.

    Returns ``(transitions, next decision, fell_back)``.
    """
    dp = env.decision
    mask = env.routing_mask()
    station = latch.pop(dp.vehicle, None)
    fell_back = station is None or not mask[station]
    if fell_back:
        station = nearest_allowed(env, dp.vehicle, mask)
    out, nxt = env.step(station)
    return out, nxt, fell_back


class Agent:
    """Acting side of a (possibly partly scripted) policy."""

    def __init__(self, mode: str, heads: dict | None = None,
                 heuristic: HeuristicConfig | None = None, targets=None):
        self.mode = mode
        self.heads = heads or {}
        self.heuristic = heuristic or HeuristicConfig()
        self.targets = targets
        self.latch: dict = {}
        self.fallbacks = 0
        if mode == "RRHI" or mode == "HEURISTIC":
            if targets is None:
                raise ValueError(f"{mode} needs target levels")

    def begin_episode(self):
        self.latch = {}

    @property
    def dispatches(self) -> bool:
        return self.mode != "NONE"

    def _greedy(self, head, env, dp, mask, epsilon, rng):
        q = dqn.forward(self.heads[head], env.observe(dp.vehicle))
        return dqn.act_epsilon_greedy(q, mask, epsilon, rng)

    def _heuristic_route(self, env, dp, rng):
        dist = routing_distribution(env.sim, dp.vehicle, self.heuristic)
        if self.heuristic.greedy:
            return int(np.argmax(dist))
        return sample_routing(dist, rng)

    def act(self, env: RebalancingEnv, dp: DecisionPoint, epsilon: float,
            rng: np.random.Generator, heuristic_routing: bool = False):
        """Choose and apply an action; returns ``(transitions, next decision)``."""
        mode = self.mode
        inventory = dp.decision_type == DecisionType.INVENTORY
        if mode == "RSIR":
            if inventory:
                mask = env.action_mask(DecisionType.INVENTORY)
                a = self._greedy("joint", env, dp, mask, epsilon, rng)
                return rsir_joint_semantics(env, a, self.latch)
            out, nxt, fell_back = resolve_latched_route(env, self.latch)
            self.fallbacks += int(fell_back)
            return out, nxt
        if inventory:
            if mode in ("DPRL", "RIHR"):
                a = self._greedy("inventory", env, dp, np.ones(3, dtype=bool), epsilon, rng)
                return env.step(a)
            l = target_level_inventory(env.sim, dp.vehicle, self.targets)
            return env.step(-1, count=l, record_as=-1)
        if mode in ("DPRL", "RRHI") and not heuristic_routing:
            a = self._greedy("routing", env, dp, env.routing_mask(), epsilon, rng)
            return env.step(a)
        return env.step(self._heuristic_route(env, dp, rng))


@dataclass
class TrainingLog:
    rows: dict = field(default_factory=lambda: {"inventory": [], "routing": []})
    episode_lost: list = field(default_factory=list)
    updates: dict = field(default_factory=dict)
    buffer_sizes: dict = field(default_factory=dict)
    fallbacks: int = 0
    log_wall_clock: bool = True

    def returns(self, stream: str = "inventory") -> np.ndarray:
        return np.array([r["return"] for r in self.rows[stream]])

    def td_losses(self, stream: str = "inventory") -> np.ndarray:
        return np.array([r["td_loss"] for r in self.rows[stream] if r["td_loss"] is not None])

    def write_csv(self, out_dir) -> list:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for stream, rows in self.rows.items():
            path = out_dir / f"train_{stream}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(LOG_COLUMNS)
                for r in rows:
                    w.writerow([r["step"], r["episode"], _fmt(r["return"]), _fmt(r["td_loss"]),
                                _fmt(r["mean_q"]), _fmt(r["epsilon"]),
                                r["wall_ms"] if self.log_wall_clock else ""])
            paths.append(path)
        return paths


def _fmt(x):
    return "" if x is None else repr(float(x))


@dataclass
class TrainResult:
    agent: Agent
    log: TrainingLog
    checkpoints: list


def _window(episode: EpisodeConfig):
    return (episode.horizon_start, episode.horizon_end)


def train(agent_config: AgentConfig, train_days: Sequence[DemandScenario],
          network: StationNetwork, fleet: FleetConfig, episode: EpisodeConfig, *,
          out_dir=None, checkpoint_interval: int | None = None, log_wall_clock: bool = True,
          progress=None) -> TrainResult:
    """Train the heads of ``agent_config.mode`` on ``train_days``.

    One training day is drawn uniformly per episode. ``step`` counts
    decision points of every kind (learned or scripted). Each head takes a
    gradient step every ``train_frequency`` transitions pushed to its
    buffer, once ``learning_starts`` steps have elapsed and the buffer
    holds a full batch.
    """
    if len(train_days) < 1:
        raise ValueError("need at least one training day")
    mode = agent_config.mode
    if mode not in LEARNING_MODES:
        raise ValueError(f"mode {mode} has nothing to train")
    cfg = agent_config.train
    seed = cfg.seed
    n = network.station_count
    dim = state_dim(n, fleet.vehicle_count)
    targets = agent_config.targets
    if targets is None and mode == "RRHI":
        targets = compute_empirical_targets(train_days, network, _window(episode))

    rng_w = substream(seed, STREAM_WEIGHTS)
    rng_x = substream(seed, STREAM_EXPLORATION)
    rng_r = substream(seed, STREAM_REPLAY)
    rng_d = substream(seed, STREAM_DAYS)

    outputs = agent_config.head_outputs(n)
    params = {h: dqn.init_params(agent_config.network_spec(h, dim, k), rng_w)
              for h, k in outputs.items()}
    target_params = {h: p.copy() for h, p in params.items()}
    buffers = {h: dqn.ReplayBuffer(cfg.buffer_size, dim, k) for h, k in outputs.items()}
    optim = {h: dqn.make_optimizer(cfg) for h in outputs}
    pushed = dict.fromkeys(outputs, 0)
    n_updates = dict.fromkeys(outputs, 0)
    agent = Agent(mode, params, agent_config.heuristic, targets)
    stream_heads = STREAM_HEADS[mode]
    stream_name = {DecisionType.INVENTORY: "inventory", DecisionType.ROUTING: "routing"}

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    checkpoints = []
    log = TrainingLog(log_wall_clock=log_wall_clock)
    t0 = time.perf_counter()
    init_steps = agent_config.heuristic_init_fraction * cfg.total_steps if (
        mode == "DPRL" and agent_config.heuristic_init) else 0
    step = 0
    ep = 0

    def save_all(tag):
        if out_dir is None:
            return
        for h, p in params.items():
            path = out_dir / f"{mode.lower()}_{h}_{tag}.npz"
            dqn.save_checkpoint(p, path, step, {"mode": mode, "head": h})
            checkpoints.append(path)

    while step < cfg.total_steps:
        day_idx = int(rng_d.integers(len(train_days)))
        day = train_days[day_idx]
        env = RebalancingEnv(network, fleet, episode, day, seed=ep,
                             joint_actions=(mode == "RSIR"))
        agent.begin_episode()
        ep_return = {"inventory": 0.0, "routing": 0.0}
        losses = {h: [] for h in outputs}
        qs = {h: [] for h in outputs}
        finished = False
        try:
            dp = env.reset()
            dp = dp if isinstance(dp, DecisionPoint) else None
            if dp is None:
                finished = True
            while dp is not None:
                if step >= cfg.total_steps:
                    break
                eps = dqn.epsilon_schedule(step, cfg)
                transitions, dp = agent.act(env, dp, eps, rng_x, heuristic_routing=step < init_steps)
                step += 1
                if dp is None:
                    finished = True
                for tr in transitions:
                    ep_return[stream_name[tr.policy_type]] += tr.reward
                    head = stream_heads.get(tr.policy_type)
                    if head is None:
                        continue
                    buffers[head].push(tr)
                    pushed[head] += 1
                    buf = buffers[head]
                    if (step >= cfg.learning_starts and len(buf) >= cfg.batch_size
                            and pushed[head] % cfg.train_frequency == 0):
                        batch = buf.sample(cfg.batch_size, rng_r)
                        y = dqn.td_targets(target_params[head], batch["rewards"],
                                           batch["next_states"], batch["terminals"],
                                           batch["next_masks"], cfg.gamma)
                        params[head], loss, q_sa = dqn.descend(
                            params[head], batch["states"], batch["actions"], y, optim[head])
                        agent.heads[head] = params[head]
                        losses[head].append(loss)
                        qs[head].append(float(np.mean(q_sa)))
                        n_updates[head] += 1
                        if n_updates[head] % cfg.target_update_interval == 0:
                            target_params[head] = params[head].copy()
                if checkpoint_interval and step % checkpoint_interval == 0:
                    save_all(f"step{step}")
        except Exception as exc:
            raise TrainingError(f"episode {ep} (day {day.day_index}, seed {ep}, step {step}): "
                                f"{type(exc).__name__}: {exc}") from exc
        if not finished:
            break
        wall = int((time.perf_counter() - t0) * 1000)
        eps = dqn.epsilon_schedule(step, cfg)
        for stream, dtype in (("inventory", DecisionType.INVENTORY), ("routing", DecisionType.ROUTING)):
            head = stream_heads.get(dtype)
            ls = losses.get(head) if head else None
            qv = qs.get(head) if head else None
            log.rows[stream].append({
                "step": step, "episode": ep, "return": ep_return[stream],
                "td_loss": float(np.mean(ls)) if ls else None,
                "mean_q": float(np.mean(qv)) if qv else None,
                "epsilon": eps, "wall_ms": wall,
            })
        log.episode_lost.append(env.sim.lost_demand())
        if progress is not None:
            progress(ep, step, ep_return["inventory"])
        ep += 1

    log.updates = dict(n_updates)
    log.buffer_sizes = {h: len(b) for h, b in buffers.items()}
    log.fallbacks = agent.fallbacks
    save_all("final")
    if out_dir is not None:
        log.write_csv(out_dir)
    return TrainResult(agent, log, checkpoints)


def load_agent(mode: str, checkpoint_paths: dict, network: StationNetwork, fleet: FleetConfig,
               heuristic: HeuristicConfig | None = None, targets=None) -> Agent:
    """Rebuild an agent from per-head checkpoint files, checking shapes against the system."""
    n = network.station_count
    dim = state_dim(n, fleet.vehicle_count)
    outputs = AgentConfig(mode=mode).head_outputs(n)
    heads = {}
    for h, k in outputs.items():
        if h not in checkpoint_paths:
            raise dqn.CheckpointError(f"missing checkpoint for head {h!r}")
        p, _ = dqn.load_checkpoint(checkpoint_paths[h])
        dqn.check_compatible(p, dim, k)
        heads[h] = p
    return Agent(mode, heads, heuristic, targets)
