"""Test-set evaluation: lost demand per episode, aggregated as mean and population std."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import EpisodeConfig, FleetConfig, StationNetwork
from .env import RebalancingEnv
from .scenario import DemandScenario
from .simulator import DecisionPoint, Simulator
from .trainer import STREAM_EVALUATION, Agent

REPORT_COLUMNS = ["policy", "epsilon", "day", "rep", "lost_rentals", "lost_returns", "total"]
STD_NOTE = "std is the population standard deviation over episode totals"


@dataclass
class EvalReport:
    policy: str
    epsilon: float
    seed: int
    config_digest: str = ""
    rows: list = field(default_factory=list)  # (day, rep, lost_rentals, lost_returns)

    @property
    def totals(self) -> np.ndarray:
        return np.array([r[2] + r[3] for r in self.rows], dtype=float)

    @property
    def mean(self) -> float:
        return float(self.totals.mean()) if self.rows else float("nan")

    @property
    def std(self) -> float:
        return float(self.totals.std(ddof=0)) if self.rows else float("nan")

    def summary(self) -> dict:
        t = self.totals
        return {"policy": self.policy, "epsilon": self.epsilon, "seed": self.seed,
                "config_digest": self.config_digest, "episodes": len(self.rows),
                "mean_lost": self.mean, "std_lost": self.std,
                "mean_lost_rentals": float(np.mean([r[2] for r in self.rows])) if self.rows else None,
                "mean_lost_returns": float(np.mean([r[3] for r in self.rows])) if self.rows else None,
                "min_lost": float(t.min()) if self.rows else None,
                "max_lost": float(t.max()) if self.rows else None,
                "note": STD_NOTE}

    def write(self, out_dir, stem: str | None = None) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = stem or f"eval_{self.policy.lower()}_eps{self.epsilon:g}"
        csv_path = out_dir / f"{stem}.csv"
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for day, rep, lr, lt in self.rows:
                w.writerow([self.policy, repr(float(self.epsilon)), day, rep, lr, lt, lr + lt])
        json_path = out_dir / f"{stem}.json"
        json_path.write_text(json.dumps(self.summary(), indent=1, sort_keys=True))
        return csv_path, json_path


def config_digest(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(json.dumps(p, sort_keys=True, default=str).encode())
    return h.hexdigest()[:16]


def default_repetitions(epsilon: float) -> int:
    return 1 if epsilon == 0 else 5


def run_episode(agent: Agent | None, network: StationNetwork, fleet: FleetConfig,
                episode: EpisodeConfig, day: DemandScenario, epsilon: float,
                rng: np.random.Generator) -> tuple[int, int]:
    """Play one episode without learning; ``agent=None`` or mode NONE leaves vehicles parked."""
    if agent is None or not agent.dispatches:
        sim = Simulator(network, fleet, episode, day, dispatch_vehicles=False)
        sim.advance()
        return sim.lost_demand()
    env = RebalancingEnv(network, fleet, episode, day, joint_actions=(agent.mode == "RSIR"))
    agent.begin_episode()
    dp = env.reset()
    dp = dp if isinstance(dp, DecisionPoint) else None
    while dp is not None:
        _, dp = agent.act(env, dp, epsilon, rng)
    return env.sim.lost_demand()


def evaluate(agent: Agent | None, test_days: Sequence[DemandScenario], network: StationNetwork,
             fleet: FleetConfig, episode: EpisodeConfig, epsilon: float = 0.0,
             repetitions: int | None = None, seed: int = 0, policy_id: str | None = None,
             digest: str = "") -> EvalReport:
    """Run every test day (``repetitions`` times each) with no learning."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    reps = default_repetitions(epsilon) if repetitions is None else int(repetitions)
    policy = policy_id or (agent.mode if agent is not None else "NONE")
    report = EvalReport(policy, float(epsilon), int(seed), digest)
    for day in test_days:
        for rep in range(reps):
            rng = np.random.default_rng([int(seed), STREAM_EVALUATION, day.day_index, rep])
            lr, lt = run_episode(agent, network, fleet, episode, day, epsilon, rng)
            report.rows.append((day.day_index, rep, int(lr), int(lt)))
    return report
