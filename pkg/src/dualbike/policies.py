"""Scripted rules: heuristic routing, target-level inventory, and their helpers."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .core import StationNetwork
from .scenario import DemandScenario
from .simulator import Simulator


@dataclass(frozen=True)
class HeuristicConfig:
    """Routing heuristic weights; ``m_exponent=math.inf`` selects the greedy rule."""

    alpha: float = 0.8
    m_exponent: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.m_exponent >= 0:
            raise ValueError(f"m must be non-negative, got {self.m_exponent}")

    @property
    def greedy(self) -> bool:
        return math.isinf(self.m_exponent)


def routing_mask(destinations: np.ndarray, station_count: int) -> np.ndarray:
    mask = np.ones(station_count, dtype=bool)
    mask[destinations] = False
    return mask


def routing_scores(distance_row, inventory, capacities, load, vcap, mask,
                   config: HeuristicConfig) -> np.ndarray:
    """Routing probabilities from raw arrays (see :func:`routing_distribution`)."""
    m = 0.0 if config.greedy else float(config.m_exponent)
    return kernels.routing_distribution(np.asarray(distance_row, dtype=np.float64),
                                        np.asarray(inventory, dtype=np.int64),
                                        np.asarray(capacities, dtype=np.int64),
                                        int(load), int(vcap), np.asarray(mask, dtype=np.bool_),
                                        float(config.alpha), m, config.greedy)


def routing_distribution(sim: Simulator, vehicle: int, config: HeuristicConfig) -> np.ndarray:
    """Probability of each station being the vehicle's next stop.

    Mixes a normalized inverse-distance term (weight ``alpha``) with a
    term favouring stations whose fill complements the vehicle's load,
    both raised to the power ``m``. The vehicle's own station and other
    vehicles' destinations get zero mass. With ``m = inf`` all mass goes
    to the best blended score.
    """
    here = sim.destination[vehicle]
    mask = routing_mask(sim.destination, len(sim.capacities))
    return routing_scores(sim.distance[here], sim.inventory, sim.capacities,
                          sim.load[vehicle], sim.vcap[vehicle], mask, config)


def sample_routing(distribution, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from a station distribution."""
    p = np.asarray(distribution, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError("distribution has negative entries")
    total = p.sum()
    if total <= 0:
        raise ValueError("distribution has no mass")
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"distribution sums to {total}, not 1")
    cdf = np.cumsum(p)
    u = rng.random() * cdf[-1]
    idx = int(np.searchsorted(cdf, u, side="right"))
    idx = min(idx, len(p) - 1)
    while p[idx] == 0:  # guard against landing on a zero-width bin at the top
        idx -= 1
    return idx


def target_count(d: int, target: int, load: int, vcap: int, cap: int) -> int:
    l = d - target
    l = max(-load, min(vcap - load, l))
    # keep station within [0, cap]
    l = min(l, d)
    l = max(l, d - cap)
    return int(l)


def target_level_inventory(sim: Simulator, vehicle: int, targets: Sequence[int]) -> int:
    """Signed count restoring the current station toward its target level."""
    station = sim.destination[vehicle]
    return target_count(int(sim.inventory[station]), int(targets[station]), int(sim.load[vehicle]),
                        int(sim.vcap[vehicle]), int(sim.capacities[station]))


def compute_empirical_targets(train: Sequence[DemandScenario], network: StationNetwork,
                              window: tuple) -> np.ndarray:
    """Half capacity plus mean net outflow (rentals minus returns) over ``window``."""
    if len(train) < 1:
        raise ValueError("need at least one training day")
    lo, hi = window
    n = network.station_count
    net = np.zeros(n)
    for sc in train:
        for t in sc.trips:
            if lo <= t.departure < hi:
                net[t.origin] += 1
            if lo <= t.arrival < hi:
                net[t.destination] -= 1
    net /= len(train)
    caps = network.capacities
    tau = np.floor(caps / 2.0 + net + 0.5)
    return np.clip(tau, 0, caps).astype(np.int64)


def save_targets(targets, path) -> None:
    Path(path).write_text(json.dumps({"targets": [int(x) for x in targets]}))


def load_targets(path) -> np.ndarray:
    return np.asarray(json.loads(Path(path).read_text())["targets"], dtype=np.int64)
