"""MMDP view of the simulator: observations, feasible actions and reward streams.

Two reward streams run side by side, one per decision type. A stream's
window opens at a state of its type and closes at the next state of the
same type (from any vehicle); the reward is minus the demand lost inside
the window. Demand lost before a stream's first state is charged to its
first window, so each stream's rewards sum to minus the episode's lost
demand.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import EpisodeConfig, FleetConfig, StationNetwork
from .scenario import DemandScenario
from .simulator import (DecisionPoint, DecisionType, EpisodeEnd, InfeasibleActionError,
                        Simulator)


@dataclass(frozen=True)
class TransitionSample:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool
    policy_type: DecisionType
    next_mask: np.ndarray
    vehicle: int = -1


@dataclass
class PendingReward:
    policy_type: DecisionType
    vehicle: int
    state: np.ndarray
    action: int | None
    window_start_lost: int
    window_start_clock: float


def state_dim(station_count: int, vehicle_count: int) -> int:
    return 1 + station_count + vehicle_count * (2 * station_count + 4)


def observe(sim: Simulator, acting_vehicle: int) -> np.ndarray:
    """Flat state vector in [0, 1] with the acting vehicle's block first."""
    horizon = sim.horizon_end - sim.horizon_start
    until = (sim.next_decision - sim.clock) / horizon
    return kernels.encode_state((sim.clock - sim.horizon_start) / horizon, sim.inventory,
                                sim.capacities, sim.last_station, sim.destination, sim.load,
                                sim.vcap, until, sim.remaining_ops, sim.phase,
                                int(acting_vehicle))


def feasible_inventory_actions(sim: Simulator, vehicle: int) -> np.ndarray:
    """Signed bike counts that move the current station toward each fill level."""
    station = sim.destination[vehicle]
    return kernels.fill_level_counts(int(sim.inventory[station]), int(sim.capacities[station]),
                                     int(sim.load[vehicle]), int(sim.vcap[vehicle]),
                                     np.asarray(sim.episode.fill_levels))


def feasible_routing_actions(sim: Simulator, vehicle: int) -> np.ndarray:
    mask = np.ones(len(sim.capacities), dtype=bool)
    mask[sim.destination] = False  # own current station and every other vehicle's target
    return mask


class RebalancingEnv:
    """One episode of the rebalancing MMDP.

    ``joint_actions=True`` is the simultaneous-decision layout: inventory
    transitions carry ``fill_index * N + station`` actions and a 3N mask.
    ``per_vehicle_windows=True`` keys reward windows by vehicle instead of
    globally.
    """

    def __init__(self, network: StationNetwork, fleet: FleetConfig, episode: EpisodeConfig,
                 scenario: DemandScenario | None, seed: int = 0, *, joint_actions: bool = False,
                 per_vehicle_windows: bool = False, **sim_options):
        self.network = network
        self.fleet = fleet
        self.episode = episode
        self.scenario = scenario
        self.seed = seed
        self.joint_actions = joint_actions
        self.per_vehicle_windows = per_vehicle_windows
        self.sim_options = sim_options
        self.n_stations = network.station_count
        self.n_vehicles = fleet.vehicle_count
        self.state_dim = state_dim(self.n_stations, self.n_vehicles)
        self.sim: Simulator | None = None
        self.decision: DecisionPoint | EpisodeEnd | None = None

    # -- observation helpers --------------------------------------------

    def observe(self, vehicle: int | None = None) -> np.ndarray:
        if vehicle is None:
            vehicle = self.decision.vehicle
        return observe(self.sim, vehicle)

    def inventory_options(self, vehicle: int | None = None) -> np.ndarray:
        return feasible_inventory_actions(self.sim, self._vehicle(vehicle))

    def routing_mask(self, vehicle: int | None = None) -> np.ndarray:
        return feasible_routing_actions(self.sim, self._vehicle(vehicle))

    def action_mask(self, decision_type: DecisionType, vehicle: int | None = None) -> np.ndarray:
        if decision_type == DecisionType.ROUTING:
            return self.routing_mask(vehicle)
        if self.joint_actions:
            return np.tile(self.routing_mask(vehicle), 3)
        return np.ones(3, dtype=bool)

    def _vehicle(self, vehicle):
        return self.decision.vehicle if vehicle is None else int(vehicle)

    @property
    def lost_total(self) -> int:
        return self.sim.lost_total

    # -- episode protocol ------------------------------------------------

    def reset(self) -> DecisionPoint | EpisodeEnd:
        self.sim = Simulator(self.network, self.fleet, self.episode, self.scenario, self.seed,
                             **self.sim_options)
        self._open: dict = {}
        self._marks: dict = {}
        self._emitted: list = []
        self.decision = self.sim.advance()
        self._on_decision()
        return self.decision

    def _key(self, policy_type, vehicle):
        return (policy_type, vehicle) if self.per_vehicle_windows else (policy_type,)

    def _close(self, rec: PendingReward, next_state, next_mask, terminal):
        mark = self._marks.get(self._key(rec.policy_type, rec.vehicle), 0)
        lost = self.sim.lost_total
        self._marks[self._key(rec.policy_type, rec.vehicle)] = lost
        if rec.action is None:
            raise RuntimeError("reward window closed before an action was recorded")
        self._emitted.append(TransitionSample(rec.state, rec.action, -float(lost - mark),
                                              next_state, terminal, rec.policy_type,
                                              next_mask, rec.vehicle))

    def _on_decision(self):
        dp = self.decision
        if isinstance(dp, EpisodeEnd):
            for rec in list(self._open.values()):
                final = observe(self.sim, rec.vehicle)
                size = 3 * self.n_stations if (self.joint_actions and rec.policy_type == 0) else (
                    3 if rec.policy_type == DecisionType.INVENTORY else self.n_stations)
                self._close(rec, final, np.ones(size, dtype=bool), True)
            self._open.clear()
            return
        key = self._key(dp.decision_type, dp.vehicle)
        state = observe(self.sim, dp.vehicle)
        prev = self._open.pop(key, None)
        if prev is not None:
            self._close(prev, state, self.action_mask(dp.decision_type, dp.vehicle), False)
        self._open[key] = PendingReward(dp.decision_type, dp.vehicle, state, None,
                                        self._marks.get(key, 0), dp.clock)

    def _check_action(self, action_index: int):
        dp = self.decision
        if not isinstance(dp, DecisionPoint):
            raise RuntimeError("episode has ended; call reset()")
        if dp.decision_type == DecisionType.INVENTORY:
            if not 0 <= action_index < 3:
                raise InfeasibleActionError(f"fill-level index {action_index} outside 0..2")
        else:
            mask = self.routing_mask()
            if not (0 <= action_index < len(mask) and mask[action_index]):
                raise InfeasibleActionError(f"station {action_index} is masked for vehicle {dp.vehicle}")

    def step(self, action_index: int, *, count: int | None = None, record_as: int | None = None):
        """Apply an action at the current decision point and advance.

        For inventory decisions ``action_index`` selects a fill level;
        passing ``count`` instead applies that signed bike count directly
        (scripted rules). ``record_as`` overrides the action stored in the
        emitted transition. Returns ``(transitions, next decision)`` where
        the next decision is ``None`` at the end of the episode.
        """
        dp = self.decision
        if not isinstance(dp, DecisionPoint):
            raise RuntimeError("episode has ended; call reset()")
        if count is None or dp.decision_type != DecisionType.INVENTORY:
            if count is not None:
                raise ValueError("count applies only to inventory decisions")
            self._check_action(int(action_index))
        key = self._key(dp.decision_type, dp.vehicle)
        if dp.decision_type == DecisionType.INVENTORY:
            l = int(self.inventory_options()[action_index]) if count is None else int(count)
            self.sim.check_inventory_action(dp.vehicle, l)
            self.sim.apply_inventory_action(dp.vehicle, l)
        else:
            self.sim.apply_routing_action(dp.vehicle, int(action_index))
        self._open[key].action = int(action_index if record_as is None else record_as)
        self.decision = self.sim.advance()
        self._on_decision()
        out, self._emitted = self._emitted, []
        nxt = self.decision if isinstance(self.decision, DecisionPoint) else None
        return out, nxt

