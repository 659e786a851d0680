"""Continuous-time, first-arrive-first-serve bike-share simulator.

Events are processed in ``(time, kind, sequence)`` order; demand events
sort before vehicle events at equal timestamps. The simulator never asks
for decisions itself: :meth:`Simulator.advance` runs until a vehicle needs
an inventory or routing decision and hands back a :class:`DecisionPoint`;
the caller applies an action and advances again.
"""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from . import kernels
from .core import EpisodeConfig, FleetConfig, StationNetwork, validate
from .scenario import DemandScenario


class SimulationError(RuntimeError):
    """Internal invariant breach or misuse of the decision protocol."""


class InfeasibleActionError(ValueError):
    """An action would violate a station, vehicle or routing constraint."""


class EventKind(IntEnum):
    # value doubles as the tie-break priority at equal timestamps
    RETURN_ARRIVAL = 0
    RENTAL_REQUEST = 1
    TRANSFER = 2
    VEHICLE_ARRIVAL = 3
    OPERATION_COMPLETE = 4


class DecisionType(IntEnum):
    INVENTORY = 0
    ROUTING = 1


@dataclass(frozen=True)
class SystemState:
    """Snapshot of the observable system at a decision instant."""

    clock: float
    station_inventory: np.ndarray
    last_station: np.ndarray      # b
    destination: np.ndarray       # g
    load: np.ndarray              # p
    next_decision: np.ndarray     # m
    remaining_ops: np.ndarray     # o
    phase: np.ndarray             # i: 0 inventory, 1 routing


@dataclass(frozen=True)
class DecisionPoint:
    vehicle: int
    decision_type: DecisionType
    state: SystemState
    clock: float


@dataclass(frozen=True)
class EpisodeEnd:
    clock: float
    lost_rentals: int
    lost_returns: int

    @property
    def lost_total(self) -> int:
        return self.lost_rentals + self.lost_returns


class Simulator:
    """Mutable episode state plus the event loop.

    ``atomic_transfer`` moves all bikes of an operation at its completion
    instead of one bike per handling interval. ``dispatch_vehicles=False``
    leaves the fleet parked for the whole episode (no-rebalancing run).
    """

    def __init__(self, network: StationNetwork, fleet: FleetConfig, episode: EpisodeConfig,
                 scenario: DemandScenario | None, seed: int = 0, *, atomic_transfer: bool = False,
                 dispatch_vehicles: bool = True, check_invariants: bool = False,
                 trace=None, event_hook=None):
        problems = validate(network, fleet, episode)
        if problems:
            raise ValueError("invalid episode inputs: " + "; ".join(problems))
        self.network = network
        self.fleet = fleet
        self.episode = episode
        self.atomic_transfer = atomic_transfer
        self.check_invariants = check_invariants
        self.trace = trace
        self.event_hook = event_hook
        self.rng = np.random.default_rng(seed)

        self.capacities = network.capacities
        self.distance = network.distance
        self.transit_time = network.transit_time
        self.vcap = fleet.capacities
        self.beta = fleet.handling_time
        self.horizon_start = episode.horizon_start
        self.horizon_end = episode.horizon_end

        self.clock = self.horizon_start
        self.inventory = np.array(episode.initial_station_inventory, dtype=np.int64)
        v = fleet.vehicle_count
        self.last_station = np.array(fleet.initial_station, dtype=np.int64)
        self.destination = np.array(fleet.initial_station, dtype=np.int64)
        self.load = np.array(fleet.initial_inventory, dtype=np.int64)
        self.next_decision = np.full(v, self.horizon_start)
        self.remaining_ops = np.zeros(v, dtype=np.int64)
        self.phase = np.zeros(v, dtype=np.int64)
        self.lost_rentals = 0
        self.lost_returns = 0
        self.in_transit = 0
        self.transfer_shortfall = 0
        self.ended = False
        self._pending: tuple | None = None
        self._events: list = []
        self._seq = 0

        self.trips = list(scenario.trips) if scenario is not None else []
        for idx, trip in enumerate(self.trips):
            if self.horizon_start <= trip.departure < self.horizon_end:
                self._schedule(trip.departure, EventKind.RENTAL_REQUEST, idx)
        if dispatch_vehicles:
            for k in range(v):
                self._schedule(self.horizon_start, EventKind.VEHICLE_ARRIVAL, k)
        self.total_bikes = self._bike_count()

    # -- bookkeeping -----------------------------------------------------

    def _schedule(self, time, kind, payload):
        heapq.heappush(self._events, (float(time), int(kind), self._seq, payload))
        self._seq += 1

    def _bike_count(self) -> int:
        return int(self.inventory.sum() + self.load.sum() + self.in_transit)

    def pending_events(self) -> list:
        """Queued events in processing order, as ``(time, kind, sequence, payload)``."""
        return sorted(self._events)

    def dump(self) -> dict:
        return {
            "clock": self.clock,
            "station_inventory": self.inventory.tolist(),
            "last_station": self.last_station.tolist(),
            "destination": self.destination.tolist(),
            "load": self.load.tolist(),
            "next_decision": self.next_decision.tolist(),
            "remaining_ops": self.remaining_ops.tolist(),
            "phase": self.phase.tolist(),
            "lost_rentals": self.lost_rentals,
            "lost_returns": self.lost_returns,
            "in_transit": self.in_transit,
            "total_bikes": self.total_bikes,
        }

    def _verify(self):
        bad = []
        if self._bike_count() != self.total_bikes:
            bad.append(f"bike count {self._bike_count()} != {self.total_bikes}")
        if np.any(self.inventory < 0) or np.any(self.inventory > self.capacities):
            bad.append("station inventory out of bounds")
        if np.any(self.load < 0) or np.any(self.load > self.vcap):
            bad.append("vehicle load out of bounds")
        if bad:
            raise SimulationError("; ".join(bad) + " | state: " + json.dumps(self.dump()))

    def snapshot(self) -> SystemState:
        return SystemState(self.clock, self.inventory.copy(), self.last_station.copy(),
                           self.destination.copy(), self.load.copy(), self.next_decision.copy(),
                           self.remaining_ops.copy(), self.phase.copy())

    def lost_demand(self) -> tuple[int, int]:
        return self.lost_rentals, self.lost_returns

    @property
    def lost_total(self) -> int:
        return self.lost_rentals + self.lost_returns

    @property
    def pending_decision(self):
        return self._pending

    # -- event loop ------------------------------------------------------

    def advance(self) -> DecisionPoint | EpisodeEnd:
        """Process events until the next decision point or the end of the horizon."""
        if self.ended:
            raise SimulationError("episode already ended")
        if self._pending is not None:
            raise SimulationError(f"decision pending for vehicle {self._pending[0]}")
        events = self._events
        while events and events[0][0] < self.horizon_end:
            time, kind, _, payload = heapq.heappop(events)
            self.clock = time
            decision = self._process(kind, payload)
            if self.check_invariants:
                self._verify()
            if self.trace is not None:
                self._write_trace(kind, payload)
            if self.event_hook is not None:
                self.event_hook(self, kind, payload)
            if decision is not None:
                return decision
        self.clock = self.horizon_end
        self.ended = True
        return EpisodeEnd(self.clock, self.lost_rentals, self.lost_returns)

    def _process(self, kind, payload):
        if kind == EventKind.RENTAL_REQUEST:
            trip = self.trips[payload]
            if self.inventory[trip.origin] >= 1:
                self.inventory[trip.origin] -= 1
                self.in_transit += 1
                self._schedule(trip.arrival, EventKind.RETURN_ARRIVAL, payload)
            else:
                self.lost_rentals += 1
        elif kind == EventKind.RETURN_ARRIVAL:
            station = self.trips[payload].destination
            if self.inventory[station] < self.capacities[station]:
                self.inventory[station] += 1
            else:
                self.lost_returns += 1
                alt = kernels.nearest_free_dock(self.distance[station], self.inventory,
                                                self.capacities)
                if alt < 0:
                    raise SimulationError("no free dock anywhere for a redirected return | state: "
                                          + json.dumps(self.dump()))
                self.inventory[alt] += 1
            self.in_transit -= 1
        elif kind == EventKind.TRANSFER:
            vehicle, count = payload
            self._transfer(vehicle, count)
        elif kind == EventKind.VEHICLE_ARRIVAL:
            v = payload
            self.phase[v] = 0
            self.next_decision[v] = self.clock
            self._pending = (v, DecisionType.INVENTORY)
            return DecisionPoint(v, DecisionType.INVENTORY, self.snapshot(), self.clock)
        elif kind == EventKind.OPERATION_COMPLETE:
            v = payload
            self.phase[v] = 1
            self.remaining_ops[v] = 0
            self.next_decision[v] = self.clock
            self._pending = (v, DecisionType.ROUTING)
            return DecisionPoint(v, DecisionType.ROUTING, self.snapshot(), self.clock)
        return None

    def _transfer(self, v, count):
        station = self.destination[v]
        if count > 0:
            moved = min(count, self.inventory[station], self.vcap[v] - self.load[v])
        else:
            moved = -min(-count, self.load[v], self.capacities[station] - self.inventory[station])
        self.inventory[station] -= moved
        self.load[v] += moved
        self.transfer_shortfall += abs(count) - abs(moved)
        self.remaining_ops[v] = max(0, self.remaining_ops[v] - abs(count))

    def _write_trace(self, kind, payload):
        if isinstance(payload, tuple):
            payload = [int(x) for x in payload]
        else:
            payload = int(payload)
        rec = {"time": self.clock, "kind": EventKind(kind).name, "payload": payload,
               "lost_rentals": self.lost_rentals, "lost_returns": self.lost_returns}
        self.trace.write(json.dumps(rec) + "\n")

    # -- actions ---------------------------------------------------------

    def _expect(self, vehicle, decision_type):
        if self._pending != (vehicle, decision_type):
            raise SimulationError(f"vehicle {vehicle} is not awaiting a {decision_type.name} "
                                  f"decision (pending: {self._pending})")

    def check_inventory_action(self, vehicle: int, count: int) -> None:
        station = self.destination[vehicle]
        d, cap = self.inventory[station], self.capacities[station]
        p, vcap = self.load[vehicle], self.vcap[vehicle]
        if count > 0:
            if count > vcap - p:
                raise InfeasibleActionError(f"pick-up {count} exceeds free vehicle space {vcap - p}")
            if count > d:
                raise InfeasibleActionError(f"pick-up {count} exceeds station {station} stock {d}")
        elif count < 0:
            if -count > p:
                raise InfeasibleActionError(f"drop-off {-count} exceeds vehicle load {p}")
            if -count > cap - d:
                raise InfeasibleActionError(f"drop-off {-count} exceeds free docks {cap - d} "
                                            f"at station {station}")

    def apply_inventory_action(self, vehicle: int, count: int) -> None:
        """Start loading (count > 0) or unloading (count < 0) bikes at the current station."""
        self._expect(vehicle, DecisionType.INVENTORY)
        count = int(count)
        self.check_inventory_action(vehicle, count)
        n = abs(count)
        done = self.clock + self.beta * n
        self.remaining_ops[vehicle] = n
        self.next_decision[vehicle] = done
        if n:
            if self.atomic_transfer:
                self._schedule(done, EventKind.TRANSFER, (vehicle, count))
            else:
                step = 1 if count > 0 else -1
                for k in range(1, n + 1):
                    self._schedule(self.clock + self.beta * k, EventKind.TRANSFER, (vehicle, step))
        self._schedule(done, EventKind.OPERATION_COMPLETE, vehicle)
        self._pending = None

    def routing_conflict(self, vehicle: int, station: int) -> int | None:
        """Index of another vehicle already bound for ``station``, if any."""
        for k in range(len(self.destination)):
            if k != vehicle and self.destination[k] == station:
                return k
        return None

    def apply_routing_action(self, vehicle: int, station: int) -> None:
        """Send the vehicle to ``station``; it arrives after the transit time."""
        self._expect(vehicle, DecisionType.ROUTING)
        station = int(station)
        here = int(self.destination[vehicle])
        if not 0 <= station < len(self.capacities):
            raise InfeasibleActionError(f"station {station} is not a valid index")
        if station == here:
            raise InfeasibleActionError(f"vehicle {vehicle} is already at station {station}")
        other = self.routing_conflict(vehicle, station)
        if other is not None:
            raise InfeasibleActionError(f"station {station} is already the destination of vehicle {other}")
        self.last_station[vehicle] = here
        self.destination[vehicle] = station
        self.next_decision[vehicle] = self.clock + self.transit_time[here, station]
        self._schedule(self.next_decision[vehicle], EventKind.VEHICLE_ARRIVAL, vehicle)
        self._pending = None


def init_episode(network: StationNetwork, fleet: FleetConfig, episode: EpisodeConfig,
                 scenario_day: DemandScenario | None, seed: int = 0, **options) -> Simulator:
    return Simulator(network, fleet, episode, scenario_day, seed, **options)


def advance_to_next_decision(sim: Simulator) -> DecisionPoint | EpisodeEnd:
    return sim.advance()


def lost_demand(sim: Simulator) -> tuple[int, int]:
    return sim.lost_demand()
