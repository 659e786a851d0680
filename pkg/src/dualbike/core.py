"""Domain types shared by the simulator, environment and trainer.

All arrays held by these types are made read-only at construction so the
objects can be shared freely between episodes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

SCHEMA_VERSION = 1

DEFAULT_SPEED = 0.5  # km per minute
DEFAULT_HANDLING_TIME = 0.5  # minutes per bike
DEFAULT_FILL_LEVELS = (0.2, 0.5, 0.8)

AREA_SIZE = 10.0  # km, side of the square service area
CENTER_RADIUS = 1.5  # km
MIN_SEPARATION = 0.05  # km

LAYOUTS = {
    # layout -> (center positions, center stations per center)
    "GT1": (((5.0, 5.0),), (9,)),
    "GT2": (((3.0, 3.5), (7.0, 6.5)), (6, 6)),
}


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class StationNetwork:
    """Stations with dock capacities, planar positions and travel matrices.

    ``cluster`` marks which city center a station belongs to (-1 for the
    outskirts); it drives the commute pattern of the demand generator.
    """

    capacities: np.ndarray
    coordinates: np.ndarray
    distance: np.ndarray
    transit_time: np.ndarray
    cluster: np.ndarray = None

    def __post_init__(self):
        n = len(self.capacities)
        object.__setattr__(self, "capacities", _frozen(self.capacities, np.int64))
        object.__setattr__(self, "coordinates", _frozen(self.coordinates, np.float64).reshape(n, 2))
        object.__setattr__(self, "distance", _frozen(self.distance, np.float64))
        object.__setattr__(self, "transit_time", _frozen(self.transit_time, np.float64))
        cluster = np.full(n, -1) if self.cluster is None else self.cluster
        object.__setattr__(self, "cluster", _frozen(cluster, np.int64))

    @property
    def station_count(self) -> int:
        return int(len(self.capacities))

    @property
    def center_mask(self) -> np.ndarray:
        return self.cluster >= 0

    def to_dict(self) -> dict:
        return {
            "station_count": self.station_count,
            "capacities": self.capacities.tolist(),
            "coordinates": self.coordinates.tolist(),
            "distance": self.distance.tolist(),
            "transit_time": self.transit_time.tolist(),
            "cluster": self.cluster.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StationNetwork":
        net = cls(
            capacities=data["capacities"],
            coordinates=data["coordinates"],
            distance=data["distance"],
            transit_time=data["transit_time"],
            cluster=data.get("cluster"),
        )
        if net.station_count != int(data.get("station_count", net.station_count)):
            raise ValueError("station_count does not match capacities length")
        return net

    def __eq__(self, other):
        if not isinstance(other, StationNetwork):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("capacities", "coordinates", "distance", "transit_time", "cluster")
        )


@dataclass(frozen=True, eq=False)
class FleetConfig:
    capacities: np.ndarray
    initial_inventory: np.ndarray
    initial_station: np.ndarray
    handling_time: float = DEFAULT_HANDLING_TIME

    def __post_init__(self):
        object.__setattr__(self, "capacities", _frozen(self.capacities, np.int64))
        object.__setattr__(self, "initial_inventory", _frozen(self.initial_inventory, np.int64))
        object.__setattr__(self, "initial_station", _frozen(self.initial_station, np.int64))
        object.__setattr__(self, "handling_time", float(self.handling_time))

    @property
    def vehicle_count(self) -> int:
        return int(len(self.capacities))

    @classmethod
    def uniform(cls, vehicle_count: int, capacity: int, stations: Sequence[int],
                initial_load: int = 0, handling_time: float = DEFAULT_HANDLING_TIME) -> "FleetConfig":
        return cls(
            capacities=[capacity] * vehicle_count,
            initial_inventory=[initial_load] * vehicle_count,
            initial_station=list(stations)[:vehicle_count],
            handling_time=handling_time,
        )

    def to_dict(self) -> dict:
        return {
            "vehicle_count": self.vehicle_count,
            "capacities": self.capacities.tolist(),
            "initial_inventory": self.initial_inventory.tolist(),
            "initial_station": self.initial_station.tolist(),
            "handling_time": self.handling_time,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FleetConfig":
        return cls(
            capacities=data["capacities"],
            initial_inventory=data["initial_inventory"],
            initial_station=data["initial_station"],
            handling_time=data.get("handling_time", DEFAULT_HANDLING_TIME),
        )

    def __eq__(self, other):
        if not isinstance(other, FleetConfig):
            return NotImplemented
        return (self.handling_time == other.handling_time and all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("capacities", "initial_inventory", "initial_station")))


@dataclass(frozen=True, eq=False)
class EpisodeConfig:
    horizon_start: float
    horizon_end: float
    initial_station_inventory: np.ndarray
    fill_levels: tuple = DEFAULT_FILL_LEVELS

    def __post_init__(self):
        object.__setattr__(self, "horizon_start", float(self.horizon_start))
        object.__setattr__(self, "horizon_end", float(self.horizon_end))
        object.__setattr__(self, "initial_station_inventory",
                           _frozen(self.initial_station_inventory, np.int64))
        object.__setattr__(self, "fill_levels", tuple(float(x) for x in self.fill_levels))

    @property
    def horizon(self) -> float:
        return self.horizon_end - self.horizon_start

    @classmethod
    def proportional(cls, network: StationNetwork, fraction: float = 0.5,
                     horizon_start: float = 420.0, horizon_end: float = 660.0,
                     fill_levels=DEFAULT_FILL_LEVELS) -> "EpisodeConfig":
        """Fill every station to ``fraction`` of its docks (rounded half up)."""
        d0 = np.floor(network.capacities * fraction + 0.5).astype(np.int64)
        return cls(horizon_start, horizon_end, d0, fill_levels)

    def to_dict(self) -> dict:
        return {
            "horizon_start": self.horizon_start,
            "horizon_end": self.horizon_end,
            "initial_station_inventory": self.initial_station_inventory.tolist(),
            "fill_levels": list(self.fill_levels),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EpisodeConfig":
        return cls(
            horizon_start=data["horizon_start"],
            horizon_end=data["horizon_end"],
            initial_station_inventory=data["initial_station_inventory"],
            fill_levels=tuple(data.get("fill_levels", DEFAULT_FILL_LEVELS)),
        )


def _place_in_disc(rng, center, radius, count):
    r = radius * np.sqrt(rng.random(count))
    theta = 2.0 * np.pi * rng.random(count)
    return np.column_stack([center[0] + r * np.cos(theta), center[1] + r * np.sin(theta)])


def build_network(station_count: int, centers: Sequence[tuple], center_counts: Sequence[int],
                  seed: int, center_capacity: int = 40, outer_capacity: int = 20,
                  speed: float = DEFAULT_SPEED, area: float = AREA_SIZE,
                  center_radius: float = CENTER_RADIUS) -> StationNetwork:
    """Random planar network with clustered center stations.

    Center stations are drawn uniformly in a disc around each center; the
    remaining stations are drawn uniformly in the square, outside all discs.
    Distances are Euclidean and transit times are ``distance / speed``.
    """
    if station_count < 1:
        raise ValueError("station_count must be positive")
    if sum(center_counts) > station_count:
        raise ValueError("more center stations than stations")
    rng = np.random.default_rng(seed)
    coords, cluster = [], []

    def far_enough(pt):
        return all(np.hypot(*(pt - q)) >= MIN_SEPARATION for q in coords)

    for ci, (center, count) in enumerate(zip(centers, center_counts)):
        placed = 0
        while placed < count:
            pt = _place_in_disc(rng, center, center_radius, 1)[0]
            if far_enough(pt):
                coords.append(pt)
                cluster.append(ci)
                placed += 1
    while len(coords) < station_count:
        pt = rng.random(2) * area
        inside = any(np.hypot(*(pt - np.asarray(c))) < center_radius for c in centers)
        if not inside and far_enough(pt):
            coords.append(pt)
            cluster.append(-1)

    coords = np.asarray(coords)
    cluster = np.asarray(cluster)
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=-1))
    dist = 0.5 * (dist + dist.T)
    np.fill_diagonal(dist, 0.0)
    caps = np.where(cluster >= 0, center_capacity, outer_capacity)
    return StationNetwork(caps, coords, dist, dist / speed, cluster)


def build_grid_network(layout: str, seed: int, speed: float = DEFAULT_SPEED) -> StationNetwork:
    """The 60-station GT1 (one center, 9 stations) or GT2 (two centers, 12 stations) layout."""
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}; expected one of {sorted(LAYOUTS)}")
    centers, counts = LAYOUTS[layout]
    return build_network(60, centers, counts, seed, center_capacity=40,
                         outer_capacity=20, speed=speed)


def validate(network: StationNetwork, fleet: FleetConfig | None = None,
             episode: EpisodeConfig | None = None) -> list[str]:
    """Return every invariant violation found; an empty list means valid."""
    out = []
    n = network.station_count
    if n < 1:
        out.append("network: station_count must be positive")
    for name in ("distance", "transit_time"):
        m = getattr(network, name)
        if m.shape != (n, n):
            out.append(f"network: {name} has shape {m.shape}, expected {(n, n)}")
            continue
        if not np.array_equal(m, m.T):
            i, j = np.argwhere(m != m.T)[0]
            out.append(f"network: {name} not symmetric at ({i}, {j})")
        if np.any(np.diag(m) != 0):
            i = int(np.flatnonzero(np.diag(m))[0])
            out.append(f"network: {name} diagonal non-zero at station {i}")
    if network.distance.shape == (n, n) and n <= 400:
        d = network.distance
        slack = d[:, None, :] - (d[:, :, None] + d[None, :, :])
        # slack[i, k, j] = D[i, j] - D[i, k] - D[k, j]
        if np.any(slack > 1e-9):
            i, k, j = np.argwhere(slack > 1e-9)[0]
            out.append(f"network: triangle inequality violated for ({i}, {k}, {j})")
    for s in np.flatnonzero(network.capacities < 1):
        out.append(f"network: station {s} capacity {network.capacities[s]} < 1")

    if fleet is not None:
        v = fleet.vehicle_count
        if v < 1:
            out.append("fleet: vehicle_count must be positive")
        for name in ("initial_inventory", "initial_station"):
            if len(getattr(fleet, name)) != v:
                out.append(f"fleet: {name} length {len(getattr(fleet, name))} != {v}")
        for k in range(min(v, len(fleet.initial_inventory))):
            p, cap = fleet.initial_inventory[k], fleet.capacities[k]
            if cap < 1:
                out.append(f"fleet: vehicle {k} capacity {cap} < 1")
            if not 0 <= p <= cap:
                out.append(f"fleet: vehicle {k} initial inventory {p} outside [0, {cap}]")
        seen = {}
        for k, z in enumerate(fleet.initial_station):
            if not 0 <= z < n:
                out.append(f"fleet: vehicle {k} initial station {z} is not a valid index")
            elif z in seen:
                out.append(f"fleet: vehicles {seen[z]} and {k} share initial station {z}")
            else:
                seen[z] = k
        if fleet.handling_time < 0:
            out.append("fleet: handling_time must be non-negative")

    if episode is not None:
        if not episode.horizon_end > episode.horizon_start:
            out.append("episode: horizon_end must exceed horizon_start")
        d0 = episode.initial_station_inventory
        if len(d0) != n:
            out.append(f"episode: initial_station_inventory length {len(d0)} != {n}")
        else:
            for s in range(n):
                if not 0 <= d0[s] <= network.capacities[s]:
                    out.append(f"episode: station {s} initial inventory {d0[s]} "
                               f"outside [0, {network.capacities[s]}]")
        mu = episode.fill_levels
        if len(mu) != 3:
            out.append(f"episode: expected exactly 3 fill levels, got {len(mu)}")
        elif not (0.0 <= mu[0] < mu[1] < mu[2] <= 1.0):
            out.append(f"episode: fill levels {mu} must be strictly increasing in [0, 1]")
    return out


def save_system(path, network: StationNetwork, fleet: FleetConfig | None = None,
                episode: EpisodeConfig | None = None, targets=None) -> None:
    doc = {"schema_version": SCHEMA_VERSION, "network": network.to_dict()}
    if fleet is not None:
        doc["fleet"] = fleet.to_dict()
    if episode is not None:
        doc["episode"] = episode.to_dict()
    if targets is not None:
        doc["targets"] = [int(x) for x in targets]
    Path(path).write_text(json.dumps(doc, indent=1))


def load_system(path) -> dict:
    """Load a system document; returns a dict with the parsed objects present."""
    doc = json.loads(Path(path).read_text())
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported schema_version {version!r}")
    out = {"network": StationNetwork.from_dict(doc["network"])}
    if "fleet" in doc:
        out["fleet"] = FleetConfig.from_dict(doc["fleet"])
    if "episode" in doc:
        out["episode"] = EpisodeConfig.from_dict(doc["episode"])
    if "targets" in doc:
        out["targets"] = np.asarray(doc["targets"], dtype=np.int64)
    return out
