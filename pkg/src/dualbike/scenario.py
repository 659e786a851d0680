"""Synthetic trip datasets: a gravity-model Poisson generator plus CSV persistence."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .core import StationNetwork

CSV_HEADER = ["day", "weather", "origin", "departure", "destination", "arrival"]
MIDDAY = 720.0


class DatasetError(ValueError):
    """Raised for malformed dataset files; the message names the offending line."""


class TripRecord(NamedTuple):
    origin: int
    departure: float
    destination: int
    arrival: float


@dataclass
class DemandScenario:
    day_index: int
    weather_factor: float
    trips: list = field(default_factory=list)

    def __len__(self):
        return len(self.trips)

    def as_arrays(self):
        """Trips as four parallel numpy arrays (origin, departure, destination, arrival)."""
        if not self.trips:
            return (np.zeros(0, np.int64), np.zeros(0), np.zeros(0, np.int64), np.zeros(0))
        o, dep, d, arr = zip(*self.trips)
        return (np.asarray(o, np.int64), np.asarray(dep, float),
                np.asarray(d, np.int64), np.asarray(arr, float))


@dataclass
class GeneratorConfig:
    """Demand generator settings.

    ``base_rate`` is the expected number of trips over ``service_window`` at
    multiplier 1 and median weather. Peak windows starting before noon send
    commute trips from the outskirts into the centers; later windows send
    them back out.
    """

    base_rate: float = 1500.0
    peak_windows: list = field(default_factory=lambda: [(420.0, 570.0, 3.0), (1020.0, 1170.0, 2.5)])
    commute_bias: float = 0.6
    weather_sigma: float = 0.25
    rider_speed: float = 0.25
    service_window: tuple = (0.0, 1440.0)

    def __post_init__(self):
        if not self.base_rate >= 0:
            raise ValueError("base_rate must be non-negative")
        if not 0.0 <= self.commute_bias <= 1.0:
            raise ValueError("commute_bias must lie in [0, 1]")
        if self.rider_speed <= 0:
            raise ValueError("rider_speed must be positive")
        if self.weather_sigma < 0:
            raise ValueError("weather_sigma must be non-negative")
        lo, hi = self.service_window
        if not hi > lo:
            raise ValueError("service_window must have positive length")
        for start, end, mult in self.peak_windows:
            if not end > start or mult <= 0:
                raise ValueError(f"bad peak window {(start, end, mult)}")

    def segments(self):
        """Piecewise-constant rate segments ``(start, end, multiplier, peak_index)``.

        Overlapping peak windows multiply; peak_index is the first window
        covering the segment, or -1.
        """
        lo, hi = self.service_window
        cuts = {lo, hi}
        for s, e, _ in self.peak_windows:
            cuts.update(x for x in (s, e) if lo < x < hi)
        cuts = sorted(cuts)
        out = []
        for a, b in zip(cuts[:-1], cuts[1:]):
            mid = 0.5 * (a + b)
            mult, peak = 1.0, -1
            for k, (s, e, m) in enumerate(self.peak_windows):
                if s <= mid < e:
                    mult *= m
                    if peak < 0:
                        peak = k
            out.append((a, b, mult, peak))
        return out

    def mean_peak_scaling(self) -> float:
        lo, hi = self.service_window
        return sum((b - a) * m for a, b, m, _ in self.segments()) / (hi - lo)

    def mean_weather(self) -> float:
        return math.exp(0.5 * self.weather_sigma ** 2)

    def expected_trips(self) -> float:
        return self.base_rate * self.mean_weather() * self.mean_peak_scaling()


def _od_probabilities(network: StationNetwork):
    attract = network.capacities.astype(float)
    w = np.outer(attract, attract) / (1.0 + network.distance)
    np.fill_diagonal(w, 0.0)
    general = w / w.sum()
    center = network.center_mask
    inbound = w * np.outer(~center, center)
    outbound = w * np.outer(center, ~center)
    if inbound.sum() > 0:
        inbound = inbound / inbound.sum()
        outbound = outbound / outbound.sum()
    else:
        inbound = outbound = general
    return general.ravel(), inbound.ravel(), outbound.ravel()


def generate_day(network: StationNetwork, config: GeneratorConfig, day_index: int,
                 seed: int) -> DemandScenario:
    """One day of trips drawn from its own ``(seed, day_index)`` stream."""
    n = network.station_count
    if n < 2:
        raise ValueError("demand generation needs at least 2 stations")
    rng = np.random.default_rng([int(seed), int(day_index)])
    weather = float(rng.lognormal(0.0, config.weather_sigma))
    general, inbound, outbound = _od_probabilities(network)
    lo, hi = config.service_window
    span = hi - lo
    deps, pairs = [], []
    for a, b, mult, peak in config.segments():
        lam = config.base_rate * weather * mult * (b - a) / span
        count = int(rng.poisson(lam)) if lam > 0 else 0
        if count == 0:
            continue
        deps.append(a + (b - a) * rng.random(count))
        if peak >= 0 and config.commute_bias > 0:
            commute = rng.random(count) < config.commute_bias
            directed = inbound if config.peak_windows[peak][0] < MIDDAY else outbound
            k = np.where(commute,
                         rng.choice(n * n, size=count, p=directed),
                         rng.choice(n * n, size=count, p=general))
        else:
            k = rng.choice(n * n, size=count, p=general)
        pairs.append(k)
    if not deps:
        return DemandScenario(int(day_index), weather, [])
    dep = np.round(np.concatenate(deps), 3)
    k = np.concatenate(pairs)
    origin, dest = np.divmod(k, n)
    travel = network.distance[origin, dest] / config.rider_speed
    arr = np.round(dep + travel, 3)
    arr = np.where(arr > dep, arr, dep + 0.001)
    arr = np.round(arr, 3)
    order = np.argsort(dep, kind="stable")
    trips = [TripRecord(int(origin[i]), float(dep[i]), int(dest[i]), float(arr[i])) for i in order]
    return DemandScenario(int(day_index), weather, trips)


def generate_days(network: StationNetwork, config: GeneratorConfig, day_count: int,
                  seed: int) -> list[DemandScenario]:
    if day_count < 1:
        raise ValueError("day_count must be at least 1")
    return [generate_day(network, config, d, seed) for d in range(day_count)]


def split_train_test(scenarios: Sequence[DemandScenario], train_count: int):
    if not 0 < train_count < len(scenarios):
        raise ValueError(f"train_count {train_count} must lie strictly between 0 and {len(scenarios)}")
    return list(scenarios[:train_count]), list(scenarios[train_count:])


def write_dataset(scenarios: Sequence[DemandScenario], path) -> None:
    """Write scenarios as CSV; a day without trips is kept as a row with empty trip fields."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for sc in scenarios:
            weather = repr(float(sc.weather_factor))
            if not sc.trips:
                w.writerow([sc.day_index, weather, "", "", "", ""])
            for t in sc.trips:
                w.writerow([sc.day_index, weather, t.origin, f"{t.departure:.3f}",
                            t.destination, f"{t.arrival:.3f}"])


def read_dataset(path) -> list[DemandScenario]:
    path = Path(path)
    out: list[DemandScenario] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise DatasetError(f"{path}:1: expected header {','.join(CSV_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                raise DatasetError(f"{path}:{lineno}: expected 6 fields, got {len(row)}")
            try:
                day, weather = int(row[0]), float(row[1])
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
            if not out or out[-1].day_index != day:
                if any(sc.day_index == day for sc in out):
                    raise DatasetError(f"{path}:{lineno}: rows of day {day} are not contiguous")
                out.append(DemandScenario(day, weather, []))
            if row[2:] == ["", "", "", ""]:
                continue
            try:
                o, dep, d, arr = int(row[2]), float(row[3]), int(row[4]), float(row[5])
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
            if not arr > dep:
                raise DatasetError(f"{path}:{lineno}: arrival {arr} not after departure {dep}")
            if o == d:
                raise DatasetError(f"{path}:{lineno}: origin equals destination ({o})")
            trips = out[-1].trips
            if trips and dep < trips[-1].departure:
                raise DatasetError(f"{path}:{lineno}: trips not sorted by departure")
            trips.append(TripRecord(o, dep, d, arr))
    return out
