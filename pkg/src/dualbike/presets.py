"""Ready-made systems: the 60-station GT1/GT2 layouts and a 10-station toy."""
from __future__ import annotations

from dataclasses import dataclass

from .core import (EpisodeConfig, FleetConfig, StationNetwork, build_grid_network,
                   build_network)
from .scenario import GeneratorConfig

HORIZON = (420.0, 660.0)  # 7 a.m. to 11 a.m.


@dataclass
class System:
    network: StationNetwork
    fleet: FleetConfig
    episode: EpisodeConfig
    generator: GeneratorConfig


def _spread_stations(network: StationNetwork, count: int) -> list:
    # outskirts first, lowest indices; keeps initial stations distinct
    outer = [i for i in range(network.station_count) if network.cluster[i] < 0]
    inner = [i for i in range(network.station_count) if network.cluster[i] >= 0]
    return (outer + inner)[:count]


def layout_system(layout: str = "GT1", seed: int = 7) -> System:
    """60 stations, four vehicles of 40 bikes, four-hour morning horizon."""
    net = build_grid_network(layout, seed)
    fleet = FleetConfig.uniform(4, 40, _spread_stations(net, 4))
    episode = EpisodeConfig.proportional(net, 0.5, *HORIZON)
    gen = GeneratorConfig(base_rate=1500.0, peak_windows=[(420.0, 570.0, 3.0), (1020.0, 1170.0, 2.5)],
                          commute_bias=0.6)
    return System(net, fleet, episode, gen)


def toy_system(seed: int = 3, commute_bias: float = 0.2, vehicle_capacity: int = 4,
               handling_time: float = 0.5, truck_speed: float = 0.25,
               minutes: float = 60.0) -> System:
    """10 stations of 10 docks (3 in one center), two 4-bike vehicles, ~200 trips in one hour.

    Sized for short training runs: a one-hour horizon gives roughly 25-35
    decisions per episode. A fifth of the trips head for the center, which
    is enough imbalance for rebalancing to matter. Trucks travel at half the
    riders' speed, so a vehicle makes about a dozen visits per hour.
    """
    horizon = (420.0, 420.0 + minutes)
    net = build_network(10, centers=((3.0, 3.0),), center_counts=(3,), seed=seed,
                        center_capacity=10, outer_capacity=10, speed=truck_speed, area=6.0,
                        center_radius=1.0)
    fleet = FleetConfig.uniform(2, vehicle_capacity, _spread_stations(net, 2),
                               initial_load=vehicle_capacity // 2, handling_time=handling_time)
    episode = EpisodeConfig.proportional(net, 0.5, *horizon)
    gen = GeneratorConfig(base_rate=200.0, peak_windows=[(horizon[0], horizon[1], 1.0)],
                          commute_bias=commute_bias, weather_sigma=0.25, rider_speed=0.5,
                          service_window=horizon)
    return System(net, fleet, episode, gen)
