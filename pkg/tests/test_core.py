import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualbike.core import (EpisodeConfig, FleetConfig, StationNetwork, build_grid_network,
                           build_network, load_system, save_system, validate)

from helpers import line_network


@pytest.fixture(scope="module")
def gt1():
    return build_grid_network("GT1", seed=11)


@pytest.fixture(scope="module")
def gt2():
    return build_grid_network("GT2", seed=11)


def test_gt1_has_nine_large_center_stations(gt1):
    assert gt1.station_count == 60
    assert np.sum(gt1.capacities == 40) == 9
    assert np.sum(gt1.capacities == 20) == 51
    assert np.array_equal(gt1.capacities == 40, gt1.center_mask)


def test_gt2_centers_are_spatially_separated(gt2):
    assert np.sum(gt2.capacities == 40) == 12
    a = gt2.coordinates[gt2.cluster == 0]
    b = gt2.coordinates[gt2.cluster == 1]
    assert len(a) == len(b) == 6
    # every station of a cluster is closer to its own centroid than to the other one
    ca, cb = a.mean(axis=0), b.mean(axis=0)
    assert np.all(np.hypot(*(a - ca).T) < np.hypot(*(a - cb).T))
    assert np.all(np.hypot(*(b - cb).T) < np.hypot(*(b - ca).T))


def test_matrices_are_symmetric_with_zero_diagonal(gt1):
    assert np.array_equal(gt1.distance, gt1.distance.T)
    assert np.all(np.diag(gt1.distance) == 0)
    off = ~np.eye(60, dtype=bool)
    assert np.all(gt1.distance[off] > 0)
    assert np.allclose(gt1.transit_time, gt1.distance / 0.5)


def test_grid_network_is_pure_in_layout_and_seed():
    a = build_grid_network("GT1", 5)
    assert a == build_grid_network("GT1", 5)
    assert not a == build_grid_network("GT1", 6)


def test_unknown_layout_rejected():
    with pytest.raises(ValueError):
        build_grid_network("GT3", 0)


def test_arrays_are_read_only(gt1):
    with pytest.raises(ValueError):
        gt1.capacities[0] = 1


def test_consistent_configuration_validates(gt1):
    fleet = FleetConfig.uniform(4, 40, [0, 1, 2, 3])
    ep = EpisodeConfig.proportional(gt1)
    assert validate(gt1, fleet, ep) == []


def test_overfull_vehicle_is_reported(gt1):
    fleet = FleetConfig([40, 40], [50, 0], [0, 1])
    problems = validate(gt1, fleet)
    assert any("vehicle 0" in p for p in problems)


def test_overfull_station_is_reported():
    net = line_network([0, 1, 2, 3], [40, 40, 40, 40])
    ep = EpisodeConfig(0, 60, [0, 0, 0, 41])
    problems = validate(net, None, ep)
    assert len(problems) == 1 and "station 3" in problems[0]


def test_asymmetric_and_triangle_violations_reported():
    d = np.array([[0, 1, 5], [1, 0, 1], [5, 1, 0]], dtype=float)
    net = StationNetwork([5, 5, 5], np.zeros((3, 2)), d, d)
    assert any("triangle" in p for p in validate(net))
    d2 = d.copy()
    d2[0, 1] = 2
    net2 = StationNetwork([5, 5, 5], np.zeros((3, 2)), d2, d)
    assert any("not symmetric" in p for p in validate(net2))


def test_shared_initial_station_and_bad_fill_levels(gt1):
    fleet = FleetConfig.uniform(2, 10, [3, 3])
    ep = EpisodeConfig(0, 60, [0] * 60, (0.5, 0.2, 0.8))
    problems = validate(gt1, fleet, ep)
    assert any("share initial station 3" in p for p in problems)
    assert any("fill levels" in p for p in problems)


def test_proportional_inventory_rounds_half_up():
    net = line_network([0, 1, 2], [5, 7, 40])
    assert EpisodeConfig.proportional(net, 0.5).initial_station_inventory.tolist() == [3, 4, 20]


def test_system_document_round_trip(tmp_path, gt2):
    fleet = FleetConfig.uniform(4, 40, [0, 1, 2, 3], initial_load=5)
    ep = EpisodeConfig.proportional(gt2)
    path = tmp_path / "system.json"
    save_system(path, gt2, fleet, ep, targets=np.arange(60))
    got = load_system(path)
    assert got["network"] == gt2
    assert got["fleet"] == fleet
    assert np.array_equal(got["episode"].initial_station_inventory, ep.initial_station_inventory)
    assert got["targets"].tolist() == list(range(60))


def test_schema_version_mismatch_rejected(tmp_path, gt1):
    path = tmp_path / "system.json"
    save_system(path, gt1)
    doc = json.loads(path.read_text())
    doc["schema_version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="schema_version"):
        load_system(path)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 40), centers=st.integers(0, 2))
def test_generated_networks_always_validate(seed, n, centers):
    spots = [(3.0, 3.0), (7.0, 7.0)][:centers]
    counts = [min(3, n // 2)] * centers
    net = build_network(n, spots, counts, seed)
    fleet = FleetConfig.uniform(1, 10, [0])
    assert validate(net, fleet, EpisodeConfig.proportional(net)) == []
