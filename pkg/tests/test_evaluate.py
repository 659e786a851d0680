import csv
import json

import numpy as np
import pytest

from dualbike.core import FleetConfig
from dualbike.evaluate import EvalReport, config_digest, default_repetitions, evaluate
from dualbike.policies import HeuristicConfig, compute_empirical_targets
from dualbike.presets import toy_system
from dualbike.scenario import generate_days
from dualbike.simulator import Simulator
from dualbike.trainer import Agent

from helpers import day, episode_for, line_network


@pytest.fixture(scope="module")
def toy():
    system = toy_system()
    return system, generate_days(system.network, system.generator, 4, seed=2)


def test_none_policy_matches_a_parked_fleet(toy):
    system, days = toy
    rep = evaluate(None, days, system.network, system.fleet, system.episode)
    for (d, r, lr, lt), scen in zip(rep.rows, days):
        sim = Simulator(system.network, system.fleet, system.episode, scen, dispatch_vehicles=False)
        sim.advance()
        assert (lr, lt) == sim.lost_demand() and r == 0 and d == scen.day_index


def test_zero_demand_day_loses_nothing():
    net = line_network([0, 1, 2], [5, 5, 5])
    fleet = FleetConfig.uniform(1, 4, [0])
    targets = np.array([2, 2, 2])
    agent = Agent("HEURISTIC", heuristic=HeuristicConfig(0.8, 1.0), targets=targets)
    rep = evaluate(agent, [day([])], net, fleet, episode_for(net, 0, 30, d0=[2, 3, 1]))
    assert rep.totals.tolist() == [0.0]


def test_greedy_evaluation_is_deterministic(toy):
    system, days = toy
    train_days = days[:2]
    tg = compute_empirical_targets(train_days, system.network, (420.0, 480.0))
    agent = Agent("HEURISTIC", heuristic=HeuristicConfig(0.8, 1.0), targets=tg)
    a = evaluate(agent, days[2:], system.network, system.fleet, system.episode, seed=4)
    b = evaluate(agent, days[2:], system.network, system.fleet, system.episode, seed=4)
    assert a.rows == b.rows


def test_repetitions_default_by_epsilon():
    assert default_repetitions(0.0) == 1 and default_repetitions(0.05) == 5


def test_noisy_evaluation_repeats_each_day(toy):
    system, days = toy
    rep = evaluate(None, days[:2], system.network, system.fleet, system.episode, epsilon=0.05)
    assert [(d, r) for d, r, _, _ in rep.rows] == [(days[i].day_index, k)
                                                   for i in range(2) for k in range(5)]
    with pytest.raises(ValueError):
        evaluate(None, days, system.network, system.fleet, system.episode, epsilon=1.5)


def test_summary_statistics_recompute_from_rows(tmp_path):
    rep = EvalReport("X", 0.0, 0, config_digest({"a": 1}), [(0, 0, 3, 1), (1, 0, 5, 0), (2, 0, 0, 2)])
    csv_path, json_path = rep.write(tmp_path)
    with open(csv_path) as fh:
        totals = [int(r["total"]) for r in csv.DictReader(fh)]
    summary = json.loads(json_path.read_text())
    assert totals == [4, 5, 2]
    assert summary["mean_lost"] == pytest.approx(np.mean(totals))
    assert summary["std_lost"] == pytest.approx(np.std(totals))
    assert summary["episodes"] == 3 and len(summary["config_digest"]) == 16


def test_digest_is_order_stable():
    assert config_digest({"a": 1, "b": 2}) == config_digest({"b": 2, "a": 1})
    assert config_digest({"a": 1}) != config_digest({"a": 2})
