"""Small builders and independent reference implementations used across tests."""
from __future__ import annotations

import math

import numpy as np

from dualbike import dqn
from dualbike.core import EpisodeConfig, FleetConfig, StationNetwork
from dualbike.env import RebalancingEnv, feasible_inventory_actions
from dualbike.scenario import DemandScenario, TripRecord
from dualbike.simulator import DecisionPoint, DecisionType, Simulator


def line_network(positions, capacities, speed=1.0) -> StationNetwork:
    """Stations on a line; distance is |x_i - x_j|."""
    x = np.asarray(positions, dtype=float)
    d = np.abs(x[:, None] - x[None, :])
    coords = np.column_stack([x, np.zeros_like(x)])
    return StationNetwork(np.asarray(capacities), coords, d, d / speed)


def random_network(rng, n, cap_range=(2, 10), speed=1.0) -> StationNetwork:
    pts = rng.random((n, 2)) * 5.0
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    caps = rng.integers(cap_range[0], cap_range[1] + 1, n)
    return StationNetwork(caps, pts, d, d / speed)


def day(trips, index=0) -> DemandScenario:
    return DemandScenario(index, 1.0, [TripRecord(*t) for t in trips])


def random_trips(rng, n_stations, count, t0, t1, max_ride=10.0):
    out = []
    for _ in range(count):
        o, dst = rng.choice(n_stations, 2, replace=False)
        dep = round(float(rng.uniform(t0 - 2, t1)), 3)
        arr = round(dep + float(rng.uniform(0.5, max_ride)), 3)
        out.append((int(o), dep, int(dst), arr))
    out.sort(key=lambda t: t[1])
    return out


def fit_bikes(d0, caps, on_vehicles):
    """Trim station stock so bikes never outnumber docks (else a redirect can fail)."""
    d0 = list(d0)
    while sum(d0) + on_vehicles > int(sum(caps)):
        d0[d0.index(max(d0))] -= 1
    return d0


def episode_for(network, start=0.0, end=60.0, fraction=0.5, d0=None) -> EpisodeConfig:
    if d0 is None:
        return EpisodeConfig.proportional(network, fraction, start, end)
    return EpisodeConfig(start, end, d0)


def fleet_at(stations, capacity=4, load=0, beta=0.5) -> FleetConfig:
    return FleetConfig.uniform(len(stations), capacity, stations, load, beta)


# ---------------------------------------------------------------- oracles

def fill_count_reference(d, cap, p, vcap, mu):
    """Signed count toward fill level ``mu`` written straight from the piecewise rule."""
    target = math.floor(mu * cap + 0.5)
    if target < d:
        return min(vcap - p, d - target)
    if target > d:
        return max(-p, d - target)
    return 0


def mlp_reference(weights, biases, x, hidden="relu", output=None, prelu=0.25):
    """Loop-based forward pass, independent of the vectorized engine."""
    a = [float(v) for v in x]
    for layer, (w, b) in enumerate(zip(weights, biases)):
        rows, cols = len(w), len(w[0])
        z = []
        for j in range(cols):
            s = float(b[j])
            for i in range(rows):
                s += a[i] * float(w[i][j])
            z.append(s)
        last = layer == len(weights) - 1
        if not last:
            a = [max(v, 0.0) for v in z]
        elif output == "leaky_relu":
            a = [v if v > 0 else 0.01 * v for v in z]
        elif output == "prelu":
            a = [v if v > 0 else prelu * v for v in z]
        else:
            a = z
    return a


class ChronologicalInterpreter:
    """Brute-force replay of one episode with a single vehicle.

    Keeps a flat list of pending happenings and repeatedly scans it for
    the earliest one (time, then kind rank, then creation order). The
    vehicle follows a fixed script: fill-level index ``levels[k]`` at its
    k-th arrival and station ``route[k]`` at its k-th departure.
    """

    RANK = {"return": 0, "rent": 1, "move": 2, "arrive": 3, "done": 4}

    def __init__(self, caps, dist, d0, trips, start, end, vcap, load, home, beta, mu,
                 levels, route, dispatch=True):
        self.caps = list(caps)
        self.dist = dist
        self.stock = list(d0)
        self.start, self.end = start, end
        self.vcap, self.load, self.at = vcap, load, home
        self.beta, self.mu = beta, mu
        self.levels, self.route = list(levels), list(route)
        self.items = []
        self.made = 0
        self.lost_rent = self.lost_ret = 0
        for t in trips:
            if start <= t[1] < end:
                self._add(t[1], "rent", t)
        if dispatch:
            self._add(start, "arrive", home)

    def _add(self, time, kind, data):
        self.items.append((time, self.RANK[kind], self.made, kind, data))
        self.made += 1

    def run(self):
        arrivals = departures = 0
        while True:
            live = [it for it in self.items if it[0] < self.end]
            if not live:
                return self.lost_rent, self.lost_ret
            first = live[0]
            for it in live[1:]:
                if it[:3] < first[:3]:
                    first = it
            self.items.remove(first)
            time, _, _, kind, data = first
            if kind == "rent":
                o, _, dst, arr = data
                if self.stock[o] > 0:
                    self.stock[o] -= 1
                    self._add(arr, "return", dst)
                else:
                    self.lost_rent += 1
            elif kind == "return":
                s = data
                if self.stock[s] < self.caps[s]:
                    self.stock[s] += 1
                else:
                    self.lost_ret += 1
                    free = [j for j in range(len(self.caps)) if self.stock[j] < self.caps[j]]
                    best = min(free, key=lambda j: (self.dist[s][j], j))
                    self.stock[best] += 1
            elif kind == "arrive":
                self.at = data
                mu = self.mu[self.levels[arrivals % len(self.levels)]]
                arrivals += 1
                n = fill_count_reference(self.stock[self.at], self.caps[self.at], self.load,
                                         self.vcap, mu)
                sign = 1 if n > 0 else -1
                for k in range(1, abs(n) + 1):
                    self._add(time + self.beta * k, "move", sign)
                self._add(time + self.beta * abs(n), "done", None)
            elif kind == "move":
                s = self.at
                if data > 0 and self.stock[s] > 0 and self.load < self.vcap:
                    self.stock[s] -= 1
                    self.load += 1
                elif data < 0 and self.load > 0 and self.stock[s] < self.caps[s]:
                    self.stock[s] += 1
                    self.load -= 1
            elif kind == "done":
                nxt = self.route[departures % len(self.route)]
                departures += 1
                if nxt == self.at:
                    nxt = (self.at + 1) % len(self.caps)
                self._add(time + self.dist[self.at][nxt], "arrive", nxt)


# ---------------------------------------------------------------- random episode drivers

def random_policy_episode(seed, n_max=20, v_max=3, trips_max=80, check=True, hook=None):
    """Random network, fleet and trips driven by uniformly random feasible actions."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, n_max + 1))
    v = int(rng.integers(1, min(v_max, n - 1) + 1)) if n > 2 else 1
    net = random_network(rng, n)
    d0 = [int(rng.integers(0, c + 1)) for c in net.capacities]
    stations = rng.choice(n, v, replace=False).tolist()
    caps = int(rng.integers(1, 8))
    fleet = fleet_at(stations, capacity=caps, load=int(rng.integers(0, caps + 1)),
                     beta=float(rng.choice([0.0, 0.25, 1.0])))
    trips = random_trips(rng, n, int(rng.integers(0, trips_max)), 0.0, 60.0)
    d0 = fit_bikes(d0, net.capacities, int(fleet.initial_inventory.sum()))
    boundaries = []
    sim = Simulator(net, fleet, EpisodeConfig(0.0, 60.0, d0), day(trips), check_invariants=check,
                    atomic_transfer=bool(rng.random() < 0.3),
                    event_hook=hook or (lambda s, k, p: boundaries.append(s._bike_count())))
    total = sim.total_bikes
    out = sim.advance()
    while isinstance(out, DecisionPoint):
        k = out.vehicle
        if out.decision_type == DecisionType.INVENTORY:
            st_ = sim.destination[k]
            hi = min(int(sim.vcap[k] - sim.load[k]), int(sim.inventory[st_]))
            lo = -min(int(sim.load[k]), int(sim.capacities[st_] - sim.inventory[st_]))
            sim.apply_inventory_action(k, int(rng.integers(lo, hi + 1)))
        else:
            allowed = [j for j in range(n) if j not in set(sim.destination.tolist())]
            sim.apply_routing_action(k, int(rng.choice(allowed)))
        out = sim.advance()
    return sim, total, boundaries


def interpreter_case(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    net = random_network(rng, n, cap_range=(1, 6))
    d0 = [int(rng.integers(0, c + 1)) for c in net.capacities]
    vcap = int(rng.integers(1, 6))
    load = int(rng.integers(0, vcap + 1))
    home = int(rng.integers(n))
    beta = float(rng.choice([0.0, 0.5, 1.0, 2.0]))
    trips = random_trips(rng, n, int(rng.integers(0, 21)), 0.0, 30.0, max_ride=6.0)
    d0 = fit_bikes(d0, net.capacities, load)
    levels = rng.integers(0, 3, 8).tolist()
    route = rng.integers(0, n, 8).tolist()
    mu = (0.2, 0.5, 0.8)
    oracle = ChronologicalInterpreter(net.capacities.tolist(), net.distance.tolist(), d0, trips,
                                      0.0, 30.0, vcap, load, home, beta, mu, levels, route)
    fleet = fleet_at([home], capacity=vcap, load=load, beta=beta)
    sim = Simulator(net, fleet, EpisodeConfig(0.0, 30.0, d0, mu), day(trips))
    return sim, oracle, levels, route


def run_scripted(sim, levels, route):
    arrivals = departures = 0
    out = sim.advance()
    while isinstance(out, DecisionPoint):
        if out.decision_type == DecisionType.INVENTORY:
            counts = feasible_inventory_actions(sim, 0)
            sim.apply_inventory_action(0, int(counts[levels[arrivals % len(levels)]]))
            arrivals += 1
        else:
            nxt = route[departures % len(route)]
            departures += 1
            here = int(sim.destination[0])
            if nxt == here:
                nxt = (here + 1) % len(sim.capacities)
            sim.apply_routing_action(0, nxt)
        out = sim.advance()
    return sim.lost_demand()


def run_random_episode(seed, per_vehicle=False):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 9))
    v = int(rng.integers(1, min(3, n - 1) + 1))
    net = random_network(rng, n, cap_range=(3, 10))
    d0 = [int(rng.integers(0, c + 1)) for c in net.capacities]
    fleet = fleet_at(rng.choice(n, v, replace=False).tolist(), capacity=5,
                     load=int(rng.integers(0, 6)), beta=float(rng.choice([0.5, 1.0])))
    trips = random_trips(rng, n, int(rng.integers(0, 60)), 0.0, 40.0)
    d0 = fit_bikes(d0, net.capacities, int(fleet.initial_inventory.sum()))
    env = RebalancingEnv(net, fleet, EpisodeConfig(0.0, 40.0, d0), day(trips),
                         per_vehicle_windows=per_vehicle)
    dp = env.reset()
    emitted = []
    while dp is not None:
        if dp.decision_type == DecisionType.INVENTORY:
            out, dp = env.step(int(rng.integers(3)))
        else:
            out, dp = env.step(int(rng.choice(np.flatnonzero(env.routing_mask()))))
        emitted.extend(out)
    return env, emitted


# ---------------------------------------------------------------- networks

def random_net(seed, act=None, widths=None):
    rng = np.random.default_rng(seed)
    if widths is None:
        widths = tuple(int(w) for w in rng.integers(1, 9, int(rng.integers(1, 4))))
    spec = dqn.NetworkSpec(int(rng.integers(1, 9)), int(rng.integers(1, 6)), widths, "relu", act)
    p = dqn.init_params(spec, rng)
    if act == "prelu":
        p.prelu[:] = rng.uniform(0.05, 0.5)
    return p, rng


def numeric_gradient_check(seed, act, h=1e-5, picks=20):
    p, rng = random_net(seed, act)
    batch = 6
    x = rng.normal(size=(batch, p.spec.input_dim))
    a = rng.integers(0, p.spec.output_dim, batch)
    y = rng.normal(size=batch)
    grads, _, _ = dqn.gradients(p, x, a, y)
    arrays = [arr.copy() for arr in p.arrays()]
    flat_g = np.concatenate([g.ravel() for g in grads.arrays()])
    sizes = [arr.size for arr in arrays]
    total = sum(sizes)
    candidates = list(range(total))
    if act != "prelu":
        candidates = candidates[:-1]   # slope unused without PReLU
    chosen = rng.choice(candidates, size=min(picks, len(candidates)), replace=False)
    if act == "prelu" and total - 1 not in chosen:
        chosen[0] = total - 1
    worst = 0.0
    for k in chosen:
        which = int(np.searchsorted(np.cumsum(sizes), k, side="right"))
        off = k - (sum(sizes[:which]))

        def loss_at(delta):
            mod = [arr.copy() for arr in arrays]
            mod[which].ravel()[off] += delta
            q = dqn.forward(p.with_arrays(mod), x)[np.arange(batch), a]
            return np.mean((q - y) ** 2)

        num = (loss_at(h) - loss_at(-h)) / (2 * h)
        ana = flat_g[k]
        denom = max(abs(num) + abs(ana), 1e-8)
        worst = max(worst, abs(num - ana) / denom)
    return worst
