"""Time the numba kernels against the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20000] [--stations 60]

Prints microseconds per call for each kernel and backend, then the
wall time of a batch of scripted episodes run under each backend (the
episode part runs in subprocesses so the backend switch is honoured).
"""
from __future__ import annotations

import argparse
import math
import os
import subprocess
import sys
import time

import numpy as np

from dualbike.kernels import _numba, _numpy


def kernel_cases(n: int, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    cap = rng.integers(10, 41, n).astype(np.int64)
    inv = (cap * rng.random(n)).astype(np.int64)
    dist = rng.uniform(0.1, 5.0, n)
    mask = np.ones(n, dtype=bool)
    mask[:3] = False
    v = 4
    blocks = (rng.integers(0, n, v).astype(np.int64), rng.integers(0, n, v).astype(np.int64),
              rng.integers(0, 40, v).astype(np.int64), np.full(v, 40, dtype=np.int64),
              rng.random(v), rng.integers(0, 40, v).astype(np.int64),
              rng.integers(0, 2, v).astype(np.int64))
    levels = np.array([0.2, 0.5, 0.8])
    q = rng.normal(size=n)
    return {
        "routing_distribution(m=1)": lambda k: k.routing_distribution(dist, inv, cap, 17, 40, mask, 0.8, 1.0, False),
        "routing_distribution(m=inf)": lambda k: k.routing_distribution(dist, inv, cap, 17, 40, mask, 0.8, 0.0, True),
        "fill_level_counts": lambda k: k.fill_level_counts(13, 30, 17, 40, levels),
        "nearest_free_dock": lambda k: k.nearest_free_dock(dist, inv, cap),
        "masked_argmax": lambda k: k.masked_argmax(q, mask),
        "encode_state": lambda k: k.encode_state(0.4, inv, cap, *blocks, 1),
    }


def time_call(fn, backend, repeat: int) -> float:
    fn(backend)  # compile / warm up
    t = time.perf_counter()
    for _ in range(repeat):
        fn(backend)
    return (time.perf_counter() - t) / repeat * 1e6


EPISODE_SNIPPET = """
import time, numpy as np
from dualbike.presets import layout_system
from dualbike.scenario import generate_days
from dualbike.policies import HeuristicConfig, compute_empirical_targets
from dualbike.trainer import Agent
from dualbike.evaluate import evaluate
s = layout_system("GT1")
days = generate_days(s.network, s.generator, {days}, seed=0)
tg = compute_empirical_targets(days, s.network, (s.episode.horizon_start, s.episode.horizon_end))
agent = Agent("HEURISTIC", heuristic=HeuristicConfig(0.8, 1.0), targets=tg)
evaluate(agent, days[:1], s.network, s.fleet, s.episode)  # warm up
t = time.perf_counter()
evaluate(agent, days, s.network, s.fleet, s.episode)
print(time.perf_counter() - t)
"""


def episode_seconds(disable_numba: bool, days: int) -> float:
    env = dict(os.environ, DUALBIKE_DISABLE_NUMBA="1" if disable_numba else "0")
    out = subprocess.run([sys.executable, "-c", EPISODE_SNIPPET.format(days=days)], env=env,
                         capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20000)
    ap.add_argument("--stations", type=int, default=60)
    ap.add_argument("--days", type=int, default=5, help="episodes for the end-to-end timing")
    ap.add_argument("--skip-episodes", action="store_true")
    args = ap.parse_args(argv)

    print(f"{'kernel':32s} {'numpy us':>10s} {'numba us':>10s} {'speedup':>8s}")
    for name, fn in kernel_cases(args.stations).items():
        a = time_call(fn, _numpy, args.repeat)
        b = time_call(fn, _numba, args.repeat)
        print(f"{name:32s} {a:10.2f} {b:10.2f} {a / b:8.1f}x")

    if not args.skip_episodes:
        a = episode_seconds(True, args.days)
        b = episode_seconds(False, args.days)
        ratio = a / b if b > 0 else math.inf
        print(f"\n{args.days} GT1 heuristic episodes: numpy {a:.2f}s, numba {b:.2f}s ({ratio:.1f}x)")


if __name__ == "__main__":
    main()
