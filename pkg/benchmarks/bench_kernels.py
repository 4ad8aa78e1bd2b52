"""Time the hot kernels under numba and under the plain numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Each backend runs in its own interpreter because the switch is read at import.
"""

import argparse
import json
import os
import subprocess
import sys
import time

WORKER = r"""
import json, sys, time
import numpy as np
from dtslice import _kernels
from dtslice.domain import ScenarioConfig, build_catalog, replace
from dtslice.physnet import Grouping, simulate_window

repeat = int(sys.argv[1])
cfg = replace(ScenarioConfig(), n_users=60)
catalog = build_catalog(cfg.catalog, np.random.default_rng(0))
U, S = cfg.n_users, catalog.n_segments
rng = np.random.default_rng(1)
grouping = Grouping(np.arange(U) % 8, np.zeros(8, dtype=np.int64))
gains = np.full((cfg.slots_per_window, U), 1e9)
pmf = np.full((U, 8, S + 1), 1.0 / (S + 1))
playlists = np.stack([rng.permutation(len(catalog))[:80] for _ in range(8)])
d = rng.uniform(0.1, 1.0, 32)
n = rng.integers(1, 6, 32).astype(float)

def bench(fn):
    fn()  # warm-up, includes compilation
    t = []
    for _ in range(repeat):
        t0 = time.perf_counter(); fn(); t.append(time.perf_counter() - t0)
    return min(t)

out = {
    "simulate_window": bench(lambda: simulate_window(
        gains, grouping, np.full(8, cfg.total_bandwidth / 8), np.full(8, cfg.total_compute / 8),
        playlists, pmf, catalog, cfg, np.random.default_rng(2))),
    "water_fill_exact x1000": bench(lambda: [_kernels.water_fill_exact(d, n, 5.0, 2 * d) for _ in range(1000)]),
    "lend_slot x1000": bench(lambda: [_kernels.lend_slot(d, d[::-1], np.zeros(32)) for _ in range(1000)]),
}
print(json.dumps(out))
"""


def run(disable: bool, repeat: int) -> dict:
    env = dict(os.environ)
    env.pop("DTSLICE_DISABLE_NUMBA", None)
    if disable:
        env["DTSLICE_DISABLE_NUMBA"] = "1"
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env, check=True,
                         capture_output=True, text=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    t0 = time.perf_counter()
    jit, py = run(False, args.repeat), run(True, args.repeat)
    print(f"{'kernel':<26}{'numba s':>10}{'numpy s':>10}{'speedup':>10}")
    for k in jit:
        print(f"{k:<26}{jit[k]:>10.4f}{py[k]:>10.4f}{py[k] / jit[k]:>10.1f}")
    print(f"total wall {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
