import itertools
import math

import numpy as np
import pytest
from scipy.optimize import minimize

from dtslice.errors import EmptyDemands, GridTooFine, OutOfRange
from dtslice.sdt import reservation as rsv
from dtslice._kernels import water_fill_exact

NO_CAP = 1e9  # headroom large enough to be inactive


def grid_optimum(d, n, budget, step, caps):
    """Best grid allocation by dynamic programming over spent units (exact over the grid)."""
    units = int(round(budget / step))
    best = np.zeros(units + 1)  # best value using at most j units on groups so far
    for dg, ng, cg in zip(d, n, caps):
        top = min(units, int(math.floor(cg / step + 1e-9)))
        gain = ng * np.log1p(np.arange(top + 1) * step / dg)
        nxt = np.full(units + 1, -np.inf)
        for k in range(top + 1):
            nxt[k:] = np.maximum(nxt[k:], best[: units + 1 - k] + gain[k])
        best = nxt
    return best[-1]


def test_kkt_example():
    r = rsv.reserve_convex([1.0, 1.0], 2.0, [1.0, 1.0], 2.0, [2.0, 1.0], headroom=NO_CAP)
    assert r.bandwidth == pytest.approx([5 / 3, 1 / 3], abs=1e-9)
    assert r.compute == pytest.approx([5 / 3, 1 / 3], abs=1e-9)


def test_convex_vs_grid_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(50):
        G = int(rng.integers(1, 6))
        B = float(rng.uniform(1.0, 100.0))
        d = rng.uniform(0.05, 1.0, G) * B
        n = rng.integers(1, 10, G).astype(float)
        caps = 2.0 * d
        b = rsv.water_fill(d, n, B, caps)
        assert b.sum() <= B * (1 + 1e-9) and np.all(b >= 0) and np.all(b <= caps + 1e-12)
        val = rsv.objective(b, d, n)
        brute = grid_optimum(d, n, B, 1e-3 * B, caps)
        assert val >= brute * (1 - 1e-6)
        # the exact breakpoint route agrees
        assert val == pytest.approx(rsv.objective(water_fill_exact(d, n, B, caps), d, n), rel=1e-9)


def test_convex_vs_scipy():
    rng = np.random.default_rng(1)
    for _ in range(10):
        G = int(rng.integers(2, 6))
        d = rng.uniform(0.1, 1.0, G)
        n = rng.integers(1, 5, G).astype(float)
        B = 1.0
        sol = minimize(lambda b: -np.sum(n * np.log1p(b / d)), np.full(G, B / G), method="SLSQP",
                       bounds=[(0, B)] * G, constraints=[{"type": "ineq", "fun": lambda b: B - b.sum()}],
                       options={"ftol": 1e-12, "maxiter": 500})
        ours = rsv.objective(rsv.water_fill(d, n, B, np.full(G, B)), d, n)
        assert ours >= -sol.fun - 1e-8


def test_convex_symmetric_and_degenerate():
    r = rsv.reserve_convex([3.0] * 4, 8.0, [2.0] * 4, 4.0, headroom=NO_CAP)
    assert r.bandwidth == pytest.approx([2.0] * 4)
    assert r.compute == pytest.approx([1.0] * 4)
    r = rsv.reserve_convex([1.0, 2.0], 0.0, [1.0, 2.0], 0.0)
    assert r.bandwidth.tolist() == [0.0, 0.0] and r.compute.tolist() == [0.0, 0.0]
    with pytest.raises(EmptyDemands):
        rsv.reserve_convex([], 1.0, [], 1.0)
    with pytest.raises(OutOfRange):
        rsv.reserve_convex([0.0], 1.0, [1.0], 1.0)


def test_convex_scale_invariance():
    d, n = np.array([1.0, 2.0, 5.0]), np.array([3.0, 1.0, 2.0])
    base = rsv.reserve_convex(d, 4.0, d, 4.0, n).bandwidth
    for c in (1e-3, 7.0, 1e6):
        scaled = rsv.reserve_convex(c * d, c * 4.0, d, 4.0, n).bandwidth
        assert scaled == pytest.approx(c * base, rel=1e-6)


def test_headroom_caps_abundant_capacity():
    r = rsv.reserve_convex([1.0, 1.0], 100.0, [1.0, 1.0], 100.0, headroom=2.0)
    assert r.bandwidth.tolist() == [2.0, 2.0]


def test_bnb_matches_enumeration():
    rng = np.random.default_rng(2)
    for _ in range(60):
        G = int(rng.integers(1, 4))
        points = int(rng.integers(2, 12))  # grid points 0..points-1 per group
        B = 1.0
        step = B / (points - 1)
        d = rng.uniform(0.05, 1.0, G)
        n = rng.integers(1, 4, G).astype(float)
        if rng.random() < 0.3:
            d[:] = d[0]
            n[:] = n[0]  # symmetric ties
        best = -np.inf
        for ks in itertools.product(range(points), repeat=G):
            if sum(ks) <= points - 1:
                best = max(best, rsv.objective(np.array(ks) * step, d, n))
        b, _ = rsv.grid_bnb(d, n, B, step)
        assert b.sum() <= B + 1e-9
        assert np.allclose(b / step, np.round(b / step))
        assert rsv.objective(b, d, n) == best


def test_bnb_step_equal_budget():
    r = rsv.reserve_bnb([1.0, 3.0, 2.0], 10.0, [1.0, 1.0, 1.0], 5.0, step_frac=1.0, headroom=NO_CAP)
    assert sorted(r.bandwidth.tolist()) == [0.0, 0.0, 10.0]
    assert r.bandwidth[0] == 10.0  # lowest demand gains most from the single unit
    with pytest.raises(GridTooFine):
        rsv.reserve_bnb([1.0], 1.0, [1.0], 1.0, step_frac=1e-5)


def test_bnb_close_to_convex():
    rng = np.random.default_rng(3)
    d = rng.uniform(0.1, 1.0, 6)
    n = rng.integers(1, 5, 6).astype(float)
    grid = rsv.objective(rsv.grid_bnb(d, n, 1.0, 0.01)[0], d, n)
    cont = rsv.objective(rsv.water_fill(d, n, 1.0, np.full(6, 1.0)), d, n)
    assert grid <= cont + 1e-12
    assert grid >= cont - 0.01 * abs(cont)


def test_historical_examples():
    r = rsv.reserve_historical([[5.0], [5.0]], 10.0, [[1.0], [1.0]], 4.0)
    assert r.bandwidth.tolist() == [5.0, 5.0] and r.compute.tolist() == [2.0, 2.0]
    r = rsv.reserve_historical([[3.0, 3.0], [1.0]], 8.0, [[3.0], [1.0]], 4.0)
    assert r.bandwidth == pytest.approx([6.0, 2.0])
    assert r.compute == pytest.approx([3.0, 1.0])
    r = rsv.reserve_historical([[], []], 8.0, [None, None], 4.0)
    assert r.bandwidth.tolist() == [4.0, 4.0]
    r = rsv.reserve_historical([[2.0], []], 8.0, [[2.0], []], 4.0)
    assert r.bandwidth.tolist() == [4.0, 4.0]  # newcomer credited with the mean
    with pytest.raises(EmptyDemands):
        rsv.reserve_historical([], 1.0, [], 1.0)
