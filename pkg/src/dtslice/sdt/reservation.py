"""Slice resource reservation: KKT water-filling, grid branch-and-bound, historical split."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .._kernels import water_fill_exact
from ..errors import EmptyDemands, GridTooFine, OutOfRange

MAX_GRID_POINTS = 10_000


@dataclass(frozen=True)
class SliceReservation:
    bandwidth: np.ndarray  # Hz per group
    compute: np.ndarray  # ops/s per group

    @property
    def n_groups(self) -> int:
        return len(self.bandwidth)


def objective(b, d, n) -> float:
    """sum_g n_g * log(1 + b_g / d_g), summed exactly so permuted ties compare equal."""
    b = np.asarray(b, dtype=float)
    terms = np.asarray(n, dtype=float) * np.log1p(b / np.asarray(d, dtype=float))
    return math.fsum(terms.tolist())


def _check(d, n):
    d = np.asarray(d, dtype=float)
    if d.size == 0:
        raise EmptyDemands("no demands to reserve for")
    n = np.ones_like(d) if n is None else np.asarray(n, dtype=float)
    if np.any(d <= 0):
        raise OutOfRange("demands must be positive")
    if n.shape != d.shape or np.any(n <= 0):
        raise OutOfRange("weights must be positive and match the demands")
    return d, n


def water_fill(d, n, budget, caps) -> np.ndarray:
    """Maximize sum n*log(1 + b/d) s.t. sum b <= budget, 0 <= b <= caps.

    Stationarity gives ``b = clip(n * L - d, 0, cap)`` for a common water
    level ``L`` (the inverse multiplier). ``L`` is bracketed by bisection
    until the budget is met within 1e-6 relative, then polished in closed
    form on the active set.
    """
    d = np.asarray(d, dtype=float)
    n = np.asarray(n, dtype=float)
    caps = np.asarray(caps, dtype=float)
    if budget <= 0:
        return np.zeros_like(d)
    if caps.sum() <= budget:
        return caps.copy()

    def alloc(level):
        return np.clip(n * level - d, 0.0, caps)

    lo, hi = 0.0, float(np.max((d + caps) / n))
    tol = 1e-6 * budget
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if alloc(mid).sum() > budget:
            hi = mid
        else:
            lo = mid
        if budget - alloc(lo).sum() <= tol:
            break
    b = alloc(lo)
    active = (b > 0) & (b < caps)
    if active.any():
        fixed = b[~active].sum()
        level = (budget - fixed + d[active].sum()) / n[active].sum()
        polished = np.clip(n * level - d, 0.0, caps)
        same_set = np.array_equal((polished > 0) & (polished < caps), active)
        if same_set and polished.sum() <= budget * (1 + 1e-12):
            b = polished
    return b


def reserve_convex(d_bw, B_total, d_ops, P_total, weights=None, headroom: float = 2.0) -> SliceReservation:
    """Demand-normalized, member-weighted log-utility reservation.

    Each group's share is capped at ``headroom`` times its demand, so an
    abundant capacity is not handed out in full.
    """
    d_bw, n = _check(d_bw, weights)
    d_ops, _ = _check(d_ops, weights)
    if B_total < 0 or P_total < 0:
        raise OutOfRange("capacities must be >= 0")
    b = water_fill(d_bw, n, B_total, headroom * d_bw)
    p = water_fill(d_ops, n, P_total, headroom * d_ops)
    return SliceReservation(b, p)


def _greedy_grid(d, n, caps_units, units, step):
    """Marginal-gain allocation of ``units`` grid steps; used as the first incumbent."""
    k = np.zeros(len(d), dtype=np.int64)
    heap = []
    for g in range(len(d)):
        if caps_units[g] > 0:
            gain = n[g] * (math.log1p(step / d[g]))
            heapq.heappush(heap, (-gain, g))
    left = units
    while left > 0 and heap:
        _, g = heapq.heappop(heap)
        k[g] += 1
        left -= 1
        if k[g] < caps_units[g]:
            gain = n[g] * (math.log1p((k[g] + 1) * step / d[g]) - math.log1p(k[g] * step / d[g]))
            heapq.heappush(heap, (-gain, g))
    return k


def grid_bnb(d, n, budget, step, caps=None, max_nodes: int = 200_000):
    """Best-first branch-and-bound over allocations on multiples of ``step``.

    Returns ``(allocation, nodes_expanded)``. Groups are branched in order of
    decreasing demand; a node's bound is the fixed part of the objective plus
    the continuous water-filling optimum of the unfixed groups. The bound is
    concave in the branched level, so children are generated outwards from
    the best level and only while they can still beat the incumbent.
    """
    d = np.asarray(d, dtype=float)
    n = np.asarray(n, dtype=float)
    G = len(d)
    if step <= 0:
        raise OutOfRange("grid step must be positive")
    if budget / step > MAX_GRID_POINTS + 1e-9:
        raise GridTooFine(f"{budget / step:.0f} grid points per group exceeds {MAX_GRID_POINTS}")
    units = int(math.floor(budget / step + 1e-9))
    caps = np.full(G, budget) if caps is None else np.minimum(np.asarray(caps, dtype=float), budget)
    caps_units = np.floor(caps / step + 1e-9).astype(np.int64)
    order = np.argsort(-d, kind="stable")
    d_o, n_o, cu_o = d[order], n[order], caps_units[order]

    def relax(depth, used):
        if depth == G:
            return 0.0
        b = water_fill_exact(d_o[depth:], n_o[depth:], float(units - used) * step, cu_o[depth:] * step)
        return float(np.sum(n_o[depth:] * np.log1p(b / d_o[depth:])))

    best_k = _greedy_grid(d, n, caps_units, units, step)
    best_val = objective(best_k * step, d, n)
    tie_tol = 1e-12 * max(1.0, abs(best_val))

    counter = 0
    heap = [(-relax(0, 0), counter, 0, 0, 0.0, ())]
    expanded = 0
    while heap:
        neg_b, _, depth, used, fixed_val, levels = heapq.heappop(heap)
        if -neg_b <= best_val + tie_tol or expanded >= max_nodes:
            break
        expanded += 1
        top = int(min(cu_o[depth], units - used))

        def child_bound(kk):
            val = fixed_val + n_o[depth] * math.log1p(kk * step / d_o[depth])
            return val, val + relax(depth + 1, used + kk)

        # start from the relaxed optimum of this group and walk both ways
        b_rel = water_fill_exact(d_o[depth:], n_o[depth:], float(units - used) * step, cu_o[depth:] * step)
        start = int(min(top, max(0, math.floor(b_rel[0] / step))))
        for direction in (-1, 1):
            kk = start if direction == -1 else start + 1
            while 0 <= kk <= top:
                val, bnd = child_bound(kk)
                if bnd <= best_val + tie_tol:
                    break
                child = levels + (kk,)
                if depth + 1 == G:
                    k = np.zeros(G, dtype=np.int64)
                    k[order] = child
                    v = objective(k * step, d, n)
                    if v > best_val:
                        best_val, best_k = v, k
                else:
                    counter += 1
                    heapq.heappush(heap, (-bnd, counter, depth + 1, used + kk, val, child))
                kk += direction
    return best_k * step, expanded


def reserve_bnb(d_bw, B_total, d_ops, P_total, weights=None, step_frac: float = 0.01,
                headroom: float = 2.0, max_nodes: int = 200_000) -> SliceReservation:
    """Grid-restricted reservation; the grid step is ``step_frac`` of each capacity."""
    d_bw, n = _check(d_bw, weights)
    d_ops, _ = _check(d_ops, weights)
    if not step_frac > 0:
        raise OutOfRange("step_frac must be positive")
    b = np.zeros_like(d_bw) if B_total <= 0 else grid_bnb(
        d_bw, n, B_total, step_frac * B_total, headroom * d_bw, max_nodes)[0]
    p = np.zeros_like(d_ops) if P_total <= 0 else grid_bnb(
        d_ops, n, P_total, step_frac * P_total, headroom * d_ops, max_nodes)[0]
    return SliceReservation(b, p)


def _proportional(history, total):
    means = [float(np.mean(h)) if h is not None and len(h) else None for h in history]
    known = [m for m in means if m is not None]
    if not known or sum(known) <= 0:
        return np.full(len(history), total / len(history))
    fill = float(np.mean(known))
    w = np.array([fill if m is None else m for m in means])
    if w.sum() <= 0:
        return np.full(len(history), total / len(history))
    return total * w / w.sum()


def reserve_historical(bits_history, B_total, ops_history, P_total) -> SliceReservation:
    """Split each capacity in proportion to each group's mean historical traffic.

    Groups with no history are credited with the mean of the others; with no
    history at all the split is uniform.
    """
    if len(bits_history) == 0:
        raise EmptyDemands("no groups to reserve for")
    return SliceReservation(_proportional(bits_history, B_total), _proportional(ops_history, P_total))
