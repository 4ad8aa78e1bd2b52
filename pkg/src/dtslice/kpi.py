"""User satisfaction, system utility, operation cost and the holistic DT value."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import KpiWeights
from .errors import OutOfRange, UnknownUser


def quality_map(ladder) -> np.ndarray:
    """log-shaped quality of each rung, 1.0 at the top rung."""
    ladder = np.asarray(ladder, dtype=float)
    return np.log1p(ladder) / np.log1p(ladder.max())


def user_satisfaction(report, user: int, bitrate_ladder, mu_stall: float = 0.5) -> float:
    if not 0 <= user < len(report.stall_time):
        raise UnknownUser(f"user {user} not in report")
    return float(satisfaction_vector(report, bitrate_ladder, mu_stall)[user])


def satisfaction_vector(report, bitrate_ladder, mu_stall: float = 0.5) -> np.ndarray:
    """Satisfaction of every user in ``report`` (vectorized form of :func:`user_satisfaction`)."""
    q = quality_map(bitrate_ladder)
    counts = report.watched_by_version
    watched = counts.sum(axis=1)
    mean_q = (counts * q).sum(axis=1) / np.maximum(watched, 1)
    stall_frac = report.stall_time / report.window_s
    sat = np.clip(mean_q - mu_stall * stall_frac, 0.0, 1.0)
    return np.where(watched > 0, sat, 0.0)


def usage_fractions(report, B_total: float, P_total: float) -> tuple[float, float]:
    """Occupied spectrum-time and consumed ops relative to full capacity over the window."""
    bw = float(report.occupied_hz_s.sum()) / (B_total * report.window_s)
    ops = float(report.ops_used.sum()) / (P_total * report.window_s)
    return bw, ops


def system_utility(sats, bw_used: float, B_total: float, ops_used: float, P_total: float,
                   gamma_r: float = 0.25) -> float:
    """Mean satisfaction minus the weighted mean of the two usage fractions.

    ``bw_used`` and ``ops_used`` are in the same units as the capacities.
    """
    if B_total <= 0 or P_total <= 0:
        raise OutOfRange("capacities must be positive")
    sats = np.asarray(sats, dtype=float)
    return float(sats.mean() - gamma_r * (bw_used / B_total + ops_used / P_total) / 2.0)


def operation_cost(level: int, c_op: float = 0.1) -> float:
    if int(level) not in (0, 1, 2, 3):
        raise OutOfRange(f"abstraction level {level} not in 0..3")
    if c_op < 0:
        raise OutOfRange("c_op must be >= 0")
    return c_op * int(level)


def holistic_dt_value(weights: KpiWeights, freshness_ratio: float, Q: float, R: float) -> float:
    if not 0.0 <= freshness_ratio <= 1.0:
        raise OutOfRange(f"freshness ratio {freshness_ratio} outside [0, 1]")
    return weights.alpha * freshness_ratio + weights.beta * Q - weights.gamma * R


@dataclass(frozen=True)
class WindowKpis:
    satisfaction: np.ndarray
    bw_frac: float
    compute_frac: float
    freshness: float
    Q: float
    R: float
    V: float


def window_kpis(report, ladder, B_total, P_total, freshness, weights, level,
                mu_stall=0.5, gamma_r=0.25, c_op=0.1) -> WindowKpis:
    sats = satisfaction_vector(report, ladder, mu_stall)
    bw, ops = usage_fractions(report, B_total, P_total)
    Q = system_utility(sats, bw * B_total, B_total, ops * P_total, P_total, gamma_r)
    R = operation_cost(level, c_op)
    return WindowKpis(sats, bw, ops, freshness, Q, R, holistic_dt_value(weights, freshness, Q, R))
