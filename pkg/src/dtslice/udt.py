"""User digital twins: observation pools, freshness and behaviour estimation."""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .domain import N_TYPES
from .errors import NonMonotonicTimestamp, OutOfRange, TooFewSamples

ATTRIBUTES = ("position", "channel_quality", "swipe_events", "preference_signals")
PERIODIC = ("position", "channel_quality")


@dataclass
class UdtPool:
    """Finite, per-attribute ring buffers of ``(timestamp, value)`` samples.

    ``freshness_window`` is the trailing span over which the achieved sync
    frequency is counted; ``required_freq`` is the rate needed for full
    freshness.
    """

    capacity: int = 512
    freshness_window: float = 60.0
    required_freq: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)
    last_sync_time: dict = field(default_factory=dict)
    collection_period: dict = field(default_factory=dict)

    def __post_init__(self):
        for a in ATTRIBUTES:
            self.buffers.setdefault(a, deque(maxlen=self.capacity))
            self.last_sync_time.setdefault(a, None)
            self.collection_period.setdefault(a, 1.0)
            self.required_freq.setdefault(a, 1.0 if a in PERIODIC else 1.0 / self.freshness_window)

    def values(self, attribute: str) -> list:
        return [v for _, v in self.buffers[attribute]]

    def __len__(self) -> int:
        return sum(len(b) for b in self.buffers.values())


@dataclass(frozen=True)
class FreshnessState:
    f: np.ndarray  # achieved sync frequency per attribute, Hz
    F_req: np.ndarray  # required sync frequency per attribute, Hz
    age: np.ndarray  # age of information per attribute, s


@dataclass(frozen=True)
class SwipeDistribution:
    pmf: np.ndarray  # (n_types, S+1); last column is "watched to completion"

    @property
    def n_segments(self) -> int:
        return self.pmf.shape[1] - 1

    def expected_watch(self) -> np.ndarray:
        """Expected segments watched per type (completion counts as S)."""
        s = np.minimum(np.arange(1, self.pmf.shape[1] + 1), self.n_segments)
        return self.pmf @ s


def ingest_observation(pool: UdtPool, attribute: str, timestamp: float, value) -> UdtPool:
    if attribute not in pool.buffers:
        raise OutOfRange(f"unknown attribute {attribute!r}")
    last = pool.last_sync_time[attribute]
    if last is not None and timestamp <= last:
        raise NonMonotonicTimestamp(f"{attribute}: {timestamp} <= last {last}")
    pool.buffers[attribute].append((float(timestamp), value))
    pool.last_sync_time[attribute] = float(timestamp)
    return pool


def freshness_state(pool: UdtPool, now: float) -> FreshnessState:
    f, F, age = [], [], []
    for a in ATTRIBUTES:
        lo = now - pool.freshness_window
        count = sum(1 for t, _ in pool.buffers[a] if lo < t <= now)
        f.append(count / pool.freshness_window)
        F.append(pool.required_freq[a])
        last = pool.last_sync_time[a]
        age.append(np.inf if last is None else max(0.0, now - last))
    return FreshnessState(np.array(f), np.array(F), np.array(age))


def freshness_ratio(state: FreshnessState) -> float:
    """Mean over attributes of achieved/required sync frequency, each capped at 1."""
    F = np.asarray(state.F_req, dtype=float)
    if np.any(F <= 0):
        raise OutOfRange("required frequency must be positive")
    per_attr = np.minimum(1.0, np.asarray(state.f, dtype=float) / F)
    return float(min(1.0, per_attr.mean()))


def estimate_swipe_distribution(pool: UdtPool, n_types: int, n_segments: int,
                                smoothing: float = 1.0) -> SwipeDistribution:
    """Laplace-smoothed empirical swipe pmf per video type.

    Swipe events are stored as ``(type, swipe_index)`` with the index in
    1..S+1 (S+1 = watched to completion).
    """
    if n_segments < 1:
        raise OutOfRange("n_segments must be >= 1")
    counts = np.zeros((n_types, n_segments + 1))
    for t, s in pool.values("swipe_events"):
        if 0 <= t < n_types and 1 <= s <= n_segments + 1:
            counts[t, s - 1] += 1
    total = counts.sum(axis=1, keepdims=True)
    denom = total + smoothing * (n_segments + 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        pmf = (counts + smoothing) / denom
    empty = denom[:, 0] == 0
    pmf[empty] = 1.0 / (n_segments + 1)
    return SwipeDistribution(pmf)


def estimate_preference(pool: UdtPool, n_types: int = N_TYPES) -> np.ndarray:
    """Share of watch time per type; uniform when nothing has been watched."""
    acc = np.zeros(n_types)
    for t, seconds in pool.values("preference_signals"):
        acc[t] += seconds
    total = acc.sum()
    if total <= 0:
        return np.full(n_types, 1.0 / n_types)
    return acc / total


def feature_importance_pca(data, variance_kept: float = 0.8) -> np.ndarray:
    """Eigenvalue-weighted squared loadings of the leading principal components.

    Components of the correlation matrix are retained, largest first, until
    they explain ``variance_kept`` of the total variance. With every
    component retained the score would be uniform, since each diagonal entry
    of a correlation matrix is 1.
    """
    X = np.asarray(data, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise TooFewSamples("need at least two samples")
    std = X.std(axis=0, ddof=1)
    live = std > 1e-12
    out = np.zeros(X.shape[1])
    if not live.any():
        return out
    Z = (X[:, live] - X[:, live].mean(axis=0)) / std[live]
    corr = Z.T @ Z / (X.shape[0] - 1)
    lam, W = np.linalg.eigh(corr)
    lam = np.clip(lam[::-1], 0.0, None)
    W = W[:, ::-1]
    cum = np.cumsum(lam) / lam.sum()
    k = int(np.searchsorted(cum, variance_kept - 1e-12) + 1)
    # keep eigenvalue ties at the cut together so the result is basis-independent
    while k < len(lam) and abs(lam[k] - lam[k - 1]) <= 1e-9 * lam[0]:
        k += 1
    score = (W[:, :k] ** 2) @ lam[:k] / lam[:k].sum()
    out[live] = score
    return out


def drift_statistic(previous, recent, eps: float = 1e-9) -> float:
    """Standardized mean shift between two consecutive sample windows."""
    previous = np.asarray(previous, dtype=float).ravel()
    recent = np.asarray(recent, dtype=float).ravel()
    if previous.size == 0 or recent.size == 0:
        return 0.0
    pooled = np.sqrt(0.5 * (previous.var() + recent.var()))
    return float(abs(recent.mean() - previous.mean()) / (pooled + eps))


def adapt_collection_period(importance: float, drift: float, t_min: float = 1.0,
                            t_max: float = 9.0) -> float:
    if not 0.0 <= importance <= 1.0:
        raise OutOfRange("importance must lie in [0, 1]")
    period = t_min + (t_max - t_min) * (1.0 - importance) * np.exp(-max(drift, 0.0))
    return float(np.clip(period, t_min, t_max))


@dataclass(frozen=True)
class UdtAbstraction:
    """What a user twin hands to the infrastructure and slice twins."""

    position: np.ndarray  # (2,)
    gain: float  # SNR·Hz from the last channel report
    swipe: SwipeDistribution
    preference: np.ndarray


class UserTwin:
    def __init__(self, user_id: int, capacity: int = 512, freshness_window: float = 60.0):
        self.user_id = user_id
        self.pool = UdtPool(capacity=capacity, freshness_window=freshness_window)

    def abstraction(self, n_segments: int, smoothing: float) -> UdtAbstraction:
        pos = self.pool.values("position")
        ch = self.pool.values("channel_quality")
        return UdtAbstraction(
            position=np.asarray(pos[-1] if pos else (0.0, 0.0), dtype=float),
            gain=float(10 ** (ch[-1] / 10.0)) if ch else 0.0,
            swipe=estimate_swipe_distribution(self.pool, N_TYPES, n_segments, smoothing),
            preference=estimate_preference(self.pool),
        )


SNAPSHOT_COLUMNS = ("user", "attribute", "age", "f", "period")


def write_snapshot(path, twins, now: float) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SNAPSHOT_COLUMNS)
        for twin in twins:
            st = freshness_state(twin.pool, now)
            for i, a in enumerate(ATTRIBUTES):
                w.writerow([twin.user_id, a, f"{st.age[i]:.3f}", f"{st.f[i]:.4f}",
                            f"{twin.pool.collection_period[a]:.3f}"])
