"""User clustering into multicast groups: tabular RL, DBSCAN and a key heuristic."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .._kernels import link_rate_scalar
from ..errors import NoUsers, OutOfRange
from ..physnet import Grouping, nearest_bs

NOISE = -1


def user_features(abstractions, area: float, ref_bandwidth: float = 1e6) -> np.ndarray:
    """Clustering inputs in [0, 1]: position, preference, expected swipe index, link quality.

    Columns are ``x, y``, the preference vector, the expected swipe index
    per type divided by ``S + 1``, and the link rate at ``ref_bandwidth``
    relative to the best user.
    """
    pos = np.stack([a.position for a in abstractions]) / area
    pref = np.stack([a.preference for a in abstractions])
    swipe = []
    for a in abstractions:
        pmf = a.swipe.pmf
        idx = np.arange(1, pmf.shape[1] + 1)
        swipe.append(pmf @ idx / pmf.shape[1])
    rates = np.array([link_rate_scalar(a.gain, ref_bandwidth) for a in abstractions])
    quality = rates / rates.max() if rates.max() > 0 else np.zeros_like(rates)
    return np.clip(np.column_stack([pos, pref, np.stack(swipe), quality]), 0.0, 1.0)


def cluster_heuristic(preferences: np.ndarray, bs_of_user: np.ndarray) -> Grouping:
    """One group per (serving BS, most preferred type)."""
    top = np.argmax(np.asarray(preferences), axis=1)
    keys = list(zip(np.asarray(bs_of_user).tolist(), top.tolist()))
    return Grouping.from_keys(keys, np.asarray(bs_of_user))


def dbscan_labels(X: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """DBSCAN over Euclidean distance; noise is labelled ``-1``.

    Points are scanned in index order and clusters are numbered in order of
    discovery. A border point reachable from two clusters keeps the first.
    """
    if eps <= 0 or min_pts < 1:
        raise OutOfRange("need eps > 0 and min_pts >= 1")
    X = np.asarray(X, dtype=float)
    n = len(X)
    d2 = ((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=-1)
    neigh = [np.flatnonzero(row <= eps * eps) for row in d2]
    labels = np.full(n, -2)  # -2 = unvisited
    cluster = 0
    for p in range(n):
        if labels[p] != -2:
            continue
        if len(neigh[p]) < min_pts:
            labels[p] = NOISE
            continue
        labels[p] = cluster
        queue = deque(q for q in neigh[p] if q != p)
        while queue:
            q = queue.popleft()
            if labels[q] == NOISE:
                labels[q] = cluster
            if labels[q] != -2:
                continue
            labels[q] = cluster
            if len(neigh[q]) >= min_pts:
                queue.extend(neigh[q])
        cluster += 1
    return labels


def kdistance_eps(X: np.ndarray, min_pts: int) -> float:
    """Knee of the sorted k-distance curve (k = ``min_pts``), a data-driven DBSCAN radius.

    The knee is the point of the normalized ascending curve farthest below
    its chord. Degenerate inputs fall back to the largest k-distance.
    """
    X = np.asarray(X, dtype=float)
    n = len(X)
    if n < 2:
        return 1.0
    k = min(max(min_pts, 1), n) - 1
    d = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=-1))
    kd = np.sort(np.sort(d, axis=1)[:, k])
    span = kd[-1] - kd[0]
    if span <= 0:
        return float(kd[-1]) if kd[-1] > 0 else 1.0
    x = np.linspace(0.0, 1.0, n)
    y = (kd - kd[0]) / span
    return float(kd[int(np.argmax(x - y))])


def cluster_dbscan(features: np.ndarray, bs_of_user: np.ndarray, eps: float | None, min_pts: int) -> Grouping:
    """DBSCAN groups; noise points become singletons and clusters split by serving BS.

    ``eps=None`` picks the radius from the k-distance knee.
    """
    if eps is None:
        eps = kdistance_eps(features, min_pts)
    labels = dbscan_labels(features, eps, min_pts)
    keys = []
    for u, (lab, bs) in enumerate(zip(labels.tolist(), np.asarray(bs_of_user).tolist())):
        keys.append((0, lab, bs) if lab != NOISE else (1, u, bs))
    return Grouping.from_keys(keys, np.asarray(bs_of_user))


@dataclass
class QTable:
    """Tabular action values over (feature bucket, group slot)."""

    lr: float = 0.5
    bins: int = 3
    eps_start: float = 1.0
    eps_end: float = 0.05
    values: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    last_actions: np.ndarray | None = None  # slots chosen by the last cluster_rl call

    def bucket(self, feature_row) -> tuple:
        f = np.asarray(feature_row, dtype=float)
        return tuple(np.minimum((f * self.bins).astype(int), self.bins - 1).tolist())

    def q(self, b: tuple, g: int) -> float:
        return self.values.get((b, g), 0.0)

    def greedy(self, b: tuple, n_actions: int) -> int:
        vals = [self.q(b, g) for g in range(n_actions)]
        return int(np.argmax(vals))  # first maximum -> lowest group id

    def update(self, b: tuple, g: int, reward: float) -> None:
        key = (b, g)
        old = self.values.get(key, 0.0)
        self.values[key] = old + self.lr * (reward - old)
        self.counts[key] = self.counts.get(key, 0) + 1

    def epsilon(self, episode: int, episodes: int) -> float:
        if episodes <= 1:
            return self.eps_end
        frac = episode / (episodes - 1)
        return self.eps_start + (self.eps_end - self.eps_start) * frac


def grouping_from_actions(actions: np.ndarray, bs_of_user: np.ndarray) -> Grouping:
    """Group key is (BS, action); ids follow sorted key order, empty keys vanish."""
    return Grouping.from_keys(list(zip(np.asarray(bs_of_user).tolist(), np.asarray(actions).tolist())),
                              np.asarray(bs_of_user))


def cluster_rl(
    features: np.ndarray,
    bs_of_user: np.ndarray,
    g_max: int,
    utility: Callable[[Grouping], float],
    episodes: int,
    rng: np.random.Generator,
    qtable: QTable | None = None,
    initial_actions: np.ndarray | None = None,
) -> tuple[Grouping, QTable]:
    """Contextual-bandit Q-learning over group assignments.

    Each episode visits users in shuffled order and moves the visited user
    to an epsilon-greedy group slot at its serving BS. The reward is the
    change in ``utility`` caused by the move. After training, every user
    takes its greedy slot; if an assignment visited during training scored
    higher than that greedy one, the best visited assignment is returned.
    """
    features = np.asarray(features, dtype=float)
    bs_of_user = np.asarray(bs_of_user)
    n = len(features)
    if n == 0:
        raise NoUsers("nothing to cluster")
    if g_max < 1 or episodes < 1:
        raise OutOfRange("need g_max >= 1 and episodes >= 1")
    table = qtable if qtable is not None else QTable()
    if g_max == 1:
        table.last_actions = np.zeros(n, dtype=int)
        return grouping_from_actions(table.last_actions, bs_of_user), table

    buckets = [table.bucket(f) for f in features]
    actions = np.zeros(n, dtype=int) if initial_actions is None else np.array(initial_actions, dtype=int)
    current = utility(grouping_from_actions(actions, bs_of_user))
    best_val, best_actions = current, actions.copy()
    for ep in range(episodes):
        eps = table.epsilon(ep, episodes)
        for u in rng.permutation(n):
            if rng.random() < eps:
                a = int(rng.integers(g_max))
            else:
                a = table.greedy(buckets[u], g_max)
            trial = actions.copy()
            trial[u] = a
            value = current if a == actions[u] else utility(grouping_from_actions(trial, bs_of_user))
            table.update(buckets[u], a, value - current)
            actions, current = trial, value
            if current > best_val:
                best_val, best_actions = current, actions.copy()

    final = np.array([table.greedy(b, g_max) for b in buckets])
    if not np.array_equal(final, best_actions) and utility(grouping_from_actions(final, bs_of_user)) < best_val:
        final = best_actions
    table.last_actions = final
    return grouping_from_actions(final, bs_of_user), table


def serving_bs(positions: np.ndarray, bs_positions: np.ndarray) -> np.ndarray:
    return nearest_bs(positions, bs_positions)
