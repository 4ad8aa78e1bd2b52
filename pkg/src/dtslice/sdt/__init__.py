"""Slice digital twin: large-timescale clustering and resource reservation."""

from .clustering import (
    QTable,
    cluster_dbscan,
    cluster_heuristic,
    cluster_rl,
    dbscan_labels,
    kdistance_eps,
    grouping_from_actions,
    user_features,
)
from .reservation import (
    SliceReservation,
    grid_bnb,
    objective,
    reserve_bnb,
    reserve_convex,
    reserve_historical,
    water_fill,
)

__all__ = [
    "QTable", "SliceReservation", "cluster_dbscan", "cluster_heuristic", "cluster_rl",
    "dbscan_labels", "kdistance_eps", "grid_bnb", "grouping_from_actions", "objective", "reserve_bnb",
    "reserve_convex", "reserve_historical", "user_features", "water_fill",
]
