"""Infrastructure digital twin: group demand, slot allocation and emulation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import _kernels, kpi
from .domain import ScenarioConfig, VideoCatalog
from .errors import EmptyGroup, UnknownGroup
from .physnet import Grouping, simulate_window
from .sdt.reservation import SliceReservation, reserve_convex
from .udt import UdtAbstraction


@dataclass(frozen=True)
class GroupDemand:
    group: int
    expected_bandwidth: float  # bits/s
    expected_compute: float  # ops/s
    n_members: int
    expected_watch_fraction: np.ndarray  # per video type
    bandwidth_hz: float  # spectrum needed to carry expected_bandwidth to the worst member
    version: int
    recommended: np.ndarray  # video ids


def recommend(preference: np.ndarray, catalog: VideoCatalog, k: int) -> np.ndarray:
    """Top-``k`` videos by preference of their type; ties broken by video id."""
    score = np.asarray(preference)[catalog.type_index]
    order = np.lexsort((np.arange(len(catalog)), -score))
    return order[:k]


def _watch_cdf(pmf: np.ndarray) -> np.ndarray:
    """P(segments watched <= s) for s = 0..S, completion folded into S."""
    S = pmf.shape[-1] - 1
    mass = pmf[..., :S].copy()
    mass[..., S - 1] += pmf[..., S]
    zero = np.zeros(pmf.shape[:-1] + (1,))
    return np.concatenate([zero, np.cumsum(mass, axis=-1)], axis=-1)


def aggregate_group_demand(
    group: int,
    members: Sequence[int],
    abstractions: Sequence[UdtAbstraction],
    catalog: VideoCatalog,
    k: int,
    fair_share_hz: float,
    b_max: float,
) -> GroupDemand:
    """Predict one group's bandwidth and compute demand from its members' twins.

    The stream has to cover, for every video, the longest view among members
    while keeping pace with the member who swipes soonest, so the streaming
    factor per type is ``E[max watch] / min member E[watch]``. The version is
    the highest rung whose streamed rate (bitrate times that factor) the worst
    member can sustain at ``fair_share_hz``.
    """
    members = list(members)
    if not members:
        raise EmptyGroup(f"group {group} has no members")
    S = catalog.n_segments
    pmfs = np.stack([abstractions[m].swipe.pmf for m in members])  # (n, T, S+1)
    prefs = np.stack([abstractions[m].preference for m in members])
    gmin = min(abstractions[m].gain for m in members)

    seg_counts = np.minimum(np.arange(1, S + 2), S)
    e_watch = pmfs @ seg_counts  # (n, T)
    watch_fraction = e_watch.mean(axis=0) / S
    cdf_max = np.prod(_watch_cdf(pmfs), axis=0)  # (T, S+1)
    e_max = (1.0 - cdf_max[:, :S]).sum(axis=1)
    factor = np.maximum(1.0, e_max / e_watch.min(axis=0))

    rec = recommend(prefs.mean(axis=0), catalog, k)
    type_w = np.bincount(catalog.type_index[rec], minlength=pmfs.shape[1]) / len(rec)
    stream_factor = float(type_w @ factor)

    ladder = catalog.versions[rec[0]]
    sustainable = _kernels.link_rate_scalar(gmin, fair_share_hz)
    fits = np.flatnonzero(ladder * stream_factor <= sustainable)
    version = int(fits[-1]) if fits.size else 0
    bandwidth = float(ladder[version] * stream_factor)
    compute = float(catalog.compute_cost[rec, version].mean() / catalog.segment_len * stream_factor)
    hz = _kernels.hz_for_rate(gmin, bandwidth, b_max)
    return GroupDemand(
        group=group,
        expected_bandwidth=bandwidth,
        expected_compute=compute,
        n_members=len(members),
        expected_watch_fraction=watch_fraction,
        bandwidth_hz=float(hz),
        version=version,
        recommended=rec,
    )


def group_demands(grouping: Grouping, abstractions, catalog: VideoCatalog, cfg: ScenarioConfig,
                  k: int | None = None) -> list[GroupDemand]:
    k = playlist_length(cfg) if k is None else k
    n_users = len(grouping.assignment)
    sizes = grouping.sizes()
    return [
        aggregate_group_demand(
            g, grouping.members(g), abstractions, catalog, k,
            fair_share_hz=cfg.total_bandwidth * sizes[g] / n_users, b_max=cfg.total_bandwidth,
        )
        for g in range(grouping.n_groups)
    ]


def playlist_length(cfg: ScenarioConfig) -> int:
    # enough entries for a user who swipes after every segment
    return max(cfg.recommend_k, int(np.ceil(cfg.large_ts / cfg.catalog.segment_len)) + 1)


def allocate_small_timescale(reservation: Mapping, backlogs: Sequence[Mapping]) -> list[dict]:
    """Slot-by-slot backlog-proportional allocation with one-slot lending.

    ``reservation`` maps group id -> reserved Hz; ``backlogs`` holds one
    mapping of group id -> queued bits per slot. Returns one allocation
    mapping per slot.
    """
    ids = sorted(reservation)
    res = np.array([float(reservation[g]) for g in ids])
    debt = np.zeros(len(ids))
    out = []
    for slot in backlogs:
        unknown = set(slot) - set(ids)
        if unknown:
            raise UnknownGroup(f"backlog for unreserved groups {sorted(unknown)}")
        missing = set(ids) - set(slot)
        if missing:
            raise UnknownGroup(f"no backlog given for groups {sorted(missing)}")
        backlog = np.array([float(slot[g]) for g in ids])
        alloc, debt = _kernels.lend_slot(res, backlog, debt)
        out.append(dict(zip(ids, alloc.tolist())))
    return out


class TwinEmulator:
    """Emulates one large window on twin-side state only.

    Positions and channels are frozen at the last report and swipes come
    from the twins' estimated distributions. Utility is averaged over
    ``runs`` emulations whose seeds are fixed, so candidate groupings face
    identical randomness. Group demands are cached by member set.
    """

    def __init__(self, abstractions: Sequence[UdtAbstraction], catalog: VideoCatalog,
                 cfg: ScenarioConfig, seed: int = 0, substeps: int | None = None, runs: int = 1):
        if runs < 1:
            raise ValueError("runs must be >= 1")
        self.abstractions = list(abstractions)
        self.catalog = catalog
        self.cfg = cfg if substeps is None else dataclasses.replace(cfg, substeps=substeps)
        self.seed = seed
        self.runs = runs
        gains = np.array([a.gain for a in self.abstractions])
        self.gains = np.tile(gains, (cfg.slots_per_window, 1))
        self.pmfs = np.stack([a.swipe.pmf for a in self.abstractions])
        self._k = playlist_length(cfg)
        self._cache: dict = {}

    def demands(self, grouping: Grouping) -> list[GroupDemand]:
        cfg = self.cfg
        n_users = len(grouping.assignment)
        out = []
        for g in range(grouping.n_groups):
            members = tuple(grouping.members(g).tolist())
            d = self._cache.get(members)
            if d is None:
                d = aggregate_group_demand(
                    0, members, self.abstractions, self.catalog, self._k,
                    fair_share_hz=cfg.total_bandwidth * len(members) / n_users, b_max=cfg.total_bandwidth,
                )
                self._cache[members] = d
            out.append(dataclasses.replace(d, group=g))
        return out

    def _reports(self, grouping: Grouping):
        cfg = self.cfg
        demands = self.demands(grouping)
        n = np.array([d.n_members for d in demands], dtype=float)
        res = reserve_convex(
            [d.bandwidth_hz for d in demands], cfg.total_bandwidth,
            [d.expected_compute for d in demands], cfg.total_compute, n, cfg.headroom,
        )
        playlists = np.stack([d.recommended for d in demands])
        reports = [
            simulate_window(self.gains, grouping, res.bandwidth, res.compute, playlists, self.pmfs,
                            self.catalog, cfg, np.random.default_rng([self.seed, r]))
            for r in range(self.runs)
        ]
        return reports, res, demands

    def run(self, grouping: Grouping):
        """First emulation run: ``(report, reservation, demands)``."""
        reports, res, demands = self._reports(grouping)
        return reports[0], res, demands

    def utility(self, grouping: Grouping) -> float:
        cfg = self.cfg
        reports, _, _ = self._reports(grouping)
        vals = []
        for report in reports:
            sats = kpi.satisfaction_vector(report, self.catalog.versions[0], cfg.mu_stall)
            bw, ops = kpi.usage_fractions(report, cfg.total_bandwidth, cfg.total_compute)
            vals.append(kpi.system_utility(sats, bw * cfg.total_bandwidth, cfg.total_bandwidth,
                                           ops * cfg.total_compute, cfg.total_compute, cfg.gamma_r))
        return float(np.mean(vals))


def emulate_utility(grouping: Grouping, abstractions, catalog: VideoCatalog, cfg: ScenarioConfig,
                    seed: int = 0) -> float:
    """System utility of ``grouping`` under convex reservation, emulated for one window."""
    grouping.validate()
    return TwinEmulator(abstractions, catalog, cfg, seed).utility(grouping)


__all__ = [
    "GroupDemand", "SliceReservation", "aggregate_group_demand", "allocate_small_timescale",
    "emulate_utility", "group_demands", "playlist_length", "recommend", "TwinEmulator",
]
