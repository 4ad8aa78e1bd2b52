"""Ground-truth physical domain: mobility, radio channel, swipes and playback."""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .domain import N_TYPES, ScenarioConfig, VideoCatalog
from .errors import EmptyGroup, OutOfRange, UnassignedUser

PL_INTERCEPT_DB = 128.1
PL_SLOPE_DB = 37.6
MIN_DISTANCE_M = 1.0


@dataclass(frozen=True)
class BaseStation:
    id: int
    position: tuple
    attached_edge_server: int = 0


@dataclass(frozen=True)
class UserState:
    """Ground truth for one user.

    The waypoint path is closed; ``arc`` is the distance travelled along it
    modulo its perimeter. Playback buffers live only inside
    :func:`simulate_window`, which starts every large window from empty.
    """

    id: int
    position: tuple
    path: np.ndarray  # (n_waypoints, 2), implicitly closed
    arc: float
    speed: float  # m/s
    serving_bs: int
    true_preference: np.ndarray  # (N_TYPES,)
    swipe_p: np.ndarray  # (N_TYPES,) truncated-geometric parameter
    swipe_q: np.ndarray  # (N_TYPES,) completion probability


def make_base_stations(cfg: ScenarioConfig) -> list[BaseStation]:
    return [BaseStation(i, tuple(p)) for i, p in enumerate(cfg.bs_positions.tolist())]


def nearest_bs(positions: np.ndarray, bs_positions: np.ndarray) -> np.ndarray:
    """Index of the closest BS per row; argmin keeps the lowest id on ties."""
    positions = np.atleast_2d(positions)
    d = np.linalg.norm(positions[:, None, :] - bs_positions[None, :, :], axis=2)
    return np.argmin(d, axis=1)


def _path_geometry(path: np.ndarray):
    closed = np.vstack([path, path[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    return closed, cum


def position_on_path(path: np.ndarray, arc) -> np.ndarray:
    """Position(s) at distance ``arc`` along the closed path (wraps at the end)."""
    closed, cum = _path_geometry(path)
    perimeter = cum[-1]
    arc = np.asarray(arc, dtype=float)
    if perimeter <= 0:
        return np.broadcast_to(closed[0], arc.shape + (2,)).copy()
    s = np.mod(arc, perimeter)
    return np.stack([np.interp(s, cum, closed[:, 0]), np.interp(s, cum, closed[:, 1])], axis=-1)


def step_mobility(user: UserState, dt: float, bs_positions: np.ndarray) -> UserState:
    if dt < 0:
        raise OutOfRange("dt must be >= 0")
    if dt == 0:
        return user
    arc = user.arc + user.speed * dt
    pos = position_on_path(user.path, arc)
    bs = int(nearest_bs(pos, bs_positions)[0])
    return dataclasses.replace(user, arc=arc, position=(float(pos[0]), float(pos[1])), serving_bs=bs)


def trajectory(users: Sequence[UserState], t_offsets: np.ndarray) -> np.ndarray:
    """Positions (len(t_offsets), n_users, 2) of every user ``t`` seconds ahead."""
    out = np.empty((len(t_offsets), len(users), 2))
    for i, u in enumerate(users):
        out[:, i, :] = position_on_path(u.path, u.arc + u.speed * np.asarray(t_offsets))
    return out


def path_loss(distance_m):
    d = np.maximum(np.asarray(distance_m, dtype=float), MIN_DISTANCE_M)
    pl = PL_INTERCEPT_DB + PL_SLOPE_DB * np.log10(d / 1000.0)
    return float(pl) if pl.ndim == 0 else pl


def link_rate(tx_dbm, pl_db, noise_dbm_hz, bandwidth_hz):
    """Shannon rate in bits/s; noise power grows with the bandwidth."""
    bw = np.asarray(bandwidth_hz, dtype=float)
    if np.any(bw < 0):
        raise OutOfRange("bandwidth must be >= 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        noise_dbm = noise_dbm_hz + 10.0 * np.log10(bw)
        snr_db = tx_dbm - np.asarray(pl_db, dtype=float) - noise_dbm
        rate = bw * np.log2(1.0 + 10.0 ** (snr_db / 10.0))
    rate = np.where(bw > 0, rate, 0.0)
    return float(rate) if rate.ndim == 0 else rate


def snr_gain(tx_dbm, pl_db, noise_dbm_hz):
    """SNR·Hz such that ``rate(b) = b * log2(1 + gain / b)``."""
    return 10.0 ** ((tx_dbm - np.asarray(pl_db, dtype=float) - noise_dbm_hz) / 10.0)


def channel_gains(positions: np.ndarray, bs_positions: np.ndarray, cfg: ScenarioConfig,
                  shadow_db: np.ndarray | None = None) -> np.ndarray:
    """SNR·Hz towards the nearest BS for positions shaped (..., 2)."""
    d = np.linalg.norm(positions[..., None, :] - bs_positions, axis=-1).min(axis=-1)
    pl = path_loss(d)
    if shadow_db is not None:
        pl = pl + shadow_db
    return snr_gain(cfg.tx_power, pl, cfg.noise_density)


def multicast_rate(member_rates) -> float:
    """A multicast stream is decodable only at the worst member's rate."""
    rates = np.asarray(member_rates, dtype=float)
    if rates.size == 0:
        raise EmptyGroup("multicast group has no members")
    return float(rates.min())


def swipe_pmf(p: float, q: float, n_segments: int) -> np.ndarray:
    """pmf over swipe indices 1..S plus S+1 (watched to completion).

    Index ``s`` means the user leaves after watching segment ``s``.
    """
    s = np.arange(1, n_segments + 1)
    if q >= 1.0:
        body = np.zeros(n_segments)
    else:
        p = min(max(p, 1e-12), 1.0)
        geo = p * (1.0 - p) ** (s - 1)
        body = (1.0 - q) * geo / geo.sum()
    return np.append(body, q)


def user_swipe_pmfs(user: UserState, n_segments: int) -> np.ndarray:
    return np.stack([swipe_pmf(user.swipe_p[t], user.swipe_q[t], n_segments) for t in range(N_TYPES)])


def generate_swipe(user: UserState, video_type: int, n_segments: int, rng: np.random.Generator) -> int:
    pmf = swipe_pmf(user.swipe_p[video_type], user.swipe_q[video_type], n_segments)
    idx = int(np.searchsorted(np.cumsum(pmf), rng.random(), side="right")) + 1
    return min(idx, n_segments + 1)  # guard the cumsum falling short of 1 by rounding


def sample_swipe_indices(pmfs: np.ndarray, types: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Vectorized draws: ``pmfs`` (U, T, S+1), ``types`` (U, K) -> indices (U, K) in 1..S+1."""
    cdf = np.cumsum(pmfs, axis=-1)
    cdf[..., -1] = 1.0
    u = rng.random(types.shape)
    rows = cdf[np.arange(types.shape[0])[:, None], types]  # (U, K, S+1)
    return (rows <= u[..., None]).sum(axis=-1) + 1


@dataclass
class Grouping:
    """Partition of users into multicast groups, each tied to one BS."""

    assignment: np.ndarray  # (U,) group id per user, ids 0..G-1
    group_bs: np.ndarray  # (G,)

    @property
    def n_groups(self) -> int:
        return len(self.group_bs)

    def members(self, g: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == g)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n_groups)

    @classmethod
    def from_keys(cls, keys: Sequence, bs_of_user: np.ndarray) -> "Grouping":
        """Build a grouping from hashable per-user keys; ids follow sorted key order."""
        uniq = sorted(set(keys))
        index = {k: i for i, k in enumerate(uniq)}
        assignment = np.array([index[k] for k in keys], dtype=np.int64)
        group_bs = np.zeros(len(uniq), dtype=np.int64)
        for u, g in enumerate(assignment):
            group_bs[g] = bs_of_user[u]
        return cls(assignment, group_bs)

    def validate(self, bs_of_user: np.ndarray | None = None) -> None:
        sizes = self.sizes()
        if np.any(sizes == 0):
            raise EmptyGroup(f"empty groups {np.flatnonzero(sizes == 0).tolist()}")
        if self.assignment.min(initial=0) < 0 or self.assignment.max(initial=0) >= self.n_groups:
            raise UnassignedUser("assignment references an unknown group")
        if bs_of_user is not None and np.any(self.group_bs[self.assignment] != bs_of_user):
            raise OutOfRange("a group mixes users of different serving BSs")


@dataclass
class PlaybackReport:
    window_s: float
    assignment: np.ndarray  # (U,)
    watched_by_version: np.ndarray  # (U, V)
    stall_time: np.ndarray  # (U,)
    delivered: np.ndarray  # (U,) segments stored
    videos_finished: np.ndarray  # (U,) views ended by swipe or completion
    partial_segments: np.ndarray  # (U,) segments watched of the unfinished view
    swipe_index: np.ndarray  # (U, K) drawn swipe index per playlist entry
    playlist_types: np.ndarray  # (U, K) type of each user's playlist entries
    bits_sent: np.ndarray  # (G,)
    ops_used: np.ndarray  # (G,)
    occupied_hz_s: np.ndarray  # (G,)
    allocation: np.ndarray  # (G, slots) Hz
    capacity_bits: np.ndarray  # (G, slots)
    segment_len: float = 1.0

    @property
    def watched(self) -> np.ndarray:
        return self.watched_by_version.sum(axis=1)

    def swipe_events(self, u: int):
        """Finished views of user ``u`` as (video type, swipe index)."""
        n = int(self.videos_finished[u])
        return list(zip(self.playlist_types[u, :n].tolist(), self.swipe_index[u, :n].tolist()))

    def watch_time_by_type(self, u: int, n_segments: int) -> np.ndarray:
        out = np.zeros(N_TYPES)
        n = int(self.videos_finished[u])
        segs = np.minimum(self.swipe_index[u, :n], n_segments)
        np.add.at(out, self.playlist_types[u, :n], segs * self.segment_len)
        if n < self.playlist_types.shape[1]:
            out[self.playlist_types[u, n]] += self.partial_segments[u] * self.segment_len
        return out


def simulate_window(
    gains: np.ndarray,
    grouping: Grouping,
    reservation_bw: np.ndarray,
    reservation_ops: np.ndarray,
    playlists: np.ndarray,
    swipe_pmfs: np.ndarray,
    catalog: VideoCatalog,
    cfg: ScenarioConfig,
    rng: np.random.Generator,
) -> PlaybackReport:
    """Stream one large window.

    ``gains`` (slots, U) holds each user's SNR·Hz per small slot, ``playlists``
    (G, K) the recommended video ids per group and ``swipe_pmfs`` (U, T, S+1)
    the distribution swipes are drawn from.
    """
    n_users = gains.shape[1]
    if grouping.assignment.shape != (n_users,):
        raise UnassignedUser("every user must belong to exactly one group")
    if np.any(grouping.assignment < 0) or np.any(grouping.assignment >= grouping.n_groups):
        raise UnassignedUser("assignment references an unknown group")
    if len(reservation_bw) != grouping.n_groups or len(reservation_ops) != grouping.n_groups:
        raise OutOfRange("schedule must cover every group")
    n_seg = catalog.n_segments
    order = np.argsort(grouping.assignment, kind="stable")
    ptr = np.concatenate([[0], np.cumsum(grouping.sizes())]).astype(np.int64)
    user_lists = playlists[grouping.assignment]  # (U, K)
    types = catalog.type_index[user_lists]
    swipes = sample_swipe_indices(swipe_pmfs, types, rng)
    watch = np.minimum(swipes, n_seg).astype(np.int64)
    out = _kernels.simulate_kernel(
        ptr, order.astype(np.int64), np.ascontiguousarray(gains, dtype=np.float64),
        np.asarray(reservation_bw, dtype=np.float64), np.asarray(reservation_ops, dtype=np.float64),
        np.ascontiguousarray(playlists, dtype=np.int64), watch,
        catalog.versions, catalog.compute_cost, n_seg, float(catalog.segment_len),
        float(cfg.small_ts), int(cfg.substeps), int(cfg.buffer_cap),
    )
    watched_v, stall, delivered, n_done, partial, bits, ops, occ, alloc, cap_bits = out
    return PlaybackReport(
        window_s=gains.shape[0] * cfg.small_ts,
        assignment=grouping.assignment.copy(),
        watched_by_version=watched_v,
        stall_time=stall,
        delivered=delivered,
        videos_finished=n_done,
        partial_segments=partial,
        swipe_index=swipes,
        playlist_types=types,
        bits_sent=bits,
        ops_used=ops,
        occupied_hz_s=occ,
        allocation=alloc,
        capacity_bits=cap_bits,
        segment_len=catalog.segment_len,
    )


TRACE_COLUMNS = ("window", "user", "group", "delivered", "watched", "stall_s", "swipes")


def write_trace(path, window: int, report: PlaybackReport, append: bool = True) -> None:
    """Append one window's per-user rows to a CSV trace."""
    mode = "a" if append else "w"
    with open(path, mode, newline="") as fh:
        w = csv.writer(fh)
        if fh.tell() == 0:
            w.writerow(TRACE_COLUMNS)
        for u in range(len(report.assignment)):
            w.writerow([
                window, u, int(report.assignment[u]), int(report.delivered[u]),
                int(report.watched[u]), f"{report.stall_time[u]:.3f}",
                int(report.videos_finished[u]),
            ])


def spawn_users(cfg: ScenarioConfig, rng: np.random.Generator) -> list[UserState]:
    """Synthetic population around the BSs.

    Each user has a dominant preferred type and a patience class; the
    per-type swipe parameters lean towards longer viewing for liked types.
    """
    bs_pos = cfg.bs_positions
    vmin, vmax = cfg.speed_range_ms
    patience_p = np.array([0.35, 0.18, 0.08])
    patience_q = np.array([0.05, 0.15, 0.35])
    users = []
    for uid in range(cfg.n_users):
        home = bs_pos[uid % cfg.n_bs]
        r = cfg.user_radius * np.sqrt(rng.random())
        theta = rng.uniform(0, 2 * np.pi)
        start = np.clip(home + r * np.array([np.cos(theta), np.sin(theta)]), 0.0, cfg.area)
        waypoints = np.clip(start + rng.uniform(-150.0, 150.0, size=(3, 2)), 0.0, cfg.area)
        path = np.vstack([start, waypoints])
        dominant = rng.integers(N_TYPES)
        pref = 0.4 * rng.dirichlet(np.full(N_TYPES, 0.5))
        pref[dominant] += 0.6
        cls = rng.integers(3)
        rel = pref / pref.max()
        p = np.clip(patience_p[cls] * (1.5 - rel), 0.02, 0.95)
        q = np.clip(patience_q[cls] * (0.5 + rel), 0.0, 0.9)
        users.append(UserState(
            id=uid,
            position=(float(start[0]), float(start[1])),
            path=path,
            arc=0.0,
            speed=float(rng.uniform(vmin, vmax)),
            serving_bs=int(nearest_bs(start, bs_pos)[0]),
            true_preference=pref,
            swipe_p=p,
            swipe_q=q,
        ))
    return users
