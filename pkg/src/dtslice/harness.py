"""Experiment orchestration: the two-timescale loop, scheme sweeps and CSV output."""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kpi, physnet, udt
from .domain import N_TYPES, ResourceSchedule, ScenarioConfig, build_catalog
from .errors import EmptyMetrics
from .idt import TwinEmulator, group_demands, playlist_length
from .sdt import (
    QTable, cluster_dbscan, cluster_heuristic, cluster_rl, reserve_bnb, reserve_convex,
    reserve_historical, user_features,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
METRIC_COLUMNS = (
    "scheme", "seed", "window", "user", "satisfaction", "groups", "bw_frac",
    "compute_frac", "freshness", "Q", "R", "V", "error",
)
SUMMARY_STATS = ("min", "q1", "median", "q3", "max", "mean", "std")


class SchemeId(str, enum.Enum):
    PROPOSED = "proposed"  # RL clustering + convex reservation
    OPTIMIZATION = "optimization"  # DBSCAN + branch-and-bound
    HEURISTIC = "heuristic"  # (BS, top type) groups + historical split


# independent random substreams per concern
STREAM_CATALOG = 0
STREAM_POPULATION = 1
STREAM_HISTORY = 2
STREAM_SWIPES = 3
STREAM_ORGANIC = 4
STREAM_RL = 5
STREAM_SHADOW = 6
STREAM_EMULATION = 7


def substream(seed: int, stream: int, *sub: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, *sub)))


@dataclass
class WindowRecord:
    scheme: str
    seed: int
    window: int
    satisfaction: np.ndarray
    n_groups: int
    bw_frac: float
    compute_frac: float
    freshness: float
    Q: float
    R: float
    V: float
    reserved_bw: float
    reserved_ops: float
    bits_sent: np.ndarray
    capacity_bits: np.ndarray  # per group, summed over slots
    segment_bits_max: float
    schedule: ResourceSchedule | None = None

    @property
    def consumption(self) -> float:
        return 0.5 * (self.bw_frac + self.compute_frac)


@dataclass
class RunMetrics:
    records: list = field(default_factory=list)
    errors: list = field(default_factory=list)  # (scheme, seed, message)

    def rows(self) -> list[tuple]:
        out = []
        for r in self.records:
            for u, s in enumerate(r.satisfaction.tolist()):
                out.append((r.scheme, r.seed, r.window, u, _fmt(s), r.n_groups, _fmt(r.bw_frac),
                            _fmt(r.compute_frac), _fmt(r.freshness), _fmt(r.Q), _fmt(r.R),
                            _fmt(r.V), ""))
        for scheme, seed, msg in self.errors:
            out.append((scheme, seed, -1, -1, "", "", "", "", "", "", "", "", msg))
        out.sort(key=lambda row: (row[0], row[1], row[2], row[3]))
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# dtslice metrics schema_version={SCHEMA_VERSION}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRIC_COLUMNS)
            w.writerows(self.rows())

    def satisfaction_by_scheme(self) -> dict:
        out: dict = {}
        for r in self.records:
            out.setdefault(r.scheme, []).append(r.satisfaction)
        return {k: np.concatenate(v) for k, v in out.items()}

    def consumption_by_scheme(self) -> dict:
        out: dict = {}
        for r in self.records:
            out.setdefault(r.scheme, []).append(r.consumption)
        return {k: np.asarray(v) for k, v in out.items()}


def _fmt(x: float) -> str:
    return format(float(x), ".9g")


class World:
    """Ground truth plus the user twins for one (scheme, seed) cell."""

    def __init__(self, cfg: ScenarioConfig, seed: int):
        self.cfg = cfg
        self.seed = seed
        self.catalog = build_catalog(cfg.catalog, substream(seed, STREAM_CATALOG))
        self.users = physnet.spawn_users(cfg, substream(seed, STREAM_POPULATION))
        self.bs_positions = cfg.bs_positions
        self.n_seg = self.catalog.n_segments
        self.true_pmfs = np.stack([physnet.user_swipe_pmfs(u, self.n_seg) for u in self.users])
        self.twins = [udt.UserTwin(u.id, cfg.udt_capacity, cfg.large_ts) for u in self.users]
        self.time = 0.0
        shadow_rng = substream(seed, STREAM_SHADOW)
        self.shadow_db = shadow_rng.normal(0.0, cfg.shadowing_sigma, size=len(self.users)) \
            if cfg.shadowing_sigma > 0 else None
        self._warm_up(substream(seed, STREAM_HISTORY))

    def _warm_up(self, rng: np.random.Generator) -> None:
        """Fill every twin with a viewing history and an initial position/channel report.

        A ``history_explore`` share of past views shows a uniformly random
        type, the rest follow the user's true preference.
        """
        H = self.cfg.history_views
        mix = self.cfg.history_explore
        for u, twin in zip(self.users, self.twins):
            types = rng.choice(N_TYPES, size=H, p=(1 - mix) * u.true_preference + mix / N_TYPES)
            idx = physnet.sample_swipe_indices(self.true_pmfs[u.id][None], types[None], rng)[0]
            for i, (t, s) in enumerate(zip(types.tolist(), idx.tolist())):
                ts = -float(H - i)
                udt.ingest_observation(twin.pool, "swipe_events", ts, (t, s))
                udt.ingest_observation(twin.pool, "preference_signals", ts,
                                       (t, min(s, self.n_seg) * self.catalog.segment_len))
            self._sample_periodic(u, twin, 0.0, 0.0)

    def _gain_db(self, pos, uid) -> np.ndarray:
        shadow = None if self.shadow_db is None else self.shadow_db[uid]
        return 10 * np.log10(physnet.channel_gains(np.atleast_2d(pos), self.bs_positions, self.cfg, shadow))

    def _sample_periodic(self, user, twin, t0, t1, attributes=udt.PERIODIC) -> None:
        """Report position/channel at each attribute's collection period over (t0, t1]."""
        for attr in attributes:
            last = twin.pool.last_sync_time[attr]
            start = t0 if last is None else last + twin.pool.collection_period[attr]
            times = np.arange(start, t1 + 1e-9, twin.pool.collection_period[attr])
            if times.size == 0:
                continue
            pos = physnet.position_on_path(user.path, user.arc + user.speed * (times - t0))
            if attr == "position":
                for t, p in zip(times.tolist(), pos.tolist()):
                    udt.ingest_observation(twin.pool, attr, t, tuple(p))
            else:
                for t, g in zip(times.tolist(), self._gain_db(pos, user.id).tolist()):
                    udt.ingest_observation(twin.pool, attr, t, g)

    def abstractions(self):
        return [t.abstraction(self.n_seg, self.cfg.smoothing) for t in self.twins]

    def true_gains(self) -> np.ndarray:
        cfg = self.cfg
        offsets = np.arange(cfg.slots_per_window) * cfg.small_ts
        pos = physnet.trajectory(self.users, offsets)
        shadow = None if self.shadow_db is None else self.shadow_db[None, :]
        return physnet.channel_gains(pos, self.bs_positions, cfg, shadow)

    def observe_window(self, report: physnet.PlaybackReport, window: int) -> None:
        """Twins ingest one window of observations, then the world moves on."""
        cfg = self.cfg
        t0, t1 = self.time, self.time + cfg.large_ts
        org_rng = substream(self.seed, STREAM_ORGANIC, window)
        for u, twin in zip(self.users, self.twins):
            self._sample_periodic(u, twin, t0, t1)
            t = t0
            for vtype, s in report.swipe_events(u.id):
                t += min(s, self.n_seg) * cfg.catalog.segment_len
                udt.ingest_observation(twin.pool, "swipe_events", t, (vtype, s))
            n_org = cfg.organic_views
            if n_org:
                types = org_rng.choice(N_TYPES, size=n_org, p=u.true_preference)
                idx = physnet.sample_swipe_indices(self.true_pmfs[u.id][None], types[None], org_rng)[0]
                for i, (vt, s) in enumerate(zip(types.tolist(), idx.tolist())):
                    ts = t0 + cfg.large_ts * (i + 0.5) / n_org
                    udt.ingest_observation(twin.pool, "preference_signals", ts,
                                           (vt, min(s, self.n_seg) * cfg.catalog.segment_len))
        self.users = [physnet.step_mobility(u, cfg.large_ts, self.bs_positions) for u in self.users]
        self.time = t1

    def adapt_periods(self, satisfaction: np.ndarray) -> None:
        """PCA importance across users plus per-user drift set the next collection periods."""
        cfg = self.cfg
        t1 = self.time
        t0 = t1 - cfg.large_ts
        rows, drifts = [], []
        for twin in self.twins:
            cur, prev = {}, {}
            for attr in udt.ATTRIBUTES:
                cur[attr] = [v for t, v in twin.pool.buffers[attr] if t0 < t <= t1]
                prev[attr] = [v for t, v in twin.pool.buffers[attr] if t0 - cfg.large_ts < t <= t0]
            pos = np.asarray(cur["position"], dtype=float).reshape(-1, 2)
            moved = float(np.linalg.norm(pos[-1] - pos[0])) if len(pos) > 1 else 0.0
            chan = float(np.mean(cur["channel_quality"])) if cur["channel_quality"] else 0.0
            sw = [s for _, s in cur["swipe_events"]]
            rows.append([moved, chan, float(np.mean(sw)) if sw else 0.0,
                         float(udt.estimate_preference(twin.pool).max())])
            drifts.append([
                udt.drift_statistic(prev["position"], cur["position"]),
                udt.drift_statistic(prev["channel_quality"], cur["channel_quality"]),
                udt.drift_statistic([s for _, s in prev["swipe_events"]], sw),
                udt.drift_statistic([w for _, w in prev["preference_signals"]],
                                    [w for _, w in cur["preference_signals"]]),
            ])
        data = np.column_stack([np.asarray(rows), satisfaction])
        imp = udt.feature_importance_pca(data, cfg.pca_variance)[: len(udt.ATTRIBUTES)]
        rel = np.minimum(1.0, imp * data.shape[1])
        for twin, drift in zip(self.twins, drifts):
            for i, attr in enumerate(udt.ATTRIBUTES):
                twin.pool.collection_period[attr] = udt.adapt_collection_period(
                    float(rel[i]), drift[i], cfg.period_min, cfg.period_max)

    def freshness(self) -> float:
        return float(np.mean([udt.freshness_ratio(udt.freshness_state(t.pool, self.time))
                              for t in self.twins]))


def _historical_keys(grouping, prefs, bs):
    top = np.argmax(prefs, axis=1)
    return [(int(bs[m[0]]), int(top[m[0]])) for m in (grouping.members(g) for g in range(grouping.n_groups))]


def run_cell(cfg: ScenarioConfig, scheme: str, seed: int, trace_path=None) -> list[WindowRecord]:
    """All windows of one (scheme, seed) cell; raises on any failure."""
    scheme = SchemeId(scheme).value
    world = World(cfg, seed)
    catalog = world.catalog
    ladder = catalog.versions[0]
    rl_rng = substream(seed, STREAM_RL)
    qtable = QTable(lr=cfg.rl_lr, bins=cfg.rl_bins)
    prev_actions = None
    bits_hist: dict = {}
    ops_hist: dict = {}
    records = []
    for w in range(cfg.sim_windows):
        abstractions = world.abstractions()
        est_pos = np.stack([a.position for a in abstractions])
        bs = physnet.nearest_bs(est_pos, world.bs_positions)
        prefs = np.stack([a.preference for a in abstractions])

        if scheme == SchemeId.PROPOSED:
            feats = user_features(abstractions, cfg.area)
            emulator = TwinEmulator(abstractions, catalog, cfg, seed=int(
                substream(seed, STREAM_EMULATION, w).integers(2**31)), substeps=cfg.emu_substeps,
                runs=cfg.emu_runs)
            grouping, qtable = cluster_rl(feats, bs, cfg.g_max, emulator.utility, cfg.rl_episodes,
                                          rl_rng, qtable, prev_actions)
            prev_actions = qtable.last_actions
        elif scheme == SchemeId.OPTIMIZATION:
            feats = user_features(abstractions, cfg.area)
            eps = None if cfg.dbscan_eps == "auto" else float(cfg.dbscan_eps)
            grouping = cluster_dbscan(feats, bs, eps, cfg.dbscan_min_pts)
        else:
            grouping = cluster_heuristic(prefs, bs)
        grouping.validate(bs)

        demands = group_demands(grouping, abstractions, catalog, cfg)
        d_hz = [d.bandwidth_hz for d in demands]
        d_ops = [d.expected_compute for d in demands]
        n = np.array([d.n_members for d in demands], dtype=float)
        if scheme == SchemeId.PROPOSED:
            res = reserve_convex(d_hz, cfg.total_bandwidth, d_ops, cfg.total_compute, n, cfg.headroom)
        elif scheme == SchemeId.OPTIMIZATION:
            res = reserve_bnb(d_hz, cfg.total_bandwidth, d_ops, cfg.total_compute, n,
                              cfg.bnb_step, cfg.headroom, cfg.bnb_max_nodes)
        else:
            keys = _historical_keys(grouping, prefs, bs)
            res = reserve_historical([bits_hist.get(k) for k in keys], cfg.total_bandwidth,
                                     [ops_hist.get(k) for k in keys], cfg.total_compute)

        playlists = np.stack([d.recommended for d in demands])
        report = physnet.simulate_window(
            world.true_gains(), grouping, res.bandwidth, res.compute, playlists, world.true_pmfs,
            catalog, cfg, substream(seed, STREAM_SWIPES, w),
        )
        if trace_path is not None:
            physnet.write_trace(trace_path, w, report, append=w > 0)
        if scheme == SchemeId.HEURISTIC:
            for g, k in enumerate(keys):
                bits_hist.setdefault(k, []).append(report.bits_sent[g] / report.window_s)
                ops_hist.setdefault(k, []).append(report.ops_used[g] / report.window_s)

        world.observe_window(report, w)
        sats = kpi.satisfaction_vector(report, ladder, cfg.mu_stall)
        world.adapt_periods(sats)
        k = kpi.window_kpis(report, ladder, cfg.total_bandwidth, cfg.total_compute,
                            world.freshness(), cfg.kpi_weights, cfg.abstraction_level,
                            cfg.mu_stall, cfg.gamma_r, cfg.c_op)
        schedule = ResourceSchedule(
            C=report.allocation, A=np.ones((len(catalog), catalog.versions.shape[1], 1), dtype=bool),
            P=res.compute, S=np.zeros(0), L=cfg.abstraction_level, reserved_bandwidth=res.bandwidth)
        records.append(WindowRecord(
            scheme=scheme, seed=seed, window=w, satisfaction=k.satisfaction,
            n_groups=grouping.n_groups, bw_frac=k.bw_frac, compute_frac=k.compute_frac,
            freshness=k.freshness, Q=k.Q, R=k.R, V=k.V,
            reserved_bw=float(res.bandwidth.sum()), reserved_ops=float(res.compute.sum()),
            bits_sent=report.bits_sent, capacity_bits=report.capacity_bits.sum(axis=1),
            segment_bits_max=float(catalog.versions.max() * catalog.segment_len),
            schedule=schedule,
        ))
    return records


def run_experiment(cfg: ScenarioConfig, schemes: Sequence[str] | None = None,
                   seeds: Iterable[int] = (0,), trace_dir=None) -> RunMetrics:
    """Run every (scheme, seed) cell; a failing cell is recorded, not raised."""
    schemes = list(schemes or cfg.schemes)
    seeds = list(seeds)
    if not schemes or not seeds:
        raise EmptyMetrics("need at least one scheme and one seed")
    metrics = RunMetrics()
    for scheme in schemes:
        for seed in seeds:
            trace = None if trace_dir is None else Path(trace_dir) / f"trace_{scheme}_{seed}.csv"
            try:
                metrics.records.extend(run_cell(cfg, scheme, seed, trace))
            except Exception as exc:  # noqa: BLE001 - any failure aborts only this cell
                log.exception("cell (%s, %s) failed", scheme, seed)
                metrics.errors.append((str(scheme), seed, f"{type(exc).__name__}: {exc}"))
    metrics.records.sort(key=lambda r: (r.scheme, r.seed, r.window))
    return metrics


def summarize(values_by_scheme: dict) -> dict:
    """Box-plot statistics per scheme; quantiles use linear interpolation."""
    if not values_by_scheme or any(len(v) == 0 for v in values_by_scheme.values()):
        raise EmptyMetrics("nothing to summarize")
    out = {}
    for scheme, values in sorted(values_by_scheme.items()):
        v = np.asarray(values, dtype=float)
        q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75], method="linear")
        out[scheme] = {"min": float(v.min()), "q1": float(q1), "median": float(med), "q3": float(q3),
                       "max": float(v.max()), "mean": float(v.mean()), "std": float(v.std())}
    return out


def write_summary(path, metrics: RunMetrics) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# dtslice summary schema_version={SCHEMA_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("metric", "scheme") + SUMMARY_STATS)
        for metric, data in (("satisfaction", metrics.satisfaction_by_scheme()),
                             ("consumption", metrics.consumption_by_scheme())):
            if not data:
                continue
            for scheme, stats in summarize(data).items():
                w.writerow((metric, scheme) + tuple(_fmt(stats[s]) for s in SUMMARY_STATS))
