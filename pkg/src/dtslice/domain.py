"""Shared domain types, scenario configuration and the video catalog."""

from __future__ import annotations

import dataclasses
import enum
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import BadLadder, InconsistentTimescales, MissingField, OutOfRange, UnknownKey

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

VIDEO_TYPES = ("Entertainment", "Games", "Food", "Sports", "Science", "Dance", "Travel", "News")
N_TYPES = len(VIDEO_TYPES)


class ServiceKind(enum.Enum):
    ShortVideo = "short_video"
    ImmersiveVR = "immersive_vr"
    Holographic = "holographic"


class Component(enum.Enum):
    Segments = "segments"
    Tiles2D = "tiles_2d"
    Tiles3D = "tiles_3d"


@dataclass(frozen=True)
class ServiceProfile:
    name: ServiceKind
    required_rate: float  # bits/s
    latency_budget: float  # s
    components: frozenset

    def __post_init__(self):
        if self.required_rate <= 0 or self.latency_budget <= 0:
            raise OutOfRange(f"{self.name}: rate and latency budget must be positive")


# Only ShortVideo drives the simulation; the other two rows are carried as config.
SERVICE_PROFILES = {
    ServiceKind.ShortVideo: ServiceProfile(
        ServiceKind.ShortVideo, 45e6, 3.0, frozenset({Component.Segments, Component.Tiles3D})
    ),
    ServiceKind.ImmersiveVR: ServiceProfile(
        ServiceKind.ImmersiveVR, 100e6, 0.010, frozenset({Component.Tiles2D, Component.Tiles3D})
    ),
    ServiceKind.Holographic: ServiceProfile(
        ServiceKind.Holographic, 100e6, 0.005, frozenset({Component.Tiles3D})
    ),
}


class AbstractionLevel(enum.IntEnum):
    RAW = 0
    HISTOGRAMS = 1
    DISTRIBUTIONS = 2
    FEATURE_VECTOR = 3


@dataclass(frozen=True)
class KpiWeights:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise OutOfRange("KPI weights must be non-negative")


@dataclass(frozen=True)
class CatalogParams:
    n_videos: int = 1000
    duration: float = 15.0
    segment_len: float = 1.0
    ladder: tuple = (1.5e6, 4.5e6, 15e6, 45e6)
    ops_per_bit: float = 10.0


@dataclass(frozen=True)
class ScenarioConfig:
    # topology
    n_users: int = 60
    n_bs: int = 2
    area: float = 1000.0
    user_radius: float = 350.0
    speeds: tuple = (2.0, 5.0)  # km/h
    # radio
    tx_power: float = 27.0
    noise_density: float = -174.0
    shadowing_sigma: float = 0.0
    # capacities
    total_bandwidth: float = 20e6
    total_compute: float = 2.5e9
    # timing
    small_ts: float = 1.0
    large_ts: float = 60.0
    sim_windows: int = 20
    substeps: int = 10
    seed: int = 0
    # playback
    buffer_cap: int = 5
    recommend_k: int = 40
    # twins
    udt_capacity: int = 512
    history_views: int = 200
    history_explore: float = 0.5  # share of warm-up views of a uniformly random type
    organic_views: int = 20
    smoothing: float = 0.1
    period_min: float = 1.0
    period_max: float = 9.0
    # kpi
    kpi_weights: KpiWeights = field(default_factory=KpiWeights)
    mu_stall: float = 0.5
    gamma_r: float = 0.25
    c_op: float = 0.1
    abstraction_level: AbstractionLevel = AbstractionLevel.DISTRIBUTIONS
    # algorithms
    schemes: tuple = ("proposed", "optimization", "heuristic")
    g_max: int = 4
    rl_episodes: int = 4
    rl_lr: float = 0.5
    rl_bins: int = 3
    dbscan_eps: float | str = "auto"  # "auto" = k-distance knee per window
    dbscan_min_pts: int = 3
    bnb_step: float = 0.01  # grid step as a fraction of the capacity
    bnb_max_nodes: int = 20_000
    headroom: float = 2.0
    emu_substeps: int = 2
    emu_runs: int = 2
    pca_variance: float = 0.8
    catalog: CatalogParams = field(default_factory=CatalogParams)

    @property
    def slots_per_window(self) -> int:
        return int(round(self.large_ts / self.small_ts))

    @property
    def speed_range_ms(self) -> tuple:
        return (self.speeds[0] / 3.6, self.speeds[1] / 3.6)

    @property
    def bs_positions(self) -> np.ndarray:
        xs = self.area * (np.arange(self.n_bs) + 1.0) / (self.n_bs + 1.0)
        return np.column_stack([xs, np.full(self.n_bs, self.area / 2.0)])


# TOML table -> config field names it may carry
_SCHEMA = {
    "scenario": {"n_users", "n_bs", "area", "user_radius", "speeds", "seed"},
    "radio": {"tx_power", "noise_density", "shadowing_sigma"},
    "resources": {"total_bandwidth", "total_compute"},
    "timing": {"small_ts", "large_ts", "sim_windows", "substeps"},
    "playback": {"buffer_cap", "recommend_k"},
    "twins": {"udt_capacity", "history_views", "history_explore", "organic_views", "smoothing", "period_min", "period_max"},
    "kpi": {"alpha", "beta", "gamma", "mu_stall", "gamma_r", "c_op", "abstraction_level"},
    "algorithms": {
        "schemes", "g_max", "rl_episodes", "rl_lr", "rl_bins", "dbscan_eps",
        "dbscan_min_pts", "bnb_step", "bnb_max_nodes", "headroom", "emu_substeps", "emu_runs",
        "pca_variance",
    },
    "catalog": {"n_videos", "duration", "segment_len", "ladder", "ops_per_bit"},
}
_REQUIRED_TABLES = ("scenario",)
_KNOWN_SCHEMES = ("proposed", "optimization", "heuristic")


def load_scenario(path: str | Path) -> ScenarioConfig:
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    return validate_scenario(raw)


def validate_scenario(raw: Mapping[str, Any]) -> ScenarioConfig:
    """Normalize a parsed scenario file into a :class:`ScenarioConfig`.

    ``raw`` is the nested mapping of a TOML scenario file; every table is
    optional except ``[scenario]``. Unknown tables or keys are rejected.
    """
    for table in _REQUIRED_TABLES:
        if table not in raw:
            raise MissingField(f"missing required table [{table}]")
    flat: dict[str, Any] = {}
    for table, body in raw.items():
        if table not in _SCHEMA:
            raise UnknownKey(f"unknown table [{table}]")
        if not isinstance(body, Mapping):
            raise UnknownKey(f"[{table}] must be a table")
        for key, value in body.items():
            if key not in _SCHEMA[table]:
                raise UnknownKey(f"unknown key {table}.{key}")
            flat[key] = value

    cat_keys = _SCHEMA["catalog"]
    catalog = CatalogParams(**{
        k: (tuple(float(x) for x in v) if k == "ladder" else v)
        for k, v in flat.items() if k in cat_keys
    })
    weights = KpiWeights(**{k: float(flat.pop(k)) for k in ("alpha", "beta", "gamma") if k in flat})
    kwargs = {k: v for k, v in flat.items() if k not in cat_keys}
    if "speeds" in kwargs:
        kwargs["speeds"] = tuple(float(s) for s in kwargs["speeds"])
    if "schemes" in kwargs:
        kwargs["schemes"] = tuple(str(s).lower() for s in kwargs["schemes"])
    if "abstraction_level" in kwargs:
        kwargs["abstraction_level"] = AbstractionLevel(int(kwargs["abstraction_level"]))
    cfg = ScenarioConfig(kpi_weights=weights, catalog=catalog, **kwargs)
    _check(cfg)
    return cfg


def _check(cfg: ScenarioConfig) -> None:
    positive = {
        "n_users": cfg.n_users, "n_bs": cfg.n_bs, "area": cfg.area, "user_radius": cfg.user_radius,
        "total_bandwidth": cfg.total_bandwidth, "total_compute": cfg.total_compute,
        "small_ts": cfg.small_ts, "large_ts": cfg.large_ts, "sim_windows": cfg.sim_windows,
        "substeps": cfg.substeps, "buffer_cap": cfg.buffer_cap, "recommend_k": cfg.recommend_k,
        "udt_capacity": cfg.udt_capacity, "period_min": cfg.period_min, "g_max": cfg.g_max,
        "rl_episodes": cfg.rl_episodes, "rl_lr": cfg.rl_lr, "rl_bins": cfg.rl_bins,
        "dbscan_min_pts": cfg.dbscan_min_pts,
        "bnb_step": cfg.bnb_step, "bnb_max_nodes": cfg.bnb_max_nodes, "headroom": cfg.headroom,
        "emu_substeps": cfg.emu_substeps, "emu_runs": cfg.emu_runs, "pca_variance": cfg.pca_variance,
        "n_videos": cfg.catalog.n_videos, "duration": cfg.catalog.duration,
        "segment_len": cfg.catalog.segment_len,
    }
    for name, value in positive.items():
        if not value > 0:
            raise OutOfRange(f"{name} must be > 0, got {value}")
    nonneg = {
        "history_views": cfg.history_views, "organic_views": cfg.organic_views,
        "smoothing": cfg.smoothing, "shadowing_sigma": cfg.shadowing_sigma,
        "mu_stall": cfg.mu_stall, "gamma_r": cfg.gamma_r, "c_op": cfg.c_op,
        "ops_per_bit": cfg.catalog.ops_per_bit, "seed": cfg.seed,
    }
    for name, value in nonneg.items():
        if value < 0:
            raise OutOfRange(f"{name} must be >= 0, got {value}")
    lo, hi = cfg.speeds
    if len(cfg.speeds) != 2 or not 0 < lo <= hi:
        raise OutOfRange(f"speeds must be [min, max] with 0 < min <= max, got {cfg.speeds}")
    if cfg.period_max < cfg.period_min:
        raise OutOfRange("period_max must be >= period_min")
    if cfg.dbscan_eps != "auto" and (isinstance(cfg.dbscan_eps, str) or not cfg.dbscan_eps > 0):
        raise OutOfRange(f"dbscan_eps must be > 0 or \"auto\", got {cfg.dbscan_eps!r}")
    if not 0 <= cfg.history_explore <= 1:
        raise OutOfRange("history_explore is a fraction in [0, 1]")
    if cfg.pca_variance > 1:
        raise OutOfRange("pca_variance is a fraction in (0, 1]")
    if not 0 < cfg.bnb_step <= 1:
        raise OutOfRange("bnb_step is a fraction of capacity in (0, 1]")
    if cfg.user_radius > cfg.area:
        raise OutOfRange("user_radius larger than the area")
    ratio = cfg.large_ts / cfg.small_ts
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise InconsistentTimescales(f"small_ts={cfg.small_ts} does not divide large_ts={cfg.large_ts}")
    seg_ratio = cfg.catalog.duration / cfg.catalog.segment_len
    if abs(seg_ratio - round(seg_ratio)) > 1e-9:
        raise OutOfRange("segment_len must divide the video duration")
    bad = [s for s in cfg.schemes if s not in _KNOWN_SCHEMES]
    if bad or not cfg.schemes:
        raise OutOfRange(f"unknown schemes {bad}; choose from {_KNOWN_SCHEMES}")
    _check_ladder(cfg.catalog.ladder)


def _check_ladder(ladder) -> None:
    ladder = np.asarray(ladder, dtype=float)
    if ladder.shape != (4,):
        raise BadLadder(f"expected 4 versions, got {ladder.size}")
    if np.any(ladder <= 0) or np.any(np.diff(ladder) <= 0):
        raise BadLadder(f"bitrates must be positive and strictly increasing: {ladder.tolist()}")


@dataclass
class ResourceSchedule:
    """One window's resource decisions.

    ``C`` is bandwidth per group and small slot (Hz), ``A`` the boolean
    placement of (video, version) on nodes, ``P`` compute per group (ops/s),
    ``S`` the sensing allocation (carried, unused) and ``L`` the twins'
    abstraction level.
    """

    C: np.ndarray
    A: np.ndarray
    P: np.ndarray
    S: np.ndarray
    L: AbstractionLevel
    reserved_bandwidth: np.ndarray | None = None

    def __post_init__(self):
        for name in ("C", "P", "S"):
            if np.any(np.asarray(getattr(self, name)) < 0):
                raise OutOfRange(f"{name} has negative entries")
        self.L = AbstractionLevel(int(self.L))
        if self.reserved_bandwidth is not None:
            # per-slot allocation can borrow, but never beyond the total reservation
            if np.any(self.C.sum(axis=0) > self.reserved_bandwidth.sum() * (1 + 1e-9)):
                raise OutOfRange("slot allocation exceeds the total reservation")

    @classmethod
    def all_at_edge(cls, C, P, n_videos: int, n_versions: int, level) -> "ResourceSchedule":
        return cls(C=np.asarray(C), A=np.ones((n_videos, n_versions, 1), dtype=bool),
                   P=np.asarray(P), S=np.zeros(0), L=level)


@dataclass(frozen=True)
class Video:
    id: int
    type_index: int
    duration: float
    segment_len: float
    versions: tuple
    compute_cost: tuple  # ops per segment, one per version

    @property
    def n_segments(self) -> int:
        return int(round(self.duration / self.segment_len))


@dataclass(frozen=True)
class VideoCatalog:
    """Column-oriented catalog; ``video(i)`` materializes one record."""

    type_index: np.ndarray  # (n,)
    versions: np.ndarray  # (n, 4) bits/s
    compute_cost: np.ndarray  # (n, 4) ops per segment
    duration: float
    segment_len: float
    type_names: tuple = VIDEO_TYPES

    def __len__(self) -> int:
        return len(self.type_index)

    @property
    def n_segments(self) -> int:
        return int(round(self.duration / self.segment_len))

    def video(self, i: int) -> Video:
        return Video(
            id=i,
            type_index=int(self.type_index[i]),
            duration=self.duration,
            segment_len=self.segment_len,
            versions=tuple(self.versions[i].tolist()),
            compute_cost=tuple(self.compute_cost[i].tolist()),
        )

    @property
    def videos(self) -> list:
        return [self.video(i) for i in range(len(self))]

    def ids_of_type(self, t: int) -> np.ndarray:
        return np.flatnonzero(self.type_index == t)


def build_catalog(params: CatalogParams, rng: np.random.Generator) -> VideoCatalog:
    """Synthesize ``params.n_videos`` videos, types assigned round-robin.

    Every video shares the bitrate ladder; transcoding cost per segment is
    ``ops_per_bit * bitrate * segment_len`` scaled by a per-video content
    complexity factor drawn from ``rng`` in [0.8, 1.2].
    """
    _check_ladder(params.ladder)
    n = int(params.n_videos)
    ladder = np.asarray(params.ladder, dtype=float)
    type_index = np.arange(n) % N_TYPES
    versions = np.tile(ladder, (n, 1))
    complexity = rng.uniform(0.8, 1.2, size=n)
    compute_cost = params.ops_per_bit * versions * params.segment_len * complexity[:, None]
    return VideoCatalog(
        type_index=type_index,
        versions=versions,
        compute_cost=compute_cost,
        duration=float(params.duration),
        segment_len=float(params.segment_len),
    )


def replace(cfg: ScenarioConfig, **changes) -> ScenarioConfig:
    """``dataclasses.replace`` followed by validation."""
    new = dataclasses.replace(cfg, **changes)
    _check(new)
    return new
