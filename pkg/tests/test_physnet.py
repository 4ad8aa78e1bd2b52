import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtslice import physnet
from dtslice.domain import N_TYPES, ScenarioConfig
from dtslice.errors import EmptyGroup, OutOfRange, UnassignedUser
from dtslice.physnet import Grouping


def test_path_loss_values():
    assert physnet.path_loss(1000.0) == pytest.approx(128.1)
    assert physnet.path_loss(100.0) == pytest.approx(90.5)
    assert physnet.path_loss(0.5) == physnet.path_loss(1.0)


def _rate_oracle(tx, pl, n0, bw):
    mpmath.mp.dps = 50
    noise = mpmath.mpf(n0) + 10 * mpmath.log10(bw)
    snr = mpmath.power(10, (mpmath.mpf(tx) - pl - noise) / 10)
    return float(bw * mpmath.log(1 + snr, 2))


def test_link_rate_against_high_precision():
    r = physnet.link_rate(27.0, 128.1, -174.0, 10e6)
    assert r == pytest.approx(_rate_oracle(27, 128.1, -174, 10e6), rel=1e-3)
    assert r == pytest.approx(15.6e6, rel=5e-3)
    assert physnet.link_rate(27.0, 128.1, -174.0, 0.0) == 0.0


def test_link_rate_vanishes_with_loss():
    pls = np.linspace(100, 400, 50)
    rates = physnet.link_rate(27.0, pls, -174.0, 1e6)
    assert np.all(np.diff(rates) <= 0)
    assert np.all(np.diff(rates[rates > 1e-6]) < 0)
    assert rates[-1] < 1e-12


@given(st.floats(60, 200), st.floats(1e3, 1e8))
def test_gain_form_matches_link_rate(pl, bw):
    from dtslice._kernels import link_rate_scalar
    g = physnet.snr_gain(27.0, pl, -174.0)
    assert link_rate_scalar(float(g), bw) == pytest.approx(physnet.link_rate(27.0, pl, -174.0, bw), rel=1e-9)


def test_multicast_rate():
    assert physnet.multicast_rate([3e6]) == 3e6
    assert physnet.multicast_rate([10, 4, 7]) == 4
    with pytest.raises(EmptyGroup):
        physnet.multicast_rate([])


def _closed_form(p, q, S):
    # truncated geometric on 1..S scaled by (1-q), atom q at S+1
    w = [p * (1 - p) ** (s - 1) for s in range(1, S + 1)]
    z = sum(w)
    return np.array([(1 - q) * x / z for x in w] + [q])


def _user(p, q):
    return physnet.UserState(
        id=0, position=(0.0, 0.0), path=np.array([[0.0, 0.0], [1.0, 0.0]]), arc=0.0, speed=1.0,
        serving_bs=0, true_preference=np.full(N_TYPES, 1 / N_TYPES),
        swipe_p=np.full(N_TYPES, p), swipe_q=np.full(N_TYPES, q),
    )


def test_swipe_degenerate_cases():
    rng = np.random.default_rng(0)
    assert all(physnet.generate_swipe(_user(0.3, 1.0), 0, 15, rng) == 16 for _ in range(200))
    assert all(physnet.generate_swipe(_user(1.0, 0.0), 0, 15, rng) == 1 for _ in range(200))


def test_swipe_histogram_matches_pmf():
    pmf = _closed_form(0.3, 0.2, 15)
    assert np.allclose(physnet.swipe_pmf(0.3, 0.2, 15), pmf)
    rng = np.random.default_rng(42)
    u = _user(0.3, 0.2)
    pmfs = physnet.user_swipe_pmfs(u, 15)[None]
    draws = physnet.sample_swipe_indices(pmfs, np.zeros((1, 100_000), dtype=int), rng)[0]
    hist = np.bincount(draws, minlength=17)[1:] / draws.size
    assert 0.5 * np.abs(hist - pmf).sum() <= 0.01
    scalar = np.array([physnet.generate_swipe(u, 0, 15, rng) for _ in range(20_000)])
    hist2 = np.bincount(scalar, minlength=17)[1:] / scalar.size
    assert 0.5 * np.abs(hist2 - pmf).sum() <= 0.03


def test_mobility_straight_path():
    u = physnet.UserState(
        id=0, position=(0.0, 0.0), path=np.array([[0.0, 0.0], [100.0, 0.0]]), arc=0.0, speed=1.0,
        serving_bs=0, true_preference=np.full(N_TYPES, 1 / N_TYPES),
        swipe_p=np.full(N_TYPES, 0.3), swipe_q=np.full(N_TYPES, 0.1),
    )
    bs = np.array([[0.0, 0.0], [100.0, 0.0]])
    v = physnet.step_mobility(u, 1.0, bs)
    assert v.position == pytest.approx((1.0, 0.0))
    assert physnet.step_mobility(u, 0.0, bs).position == pytest.approx(u.position)
    far = physnet.step_mobility(u, 80.0, bs)
    assert far.serving_bs == 1
    # closed path: perimeter 200 m brings the user back
    assert physnet.step_mobility(u, 200.0, bs).position == pytest.approx((0.0, 0.0), abs=1e-9)


def test_spawned_population_invariants(cfg):
    users = physnet.spawn_users(cfg, np.random.default_rng(5))
    assert len(users) == cfg.n_users
    lo, hi = cfg.speed_range_ms
    for u in users:
        assert abs(u.true_preference.sum() - 1) < 1e-9
        assert lo <= u.speed <= hi
        assert 0 <= u.position[0] <= cfg.area and 0 <= u.position[1] <= cfg.area


def test_grouping_validation():
    g = Grouping.from_keys([("b", 1), ("a", 0), ("b", 1)], np.array([1, 0, 1]))
    assert g.n_groups == 2
    assert g.assignment.tolist() == [1, 0, 1]
    with pytest.raises(OutOfRange):
        Grouping(np.array([0, 0]), np.array([0])).validate(np.array([0, 1]))


# single-user fluid reference for the playback kernel


def _one_user_window(cfg, catalog, rate_bps, bw_hz, ops, swipe_idx=16, window=None):
    window = window or cfg.large_ts
    slots = int(window / cfg.small_ts)
    gain = bw_hz * (2.0 ** (rate_bps / bw_hz) - 1.0)  # inverts rate = b log2(1 + g/b)
    gains = np.full((slots, 1), gain)
    g = Grouping(np.array([0]), np.array([0]))
    S = catalog.n_segments
    pmf = np.zeros((1, N_TYPES, S + 1))
    pmf[..., swipe_idx - 1] = 1.0
    k = int(np.ceil(window / catalog.segment_len)) + 1
    playlist = np.arange(k)[None]
    return physnet.simulate_window(gains, g, np.array([bw_hz]), np.array([ops]), playlist, pmf,
                                   catalog, cfg, np.random.default_rng(0))


def test_abundant_resources_no_stall(cfg, catalog):
    rep = _one_user_window(cfg, catalog, rate_bps=500e6, bw_hz=20e6, ops=1e12)
    assert rep.stall_time[0] == 0.0
    assert rep.watched_by_version[0, -1] > 0


def test_zero_allocation_stalls_whole_window(cfg, catalog):
    rep = _one_user_window(cfg, catalog, rate_bps=15.6e6, bw_hz=1e6, ops=1e12)
    slots = int(cfg.large_ts / cfg.small_ts)
    g = Grouping(np.array([0]), np.array([0]))
    S = catalog.n_segments
    pmf = np.full((1, N_TYPES, S + 1), 1.0 / (S + 1))
    rep = physnet.simulate_window(np.full((slots, 1), 1e9), g, np.array([0.0]), np.array([0.0]),
                                  np.arange(61)[None], pmf, catalog, cfg, np.random.default_rng(0))
    assert rep.stall_time[0] == pytest.approx(cfg.large_ts)
    assert rep.watched[0] == 0


def test_download_rate_matches_fluid_model(cfg, catalog):
    # lowest rung 1.5 Mbps on a 15.6 Mbps link: the buffer fills at ~10.4x real time
    from dtslice.domain import CatalogParams, build_catalog, replace
    one = replace(cfg, catalog=CatalogParams(ladder=(1.5e6, 1.6e6, 1.7e6, 1.8e6)), buffer_cap=30)
    cat = build_catalog(one.catalog, np.random.default_rng(0))
    cat = type(cat)(cat.type_index, np.tile([1.5e6, 1e9, 2e9, 3e9], (len(cat), 1)),
                    cat.compute_cost, cat.duration, cat.segment_len)
    rep = _one_user_window(one, cat, rate_bps=15.6e6, bw_hz=10e6, ops=1e15, window=2.0)
    # fluid model: segments delivered after t seconds = t * 15.6/1.5 (capped by the buffer)
    expected = 2.0 * 15.6e6 / 1.5e6
    assert rep.delivered[0] == pytest.approx(expected, abs=1.5)
    assert rep.stall_time[0] <= 0.2


def test_unassigned_user(cfg, catalog):
    g = Grouping(np.array([0]), np.array([0]))
    S = catalog.n_segments
    with pytest.raises(UnassignedUser):
        physnet.simulate_window(np.ones((60, 2)), g, np.array([1.0]), np.array([1.0]), np.zeros((1, 61), int),
                                np.full((2, N_TYPES, S + 1), 1 / (S + 1)), catalog, cfg,
                                np.random.default_rng(0))


def test_delivered_bits_within_capacity(cfg, catalog):
    rng = np.random.default_rng(3)
    users = physnet.spawn_users(cfg, rng)
    pos = physnet.trajectory(users, np.arange(60.0))
    gains = physnet.channel_gains(pos, cfg.bs_positions, cfg)
    bs = np.array([u.serving_bs for u in users])
    g = Grouping.from_keys(list(zip(bs.tolist(), (np.arange(60) % 3).tolist())), bs)
    pmfs = np.stack([physnet.user_swipe_pmfs(u, 15) for u in users])
    res = np.full(g.n_groups, cfg.total_bandwidth / g.n_groups)
    ops = np.full(g.n_groups, cfg.total_compute / g.n_groups)
    playlists = np.tile(np.arange(61), (g.n_groups, 1))
    rep = physnet.simulate_window(gains, g, res, ops, playlists, pmfs, catalog, cfg, rng)
    seg_bits = catalog.versions.max() * catalog.segment_len
    assert np.all(rep.bits_sent <= rep.capacity_bits.sum(axis=1) + seg_bits + 1e-6)
    assert np.all(rep.allocation.sum(axis=0) <= res.sum() * (1 + 1e-9))
    assert np.all(rep.stall_time >= 0)
    assert np.all(rep.delivered >= rep.watched)
