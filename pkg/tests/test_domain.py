import numpy as np
import pytest

from dtslice.domain import (
    SERVICE_PROFILES, CatalogParams, ResourceSchedule, ScenarioConfig, ServiceKind, build_catalog,
    load_scenario, replace, validate_scenario,
)
from dtslice.errors import BadLadder, InconsistentTimescales, MissingField, OutOfRange, UnknownKey


def test_defaults_from_minimal_file():
    cfg = validate_scenario({"scenario": {}})
    assert cfg.n_users == 60
    assert cfg.tx_power == 27.0
    assert cfg.noise_density == -174.0


def test_inconsistent_timescales():
    with pytest.raises(InconsistentTimescales):
        validate_scenario({"scenario": {}, "timing": {"small_ts": 7.0, "large_ts": 60.0}})


def test_zero_bandwidth_rejected():
    with pytest.raises(OutOfRange):
        validate_scenario({"scenario": {}, "resources": {"total_bandwidth": 0}})


def test_missing_and_unknown_keys():
    with pytest.raises(MissingField):
        validate_scenario({})
    with pytest.raises(UnknownKey):
        validate_scenario({"scenario": {"n_user": 3}})
    with pytest.raises(UnknownKey):
        validate_scenario({"scenario": {}, "extras": {}})


def test_dbscan_eps_values():
    assert validate_scenario({"scenario": {}, "algorithms": {"dbscan_eps": 0.5}}).dbscan_eps == 0.5
    with pytest.raises(OutOfRange):
        validate_scenario({"scenario": {}, "algorithms": {"dbscan_eps": "big"}})
    with pytest.raises(OutOfRange):
        validate_scenario({"scenario": {}, "algorithms": {"dbscan_eps": -1.0}})


def test_shipped_config_matches_defaults():
    from pathlib import Path
    path = Path(__file__).parents[1] / "configs" / "default.toml"
    assert load_scenario(path) == ScenarioConfig()


def test_toml_roundtrip(tmp_path):
    p = tmp_path / "s.toml"
    p.write_text('[scenario]\nn_users = 10\n[catalog]\nladder = [1e6, 2e6, 3e6, 4e6]\n')
    cfg = load_scenario(p)
    assert cfg.n_users == 10
    assert cfg.catalog.ladder == (1e6, 2e6, 3e6, 4e6)


def test_catalog_types_balanced():
    cat = build_catalog(CatalogParams(n_videos=1000), np.random.default_rng(1))
    assert np.all(np.bincount(cat.type_index) == 125)
    assert cat.n_segments == 15
    small = build_catalog(CatalogParams(n_videos=8), np.random.default_rng(1))
    assert sorted(small.type_index.tolist()) == list(range(8))


def test_catalog_rejects_bad_ladder():
    with pytest.raises(BadLadder):
        build_catalog(CatalogParams(ladder=(4.5e6, 1.5e6, 15e6, 45e6)), np.random.default_rng(0))


def test_compute_cost_scales_with_bitrate():
    cat = build_catalog(CatalogParams(n_videos=16), np.random.default_rng(3))
    ratio = cat.compute_cost / cat.versions
    assert np.allclose(ratio, ratio[:, :1])
    assert np.all(np.diff(cat.compute_cost, axis=1) > 0)
    v = cat.video(5)
    assert v.n_segments == 15 and v.type_index == 5


def test_service_profiles():
    assert SERVICE_PROFILES[ServiceKind.ShortVideo].required_rate == 45e6
    assert SERVICE_PROFILES[ServiceKind.Holographic].latency_budget == 0.005


def test_replace_validates(cfg):
    with pytest.raises(OutOfRange):
        replace(cfg, n_users=0)
    assert replace(cfg, n_users=5).n_users == 5


def test_resource_schedule_checks():
    C = np.array([[1.0, 2.0], [1.0, 0.0]])
    s = ResourceSchedule(C=C, A=np.ones((2, 4, 1), bool), P=np.ones(2), S=np.zeros(0), L=2,
                         reserved_bandwidth=np.array([2.0, 1.0]))
    assert int(s.L) == 2
    with pytest.raises(OutOfRange):
        ResourceSchedule(C=-C, A=np.ones((2, 4, 1), bool), P=np.ones(2), S=np.zeros(0), L=2)
    with pytest.raises(OutOfRange):
        ResourceSchedule(C=C * 10, A=np.ones((2, 4, 1), bool), P=np.ones(2), S=np.zeros(0), L=2,
                         reserved_bandwidth=np.array([2.0, 1.0]))
