import os

import pytest

from topoprobe.config_loader import (
    OUTPUT_DIR_ENV,
    ConfigError,
    ProbeConfig,
    ScenarioConfig,
    build_sim_config,
    config_hash,
    load_config,
    parse_config,
    save_config,
)
from topoprobe.netsim import ChurnKind

REPO_CONFIG = os.path.join(os.path.dirname(__file__), "..", "config.yaml")


@pytest.fixture(autouse=True)
def no_output_override(monkeypatch):
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)


def test_repo_config_loads():
    config = load_config(REPO_CONFIG)
    assert config.seed == 7
    assert config.topology.model == "er"
    assert config.probe == ProbeConfig()


def test_defaults():
    config = parse_config({"seed": 3})
    assert config.seed == 3
    assert config.topology.n == 200 and config.topology.m == 800
    assert config.output.formats == ["edgelist", "graphml"]


@pytest.mark.parametrize("data, key", [
    ({"probe": {"foo": 1}}, "probe.foo"),
    ({"extra": 1}, "extra"),
    ({"topology": {"model": "ws"}}, "topology.model"),
    ({"sim": {"unblockable_fraction": "много"}}, "sim.unblockable_fraction"),
    ({"sim": {"unblockable_fraction": 1.5}}, "sim.unblockable_fraction"),
    ({"sim": {"latency_ms": [150, 50]}}, "sim.latency_ms"),
    ({"probe": {"invblock_refresh_s": 130}}, "probe.invblock_refresh_s"),
    ({"probe": {"cleanse_passes": 0}}, "probe.cleanse_passes"),
    ({"probe": {"flood_wait_s": -1}}, "probe.flood_wait_s"),
    ({"topology": {"model": "file"}}, "topology.path"),
    ({"output": {"formats": ["csv"]}}, "output.formats"),
    ({"sim": {"churn": [{"time_s": 5, "kind": "add_edge", "node": 1}]}}, "sim.churn[0].peer"),
    ({"seed": "x"}, "seed"),
    ({"sim": {"churn": [{"time_s": 5, "node": "abc"}]}}, "sim.churn[0].node"),
    ({"sim": {"churn": [{"time_s": "soon", "node": 1}]}}, "sim.churn[0].time_s"),
    ({"sim": {"churn": [{"time_s": -1, "node": 1}]}}, "sim.churn[0].time_s"),
    ({"sim": {"churn": [{"time_s": 5, "node": True}]}}, "sim.churn[0].node"),
    ({"sim": {"churn": [{"time_s": 5, "kind": "add_edge", "node": 1, "peer": [1]}]}}, "sim.churn[0].peer"),
    ({"sim": {"churn": [{"time_s": 1, "node": 1}, {"time_s": 2, "node": -4}]}}, "sim.churn[1].node"),
    ({"probe": {"marker_grind_bits": 0}}, "probe.marker_grind_bits"),
    ({"probe": {"marker_grind_bits": 1}}, "probe.marker_grind_bits"),
    ({"probe": {"marker_grind_bits": 2, "squatter_grind_bits": 1}}, "probe.marker_grind_bits"),
    ({"topology": {"model": "cm", "degree_sequence": [2, "x", 2]}}, "topology.degree_sequence[1]"),
    ({"topology": {"model": "cm", "degree_sequence": [2, -2]}}, "topology.degree_sequence[1]"),
    ({"topology": {"regions": {"eu": "half"}}}, "topology.regions.eu"),
    ({"topology": {"regions": {"eu": -0.5, "us": 1.0}}}, "topology.regions.eu"),
    ({"topology": {"regions": {"eu": 0, "us": 0}}}, "topology.regions"),
])
def test_errors_name_the_key(data, key):
    with pytest.raises(ConfigError) as info:
        parse_config(data)
    assert key in str(info.value)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(str(tmp_path / "absent.yaml"))


def test_empty_file(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_output_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "elsewhere"))
    config = load_config(REPO_CONFIG)
    assert config.output.directory == str(tmp_path / "elsewhere")


def test_build_sim_config():
    config = parse_config({
        "seed": 11,
        "sim": {
            "latency": "fixed",
            "latency_ms": [80],
            "inv_trickle_ms": [0, 2000],
            "churn": [{"time_s": 1.5, "kind": "remove_edge", "node": 1, "peer": 2}],
        },
    })
    sim = build_sim_config(config, trace=True)
    assert sim.seed == 11
    assert sim.latency.kind == "fixed" and sim.latency.lo_ms == 80
    assert (sim.inv_trickle.lo_ms, sim.inv_trickle.hi_ms) == (0, 2000)
    assert sim.churn[0].time == 1500
    assert sim.churn[0].kind == ChurnKind.REMOVE_EDGE
    assert sim.trace


def test_saved_config_reloads_identically(tmp_path):
    config = parse_config({"seed": 5, "topology": {"model": "ba", "n": 50, "m": 120}})
    path = tmp_path / "config.yaml"
    save_config(config, str(path))
    reloaded = load_config(str(path))
    assert reloaded == config
    assert config_hash(reloaded) == config_hash(config)


def test_config_hash_changes_with_seed():
    assert config_hash(ScenarioConfig(seed=1)) != config_hash(ScenarioConfig(seed=2))


def test_narrowest_hash_ranges_accepted():
    config = parse_config({"probe": {"marker_grind_bits": 2, "squatter_grind_bits": 2}})
    assert config.probe.marker_grind_bits == 2


def test_churn_entries_typed():
    config = parse_config({"sim": {"churn": [
        {"time_s": 1.5, "node": 3},
        {"time_s": 2, "kind": "remove_edge", "node": 3, "peer": 4},
    ]}})
    events = build_sim_config(config).churn
    assert [(e.time, e.kind, e.node, e.peer) for e in events] == [
        (1500, ChurnKind.DISCONNECT, 3, None),
        (2000, ChurnKind.REMOVE_EDGE, 3, 4),
    ]
