"""Долгие сценарии целиком: генерация, симуляция, сканирование, сравнение."""
import pytest

from topoprobe.cli import build_topology
from topoprobe.config_loader import build_sim_config, parse_config
from topoprobe.graphgen import degree_sequence, gen_er
from topoprobe.metrics import ensemble_compare
from topoprobe.netsim import build_network
from topoprobe.prober import evaluate_pr, full_scan, ground_truth_edges

pytestmark = pytest.mark.slow

MODELS = ("er", "cm", "ba")


def _scan(data):
    config = parse_config(data)
    topology = build_topology(config.topology, config.seed)
    sim = build_network(topology, build_sim_config(config))
    result = full_scan(sim, config.probe, seed=config.seed)
    precision, recall = evaluate_pr(result.edge_set, ground_truth_edges(topology), result.retained_nodes)
    return result, precision, recall


def _topology(seed):
    model = MODELS[seed % len(MODELS)]
    n = 50 + 12 * seed
    if model == "cm":
        degrees = degree_sequence(gen_er(n, 3 * n, seed))
        return {"model": "cm", "degree_sequence": degrees}
    return {"model": model, "n": n, "m": 3 * n}


@pytest.mark.parametrize("seed", range(20))
def test_scan_is_exact(seed):
    _, precision, recall = _scan({"seed": seed, "topology": _topology(seed)})
    assert precision == 1.0
    assert recall == 1.0


def test_unblockable_nodes_and_trickle():
    result, precision, recall = _scan({
        "seed": 3,
        "topology": {"model": "er", "n": 200, "m": 800},
        "sim": {"unblockable_fraction": 0.05, "inv_trickle_ms": [0, 2000]},
    })
    assert precision == 1.0
    assert recall >= 0.9
    assert "unblockable" in result.excluded_nodes.values()


@pytest.mark.parametrize("marker_wait_s", [5.0, 30.0])
def test_marker_wait_does_not_change_result(marker_wait_s):
    data = {"seed": 5, "topology": {"model": "er", "n": 120, "m": 400}}
    baseline, _, _ = _scan(data)
    varied, precision, recall = _scan({**data, "probe": {"marker_wait_s": marker_wait_s}})
    assert varied.edge_set == baseline.edge_set
    assert (precision, recall) == (1.0, 1.0)


def test_random_column_of_comparison_table():
    graph = gen_er(733, 6090, seed=2)
    comparison = ensemble_compare(graph, models=("ER",), runs=100, seed=2, workers=4)
    stats = comparison.models["ER"]

    assert comparison.observed.edges == 6090
    assert stats["radius"].runs == 100
    assert stats["radius"].mean == 3
    assert stats["radius"].percent_higher == 0.0
    assert stats["transitivity"].mean == pytest.approx(0.023, abs=0.003)
    assert stats["modularity"].mean == pytest.approx(0.220, abs=0.02)
    assert stats["degree_assortativity"].mean == pytest.approx(-0.001, abs=0.01)


def test_testnet_sized_ensemble_all_models():
    graph = gen_er(733, 6090, seed=4)
    comparison = ensemble_compare(graph, models=("ER", "CM", "BA"), runs=2, seed=4, workers=2)
    assert set(comparison.models) == {"ER", "CM", "BA"}
    for stats in comparison.models.values():
        assert stats["diameter"].runs == 2
        assert 0.0 <= stats["clique_number"].percent_higher <= 100.0
