import json

import networkx as nx
import numpy as np
import pytest

from conftest import assert_consistent
from topoprobe.graphgen import gen_er
from topoprobe.netsim import (
    OBSERVER,
    ChurnEvent,
    ChurnKind,
    InjectionError,
    LatencyModel,
    SimConfig,
    TopologyError,
    build_network,
    settle_time,
)
from topoprobe.node import Behavior, Message
from topoprobe.time_utils import REQUEST_TIMEOUT
from topoprobe.txmodel import build_funding_root


def _tx_to(node: int, tx):
    return Message.transaction(OBSERVER, node, tx)


def test_build_triangle(make_sim):
    sim = make_sim(nx.complete_graph(3), LatencyModel.fixed(50))
    assert len(sim.nodes) == 3
    assert all(len(state.peers) == 2 for state in sim.nodes.values())


@pytest.mark.parametrize("graph", [
    nx.MultiGraph([(0, 1)]),
    nx.DiGraph([(0, 1)]),
    nx.Graph([(0, 0)]),
    nx.Graph([("a", "b")]),
    nx.Graph([(-1, 2)]),
])
def test_build_rejects_bad_topology(graph):
    with pytest.raises(TopologyError):
        build_network(graph, SimConfig())


def test_isolated_nodes_keep_tx_to_themselves(make_sim):
    sim = make_sim(nx.empty_graph(5))
    tx = build_funding_root(1, nonce=1)
    sim.inject(0, _tx_to(0, tx))
    sim.run_until(10_000)
    assert [node for node in sim.nodes if sim.node(node).knows(tx.txid)] == [0]


def test_path_hop_timing(make_sim):
    sim = make_sim(nx.path_graph(10), LatencyModel.fixed(50))
    tx = build_funding_root(1, nonce=2)
    sim.inject(0, _tx_to(0, tx), 0)
    for i in range(1, 10):
        sim.run_until(150 * i - 1)
        assert not sim.node(i).knows(tx.txid)
        sim.run_until(150 * i)
        assert sim.node(i).knows(tx.txid)


def test_accept_at_degree_three_node(make_sim):
    sim = make_sim(nx.star_graph(3), LatencyModel.fixed(100), trace=True)
    sim.inject(0, _tx_to(0, build_funding_root(1, nonce=3)), 0)
    sim.run_until(100)
    invs = [json.loads(line) for line in sim.trace if json.loads(line)["kind"] == "inv"]
    assert len(invs) == 3
    assert {record["time"] for record in invs} == {100}
    assert {record["to"] for record in invs} == {1, 2, 3}


def test_observer_links_deliver_instantly(make_sim):
    sim = make_sim(nx.cycle_graph(6), trace=True)
    tx = build_funding_root(1, nonce=4)
    sim.inject_all([0, 2, 4], lambda node: _tx_to(node, tx), 500)
    sim.run_until(500)
    delivered = [json.loads(line) for line in sim.trace]
    assert [(r["to"], r["time"]) for r in delivered] == [(0, 500), (2, 500), (4, 500)]


def test_invblock_delays_tx_until_timeout(make_sim):
    sim = make_sim(nx.path_graph(2), LatencyModel.fixed(100))
    tx = build_funding_root(1, nonce=5)
    sim.inject(1, Message.inv(OBSERVER, 1, [tx.txid]), 0)
    sim.inject(0, _tx_to(0, tx), 0)

    sim.run_until(REQUEST_TIMEOUT + 199)
    assert not sim.node(1).knows(tx.txid)
    sim.run_until(REQUEST_TIMEOUT + 200)
    assert sim.node(1).knows(tx.txid)


def test_inject_to_disconnected_node_dropped(make_sim):
    sim = make_sim(nx.path_graph(3))
    sim.schedule_churn(ChurnEvent(0, ChurnKind.DISCONNECT, 1))
    sim.run_until(0)
    sim.inject(1, _tx_to(1, build_funding_root(1, nonce=6)))
    sim.run_until(1000)
    assert sim.stats.dropped["recipient_disconnected"] == 1
    assert sim.live_nodes() == [0, 2]


def test_churn_drops_in_flight(make_sim):
    sim = make_sim(nx.path_graph(2), LatencyModel.fixed(100))
    tx = build_funding_root(1, nonce=7)
    sim.inject(0, _tx_to(0, tx), 0)
    sim.schedule_churn(ChurnEvent(50, ChurnKind.DISCONNECT, 1))
    sim.run_until(1000)
    assert not sim.node(1).knows(tx.txid)
    assert sim.node(0).peers == set()
    assert sim.stats.dropped_total == 1


def test_edge_churn(make_sim):
    sim = make_sim(nx.path_graph(3))
    sim.schedule_churn(ChurnEvent(10, ChurnKind.ADD_EDGE, 0, 2))
    sim.schedule_churn(ChurnEvent(20, ChurnKind.REMOVE_EDGE, 0, 1))
    sim.run_until(30)
    assert sim.node(0).peers == {2}
    assert sim.node(1).peers == {2}


def test_delivery_conservation(make_sim):
    graph = gen_er(30, 70, seed=1)
    sim = make_sim(graph, LatencyModel.uniform(50, 150), inv_trickle=LatencyModel.uniform(0, 500))
    tx = build_funding_root(2, nonce=8)
    sim.inject(0, _tx_to(0, tx))
    sim.schedule_churn(ChurnEvent(400, ChurnKind.DISCONNECT, 5))
    for t in (100, 300, 700, 60_000):
        sim.run_until(t)
        assert sim.stats.sent == sim.stats.delivered + sim.stats.dropped_total + sim.in_flight
    assert sim.in_flight == 0
    for node in sim.live_nodes():
        assert_consistent(sim.node(node))


def _traced_flood(seed: int) -> str:
    graph = gen_er(200, 800, seed=seed)
    config = SimConfig(
        seed=seed,
        latency=LatencyModel.uniform(50, 150),
        inv_trickle=LatencyModel.uniform(0, 2000),
        trace=True,
    )
    sim = build_network(graph, config)
    sim.inject(0, _tx_to(0, build_funding_root(1, nonce=seed)))
    sim.run_until(settle_time(config, 20))
    return sim.trace_hash()


def test_same_seed_same_trace():
    assert _traced_flood(3) == _traced_flood(3)
    assert _traced_flood(3) != _traced_flood(4)


def test_injection_errors(make_sim):
    sim = make_sim(nx.path_graph(2))
    sim.run_until(1000)
    with pytest.raises(InjectionError):
        sim.inject(0, Message.inv(OBSERVER, 0, [1]), 999)
    with pytest.raises(InjectionError):
        sim.inject(0, Message.inv(1, 0, [1]))
    with pytest.raises(ValueError):
        sim.run_until(10)


def test_behavior_attribute_overrides_draw(make_sim):
    graph = nx.path_graph(3)
    graph.nodes[1]["behavior"] = "unblockable"
    sim = make_sim(graph)
    assert [sim.node(n).behavior for n in range(3)] == [
        Behavior.WELL_BEHAVED, Behavior.UNBLOCKABLE, Behavior.WELL_BEHAVED
    ]


def test_unblockable_fraction_one(make_sim):
    sim = make_sim(nx.path_graph(4), unblockable_fraction=1.0)
    assert all(state.behavior == Behavior.UNBLOCKABLE for state in sim.nodes.values())


def test_latency_model_validation():
    with pytest.raises(ValueError):
        LatencyModel("normal", 1, 2)
    with pytest.raises(ValueError):
        LatencyModel.uniform(10, 5)


def test_flooding_reaches_every_node_of_connected_graphs():
    rng = np.random.default_rng(17)
    checked, seed = 0, 0
    while checked < 50:
        seed += 1
        n = int(rng.integers(2, 201))
        graph = gen_er(n, min(n * (n - 1) // 2, int(rng.integers(n - 1, 4 * n + 1))), seed=seed)
        if not nx.is_connected(graph):
            continue
        sim = build_network(graph, SimConfig(
            latency=LatencyModel.uniform(50, 150),
            inv_trickle=LatencyModel.uniform(0, 2000),
            seed=seed,
        ))
        tx = build_funding_root(1, nonce=seed)
        origin = int(rng.integers(0, n))
        sim.inject(origin, _tx_to(origin, tx), 0)
        sim.run_until(settle_time(sim.config, n))
        missing = [node for node in sim.nodes if tx.txid not in sim.node(node).mempool]
        assert missing == [], f"seed={seed}: транзакция не дошла до {missing}"
        checked += 1
