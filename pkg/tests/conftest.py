import logging

import networkx as nx
import pytest

from topoprobe.config_loader import ProbeConfig
from topoprobe.logger import LOGGER_NAME
from topoprobe.netsim import LatencyModel, SimConfig, build_network
from topoprobe.node import NodeState


@pytest.fixture(autouse=True)
def reset_logger():
    """setup_logger вешает обработчики один раз; между тестами их снимаем."""
    yield
    logger = logging.getLogger(LOGGER_NAME)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()


@pytest.fixture
def probe_config():
    return ProbeConfig()


@pytest.fixture
def make_sim():
    """Фабрика симуляций; по умолчанию фиксированная задержка 100 мс."""

    def factory(graph: nx.Graph, latency: LatencyModel = LatencyModel.fixed(100), **kwargs):
        return build_network(graph, SimConfig(latency=latency, **kwargs))

    return factory


def assert_consistent(state: NodeState) -> None:
    """Инварианты состояния узла после любой последовательности сообщений."""
    assert len(state.orphan_pool) <= state.orphan_capacity
    assert not set(state.mempool) & set(state.orphan_pool)

    spenders = {}
    for txid, tx in state.mempool.items():
        for outpoint in tx.inputs:
            assert outpoint not in spenders, f"двойная трата {outpoint} в mempool"
            spenders[outpoint] = txid
    assert spenders == state.spent_by

    for entry in state.orphan_pool.values():
        assert any(
            outpoint not in state.utxo_view and outpoint.txid not in state.mempool
            for outpoint in entry.tx.inputs
        )
