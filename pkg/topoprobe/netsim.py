"""
Детерминированный симулятор дискретных событий.

Глобальные виртуальные часы, доставка сообщений с задержкой, исходная
топология, смена состава (churn) и наблюдатели вне топологии, связанные
с каждым узлом.

Формат трассы (JSON Lines, порядок полей фиксирован):
    {"time": мс, "from": id, "to": id, "kind": "inv|getdata|tx",
     "ids": ["<64 hex>", ...], "status": "delivered" | "dropped:<причина>"}
"""
import dataclasses
import hashlib
import heapq
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Set

import networkx as nx

from .node import (
    Behavior,
    Message,
    MessageKind,
    NodeState,
    ORPHAN_POOL_CAPACITY,
    TxOutcome,
    drop_peer,
    expire_requests,
    handle_getdata,
    handle_inv,
    handle_tx,
)
from .seeding import make_rng
from .time_utils import seconds

logger = logging.getLogger("topoprobe")

# Наблюдатели: вне топологии, связаны с каждым узлом
OBSERVER = -1
SECOND_OBSERVER = -2
OBSERVERS = frozenset({OBSERVER, SECOND_OBSERVER})


class TopologyError(ValueError):
    """Топология не является простым неориентированным графом."""


class InjectionError(ValueError):
    """Некорректная внешняя инъекция сообщения."""


@dataclass(frozen=True)
class LatencyModel:
    """Распределение задержки в миллисекундах: fixed или uniform."""
    kind: str
    lo_ms: int
    hi_ms: int

    def __post_init__(self):
        if self.kind not in ("fixed", "uniform"):
            raise ValueError(f"Неизвестная модель задержки: {self.kind}")
        if not 0 <= self.lo_ms <= self.hi_ms:
            raise ValueError(f"Некорректные границы задержки: {self.lo_ms}..{self.hi_ms}")

    @classmethod
    def fixed(cls, ms: int) -> "LatencyModel":
        return cls("fixed", ms, ms)

    @classmethod
    def uniform(cls, lo_ms: int, hi_ms: int) -> "LatencyModel":
        return cls("uniform", lo_ms, hi_ms)

    @property
    def max_ms(self) -> int:
        return self.hi_ms

    def sample(self, rng) -> int:
        if self.kind == "fixed":
            return self.lo_ms
        return rng.randint(self.lo_ms, self.hi_ms)


class ChurnKind(str, Enum):
    DISCONNECT = "disconnect"
    ADD_EDGE = "add_edge"
    REMOVE_EDGE = "remove_edge"


@dataclass(frozen=True)
class ChurnEvent:
    time: int
    kind: ChurnKind
    node: int
    peer: Optional[int] = None


@dataclass
class SimConfig:
    """Параметры симуляции."""
    seed: int = 0
    latency: LatencyModel = field(default_factory=lambda: LatencyModel.uniform(50, 150))
    unblockable_fraction: float = 0.0
    churn: List[ChurnEvent] = field(default_factory=list)
    inv_trickle: Optional[LatencyModel] = None
    observer_latency_ms: int = 0
    orphan_capacity: int = ORPHAN_POOL_CAPACITY
    trace: bool = False


class EventKind(str, Enum):
    DELIVER = "deliver"
    INJECT = "inject"
    TIMER = "timer"
    CHURN = "churn"


@dataclass(order=True)
class SimEvent:
    """Событие очереди; обрабатывается в порядке (time, seq)."""
    time: int
    seq: int
    kind: EventKind = field(compare=False)
    message: Optional[Message] = field(default=None, compare=False)
    node: Optional[int] = field(default=None, compare=False)
    churn: Optional[ChurnEvent] = field(default=None, compare=False)


@dataclass
class DeliveryStats:
    """Учёт сообщений: каждое отправленное доставлено или отброшено с причиной."""
    sent: int = 0
    delivered: int = 0
    dropped: Counter = field(default_factory=Counter)

    @property
    def dropped_total(self) -> int:
        return sum(self.dropped.values())


class Simulation:
    """Сеть симулируемых узлов и очередь событий."""

    def __init__(self, topology: nx.Graph, config: SimConfig):
        """
        Инициализирует симуляцию.

        Args:
            topology: Простой неориентированный граф
            config: Параметры симуляции
        """
        self.config = config
        self.topology = topology
        self.now = 0
        self.nodes: Dict[int, NodeState] = {}
        self.disconnected: Set[int] = set()
        self.stats = DeliveryStats()
        self.tx_outcomes: Counter = Counter()
        self.trace: List[str] = []
        self._queue: List[SimEvent] = []
        self._seq = 0
        self._armed: Dict[int, int] = {}
        self._rng = make_rng(config.seed, "sim")
        self._trace_digest = hashlib.sha256()

        behavior_rng = make_rng(config.seed, "behavior")
        for node_id in sorted(topology.nodes):
            drawn = behavior_rng.random() < config.unblockable_fraction
            preset = topology.nodes[node_id].get("behavior")
            if preset is not None:
                behavior = Behavior(preset)
            else:
                behavior = Behavior.UNBLOCKABLE if drawn else Behavior.WELL_BEHAVED
            self.nodes[node_id] = NodeState(
                node_id=node_id,
                peers=set(topology.neighbors(node_id)),
                behavior=behavior,
                orphan_capacity=config.orphan_capacity,
                observers=OBSERVERS,
                rng=make_rng(config.seed, "node", node_id),
            )

        for churn in sorted(config.churn, key=lambda c: (c.time, c.kind.value, c.node)):
            self.schedule_churn(churn)

    # ==================== Публичный интерфейс ====================

    def node(self, node_id: int) -> NodeState:
        return self.nodes[node_id]

    def live_nodes(self) -> List[int]:
        """Узлы, не отключившиеся к текущему моменту."""
        return [node_id for node_id in sorted(self.nodes) if node_id not in self.disconnected]

    @property
    def in_flight(self) -> int:
        return sum(
            1 for event in self._queue
            if event.kind in (EventKind.DELIVER, EventKind.INJECT)
        )

    def inject(self, to: int, msg: Message, at: Optional[int] = None) -> None:
        """
        Ставит в очередь сообщение от наблюдателя.

        Args:
            to: Узел-получатель
            msg: Сообщение (отправитель - наблюдатель)
            at: Время отправки (по умолчанию - сейчас)

        Raises:
            InjectionError: Прошедшее время или отправитель не наблюдатель
        """
        at = self.now if at is None else at
        if at < self.now:
            raise InjectionError(f"Инъекция в прошлое: {at} < {self.now}")
        if msg.sender not in OBSERVERS:
            raise InjectionError(f"Инъекция допустима только от наблюдателя, не от {msg.sender}")
        if msg.recipient != to:
            msg = dataclasses.replace(msg, recipient=to)
        self.stats.sent += 1
        self._push(at + self.config.observer_latency_ms, EventKind.INJECT, message=msg)

    def inject_all(self, targets: Iterable[int], build, at: Optional[int] = None) -> None:
        """Инъекция сообщения build(target) каждому узлу из targets."""
        for target in targets:
            self.inject(target, build(target), at)

    def schedule_churn(self, churn: ChurnEvent) -> None:
        if churn.time < self.now:
            raise InjectionError(f"Событие churn в прошлом: {churn.time} < {self.now}")
        self._push(churn.time, EventKind.CHURN, churn=churn)

    def run_until(self, t: int) -> List[Message]:
        """
        Обрабатывает все события со временем не позже t.

        Args:
            t: Время остановки

        Returns:
            Сообщения, доставленные наблюдателям, в порядке доставки
        """
        if t < self.now:
            raise ValueError(f"Нельзя вернуться во времени: {t} < {self.now}")

        captured: List[Message] = []
        while self._queue and self._queue[0].time <= t:
            event = heapq.heappop(self._queue)
            self.now = event.time
            self._process(event, captured)
        self.now = t
        return captured

    def run_for(self, duration: int) -> List[Message]:
        return self.run_until(self.now + duration)

    def trace_hash(self) -> str:
        """sha256 трассы (только при включённой трассировке)."""
        return self._trace_digest.hexdigest()

    def write_trace(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for line in self.trace:
                f.write(line + "\n")

    # ==================== Обработка событий ====================

    def _push(self, time: int, kind: EventKind, **payload) -> None:
        self._seq += 1
        heapq.heappush(self._queue, SimEvent(time, self._seq, kind, **payload))

    def _process(self, event: SimEvent, captured: List[Message]) -> None:
        if event.kind in (EventKind.DELIVER, EventKind.INJECT):
            self._deliver(event.message, captured)
        elif event.kind == EventKind.TIMER:
            self._fire_timer(event)
        elif event.kind == EventKind.CHURN:
            self._apply_churn(event.churn)

    def _deliver(self, msg: Message, captured: List[Message]) -> None:
        if msg.recipient in OBSERVERS:
            self.stats.delivered += 1
            self._record(msg, "delivered")
            captured.append(msg)
            return

        state = self.nodes.get(msg.recipient)
        if state is None or msg.recipient in self.disconnected:
            self._drop(msg, "recipient_disconnected")
            return
        if not state.is_linked(msg.sender):
            self._drop(msg, "link_down")
            return

        self.stats.delivered += 1
        self._record(msg, "delivered")

        if msg.kind == MessageKind.INV:
            outbound = handle_inv(state, msg.sender, msg.ids, self.now)
        elif msg.kind == MessageKind.GETDATA:
            outbound = handle_getdata(state, msg.sender, msg.ids)
        else:
            outcome, outbound = handle_tx(state, msg.sender, msg.tx, self.now)
            self.tx_outcomes[outcome] += 1
            if outcome == TxOutcome.REJECTED_INVALID:
                logger.debug(f"[узел {state.node_id}] некорректная транзакция от {msg.sender}")

        for out in outbound:
            self._send(out)
        self._arm_timer(state)

    def _send(self, msg: Message) -> None:
        self.stats.sent += 1
        if msg.recipient in OBSERVERS:
            delay = self.config.observer_latency_ms
        else:
            delay = self.config.latency.sample(self._rng)
            if msg.kind == MessageKind.INV and self.config.inv_trickle is not None:
                delay += self.config.inv_trickle.sample(self._rng)
        self._push(self.now + delay, EventKind.DELIVER, message=msg)

    def _drop(self, msg: Message, reason: str) -> None:
        self.stats.dropped[reason] += 1
        self._record(msg, f"dropped:{reason}")
        logger.debug(
            f"[узел {msg.recipient}] {msg.kind.value} от {msg.sender} отброшено: {reason}",
            extra={"sim_time": self.now}
        )

    def _arm_timer(self, state: NodeState) -> None:
        deadline = state.next_deadline()
        if deadline is None:
            return
        armed = self._armed.get(state.node_id)
        if armed is not None and armed <= deadline:
            return
        self._armed[state.node_id] = deadline
        self._push(deadline, EventKind.TIMER, node=state.node_id)

    def _fire_timer(self, event: SimEvent) -> None:
        if self._armed.get(event.node) == event.time:
            del self._armed[event.node]
        if event.node in self.disconnected:
            return
        state = self.nodes[event.node]
        for out in expire_requests(state, self.now):
            self._send(out)
        self._arm_timer(state)

    def _apply_churn(self, churn: ChurnEvent) -> None:
        if churn.kind == ChurnKind.DISCONNECT:
            if churn.node in self.disconnected or churn.node not in self.nodes:
                return
            state = self.nodes[churn.node]
            for peer in list(state.peers):
                drop_peer(self.nodes[peer], churn.node)
            state.peers.clear()
            self.disconnected.add(churn.node)
            logger.info(f"[узел {churn.node}] отключился", extra={"sim_time": self.now})
            return

        u, v = churn.node, churn.peer
        if u in self.disconnected or v in self.disconnected or u == v:
            return
        if u not in self.nodes or v not in self.nodes:
            return
        if churn.kind == ChurnKind.ADD_EDGE:
            self.nodes[u].peers.add(v)
            self.nodes[v].peers.add(u)
        else:
            drop_peer(self.nodes[u], v)
            drop_peer(self.nodes[v], u)
        logger.debug(f"[ребро {u}-{v}] {churn.kind.value}", extra={"sim_time": self.now})

    def _record(self, msg: Message, status: str) -> None:
        if not self.config.trace:
            return
        line = json.dumps({
            "time": self.now,
            "from": msg.sender,
            "to": msg.recipient,
            "kind": msg.kind.value,
            "ids": [f"{txid:064x}" for txid in msg.ids],
            "status": status,
        })
        self.trace.append(line)
        self._trace_digest.update(line.encode("utf-8") + b"\n")


def build_network(topology: nx.Graph, config: SimConfig) -> Simulation:
    """
    Строит симуляцию по топологии.

    Args:
        topology: Простой неориентированный граф с целыми неотрицательными id
        config: Параметры симуляции

    Returns:
        Simulation с одним NodeState на вершину

    Raises:
        TopologyError: Мультиграф, ориентированный граф, петли или некорректные id
    """
    if topology.is_multigraph():
        raise TopologyError("Мультиграфы не поддерживаются")
    if topology.is_directed():
        raise TopologyError("Топология должна быть неориентированной")
    if nx.number_of_selfloops(topology) > 0:
        raise TopologyError("Топология содержит петли")
    for node_id in topology.nodes:
        if not isinstance(node_id, int) or node_id < 0:
            raise TopologyError(f"Идентификатор узла должен быть целым >= 0: {node_id!r}")

    simulation = Simulation(topology, config)
    unblockable = sum(1 for s in simulation.nodes.values() if s.behavior == Behavior.UNBLOCKABLE)
    logger.info(
        f"Сеть построена: {topology.number_of_nodes()} узлов, "
        f"{topology.number_of_edges()} рёбер, неблокируемых {unblockable}"
    )
    return simulation


def settle_time(config: SimConfig, hops: int) -> int:
    """Оценка сверху времени распространения на hops переходов (3 пересылки на переход)."""
    per_trip = config.latency.max_ms
    if config.inv_trickle is not None:
        per_trip += config.inv_trickle.max_ms
    return hops * 3 * per_trip + seconds(1)



def observer_round_trip(config: SimConfig) -> int:
    """Время от отправки сообщения наблюдателем до получения им ответа узла."""
    return 2 * config.observer_latency_ms
