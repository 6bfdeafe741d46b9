"""
Движок зондирования: вывод рёбер топологии через пул сирот.

Раунд: очистка пулов сирот приёмников, invblock flood и родителей,
рассылка flood приёмникам, родителей и маркеров источникам, затем
зонд inv со всеми маркерами. Маркер, который приёмник не запросил,
уже лежит у него сиротой, значит источник маркера - его сосед.
"""
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

import networkx as nx

from .config_loader import ProbeConfig
from .costmodel import grid_shape
from .logger import log_round_result
from .netsim import OBSERVER, SECOND_OBSERVER, Simulation, observer_round_trip, settle_time
from .node import Message, MessageKind
from .seeding import make_rng
from .time_utils import seconds, to_seconds
from .txmodel import (
    HASH_BITS,
    SQUATTER_COUNT,
    HashRange,
    Transaction,
    TxId,
    build_cleansing_kit,
    build_conflict_set,
    build_funding_root,
    build_marker,
    grind_attempts,
    grind_into_range,
)

logger = logging.getLogger("topoprobe")

Edge = Tuple[int, int]

# Маркеры - в верхней половине пространства хешей, сквоттеры - сразу над ними
MARKER_RANGE_LO = 1 << (HASH_BITS - 1)

# Задержка cleanser после сквоттеров: сквоттеры должны прийти первыми
CLEANSER_DELAY_MS = 100

# Запас попыток подбора относительно ожидаемого числа 2^bits
GRIND_BUDGET_FACTOR = 64


class ExclusionReason(str, Enum):
    UNBLOCKABLE = "unblockable"
    DISCONNECTED = "disconnected"
    INCONSISTENT = "inconsistent"


class Inconsistency(str, Enum):
    """Нарушения, найденные аудитом раунда."""
    MISSED_PARENT = "missed_parent"
    MISSED_MARKER = "missed_marker"
    HOLDS_FLOOD = "holds_flood"
    MISSING_FLOOD = "missing_flood"
    HOLDS_PARENT = "holds_parent"


def edge_key(u: int, v: int) -> Edge:
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True)
class PhaseTimes:
    """Моменты фаз раунда, мс симуляции."""
    cleanse: int
    invblock: int
    flood_send: int
    parent_send: int
    marker_send: int
    probe: int
    replies: int
    end: int

    @classmethod
    def schedule(cls, start: int, config: ProbeConfig, observer_rtt: int = 0) -> "PhaseTimes":
        """Ответы на зонд ждут probe_wait_s сверх пути до наблюдателя и обратно."""
        invblock = start + config.cleanse_passes * seconds(config.cleanse_wait_s)
        flood_send = invblock + seconds(config.invblock_lead_s)
        parent_send = flood_send + seconds(config.flood_wait_s)
        marker_send = parent_send + seconds(config.parent_wait_s)
        probe = marker_send + seconds(config.marker_wait_s)
        replies = probe + observer_rtt + seconds(config.probe_wait_s)
        end = max(start + seconds(config.round_budget_s), replies)
        return cls(start, invblock, flood_send, parent_send, marker_send, probe, replies, end)


@dataclass
class RoundPlan:
    """План одного раунда."""
    round_index: int
    source_set: List[int]
    sink_set: List[int]
    parent_of: Dict[int, Transaction]
    marker_of: Dict[int, Transaction]
    flood: Transaction
    phase_times: PhaseTimes
    cleansing_kits: List[Tuple[Transaction, List[Transaction]]] = field(default_factory=list)
    bystanders: List[int] = field(default_factory=list)

    def __post_init__(self):
        if set(self.source_set) & set(self.sink_set):
            raise ValueError(f"[раунд {self.round_index}] узел одновременно источник и приёмник")
        if set(self.parent_of) != set(self.source_set) or set(self.marker_of) != set(self.source_set):
            raise ValueError(f"[раунд {self.round_index}] родитель и маркер нужны каждому источнику")
        for node, marker in self.marker_of.items():
            if marker.inputs[0].txid != self.parent_of[node].txid:
                raise ValueError(f"[раунд {self.round_index}] маркер узла {node} не тратит его родителя")

    @property
    def blocked_ids(self) -> List[TxId]:
        """Идентификаторы под invblock: flood и все родители (маркеры никогда)."""
        return [self.flood.txid] + [self.parent_of[node].txid for node in self.source_set]

    def marker_owner(self) -> Dict[TxId, int]:
        return {marker.txid: node for node, marker in self.marker_of.items()}


@dataclass
class RoundObservation:
    """Ответы на зонд раунда."""
    marker_known: Dict[int, Set[TxId]]
    requested: Dict[int, Set[TxId]]
    aborted: Set[int] = field(default_factory=set)


@dataclass
class RoundAudit:
    """Запись аудита одного раунда."""
    round_index: int
    sources: List[int]
    sinks: List[int]
    edges: List[Edge] = field(default_factory=list)
    inconsistent: Dict[int, List[str]] = field(default_factory=dict)
    aborted: List[int] = field(default_factory=list)
    started_at: int = 0
    ended_at: int = 0

    def separates(self, u: int, v: int) -> bool:
        """Раунд мог наблюдать ребро (u, v): один конец источник, другой приёмник, оба отвечали."""
        if u in self.aborted or v in self.aborted:
            return False
        return (u in self._sources and v in self._sinks) or (v in self._sources and u in self._sinks)

    @cached_property
    def _sources(self) -> FrozenSet[int]:
        return frozenset(self.sources)

    @cached_property
    def _sinks(self) -> FrozenSet[int]:
        return frozenset(self.sinks)

    def to_record(self) -> Dict:
        return {
            "round": self.round_index,
            "started_at": self.started_at,
            "ended_at": self.ended_at,
            "sources": list(self.sources),
            "sinks": len(self.sinks),
            "edges": [list(edge) for edge in self.edges],
            "inconsistent": {str(node): reasons for node, reasons in sorted(self.inconsistent.items())},
            "aborted": sorted(self.aborted),
        }


@dataclass
class InferenceResult:
    """Выведенная топология: рёбра с раундами наблюдения и исключённые узлы."""
    edges: Dict[Edge, List[int]] = field(default_factory=dict)
    excluded_nodes: Dict[int, str] = field(default_factory=dict)
    per_round_log: List[RoundAudit] = field(default_factory=list)
    scanned_nodes: List[int] = field(default_factory=list)
    transitory: List[Edge] = field(default_factory=list)

    @property
    def edge_set(self) -> Set[Edge]:
        return set(self.edges)

    @property
    def retained_nodes(self) -> List[int]:
        return [node for node in self.scanned_nodes if node not in self.excluded_nodes]

    def to_graph(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(self.retained_nodes)
        graph.add_edges_from(sorted(self.edges))
        return graph


# ==================== Разбиение ====================

def _split_even(items: Sequence[int], parts: int) -> List[List[int]]:
    """Делит список на parts почти равных непустых частей, сохраняя порядок."""
    size, rest = divmod(len(items), parts)
    chunks = []
    start = 0
    for index in range(parts):
        stop = start + size + (1 if index < rest else 0)
        chunks.append(list(items[start:stop]))
        start = stop
    return chunks


def plan_partitions(nodes: Sequence[int]) -> List[List[int]]:
    """
    Разбивает узлы на source sets по сетке.

    Узлы укладываются по строкам в сетку ширины w = min(ceil(sqrt(r_n)), 100),
    высоты h = ceil(r_n / w). Source sets - строки без последней, затем
    столбцы без последнего. При h > w столбцы длиннее 100 делятся на
    ceil(h / w) частей, и тогда нужны все столбцы.

    Args:
        nodes: Узлы в порядке укладки

    Returns:
        Список source sets; каждая пара узлов разделена хотя бы в одном
    """
    nodes = list(nodes)
    if len(nodes) < 2:
        return []

    width, height = grid_shape(len(nodes))
    rows = [nodes[row * width:(row + 1) * width] for row in range(height)]
    columns = [nodes[column::width] for column in range(width)]

    sets = rows[:height - 1]
    if height <= width:
        sets.extend(columns[:width - 1])
        return sets

    parts = -(-height // width)
    for column in columns:
        sets.extend(_split_even(column, parts))
    return sets


# ==================== Подготовка ====================

def grind_ranges(config: ProbeConfig) -> Tuple[HashRange, HashRange]:
    """Диапазоны подбора: маркеры и примыкающие сверху сквоттеры."""
    markers = HashRange.from_bits(config.marker_grind_bits, MARKER_RANGE_LO)
    return markers, markers.adjacent_above(config.squatter_grind_bits)


def _grind_budget(bits: int) -> int:
    return GRIND_BUDGET_FACTOR << bits


def detect_unblockable(sim: Simulation, nodes: Iterable[int], config: ProbeConfig, seed: int = 0) -> Set[int]:
    """
    Находит узлы, которые запрашивают транзакцию, уже ожидаемую от другого пира.

    Первый наблюдатель объявляет случайный хеш всем узлам, второй - тот же
    хеш через detection_gap_s. Ответившие второму getdata - неблокируемые.

    Returns:
        Множество неблокируемых узлов
    """
    nodes = list(nodes)
    if not nodes:
        return set()

    probe_hash = make_rng(seed, "probe", "detect").getrandbits(HASH_BITS)
    start = sim.now
    second = start + seconds(config.detection_gap_s)
    sim.inject_all(nodes, lambda node: Message.inv(OBSERVER, node, (probe_hash,)), start)
    sim.inject_all(nodes, lambda node: Message.inv(SECOND_OBSERVER, node, (probe_hash,)), second)
    captured = sim.run_until(second + observer_round_trip(sim.config) + seconds(config.detection_wait_s))

    flagged = {
        msg.sender for msg in captured
        if msg.kind == MessageKind.GETDATA
        and msg.recipient == SECOND_OBSERVER
        and probe_hash in msg.ids
    }
    if flagged:
        logger.warning(
            f"Неблокируемые узлы ({len(flagged)}): {sorted(flagged)}",
            extra={"sim_time": sim.now}
        )
    return flagged


def fund_scan(sim: Simulation, outputs: int, targets: Iterable[int], config: ProbeConfig, seed: int = 0) -> Transaction:
    """Рассылает корневую транзакцию финансирования и ждёт её распространения."""
    nonce = make_rng(seed, "probe", "funding").getrandbits(64)
    root = build_funding_root(outputs, nonce)
    sim.inject_all(targets, lambda node: Message.transaction(OBSERVER, node, root))
    sim.run_for(seconds(config.funding_wait_s))
    logger.info(f"Финансирование: {outputs} выходов", extra={"sim_time": sim.now})
    return root


def build_round_plan(
    round_index: int,
    sources: Sequence[int],
    sinks: Sequence[int],
    funding: Transaction,
    first_output: int,
    config: ProbeConfig,
    start: int,
    bystanders: Sequence[int] = (),
    observer_rtt: int = 0
) -> RoundPlan:
    """
    Строит транзакции раунда.

    Выход first_output корня финансирования тратит набор конфликтов,
    следующие cleanse_passes выходов - комплекты очистки.
    """
    marker_range, squatter_range = grind_ranges(config)
    conflict = build_conflict_set(funding.outpoint(first_output), len(sources))
    parents, flood = conflict[:-1], conflict[-1]

    marker_budget = _grind_budget(config.marker_grind_bits)
    parent_of = dict(zip(sources, parents))
    marker_of = {
        node: grind_into_range(build_marker(parent), marker_range, marker_budget)
        for node, parent in parent_of.items()
    }

    squatter_budget = _grind_budget(config.squatter_grind_bits)
    kits = []
    for offset in range(config.cleanse_passes):
        cleanser, squatters = build_cleansing_kit(
            funding.outpoint(first_output + 1 + offset), SQUATTER_COUNT + config.squatter_margin
        )
        kits.append((cleanser, [grind_into_range(s, squatter_range, squatter_budget) for s in squatters]))

    attempts = [grind_attempts(build_marker(parent_of[node]), marker) for node, marker in marker_of.items()]
    if attempts:
        logger.debug(
            f"[раунд {round_index}] подбор маркеров: в среднем {sum(attempts) / len(attempts):.0f} попыток"
        )

    return RoundPlan(
        round_index=round_index,
        source_set=list(sources),
        sink_set=list(sinks),
        parent_of=parent_of,
        marker_of=marker_of,
        flood=flood,
        phase_times=PhaseTimes.schedule(start, config, observer_rtt),
        cleansing_kits=kits,
        bystanders=list(bystanders),
    )


# ==================== Фазы раунда ====================

def cleanse_sinks(
    sim: Simulation,
    sink_set: Iterable[int],
    kits: Sequence[Tuple[Transaction, Sequence[Transaction]]],
    config: ProbeConfig
) -> None:
    """
    Очищает пулы сирот приёмников.

    Каждому приёмнику - все сквоттеры (они вытесняют чужих сирот), затем
    cleanser: один сквоттер принимается, остальные отклоняются как конфликт.
    """
    sinks = list(sink_set)
    for cleanser, squatters in kits:
        start = sim.now
        for node in sinks:
            for squatter in squatters:
                sim.inject(node, Message.transaction(OBSERVER, node, squatter), start)
        sim.inject_all(
            sinks,
            lambda node: Message.transaction(OBSERVER, node, cleanser),
            start + CLEANSER_DELAY_MS
        )
        sim.run_until(start + seconds(config.cleanse_wait_s))


def invblock_all(
    sim: Simulation,
    ids: Sequence[TxId],
    targets: Iterable[int],
    until: int,
    config: ProbeConfig
) -> None:
    """
    Блокирует ids у всех целей: повторные inv от наблюдателя каждые
    invblock_refresh_s до момента until. Ничего не прогоняет.
    """
    targets = list(targets)
    refresh = seconds(config.invblock_refresh_s)
    at = sim.now
    while at < until:
        sim.inject_all(targets, lambda node: Message.inv(OBSERVER, node, ids), at)
        at += refresh


def execute_round(sim: Simulation, plan: RoundPlan, config: ProbeConfig) -> RoundObservation:
    """
    Фазы рассылки и зонд.

    Returns:
        Для каждого приёмника - маркеры, которые он не запросил, и все
        запрошенные узлами идентификаторы (для аудита)
    """
    times = plan.phase_times
    sim.run_until(max(sim.now, times.flood_send))
    live = set(sim.live_nodes())
    flood_targets = [node for node in plan.sink_set + plan.bystanders if node in live]
    sim.inject_all(flood_targets, lambda node: Message.transaction(OBSERVER, node, plan.flood))

    sim.run_until(times.parent_send)
    for node in plan.source_set:
        sim.inject(node, Message.transaction(OBSERVER, node, plan.parent_of[node]))

    sim.run_until(times.marker_send)
    for node in plan.source_set:
        sim.inject(node, Message.transaction(OBSERVER, node, plan.marker_of[node]))

    sim.run_until(times.probe)
    marker_ids = [plan.marker_of[node].txid for node in plan.source_set]
    sink_probe = marker_ids + plan.blocked_ids
    sim.inject_all(plan.sink_set, lambda node: Message.inv(OBSERVER, node, sink_probe))
    for node in plan.source_set:
        own = (plan.flood.txid, plan.parent_of[node].txid, plan.marker_of[node].txid)
        sim.inject(node, Message.inv(OBSERVER, node, own))

    captured = sim.run_until(times.replies)
    requested: Dict[int, Set[TxId]] = defaultdict(set)
    for msg in captured:
        if msg.kind == MessageKind.GETDATA and msg.recipient == OBSERVER:
            requested[msg.sender].update(msg.ids)

    aborted = {node for node in plan.source_set + plan.sink_set if node in sim.disconnected}
    marker_set = set(marker_ids)
    marker_known = {
        node: marker_set - requested[node]
        for node in plan.sink_set
        if node not in aborted
    }
    for node in sorted(aborted):
        logger.warning(
            f"[раунд {plan.round_index}] [узел {node}] отключился, раунд для него прерван",
            extra={"sim_time": sim.now}
        )
    return RoundObservation(marker_known, dict(requested), aborted)


def infer_edges(marker_known: Dict[int, Set[TxId]], plan: RoundPlan) -> Set[Edge]:
    """Ребро (источник, приёмник) для каждого маркера, не запрошенного приёмником."""
    owner = plan.marker_owner()
    return {
        edge_key(owner[marker], sink)
        for sink, known in marker_known.items()
        for marker in known
        if marker in owner
    }


def audit_round(plan: RoundPlan, observation: RoundObservation) -> Dict[int, List[str]]:
    """
    Проверяет согласованность ответов на зонд.

    Источник должен держать свои родителя и маркер и не знать flood;
    приёмник должен держать flood и не знать ни одного родителя.

    Returns:
        Узел -> список нарушений
    """
    flood = plan.flood.txid
    parents = {plan.parent_of[node].txid for node in plan.source_set}
    findings: Dict[int, List[str]] = {}

    for node in plan.source_set:
        if node in observation.aborted:
            continue
        requested = observation.requested.get(node, set())
        problems = []
        if plan.parent_of[node].txid in requested:
            problems.append(Inconsistency.MISSED_PARENT.value)
        if plan.marker_of[node].txid in requested:
            problems.append(Inconsistency.MISSED_MARKER.value)
        if flood not in requested:
            problems.append(Inconsistency.HOLDS_FLOOD.value)
        if problems:
            findings[node] = problems

    for node in plan.sink_set:
        if node in observation.aborted:
            continue
        requested = observation.requested.get(node, set())
        problems = []
        if flood in requested:
            problems.append(Inconsistency.MISSING_FLOOD.value)
        if not parents <= requested:
            problems.append(Inconsistency.HOLDS_PARENT.value)
        if problems:
            findings[node] = problems

    return findings


# ==================== Очистка результата ====================

def sanitize(result: InferenceResult, transitory_threshold: float = 1.0) -> InferenceResult:
    """
    Очищает вывод по журналу аудита.

    Исключает несогласованные и отключившиеся узлы вместе с их рёбрами;
    снимает транзиентные рёбра, наблюдённые в доле раундов меньше порога
    среди раундов, которые могли их наблюдать.

    Args:
        result: Сырой результат сканирования
        transitory_threshold: Минимальная доля наблюдений для ребра

    Returns:
        Новый InferenceResult
    """
    excluded = dict(result.excluded_nodes)
    for audit in result.per_round_log:
        for node in audit.aborted:
            excluded.setdefault(node, ExclusionReason.DISCONNECTED.value)
        for node in audit.inconsistent:
            excluded.setdefault(node, ExclusionReason.INCONSISTENT.value)

    kept: Dict[Edge, List[int]] = {}
    transitory = list(result.transitory)
    for edge, rounds in sorted(result.edges.items()):
        u, v = edge
        if u in excluded or v in excluded:
            continue
        chances = sum(1 for audit in result.per_round_log if audit.separates(u, v))
        if chances and len(rounds) / chances < transitory_threshold:
            transitory.append(edge)
            continue
        kept[edge] = list(rounds)

    return InferenceResult(
        edges=kept,
        excluded_nodes=excluded,
        per_round_log=result.per_round_log,
        scanned_nodes=result.scanned_nodes,
        transitory=transitory,
    )


def evaluate_pr(inferred: Iterable[Edge], truth: Iterable[Edge], retained: Iterable[int]) -> Tuple[float, float]:
    """
    Точность и полнота вывода на подграфе сохранённых узлов.

    Returns:
        (precision, recall); 1.0 для пустого знаменателя
    """
    retained = set(retained)

    def restrict(edges: Iterable[Edge]) -> Set[Edge]:
        return {edge_key(u, v) for u, v in edges if u in retained and v in retained}

    inferred, truth = restrict(inferred), restrict(truth)
    hits = len(inferred & truth)
    precision = hits / len(inferred) if inferred else 1.0
    recall = hits / len(truth) if truth else 1.0
    return precision, recall


def ground_truth_edges(graph: nx.Graph) -> Set[Edge]:
    return {edge_key(u, v) for u, v in graph.edges}


# ==================== Полное сканирование ====================

def run_round(
    sim: Simulation,
    round_index: int,
    sources: Sequence[int],
    retained: Sequence[int],
    funding: Transaction,
    first_output: int,
    config: ProbeConfig
) -> Tuple[Set[Edge], RoundAudit]:
    """Один полный раунд: план, очистка, invblock, фазы, вывод и аудит."""
    live = sim.live_nodes()
    live_set = set(live)
    source_set = [node for node in sources if node in live_set]
    chosen = set(source_set)
    sinks = [node for node in retained if node in live_set and node not in chosen]
    retained_set = set(retained)
    bystanders = [node for node in live if node not in retained_set]

    plan = build_round_plan(
        round_index, source_set, sinks, funding, first_output, config, sim.now, bystanders,
        observer_round_trip(sim.config)
    )
    times = plan.phase_times
    if times.end > times.cleanse + seconds(config.round_budget_s):
        logger.warning(f"[раунд {round_index}] фазы не укладываются в бюджет раунда {config.round_budget_s} с")
    if seconds(config.marker_wait_s) < settle_time(sim.config, 1):
        logger.warning(
            f"[раунд {round_index}] marker_wait_s={config.marker_wait_s} с меньше времени одного перехода "
            f"{to_seconds(settle_time(sim.config, 1)):.1f} с"
        )

    cleanse_sinks(sim, plan.sink_set, plan.cleansing_kits, config)
    invblock_all(sim, plan.blocked_ids, sim.live_nodes(), times.end, config)
    observation = execute_round(sim, plan, config)
    edges = infer_edges(observation.marker_known, plan)
    findings = audit_round(plan, observation)
    sim.run_until(max(sim.now, times.end))

    for node, problems in sorted(findings.items()):
        logger.warning(
            f"[раунд {round_index}] [узел {node}] несогласован: {', '.join(problems)}",
            extra={"sim_time": sim.now}
        )

    audit = RoundAudit(
        round_index=round_index,
        sources=plan.source_set,
        sinks=plan.sink_set,
        edges=sorted(edges),
        inconsistent=findings,
        aborted=sorted(observation.aborted),
        started_at=times.cleanse,
        ended_at=sim.now,
    )
    excluded = {node: ExclusionReason.INCONSISTENT.value for node in findings}
    excluded.update({node: ExclusionReason.DISCONNECTED.value for node in observation.aborted})
    log_round_result(
        logger, round_index, len(plan.source_set), len(plan.sink_set), len(edges), excluded, sim.now
    )
    return edges, audit


def full_scan(sim: Simulation, config: Optional[ProbeConfig] = None, seed: Optional[int] = None) -> InferenceResult:
    """
    Полное сканирование сети.

    Обнаружение неблокируемых узлов, разбиение оставшихся, по раунду на
    каждый source set, объединение рёбер и очистка по аудиту.

    Args:
        sim: Симуляция (используется монопольно)
        config: Параметры зондирования
        seed: Зерно подпотока probe (по умолчанию - зерно симуляции)

    Returns:
        Очищенный InferenceResult
    """
    config = config or ProbeConfig()
    seed = sim.config.seed if seed is None else seed

    scanned = sim.live_nodes()
    unblockable = detect_unblockable(sim, scanned, config, seed)
    excluded = {node: ExclusionReason.UNBLOCKABLE.value for node in sorted(unblockable)}
    retained = [node for node in scanned if node not in unblockable]

    partitions = plan_partitions(retained)
    outputs_per_round = 1 + config.cleanse_passes
    logger.info(
        f"Сканирование: {len(retained)} узлов, {len(partitions)} раундов",
        extra={"sim_time": sim.now}
    )

    edges: Dict[Edge, List[int]] = {}
    audits: List[RoundAudit] = []
    if partitions:
        funding = fund_scan(sim, outputs_per_round * len(partitions), scanned, config, seed)
        for index, sources in enumerate(partitions):
            round_edges, audit = run_round(
                sim, index, sources, retained, funding, index * outputs_per_round, config
            )
            for edge in round_edges:
                edges.setdefault(edge, []).append(index)
            audits.append(audit)

    for node in scanned:
        if node in sim.disconnected:
            excluded.setdefault(node, ExclusionReason.DISCONNECTED.value)

    raw = InferenceResult(
        edges=edges,
        excluded_nodes=excluded,
        per_round_log=audits,
        scanned_nodes=scanned,
    )
    result = sanitize(raw, config.transitory_threshold)
    logger.info(
        f"Сканирование завершено: рёбер {len(result.edges)}, исключено узлов "
        f"{len(result.excluded_nodes)}, транзиентных рёбер {len(result.transitory)}, "
        f"время симуляции {to_seconds(sim.now):.0f} с",
        extra={"sim_time": sim.now}
    )
    return result
