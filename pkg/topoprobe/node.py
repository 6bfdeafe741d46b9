"""
Модуль узла: машина состояний одного ретранслирующего пира.

Трёхшаговая ретрансляция inv/getdata/tx, отклонение двойных трат,
пул сирот с ограниченной ёмкостью и очередь ожидающих запросов
с двухминутным таймаутом.
"""
import bisect
import logging
import random
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, Dict, FrozenSet, List, Optional, Sequence, Set, Tuple

from .time_utils import REQUEST_TIMEOUT
from .txmodel import HASH_BITS, Outpoint, Transaction, TxId

logger = logging.getLogger("topoprobe")

ORPHAN_POOL_CAPACITY = 100


class Behavior(str, Enum):
    """Поведение узла по отношению к очереди запросов."""
    WELL_BEHAVED = "well_behaved"
    UNBLOCKABLE = "unblockable"


class MessageKind(str, Enum):
    INV = "inv"
    GETDATA = "getdata"
    TX = "tx"


class TxOutcome(str, Enum):
    """Результат обработки входящей транзакции."""
    ACCEPT = "accept"
    ORPHANED = "orphaned"
    REJECTED_CONFLICT = "rejected_conflict"
    REJECTED_INVALID = "rejected_invalid"
    DUPLICATE = "duplicate"


@dataclass(frozen=True)
class Message:
    """Сообщение протокола ретрансляции."""
    kind: MessageKind
    sender: int
    recipient: int
    ids: Tuple[int, ...] = ()
    tx: Optional[Transaction] = None

    def __post_init__(self):
        if self.kind == MessageKind.TX:
            if self.tx is None:
                raise ValueError("tx-сообщение должно содержать ровно одну транзакцию")
            object.__setattr__(self, "ids", (self.tx.txid,))
        elif self.tx is not None:
            raise ValueError(f"{self.kind.value}-сообщение не переносит транзакцию")

    @classmethod
    def inv(cls, sender: int, recipient: int, ids: Sequence[int]) -> "Message":
        return cls(MessageKind.INV, sender, recipient, tuple(ids))

    @classmethod
    def getdata(cls, sender: int, recipient: int, ids: Sequence[int]) -> "Message":
        return cls(MessageKind.GETDATA, sender, recipient, tuple(ids))

    @classmethod
    def transaction(cls, sender: int, recipient: int, tx: Transaction) -> "Message":
        return cls(MessageKind.TX, sender, recipient, tx=tx)


@dataclass
class PendingRequest:
    """Запрошенный идентификатор: кого ждём, до какого времени и кто в очереди."""
    peer: int
    deadline: int
    queue: Deque[Tuple[int, int]] = field(default_factory=deque)  # (пир, время предложения)


@dataclass
class OrphanEntry:
    tx: Transaction
    sender: int
    received_at: int


@dataclass
class NodeState:
    """Состояние одного симулируемого пира."""
    node_id: int
    peers: Set[int] = field(default_factory=set)
    behavior: Behavior = Behavior.WELL_BEHAVED
    orphan_capacity: int = ORPHAN_POOL_CAPACITY
    observers: FrozenSet[int] = frozenset()
    rng: random.Random = field(default_factory=random.Random)
    mempool: Dict[TxId, Transaction] = field(default_factory=dict)
    utxo_view: Set[Outpoint] = field(default_factory=set)
    spent_by: Dict[Outpoint, TxId] = field(default_factory=dict)
    orphan_pool: Dict[TxId, OrphanEntry] = field(default_factory=dict)
    pending_requests: Dict[TxId, PendingRequest] = field(default_factory=dict)
    evictions: int = 0

    def knows(self, txid: int) -> bool:
        """Идентификатор известен: в mempool или в пуле сирот."""
        return txid in self.mempool or txid in self.orphan_pool

    @property
    def known_ids(self) -> Set[int]:
        return set(self.mempool) | set(self.orphan_pool)

    def is_linked(self, peer: int) -> bool:
        return peer in self.peers or peer in self.observers

    def next_deadline(self) -> Optional[int]:
        if not self.pending_requests:
            return None
        return min(request.deadline for request in self.pending_requests.values())


def handle_inv(state: NodeState, sender: int, ids: Sequence[int], now: int) -> List[Message]:
    """
    Обрабатывает inv: запрашивает неизвестные идентификаторы.

    Идентификаторы из пула сирот считаются известными и в getdata не попадают.
    Если идентификатор уже ожидается от другого пира, предлагающий встаёт
    в FIFO-очередь. Повторное предложение от пира, которого ждём, перезапускает
    запрос.

    Args:
        state: Состояние узла
        sender: Пир, приславший inv
        ids: Объявленные идентификаторы
        now: Время симуляции

    Returns:
        Исходящие сообщения (не более одного getdata)
    """
    if not state.is_linked(sender):
        logger.debug(f"[узел {state.node_id}] inv от неизвестного пира {sender} отброшен")
        return []

    requested = []
    for txid in dict.fromkeys(ids):
        if state.knows(txid):
            continue
        pending = state.pending_requests.get(txid)
        if pending is None:
            state.pending_requests[txid] = PendingRequest(sender, now + REQUEST_TIMEOUT)
            requested.append(txid)
        elif pending.peer == sender or state.behavior == Behavior.UNBLOCKABLE:
            pending.peer = sender
            pending.deadline = now + REQUEST_TIMEOUT
            requested.append(txid)
        else:
            pending.queue.append((sender, now))

    if not requested:
        return []
    return [Message.getdata(state.node_id, sender, requested)]


def handle_getdata(state: NodeState, sender: int, ids: Sequence[int]) -> List[Message]:
    """
    Обрабатывает getdata: отдаёт транзакции из mempool.

    Сироты не проверены и не отдаются; неизвестные идентификаторы игнорируются.
    """
    if not state.is_linked(sender):
        logger.debug(f"[узел {state.node_id}] getdata от неизвестного пира {sender} отброшен")
        return []

    return [
        Message.transaction(state.node_id, sender, state.mempool[txid])
        for txid in dict.fromkeys(ids)
        if txid in state.mempool
    ]


def handle_tx(
    state: NodeState,
    sender: int,
    tx: Transaction,
    now: int
) -> Tuple[TxOutcome, List[Message]]:
    """
    Обрабатывает входящую транзакцию.

    Args:
        state: Состояние узла
        sender: Пир, приславший транзакцию
        tx: Транзакция
        now: Время симуляции

    Returns:
        (результат, исходящие сообщения)
    """
    txid = tx.txid
    state.pending_requests.pop(txid, None)

    if state.knows(txid):
        return TxOutcome.DUPLICATE, []

    outcome = _evaluate(state, tx)
    if outcome == TxOutcome.ORPHANED:
        state.orphan_pool[txid] = OrphanEntry(tx, sender, now)
        limit_orphans(state, state.rng)
        return outcome, []
    if outcome != TxOutcome.ACCEPT:
        return outcome, []

    messages = _accept(state, tx, sender)
    messages.extend(_promote_orphans(state, txid))
    return TxOutcome.ACCEPT, messages


def expire_requests(state: NodeState, now: int) -> List[Message]:
    """
    Переадресует просроченные запросы следующему пиру из очереди (FIFO).

    Args:
        state: Состояние узла
        now: Время симуляции

    Returns:
        getdata-сообщения, по одному на пира
    """
    batches: Dict[int, List[int]] = {}
    for txid in list(state.pending_requests):
        pending = state.pending_requests[txid]
        if pending.deadline > now:
            continue
        if state.knows(txid):
            del state.pending_requests[txid]
            continue

        next_peer = None
        while pending.queue:
            peer, _offered_at = pending.queue.popleft()
            if state.is_linked(peer):
                next_peer = peer
                break

        if next_peer is None:
            del state.pending_requests[txid]
            continue

        pending.peer = next_peer
        pending.deadline = now + REQUEST_TIMEOUT
        batches.setdefault(next_peer, []).append(txid)

    return [Message.getdata(state.node_id, peer, ids) for peer, ids in batches.items()]


def pick_eviction_victim(ordered_ids: Sequence[int], randomhash: int) -> int:
    """
    Индекс вытесняемой сироты в отсортированном списке.

    Ближайший идентификатор строго больше randomhash; если такого нет -
    наименьший (обход по кругу).
    """
    position = bisect.bisect_right(ordered_ids, randomhash)
    if position == len(ordered_ids):
        return 0
    return position


def limit_orphans(state: NodeState, rng: random.Random) -> int:
    """
    Вытесняет сирот, пока пул не уложится в ёмкость.

    Args:
        state: Состояние узла
        rng: Зерновой источник случайности для randomhash

    Returns:
        Число вытесненных транзакций
    """
    if len(state.orphan_pool) <= state.orphan_capacity:
        return 0

    ordered = sorted(state.orphan_pool)
    evicted = 0
    while len(state.orphan_pool) > state.orphan_capacity:
        randomhash = rng.getrandbits(HASH_BITS)
        victim = ordered.pop(pick_eviction_victim(ordered, randomhash))
        del state.orphan_pool[victim]
        evicted += 1

    state.evictions += evicted
    return evicted


def drop_peer(state: NodeState, peer: int) -> None:
    """Разрывает связь с пиром."""
    state.peers.discard(peer)


def _evaluate(state: NodeState, tx: Transaction) -> TxOutcome:
    if len(set(tx.inputs)) != len(tx.inputs):
        return TxOutcome.REJECTED_INVALID

    for outpoint in tx.inputs:
        if outpoint in state.spent_by:
            return TxOutcome.REJECTED_CONFLICT

    missing_parent = False
    for outpoint in tx.inputs:
        if outpoint in state.utxo_view:
            continue
        if outpoint.txid in state.mempool:
            # Родитель известен, но такого выхода у него нет
            return TxOutcome.REJECTED_INVALID
        missing_parent = True

    return TxOutcome.ORPHANED if missing_parent else TxOutcome.ACCEPT


def _accept(state: NodeState, tx: Transaction, sender: int) -> List[Message]:
    txid = tx.txid
    for outpoint in tx.inputs:
        state.utxo_view.discard(outpoint)
        state.spent_by[outpoint] = txid
    state.mempool[txid] = tx
    state.utxo_view.update(Outpoint(txid, index) for index in range(tx.outputs))

    return [
        Message.inv(state.node_id, peer, (txid,))
        for peer in sorted(state.peers)
        if peer != sender
    ]


def _promote_orphans(state: NodeState, parent_txid: int) -> List[Message]:
    messages = []
    work = deque([parent_txid])
    while work:
        current = work.popleft()
        children = [
            entry for entry in state.orphan_pool.values()
            if any(outpoint.txid == current for outpoint in entry.tx.inputs)
        ]
        for entry in children:
            outcome = _evaluate(state, entry.tx)
            if outcome == TxOutcome.ORPHANED:
                continue
            child_id = entry.tx.txid
            del state.orphan_pool[child_id]
            if outcome == TxOutcome.ACCEPT:
                messages.extend(_accept(state, entry.tx, entry.sender))
                work.append(child_id)

    return messages
