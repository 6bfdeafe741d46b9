"""
Модель транзакций: абстрактные транзакции, наборы конфликтующих трат
и подбор идентификатора в заданный диапазон хешей.

Транзакция здесь не сериализуется по правилам Bitcoin: для вывода
топологии важны только конфликты входов, связи родитель-потомок
и 256-битный идентификатор.
"""
import dataclasses
import hashlib
import logging
import struct
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Iterable, List, NewType, Tuple

logger = logging.getLogger("topoprobe")

TxId = NewType("TxId", int)

HASH_BITS = 256
HASH_SPACE = 1 << HASH_BITS
MAX_NONCE = (1 << 64) - 1

# Размер стандартной 1-1 P2PKH транзакции (73-байтная подпись), байт
P2PKH_TX_SIZE = 193

SQUATTER_COUNT = 100

# Шаг начальных nonce у сквоттеров: пространства подбора не пересекаются
_SQUATTER_NONCE_STRIDE = 1 << 32


class GrindExhaustedError(RuntimeError):
    """Ни один из перебранных nonce не попал в диапазон."""


class TxRole(str, Enum):
    """Роль транзакции в протоколе зондирования."""
    PARENT = "parent"
    MARKER = "marker"
    FLOOD = "flood"
    CLEANSER = "cleanser"
    SQUATTER = "squatter"
    ORDINARY = "ordinary"
    FUNDING = "funding"


@dataclass(frozen=True, order=True)
class Outpoint:
    """Ссылка на выход транзакции (монета, которую можно потратить)."""
    txid: int
    index: int

    def __post_init__(self):
        if not 0 <= self.txid < HASH_SPACE:
            raise ValueError(f"txid вне 256-битного диапазона: {self.txid}")
        if self.index < 0:
            raise ValueError(f"Отрицательный индекс выхода: {self.index}")


@dataclass(frozen=True)
class Transaction:
    """Абстрактная транзакция."""
    inputs: Tuple[Outpoint, ...]
    outputs: int
    nonce: int = 0
    role_tag: TxRole = TxRole.ORDINARY

    def __post_init__(self):
        if not isinstance(self.inputs, tuple):
            object.__setattr__(self, "inputs", tuple(self.inputs))
        if self.outputs < 0:
            raise ValueError(f"Отрицательное число выходов: {self.outputs}")
        if not 0 <= self.nonce <= MAX_NONCE:
            raise ValueError(f"nonce вне 64-битного диапазона: {self.nonce}")
        if not self.inputs and self.role_tag != TxRole.FUNDING:
            raise ValueError("Транзакция без входов допустима только как funding root")

    @cached_property
    def txid(self) -> TxId:
        """Идентификатор: double-SHA256 канонической кодировки (inputs, outputs, nonce)."""
        digest = hashlib.sha256(_encode_prefix(self.inputs, self.outputs))
        digest.update(_encode_nonce(self.nonce))
        return _finish_id(digest)

    def outpoint(self, index: int) -> Outpoint:
        """Возвращает ссылку на выход index этой транзакции."""
        if not 0 <= index < self.outputs:
            raise ValueError(f"У транзакции нет выхода {index} (выходов: {self.outputs})")
        return Outpoint(self.txid, index)

    def conflicts_with(self, other: "Transaction") -> bool:
        """Две транзакции конфликтуют, если их множества входов пересекаются."""
        return not set(self.inputs).isdisjoint(other.inputs)


@dataclass(frozen=True)
class HashRange:
    """Замкнутый диапазон [lo, hi] в пространстве 256-битных хешей."""
    lo: int
    hi: int

    def __post_init__(self):
        if not 0 <= self.lo <= self.hi < HASH_SPACE:
            raise ValueError(f"Некорректный диапазон хешей: [{self.lo:#x}, {self.hi:#x}]")

    @property
    def width(self) -> int:
        return self.hi - self.lo

    @property
    def fraction(self) -> float:
        """Доля пространства хешей, целевая плотность подбора."""
        return self.width / HASH_SPACE

    def contains(self, value: int) -> bool:
        return self.lo <= value <= self.hi

    @classmethod
    def full(cls) -> "HashRange":
        return cls(0, HASH_SPACE - 1)

    @classmethod
    def from_bits(cls, bits: int, lo: int = 0) -> "HashRange":
        """
        Диапазон ширины 2^(256 - bits), начиная с lo.

        Args:
            bits: Число "зафиксированных" старших бит (доля 2^-bits)
            lo: Нижняя граница
        """
        if not 0 <= bits <= HASH_BITS:
            raise ValueError(f"bits должно быть в [0, {HASH_BITS}], получено {bits}")
        return cls(lo, lo + (1 << (HASH_BITS - bits)) - 1)

    def adjacent_above(self, bits: int) -> "HashRange":
        """Диапазон ширины 2^(256 - bits), примыкающий сверху к этому."""
        return HashRange.from_bits(bits, self.hi + 1)


def _encode_prefix(inputs: Iterable[Outpoint], outputs: int) -> bytes:
    inputs = tuple(inputs)
    parts = [struct.pack(">I", len(inputs))]
    for outpoint in inputs:
        parts.append(outpoint.txid.to_bytes(32, "big"))
        parts.append(struct.pack(">I", outpoint.index))
    parts.append(struct.pack(">I", outputs))
    return b"".join(parts)


def _encode_nonce(nonce: int) -> bytes:
    return struct.pack(">Q", nonce)


def _finish_id(first_round) -> TxId:
    return TxId(int.from_bytes(hashlib.sha256(first_round.digest()).digest(), "big"))


def build_funding_root(outputs: int, nonce: int = 0) -> Transaction:
    """
    Создаёт корневую транзакцию финансирования без входов.

    Args:
        outputs: Число создаваемых монет
        nonce: nonce для уникальности идентификатора

    Returns:
        Транзакция с ролью funding
    """
    return Transaction(inputs=(), outputs=outputs, nonce=nonce, role_tag=TxRole.FUNDING)


def build_conflict_set(funding: Outpoint, n: int) -> List[Transaction]:
    """
    Создаёт n+1 взаимно конфликтующих транзакций, тратящих одну монету.

    Args:
        funding: Монета, которую тратят все транзакции набора
        n: Число родителей (размер source set)

    Returns:
        Список: n родителей, затем flood-транзакция
    """
    if n < 0:
        raise ValueError(f"n не может быть отрицательным: {n}")
    parents = [
        Transaction(inputs=(funding,), outputs=1, nonce=i, role_tag=TxRole.PARENT)
        for i in range(n)
    ]
    flood = Transaction(inputs=(funding,), outputs=1, nonce=n, role_tag=TxRole.FLOOD)
    return parents + [flood]


def build_marker(parent: Transaction) -> Transaction:
    """
    Создаёт маркер, тратящий выход 0 родителя.

    Args:
        parent: Транзакция-родитель

    Returns:
        Транзакция с ролью marker

    Raises:
        ValueError: Если у родителя нет выходов
    """
    if parent.outputs < 1:
        raise ValueError("У родителя нет выходов, маркер построить нельзя")
    return Transaction(inputs=(parent.outpoint(0),), outputs=1, nonce=0, role_tag=TxRole.MARKER)


def build_cleansing_kit(
    funding: Outpoint,
    squatters: int = SQUATTER_COUNT
) -> Tuple[Transaction, List[Transaction]]:
    """
    Создаёт cleanser и взаимно конфликтующих сквоттеров, тратящих его выход 0.

    Args:
        funding: Монета для cleanser
        squatters: Число сквоттеров (по умолчанию 100 - ёмкость пула сирот)

    Returns:
        (cleanser, список сквоттеров)
    """
    cleanser = Transaction(inputs=(funding,), outputs=1, nonce=0, role_tag=TxRole.CLEANSER)
    spend = cleanser.outpoint(0)
    kit = [
        Transaction(
            inputs=(spend,),
            outputs=1,
            nonce=k * _SQUATTER_NONCE_STRIDE,
            role_tag=TxRole.SQUATTER
        )
        for k in range(squatters)
    ]
    return cleanser, kit


def grind_into_range(tx: Transaction, target: HashRange, max_attempts: int) -> Transaction:
    """
    Подбирает nonce так, чтобы идентификатор попал в диапазон.

    Перебор идёт последовательно от текущего nonce транзакции.

    Args:
        tx: Исходная транзакция
        target: Целевой диапазон хешей
        max_attempts: Максимум перебираемых nonce

    Returns:
        Копия tx с другим nonce (или сама tx, если она уже в диапазоне)

    Raises:
        GrindExhaustedError: Если все max_attempts nonce вне диапазона
    """
    if target.fraction * max_attempts < 20:
        logger.warning(
            f"Подбор с низкой вероятностью успеха: доля {target.fraction:.3g}, "
            f"попыток {max_attempts}"
        )

    base = hashlib.sha256(_encode_prefix(tx.inputs, tx.outputs))
    for attempt in range(max_attempts):
        nonce = (tx.nonce + attempt) & MAX_NONCE
        digest = base.copy()
        digest.update(_encode_nonce(nonce))
        if target.contains(_finish_id(digest)):
            if attempt == 0:
                return tx
            return dataclasses.replace(tx, nonce=nonce)

    raise GrindExhaustedError(
        f"Подбор не удался за {max_attempts} попыток (доля диапазона {target.fraction:.3g})"
    )


def grind_attempts(tx: Transaction, ground: Transaction) -> int:
    """Число попыток, которое понадобилось подбору (для статистики)."""
    return ((ground.nonce - tx.nonce) & MAX_NONCE) + 1
