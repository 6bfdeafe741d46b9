"""
Модуль оценки стоимости сканирования: число раундов, длительность и комиссии.
"""
from dataclasses import dataclass
from math import isqrt
from typing import Dict, Tuple, Union

from .txmodel import P2PKH_TX_SIZE

Number = Union[int, float]

MAX_GRID_WIDTH = 100
MINUTES_PER_ROUND = 2.5

# Очистка пула: cleanser + один сквоттер; затем flood либо пара parent+marker
CLEANSE_TXS_PER_ROUND = 2
PROBE_TXS_LOW = 1
PROBE_TXS_HIGH = 2


@dataclass(frozen=True)
class CostEstimate:
    """Оценка стоимости сканирования сети из r_n узлов."""
    rounds: int
    duration_minutes: float
    fee_low: Number
    fee_high: Number
    tx_size_bytes: int = P2PKH_TX_SIZE


def _ceil_sqrt(value: int) -> int:
    root = isqrt(value)
    return root if root * root == value else root + 1


def grid_shape(r_n: int) -> Tuple[int, int]:
    """
    Размер сетки разбиения.

    Returns:
        (w, h): w = min(ceil(sqrt(r_n)), 100), h = ceil(r_n / w)
    """
    if r_n < 1:
        raise ValueError(f"Число узлов должно быть >= 1, получено {r_n}")
    width = min(_ceil_sqrt(r_n), MAX_GRID_WIDTH)
    height = -(-r_n // width)
    return width, height


def rounds_required(r_n: int) -> int:
    """Число раундов t_r для сети из r_n узлов."""
    width, height = grid_shape(r_n)
    if height <= width:
        return height + width - 2
    return height - 1 + -(-height // width) * width


def scan_duration(r_n: int, minutes_per_round: float = MINUTES_PER_ROUND) -> float:
    """Длительность сканирования в минутах."""
    return minutes_per_round * rounds_required(r_n)


def fee_bounds(r_n: int, fee_rate: Number) -> Tuple[Number, Number]:
    """
    Границы комиссий в сатоши.

    Args:
        r_n: Число достижимых узлов
        fee_rate: Ставка, сатоши за байт

    Returns:
        (3 * 193 * fee_rate * t_r, 4 * 193 * fee_rate * t_r)
    """
    if fee_rate < 0:
        raise ValueError(f"Ставка комиссии не может быть отрицательной: {fee_rate}")
    rounds = rounds_required(r_n)
    per_tx = P2PKH_TX_SIZE * fee_rate
    low = (CLEANSE_TXS_PER_ROUND + PROBE_TXS_LOW) * per_tx * rounds
    high = (CLEANSE_TXS_PER_ROUND + PROBE_TXS_HIGH) * per_tx * rounds
    return low, high


def round_fee_breakdown(fee_rate: Number) -> Dict[str, Number]:
    """Комиссии одного раунда по статьям."""
    per_tx = P2PKH_TX_SIZE * fee_rate
    return {
        "cleanse": CLEANSE_TXS_PER_ROUND * per_tx,
        "flood_accepted": PROBE_TXS_LOW * per_tx,
        "parent_marker_accepted": PROBE_TXS_HIGH * per_tx,
    }


def estimate(
    r_n: int,
    fee_rate: Number,
    minutes_per_round: float = MINUTES_PER_ROUND
) -> CostEstimate:
    """Полная оценка стоимости."""
    low, high = fee_bounds(r_n, fee_rate)
    return CostEstimate(
        rounds=rounds_required(r_n),
        duration_minutes=scan_duration(r_n, minutes_per_round),
        fee_low=low,
        fee_high=high,
    )
