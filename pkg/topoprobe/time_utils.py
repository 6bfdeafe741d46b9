"""
Утилиты виртуального времени симуляции.

Время симуляции хранится в целых миллисекундах.
"""
from datetime import datetime, timezone
from typing import Optional

MS = 1
SECOND = 1000 * MS
MINUTE = 60 * SECOND

# Таймаут ожидания ответа на getdata в эталонном клиенте
REQUEST_TIMEOUT = 2 * MINUTE


def seconds(value: float) -> int:
    """Переводит секунды в миллисекунды симуляции."""
    return int(round(value * SECOND))


def to_seconds(ms: int) -> float:
    """Переводит миллисекунды симуляции в секунды."""
    return ms / SECOND


def format_sim_time(ms: int) -> str:
    """
    Форматирует время симуляции для логов.
    Формат: T+HH:MM:SS.mmm
    """
    total_seconds, millis = divmod(int(ms), SECOND)
    hours, rest = divmod(total_seconds, 3600)
    minutes, secs = divmod(rest, 60)
    return f"T+{hours:02d}:{minutes:02d}:{secs:02d}.{millis:03d}"


def format_for_log(dt: Optional[datetime] = None) -> str:
    """
    Форматирует настенное время для логов (UTC).
    Формат: YYYY-MM-DD HH:MM:SS+0000
    """
    if dt is None:
        dt = datetime.now(timezone.utc)
    return dt.strftime("%Y-%m-%d %H:%M:%S%z")
