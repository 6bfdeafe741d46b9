"""
Модуль логирования со штампом времени симуляции.
"""
import logging
from datetime import datetime, timezone
from typing import Iterable, Mapping, Optional

from .time_utils import format_for_log, format_sim_time

LOGGER_NAME = "topoprobe"


class SimClockFormatter(logging.Formatter):
    """Форматер логов: настенное время UTC плюс время симуляции, если передано."""

    def formatTime(self, record: logging.LogRecord, datefmt: Optional[str] = None) -> str:
        dt = datetime.fromtimestamp(record.created, tz=timezone.utc)
        return format_for_log(dt)

    def format(self, record: logging.LogRecord) -> str:
        message = super().format(record)
        sim_time = getattr(record, "sim_time", None)
        if sim_time is None:
            return message
        return f"{message} ({format_sim_time(sim_time)})"


def setup_logger(log_file: Optional[str] = None, level: int = logging.INFO) -> logging.Logger:
    """
    Настраивает и возвращает логгер.

    Args:
        log_file: Путь к файлу логов (None - только консоль)
        level: Уровень логирования

    Returns:
        Настроенный логгер
    """
    logger = logging.getLogger(LOGGER_NAME)
    logger.setLevel(level)

    if logger.handlers:
        return logger

    formatter = SimClockFormatter("[%(asctime)s] %(levelname)s %(message)s")

    console_handler = logging.StreamHandler()
    console_handler.setLevel(level)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if log_file:
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setLevel(level)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    return logger


def log_round_result(
    logger: logging.Logger,
    round_index: int,
    sources: int,
    sinks: int,
    edges: int,
    excluded: Mapping[int, str],
    sim_time: Optional[int] = None
) -> None:
    """
    Логирует итог одного раунда зондирования.

    Args:
        logger: Экземпляр логгера
        round_index: Номер раунда
        sources: Размер source set
        sinks: Размер sink set
        edges: Число рёбер, выведенных в раунде
        excluded: Узлы, исключённые в раунде, с причинами
        sim_time: Время симуляции на конец раунда
    """
    extra = {"sim_time": sim_time} if sim_time is not None else None
    if excluded:
        reasons = _summarize_reasons(excluded.values())
        logger.info(
            f"[раунд {round_index}] источники={sources} приёмники={sinks} "
            f"рёбра={edges} исключены: {reasons}",
            extra=extra
        )
    else:
        logger.info(
            f"[раунд {round_index}] источники={sources} приёмники={sinks} рёбра={edges}",
            extra=extra
        )


def _summarize_reasons(reasons: Iterable[str]) -> str:
    counts = {}
    for reason in reasons:
        counts[reason] = counts.get(reason, 0) + 1
    return ", ".join(f"{reason}={count}" for reason, count in sorted(counts.items()))
