"""
Модуль загрузки конфигурации сценария из YAML-файла.
"""
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional

import yaml

from .netsim import ChurnEvent, ChurnKind, LatencyModel, SimConfig
from .node import ORPHAN_POOL_CAPACITY
from .time_utils import seconds
from .txmodel import HASH_BITS

SCHEMA_VERSION = 1
OUTPUT_DIR_ENV = "TOPOPROBE_OUT"

TOPOLOGY_MODELS = ("er", "cm", "ba", "file")
OUTPUT_FORMATS = ("edgelist", "graphml")


class ConfigError(ValueError):
    """Ошибка в конфигурации; сообщение называет ключ."""


@dataclass
class TopologyConfig:
    """Исходная топология."""
    model: str = "er"
    n: int = 200
    m: int = 800
    degree_sequence: List[int] = field(default_factory=list)
    path: str = ""
    regions: Dict[str, float] = field(default_factory=dict)


@dataclass
class SimSection:
    """Параметры симуляции (секция sim)."""
    latency: str = "uniform"
    latency_ms: List[int] = field(default_factory=lambda: [50, 150])
    unblockable_fraction: float = 0.0
    inv_trickle_ms: List[int] = field(default_factory=list)
    observer_latency_ms: int = 0
    orphan_capacity: int = ORPHAN_POOL_CAPACITY
    churn: List[Dict[str, Any]] = field(default_factory=list)


@dataclass
class ProbeConfig:
    """Параметры зондирования (времена в секундах симуляции)."""
    cleanse_wait_s: float = 10.0
    cleanse_passes: int = 1
    invblock_lead_s: float = 1.0
    invblock_refresh_s: float = 110.0
    flood_wait_s: float = 10.0
    parent_wait_s: float = 5.0
    marker_wait_s: float = 15.0
    probe_wait_s: float = 2.0
    round_budget_s: float = 150.0
    detection_gap_s: float = 1.0
    detection_wait_s: float = 2.0
    funding_wait_s: float = 5.0
    transitory_threshold: float = 1.0
    marker_grind_bits: int = 8
    squatter_grind_bits: int = 8
    squatter_margin: int = 20


@dataclass
class OutputConfig:
    """Куда и в каких форматах писать результаты."""
    directory: str = "out"
    formats: List[str] = field(default_factory=lambda: ["edgelist", "graphml"])


@dataclass
class ScenarioConfig:
    """Полная конфигурация сценария."""
    seed: int = 0
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    sim: SimSection = field(default_factory=SimSection)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    output: OutputConfig = field(default_factory=OutputConfig)


_SECTIONS = {
    "topology": TopologyConfig,
    "sim": SimSection,
    "probe": ProbeConfig,
    "output": OutputConfig,
}


def load_config(config_path: str) -> ScenarioConfig:
    """
    Загружает конфигурацию сценария из YAML-файла.

    Args:
        config_path: Путь к файлу конфигурации

    Returns:
        Объект ScenarioConfig

    Raises:
        FileNotFoundError: Если файл конфигурации не найден
        ConfigError: Если конфигурация некорректна
    """
    if not os.path.exists(config_path):
        raise FileNotFoundError(f"Файл конфигурации не найден: {config_path}")

    with open(config_path, "r", encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"Ошибка разбора YAML: {e}") from e

    if not data:
        raise ConfigError("Пустой файл конфигурации")

    config = parse_config(data)
    override = os.environ.get(OUTPUT_DIR_ENV)
    if override:
        config.output.directory = override
    return config


def parse_config(data: Dict[str, Any]) -> ScenarioConfig:
    """
    Разбирает и проверяет словарь конфигурации.

    Raises:
        ConfigError: Неизвестный ключ, неверный тип или значение
    """
    if not isinstance(data, dict):
        raise ConfigError("Корень конфигурации должен быть словарём")

    unknown = set(data) - {"seed", *_SECTIONS}
    if unknown:
        raise ConfigError(f"Неизвестный ключ: {sorted(unknown)[0]}")

    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed: ожидалось целое число")

    sections = {
        name: _parse_section(name, cls, data.get(name) or {})
        for name, cls in _SECTIONS.items()
    }
    config = ScenarioConfig(seed=seed, **sections)
    _validate(config)
    return config


def _parse_section(name: str, cls, raw: Any):
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: ожидался словарь")

    known = {f.name: f for f in fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"Неизвестный ключ: {name}.{key}")

    defaults = cls()
    values = {}
    for key, value in raw.items():
        expected = getattr(defaults, key)
        values[key] = _coerce(f"{name}.{key}", value, expected)
    return cls(**values)


def _coerce(key: str, value: Any, expected: Any) -> Any:
    if isinstance(expected, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: ожидалось true/false")
        return value
    if isinstance(expected, int):
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{key}: ожидалось целое число")
        return value
    if isinstance(expected, float):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{key}: ожидалось число")
        return float(value)
    if isinstance(expected, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: ожидалась строка")
        return value
    if isinstance(expected, list):
        if not isinstance(value, list):
            raise ConfigError(f"{key}: ожидался список")
        return value
    if isinstance(expected, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{key}: ожидался словарь")
        return value
    return value


def _validate(config: ScenarioConfig) -> None:
    topology = config.topology
    if topology.model not in TOPOLOGY_MODELS:
        raise ConfigError(
            f"topology.model: неизвестная модель '{topology.model}' "
            f"(допустимо: {', '.join(TOPOLOGY_MODELS)})"
        )
    if topology.model == "file" and not topology.path:
        raise ConfigError("topology.path: обязателен для model: file")
    if topology.model == "cm" and not topology.degree_sequence:
        raise ConfigError("topology.degree_sequence: обязательна для model: cm")
    if topology.n < 0 or topology.m < 0:
        raise ConfigError("topology.n/topology.m: должны быть неотрицательны")
    for index, degree in enumerate(topology.degree_sequence):
        if not _is_node_id(degree):
            raise ConfigError(f"topology.degree_sequence[{index}]: ожидалась неотрицательная целая степень")
    for region, weight in topology.regions.items():
        if not isinstance(region, str) or not _is_number(weight) or weight < 0:
            raise ConfigError(f"topology.regions.{region}: ожидался неотрицательный вес")
    if topology.regions and sum(topology.regions.values()) <= 0:
        raise ConfigError("topology.regions: сумма весов должна быть положительной")

    sim = config.sim
    if sim.latency not in ("fixed", "uniform"):
        raise ConfigError(f"sim.latency: неизвестная модель '{sim.latency}'")
    _check_bounds("sim.latency_ms", sim.latency_ms, allow_empty=False)
    _check_bounds("sim.inv_trickle_ms", sim.inv_trickle_ms, allow_empty=True)
    if not 0.0 <= sim.unblockable_fraction <= 1.0:
        raise ConfigError("sim.unblockable_fraction: ожидалась вероятность в [0, 1]")
    if sim.observer_latency_ms < 0:
        raise ConfigError("sim.observer_latency_ms: не может быть отрицательной")
    if sim.orphan_capacity < 1:
        raise ConfigError("sim.orphan_capacity: должна быть >= 1")
    for index, entry in enumerate(sim.churn):
        _parse_churn(f"sim.churn[{index}]", entry)

    probe = config.probe
    for f in fields(ProbeConfig):
        value = getattr(probe, f.name)
        if value < 0:
            raise ConfigError(f"probe.{f.name}: не может быть отрицательным")
    if not 0.0 < probe.transitory_threshold <= 1.0:
        raise ConfigError("probe.transitory_threshold: ожидалось значение в (0, 1]")
    if probe.invblock_refresh_s >= 120:
        raise ConfigError("probe.invblock_refresh_s: должно быть меньше таймаута запроса 120 с")
    if probe.cleanse_passes < 1:
        raise ConfigError("probe.cleanse_passes: должно быть >= 1")
    for key in ("marker_grind_bits", "squatter_grind_bits"):
        if getattr(probe, key) > 24:
            raise ConfigError(f"probe.{key}: слишком узкий диапазон для подбора (максимум 24)")
    # Маркеры начинаются с 2^255, сквоттеры сразу над ними; оба диапазона ниже 2^256
    marker_width = 1 << (HASH_BITS - probe.marker_grind_bits)
    squatter_width = 1 << (HASH_BITS - probe.squatter_grind_bits)
    if marker_width + squatter_width > 1 << (HASH_BITS - 1):
        raise ConfigError(
            "probe.marker_grind_bits: диапазоны маркеров и сквоттеров не помещаются "
            "в пространство хешей (нужно marker_grind_bits >= 2 и squatter_grind_bits >= 2)"
        )

    for fmt in config.output.formats:
        if fmt not in OUTPUT_FORMATS:
            raise ConfigError(f"output.formats: неизвестный формат '{fmt}'")


def _check_bounds(key: str, bounds: List[Any], allow_empty: bool) -> None:
    if allow_empty and not bounds:
        return
    if len(bounds) not in (1, 2) or not all(isinstance(b, int) and b >= 0 for b in bounds):
        raise ConfigError(f"{key}: ожидалось [мс] или [от, до] в мс")
    if len(bounds) == 2 and bounds[0] > bounds[1]:
        raise ConfigError(f"{key}: нижняя граница больше верхней")


def _parse_churn(key: str, entry: Any) -> ChurnEvent:
    if not isinstance(entry, dict):
        raise ConfigError(f"{key}: ожидался словарь")
    unknown = set(entry) - {"time_s", "kind", "node", "peer"}
    if unknown:
        raise ConfigError(f"Неизвестный ключ: {key}.{sorted(unknown)[0]}")
    try:
        kind = ChurnKind(entry.get("kind", "disconnect"))
    except ValueError:
        raise ConfigError(f"{key}.kind: неизвестный вид '{entry.get('kind')}'") from None
    if "time_s" not in entry or "node" not in entry:
        raise ConfigError(f"{key}: обязательны time_s и node")
    if kind != ChurnKind.DISCONNECT and "peer" not in entry:
        raise ConfigError(f"{key}.peer: обязателен для {kind.value}")

    time_s = entry["time_s"]
    if not _is_number(time_s) or time_s < 0:
        raise ConfigError(f"{key}.time_s: ожидалось неотрицательное число секунд")
    for field_name in ("node", "peer"):
        if field_name in entry and not _is_node_id(entry[field_name]):
            raise ConfigError(f"{key}.{field_name}: ожидался номер узла (целое >= 0)")
    return ChurnEvent(
        time=seconds(time_s),
        kind=kind,
        node=entry["node"],
        peer=entry.get("peer"),
    )


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _is_node_id(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool) and value >= 0


def _latency(kind: str, bounds: List[int]) -> LatencyModel:
    if kind == "fixed" or len(bounds) == 1:
        return LatencyModel.fixed(bounds[0])
    return LatencyModel.uniform(bounds[0], bounds[1])


def build_sim_config(config: ScenarioConfig, trace: bool = False) -> SimConfig:
    """Собирает SimConfig из секции sim и зерна сценария."""
    sim = config.sim
    trickle: Optional[LatencyModel] = None
    if sim.inv_trickle_ms:
        trickle = _latency("uniform", sim.inv_trickle_ms)
    return SimConfig(
        seed=config.seed,
        latency=_latency(sim.latency, sim.latency_ms),
        unblockable_fraction=sim.unblockable_fraction,
        churn=[_parse_churn(f"sim.churn[{i}]", entry) for i, entry in enumerate(sim.churn)],
        inv_trickle=trickle,
        observer_latency_ms=sim.observer_latency_ms,
        orphan_capacity=sim.orphan_capacity,
        trace=trace,
    )


def config_to_dict(config: ScenarioConfig) -> Dict[str, Any]:
    return asdict(config)


def config_hash(config: ScenarioConfig) -> str:
    """sha256 канонического JSON-представления конфигурации."""
    canonical = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def save_config(config: ScenarioConfig, config_path: str) -> None:
    """
    Сохраняет действующую конфигурацию в YAML-файл.

    Args:
        config: Объект конфигурации
        config_path: Путь к файлу конфигурации
    """
    with open(config_path, "w", encoding="utf-8") as f:
        yaml.dump(config_to_dict(config), f, default_flow_style=False, allow_unicode=True, sort_keys=False)
