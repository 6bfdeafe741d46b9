"""
Модуль записи результатов: JSON с полем schema_version, журнал аудита
в JSON Lines, манифест сканирования и текстовые отчёты.
"""
import json
import logging
import os
import platform
from typing import Any, Dict, Iterable, List, Optional

import networkx as nx
import numpy as np

from . import __version__
from .config_loader import SCHEMA_VERSION, ScenarioConfig, config_hash, config_to_dict, save_config
from .costmodel import CostEstimate
from .graph_io import export_graph, file_name
from .metrics import TABLE_METRICS, EnsembleComparison, MetricsReport, describe_histogram, format_value
from .prober import InferenceResult

logger = logging.getLogger("topoprobe")


def ensure_dir(directory: str) -> str:
    os.makedirs(directory, exist_ok=True)
    return directory


def write_json(path: str, data: Dict[str, Any]) -> None:
    """Пишет JSON с полем schema_version; ключи отсортированы."""
    payload = {"schema_version": SCHEMA_VERSION, **data}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")


def write_jsonl(path: str, records: Iterable[Dict[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def versions() -> Dict[str, str]:
    return {
        "topoprobe": __version__,
        "networkx": nx.__version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
    }


def build_manifest(config: ScenarioConfig, extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Манифест: зерно, хеш конфигурации, версии и сама конфигурация."""
    manifest = {
        "seed": config.seed,
        "config_hash": config_hash(config),
        "versions": versions(),
        "config": config_to_dict(config),
    }
    if extra:
        manifest.update(extra)
    return manifest


def scan_summary(result: InferenceResult, precision: float, recall: float, truth_edges: int) -> Dict[str, Any]:
    reasons: Dict[str, int] = {}
    for reason in result.excluded_nodes.values():
        reasons[reason] = reasons.get(reason, 0) + 1
    return {
        "precision": round(precision, 6),
        "recall": round(recall, 6),
        "rounds": len(result.per_round_log),
        "scanned_nodes": len(result.scanned_nodes),
        "retained_nodes": len(result.retained_nodes),
        "inferred_edges": len(result.edges),
        "truth_edges": truth_edges,
        "transitory_edges": len(result.transitory),
        "excluded": {str(node): reason for node, reason in sorted(result.excluded_nodes.items())},
        "excluded_by_reason": dict(sorted(reasons.items())),
    }


def format_scan_summary(summary: Dict[str, Any]) -> str:
    return (
        f"precision {summary['precision']:.3f}, recall {summary['recall']:.3f}, "
        f"рёбер {summary['inferred_edges']} из {summary['truth_edges']}, "
        f"раундов {summary['rounds']}, исключено узлов {len(summary['excluded'])}"
    )


def write_scan_outputs(
    directory: str,
    config: ScenarioConfig,
    result: InferenceResult,
    truth: nx.Graph,
    precision: float,
    recall: float
) -> Dict[str, Any]:
    """
    Записывает результаты сканирования.

    Файлы: inferred.* и ground_truth.* (по форматам из output.formats),
    summary.json, audit.jsonl, manifest.json и действующая config.yaml.

    Returns:
        Словарь сводки
    """
    ensure_dir(directory)
    inferred = result.to_graph()
    for node in inferred.nodes:
        if node in truth.nodes:
            inferred.nodes[node].update(truth.nodes[node])

    for fmt in config.output.formats:
        export_graph(inferred, os.path.join(directory, file_name("inferred", fmt)), fmt)
        export_graph(truth, os.path.join(directory, file_name("ground_truth", fmt)), fmt)

    summary = scan_summary(result, precision, recall, truth.number_of_edges())
    write_json(os.path.join(directory, "summary.json"), summary)
    write_jsonl(
        os.path.join(directory, "audit.jsonl"),
        (audit.to_record() for audit in result.per_round_log)
    )
    write_json(os.path.join(directory, "manifest.json"), build_manifest(config))
    save_config(config, os.path.join(directory, "config.yaml"))
    logger.info(f"Результаты записаны в {directory}")
    return summary


def _number(value: float) -> str:
    if float(value).is_integer():
        return str(int(value))
    return f"{value:.2f}"


def format_cost(estimate: CostEstimate) -> str:
    """Строка вида 'rounds: 198, duration: 495 min, fees: 573210–764280 sat'."""
    return (
        f"rounds: {estimate.rounds}, duration: {_number(estimate.duration_minutes)} min, "
        f"fees: {_number(estimate.fee_low)}–{_number(estimate.fee_high)} sat"
    )


def cost_record(r_n: int, fee_rate: float, estimate: CostEstimate, breakdown: Dict[str, float]) -> Dict[str, Any]:
    return {
        "r_n": r_n,
        "fee_rate": fee_rate,
        "rounds": estimate.rounds,
        "duration_minutes": estimate.duration_minutes,
        "fee_low": estimate.fee_low,
        "fee_high": estimate.fee_high,
        "tx_size_bytes": estimate.tx_size_bytes,
        "round_fees": breakdown,
    }


def _observed_cell(report: MetricsReport, metric: str) -> str:
    value = report.value(metric)
    if value is None:
        return "n/a"
    return format_value(value)


def format_table(comparison: EnsembleComparison) -> str:
    """
    Текстовая таблица сравнения: строка на метрику, столбцы - наблюдаемое
    значение и "среднее (доля выше%)" по каждой модели.
    """
    models = list(comparison.models)
    header = ["Metric", "Observed", *models]
    rows: List[List[str]] = [header]
    for metric, label in TABLE_METRICS:
        row = [label, _observed_cell(comparison.observed, metric)]
        row.extend(comparison.models[model][metric].cell() for model in models)
        rows.append(row)

    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = []
    for index, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
        if index == 0:
            lines.append("  ".join("-" * w for w in widths))

    observed = comparison.observed
    notes = []
    if not observed.connected:
        notes.append("метрики расстояний - по наибольшей компоненте")
    if not observed.clique_exact:
        notes.append("клика - лучшая найденная за лимит времени")
    if notes:
        lines.append("")
        lines.extend(f"* {note}" for note in notes)
    return "\n".join(lines) + "\n"


def format_degree_line(report: MetricsReport) -> str:
    summary = describe_histogram(report.degree_histogram)
    if not summary.histogram:
        return "степени: граф пуст"
    return (
        f"степени: средняя {summary.mean:.1f}, максимальная {summary.max}, "
        f"мода {summary.mode} ({100 * summary.mode_share:.0f}% узлов)"
    )


def write_analysis_outputs(directory: str, comparison: EnsembleComparison, manifest: Dict[str, Any]) -> str:
    """Пишет analysis.json, table.txt и manifest.json; возвращает текст таблицы."""
    ensure_dir(directory)
    table = format_table(comparison)
    write_json(os.path.join(directory, "analysis.json"), comparison.to_dict())
    with open(os.path.join(directory, "table.txt"), "w", encoding="utf-8") as f:
        f.write(table)
    write_json(os.path.join(directory, "manifest.json"), manifest)
    return table
