"""
Командная строка: scan, cost, analyze, gen, export-trace.

Коды выхода: 0 - успех, 1 - внутренняя ошибка, 2 - ошибка использования
или конфигурации.
"""
import argparse
import logging
import os
import sys
from typing import List, Optional, Sequence

import networkx as nx

from .config_loader import (
    OUTPUT_DIR_ENV,
    OUTPUT_FORMATS,
    ConfigError,
    ScenarioConfig,
    TopologyConfig,
    build_sim_config,
    load_config,
)
from .costmodel import MINUTES_PER_ROUND, estimate, round_fee_breakdown
from .graph_io import GraphFormatError, export_graph, file_name, import_graph
from .graphgen import GraphGenerationError, assign_regions, gen_ba, gen_cm, gen_er
from .logger import setup_logger
from .metrics import CLIQUE_TIME_BUDGET, ENSEMBLE_MODELS, ENSEMBLE_RUNS, ensemble_compare
from .netsim import TopologyError, build_network
from .prober import evaluate_pr, full_scan, ground_truth_edges
from .reporting import (
    build_manifest,
    cost_record,
    ensure_dir,
    format_cost,
    format_degree_line,
    format_scan_summary,
    write_analysis_outputs,
    write_json,
    write_scan_outputs,
)

logger = logging.getLogger("topoprobe")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2

DEFAULT_CONFIG = "config.yaml"

# Ошибки входных данных: конфигурация, файлы, невыполнимые параметры
USAGE_ERRORS = (ConfigError, FileNotFoundError, GraphFormatError, GraphGenerationError, TopologyError)


def build_topology(topology: TopologyConfig, seed: int) -> nx.Graph:
    """Исходная топология по секции topology."""
    if topology.model == "er":
        graph = gen_er(topology.n, topology.m, seed)
    elif topology.model == "cm":
        graph = gen_cm(topology.degree_sequence, seed)
    elif topology.model == "ba":
        graph = gen_ba(topology.n, topology.m, seed)
    else:
        graph = import_graph(topology.path)
        if any("region" not in data for _, data in graph.nodes(data=True)):
            assign_regions(graph, seed)

    if topology.regions:
        assign_regions(graph, seed, topology.regions)
    return graph


def _load(args: argparse.Namespace) -> ScenarioConfig:
    config = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "out", None):
        config.output.directory = args.out
    if getattr(args, "format", None):
        config.output.formats = [args.format]
    return config


def _output_dir(args: argparse.Namespace) -> str:
    return args.out or os.environ.get(OUTPUT_DIR_ENV) or "out"


# ==================== Подкоманды ====================

def cmd_scan(args: argparse.Namespace) -> int:
    """Полное сканирование сценария и запись результатов."""
    config = _load(args)
    topology = build_topology(config.topology, config.seed)
    sim = build_network(topology, build_sim_config(config))

    result = full_scan(sim, config.probe, seed=config.seed)
    precision, recall = evaluate_pr(result.edge_set, ground_truth_edges(topology), result.retained_nodes)
    summary = write_scan_outputs(config.output.directory, config, result, topology, precision, recall)
    print(format_scan_summary(summary))
    return EXIT_OK


def cmd_cost(args: argparse.Namespace) -> int:
    """Оценка числа раундов, длительности и комиссий."""
    if args.r_n < 1:
        raise ConfigError("r_n: должно быть >= 1")
    if args.fee_rate < 0:
        raise ConfigError("fee_rate: не может быть отрицательной")

    cost = estimate(args.r_n, args.fee_rate, args.minutes_per_round)
    print(format_cost(cost))
    if args.out:
        directory = ensure_dir(args.out)
        record = cost_record(args.r_n, args.fee_rate, cost, round_fee_breakdown(args.fee_rate))
        write_json(os.path.join(directory, "cost.json"), record)
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    """Метрики графа и сравнение с ансамблями."""
    graph = import_graph(args.graph)
    models = _parse_models(args.models)
    if args.runs < 1:
        raise ConfigError("runs: должно быть >= 1")

    comparison = ensemble_compare(
        graph,
        models=models,
        runs=args.runs,
        seed=args.seed,
        workers=args.workers,
        clique_budget=args.clique_budget,
    )
    manifest = {
        "seed": args.seed,
        "graph": os.path.basename(args.graph),
        "models": models,
        "runs": args.runs,
        "versions": build_manifest(ScenarioConfig())["versions"],
    }
    table = write_analysis_outputs(_output_dir(args), comparison, manifest)
    print(table, end="")
    print(format_degree_line(comparison.observed))
    return EXIT_OK


def cmd_gen(args: argparse.Namespace) -> int:
    """Генерация исходной топологии в файл."""
    config = _load(args)
    graph = build_topology(config.topology, config.seed)
    fmt = args.format or config.output.formats[0]
    path = args.path or os.path.join(ensure_dir(config.output.directory), file_name("topology", fmt))
    export_graph(graph, path, fmt)
    print(f"{path}: {graph.number_of_nodes()} узлов, {graph.number_of_edges()} рёбер")
    return EXIT_OK


def cmd_export_trace(args: argparse.Namespace) -> int:
    """Сканирование с трассировкой: trace.jsonl и его sha256."""
    config = _load(args)
    topology = build_topology(config.topology, config.seed)
    sim = build_network(topology, build_sim_config(config, trace=True))
    full_scan(sim, config.probe, seed=config.seed)

    directory = ensure_dir(config.output.directory)
    sim.write_trace(os.path.join(directory, "trace.jsonl"))
    digest = sim.trace_hash()
    with open(os.path.join(directory, "trace.sha256"), "w", encoding="utf-8") as f:
        f.write(f"{digest}  trace.jsonl\n")
    print(f"трасса: {len(sim.trace)} сообщений, sha256 {digest}")
    return EXIT_OK


def _parse_models(raw: str) -> List[str]:
    models = [m.strip().upper() for m in raw.split(",") if m.strip()]
    for model in models:
        if model not in ENSEMBLE_MODELS:
            raise ConfigError(f"models: неизвестная модель '{model}' (допустимо: {', '.join(ENSEMBLE_MODELS)})")
    return models


# ==================== Разбор аргументов ====================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="topoprobe",
        description="Симулятор ретрансляции транзакций и вывода топологии через пул сирот",
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="Подробные логи (DEBUG)")
    parser.add_argument("--log-file", help="Дублировать логи в файл")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario(name: str, help_text: str) -> argparse.ArgumentParser:
        command = sub.add_parser(name, help=help_text)
        command.add_argument("--config", "-c", default=DEFAULT_CONFIG, help="YAML-файл сценария")
        command.add_argument("--seed", type=int, help="Переопределить зерно сценария")
        command.add_argument("--out", "-o", help="Каталог результатов")
        command.add_argument("--format", choices=OUTPUT_FORMATS, help="Формат файлов графа")
        return command

    scan = scenario("scan", "Полное сканирование")
    scan.set_defaults(handler=cmd_scan)

    trace = scenario("export-trace", "Сканирование с записью трассы")
    trace.set_defaults(handler=cmd_export_trace)

    gen = scenario("gen", "Сгенерировать топологию в файл")
    gen.add_argument("--path", help="Файл графа (по умолчанию <out>/topology.*)")
    gen.set_defaults(handler=cmd_gen)

    cost = sub.add_parser("cost", help="Оценка стоимости сканирования")
    cost.add_argument("r_n", type=int, help="Число достижимых узлов")
    cost.add_argument("fee_rate", type=float, help="Ставка комиссии, сатоши за байт")
    cost.add_argument("--minutes-per-round", type=float, default=MINUTES_PER_ROUND)
    cost.add_argument("--out", "-o", help="Записать cost.json в каталог")
    cost.set_defaults(handler=cmd_cost)

    analyze = sub.add_parser("analyze", help="Метрики графа и сравнение с ансамблями")
    analyze.add_argument("graph", help="Файл графа (.edges или .graphml)")
    analyze.add_argument("--models", default=",".join(ENSEMBLE_MODELS), help="Модели через запятую")
    analyze.add_argument("--runs", type=int, default=ENSEMBLE_RUNS)
    analyze.add_argument("--seed", type=int, default=0)
    analyze.add_argument("--workers", type=int, default=1, help="Число процессов для ансамблей")
    analyze.add_argument("--clique-budget", type=float, default=CLIQUE_TIME_BUDGET)
    analyze.add_argument("--out", "-o", help="Каталог результатов")
    analyze.set_defaults(handler=cmd_analyze)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Точка входа командной строки.

    Returns:
        Код выхода
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    setup_logger(args.log_file, logging.DEBUG if args.verbose else logging.INFO)

    try:
        return args.handler(args)
    except USAGE_ERRORS as e:
        logger.error(f"Ошибка входных данных: {e}")
        print(f"ошибка: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:
        logger.exception(f"Критическая ошибка: {e}")
        return EXIT_INTERNAL
