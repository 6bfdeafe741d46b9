"""
Метрики графа и сравнение со случайными ансамблями (ER, CM, BA).
"""
import asyncio
import heapq
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Set, Tuple

import networkx as nx
import numpy as np

from .graphgen import (
    GraphGenerationError,
    GraphSnapshot,
    degree_sequence,
    gen_ba,
    gen_cm,
    gen_er,
    relabel_consecutive,
)
from .seeding import derive_seed

logger = logging.getLogger("topoprobe")

CLIQUE_TIME_BUDGET = 60.0
ENSEMBLE_RUNS = 100
ENSEMBLE_MODELS = ("ER", "CM", "BA")
REGION_KEY = "region"
LOUVAIN_RESTARTS = 4
EXACT_PARTITION_LIMIT = 8

# Строки таблицы сравнения: (поле MetricsReport, подпись)
TABLE_METRICS: Tuple[Tuple[str, str], ...] = (
    ("diameter", "Diameter"),
    ("periphery_size", "Periphery size"),
    ("radius", "Radius"),
    ("center_size", "Center size"),
    ("mean_eccentricity", "Eccentricity"),
    ("avg_clustering", "Clustering"),
    ("transitivity", "Transitivity"),
    ("degree_assortativity", "Degree assortativity"),
    ("attribute_assortativity", "Attribute assortativity"),
    ("clique_number", "Clique number"),
    ("modularity", "Modularity"),
)


class DistanceMetrics(NamedTuple):
    diameter: int
    radius: int
    center_size: int
    periphery_size: int
    mean_eccentricity: float
    connected: bool


class DegreeDistribution(NamedTuple):
    histogram: Dict[int, int]
    mode: int
    mode_share: float
    mean: float
    max: int


@dataclass
class MetricsReport:
    """Значения всех метрик для одного графа."""
    nodes: int
    edges: int
    diameter: int
    periphery_size: int
    radius: int
    center_size: int
    mean_eccentricity: float
    avg_clustering: float
    transitivity: float
    degree_assortativity: Optional[float]
    attribute_assortativity: Optional[float]
    clique_number: int
    modularity: float
    degree_histogram: Dict[int, int]
    connected: bool = True
    clique_exact: bool = True
    communities: int = 0

    def value(self, metric: str) -> Optional[float]:
        return getattr(self, metric)

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["degree_histogram"] = {str(k): v for k, v in sorted(self.degree_histogram.items())}
        return data


@dataclass
class EnsembleStat:
    """Итог по одной метрике для одной модели."""
    mean: Optional[float]
    percent_higher: float
    runs: int

    def cell(self) -> str:
        if self.mean is None:
            return "n/a"
        return f"{format_value(self.mean)} ({self.percent_higher:.0f}%)"


@dataclass
class EnsembleComparison:
    """Наблюдаемые значения и статистика ансамблей по моделям."""
    observed: MetricsReport
    runs: int
    models: Dict[str, Dict[str, EnsembleStat]] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "runs": self.runs,
            "observed": self.observed.to_dict(),
            "models": {
                model: {metric: asdict(stat) for metric, stat in stats.items()}
                for model, stats in self.models.items()
            },
        }


def format_value(value: float) -> str:
    if float(value).is_integer():
        return str(int(value))
    return f"{value:.3f}"


# ==================== Расстояния и кластеризация ====================

def largest_component(g: nx.Graph) -> nx.Graph:
    if g.number_of_nodes() == 0:
        return g
    nodes = max(nx.connected_components(g), key=lambda c: (len(c), -min(c)))
    return g.subgraph(nodes)


def distance_metrics(g: nx.Graph) -> DistanceMetrics:
    """
    Эксцентриситеты по BFS.

    Для несвязного графа считается по наибольшей компоненте, connected=False.
    """
    if g.number_of_nodes() == 0:
        return DistanceMetrics(0, 0, 0, 0, 0.0, True)

    connected = nx.is_connected(g)
    component = g if connected else largest_component(g)
    if not connected:
        logger.warning(
            f"Граф несвязный: метрики расстояний по наибольшей компоненте "
            f"({component.number_of_nodes()} из {g.number_of_nodes()} узлов)"
        )

    eccentricity = nx.eccentricity(component)
    values = list(eccentricity.values())
    diameter, radius = max(values), min(values)
    return DistanceMetrics(
        diameter=diameter,
        radius=radius,
        center_size=sum(1 for e in values if e == radius),
        periphery_size=sum(1 for e in values if e == diameter),
        mean_eccentricity=float(np.mean(values)),
        connected=connected,
    )


def clustering_metrics(g: nx.Graph) -> Tuple[float, float]:
    """(средний коэффициент кластеризации, транзитивность)."""
    if g.number_of_nodes() == 0:
        return 0.0, 0.0
    return float(nx.average_clustering(g)), float(nx.transitivity(g))


def assortativity(g: nx.Graph, mode: str = "degree", key: str = REGION_KEY) -> Optional[float]:
    """
    Ассортативность по степени или по категориальному атрибуту.

    Returns:
        Коэффициент в [-1, 1] или None, если он не определён
    """
    if g.number_of_edges() < 2:
        return None
    if mode == "degree":
        compute = nx.degree_assortativity_coefficient
        args = ()
    elif mode == "attribute":
        if any(key not in data for _, data in g.nodes(data=True)):
            return None
        compute = nx.attribute_assortativity_coefficient
        args = (key,)
    else:
        raise ValueError(f"Неизвестный режим ассортативности: {mode}")

    with np.errstate(all="ignore"):
        try:
            value = float(compute(g, *args))
        except (ZeroDivisionError, ValueError):
            return None
    if math.isnan(value) or math.isinf(value):
        return None
    return value


# ==================== Клика ====================

class _BudgetExceeded(Exception):
    pass


def degeneracy_order(g: nx.Graph) -> List[int]:
    """Порядок вырождения: многократное удаление вершины наименьшей степени."""
    degree = {node: g.degree(node) for node in g.nodes}
    heap = [(d, node) for node, d in degree.items()]
    heapq.heapify(heap)
    removed: Set[int] = set()
    order = []
    while heap:
        d, node = heapq.heappop(heap)
        if node in removed or d != degree[node]:
            continue
        removed.add(node)
        order.append(node)
        for neighbor in g[node]:
            if neighbor not in removed:
                degree[neighbor] -= 1
                heapq.heappush(heap, (degree[neighbor], neighbor))
    return order


def _color_classes(candidates: Set[int], adjacency: Dict[int, Set[int]]) -> List[Tuple[int, int]]:
    """Жадная раскраска кандидатов; (вершина, номер цвета) по возрастанию цвета."""
    classes: List[List[int]] = []
    for vertex in sorted(candidates):
        for members in classes:
            if adjacency[vertex].isdisjoint(members):
                members.append(vertex)
                break
        else:
            classes.append([vertex])
    return [(vertex, color) for color, members in enumerate(classes, 1) for vertex in members]


def clique_number(g: nx.Graph, time_budget: float = CLIQUE_TIME_BUDGET) -> Tuple[int, bool]:
    """
    Размер наибольшей клики методом ветвей и границ.

    Вершины перебираются в порядке вырождения, ветвь ограничивается
    числом цветов жадной раскраски кандидатов.

    Args:
        g: Граф
        time_budget: Лимит времени, с

    Returns:
        (размер, True если поиск завершён в пределах лимита)
    """
    if g.number_of_nodes() == 0:
        return 0, True

    adjacency = {node: set(g[node]) - {node} for node in g.nodes}
    order = degeneracy_order(g)
    position = {node: index for index, node in enumerate(order)}
    deadline = time.monotonic() + time_budget
    best = [1]

    def expand(size: int, candidates: Set[int]) -> None:
        if time.monotonic() > deadline:
            raise _BudgetExceeded
        if not candidates:
            best[0] = max(best[0], size)
            return
        colored = _color_classes(candidates, adjacency)
        for vertex, color in reversed(colored):
            if size + color <= best[0]:
                return
            expand(size + 1, candidates & adjacency[vertex])
            candidates = candidates - {vertex}

    try:
        for node in reversed(order):
            forward = {u for u in adjacency[node] if position[u] > position[node]}
            if len(forward) + 1 <= best[0]:
                continue
            expand(1, forward)
    except _BudgetExceeded:
        logger.warning(f"Поиск клики прерван по лимиту {time_budget} с, найдено {best[0]}")
        return best[0], False
    return best[0], True


# ==================== Сообщества и степени ====================

def communities(g: nx.Graph, seed: int = 0, restarts: int = LOUVAIN_RESTARTS) -> Tuple[List[List[int]], float]:
    """
    Разбиение Лувена и его модулярность.

    Лувен запускается restarts раз с зёрнами, выведенными из seed; лучшее
    разбиение дочищается переносом узлов и слиянием сообществ. Графы до
    EXACT_PARTITION_LIMIT узлов перебираются полностью.

    Returns:
        (сообщества, отсортированные по наименьшему узлу; Q)
    """
    if g.number_of_edges() == 0:
        return [[node] for node in sorted(g.nodes)], 0.0

    if g.number_of_nodes() <= EXACT_PARTITION_LIMIT:
        labels = _best_exact_partition(g)
    else:
        best: Optional[Tuple[float, Dict[int, int]]] = None
        for attempt in range(max(1, restarts)):
            found = nx.community.louvain_communities(g, seed=derive_seed(seed, "louvain", attempt) % 2 ** 32)
            labels = {node: index for index, c in enumerate(found) for node in c}
            q = _modularity(g, labels)
            if best is None or q > best[0] + 1e-12:
                best = (q, labels)
        labels = _refine_partition(g, best[1])

    grouped: Dict[int, List[int]] = {}
    for node in sorted(g.nodes):
        grouped.setdefault(labels[node], []).append(node)
    partition = sorted(grouped.values(), key=lambda c: c[0])
    q = nx.community.modularity(g, [set(c) for c in partition])
    return partition, float(q)


def _modularity(g: nx.Graph, labels: Dict[int, int]) -> float:
    m = g.number_of_edges()
    inner: Dict[int, int] = {}
    degree_sum: Dict[int, int] = {}
    for u, v in g.edges:
        if labels[u] == labels[v]:
            inner[labels[u]] = inner.get(labels[u], 0) + 1
    for node, d in g.degree():
        degree_sum[labels[node]] = degree_sum.get(labels[node], 0) + d
    return sum(inner.get(c, 0) / m - (total / (2 * m)) ** 2 for c, total in degree_sum.items())


def _best_exact_partition(g: nx.Graph) -> Dict[int, int]:
    """Перебор всех разбиений (строки ограниченного роста)."""
    nodes = sorted(g.nodes)
    best_q, best = -math.inf, {}
    growth = [0] * len(nodes)
    while True:
        labels = dict(zip(nodes, growth))
        q = _modularity(g, labels)
        if q > best_q + 1e-12:
            best_q, best = q, labels
        # Следующая строка: увеличиваем самый правый разряд, который можно
        i = len(growth) - 1
        while i > 0 and growth[i] > max(growth[:i]):
            i -= 1
        if i == 0:
            return best
        growth[i] += 1
        for j in range(i + 1, len(growth)):
            growth[j] = 0


def _refine_partition(g: nx.Graph, labels: Dict[int, int]) -> Dict[int, int]:
    """Жадно переносит узлы и сливает сообщества, пока модулярность растёт."""
    labels = dict(labels)
    m = g.number_of_edges()
    degree = dict(g.degree())

    improved = True
    while improved:
        improved = False
        totals: Dict[int, int] = {}
        for node, d in degree.items():
            totals[labels[node]] = totals.get(labels[node], 0) + d

        for node in sorted(g.nodes):
            k, own = degree[node], labels[node]
            links: Dict[int, int] = {}
            for peer in g.neighbors(node):
                if peer != node:
                    links[labels[peer]] = links.get(labels[peer], 0) + 1
            totals[own] -= k
            stay = links.get(own, 0) / m - k * totals[own] / (2 * m * m)
            target, gain = own, 0.0
            for label in sorted(links):
                delta = links[label] / m - k * totals[label] / (2 * m * m) - stay
                if delta > gain + 1e-12:
                    target, gain = label, delta
            totals[target] += k
            if target != own:
                labels[node] = target
                improved = True

        between: Dict[Tuple[int, int], int] = {}
        for u, v in g.edges:
            a, b = sorted((labels[u], labels[v]))
            if a != b:
                between[(a, b)] = between.get((a, b), 0) + 1
        merge, gain = None, 0.0
        for (a, b), e in sorted(between.items()):
            delta = e / m - totals[a] * totals[b] / (2 * m * m)
            if delta > gain + 1e-12:
                merge, gain = (a, b), delta
        if merge is not None:
            a, b = merge
            for node, label in labels.items():
                if label == b:
                    labels[node] = a
            improved = True
    return labels


def degree_distribution(g: nx.Graph) -> DegreeDistribution:
    """Гистограмма степеней, мода (и её доля), среднее и максимум."""
    histogram: Dict[int, int] = {}
    for _, d in g.degree():
        histogram[d] = histogram.get(d, 0) + 1
    return describe_histogram(histogram)


def describe_histogram(histogram: Dict[int, int]) -> DegreeDistribution:
    """Сводка по гистограмме степеней; при равенстве мода - меньшая степень."""
    histogram = dict(sorted(histogram.items()))
    if not histogram:
        return DegreeDistribution({}, 0, 0.0, 0.0, 0)

    n = sum(histogram.values())
    mode = max(histogram, key=lambda d: (histogram[d], -d))
    return DegreeDistribution(
        histogram=histogram,
        mode=mode,
        mode_share=histogram[mode] / n,
        mean=sum(d * c for d, c in histogram.items()) / n,
        max=max(histogram),
    )


def compute_metrics(g: nx.Graph, seed: int = 0, clique_budget: float = CLIQUE_TIME_BUDGET) -> MetricsReport:
    """Все метрики таблицы сравнения для одного графа."""
    distance = distance_metrics(g)
    avg_clustering, transitivity = clustering_metrics(g)
    clique, exact = clique_number(g, clique_budget)
    partition, q = communities(g, seed)
    return MetricsReport(
        nodes=g.number_of_nodes(),
        edges=g.number_of_edges(),
        diameter=distance.diameter,
        periphery_size=distance.periphery_size,
        radius=distance.radius,
        center_size=distance.center_size,
        mean_eccentricity=distance.mean_eccentricity,
        avg_clustering=avg_clustering,
        transitivity=transitivity,
        degree_assortativity=assortativity(g, "degree"),
        attribute_assortativity=assortativity(g, "attribute"),
        clique_number=clique,
        modularity=q,
        degree_histogram=degree_distribution(g).histogram,
        connected=distance.connected,
        clique_exact=exact,
        communities=len(partition),
    )


# ==================== Ансамбли ====================

def generate_like(g: nx.Graph, model: str, seed: int) -> GraphSnapshot:
    """
    Случайный граф, похожий на g.

    ER - те же n и m; CM - та же последовательность степеней;
    BA - те же n и число рёбер.
    """
    n, m = g.number_of_nodes(), g.number_of_edges()
    if model == "ER":
        return gen_er(n, m, seed)
    if model == "CM":
        return gen_cm(degree_sequence(relabel_consecutive(g)), seed)
    if model == "BA":
        return gen_ba(n, max(m, n - 1), seed)
    raise ValueError(f"Неизвестная модель ансамбля: {model}")


def _ensemble_run(g: nx.Graph, model: str, run: int, seed: int, clique_budget: float) -> MetricsReport:
    run_seed = derive_seed(seed, "ensemble", model, run)
    return compute_metrics(generate_like(g, model, run_seed), run_seed, clique_budget)


def summarize(observed: MetricsReport, reports: Sequence[MetricsReport]) -> Dict[str, EnsembleStat]:
    """
    Среднее по ансамблю и доля прогонов (в %), где значение выше наблюдаемого.

    Прогоны с неопределённым значением метрики не учитываются.
    """
    stats = {}
    for metric, _label in TABLE_METRICS:
        target = observed.value(metric)
        values = [r.value(metric) for r in reports if r.value(metric) is not None]
        if not values:
            stats[metric] = EnsembleStat(None, 0.0, 0)
            continue
        higher = sum(1 for v in values if target is not None and v > target)
        stats[metric] = EnsembleStat(
            mean=float(np.mean(values)),
            percent_higher=100.0 * higher / len(values),
            runs=len(values),
        )
    return stats


async def _collect(
    g: nx.Graph,
    jobs: List[Tuple[str, int]],
    seed: int,
    clique_budget: float,
    workers: int
) -> List[MetricsReport]:
    loop = asyncio.get_running_loop()
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [
            loop.run_in_executor(pool, _ensemble_run, g, model, run, seed, clique_budget)
            for model, run in jobs
        ]
        return list(await asyncio.gather(*futures))


def ensemble_compare(
    g: nx.Graph,
    models: Sequence[str] = ENSEMBLE_MODELS,
    runs: int = ENSEMBLE_RUNS,
    seed: int = 0,
    workers: int = 1,
    clique_budget: float = CLIQUE_TIME_BUDGET
) -> EnsembleComparison:
    """
    Сравнивает g с ансамблями случайных графов.

    Прогоны независимы и агрегируются по номеру прогона, поэтому
    результат не зависит от числа процессов.

    Args:
        g: Наблюдаемый граф
        models: Модели из ER, CM, BA
        runs: Число прогонов на модель
        seed: Главное зерно (подпотоки ensemble/<модель>/<прогон>)
        workers: Число процессов (1 - без пула)
        clique_budget: Лимит поиска клики на граф, с

    Returns:
        EnsembleComparison
    """
    observed = compute_metrics(g, seed, clique_budget)
    comparison = EnsembleComparison(observed=observed, runs=runs)

    usable = []
    for model in models:
        if model not in ENSEMBLE_MODELS:
            raise ValueError(f"Неизвестная модель ансамбля: {model}")
        if model == "BA" and g.number_of_nodes() < 3:
            logger.warning("Модель BA пропущена: нужно хотя бы 3 узла")
            continue
        usable.append(model)

    jobs = [(model, run) for model in usable for run in range(runs)]
    logger.info(f"Ансамбли: модели {', '.join(usable) or '-'}, по {runs} прогонов, процессов {workers}")

    try:
        if workers > 1:
            reports = asyncio.run(_collect(g, jobs, seed, clique_budget, workers))
        else:
            reports = [_ensemble_run(g, model, run, seed, clique_budget) for model, run in jobs]
    except GraphGenerationError as e:
        logger.error(f"Не удалось построить ансамбль: {e}")
        raise

    for model in usable:
        model_reports = [report for (m, _), report in zip(jobs, reports) if m == model]
        comparison.models[model] = summarize(observed, model_reports)
    return comparison
