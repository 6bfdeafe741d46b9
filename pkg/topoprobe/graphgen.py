"""
Генераторы случайных графов с зерном: исходные топологии и ансамбли
для сравнения (ER, CM, BA).

GraphSnapshot - простой неориентированный nx.Graph с целыми id вершин
и атрибутами вершин "region" (категориальная метка) и "flags".
"""
import logging
import random
from math import comb
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx

from .seeding import make_rng

logger = logging.getLogger("topoprobe")

GraphSnapshot = nx.Graph

# Регионы по умолчанию и их веса (концентрация в США, Европе и Восточной Азии)
DEFAULT_REGIONS: Dict[str, float] = {
    "north_america": 0.35,
    "europe": 0.25,
    "east_asia": 0.20,
    "oceania": 0.10,
    "south_america": 0.10,
}

CM_MATCHING_TRIES = 20
CM_REPAIR_ATTEMPTS = 1000


class GraphGenerationError(ValueError):
    """Невыполнимые параметры генерации."""


def assign_regions(
    graph: GraphSnapshot,
    seed: int,
    weights: Optional[Dict[str, float]] = None
) -> GraphSnapshot:
    """
    Назначает вершинам метки регионов по категориальному распределению.

    Args:
        graph: Граф (изменяется на месте)
        seed: Зерно
        weights: Регион -> вес (по умолчанию DEFAULT_REGIONS)

    Returns:
        Тот же граф
    """
    weights = weights or DEFAULT_REGIONS
    rng = make_rng(seed, "regions")
    labels = list(weights)
    cumulative = list(weights.values())
    for node in sorted(graph.nodes):
        graph.nodes[node]["region"] = rng.choices(labels, weights=cumulative)[0]
        graph.nodes[node].setdefault("flags", "")
    return graph


def gen_er(n: int, m: int, seed: int) -> GraphSnapshot:
    """
    Граф Эрдёша-Реньи G(n, m): ровно m рёбер, выбранных равновероятно.

    Raises:
        GraphGenerationError: Если m > n(n-1)/2
    """
    if n < 0 or m < 0:
        raise GraphGenerationError(f"n и m должны быть неотрицательны: n={n}, m={m}")
    if m > comb(n, 2):
        raise GraphGenerationError(f"Невозможно разместить {m} рёбер на {n} вершинах")

    graph = nx.gnm_random_graph(n, m, seed=make_rng(seed, "topology", "er"))
    return assign_regions(nx.Graph(graph), seed)


def is_graphical(degrees: Sequence[int]) -> bool:
    """Проверка Эрдёша-Галлаи."""
    if any(d < 0 for d in degrees) or sum(degrees) % 2:
        return False
    return nx.is_graphical(list(degrees), method="eg")


def gen_cm(degree_sequence: Sequence[int], seed: int) -> GraphSnapshot:
    """
    Конфигурационная модель с точным сохранением последовательности степеней.

    Сопоставление полустепеней с отбраковкой петель и кратных рёбер
    (ограниченное число попыток), затем локальный ремонт обменом рёбер.

    Args:
        degree_sequence: Степень вершины i - degree_sequence[i]
        seed: Зерно

    Returns:
        Простой граф с заданной последовательностью степеней

    Raises:
        GraphGenerationError: Нечётная сумма или неграфическая последовательность
    """
    degrees = list(degree_sequence)
    if sum(degrees) % 2:
        raise GraphGenerationError("Сумма степеней нечётна")
    if not is_graphical(degrees):
        raise GraphGenerationError("Последовательность степеней не графическая (Эрдёш-Галлаи)")

    rng = make_rng(seed, "topology", "cm")
    for _ in range(CM_MATCHING_TRIES):
        pairs = _match_stubs(degrees, rng)
        try:
            edges = _repair(pairs, rng)
        except GraphGenerationError:
            continue
        graph = nx.Graph()
        graph.add_nodes_from(range(len(degrees)))
        graph.add_edges_from(edges)
        return assign_regions(graph, seed)

    raise GraphGenerationError(
        f"Не удалось построить простой граф за {CM_MATCHING_TRIES} попыток сопоставления"
    )


def _key(u: int, v: int) -> Tuple[int, int]:
    return (u, v) if u < v else (v, u)


def _match_stubs(degrees: Sequence[int], rng: random.Random) -> List[Tuple[int, int]]:
    stubs = [node for node, degree in enumerate(degrees) for _ in range(degree)]
    rng.shuffle(stubs)
    return list(zip(stubs[0::2], stubs[1::2]))


def _repair(pairs: List[Tuple[int, int]], rng: random.Random) -> List[Tuple[int, int]]:
    good = set()
    bad = []
    for u, v in pairs:
        key = _key(u, v)
        if u == v or key in good:
            bad.append((u, v))
        else:
            good.add(key)

    for u, v in bad:
        candidates = sorted(good)
        if not candidates:
            raise GraphGenerationError("Нет рёбер для обмена")
        for _ in range(CM_REPAIR_ATTEMPTS):
            x, y = rng.choice(candidates)
            if rng.random() < 0.5:
                x, y = y, x
            new_a, new_b = _key(u, x), _key(v, y)
            if len({u, v, x, y}) < (3 if u == v else 4):
                continue
            if new_a in good or new_b in good or new_a == new_b:
                continue
            good.discard(_key(x, y))
            good.add(new_a)
            good.add(new_b)
            break
        else:
            raise GraphGenerationError("Не удалось устранить петли и кратные рёбра обменом")

    return sorted(good)


def ba_plan(n: int, target_m: int) -> Tuple[int, int]:
    """
    Подбирает параметры BA под целевое число рёбер.

    Затравка - полный граф на k+1 вершинах, каждая следующая вершина
    присоединяется k или k+1 рёбрами. Диапазоны числа рёбер для соседних k
    смыкаются, поэтому любое m из [n-1, n(n-1)/2] достижимо точно.

    Returns:
        (k, число прибытий с k+1 рёбрами)

    Raises:
        GraphGenerationError: Если target_m вне достижимого диапазона
    """
    if n < 3:
        raise GraphGenerationError(f"BA требует n >= 3, получено {n}")
    if not n - 1 <= target_m <= comb(n, 2):
        raise GraphGenerationError(
            f"Число рёбер {target_m} недостижимо для n={n} (допустимо {n - 1}..{comb(n, 2)})"
        )

    for k in range(1, n):
        low = comb(k + 1, 2) + (n - k - 1) * k
        high = low + (n - k - 1)
        if low <= target_m <= high:
            return k, target_m - low
    return n - 1, 0


def gen_ba(n: int, target_m: int, seed: int) -> GraphSnapshot:
    """
    Граф предпочтительного присоединения с числом рёбер, равным target_m.

    Args:
        n: Число вершин
        target_m: Целевое число рёбер
        seed: Зерно

    Returns:
        Простой граф

    Raises:
        GraphGenerationError: n < 3 или недостижимое target_m
    """
    k, extra = ba_plan(n, target_m)
    rng = make_rng(seed, "topology", "ba")

    graph = nx.complete_graph(k + 1)
    arrivals = list(range(k + 1, n))
    wide = set(rng.sample(arrivals, extra))

    # Каждая вершина повторяется в списке столько раз, какова её степень
    repeated = [node for node in graph.nodes for _ in range(graph.degree(node))]
    for node in arrivals:
        attach = k + 1 if node in wide else k
        targets = set()
        while len(targets) < attach:
            targets.add(rng.choice(repeated))
        graph.add_edges_from((node, target) for target in sorted(targets))
        repeated.extend(sorted(targets))
        repeated.extend([node] * attach)

    return assign_regions(graph, seed)


def degree_sequence(graph: GraphSnapshot) -> List[int]:
    """Последовательность степеней в порядке id вершин."""
    return [graph.degree(node) for node in sorted(graph.nodes)]


def relabel_consecutive(graph: GraphSnapshot) -> GraphSnapshot:
    """Перенумеровывает вершины 0..n-1 в порядке возрастания id, сохраняя атрибуты."""
    mapping = {node: index for index, node in enumerate(sorted(graph.nodes))}
    return nx.relabel_nodes(graph, mapping, copy=True)
