"""
Импорт и экспорт графов: текстовый список рёбер и GraphML.

Список рёбер: по одной паре "u v" на строку, u < v, строки отсортированы
по (u, v), id - десятичные целые. Пустые строки и строки с "#" при чтении
пропускаются. Атрибуты вершин и изолированные вершины переносит только GraphML.
"""
import logging
import os
from typing import Iterable, List, Optional, Tuple
from xml.etree.ElementTree import ParseError

import networkx as nx

logger = logging.getLogger("topoprobe")

EDGELIST = "edgelist"
GRAPHML = "graphml"
FORMATS = (EDGELIST, GRAPHML)

_EXTENSIONS = {EDGELIST: ".edges", GRAPHML: ".graphml"}


class GraphFormatError(ValueError):
    """Ошибка разбора файла графа; line - номер строки, если известен."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"строка {line}: {message}"
        super().__init__(message)


def detect_format(path: str) -> str:
    """Формат по расширению файла (по умолчанию - список рёбер)."""
    if os.path.splitext(path)[1].lower() in (".graphml", ".xml"):
        return GRAPHML
    return EDGELIST


def file_name(stem: str, fmt: str) -> str:
    return stem + _EXTENSIONS[fmt]


def sorted_edges(g: nx.Graph) -> List[Tuple[int, int]]:
    return sorted((u, v) if u < v else (v, u) for u, v in g.edges)


def format_edgelist(g: nx.Graph) -> str:
    return "".join(f"{u} {v}\n" for u, v in sorted_edges(g))


def parse_edgelist(lines: Iterable[str]) -> nx.Graph:
    """
    Разбирает список рёбер.

    Raises:
        GraphFormatError: Строка не из двух неотрицательных целых или петля
    """
    graph = nx.Graph()
    for number, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise GraphFormatError(f"ожидалось 'u v', получено '{line}'", number)
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphFormatError(f"id вершин должны быть целыми: '{line}'", number) from None
        if u < 0 or v < 0:
            raise GraphFormatError(f"id вершин должны быть неотрицательны: '{line}'", number)
        if u == v:
            raise GraphFormatError(f"петля {u}-{v} недопустима", number)
        graph.add_edge(u, v)
    return graph


def export_graph(g: nx.Graph, path: str, fmt: Optional[str] = None) -> None:
    """
    Записывает граф в файл.

    Args:
        g: Граф
        path: Путь к файлу
        fmt: edgelist или graphml (по умолчанию - по расширению)
    """
    fmt = fmt or detect_format(path)
    if fmt == EDGELIST:
        with open(path, "w", encoding="utf-8") as f:
            f.write(format_edgelist(g))
    elif fmt == GRAPHML:
        ordered = nx.Graph()
        for node in sorted(g.nodes):
            ordered.add_node(node, **{k: g.nodes[node][k] for k in sorted(g.nodes[node])})
        ordered.add_edges_from(sorted_edges(g))
        nx.write_graphml(ordered, path, encoding="utf-8")
    else:
        raise ValueError(f"Неизвестный формат графа: {fmt}")
    logger.debug(f"Граф записан: {path} ({fmt})")


def import_graph(path: str, fmt: Optional[str] = None) -> nx.Graph:
    """
    Читает граф из файла.

    Raises:
        FileNotFoundError: Файл не найден
        GraphFormatError: Ошибка разбора
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Файл графа не найден: {path}")

    fmt = fmt or detect_format(path)
    if fmt == EDGELIST:
        with open(path, "r", encoding="utf-8") as f:
            return parse_edgelist(f)
    if fmt != GRAPHML:
        raise ValueError(f"Неизвестный формат графа: {fmt}")

    try:
        graph = nx.read_graphml(path, node_type=int)
    except ParseError as e:
        raise GraphFormatError(f"некорректный XML: {e}", e.position[0]) from e
    except (nx.NetworkXError, ValueError) as e:
        raise GraphFormatError(f"некорректный GraphML: {e}") from e
    if graph.is_directed() or graph.is_multigraph():
        raise GraphFormatError("ожидался простой неориентированный граф")
    return nx.Graph(graph)
