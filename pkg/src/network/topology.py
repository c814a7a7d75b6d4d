"""
Топология сети: проверка инвариантов, смежность труб (линейный граф), обход вверх по потоку
"""
import logging
from collections import defaultdict, deque
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Dict, FrozenSet, List, Mapping, Optional, Set

import networkx as nx

from ..shared.errors import TopologyError
from ..shared.models import NetworkTopology, Node, NodeKind, Pipe
from ..shared.schemas import NetworkSchema, load_document
from ..shared.utils import canonical_json, sha256_text

logger = logging.getLogger(__name__)

AdjacencyMap = Mapping[str, FrozenSet[str]]


@dataclass(frozen=True)
class Violation:
    """Нарушенный инвариант топологии"""
    code: str
    subject: str
    message: str

    def __str__(self):
        return f"[{self.code}] {self.subject}: {self.message}"


@dataclass
class ValidationReport:
    """Отчёт проверки; пустой отчёт означает корректную топологию"""
    violations: List[Violation] = field(default_factory=list)

    @property
    def is_valid(self) -> bool:
        return not self.violations

    def add(self, code: str, subject: str, message: str):
        self.violations.append(Violation(code, subject, message))

    def __len__(self):
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)

    def to_dict(self):
        return {
            'valid': self.is_valid,
            'violations': [{'code': v.code, 'subject': v.subject, 'message': v.message}
                           for v in self.violations],
        }


def directed_graph(topology: NetworkTopology) -> nx.MultiDiGraph:
    """Ориентированный мультиграф узлов; ребро на каждую трубу с известными концами"""
    graph = nx.MultiDiGraph()
    graph.add_nodes_from(node.id for node in topology.nodes)
    for pipe in topology.pipes:
        if pipe.from_node in graph and pipe.to_node in graph:
            graph.add_edge(pipe.from_node, pipe.to_node, key=pipe.id)
    return graph


def validate(topology: NetworkTopology) -> ValidationReport:
    """
    Проверка всех инвариантов топологии.
    Никогда не выбрасывает исключений: нарушения - содержимое отчёта
    """
    report = ValidationReport()

    seen_nodes: Set[str] = set()
    for node in topology.nodes:
        if node.id in seen_nodes:
            report.add('duplicate-node', node.id, "node id is not unique")
        seen_nodes.add(node.id)
        has_signal = bool(node.boundary_signal_id)
        if node.kind.is_controlled and not has_signal:
            report.add('missing-signal', node.id, f"{node.kind.value} node requires boundary_signal_id")
        if not node.kind.is_controlled and has_signal:
            report.add('unexpected-signal', node.id, f"{node.kind.value} node must not carry boundary_signal_id")

    seen_pipes: Set[str] = set()
    outgoing: Dict[str, int] = defaultdict(int)
    incoming: Dict[str, int] = defaultdict(int)
    for pipe in topology.pipes:
        if pipe.id in seen_pipes:
            report.add('duplicate-pipe', pipe.id, "pipe id is not unique")
        seen_pipes.add(pipe.id)
        if not pipe.length_m > 0:
            report.add('pipe-length', pipe.id, f"length_m must be > 0, got {pipe.length_m}")
        if not pipe.area_m2 > 0:
            report.add('pipe-area', pipe.id, f"area_m2 must be > 0, got {pipe.area_m2}")
        for end in (pipe.from_node, pipe.to_node):
            if end not in seen_nodes:
                report.add('missing-node', pipe.id, f"references unknown node '{end}'")
        if pipe.from_node == pipe.to_node:
            report.add('self-loop', pipe.id, "from_node equals to_node")
        outgoing[pipe.from_node] += 1
        incoming[pipe.to_node] += 1

    for node in topology.nodes:
        if node.kind.is_controlled and outgoing[node.id] == 0:
            report.add('no-outflow', node.id, f"{node.kind.value} node has no outgoing pipe")
        if node.kind is NodeKind.LOAD and incoming[node.id] == 0:
            report.add('no-inflow', node.id, "load node has no incoming pipe")

    if not topology.nodes:
        report.add('empty', 'network', "network has no nodes")
    else:
        graph = directed_graph(topology)
        if not nx.is_weakly_connected(graph):
            components = nx.number_weakly_connected_components(graph)
            report.add('disconnected', 'network', f"network has {components} weakly connected components")

    return report


def require_valid(topology: NetworkTopology) -> None:
    report = validate(topology)
    if not report.is_valid:
        raise TopologyError(f"invalid topology: {len(report)} violation(s); first: {report.violations[0]}",
                            report.violations)


def line_graph_adjacency(topology: NetworkTopology) -> AdjacencyMap:
    """
    Смежность труб: трубы смежны, если имеют общий узел в любой роли.
    Результат симметричен, труба не смежна сама себе
    """
    require_valid(topology)
    incident: Dict[str, Set[str]] = defaultdict(set)
    for pipe in topology.pipes:
        incident[pipe.from_node].add(pipe.id)
        incident[pipe.to_node].add(pipe.id)
    adjacency = {}
    for pipe in topology.pipes:
        neighbors = (incident[pipe.from_node] | incident[pipe.to_node]) - {pipe.id}
        adjacency[pipe.id] = frozenset(neighbors)
    return MappingProxyType(adjacency)


def line_graph(adjacency: AdjacencyMap) -> nx.Graph:
    """Неориентированный линейный граф как networkx.Graph"""
    graph = nx.Graph()
    graph.add_nodes_from(adjacency)
    for pipe_id, neighbors in adjacency.items():
        graph.add_edges_from((pipe_id, other) for other in neighbors)
    return graph


def line_graph_distances(adjacency: AdjacencyMap, source_pipe: str) -> Dict[str, int]:
    """Расстояния (в трубах) от source_pipe по линейному графу; недостижимые отсутствуют"""
    return dict(nx.single_source_shortest_path_length(line_graph(adjacency), source_pipe))


def upstream_pipes(topology: NetworkTopology, node_id: str) -> FrozenSet[str]:
    """Трубы, входящие в узел node_id"""
    if node_id not in topology.node_map:
        raise TopologyError(f"unknown node id '{node_id}'")
    return frozenset(pipe.id for pipe in topology.pipes if pipe.to_node == node_id)


def downstream_pipes(topology: NetworkTopology, node_id: str) -> FrozenSet[str]:
    """Трубы, выходящие из узла node_id"""
    if node_id not in topology.node_map:
        raise TopologyError(f"unknown node id '{node_id}'")
    return frozenset(pipe.id for pipe in topology.pipes if pipe.from_node == node_id)


def find_directed_cycle(topology: NetworkTopology) -> Optional[List[str]]:
    """Трубы ориентированного цикла или None, если граф ацикличен"""
    graph = directed_graph(topology)
    try:
        edges = nx.find_cycle(graph, orientation='original')
    except nx.NetworkXNoCycle:
        return None
    return [key for _, _, key, _ in edges]


def nearest_controlled_ancestors(topology: NetworkTopology, node_id: str) -> List[str]:
    """
    Ближайшие (по числу труб) управляемые узлы вверх по потоку от node_id.
    Сам узел, если он управляемый. Пустой список, если таких нет
    """
    node_map = topology.node_map
    if node_map[node_id].kind.is_controlled:
        return [node_id]
    inflow: Dict[str, List[str]] = defaultdict(list)
    for pipe in topology.pipes:
        inflow[pipe.to_node].append(pipe.from_node)

    visited = {node_id}
    frontier = deque([node_id])
    while frontier:
        level = list(frontier)
        frontier.clear()
        found = []
        for current in level:
            for parent in inflow[current]:
                if parent in visited:
                    continue
                visited.add(parent)
                if node_map[parent].kind.is_controlled:
                    found.append(parent)
                else:
                    frontier.append(parent)
        if found:
            return sorted(found)
    return []


def topology_hash(topology: NetworkTopology) -> str:
    """Хеш канонического описания сети"""
    nodes = sorted((n.id, n.kind.value, n.boundary_signal_id or '') for n in topology.nodes)
    pipes = sorted((p.id, p.from_node, p.to_node, repr(float(p.length_m)), repr(float(p.area_m2)))
                   for p in topology.pipes)
    return sha256_text(canonical_json({'nodes': nodes, 'pipes': pipes}))


def relabel(topology: NetworkTopology, node_names: Mapping[str, str],
            pipe_names: Mapping[str, str]) -> NetworkTopology:
    """Переименование узлов и труб биекциями; порядок труб сохраняется"""
    nodes = tuple(Node(node_names.get(n.id, n.id), n.kind, n.boundary_signal_id) for n in topology.nodes)
    pipes = tuple(Pipe(pipe_names.get(p.id, p.id), node_names.get(p.from_node, p.from_node),
                       node_names.get(p.to_node, p.to_node), p.length_m, p.area_m2)
                  for p in topology.pipes)
    return NetworkTopology(nodes=nodes, pipes=pipes)


def load_network(path: str) -> NetworkTopology:
    """Загрузка сети из JSON-файла (без проверки инвариантов)"""
    topology = load_document(path, NetworkSchema())
    logger.info(f"Network loaded from {path}: {len(topology.nodes)} nodes, {len(topology.pipes)} pipes")
    return topology
