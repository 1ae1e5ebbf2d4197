"""Segment/road graphs, paths, hulls, and path projections.

The warehouse floor and the road network share one spatial model: a graph of
named nodes joined by positive-length edges. Paths are node-simple (no node
revisited, hence no repeated edge). Graphs are immutable after construction
and freely shareable between nodes of the simulation.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass


class GraphError(Exception):
    pass


@dataclass(frozen=True)
class Edge:
    id: int
    src: str
    dst: str
    length: float

    def other(self, node: str) -> str:
        return self.dst if node == self.src else self.src


@dataclass(frozen=True)
class GraphPath:
    """Ordered node sequence; consecutive nodes must be graph-adjacent."""

    nodes: tuple[str, ...]

    def length(self, graph: SegmentGraph) -> float:
        total = 0.0
        for a, b in zip(self.nodes, self.nodes[1:]):
            total += graph.edge_between(a, b).length
        return total

    def edge_ids(self, graph: SegmentGraph) -> tuple[int, ...]:
        return tuple(graph.edge_between(a, b).id
                     for a, b in zip(self.nodes, self.nodes[1:]))

    def __len__(self) -> int:
        return len(self.nodes)


class SegmentGraph:
    def __init__(self, nodes: list[str], edges: list[Edge], directed: bool = False):
        self.directed = directed
        self.nodes = frozenset(nodes)
        self.edges: dict[int, Edge] = {}
        self._adj: dict[str, list[tuple[str, Edge]]] = {n: [] for n in nodes}
        for edge in edges:
            if edge.id in self.edges:
                raise GraphError(f"duplicate edge id {edge.id}")
            if edge.src not in self.nodes or edge.dst not in self.nodes:
                raise GraphError(f"edge {edge.id} references unknown node")
            if edge.length <= 0:
                raise GraphError(f"edge {edge.id} must have positive length")
            self.edges[edge.id] = edge
            self._adj[edge.src].append((edge.dst, edge))
            if not directed:
                self._adj[edge.dst].append((edge.src, edge))
        for neighbors in self._adj.values():
            neighbors.sort(key=lambda pair: (pair[0], pair[1].id))
        self._between: dict[tuple[str, str], Edge] = {}
        for edge in self.edges.values():
            self._between.setdefault((edge.src, edge.dst), edge)
            if not directed:
                self._between.setdefault((edge.dst, edge.src), edge)

    def neighbors(self, node: str) -> list[tuple[str, Edge]]:
        return self._adj[node]

    def edge_between(self, a: str, b: str) -> Edge:
        edge = self._between.get((a, b))
        if edge is None:
            raise GraphError(f"nodes {a!r} and {b!r} are not adjacent")
        return edge

    def has_edge_between(self, a: str, b: str) -> bool:
        return (a, b) in self._between

    def __eq__(self, other) -> bool:
        return (isinstance(other, SegmentGraph)
                and self.directed == other.directed
                and self.nodes == other.nodes
                and self.edges == other.edges)

    # -- file format ---------------------------------------------------------
    # header `graph <directed|undirected>`, then `node <id>` lines, then
    # `edge <id> <from> <to> <lengthMeters>` lines.

    def serialize(self) -> str:
        lines = [f"graph {'directed' if self.directed else 'undirected'}"]
        for node in sorted(self.nodes):
            lines.append(f"node {node}")
        for eid in sorted(self.edges):
            e = self.edges[eid]
            lines.append(f"edge {e.id} {e.src} {e.dst} {format_length(e.length)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> SegmentGraph:
        directed = False
        nodes: list[str] = []
        edges: list[Edge] = []
        saw_header = False
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if not saw_header:
                if parts[0] != "graph" or len(parts) != 2 or \
                        parts[1] not in ("directed", "undirected"):
                    raise GraphError(f"line {lineno}: expected graph header")
                directed = parts[1] == "directed"
                saw_header = True
            elif parts[0] == "node" and len(parts) == 2:
                nodes.append(parts[1])
            elif parts[0] == "edge" and len(parts) == 5:
                try:
                    edges.append(Edge(int(parts[1]), parts[2], parts[3], float(parts[4])))
                except ValueError as exc:
                    raise GraphError(f"line {lineno}: {exc}") from exc
            else:
                raise GraphError(f"line {lineno}: unrecognized line {line!r}")
        if not saw_header:
            raise GraphError("empty graph file")
        return cls(nodes, edges, directed)


def format_length(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(value)


@dataclass(frozen=True)
class Hull:
    """Edge footprint an AGV physically occupies, plus a safety margin."""

    segments: frozenset[int]
    margin_meters: float = 0.0


REQUESTED = "requested"
LOCKED = "locked"


@dataclass
class PathProjection:
    id: int
    priority: int
    hull: Hull
    projection: tuple[int, ...]
    status: str = REQUESTED

    def lock(self) -> None:
        self.status = LOCKED

    def segment_set(self) -> frozenset[int]:
        return frozenset(self.projection) | self.hull.segments

    def clear(self, segments: frozenset[int]) -> None:
        self.projection = tuple(e for e in self.projection if e not in segments)


@dataclass
class OperatingSpace:
    """Agent-side view of its projections: requested vs locked path prefix."""

    requested_path: GraphPath | None = None
    locked_path: GraphPath | None = None

    def locked(self, path: GraphPath) -> None:
        self.requested_path = None
        self.locked_path = path

    def release(self, path: GraphPath | None) -> None:
        self.locked_path = path


def paths_within(graph: SegmentGraph, src: str, dst: str,
                 max_dist: float) -> list[GraphPath]:
    """All simple paths src -> dst with total length <= max_dist.

    Deterministic order: by (length, node sequence).
    """
    if src not in graph.nodes or dst not in graph.nodes:
        raise GraphError("path endpoints must be graph nodes")
    if max_dist <= 0:
        raise GraphError("max_dist must be positive")
    found: list[tuple[float, GraphPath]] = []

    def extend(node: str, visited: list[str], length: float) -> None:
        if node == dst:
            found.append((length, GraphPath(tuple(visited))))
            return
        for neighbor, edge in graph.neighbors(node):
            if neighbor in seen:
                continue
            new_length = length + edge.length
            if new_length > max_dist:
                continue
            seen.add(neighbor)
            visited.append(neighbor)
            extend(neighbor, visited, new_length)
            visited.pop()
            seen.remove(neighbor)

    seen = {src}
    extend(src, [src], 0.0)
    found.sort(key=lambda pair: (pair[0], pair[1].nodes))
    return [path for _, path in found]


def shortest_of(paths: list[GraphPath], graph: SegmentGraph) -> GraphPath:
    """Minimal-length path; ties broken by lexicographically smallest nodes."""
    if not paths:
        raise GraphError("no candidate paths")
    return min(paths, key=lambda p: (p.length(graph), p.nodes))


def distance_meters(graph: SegmentGraph, src: str, dst: str) -> float:
    """Shortest-path distance; math.inf when unreachable."""
    if src not in graph.nodes or dst not in graph.nodes:
        raise GraphError(f"unknown node in distance query: {src!r} -> {dst!r}")
    if src == dst:
        return 0.0
    dist = {src: 0.0}
    frontier: list[tuple[float, str]] = [(0.0, src)]
    while frontier:
        d, node = heapq.heappop(frontier)
        if node == dst:
            return d
        if d > dist.get(node, math.inf):
            continue
        for neighbor, edge in graph.neighbors(node):
            nd = d + edge.length
            if nd < dist.get(neighbor, math.inf):
                dist[neighbor] = nd
                heapq.heappush(frontier, (nd, neighbor))
    return math.inf
