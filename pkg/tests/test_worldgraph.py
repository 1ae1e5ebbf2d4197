"""Graph model tests: path enumeration, shortest paths, file round-trips."""
import math
import random

import networkx as nx
import pytest

from situated.worldgraph import (
    Edge,
    GraphError,
    GraphPath,
    SegmentGraph,
    distance_meters,
    paths_within,
    shortest_of,
)


def line_graph():
    return SegmentGraph(
        ["a", "b", "c"],
        [Edge(1, "a", "b", 100.0), Edge(2, "b", "c", 100.0)],
    )


def grid_graph(cols=4, rows=3, length=100.0):
    nodes = [f"n{r}{c}" for r in range(rows) for c in range(cols)]
    edges = []
    eid = 0
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                edges.append(Edge(eid, f"n{r}{c}", f"n{r}{c + 1}", length))
                eid += 1
            if r + 1 < rows:
                edges.append(Edge(eid, f"n{r}{c}", f"n{r + 1}{c}", length))
                eid += 1
    return SegmentGraph(nodes, edges)


def random_graph(rng, n_nodes=10, extra_edges=8):
    nodes = [f"n{i}" for i in range(n_nodes)]
    edges = []
    eid = 0
    for i in range(1, n_nodes):  # random spanning tree keeps it connected
        j = rng.randrange(i)
        edges.append(Edge(eid, nodes[i], nodes[j], rng.randint(1, 9) * 25.0))
        eid += 1
    present = {(min(e.src, e.dst), max(e.src, e.dst)) for e in edges}
    while eid < n_nodes - 1 + extra_edges:
        a, b = rng.sample(nodes, 2)
        key = (min(a, b), max(a, b))
        if key in present:
            continue
        present.add(key)
        edges.append(Edge(eid, a, b, rng.randint(1, 9) * 25.0))
        eid += 1
    return SegmentGraph(nodes, edges)


def enumerate_simple_paths(graph, src, dst, max_dist):
    """Independent oracle: breadth-first expansion of partial simple paths."""
    results = []
    frontier = [((src,), 0.0)]
    while frontier:
        path, length = frontier.pop()
        node = path[-1]
        if node == dst:
            results.append((length, path))
            continue
        for neighbor, edge in graph.neighbors(node):
            if neighbor in path:
                continue
            if length + edge.length <= max_dist:
                frontier.append((path + (neighbor,), length + edge.length))
    return sorted(results)


def test_line_graph_single_path():
    g = line_graph()
    assert paths_within(g, "a", "c", 250.0) == [GraphPath(("a", "b", "c"))]


def test_line_graph_bound_excludes():
    assert paths_within(line_graph(), "a", "c", 150.0) == []


def test_unreachable_pair_gives_empty_set():
    g = SegmentGraph(["a", "b", "x"], [Edge(1, "a", "b", 50.0)])
    assert paths_within(g, "a", "x", 500.0) == []


def test_grid_paths_match_enumeration_oracle():
    g = grid_graph()
    expected = enumerate_simple_paths(g, "n00", "n23", 600.0)
    got = paths_within(g, "n00", "n23", 600.0)
    assert [(p.length(g), p.nodes) for p in got] == expected
    assert got == sorted(got, key=lambda p: (p.length(g), p.nodes))


def test_paths_within_downward_closed_under_tightening():
    rng = random.Random(11)
    for _ in range(10):
        g = random_graph(rng)
        src, dst = sorted(g.nodes)[0], sorted(g.nodes)[-1]
        wide = {p.nodes for p in paths_within(g, src, dst, 700.0)}
        narrow = {p.nodes for p in paths_within(g, src, dst, 450.0)}
        assert narrow <= wide


def test_shortest_of_single_path_identity():
    g = line_graph()
    only = GraphPath(("a", "b", "c"))
    assert shortest_of([only], g) == only


def test_shortest_of_strict_order():
    g = SegmentGraph(
        ["a", "b", "c"],
        [Edge(1, "a", "b", 100.0), Edge(2, "b", "c", 100.0), Edge(3, "a", "c", 150.0)],
    )
    picked = shortest_of([GraphPath(("a", "b", "c")), GraphPath(("a", "c"))], g)
    assert picked == GraphPath(("a", "c"))


def test_shortest_of_matches_linear_scan_oracle():
    rng = random.Random(5)
    g = grid_graph()
    candidates = paths_within(g, "n00", "n23", 900.0)
    sample = rng.sample(candidates, min(20, len(candidates)))
    oracle = None
    for p in sample:
        key = (p.length(g), p.nodes)
        if oracle is None or key < (oracle.length(g), oracle.nodes):
            oracle = p
    assert shortest_of(sample, g) == oracle


def test_shortest_of_empty_errors():
    with pytest.raises(GraphError, match="no candidate paths"):
        shortest_of([], line_graph())


def test_distance_identity_and_line():
    g = line_graph()
    assert distance_meters(g, "a", "a") == 0.0
    assert distance_meters(g, "a", "c") == 200.0


def test_distance_unreachable_is_infinite():
    g = SegmentGraph(["a", "b", "x"], [Edge(1, "a", "b", 50.0)])
    assert math.isinf(distance_meters(g, "a", "x"))


def test_distance_unknown_node_errors():
    with pytest.raises(GraphError):
        distance_meters(line_graph(), "a", "nope")


def test_distance_matches_networkx_dijkstra():
    rng = random.Random(23)
    for _ in range(10):
        g = random_graph(rng)
        nxg = nx.Graph()
        for e in g.edges.values():
            nxg.add_edge(e.src, e.dst, weight=e.length)
        nodes = sorted(g.nodes)
        for _ in range(10):
            a, b = rng.choice(nodes), rng.choice(nodes)
            expected = nx.dijkstra_path_length(nxg, a, b, weight="weight")
            assert distance_meters(g, a, b) == pytest.approx(expected)


def test_shortest_path_consistent_with_distance():
    rng = random.Random(31)
    for _ in range(5):
        g = random_graph(rng)
        nodes = sorted(g.nodes)
        a, b = nodes[0], nodes[-1]
        d = distance_meters(g, a, b)
        if math.isinf(d):
            continue
        paths = paths_within(g, a, b, d + 200.0)
        assert shortest_of(paths, g).length(g) == pytest.approx(d)


def test_graph_file_round_trip():
    g = grid_graph()
    assert SegmentGraph.parse(g.serialize()) == g
    directed = SegmentGraph(["a", "b"], [Edge(4, "a", "b", 12.5)], directed=True)
    assert SegmentGraph.parse(directed.serialize()) == directed


def test_graph_file_errors():
    with pytest.raises(GraphError):
        SegmentGraph.parse("node a\n")
    with pytest.raises(GraphError):
        SegmentGraph.parse("graph undirected\nedge 1 a b x\n")
    with pytest.raises(GraphError):
        SegmentGraph.parse("")


def test_graph_construction_invariants():
    with pytest.raises(GraphError):
        SegmentGraph(["a"], [Edge(1, "a", "ghost", 10.0)])
    with pytest.raises(GraphError):
        SegmentGraph(["a", "b"], [Edge(1, "a", "b", 0.0)])
    with pytest.raises(GraphError):
        SegmentGraph(["a", "b"], [Edge(1, "a", "b", 5.0), Edge(1, "b", "a", 5.0)])
