import itertools
from datetime import datetime, timezone
from pathlib import Path

import networkx as nx
import numpy as np
import pytest

from leonet import routing as rt

DATA = Path(__file__).parent / "data"
T0 = datetime(2024, 1, 1, tzinfo=timezone.utc)


def _random_graph(seed, n, p=0.3, integer=False):
    r = np.random.default_rng(seed)
    edges = []
    for a, b in itertools.combinations(range(n), 2):
        if r.random() < p:
            w = float(r.integers(1, 5)) if integer else float(r.uniform(0.1, 10.0))
            edges.append((a, b, w))
    return edges


@pytest.mark.parametrize("seed", range(20))
def test_dijkstra_matches_networkx(seed):
    edges = _random_graph(seed, 25)
    g = rt.Graph.from_edges(25, edges)
    ref = nx.Graph()
    ref.add_nodes_from(range(25))
    ref.add_weighted_edges_from(edges)
    pairs = [(s, d) for s in range(25) for d in range(25) if s != d]
    res = rt.shortest_paths(g, pairs)
    lengths = dict(nx.all_pairs_dijkstra_path_length(ref))
    for (s, d), pr in res.items():
        if d in lengths[s]:
            assert pr.reachable
            # the reported path really has the reported cost
            assert sum(g.weight(a, b) for a, b in zip(pr.path[:-1], pr.path[1:])) == pytest.approx(pr.cost)
            assert pr.cost == pytest.approx(lengths[s][d], rel=1e-12)
        else:
            assert not pr.reachable and pr.cost == float("inf")


def test_tie_break_is_deterministic_and_consistent():
    # square 0-1-3, 0-2-3 with equal weights: read from the destination, (3,1,0) < (3,2,0)
    g = rt.Graph.from_edges(4, [(0, 1, 1.0), (1, 3, 1.0), (0, 2, 1.0), (2, 3, 1.0)])
    assert rt.shortest_paths(g, [(0, 3)])[(0, 3)].path == (0, 1, 3)
    # equal-cost unit grid: every pair toward one destination agrees on next hops
    edges = _random_graph(5, 20, p=0.35, integer=True)
    g = rt.Graph.from_edges(20, edges)
    pairs = [(s, 0) for s in range(1, 20)]
    table = rt.build_routing_tables(rt.shortest_paths(g, pairs), T0)
    for s, d in pairs:
        assert table.walk(s, d) == table.paths[(s, d)]


def test_metrics():
    i, j = np.array([0, 1, 0]), np.array([1, 2, 2])
    lat = np.array([1.0, 1.0, 5.0])
    cap = np.array([10.0, 10.0, 1000.0])
    for metric, expect in [("latency", (0, 1, 2)), ("inverse_capacity", (0, 2)), ("hop_count", (0, 2))]:
        g = rt.build_graph(3, i, j, lat, cap, metric)
        assert rt.shortest_paths(g, [(0, 2)])[(0, 2)].path == expect


def test_zero_capacity_link_excluded_from_inverse_capacity():
    g = rt.build_graph(2, np.array([0]), np.array([1]), np.array([1.0]), np.array([0.0]), "inverse_capacity")
    assert not rt.shortest_paths(g, [(0, 1)])[(0, 1)].reachable


def test_inconsistent_paths_rejected():
    # node 1 would forward toward 3 both directly and via 2
    with pytest.raises(rt.RoutingError):
        rt.build_routing_tables({(0, 3): (0, 1, 3), (5, 3): (5, 1, 2, 3)})


def test_all_pairs_tables_cover_every_destination():
    g = rt.Graph.from_edges(4, [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)])
    t = rt.all_pairs_tables(g, [(0, 3)])
    assert len(t.entries()) == 12
    assert t.paths[(0, 3)] == (0, 1, 2, 3)


def test_node_address():
    assert rt.node_address(0) == "10.0.0.1"
    assert rt.node_address(300) == "10.1.44.1"


def test_route_export_matches_golden(tmp_path):
    g = rt.Graph.from_edges(301, [(0, 1, 1.0), (1, 2, 1.0), (2, 300, 1.0)])
    table = rt.build_routing_tables(rt.shortest_paths(g, [(0, 300), (300, 0)]), T0)
    path = rt.export_route_commands(table, T0, tmp_path)
    assert Path(path).name == "routes_1704067200000.cmd"
    assert Path(path).read_bytes() == (DATA / "routes_1704067200000.cmd").read_bytes()
