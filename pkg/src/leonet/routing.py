"""Weighted graphs from link matrices, deterministic Dijkstra, routing tables and route export."""

from __future__ import annotations

import enum
import heapq
import os
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np


class RoutingError(RuntimeError):
    pass


class RouteMetric(str, enum.Enum):
    LATENCY = "latency"
    INVERSE_CAPACITY = "inverse_capacity"
    HOP_COUNT = "hop_count"


class Graph:
    """Undirected weighted graph as sorted adjacency lists over dense node indices."""

    def __init__(self, n_nodes: int):
        self.n_nodes = n_nodes
        self.adj: list[list[tuple[int, float]]] = [[] for _ in range(n_nodes)]

    def add_edge(self, a: int, b: int, w: float):
        if w < 0:
            raise ValueError("negative edge weight")
        self.adj[a].append((b, w))
        self.adj[b].append((a, w))

    def finalize(self):
        for lst in self.adj:
            lst.sort()
        return self

    def weight(self, a: int, b: int) -> float:
        for v, w in self.adj[a]:
            if v == b:
                return w
        raise KeyError((a, b))

    def edges(self):
        for a, lst in enumerate(self.adj):
            for b, w in lst:
                if a < b:
                    yield a, b, w

    @classmethod
    def from_edges(cls, n_nodes: int, edges) -> "Graph":
        g = cls(n_nodes)
        for a, b, w in edges:
            g.add_edge(int(a), int(b), float(w))
        return g.finalize()


def build_graph(n_nodes: int, i, j, latency, capacity, metric: RouteMetric) -> Graph:
    """Edge weights: latency (ms), 1/capacity (Mbps^-1, zero-capacity links dropped) or 1."""
    metric = RouteMetric(metric)
    g = Graph(n_nodes)
    for a, b, lat, cap in zip(np.asarray(i).tolist(), np.asarray(j).tolist(),
                              np.asarray(latency).tolist(), np.asarray(capacity).tolist()):
        if metric is RouteMetric.LATENCY:
            w = lat
        elif metric is RouteMetric.INVERSE_CAPACITY:
            if cap <= 0.0:
                continue
            w = 1.0 / cap
        else:
            w = 1.0
        g.add_edge(a, b, w)
    return g.finalize()


@dataclass(frozen=True)
class PathResult:
    path: tuple[int, ...] | None  # src ... dst, None when unreachable
    cost: float

    @property
    def reachable(self) -> bool:
        return self.path is not None

    @property
    def hops(self) -> int:
        return len(self.path) - 1 if self.path else 0


def shortest_tree(graph: Graph, root: int):
    """Dijkstra from ``root``.

    Among equal-cost paths the one whose node sequence, read from the root,
    is lexicographically smallest wins.  Returns ``(dist, parent)`` where
    ``parent[v]`` is the next node from ``v`` toward ``root``.
    """
    n = graph.n_nodes
    dist = [float("inf")] * n
    best: list[tuple | None] = [None] * n
    done = [False] * n
    parent = [-1] * n
    dist[root] = 0.0
    best[root] = (root,)
    heap = [(0.0, (root,), root)]
    while heap:
        d, path, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for v, w in graph.adj[u]:
            if done[v]:
                continue
            nd = d + w
            if nd < dist[v] or (nd == dist[v] and path + (v,) < best[v]):
                dist[v] = nd
                best[v] = path + (v,)
                parent[v] = u
                heapq.heappush(heap, (nd, best[v], v))
    return dist, parent


def _walk(parent, src: int, dst: int):
    path = [src]
    while path[-1] != dst:
        nxt = parent[path[-1]]
        if nxt < 0 or len(path) > len(parent):
            raise RoutingError(f"broken shortest-path tree walking {src}->{dst}")
        path.append(nxt)
    return tuple(path)


def shortest_paths(graph: Graph, pairs) -> dict:
    """Min-cost path for each ``(src, dst)``; unreachable pairs get ``PathResult(None, inf)``.

    Trees are rooted at destinations, so all pairs sharing a destination see
    one consistent set of next hops.
    """
    by_dst = defaultdict(list)
    for s, d in pairs:
        by_dst[d].append(s)
    out = {}
    for d in sorted(by_dst):
        dist, parent = shortest_tree(graph, d)
        for s in by_dst[d]:
            if dist[s] == float("inf"):
                out[(s, d)] = PathResult(None, float("inf"))
            else:
                out[(s, d)] = PathResult(_walk(parent, s, d), dist[s])
    return out


@dataclass
class RoutingTable:
    """Per-node next hops toward scenario destinations, plus the per-pair path cache."""

    t: datetime | None
    next_hop: dict = field(default_factory=dict)  # node -> {dst: next node}
    paths: dict = field(default_factory=dict)  # (src, dst) -> tuple | None

    def entries(self) -> dict:
        return {(u, d): n for u, tbl in self.next_hop.items() for d, n in tbl.items()}

    def walk(self, src: int, dst: int):
        path = [src]
        while path[-1] != dst:
            tbl = self.next_hop.get(path[-1], {})
            if dst not in tbl or len(path) > len(self.next_hop) + 1:
                return None
            path.append(tbl[dst])
        return tuple(path)

    def copy(self) -> "RoutingTable":
        return RoutingTable(self.t, {u: dict(t) for u, t in self.next_hop.items()}, dict(self.paths))

    def __eq__(self, other):
        return (isinstance(other, RoutingTable) and self.entries() == other.entries()
                and self.paths == other.paths)


def build_routing_tables(paths: dict, t: datetime | None = None) -> RoutingTable:
    table = RoutingTable(t)
    for (s, d), res in sorted(paths.items()):
        p = res.path if isinstance(res, PathResult) else res
        table.paths[(s, d)] = p
        if p is None:
            continue
        for u, v in zip(p[:-1], p[1:]):
            tbl = table.next_hop.setdefault(u, {})
            if tbl.get(d, v) != v:
                raise RoutingError(f"inconsistent next hop at node {u} for destination {d}")
            tbl[d] = v
    return table


def all_pairs_tables(graph: Graph, pairs=(), t: datetime | None = None) -> RoutingTable:
    """Full next-hop tables toward every node (analysis mode)."""
    table = RoutingTable(t)
    for d in range(graph.n_nodes):
        dist, parent = shortest_tree(graph, d)
        for u in range(graph.n_nodes):
            if u != d and parent[u] >= 0:
                table.next_hop.setdefault(u, {})[d] = parent[u]
    for s, d in pairs:
        table.paths[(s, d)] = table.walk(s, d)
    return table


def node_address(k: int) -> str:
    return f"10.{k // 256}.{k % 256}.1"


def route_lines(table: RoutingTable) -> list[str]:
    return [
        f"ip route replace {node_address(d)}/32 via {node_address(n)} # node {u}"
        for (u, d), n in sorted(table.entries().items())
    ]


def export_route_commands(table: RoutingTable, t: datetime, out_dir) -> str:
    """Write ``routes_<unix_millis>.cmd`` for one timestep; returns the file path."""
    os.makedirs(out_dir, exist_ok=True)
    millis = int(round(t.timestamp() * 1000))
    path = os.path.join(out_dir, f"routes_{millis}.cmd")
    lines = route_lines(table)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(line + "\n" for line in lines))
    return path
