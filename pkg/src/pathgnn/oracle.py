"""Exact shortest paths: Dijkstra for labels, exhaustive enumeration for tests."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .graph import Graph, GraphError

# Two path costs closer than this are treated as a tie.
COST_TOL = 1e-9
BRUTE_FORCE_MAX_NODES = 12


@dataclass(frozen=True)
class PathResult:
    path: tuple[int, ...]
    cost: float
    unique: bool

    @property
    def found(self) -> bool:
        return bool(self.path)

    @property
    def hops(self) -> int:
        return max(len(self.path) - 1, 0)


NO_PATH = PathResult(path=(), cost=math.inf, unique=False)


@dataclass(frozen=True)
class PathLabels:
    node_labels: tuple[int, ...]
    edge_labels: tuple[int, ...]
    path: tuple[int, ...] = ()
    cost: float = math.nan

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PathLabels):
            return NotImplemented
        return self.node_labels == other.node_labels and self.edge_labels == other.edge_labels

    def __hash__(self) -> int:
        return hash((self.node_labels, self.edge_labels))

    @property
    def nodes(self) -> np.ndarray:
        return np.asarray(self.node_labels, dtype=np.float64)

    @property
    def edges(self) -> np.ndarray:
        return np.asarray(self.edge_labels, dtype=np.float64)


def path_cost(g: Graph, path) -> float:
    """Sum of edge weights along ``path``, accumulated from the source end."""
    cost = 0.0
    for a, b in zip(path, path[1:]):
        cost += g.edges[g.edge_index(a, b)][2]
    return cost


def dijkstra(g: Graph) -> PathResult:
    """Minimum-cost source->destination path.

    Stops once every node at distance <= d(destination) is settled. Uniqueness
    is decided by counting shortest paths over tight edges
    (``|d(u) + w - d(v)| <= COST_TOL``).
    """
    s, t = g.source, g.destination
    dist = [math.inf] * g.n_nodes
    pred = [-1] * g.n_nodes
    dist[s] = 0.0
    settled_order: list[int] = []
    done = [False] * g.n_nodes
    heap = [(0.0, s)]
    while heap:
        d, i = heapq.heappop(heap)
        if done[i]:
            continue
        if d > dist[t]:
            break
        done[i] = True
        settled_order.append(i)
        for j, e in g.adjacency[i]:
            if done[j]:
                continue
            nd = d + g.edges[e][2]
            if nd < dist[j] or (nd == dist[j] and i < pred[j]):
                dist[j] = nd
                pred[j] = i
                heapq.heappush(heap, (nd, j))
    if not done[t]:
        return NO_PATH

    # Count shortest paths, capped at 2, in settlement order.
    rank = {v: k for k, v in enumerate(settled_order)}
    count = {s: 1}
    for v in settled_order[1:]:
        c = 0
        for u, e in g.adjacency[v]:
            if u in rank and rank[u] < rank[v] and abs(dist[u] + g.edges[e][2] - dist[v]) <= COST_TOL:
                c += count.get(u, 0)
        count[v] = min(c, 2)

    path = [t]
    while path[-1] != s:
        path.append(pred[path[-1]])
    path.reverse()
    return PathResult(path=tuple(path), cost=path_cost(g, path), unique=count[t] == 1)


def brute_force_shortest(g: Graph) -> PathResult:
    """Enumerate every simple source->destination path. Test oracle only."""
    if g.n_nodes > BRUTE_FORCE_MAX_NODES:
        raise GraphError(
            f"brute force limited to {BRUTE_FORCE_MAX_NODES} nodes, graph has {g.n_nodes}"
        )
    s, t = g.source, g.destination
    paths: list[tuple[float, tuple[int, ...]]] = []

    def walk(node: int, visited: list[int], on_path: list[bool]) -> None:
        if node == t:
            paths.append((path_cost(g, visited), tuple(visited)))
            return
        for j, _ in g.adjacency[node]:
            if not on_path[j]:
                on_path[j] = True
                visited.append(j)
                walk(j, visited, on_path)
                visited.pop()
                on_path[j] = False

    on_path = [False] * g.n_nodes
    on_path[s] = True
    walk(s, [s], on_path)
    if not paths:
        return NO_PATH
    best_cost, best_path = min(paths)
    n_best = sum(1 for c, _ in paths if abs(c - best_cost) <= COST_TOL)
    return PathResult(path=best_path, cost=best_cost, unique=n_best == 1)


def labels_from_path(g: Graph, r: PathResult) -> PathLabels:
    path = tuple(int(x) for x in r.path)
    if len(path) < 2 or path[0] != g.source or path[-1] != g.destination:
        raise GraphError(f"path {path} does not run from {g.source} to {g.destination}")
    if len(set(path)) != len(path):
        raise GraphError(f"path {path} repeats a node")
    nodes = [0] * g.n_nodes
    edges = [0] * g.n_edges
    for i in path:
        if not 0 <= i < g.n_nodes:
            raise GraphError(f"path node {i} out of range")
        nodes[i] = 1
    for a, b in zip(path, path[1:]):
        if not g.has_edge(a, b):
            raise GraphError(f"path {path} uses missing edge ({a}, {b})")
        edges[g.edge_index(a, b)] = 1
    return PathLabels(tuple(nodes), tuple(edges), path, path_cost(g, path))


def label_graph(g: Graph) -> tuple[PathResult, PathLabels | None]:
    """Run Dijkstra and derive labels when a path exists."""
    r = dijkstra(g)
    if not r.found:
        return r, None
    return r, labels_from_path(g, r)
