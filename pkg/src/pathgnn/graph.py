"""Weighted undirected graphs with a designated source and destination.

Graphs are immutable. Every mutation (edge/node removal, relabelling) returns
a new :class:`Graph`. Edges are stored once, oriented ``u < v``; the adjacency
index lists each edge from both endpoints under the same edge index, so node
and edge predictions can be indexed against a single edge list.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

FORMAT_VERSION = "v1"

# Role indices of the one-hot node encoding.
SOURCE, DESTINATION, OTHER = 0, 1, 2


class GraphError(ValueError):
    """Raised when a graph cannot be built or mutated as requested."""


@dataclass(frozen=True, eq=False)
class Graph:
    n_nodes: int
    edges: tuple[tuple[int, int, float], ...]
    source: int
    destination: int
    adjacency: tuple[tuple[tuple[int, int], ...], ...] = field(repr=False)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.n_nodes == other.n_nodes
            and self.source == other.source
            and self.destination == other.destination
            and self.edges == other.edges
        )

    def __hash__(self) -> int:
        return hash((self.n_nodes, self.source, self.destination, self.edges))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def neighbors(self, i: int) -> tuple[tuple[int, int], ...]:
        """``(neighbor, edge_index)`` pairs of node ``i``."""
        return self.adjacency[i]

    def edge_index(self, u: int, v: int) -> int:
        for j, e in self.adjacency[u]:
            if j == v:
                return e
        raise GraphError(f"no edge ({u}, {v})")

    def has_edge(self, u: int, v: int) -> bool:
        return any(j == v for j, _ in self.adjacency[u])

    def reachable_from_source(self) -> set[int]:
        seen = {self.source}
        queue = deque([self.source])
        while queue:
            i = queue.popleft()
            for j, _ in self.adjacency[i]:
                if j not in seen:
                    seen.add(j)
                    queue.append(j)
        return seen

    @cached_property
    def connected(self) -> bool:
        """Every node is reachable from the source."""
        return len(self.reachable_from_source()) == self.n_nodes

    @cached_property
    def destination_reachable(self) -> bool:
        return self.destination in self.reachable_from_source()

    @property
    def disconnected(self) -> bool:
        """True when the destination can no longer be reached from the source."""
        return not self.destination_reachable

    @cached_property
    def edge_array(self) -> np.ndarray:
        """``(n_edges, 2)`` int array of endpoints."""
        if not self.edges:
            return np.zeros((0, 2), dtype=np.int64)
        return np.array([(u, v) for u, v, _ in self.edges], dtype=np.int64)

    @cached_property
    def weight_array(self) -> np.ndarray:
        return np.array([w for _, _, w in self.edges], dtype=np.float64)

    def roles(self) -> np.ndarray:
        """One-hot ``(n_nodes, 3)`` role matrix: source, destination, other."""
        z = np.zeros((self.n_nodes, 3))
        z[:, OTHER] = 1.0
        z[[self.source, self.destination], OTHER] = 0.0
        z[self.source, SOURCE] = 1.0
        z[self.destination, DESTINATION] = 1.0
        return z

    def topology_key(self) -> tuple[int, tuple[tuple[int, int], ...]]:
        """Hashable unweighted structure, independent of edge order and terminals."""
        return self.n_nodes, tuple(sorted((u, v) for u, v, _ in self.edges))

    def canonical(self) -> Graph:
        """Same graph with edges sorted by endpoint pair."""
        return build_graph(self.n_nodes, sorted(self.edges), self.source, self.destination)

    def with_terminals(self, source: int, destination: int) -> Graph:
        return build_graph(self.n_nodes, self.edges, source, destination)

    def with_weights(self, weights: Sequence[float]) -> Graph:
        if len(weights) != self.n_edges:
            raise GraphError(f"expected {self.n_edges} weights, got {len(weights)}")
        edges = [(u, v, float(w)) for (u, v, _), w in zip(self.edges, weights)]
        return build_graph(self.n_nodes, edges, self.source, self.destination)


def build_graph(
    n_nodes: int,
    edges: Iterable[Sequence[float]],
    source: int,
    destination: int,
) -> Graph:
    """Validate and index a graph.

    Edge endpoints are reoriented so that ``u < v``; the input order of the
    edges is kept and defines the edge indices.
    """
    n_nodes = int(n_nodes)
    if n_nodes < 1:
        raise GraphError(f"graph needs at least one node, got {n_nodes}")
    source, destination = int(source), int(destination)
    for name, x in (("source", source), ("destination", destination)):
        if not 0 <= x < n_nodes:
            raise GraphError(f"{name} {x} out of range for {n_nodes} nodes")
    if source == destination:
        raise GraphError(f"source and destination are both {source}")

    canon: list[tuple[int, int, float]] = []
    seen: dict[tuple[int, int], int] = {}
    adjacency: list[list[tuple[int, int]]] = [[] for _ in range(n_nodes)]
    for k, edge in enumerate(edges):
        if len(edge) != 3:
            raise GraphError(f"edge {k} must be (u, v, w), got {edge!r}")
        u, v, w = int(edge[0]), int(edge[1]), float(edge[2])
        if not (0 <= u < n_nodes and 0 <= v < n_nodes):
            raise GraphError(f"edge {k} ({u}, {v}) out of range for {n_nodes} nodes")
        if u == v:
            raise GraphError(f"edge {k} is a self-loop on node {u}")
        if not (math.isfinite(w) and w > 0):
            raise GraphError(f"edge {k} ({u}, {v}) has non-positive or non-finite weight {w}")
        if u > v:
            u, v = v, u
        if (u, v) in seen:
            raise GraphError(f"duplicate edge ({u}, {v}) at positions {seen[(u, v)]} and {k}")
        seen[(u, v)] = k
        adjacency[u].append((v, k))
        adjacency[v].append((u, k))
        canon.append((u, v, w))

    return Graph(
        n_nodes=n_nodes,
        edges=tuple(canon),
        source=source,
        destination=destination,
        adjacency=tuple(tuple(a) for a in adjacency),
    )


def remove_edge(g: Graph, u: int, v: int) -> Graph:
    """Drop edge ``(u, v)``; check ``.disconnected`` on the result."""
    if not (0 <= u < g.n_nodes and 0 <= v < g.n_nodes) or not g.has_edge(u, v):
        raise GraphError(f"cannot remove missing edge ({u}, {v})")
    k = g.edge_index(u, v)
    edges = g.edges[:k] + g.edges[k + 1:]
    return build_graph(g.n_nodes, edges, g.source, g.destination)


def remove_node(g: Graph, x: int) -> tuple[Graph, dict[int, int]]:
    """Drop node ``x`` with its incident edges and compact the remaining ids.

    Returns the new graph and the old-id -> new-id map of surviving nodes.
    """
    if not 0 <= x < g.n_nodes:
        raise GraphError(f"node {x} out of range for {g.n_nodes} nodes")
    if x in (g.source, g.destination):
        raise GraphError(f"cannot remove terminal node {x}")
    id_map = {i: (i if i < x else i - 1) for i in range(g.n_nodes) if i != x}
    edges = [(id_map[u], id_map[v], w) for u, v, w in g.edges if x not in (u, v)]
    h = build_graph(g.n_nodes - 1, edges, id_map[g.source], id_map[g.destination])
    return h, id_map


def permute(g: Graph, perm: Sequence[int]) -> Graph:
    """Relabel node ``i`` as ``perm[i]``. Edge indices are preserved."""
    perm = [int(p) for p in perm]
    if sorted(perm) != list(range(g.n_nodes)):
        raise GraphError(f"permutation {perm} is not a bijection on 0..{g.n_nodes - 1}")
    edges = [(perm[u], perm[v], w) for u, v, w in g.edges]
    return build_graph(g.n_nodes, edges, perm[g.source], perm[g.destination])


def inverse_permutation(perm: Sequence[int]) -> list[int]:
    inv = [0] * len(perm)
    for i, p in enumerate(perm):
        inv[p] = i
    return inv


# --- v1 record format -------------------------------------------------------

def graph_to_record(g: Graph, labels=None, meta: dict | None = None) -> dict:
    """Serializable ``v1`` record. ``labels`` is a :class:`PathLabels` or None."""
    rec: dict = {
        "version": FORMAT_VERSION,
        "n": g.n_nodes,
        "source": g.source,
        "destination": g.destination,
        "edges": [[u, v, w] for u, v, w in g.edges],
    }
    if labels is not None:
        rec["labels"] = {
            "nodes": [int(x) for x in labels.node_labels],
            "edges": [int(x) for x in labels.edge_labels],
        }
    if meta:
        rec["meta"] = meta
    return rec


def graph_from_record(rec: dict) -> tuple[Graph, tuple[list[int], list[int]] | None, dict]:
    """Parse a ``v1`` record into ``(graph, (node_labels, edge_labels) or None, meta)``."""
    version = rec.get("version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise GraphError(f"unsupported graph record version {version!r}")
    try:
        g = build_graph(rec["n"], rec["edges"], rec["source"], rec["destination"])
    except KeyError as exc:
        raise GraphError(f"graph record missing field {exc.args[0]!r}") from None
    labels = None
    if "labels" in rec and rec["labels"] is not None:
        nodes = [int(x) for x in rec["labels"]["nodes"]]
        edges = [int(x) for x in rec["labels"]["edges"]]
        if len(nodes) != g.n_nodes or len(edges) != g.n_edges:
            raise GraphError(
                f"label lengths ({len(nodes)}, {len(edges)}) do not match "
                f"graph ({g.n_nodes}, {g.n_edges})"
            )
        labels = (nodes, edges)
    return g, labels, dict(rec.get("meta", {}))


def dumps_record(rec: dict) -> str:
    return json.dumps(rec, separators=(",", ":"))


def read_records(path) -> list[dict]:
    """Read a file holding one JSON record, a JSON array, or JSON lines."""
    with open(path) as f:
        text = f.read()
    stripped = text.strip()
    if not stripped:
        return []
    if stripped[0] == "[":
        return list(json.loads(stripped))
    try:
        return [json.loads(stripped)]
    except json.JSONDecodeError:
        return [json.loads(line) for line in stripped.splitlines() if line.strip()]


def write_records(path, records: Iterable[dict]) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(dumps_record(rec))
            f.write("\n")
