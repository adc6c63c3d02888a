import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_graph
from pathgnn.graph import (
    GraphError,
    build_graph,
    graph_from_record,
    graph_to_record,
    inverse_permutation,
    permute,
    read_records,
    remove_edge,
    remove_node,
    write_records,
)
from pathgnn.oracle import dijkstra, labels_from_path


def test_minimal_graph():
    g = build_graph(2, [(0, 1, 1.0)], 0, 1)
    assert g.n_nodes == 2
    assert g.neighbors(0) == ((1, 0),)
    assert g.neighbors(1) == ((0, 0),)
    assert g.connected and not g.disconnected


def test_fig3_instance_is_valid(fig3):
    assert fig3.n_edges == 7
    assert fig3.connected
    assert all(u < v for u, v, _ in fig3.edges)
    assert fig3.edges[0] == (0, 2, 1.0)


@pytest.mark.parametrize(
    "n, edges, s, d, fragment",
    [
        (3, [(0, 1, 1), (1, 0, 2)], 0, 2, "duplicate"),
        (3, [(0, 3, 1)], 0, 2, "out of range"),
        (3, [(0, 1, 0.0)], 0, 2, "non-positive"),
        (3, [(0, 1, -2.0)], 0, 2, "non-positive"),
        (3, [(0, 1, float("inf"))], 0, 2, "non-finite"),
        (3, [(1, 1, 1.0)], 0, 2, "self-loop"),
        (3, [(0, 1, 1.0)], 0, 0, "source and destination"),
        (3, [(0, 1, 1.0)], 0, 5, "out of range"),
    ],
)
def test_build_rejects(n, edges, s, d, fragment):
    with pytest.raises(GraphError, match=fragment):
        build_graph(n, edges, s, d)


def test_adjacency_consistent_with_edges(rng):
    for _ in range(50):
        g = random_graph(rng, int(rng.integers(3, 20)))
        for i in range(g.n_nodes):
            for j, e in g.neighbors(i):
                u, v, _ = g.edges[e]
                assert {u, v} == {i, j}
        assert sum(len(a) for a in g.adjacency) == 2 * g.n_edges


def test_remove_edge_disconnects_two_node_graph():
    g = build_graph(2, [(0, 1, 1.0)], 0, 1)
    h = remove_edge(g, 0, 1)
    assert h.disconnected
    assert h.n_edges == 0


def test_remove_edge_fig3_stays_connected(fig3):
    h = remove_edge(fig3, 2, 4)
    assert not h.disconnected
    assert h.n_edges == 6
    assert not h.has_edge(2, 4)


def test_remove_edge_twice_fails():
    g = build_graph(3, [(0, 1, 1), (1, 2, 1), (0, 2, 3)], 0, 2)
    h = remove_edge(g, 0, 1)
    with pytest.raises(GraphError, match="missing edge"):
        remove_edge(h, 0, 1)


def test_remove_node_triangle(triangle):
    h, id_map = remove_node(triangle, 1)
    assert h.n_nodes == 2
    assert h.edges == ((0, 1, 3.0),)
    assert id_map == {0: 0, 2: 1}
    assert (h.source, h.destination) == (0, 1)


def test_remove_terminal_fails(triangle):
    with pytest.raises(GraphError, match="terminal"):
        remove_node(triangle, 0)
    with pytest.raises(GraphError, match="terminal"):
        remove_node(triangle, 2)


def test_remove_node_fig3(fig3):
    h, id_map = remove_node(fig3, 5)
    assert h.n_nodes == 5
    assert id_map == {0: 0, 1: 1, 2: 2, 3: 3, 4: 4}
    assert all(5 not in (u, v) for u, v, _ in h.edges)
    assert h.n_edges == 5


def test_permute_identity_and_inverse(fig3):
    assert permute(fig3, range(6)) == fig3
    perm = [3, 5, 0, 1, 4, 2]
    back = permute(permute(fig3, perm), inverse_permutation(perm))
    assert back == fig3
    assert back.edges == fig3.edges


def test_permute_rejects_non_bijection(fig3):
    with pytest.raises(GraphError, match="bijection"):
        permute(fig3, [0, 0, 1, 2, 3, 4])
    with pytest.raises(GraphError, match="bijection"):
        permute(fig3, [0, 1, 2])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 14))
def test_permute_roundtrip_and_cost(seed, n):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n)
    perm = [int(x) for x in rng.permutation(n)]
    h = permute(g, perm)
    assert permute(h, inverse_permutation(perm)) == g
    assert h.source == perm[g.source] and h.destination == perm[g.destination]
    assert [w for *_, w in h.edges] == [w for *_, w in g.edges]
    assert dijkstra(h).cost == pytest.approx(dijkstra(g).cost, abs=1e-12)


def test_remove_then_readd_preserves_cost(rng):
    for _ in range(30):
        g = random_graph(rng, int(rng.integers(3, 12)))
        u, v, w = g.edges[int(rng.integers(g.n_edges))]
        h = remove_edge(g, u, v)
        again = build_graph(h.n_nodes, list(h.edges) + [(u, v, w)], h.source, h.destination)
        assert dijkstra(again).cost == pytest.approx(dijkstra(g).cost, abs=1e-12)


def test_record_roundtrip(tmp_path, fig3):
    labels = labels_from_path(fig3, dijkstra(fig3))
    rec = graph_to_record(fig3, labels, {"structure": 3})
    assert rec["version"] == "v1"
    g, raw, meta = graph_from_record(json.loads(json.dumps(rec)))
    assert g == fig3
    assert raw == (list(labels.node_labels), list(labels.edge_labels))
    assert meta == {"structure": 3}

    write_records(tmp_path / "g.jsonl", [rec, rec])
    assert len(read_records(tmp_path / "g.jsonl")) == 2
    (tmp_path / "one.json").write_text(json.dumps(rec, indent=2))
    assert read_records(tmp_path / "one.json") == [rec]
    (tmp_path / "arr.json").write_text(json.dumps([rec]))
    assert read_records(tmp_path / "arr.json") == [rec]


def test_record_rejects_wrong_version_and_labels(fig3):
    rec = graph_to_record(fig3)
    with pytest.raises(GraphError, match="version"):
        graph_from_record({**rec, "version": "v0"})
    with pytest.raises(GraphError, match="label lengths"):
        graph_from_record({**rec, "labels": {"nodes": [1], "edges": []}})
    with pytest.raises(GraphError, match="missing field"):
        graph_from_record({k: v for k, v in rec.items() if k != "edges"})


def test_roles_one_hot(fig3):
    z = fig3.roles()
    assert z.shape == (6, 3)
    assert np.all(z.sum(axis=1) == 1)
    assert z[:, 0].sum() == 1 and z[2, 0] == 1
    assert z[:, 1].sum() == 1 and z[4, 1] == 1
