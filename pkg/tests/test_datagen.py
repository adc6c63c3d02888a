import json
import warnings

import numpy as np
import pytest

from pathgnn.datagen import (
    DatasetConfig,
    DiscardedSample,
    PERTURB_MODES,
    Sample,
    assign_weights,
    desk_config,
    fixed_nodes_config,
    fixed_structure_dataset,
    gen_dataset,
    gen_structure,
    load_dataset,
    full_config,
    perturb,
    perturb_many,
    random_tree,
    save_dataset,
    split_counts,
)
from pathgnn.datagen import testgen as make_testgen
from pathgnn.graph import GraphError, build_graph
from pathgnn.oracle import dijkstra, label_graph, labels_from_path


def is_connected(n, edges):
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for u, v in edges:
        parent[find(u)] = find(v)
    return len({find(i) for i in range(n)}) == 1


def test_random_tree_shapes(rng):
    for n in range(2, 12):
        t = random_tree(rng, n)
        assert len(t) == n - 1 and is_connected(n, t)


def test_random_tree_is_uniform_on_four_nodes():
    # Cayley: 16 labelled trees on 4 nodes, each should appear about equally often.
    rng = np.random.default_rng(0)
    counts = {}
    for _ in range(8000):
        key = tuple(sorted(random_tree(rng, 4)))
        counts[key] = counts.get(key, 0) + 1
    assert len(counts) == 16
    assert max(counts.values()) < 1.25 * 500 and min(counts.values()) > 0.75 * 500


def test_structure_tree_only(rng):
    topo = gen_structure(rng, 3, 0.0)
    assert len(topo) == 2 and is_connected(3, topo)


def test_structure_edge_count(rng):
    topo = gen_structure(rng, 30, 1.0)
    assert len(topo) == 59
    assert len(set(topo)) == 59
    assert all(u < v for u, v in topo)
    assert is_connected(30, topo)


def test_structure_clamps_with_warning(rng):
    with pytest.warns(UserWarning, match="clamped"):
        topo = gen_structure(rng, 4, 5.0)
    assert len(topo) == 6


def test_structure_rejects_tiny():
    with pytest.raises(ValueError):
        gen_structure(np.random.default_rng(0), 2, 1.0)


def test_structure_connectivity_and_degree():
    rng = np.random.default_rng(1)
    n, f = 10, 1.0
    degrees = []
    for _ in range(1000):
        topo = gen_structure(rng, n, f)
        assert is_connected(n, topo)
        degrees.append(2 * len(topo) / n)
    assert np.mean(degrees) == pytest.approx(2 * (n - 1 + int(f * n)) / n)


def test_assign_weights_two_nodes(rng):
    for _ in range(20):
        g, labels, _ = assign_weights(rng, [(0, 1)], 2, (1.0, 10.0))
        assert labels.path == (g.source, g.destination) if g.source == 0 else (1, 0)
        assert labels.node_labels == (1, 1) and labels.edge_labels == (1,)


def test_assign_weights_triangle_terminals_fixed(rng):
    g, labels, _ = assign_weights(rng, [(0, 1), (1, 2), (0, 2)], 3, (1.0, 10.0), 0, 2)
    assert (g.source, g.destination) == (0, 2)
    assert all(1.0 <= w <= 10.0 for *_, w in g.edges)
    assert labels == labels_from_path(g, dijkstra(g))


def test_resample_rate_below_one_percent():
    rng = np.random.default_rng(2)
    redraws = 0
    for _ in range(1000):
        n = int(rng.integers(5, 16))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            topo = gen_structure(rng, n, 1.0)
        redraws += assign_weights(rng, topo, n, (1.0, 10.0))[2]
    assert redraws / 1000 < 0.01


def test_assign_weights_gives_up_on_forced_ties():
    # Equal weights on a 4-cycle always tie.
    with pytest.raises(DiscardedSample):
        assign_weights(np.random.default_rng(0), [(0, 1), (1, 2), (2, 3), (0, 3)], 4, (2.0, 2.0), 0, 2)


def test_exhausted_topologies_are_reported():
    # Five nodes with nine edges leave only ten distinct labelled topologies.
    with pytest.raises(DiscardedSample, match="new topology"):
        gen_dataset(DatasetConfig(n_structures=11, weight_samplings_per_structure=1,
                                  node_range=(5, 5), seed=0))


@pytest.mark.parametrize(
    "n, fractions, expected",
    [
        (10, (0.7, 0.15, 0.15), [7, 1, 2]),
        (100, (0.7, 0.15, 0.15), [70, 15, 15]),
        (2000, (0.7, 0.15, 0.15), [1400, 300, 300]),
        (3, (0.5, 0.25, 0.25), [1, 1, 1]),
        (7, (0.0, 0.0, 1.0), [0, 0, 7]),
    ],
)
def test_split_counts(n, fractions, expected):
    assert split_counts(n, fractions) == expected
    assert sum(split_counts(n, fractions)) == n


def test_config_validation():
    with pytest.raises(ValueError, match="node_range"):
        DatasetConfig(node_range=(2, 10))
    with pytest.raises(ValueError, match="weight_range"):
        DatasetConfig(weight_range=(0.0, 1.0))
    with pytest.raises(ValueError, match="sum to 1"):
        DatasetConfig(split=(0.5, 0.3, 0.3))


def test_presets():
    assert full_config().n_structures * full_config().weight_samplings_per_structure == 100000
    assert full_config().node_range == (3, 30)
    d = desk_config()
    assert (d.n_structures, d.weight_samplings_per_structure, d.node_range) == (2000, 5, (5, 15))
    assert fixed_nodes_config(d, 10).node_range == (10, 10)


@pytest.fixture(scope="module")
def small_ds():
    return gen_dataset(DatasetConfig(n_structures=10, weight_samplings_per_structure=10,
                                     node_range=(5, 9), seed=3))


def test_small_dataset_counts(small_ds):
    structures = {name: {s.structure for s in small_ds[name]} for name in ("train", "val", "test")}
    assert [len(structures[k]) for k in ("train", "val", "test")] == [7, 1, 2]
    assert len(small_ds.samples) == 100


def test_splits_are_disjoint_by_topology():
    ds = gen_dataset(DatasetConfig(n_structures=200, weight_samplings_per_structure=2,
                                   node_range=(6, 9), seed=0))
    keys = {name: {s.graph.topology_key() for s in ds[name]} for name in ("train", "val", "test")}
    assert not keys["train"] & keys["val"]
    assert not keys["train"] & keys["test"]
    assert not keys["val"] & keys["test"]


def test_labels_verified_and_sizes_in_range(small_ds):
    for s in small_ds.samples:
        assert 5 <= s.graph.n_nodes <= 9
        assert s.labels == labels_from_path(s.graph, dijkstra(s.graph))
        assert dijkstra(s.graph).unique


def test_weight_variants_draw_own_terminals(small_ds):
    by_structure = {}
    for s in small_ds.samples:
        by_structure.setdefault(s.structure, set()).add((s.graph.source, s.graph.destination))
    assert any(len(t) > 1 for t in by_structure.values())


def test_thread_count_does_not_change_output():
    cfg = DatasetConfig(n_structures=30, weight_samplings_per_structure=3, node_range=(4, 10), seed=5)
    a, b = gen_dataset(cfg, threads=1), gen_dataset(cfg, threads=4)
    assert [s.to_record() for s in a.samples] == [s.to_record() for s in b.samples]


def test_save_is_byte_identical(tmp_path):
    cfg = DatasetConfig(n_structures=20, weight_samplings_per_structure=2, node_range=(4, 8), seed=9)
    save_dataset(gen_dataset(cfg), tmp_path / "a")
    save_dataset(gen_dataset(cfg), tmp_path / "b")
    for name in ("train.jsonl", "val.jsonl", "test.jsonl", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["seed"] == 9 and sum(manifest["counts"].values()) == 40
    loaded = load_dataset(tmp_path / "a")
    assert loaded.config == cfg
    assert [s.to_record() for s in loaded.samples] == [s.to_record() for s in gen_dataset(cfg).samples]


def test_load_rejects_tampered_labels(tmp_path):
    cfg = DatasetConfig(n_structures=5, weight_samplings_per_structure=1, node_range=(4, 6), seed=1)
    out = save_dataset(gen_dataset(cfg), tmp_path)
    lines = (out / "train.jsonl").read_text().splitlines()
    rec = json.loads(lines[0])
    rec["labels"]["nodes"] = [1 - x for x in rec["labels"]["nodes"]]
    lines[0] = json.dumps(rec)
    (out / "train.jsonl").write_text("\n".join(lines) + "\n")
    with pytest.raises(GraphError, match="disagree"):
        load_dataset(out)


# --- perturbations ----------------------------------------------------------

def as_sample(g):
    return Sample(g, label_graph(g)[1])


def test_perturb_fig3(fig3):
    s = perturb(as_sample(fig3), "remove-optimal-edge", np.random.default_rng(0))
    assert s.labels.path == (2, 0, 1, 3, 5, 4)
    assert s.labels.cost == 7.0
    assert s.perturbation == "remove-optimal-edge"


def test_perturb_two_node_graph_is_skipped():
    s = as_sample(build_graph(2, [(0, 1, 1.0)], 0, 1))
    with pytest.raises(DiscardedSample):
        perturb(s, "remove-optimal-edge", np.random.default_rng(0))
    assert perturb_many([s], "remove-optimal-edge", seed=0) == []


def test_perturb_triangle_node_removal(triangle):
    s = perturb(as_sample(triangle), "remove-random-nonterminal-node", np.random.default_rng(0))
    assert s.graph.n_nodes == 2
    assert s.labels.path == (0, 1)
    assert s.labels.node_labels == (1, 1) and s.labels.edge_labels == (1,)


def test_perturb_unknown_mode(triangle):
    with pytest.raises(ValueError, match="unknown perturbation"):
        perturb(as_sample(triangle), "shuffle", np.random.default_rng(0))


def test_perturbed_labels_validate(small_ds):
    for mode in PERTURB_MODES:
        for s in perturb_many(small_ds["test"], mode, seed=1):
            assert s.labels == labels_from_path(s.graph, dijkstra(s.graph))
            assert not s.graph.disconnected


def test_testgen_spans_sizes_and_perturbations():
    samples = make_testgen(n_structures=60, node_range=(3, 50), seed=2)
    sizes = [s.graph.n_nodes for s in samples]
    assert min(sizes) < 10 and max(sizes) > 40
    assert any(s.perturbation for s in samples)


def test_fixed_structure_dataset_single_topology():
    ds = fixed_structure_dataset(DatasetConfig(n_structures=4, weight_samplings_per_structure=5,
                                               node_range=(5, 15), seed=0), 8)
    assert len({s.graph.topology_key() for s in ds.samples}) == 1
    assert len(ds.samples) == 20
