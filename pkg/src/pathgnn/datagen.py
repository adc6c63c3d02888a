"""Synthetic shortest-path datasets.

A structure is a random connected topology: a uniform random labelled spanning
tree (via a Prüfer sequence) plus extra distinct non-tree edges. Each structure
gets several weight samplings; every sampling draws its own terminals and real
edge weights, and is labelled by Dijkstra. Weights are redrawn until the
optimal path is unique so every target is well defined.

Randomness is split per structure from the master seed, so the output does not
depend on how many worker threads are used.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .graph import (
    Graph,
    GraphError,
    build_graph,
    graph_from_record,
    graph_to_record,
    read_records,
    remove_edge,
    remove_node,
    write_records,
)
from .oracle import PathLabels, dijkstra, labels_from_path

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
MAX_WEIGHT_ATTEMPTS = 100
MAX_PERTURB_ATTEMPTS = 20
MAX_TOPOLOGY_REDRAWS = 50
PERTURB_MODES = ("remove-optimal-edge", "remove-random-edge", "remove-random-nonterminal-node")


class DiscardedSample(RuntimeError):
    """A structure or perturbation could not yield a uniquely labelled sample."""


@dataclass(frozen=True)
class DatasetConfig:
    n_structures: int = 10000
    weight_samplings_per_structure: int = 10
    node_range: tuple[int, int] = (3, 30)
    extra_edge_factor: float = 1.0
    weight_range: tuple[float, float] = (1.0, 10.0)
    split: tuple[float, float, float] = (0.7, 0.15, 0.15)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "node_range", tuple(int(x) for x in self.node_range))
        object.__setattr__(self, "weight_range", tuple(float(x) for x in self.weight_range))
        object.__setattr__(self, "split", tuple(float(x) for x in self.split))
        lo, hi = self.node_range
        if lo < 3 or hi < lo:
            raise ValueError(f"node_range must satisfy 3 <= min <= max, got {self.node_range}")
        if not 0 < self.weight_range[0] <= self.weight_range[1]:
            raise ValueError(f"weight_range must satisfy 0 < low <= high, got {self.weight_range}")
        if len(self.split) != 3 or any(f < 0 for f in self.split) or abs(sum(self.split) - 1) > 1e-12:
            raise ValueError(f"split fractions must be non-negative and sum to 1, got {self.split}")
        if self.n_structures < 1 or self.weight_samplings_per_structure < 1:
            raise ValueError("n_structures and weight_samplings_per_structure must be >= 1")
        if self.extra_edge_factor < 0:
            raise ValueError(f"extra_edge_factor must be >= 0, got {self.extra_edge_factor}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> DatasetConfig:
        return cls(**d)


def full_config(seed: int = 0) -> DatasetConfig:
    """Full-size protocol: 10000 structures of up to 30 nodes, 10 weightings each."""
    return DatasetConfig(n_structures=10000, weight_samplings_per_structure=10,
                         node_range=(3, 30), seed=seed)


def desk_config(seed: int = 7) -> DatasetConfig:
    """Laptop-scale protocol: 2000 structures of 5-15 nodes, 5 weightings each."""
    return DatasetConfig(n_structures=2000, weight_samplings_per_structure=5,
                         node_range=(5, 15), seed=seed)


@dataclass
class Sample:
    graph: Graph
    labels: PathLabels
    structure: int = -1
    variant: int = 0
    perturbation: str | None = None

    def to_record(self) -> dict:
        meta = {"structure": self.structure, "variant": self.variant, "cost": self.labels.cost}
        if self.perturbation:
            meta["perturbation"] = self.perturbation
        return graph_to_record(self.graph, self.labels, meta)

    @classmethod
    def from_record(cls, rec: dict, verify: bool = True) -> Sample:
        g, raw, meta = graph_from_record(rec)
        r = dijkstra(g)
        if raw is None:
            if not r.found:
                raise GraphError("record has no labels and no source->destination path")
            labels = labels_from_path(g, r)
        else:
            labels = labels_from_path(g, r) if r.found else None
            stored = PathLabels(tuple(raw[0]), tuple(raw[1]))
            if labels is None or (verify and labels != stored):
                raise GraphError("stored labels disagree with the oracle")
        return cls(g, labels, int(meta.get("structure", -1)), int(meta.get("variant", 0)),
                   meta.get("perturbation"))


@dataclass
class Dataset:
    config: DatasetConfig | None
    splits: dict[str, list[Sample]] = field(default_factory=dict)

    @property
    def samples(self) -> list[Sample]:
        return [s for name in SPLITS for s in self.splits.get(name, [])]

    def __getitem__(self, split: str) -> list[Sample]:
        return self.splits[split]

    def counts(self) -> dict[str, int]:
        return {name: len(self.splits.get(name, [])) for name in SPLITS}


# --- structures -------------------------------------------------------------

def random_tree(rng: np.random.Generator, n: int) -> list[tuple[int, int]]:
    """Uniform random labelled tree on ``n`` nodes, decoded from a Prüfer sequence."""
    if n == 2:
        return [(0, 1)]
    seq = rng.integers(0, n, size=n - 2).tolist()
    degree = [1] * n
    for x in seq:
        degree[x] += 1
    leaves = [i for i in range(n) if degree[i] == 1]
    heapq.heapify(leaves)
    edges = []
    for x in seq:
        leaf = heapq.heappop(leaves)
        edges.append((min(leaf, x), max(leaf, x)))
        degree[x] -= 1
        if degree[x] == 1:
            heapq.heappush(leaves, x)
    a, b = heapq.heappop(leaves), heapq.heappop(leaves)
    edges.append((a, b))
    return edges


def gen_structure(rng: np.random.Generator, n: int, extra_edge_factor: float) -> list[tuple[int, int]]:
    """Connected topology: spanning tree plus ``floor(f*n)`` uniformly chosen extra edges."""
    if n < 3:
        raise ValueError(f"structures need at least 3 nodes, got {n}")
    tree = random_tree(rng, n)
    wanted = int(math.floor(extra_edge_factor * n))
    in_tree = set(tree)
    pool = [(u, v) for u in range(n) for v in range(u + 1, n) if (u, v) not in in_tree]
    if wanted > len(pool):
        warnings.warn(f"{wanted} extra edges requested on {n} nodes; clamped to {len(pool)}",
                      stacklevel=2)
        wanted = len(pool)
    picks = rng.choice(len(pool), size=wanted, replace=False) if wanted else []
    return tree + [pool[k] for k in sorted(picks)]


def assign_weights(
    rng: np.random.Generator,
    topology: Sequence[tuple[int, int]],
    n: int,
    weight_range: tuple[float, float],
    source: int | None = None,
    destination: int | None = None,
) -> tuple[Graph, PathLabels, int]:
    """Draw terminals (unless given) and i.i.d. uniform weights until the optimum is unique.

    Returns ``(graph, labels, redraws)``; ``redraws`` counts rejected weightings.
    """
    if source is None or destination is None:
        source, destination = (int(x) for x in rng.choice(n, size=2, replace=False))
    lo, hi = weight_range
    for attempt in range(MAX_WEIGHT_ATTEMPTS):
        w = rng.uniform(lo, hi, size=len(topology))
        g = build_graph(n, [(u, v, x) for (u, v), x in zip(topology, w)], source, destination)
        r = dijkstra(g)
        if not r.found:
            raise GraphError("topology does not connect the terminals")
        if r.unique:
            return g, labels_from_path(g, r), attempt
    raise DiscardedSample(
        f"no unique optimum after {MAX_WEIGHT_ATTEMPTS} weightings (n={n}, {len(topology)} edges)"
    )


# --- datasets ---------------------------------------------------------------

def split_counts(n: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of ``n`` items; ties go to the later split."""
    quotas = [n * f for f in fractions]
    counts = [int(math.floor(q)) for q in quotas]
    order = sorted(range(len(fractions)), key=lambda k: (quotas[k] - counts[k], k), reverse=True)
    for k in order[: n - sum(counts)]:
        counts[k] += 1
    return counts


def _structure_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _draw_structures(cfg: DatasetConfig, rngs, threads: int) -> list[tuple[int, list]]:
    lo, hi = cfg.node_range

    def draw(rng):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            n = int(rng.integers(lo, hi + 1))
            return n, gen_structure(rng, n, cfg.extra_edge_factor)

    with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
        first = list(pool.map(draw, rngs))

    # Identical labelled topologies would leak across splits; redraw duplicates
    # in structure order, falling back to a fresh node count.
    seen: set = set()
    out = []
    for k, (n, topo) in enumerate(first):
        key = (n, tuple(sorted(topo)))
        redraws = 0
        while key in seen and redraws < 2 * MAX_TOPOLOGY_REDRAWS:
            if redraws >= MAX_TOPOLOGY_REDRAWS:
                n, topo = draw(rngs[k])
            else:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    topo = gen_structure(rngs[k], n, cfg.extra_edge_factor)
            key = (n, tuple(sorted(topo)))
            redraws += 1
        if key in seen:
            raise DiscardedSample(f"could not draw a new topology for structure {k}")
        seen.add(key)
        out.append((n, topo))
    return out


def gen_dataset(cfg: DatasetConfig, threads: int = 1) -> Dataset:
    """Generate all splits. Splits are assigned per structure, so weight variants never straddle splits."""
    rngs = _structure_rngs(cfg.seed, cfg.n_structures)
    structures = _draw_structures(cfg, rngs, threads)

    def weigh(k: int) -> list[Sample]:
        n, topo = structures[k]
        out = []
        for v in range(cfg.weight_samplings_per_structure):
            try:
                g, labels, _ = assign_weights(rngs[k], topo, n, cfg.weight_range)
            except DiscardedSample as exc:
                log.warning("structure %d variant %d discarded: %s", k, v, exc)
                continue
            out.append(Sample(g, labels, structure=k, variant=v))
        return out

    with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
        per_structure = list(pool.map(weigh, range(cfg.n_structures)))

    order = np.random.default_rng(cfg.seed).permutation(cfg.n_structures)
    counts = split_counts(cfg.n_structures, cfg.split)
    splits: dict[str, list[Sample]] = {}
    start = 0
    for name, c in zip(SPLITS, counts):
        chosen = sorted(int(k) for k in order[start:start + c])
        splits[name] = [s for k in chosen for s in per_structure[k]]
        start += c
    return Dataset(cfg, splits)


# --- perturbations ----------------------------------------------------------

def perturb(sample: Sample, mode: str, rng: np.random.Generator) -> Sample:
    """Remove an edge or node and relabel with the oracle.

    Raises :class:`DiscardedSample` when no attempt keeps the destination
    reachable with a unique optimum.
    """
    if mode not in PERTURB_MODES:
        raise ValueError(f"unknown perturbation mode {mode!r}; expected one of {PERTURB_MODES}")
    g = sample.graph
    for _ in range(MAX_PERTURB_ATTEMPTS):
        if mode == "remove-optimal-edge":
            path = sample.labels.path or dijkstra(g).path
            k = int(rng.integers(len(path) - 1))
            h = remove_edge(g, path[k], path[k + 1])
        elif mode == "remove-random-edge":
            u, v, _ = g.edges[int(rng.integers(g.n_edges))]
            h = remove_edge(g, u, v)
        else:
            candidates = [i for i in range(g.n_nodes) if i not in (g.source, g.destination)]
            if not candidates:
                break
            h, _ = remove_node(g, candidates[int(rng.integers(len(candidates)))])
        if h.disconnected:
            continue
        r = dijkstra(h)
        if not r.unique:
            continue
        return Sample(h, labels_from_path(h, r), sample.structure, sample.variant, mode)
    raise DiscardedSample(f"{mode}: no reachable, uniquely labelled result "
                          f"in {MAX_PERTURB_ATTEMPTS} attempts")


def perturb_many(samples: Iterable[Sample], mode: str, seed: int) -> list[Sample]:
    rng = np.random.default_rng(seed)
    out = []
    for s in samples:
        try:
            out.append(perturb(s, mode, rng))
        except DiscardedSample as exc:
            log.info("skipped sample: %s", exc)
    return out


def testgen(
    n_structures: int = 300,
    node_range: tuple[int, int] = (3, 50),
    samplings: int = 2,
    perturbed_fraction: float = 0.3,
    extra_edge_factor: float = 1.0,
    seed: int = 11,
) -> list[Sample]:
    """Test-only set spanning node counts beyond training, with perturbed variants."""
    cfg = DatasetConfig(n_structures=n_structures, weight_samplings_per_structure=samplings,
                        node_range=node_range, extra_edge_factor=extra_edge_factor,
                        split=(0.0, 0.0, 1.0), seed=seed)
    base = gen_dataset(cfg).splits["test"]
    rng = np.random.default_rng(seed + 1)
    out = []
    for s in base:
        out.append(s)
        if rng.random() < perturbed_fraction:
            mode = PERTURB_MODES[int(rng.integers(len(PERTURB_MODES)))]
            try:
                out.append(perturb(s, mode, rng))
            except DiscardedSample:
                pass
    return out


def fixed_nodes_config(base: DatasetConfig, n: int) -> DatasetConfig:
    """Ablation: variable structures but a single node count."""
    return replace(base, node_range=(n, n))


def fixed_structure_dataset(base: DatasetConfig, n: int) -> Dataset:
    """Ablation: one topology on ``n`` nodes; only terminals and weights vary."""
    rng = np.random.default_rng(base.seed)
    topo = gen_structure(rng, n, base.extra_edge_factor)
    total = base.n_structures * base.weight_samplings_per_structure
    samples = []
    for k in range(total):
        try:
            g, labels, _ = assign_weights(rng, topo, n, base.weight_range)
        except DiscardedSample:
            continue
        samples.append(Sample(g, labels, structure=0, variant=k))
    counts = split_counts(len(samples), base.split)
    splits, start = {}, 0
    for name, c in zip(SPLITS, counts):
        splits[name] = samples[start:start + c]
        start += c
    return Dataset(replace(base, node_range=(n, n)), splits)


# --- files ------------------------------------------------------------------

def config_hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]


def save_dataset(ds: Dataset, out_dir) -> Path:
    """Write ``<split>.jsonl`` per split and ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for name in SPLITS:
        if name in ds.splits:
            write_records(out / f"{name}.jsonl", (s.to_record() for s in ds.splits[name]))
            files[name] = f"{name}.jsonl"
    manifest = {
        "format": "v1",
        "config": ds.config.to_dict() if ds.config else None,
        "seed": ds.config.seed if ds.config else None,
        "counts": ds.counts(),
        "files": files,
    }
    if ds.config:
        manifest["config_hash"] = config_hash(ds.config.to_dict())
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def load_samples(path, verify: bool = True) -> list[Sample]:
    return [Sample.from_record(r, verify) for r in read_records(path)]


def load_dataset(directory, verify: bool = True) -> Dataset:
    d = Path(directory)
    manifest_path = d / "manifest.json"
    cfg = None
    files = {name: f"{name}.jsonl" for name in SPLITS}
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("config"):
            cfg = DatasetConfig.from_dict(manifest["config"])
        files = manifest.get("files", files)
    splits = {name: load_samples(d / f, verify) for name, f in files.items() if (d / f).exists()}
    if not splits:
        raise FileNotFoundError(f"no split files found in {d}")
    return Dataset(cfg, splits)
