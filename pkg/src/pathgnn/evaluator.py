"""Path Accuracy, generalisation sweeps, rerouting, and inference timing."""

from __future__ import annotations

import csv
import statistics
import time
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .datagen import PERTURB_MODES, Sample, assign_weights, gen_structure, perturb_many
from .graph import Graph
from .model import ModelConfig, ModelParams, Predictions, predict, predict_many
from .oracle import dijkstra

THRESHOLD = 0.5


@dataclass
class EvalReport:
    path_accuracy: float
    total: int
    correct: int
    by_nodes: dict[int, tuple[int, int]] = field(default_factory=dict)
    by_hops: dict[int, tuple[int, int]] = field(default_factory=dict)
    by_perturbation: dict[str, tuple[int, int]] = field(default_factory=dict)

    @staticmethod
    def _acc(bucket: dict) -> dict:
        return {k: c / n for k, (c, n) in sorted(bucket.items())}

    def accuracy_by_nodes(self) -> dict[int, float]:
        return self._acc(self.by_nodes)

    def accuracy_by_hops(self) -> dict[int, float]:
        return self._acc(self.by_hops)

    def accuracy_by_perturbation(self) -> dict[str, float]:
        return self._acc(self.by_perturbation)

    def rows(self) -> list[tuple[str, str, int, int, float]]:
        out = [("all", "all", self.correct, self.total, self.path_accuracy)]
        for kind, bucket in (("nodes", self.by_nodes), ("hops", self.by_hops),
                             ("perturbation", self.by_perturbation)):
            for key, (c, n) in sorted(bucket.items(), key=lambda kv: str(kv[0])):
                out.append((kind, str(key), c, n, c / n))
        return out


def sample_correct(pred: Predictions, sample: Sample) -> bool:
    """All-or-nothing: every node and every edge classified correctly."""
    nodes = (pred.node_probs >= THRESHOLD).astype(int)
    edges = (pred.edge_probs >= THRESHOLD).astype(int)
    return bool(np.array_equal(nodes, sample.labels.node_labels)
                and np.array_equal(edges, sample.labels.edge_labels))


def score_predictions(preds: Sequence[Predictions], samples: Sequence[Sample]) -> EvalReport:
    if not samples:
        raise ValueError("cannot evaluate an empty split")
    if len(preds) != len(samples):
        raise ValueError(f"{len(preds)} predictions for {len(samples)} samples")
    by_nodes: dict = defaultdict(lambda: [0, 0])
    by_hops: dict = defaultdict(lambda: [0, 0])
    by_pert: dict = defaultdict(lambda: [0, 0])
    correct = 0
    for pred, s in zip(preds, samples):
        ok = sample_correct(pred, s)
        correct += ok
        hops = sum(s.labels.edge_labels)
        for bucket, key in ((by_nodes, s.graph.n_nodes), (by_hops, hops),
                            (by_pert, s.perturbation or "none")):
            bucket[key][0] += ok
            bucket[key][1] += 1
    freeze = lambda b: {k: (c, n) for k, (c, n) in b.items()}
    return EvalReport(correct / len(samples), len(samples), correct,
                      freeze(by_nodes), freeze(by_hops), freeze(by_pert))


def path_accuracy(params: ModelParams, cfg: ModelConfig, samples: Sequence[Sample]) -> EvalReport:
    if not samples:
        raise ValueError("cannot evaluate an empty split")
    preds = predict_many([s.graph for s in samples], params, cfg)
    return score_predictions(preds, samples)


def oracle_predictions(samples: Iterable[Sample]) -> list[Predictions]:
    """Labels fed back as probabilities: the perfect predictor."""
    return [Predictions(s.labels.nodes.copy(), s.labels.edges.copy()) for s in samples]


# --- sweeps -----------------------------------------------------------------

def node_count_sweep(params: ModelParams, cfg: ModelConfig, samples: Sequence[Sample],
                     buckets: Sequence[tuple[int, int]] | None = None) -> dict[tuple[int, int], tuple[float, int]]:
    """Path Accuracy per node-count range ``(lo, hi)`` inclusive -> ``(accuracy, count)``."""
    report = path_accuracy(params, cfg, samples)
    if buckets is None:
        buckets = [(n, n) for n in sorted(report.by_nodes)]
    out = {}
    for lo, hi in buckets:
        c = sum(report.by_nodes[n][0] for n in report.by_nodes if lo <= n <= hi)
        t = sum(report.by_nodes[n][1] for n in report.by_nodes if lo <= n <= hi)
        if t:
            out[(lo, hi)] = (c / t, t)
    return out


def rerouting_eval(params: ModelParams, cfg: ModelConfig, samples: Sequence[Sample],
                   mode: str | None = None, seed: int = 0) -> EvalReport:
    """Perturb every sample (cycling through modes unless one is given) and score."""
    modes = [mode] if mode else list(PERTURB_MODES)
    perturbed: list[Sample] = []
    for k, m in enumerate(modes):
        perturbed += perturb_many(samples[k::len(modes)], m, seed + k)
    return path_accuracy(params, cfg, perturbed)


# --- path decoding ----------------------------------------------------------

@dataclass(frozen=True)
class DecodedPath:
    path: tuple[int, ...] | None
    failure: str | None = None

    @property
    def ok(self) -> bool:
        return self.failure is None


def decode_path(pred: Predictions, g: Graph) -> DecodedPath:
    """Read a source->destination path off thresholded edge predictions.

    Fails with ``disconnected`` (edges do not join the terminals),
    ``branching`` (a node has more than two chosen edges, or a cycle), or
    ``node-edge mismatch`` (chosen nodes differ from the path's nodes).
    """
    chosen = [k for k in range(g.n_edges) if pred.edge_probs[k] >= THRESHOLD]
    adj: dict[int, list[int]] = defaultdict(list)
    for k in chosen:
        u, v, _ = g.edges[k]
        adj[u].append(v)
        adj[v].append(u)
    if any(len(nb) > 2 for nb in adj.values()):
        return DecodedPath(None, "branching")
    s, t = g.source, g.destination
    if len(adj[s]) != 1 or len(adj[t]) != 1:
        # A terminal inside a cycle or a chain leaving past it.
        if len(adj[s]) > 1 or len(adj[t]) > 1:
            return DecodedPath(None, "branching")
        return DecodedPath(None, "disconnected")
    path, prev = [s], -1
    while path[-1] != t:
        nxt = [x for x in adj[path[-1]] if x != prev]
        if not nxt:
            return DecodedPath(None, "disconnected")
        prev = path[-1]
        path.append(nxt[0])
        if len(path) > g.n_nodes:
            return DecodedPath(None, "branching")
    if len(path) - 1 != len(chosen):
        # Extra chosen edges off the path: a detached cycle or segment.
        leftover_cycle = all(len(adj[x]) == 2 for x in adj if x not in path)
        return DecodedPath(None, "branching" if leftover_cycle else "disconnected")
    on = {i for i in range(g.n_nodes) if pred.node_probs[i] >= THRESHOLD}
    if on != set(path):
        return DecodedPath(None, "node-edge mismatch")
    return DecodedPath(tuple(path))


# --- timing -----------------------------------------------------------------

@dataclass
class TimingReport:
    hops: list[int]
    model_seconds: list[float]
    oracle_seconds: list[float]
    counts: list[int]

    @property
    def model_relative(self) -> list[float]:
        return [x / self.model_seconds[0] for x in self.model_seconds]

    @property
    def oracle_relative(self) -> list[float]:
        return [x / self.oracle_seconds[0] for x in self.oracle_seconds]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["hops", "count", "model_seconds", "oracle_seconds",
                        "model_relative", "oracle_relative"])
            for row in zip(self.hops, self.counts, self.model_seconds, self.oracle_seconds,
                           self.model_relative, self.oracle_relative):
                w.writerow(row)


def _median_time(fn: Callable[[], object], reps: int) -> float:
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def graphs_by_hop_count(
    n_nodes: int,
    hops: Sequence[int],
    per_bucket: int,
    seed: int = 0,
    extra_edge_factor: float = 1.0,
    weight_range: tuple[float, float] = (1.0, 10.0),
    max_draws: int = 200_000,
) -> dict[int, list[Graph]]:
    """Random graphs of one size, binned by optimal-path hop count.

    Every graph has the same node and edge count, so buckets differ only in
    where the terminals sit relative to each other.
    """
    rng = np.random.default_rng(seed)
    wanted = set(hops)
    out: dict[int, list[Graph]] = {h: [] for h in sorted(wanted)}
    for _ in range(max_draws):
        if all(len(v) >= per_bucket for v in out.values()):
            return out
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            topo = gen_structure(rng, n_nodes, extra_edge_factor)
        g, labels, _ = assign_weights(rng, topo, n_nodes, weight_range)
        h = len(labels.path) - 1
        if h in wanted and len(out[h]) < per_bucket:
            out[h].append(g)
    short = {h: len(v) for h, v in out.items() if len(v) < per_bucket}
    raise ValueError(f"could not fill hop buckets {short} in {max_draws} draws at n={n_nodes}")


def timing_benchmark(
    params: ModelParams,
    cfg: ModelConfig,
    graphs_by_hops: dict[int, Sequence[Graph]],
    reps: int = 10,
    warmup: int = 3,
    min_per_bucket: int = 50,
    seed: int = 0,
) -> TimingReport:
    """Median wall-clock per graph, averaged per hop bucket.

    Graphs from all buckets are measured in one shuffled order so that slow
    drift of the machine does not masquerade as a hop effect.
    """
    hops = sorted(graphs_by_hops)
    if not hops or hops[0] != 1:
        raise ValueError("timing needs a 1-hop bucket to normalise against")
    for h in hops:
        if len(graphs_by_hops[h]) < min_per_bucket:
            raise ValueError(f"hop bucket {h} has {len(graphs_by_hops[h])} graphs, need {min_per_bucket}")
    if reps < 1:
        raise ValueError("reps must be >= 1")
    jobs = [(h, g) for h in hops for g in graphs_by_hops[h]]
    for _, g in jobs[:warmup]:
        predict(g, params, cfg)
        dijkstra(g)
    order = np.random.default_rng(seed).permutation(len(jobs))
    model_t: dict[int, list[float]] = defaultdict(list)
    oracle_t: dict[int, list[float]] = defaultdict(list)
    for k in order:
        h, g = jobs[k]
        model_t[h].append(_median_time(lambda: predict(g, params, cfg), reps))
        oracle_t[h].append(_median_time(lambda: dijkstra(g), reps))
    return TimingReport(
        hops=hops,
        model_seconds=[float(np.mean(model_t[h])) for h in hops],
        oracle_seconds=[float(np.mean(oracle_t[h])) for h in hops],
        counts=[len(graphs_by_hops[h]) for h in hops],
    )


def write_report_csv(report: EvalReport, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["bucket", "key", "correct", "total", "accuracy"])
        for row in report.rows():
            w.writerow(row)


def summary(report: EvalReport) -> str:
    lines = [f"Path Accuracy {report.path_accuracy:.4f} ({report.correct}/{report.total})"]
    for title, acc in (("by nodes", report.accuracy_by_nodes()),
                       ("by hops", report.accuracy_by_hops()),
                       ("by perturbation", report.accuracy_by_perturbation())):
        if acc:
            lines.append(f"  {title}: " + ", ".join(f"{k}={v:.3f}" for k, v in acc.items()))
    return "\n".join(lines)
