"""Edge-aware graph attention network for on-path node/edge classification.

Each layer projects node embeddings with a shared matrix ``W``, scores every
node's closed neighbourhood with

    a . LeakyReLU([W z_i || W z_j || w_e * c_ij])

(normalised edge cost ``c_ij``, ``c_ii = 0``), softmax-normalises the scores
per receiving node and sums the attended projections, then applies LeakyReLU
and dropout. After the last layer an edge is embedded as the sum of its
endpoint embeddings, and two separate two-layer MLP heads give per-node and
per-edge probabilities of lying on the optimal path.

Several graphs are evaluated together as one disjoint union
(:class:`GraphBatch`); because every operation is local to a neighbourhood,
this gives exactly the per-graph results.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .graph import Graph

ModelParams = dict[str, np.ndarray]

CHECKPOINT_MAGIC = b"PGNNCKPT"
CHECKPOINT_VERSION = "v1"


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 8
    widths: tuple[int, ...] = (64,) * 8
    hidden: int = 32
    dropout_rate: float = 0.1
    leaky_slope: float = 0.2

    input_width = 3

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.n_layers < 1:
            raise ValueError(f"n_layers must be >= 1, got {self.n_layers}")
        if len(self.widths) != self.n_layers:
            raise ValueError(f"{self.n_layers} layers need {self.n_layers} widths, got {self.widths}")
        if min(self.widths) < 1 or self.hidden < 1:
            raise ValueError("layer and hidden widths must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    @classmethod
    def uniform(cls, n_layers: int = 8, width: int = 64, hidden: int = 32,
                dropout_rate: float = 0.1, leaky_slope: float = 0.2) -> ModelConfig:
        return cls(n_layers, (width,) * n_layers, hidden, dropout_rate, leaky_slope)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        return cls(**d)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    prev = ModelConfig.input_width
    for l, d in enumerate(cfg.widths):
        shapes[f"layer{l}.W"] = (d, prev)
        shapes[f"layer{l}.a"] = (3 * d,)
        shapes[f"layer{l}.We"] = (d,)
        prev = d
    m = cfg.hidden
    for head in ("node", "edge"):
        shapes[f"{head}.W1"] = (m, prev)
        shapes[f"{head}.b1"] = (m,)
        shapes[f"{head}.W2"] = (1, m)
        shapes[f"{head}.b2"] = (1,)
    return shapes


def _fans(name: str, shape: tuple[int, ...]) -> tuple[int, int]:
    if name.endswith(".a"):
        return shape[0], 1
    if name.endswith(".We"):
        return 1, shape[0]
    return shape[1], shape[0]


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    params: ModelParams = {}
    for name, shape in param_shapes(cfg).items():
        if ".b" in name:
            params[name] = np.zeros(shape)
        else:
            fan_in, fan_out = _fans(name, shape)
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


@dataclass
class GraphBatch:
    """Disjoint union of graphs with the index arrays the layers consume.

    Attention arcs run ``neighbor -> target`` over every node's closed
    neighbourhood (self-arc first) and are sorted by target.
    """

    graphs: list[Graph]
    node_offsets: np.ndarray
    edge_offsets: np.ndarray
    roles: np.ndarray
    edge_ends: np.ndarray          # (E, 2) global node ids
    arc_target: np.ndarray         # receiving node of each attention arc
    arc_neighbor: np.ndarray       # sending node (self for the self-arc)
    arc_cost: np.ndarray           # normalised edge cost, 0 for self-arcs
    targets: ad.Segments = field(repr=False)
    neighbors: ad.Segments = field(repr=False)
    edge_u: ad.Segments = field(repr=False)
    edge_v: ad.Segments = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return int(self.node_offsets[-1])

    @property
    def n_edges(self) -> int:
        return int(self.edge_offsets[-1])

    @classmethod
    def from_graphs(cls, graphs: Sequence[Graph]) -> GraphBatch:
        graphs = list(graphs)
        n = np.array([g.n_nodes for g in graphs])
        m = np.array([g.n_edges for g in graphs])
        node_off = np.concatenate([[0], np.cumsum(n)])
        edge_off = np.concatenate([[0], np.cumsum(m)])
        roles, ends, costs = [], [], []
        for g, off in zip(graphs, node_off[:-1]):
            roles.append(g.roles())
            ends.append(g.edge_array + off)
            w = g.weight_array
            costs.append(w / w.max() if w.size else w)
        roles = np.concatenate(roles)
        ends = np.concatenate(ends).reshape(-1, 2).astype(np.int64)
        cost = np.concatenate(costs)
        total = int(node_off[-1])
        selfs = np.arange(total)
        target = np.concatenate([selfs, ends[:, 0], ends[:, 1]])
        neighbor = np.concatenate([selfs, ends[:, 1], ends[:, 0]])
        arc_cost = np.concatenate([np.zeros(total), cost, cost])
        order = np.argsort(target, kind="stable")
        target, neighbor, arc_cost = target[order], neighbor[order], arc_cost[order]
        return cls(
            graphs=graphs,
            node_offsets=node_off,
            edge_offsets=edge_off,
            roles=roles,
            edge_ends=ends,
            arc_target=target,
            arc_neighbor=neighbor,
            arc_cost=arc_cost,
            targets=ad.Segments(target, total),
            neighbors=ad.Segments(neighbor, total),
            edge_u=ad.Segments(ends[:, 0], total),
            edge_v=ad.Segments(ends[:, 1], total),
        )

    def split_nodes(self, x: np.ndarray) -> list[np.ndarray]:
        return [x[a:b] for a, b in zip(self.node_offsets[:-1], self.node_offsets[1:])]

    def split_edges(self, x: np.ndarray) -> list[np.ndarray]:
        return [x[a:b] for a, b in zip(self.edge_offsets[:-1], self.edge_offsets[1:])]

    def arcs_of(self, i: int) -> np.ndarray:
        """Arc positions whose target is global node ``i``."""
        return np.flatnonzero(self.arc_target == i)


@dataclass
class Predictions:
    node_probs: np.ndarray
    edge_probs: np.ndarray


@dataclass
class Forward:
    """Tensors of one forward pass; ``attention`` and ``embeddings`` per layer."""

    tape: ad.Tape
    params: dict[str, ad.Tensor]
    node_probs: ad.Tensor
    edge_probs: ad.Tensor
    attention: list[np.ndarray]
    embeddings: list[np.ndarray]
    edge_embeddings: np.ndarray


def attention_layer(
    l: int, z: ad.Tensor, batch: GraphBatch, p: dict[str, ad.Tensor], cfg: ModelConfig
) -> tuple[ad.Tensor, ad.Tensor]:
    """Attention coefficients of layer ``l`` per arc; returns ``(alpha, W z)``.

    The LeakyReLU acts elementwise on ``[W z_i || W z_j || h_ij]``, so the score
    splits into a receiver part, a sender part and an edge part. Each part is
    computed once per node (or arc) and gathered onto the arcs.
    """
    tape = z.tape
    d = cfg.widths[l]
    slope = cfg.leaky_slope
    proj = ad.matvec(z, p[f"layer{l}.W"])
    act = ad.leaky_relu(proj, slope)
    a = ad.reshape(p[f"layer{l}.a"], (3, d))
    a_recv, a_send, a_edge = (ad.gather(a, np.array([k])) for k in range(3))
    cost = tape.constant(batch.arc_cost[:, None])
    h = ad.matvec(cost, ad.reshape(p[f"layer{l}.We"], (d, 1)))
    score = ad.add(
        ad.add(ad.gather(ad.matvec(act, a_recv), batch.targets),
               ad.gather(ad.matvec(act, a_send), batch.neighbors)),
        ad.matvec(ad.leaky_relu(h, slope), a_edge),
    )
    alpha = ad.neighbor_softmax(ad.reshape(score, (score.shape[0],)), batch.targets)
    return alpha, proj


def layer_forward(
    l: int,
    z: ad.Tensor,
    batch: GraphBatch,
    p: dict[str, ad.Tensor],
    cfg: ModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[ad.Tensor, ad.Tensor]:
    """One attention layer; returns ``(z_next, alpha)``."""
    alpha, proj = attention_layer(l, z, batch, p, cfg)
    sent = ad.gather(proj, batch.neighbors)
    agg = ad.scatter_sum(ad.scale_rows(sent, alpha), batch.targets)
    out = ad.dropout(ad.leaky_relu(agg, cfg.leaky_slope), cfg.dropout_rate, train, rng)
    return out, alpha


def edge_embed(z: ad.Tensor, batch: GraphBatch) -> ad.Tensor:
    """Sum of the two endpoint embeddings of every edge."""
    return ad.add(ad.gather(z, batch.edge_u), ad.gather(z, batch.edge_v))


def _head(x: ad.Tensor, p: dict[str, ad.Tensor], name: str, slope: float) -> ad.Tensor:
    hidden = ad.leaky_relu(ad.add(ad.matvec(x, p[f"{name}.W1"]), p[f"{name}.b1"]), slope)
    logit = ad.add(ad.matvec(hidden, p[f"{name}.W2"]), p[f"{name}.b2"])
    return ad.reshape(ad.sigmoid(logit), (x.shape[0],))


def forward(
    batch: GraphBatch,
    params: ModelParams,
    cfg: ModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
    record: bool = True,
    tape: ad.Tape | None = None,
    leaves: dict[str, ad.Tensor] | None = None,
) -> Forward:
    """Run the network on a batch. Dropout is active only when ``train``."""
    if tape is None:
        tape = ad.Tape(record=record)
    if leaves is None:
        leaves = {k: tape.leaf(v, k) for k, v in params.items()}
    z = tape.constant(batch.roles)
    attention, embeddings = [], []
    for l in range(cfg.n_layers):
        z, alpha = layer_forward(l, z, batch, leaves, cfg, train, rng)
        attention.append(alpha.value)
        embeddings.append(z.value)
    u = edge_embed(z, batch)
    node_p = _head(z, leaves, "node", cfg.leaky_slope)
    edge_p = _head(u, leaves, "edge", cfg.leaky_slope)
    return Forward(tape, leaves, node_p, edge_p, attention, embeddings, u.value)


def predict(g: Graph, params: ModelParams, cfg: ModelConfig) -> Predictions:
    """Inference on one graph (no dropout, no tape)."""
    fw = forward(GraphBatch.from_graphs([g]), params, cfg, record=False)
    return Predictions(fw.node_probs.value, fw.edge_probs.value)


def predict_many(graphs: Sequence[Graph], params: ModelParams, cfg: ModelConfig,
                 chunk: int = 256) -> list[Predictions]:
    out: list[Predictions] = []
    graphs = list(graphs)
    for start in range(0, len(graphs), chunk):
        batch = GraphBatch.from_graphs(graphs[start:start + chunk])
        fw = forward(batch, params, cfg, record=False)
        for n, e in zip(batch.split_nodes(fw.node_probs.value), batch.split_edges(fw.edge_probs.value)):
            out.append(Predictions(n, e))
    return out


# --- checkpoints ------------------------------------------------------------
#
# Layout (all integers little-endian):
#   8 bytes   magic "PGNNCKPT"
#   8 bytes   uint64 header length H
#   H bytes   UTF-8 JSON header: {"version", "config", "tensors": [{"name",
#             "shape", "offset", "count"}], "sha256"}
#   rest      float64 little-endian tensor data, concatenated in header order;
#             "offset"/"count" are in elements, "sha256" covers this block.

def save_checkpoint(params: ModelParams, cfg: ModelConfig, path) -> None:
    expected = param_shapes(cfg)
    if set(params) != set(expected):
        raise CheckpointError(f"parameter names do not match config: {sorted(set(params) ^ set(expected))}")
    entries, blobs, offset = [], [], 0
    for name in expected:
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        if arr.shape != expected[name]:
            raise CheckpointError(f"{name}: shape {arr.shape} != expected {expected[name]}")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": arr.size})
        blobs.append(arr.tobytes())
        offset += arr.size
    data = b"".join(blobs)
    header = json.dumps({
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "tensors": entries,
        "sha256": hashlib.sha256(data).hexdigest(),
    }, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(data)


def load_checkpoint(path, expect: ModelConfig | None = None) -> tuple[ModelParams, ModelConfig]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    try:
        (hlen,) = struct.unpack("<Q", raw[8:16])
        header = json.loads(raw[16:16 + hlen].decode())
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: version {header.get('version')!r}, expected {CHECKPOINT_VERSION!r}")
    data = raw[16 + hlen:]
    if hashlib.sha256(data).hexdigest() != header.get("sha256"):
        raise CheckpointError(f"{path}: tensor data corrupt (checksum mismatch)")
    try:
        cfg = ModelConfig.from_dict(header["config"])
    except (TypeError, ValueError, KeyError) as exc:
        raise CheckpointError(f"{path}: invalid config record ({exc})") from None
    if expect is not None and expect != cfg:
        raise CheckpointError(f"{path}: saved config {cfg} does not match requested {expect}")
    expected = param_shapes(cfg)
    flat = np.frombuffer(data, dtype="<f8")
    params: ModelParams = {}
    for entry in header["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in expected:
            raise CheckpointError(f"{path}: unexpected tensor {name!r}")
        if shape != expected[name] or int(np.prod(shape)) != entry["count"]:
            raise CheckpointError(f"{path}: {name} shape {shape} does not match config shape {expected[name]}")
        start, count = entry["offset"], entry["count"]
        if start + count > flat.size:
            raise CheckpointError(f"{path}: tensor {name} runs past end of data")
        params[name] = flat[start:start + count].reshape(shape).astype(np.float64)
    missing = set(expected) - set(params)
    if missing:
        raise CheckpointError(f"{path}: missing tensors {sorted(missing)}")
    return params, cfg
