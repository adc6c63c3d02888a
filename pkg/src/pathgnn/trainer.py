"""Training loop: node + edge binary cross-entropy minimised with Adam."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .datagen import Dataset, Sample
from .model import GraphBatch, ModelConfig, ModelParams, forward, init_params

log = logging.getLogger(__name__)

LOSS_MODES = ("both", "nodes_only", "edges_only")
PROB_CLAMP = 1e-12


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, params: ModelParams, history: "TrainHistory"):
        super().__init__(message)
        self.params = params
        self.history = history


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 10
    loss_mode: str = "both"
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_path_accuracy: float
    seconds: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1

    @property
    def train_loss(self) -> list[float]:
        return [e.train_loss for e in self.epochs]

    @property
    def val_accuracy(self) -> list[float]:
        return [e.val_path_accuracy for e in self.epochs]


# --- loss -------------------------------------------------------------------

def _bce_terms(p: ad.Tensor, y: np.ndarray, w: np.ndarray) -> ad.Tensor:
    """``sum_k w_k * BCE(p_k, y_k)`` with clamped probabilities."""
    pc = ad.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    on = ad.weighted_sum(ad.log(pc), -w * y)
    off = ad.weighted_sum(ad.log(ad.affine(pc, -1.0, 1.0)), -w * (1.0 - y))
    return ad.add(on, off)


def batch_loss(
    node_p: ad.Tensor,
    edge_p: ad.Tensor,
    node_y: np.ndarray,
    edge_y: np.ndarray,
    node_w: np.ndarray,
    edge_w: np.ndarray,
    mode: str = "both",
) -> ad.Tensor:
    """Weighted node/edge BCE; weights encode the per-graph means."""
    if node_p.shape != node_y.shape or edge_p.shape != edge_y.shape:
        raise ValueError(
            f"prediction/label length mismatch: nodes {node_p.shape} vs {node_y.shape}, "
            f"edges {edge_p.shape} vs {edge_y.shape}"
        )
    if mode == "nodes_only":
        return _bce_terms(node_p, node_y, node_w)
    if mode == "edges_only":
        return _bce_terms(edge_p, edge_y, edge_w)
    return ad.add(_bce_terms(node_p, node_y, node_w), _bce_terms(edge_p, edge_y, edge_w))


def bce_loss(node_probs, edge_probs, node_labels, edge_labels, mode: str = "both") -> float:
    """Mean node BCE plus mean edge BCE for a single graph (per ``mode``)."""
    if mode not in LOSS_MODES:
        raise ValueError(f"loss_mode must be one of {LOSS_MODES}, got {mode!r}")
    tape = ad.Tape(record=False)
    node_y = np.asarray(node_labels, dtype=np.float64)
    edge_y = np.asarray(edge_labels, dtype=np.float64)
    np_ = tape.constant(np.asarray(node_probs, dtype=np.float64))
    ep = tape.constant(np.asarray(edge_probs, dtype=np.float64))
    nw = np.full(node_y.shape, 1.0 / max(node_y.size, 1))
    ew = np.full(edge_y.shape, 1.0 / max(edge_y.size, 1))
    return float(batch_loss(np_, ep, node_y, edge_y, nw, ew, mode).value)


def _batch_targets(samples: Sequence[Sample]):
    node_y = np.concatenate([s.labels.nodes for s in samples])
    edge_y = np.concatenate([s.labels.edges for s in samples])
    b = len(samples)
    node_w = np.concatenate([np.full(s.graph.n_nodes, 1.0 / (s.graph.n_nodes * b)) for s in samples])
    edge_w = np.concatenate([np.full(s.graph.n_edges, 1.0 / (max(s.graph.n_edges, 1) * b)) for s in samples])
    return node_y, edge_y, node_w, edge_w


def loss_and_grads(
    samples: Sequence[Sample],
    params: ModelParams,
    mcfg: ModelConfig,
    mode: str = "both",
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean per-graph loss of ``samples`` and its gradient."""
    batch = GraphBatch.from_graphs([s.graph for s in samples])
    fw = forward(batch, params, mcfg, train=train, rng=rng)
    loss = batch_loss(fw.node_probs, fw.edge_probs, *_batch_targets(samples), mode)
    return float(loss.value), ad.gradients(loss, fw.params)


# --- optimizer --------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ModelParams, grads: dict[str, np.ndarray], state: AdamState,
              cfg: TrainConfig) -> tuple[ModelParams, AdamState]:
    """Bias-corrected Adam update; returns new parameter arrays (inputs untouched)."""
    t = state.step + 1
    new_params, m_new, v_new = {}, {}, {}
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"{k}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = cfg.beta1 * state.m.get(k, 0.0) + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v.get(k, 0.0) + (1.0 - cfg.beta2) * g * g
        new_params[k] = p - cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        m_new[k], v_new[k] = m, v
    return new_params, AdamState(t, m_new, v_new)


# --- loop -------------------------------------------------------------------

def train(
    dataset: Dataset,
    mcfg: ModelConfig,
    tcfg: TrainConfig,
    metrics_path=None,
    init: ModelParams | None = None,
    record_seconds: bool = False,
) -> tuple[ModelParams, TrainHistory]:
    """Mini-batch training with early stopping on validation Path Accuracy.

    Returns the parameters of the best validation epoch. When ``metrics_path``
    is given, one CSV row per epoch is appended as training proceeds. The
    ``seconds`` column is left empty unless ``record_seconds`` is set, so that
    reruns with the same seed give byte-identical files.
    """
    from .evaluator import path_accuracy

    train_set = dataset.splits.get("train", [])
    val_set = dataset.splits.get("val", [])
    if not train_set or not val_set:
        raise ValueError("training needs non-empty train and val splits")

    rng = np.random.default_rng(tcfg.seed)
    params = init if init is not None else init_params(mcfg, rng)
    state = AdamState()
    history = TrainHistory()
    best, best_acc, stale = params, -1.0, 0
    writer = None
    if metrics_path is not None:
        Path(metrics_path).parent.mkdir(parents=True, exist_ok=True)
        fh = open(metrics_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_path_accuracy", "seconds"])
    try:
        for epoch in range(1, tcfg.max_epochs + 1):
            t0 = time.perf_counter()
            order = rng.permutation(len(train_set))
            losses = []
            for start in range(0, len(order), tcfg.batch_size):
                chunk = [train_set[i] for i in order[start:start + tcfg.batch_size]]
                loss, grads = loss_and_grads(chunk, params, mcfg, tcfg.loss_mode, True, rng)
                if not math.isfinite(loss):
                    raise TrainingDiverged(f"loss became {loss} in epoch {epoch}", best, history)
                params, state = adam_step(params, grads, state, tcfg)
                losses.append(loss)
            acc = path_accuracy(params, mcfg, val_set).path_accuracy
            seconds = time.perf_counter() - t0
            rec = EpochRecord(epoch, float(np.mean(losses)), acc, seconds)
            history.epochs.append(rec)
            if writer is not None:
                writer.writerow([epoch, repr(rec.train_loss), repr(acc),
                                 f"{seconds:.3f}" if record_seconds else ""])
                fh.flush()
            log.info("epoch %d loss %.5f val acc %.4f (%.1fs)", epoch, rec.train_loss, acc, seconds)
            if acc > best_acc:
                best, best_acc, stale = params, acc, 0
                history.best_epoch = epoch
            else:
                stale += 1
                if stale >= tcfg.patience:
                    break
    finally:
        if writer is not None:
            fh.close()
    return best, history
