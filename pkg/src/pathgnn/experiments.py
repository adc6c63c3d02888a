"""Experiment presets and a small on-disk cache of trained models.

An experiment is fully described by its dataset, model and training configs.
Its cache directory is named after a hash of that description, so a cached
model is reused only when every setting matches.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

from .datagen import (
    Dataset,
    DatasetConfig,
    config_hash,
    desk_config,
    fixed_nodes_config,
    fixed_structure_dataset,
    gen_dataset,
)
from .evaluator import EvalReport, path_accuracy
from .model import ModelConfig, ModelParams, load_checkpoint, save_checkpoint
from .trainer import EpochRecord, TrainConfig, TrainHistory, train

log = logging.getLogger(__name__)

CACHE_ENV = "PATHGNN_CACHE"


def cache_root() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.cwd() / ".pathgnn-cache"))


@dataclass(frozen=True)
class Experiment:
    name: str
    data: DatasetConfig
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    fixed_structure_nodes: int | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "data": self.data.to_dict(),
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "fixed_structure_nodes": self.fixed_structure_nodes,
        }

    def key(self) -> str:
        return config_hash(self.to_dict())

    def dataset(self) -> Dataset:
        if self.fixed_structure_nodes is not None:
            return fixed_structure_dataset(self.data, self.fixed_structure_nodes)
        return gen_dataset(self.data)


def desk_experiment(loss_mode: str = "both", seed: int = 7) -> Experiment:
    name = "desk" if loss_mode == "both" else f"desk-{loss_mode}"
    return Experiment(name, desk_config(seed), train=TrainConfig(loss_mode=loss_mode, seed=seed))


def fixed_nodes_experiment(n: int = 10, seed: int = 7) -> Experiment:
    return Experiment(f"fixed-nodes-{n}", fixed_nodes_config(desk_config(seed), n),
                      train=TrainConfig(seed=seed))


def fixed_structure_experiment(n: int = 10, seed: int = 7) -> Experiment:
    return Experiment(f"fixed-structure-{n}", desk_config(seed), train=TrainConfig(seed=seed),
                      fixed_structure_nodes=n)


TABLE_PRESETS = {
    "ours": lambda seed: desk_experiment("both", seed),
    "fixed-structure": lambda seed: fixed_structure_experiment(seed=seed),
    "fixed-nodes": lambda seed: fixed_nodes_experiment(seed=seed),
    "nodes-only": lambda seed: desk_experiment("nodes_only", seed),
    "edges-only": lambda seed: desk_experiment("edges_only", seed),
}


@dataclass
class TrainedModel:
    experiment: Experiment
    params: ModelParams
    history: TrainHistory
    directory: Path

    @property
    def best_val_accuracy(self) -> float:
        return self.history.epochs[self.history.best_epoch - 1].val_path_accuracy


def _history_to_json(h: TrainHistory) -> dict:
    return {"best_epoch": h.best_epoch, "epochs": [vars(e) for e in h.epochs]}


def _history_from_json(d: dict) -> TrainHistory:
    return TrainHistory([EpochRecord(**e) for e in d["epochs"]], d["best_epoch"])


def run(exp: Experiment, cache: Path | None = None, dataset: Dataset | None = None) -> TrainedModel:
    """Train ``exp`` or load it from the cache."""
    directory = (cache or cache_root()) / f"{exp.name}-{exp.key()}"
    ckpt, hist_path = directory / "model.ckpt", directory / "history.json"
    if ckpt.exists() and hist_path.exists():
        params, _ = load_checkpoint(ckpt, expect=exp.model)
        history = _history_from_json(json.loads(hist_path.read_text()))
        log.info("loaded cached %s from %s", exp.name, directory)
        return TrainedModel(exp, params, history, directory)

    directory.mkdir(parents=True, exist_ok=True)
    (directory / "manifest.json").write_text(json.dumps(exp.to_dict(), indent=2, sort_keys=True) + "\n")
    ds = dataset if dataset is not None else exp.dataset()
    params, history = train(ds, exp.model, exp.train, metrics_path=directory / "metrics.csv")
    save_checkpoint(params, exp.model, ckpt)
    hist_path.write_text(json.dumps(_history_to_json(history), indent=2) + "\n")
    return TrainedModel(exp, params, history, directory)


def table_report(seed: int = 7, cache: Path | None = None) -> dict[str, EvalReport]:
    """Path Accuracy of every preset on the shared desk test split."""
    test = gen_dataset(desk_config(seed))["test"]
    out = {}
    for name, make in TABLE_PRESETS.items():
        trained = run(make(seed), cache)
        out[name] = path_accuracy(trained.params, trained.experiment.model, test)
    return out
