"""Command line entry point.

Exit codes: 0 success, 1 runtime failure (the module's message is printed
verbatim), 2 usage error. Every command that writes files also writes a
manifest with its fully resolved configuration next to them.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import datagen, evaluator, experiments
from .datagen import DatasetConfig, DiscardedSample, Sample
from .graph import GraphError, dumps_record, graph_from_record, graph_to_record, read_records, write_records
from .model import CheckpointError, ModelConfig, init_params, load_checkpoint, predict, save_checkpoint
from .oracle import dijkstra, labels_from_path
from .trainer import TrainConfig, TrainingDiverged, train

log = logging.getLogger("pathgnn")

RUNTIME_ERRORS = (GraphError, CheckpointError, DiscardedSample, TrainingDiverged,
                  ValueError, OSError)


def _pair(kind):
    def parse(text: str):
        try:
            lo, hi = text.split(":")
            return kind(lo), kind(hi)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected LOW:HIGH, got {text!r}")
    return parse


def _triple(text: str):
    try:
        parts = tuple(float(x) for x in text.split(","))
    except ValueError:
        parts = ()
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected TRAIN,VAL,TEST fractions, got {text!r}")
    return parts


def _write_manifest(path: Path, command: str, args: dict, extra: dict | None = None) -> None:
    body = {"command": command, "args": args}
    if extra:
        body.update(extra)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(body, indent=2, sort_keys=True, default=str) + "\n")


def _jsonable(ns: argparse.Namespace) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(ns).items()
            if k not in ("func",)}


def _load_samples(path: Path, split: str) -> list[Sample]:
    if path.is_dir():
        return datagen.load_dataset(path)[split]
    return datagen.load_samples(path)


def _model_config(args) -> ModelConfig:
    widths = tuple(args.widths) if args.widths else (args.width,) * args.layers
    return ModelConfig(n_layers=len(widths), widths=widths, hidden=args.hidden,
                       dropout_rate=args.dropout, leaky_slope=args.leaky_slope)


# --- commands ---------------------------------------------------------------

def cmd_gen(args) -> int:
    if args.preset == "testgen":
        samples = datagen.testgen(n_structures=args.structures or 300,
                                  node_range=args.nodes or (3, 50),
                                  samplings=args.samplings or 2,
                                  perturbed_fraction=args.perturbed_fraction,
                                  extra_edge_factor=args.extra_edge_factor, seed=args.seed)
        args.out.mkdir(parents=True, exist_ok=True)
        write_records(args.out / "test.jsonl", (s.to_record() for s in samples))
        _write_manifest(args.out / "manifest.json", "gen", _jsonable(args),
                        {"files": {"test": "test.jsonl"}, "counts": {"test": len(samples)}})
        print(f"wrote {len(samples)} samples to {args.out}")
        return 0
    base = datagen.full_config(args.seed) if args.preset == "full" else datagen.desk_config(args.seed)
    cfg = DatasetConfig(
        n_structures=args.structures or base.n_structures,
        weight_samplings_per_structure=args.samplings or base.weight_samplings_per_structure,
        node_range=args.nodes or base.node_range,
        extra_edge_factor=args.extra_edge_factor,
        weight_range=args.weights,
        split=args.split,
        seed=args.seed,
    )
    ds = datagen.gen_dataset(cfg, threads=args.threads)
    datagen.save_dataset(ds, args.out)
    counts = ds.counts()
    print(f"wrote {sum(counts.values())} samples to {args.out} "
          f"(train {counts['train']}, val {counts['val']}, test {counts['test']})")
    return 0


def cmd_train(args) -> int:
    ds = datagen.load_dataset(args.data)
    mcfg = _model_config(args)
    tcfg = TrainConfig(learning_rate=args.lr, beta1=args.beta1, beta2=args.beta2, eps=args.eps,
                       batch_size=args.batch_size, max_epochs=args.max_epochs,
                       patience=args.patience, loss_mode=args.loss_mode, seed=args.seed)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    _write_manifest(out / "manifest.json", "train", _jsonable(args),
                    {"model": mcfg.to_dict(), "train": tcfg.to_dict()})
    init = None
    if args.init:
        init, _ = load_checkpoint(args.init, expect=mcfg)
    params, history = train(ds, mcfg, tcfg, metrics_path=out / "metrics.csv", init=init,
                            record_seconds=args.record_seconds)
    save_checkpoint(params, mcfg, out / "model.ckpt")
    best = history.epochs[history.best_epoch - 1]
    print(f"best epoch {best.epoch}: val Path Accuracy {best.val_path_accuracy:.4f}; "
          f"checkpoint {out / 'model.ckpt'}")
    return 0


def cmd_table(args) -> int:
    reports = experiments.table_report(args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / f"table-seed{args.seed}.csv"
    with open(path, "w") as f:
        f.write("model,correct,total,path_accuracy\n")
        for name, rep in reports.items():
            f.write(f"{name},{rep.correct},{rep.total},{rep.path_accuracy!r}\n")
    _write_manifest(args.out / f"table-seed{args.seed}.manifest.json", "eval", _jsonable(args),
                    {"presets": {k: experiments.TABLE_PRESETS[k](args.seed).to_dict()
                                 for k in experiments.TABLE_PRESETS}})
    for name, rep in reports.items():
        print(f"{name:16s} {100 * rep.path_accuracy:6.2f}")
    return 0


def cmd_eval(args) -> int:
    if args.table:
        return cmd_table(args)
    params, mcfg = load_checkpoint(args.model)
    samples = _load_samples(args.data, args.split)
    if args.perturb:
        mode = None if args.perturb == "all" else args.perturb
        report = evaluator.rerouting_eval(params, mcfg, samples, mode, args.seed)
    else:
        report = evaluator.path_accuracy(params, mcfg, samples)
    tag = f"{datagen.config_hash({'model': mcfg.to_dict(), 'data': str(args.data), 'split': args.split, 'perturb': args.perturb})}-seed{args.seed}"
    args.out.mkdir(parents=True, exist_ok=True)
    csv_path = args.out / f"report-{tag}.csv"
    evaluator.write_report_csv(report, csv_path)
    text = evaluator.summary(report)
    if args.sweep:
        rows = evaluator.node_count_sweep(params, mcfg, samples, args.sweep)
        text += "\n  node-count sweep: " + ", ".join(
            f"{lo}-{hi}={acc:.3f} (n={n})" for (lo, hi), (acc, n) in rows.items())
    (args.out / f"summary-{tag}.txt").write_text(text + "\n")
    _write_manifest(args.out / f"manifest-{tag}.json", "eval", _jsonable(args), {"model": mcfg.to_dict()})
    print(text)
    return 0


def cmd_perturb(args) -> int:
    samples = _load_samples(args.data, args.split)
    out = datagen.perturb_many(samples, args.mode, args.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_records(args.out, (s.to_record() for s in out))
    _write_manifest(args.out.with_name(args.out.name + ".manifest.json"), "perturb", _jsonable(args),
                    {"kept": len(out), "skipped": len(samples) - len(out)})
    print(f"perturbed {len(out)} of {len(samples)} samples -> {args.out}")
    return 0


def cmd_bench(args) -> int:
    if args.model:
        params, mcfg = load_checkpoint(args.model)
    else:
        mcfg = ModelConfig()
        params = init_params(mcfg, np.random.default_rng(args.seed))
    hops = list(range(1, args.max_hops + 1))
    graphs = evaluator.graphs_by_hop_count(args.nodes, hops, args.per_bucket, args.seed,
                                           args.extra_edge_factor)
    report = evaluator.timing_benchmark(params, mcfg, graphs, reps=args.reps, warmup=args.warmup,
                                        min_per_bucket=args.per_bucket, seed=args.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    report.write_csv(args.out)
    _write_manifest(args.out.with_name(args.out.name + ".manifest.json"), "bench", _jsonable(args),
                    {"model": mcfg.to_dict()})
    for h, m, o in zip(report.hops, report.model_relative, report.oracle_relative):
        print(f"hops {h}: model {m:.3f}  dijkstra {o:.3f}")
    return 0


def _read_single_graph(path: Path):
    recs = read_records(path)
    if len(recs) != 1:
        raise GraphError(f"{path}: expected exactly one graph record, found {len(recs)}")
    g, _, _ = graph_from_record(recs[0])
    return g


def cmd_predict(args) -> int:
    params, mcfg = load_checkpoint(args.model)
    g = _read_single_graph(args.input)
    pred = predict(g, params, mcfg)
    decoded = evaluator.decode_path(pred, g)
    body = {
        "node_probs": [float(x) for x in pred.node_probs],
        "edge_probs": [float(x) for x in pred.edge_probs],
        "path": list(decoded.path) if decoded.ok else None,
        "failure": decoded.failure,
    }
    print(json.dumps(body))
    return 0


def cmd_oracle(args) -> int:
    g = _read_single_graph(args.input)
    r = dijkstra(g)
    if not r.found:
        raise GraphError("destination is unreachable from source")
    labels = labels_from_path(g, r)
    print(f"path {list(r.path)}")
    print(f"cost {r.cost:g}")
    if not r.unique:
        print("note: optimal path is not unique")
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(dumps_record(graph_to_record(g, labels, {"cost": r.cost})) + "\n")
    return 0


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pathgnn", description="Shortest-path prediction with an edge-aware graph attention network.")
    p.add_argument("--threads", type=int, default=1, help="worker threads for data generation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a dataset")
    g.add_argument("--preset", choices=("desk", "full", "testgen"), default="desk")
    g.add_argument("--structures", type=int)
    g.add_argument("--samplings", type=int)
    g.add_argument("--nodes", type=_pair(int), help="MIN:MAX node count")
    g.add_argument("--extra-edge-factor", type=float, default=1.0)
    g.add_argument("--weights", type=_pair(float), default=(1.0, 10.0), help="LOW:HIGH edge weights")
    g.add_argument("--split", type=_triple, default=(0.7, 0.15, 0.15))
    g.add_argument("--perturbed-fraction", type=float, default=0.3, help="testgen preset only")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", type=Path, required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--out", type=Path, default=Path("run"))
    t.add_argument("--layers", type=int, default=8)
    t.add_argument("--width", type=int, default=64)
    t.add_argument("--widths", type=int, nargs="+", help="per-layer widths (overrides --layers/--width)")
    t.add_argument("--hidden", type=int, default=32)
    t.add_argument("--dropout", type=float, default=0.1)
    t.add_argument("--leaky-slope", type=float, default=0.2)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--beta1", type=float, default=0.9)
    t.add_argument("--beta2", type=float, default=0.999)
    t.add_argument("--eps", type=float, default=1e-8)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--max-epochs", type=int, default=200)
    t.add_argument("--patience", type=int, default=10)
    t.add_argument("--loss-mode", choices=("both", "nodes_only", "edges_only"), default="both")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--init", type=Path, help="start from this checkpoint")
    t.add_argument("--record-seconds", action="store_true",
                   help="fill the seconds column of metrics.csv (makes reruns differ)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--model", type=Path)
    e.add_argument("--data", type=Path, help="dataset directory or JSONL file")
    e.add_argument("--table", action="store_true",
                   help="train (or load cached) preset models and compare them on one test split")
    e.add_argument("--split", default="test")
    e.add_argument("--perturb", choices=(*datagen.PERTURB_MODES, "all"))
    e.add_argument("--sweep", type=_pair(int), nargs="+", help="node-count buckets MIN:MAX")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", type=Path, default=Path("reports"))
    e.set_defaults(func=cmd_eval)

    q = sub.add_parser("perturb", help="remove an edge or node and relabel")
    q.add_argument("--data", type=Path, required=True)
    q.add_argument("--split", default="test")
    q.add_argument("--mode", choices=datagen.PERTURB_MODES, required=True)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", type=Path, required=True)
    q.set_defaults(func=cmd_perturb)

    b = sub.add_parser("bench", help="inference time against hop count")
    b.add_argument("--model", type=Path, help="checkpoint (default: freshly initialised model)")
    b.add_argument("--nodes", type=int, default=15)
    b.add_argument("--max-hops", type=int, default=5)
    b.add_argument("--per-bucket", type=int, default=50)
    b.add_argument("--extra-edge-factor", type=float, default=1.0)
    b.add_argument("--reps", type=int, default=10)
    b.add_argument("--warmup", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", type=Path, default=Path("timing.csv"))
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("predict", help="predict the path on one graph file")
    r.add_argument("--model", type=Path, required=True)
    r.add_argument("--in", dest="input", type=Path, required=True)
    r.set_defaults(func=cmd_predict)

    o = sub.add_parser("oracle", help="label one graph file with Dijkstra")
    o.add_argument("--in", dest="input", type=Path, required=True)
    o.add_argument("--out", type=Path, help="write the labelled record here")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    if args.command == "eval" and not args.table and (args.model is None or args.data is None):
        parser.error("eval needs --model and --data (or --table)")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
