"""Command-line pipeline: synth -> precompute -> train -> eval -> bench.

Exit codes: 0 success, 1 usage error, 2 data/contract violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bench import run_bench
from .errors import DataError
from .graph import load_graph, save_graph
from .model import forward, load_checkpoint, save_checkpoint
from .propagate import load_precomputed, precompute
from .synth import SynthConfig, gen_synthetic, with_target_nodes
from .train import RunConfig, evaluate, train


class _Parser(argparse.ArgumentParser):
    # usage problems exit 1 (argparse default is 2, which we reserve for data errors)
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(parser):
    parser.add_argument("--seed", type=int, default=0, help="global random seed")
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads for precomputation")
    parser.add_argument("--precision", choices=("f64", "f32"), default="f64",
                        help="training arithmetic width")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sehgnn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    _add_common(p)
    p.add_argument("--out", required=True, help="dataset directory to create")
    p.add_argument("--target-nodes", type=int, default=2000)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--edge-multiplier", type=float, default=1.0)
    p.add_argument("--coupling", type=float, default=0.5,
                   help="probability that a target node's features match its community")

    p = sub.add_parser("precompute", help="aggregate features/labels along all metapaths")
    _add_common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory for semantic matrices")
    p.add_argument("--max-hop", type=int, default=2, help="max feature metapath hops")
    p.add_argument("--label-max-hop", type=int, default=2, help="max label metapath hops")
    p.add_argument("--force", action="store_true",
                   help="overwrite matrices precomputed from a different graph")

    p = sub.add_parser("train", help="train on precomputed matrices")
    _add_common(p)
    p.add_argument("--precomputed", required=True)
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--out", default="report.json", help="training report path")
    p.add_argument("--checkpoint", help="model checkpoint path (default: <out dir>/model.ckpt)")
    p.add_argument("--repeats", type=int, default=1,
                   help="run this many seeds and report aggregate statistics")
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--hidden-dim", type=int, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--fusion-mode", choices=("transformer", "weighted-sum"), default=None)
    p.add_argument("--batch-size", type=int, default=None)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    _add_common(p)
    p.add_argument("--precomputed", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", help="also write metrics JSON here")

    p = sub.add_parser("bench", help="edge-density scaling benchmark")
    _add_common(p)
    p.add_argument("--sweep", default="edges=1x,2x,4x",
                   help="sweep spec, e.g. edges=1x,2x,4x")
    p.add_argument("--out", default="bench_report.json")
    p.add_argument("--target-nodes", type=int, default=2000)
    p.add_argument("--epochs", type=int, default=20, help="timed epochs per point")
    p.add_argument("--warmup", type=int, default=5, help="warmup epochs per point")
    p.add_argument("--repeats", type=int, default=3, help="precompute timing repeats")
    p.add_argument("--compare-backends", action="store_true",
                   help="time precompute under every available kernel backend")
    return parser


def _parse_sweep(text: str) -> list[float]:
    if not text.startswith("edges="):
        raise DataError(f"unsupported sweep spec {text!r}; expected edges=1x,2x,4x")
    mults = []
    for tok in text[len("edges="):].split(","):
        tok = tok.strip().rstrip("x")
        try:
            mults.append(float(tok))
        except ValueError as exc:
            raise DataError(f"bad sweep factor {tok!r}") from exc
    if len(mults) < 2:
        raise DataError("sweep needs at least two points")
    return mults


def cmd_synth(args) -> int:
    cfg = with_target_nodes(SynthConfig(num_classes=args.classes, coupling=args.coupling),
                            args.target_nodes)
    cfg = replace(cfg, edge_multiplier=args.edge_multiplier)
    graph = gen_synthetic(cfg, args.seed)
    save_graph(graph, args.out)
    print(f"wrote {args.out}: {graph.schema.target_count} target nodes, "
          f"{graph.num_edges} edges, {graph.schema.num_classes} classes")
    return 0


def cmd_precompute(args) -> int:
    graph = load_graph(args.data)
    tic = time.perf_counter()
    manifest = precompute(graph, args.max_hop, args.label_max_hop, args.out,
                          threads=args.threads, force=args.force)
    total_ms = (time.perf_counter() - tic) * 1000.0
    print(f"{manifest['num_feature_paths']} feature metapaths, "
          f"{manifest['num_label_paths']} label metapaths")
    print(f"aggregation {manifest['compute_ms']:.1f} ms, total {total_ms:.1f} ms -> {args.out}")
    return 0


def _train_once(matrices, labels, cfg, precompute_ms, num_classes):
    return train(matrices, labels, cfg, precompute_ms=precompute_ms, num_classes=num_classes)


def cmd_train(args) -> int:
    tic = time.perf_counter()
    matrices, labels, manifest = load_precomputed(args.precomputed)
    load_ms = (time.perf_counter() - tic) * 1000.0

    overrides = {
        "max_epochs": args.max_epochs,
        "patience": args.patience,
        "hidden_dim": args.hidden_dim,
        "dropout": args.dropout,
        "learning_rate": args.learning_rate,
        "weight_decay": args.weight_decay,
        "fusion_mode": args.fusion_mode,
        "batch_size": args.batch_size,
        "precision": args.precision,
        "seed": args.seed,
        "max_hop_features": manifest["max_hop_features"],
        "max_hop_labels": manifest["max_hop_labels"],
    }
    if args.config:
        cfg = RunConfig.from_file(args.config, overrides)
    else:
        cfg = RunConfig(**{k: v for k, v in overrides.items() if v is not None})

    num_classes = int(manifest["num_classes"])
    if args.repeats <= 1:
        params, report = _train_once(matrices, labels, cfg, load_ms, num_classes)
        doc = report.to_dict()
    else:
        runs = []
        for i in range(args.repeats):
            run_cfg = replace(cfg, seed=cfg.seed + i)
            params, report = _train_once(matrices, labels, run_cfg, load_ms, num_classes)
            runs.append(report.to_dict())
        micro = [r["test_micro_f1"] for r in runs]
        macro = [r["test_macro_f1"] for r in runs]
        doc = dict(runs[-1])
        doc["test_micro_f1"] = float(np.mean(micro))
        doc["test_macro_f1"] = float(np.mean(macro))
        doc["repeats"] = {
            "n": args.repeats,
            "test_micro_f1_mean": float(np.mean(micro)),
            "test_micro_f1_std": float(np.std(micro)),
            "test_macro_f1_mean": float(np.mean(macro)),
            "test_macro_f1_std": float(np.std(macro)),
            "runs": runs,
        }

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, indent=2) + "\n")
    ckpt = Path(args.checkpoint) if args.checkpoint else out.parent / "model.ckpt"
    save_checkpoint(params, ckpt)
    print(f"best epoch {doc['best_epoch']}: val micro-f1 {doc['val_micro_f1']:.4f}, "
          f"test micro-f1 {doc['test_micro_f1']:.4f} / macro-f1 {doc['test_macro_f1']:.4f}")
    print(f"report -> {out}, checkpoint -> {ckpt}")
    return 0


def cmd_eval(args) -> int:
    matrices, labels, manifest = load_precomputed(args.precomputed)
    params = load_checkpoint(args.checkpoint)
    manifest_ids = tuple(e["id"] for e in manifest["entries"])
    if params.path_ids != manifest_ids:
        raise DataError(
            "checkpoint was trained with a different metapath set: "
            f"{params.path_ids} vs {manifest_ids}"
        )
    split_code = {"train": 0, "val": 1, "test": 2}[args.split]
    idx = labels.indices(split_code)
    if idx.size == 0:
        raise DataError(f"split {args.split!r} is empty")
    probs, _ = forward(params, matrices, idx, train_mode=False)
    metrics = evaluate(probs, labels.labels[idx], np.ones(idx.size, dtype=bool))
    doc = {"split": args.split, **metrics.to_dict()}
    text = json.dumps(doc, indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return 0


def cmd_bench(args) -> int:
    mults = _parse_sweep(args.sweep)
    base = with_target_nodes(SynthConfig(), args.target_nodes)
    report = run_bench(
        edge_multipliers=mults,
        seed=args.seed,
        base_config=base,
        epochs=args.epochs,
        warmup=args.warmup,
        repeats=args.repeats,
        threads=args.threads,
        compare_backends=args.compare_backends,
        precision=args.precision,
    )
    Path(args.out).write_text(json.dumps(report, indent=2) + "\n")
    for p in report["points"]:
        print(f"edges x{p['edge_multiplier']:g}: E={p['total_edges']}, "
              f"precompute {p['precompute_ms']:.1f} ms, epoch {p['epoch_ms_mean']:.1f} ms")
    for note in report["notes"]:
        print(note)
    print(f"report -> {args.out}")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "precompute": cmd_precompute,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
