"""Precomputed metapath aggregation.

Feature side: for a path c c1 .. cl the semantic matrix is
``norm(c,c1) @ norm(c1,c2) @ ... @ norm(c_{l-1},cl) @ X[cl]`` evaluated
right-to-left as repeated sparse-dense products; suffixes are memoized by
their type sequence so each one is computed at most once per batch
(computing PAP first makes PPAP one extra product).

Label side: the composite target-to-target adjacency is built by a
left-to-right chain of sparse-sparse products (prefix-memoized), its
diagonal is removed so no node sees its own label, and the result is
applied to the one-hot train-label matrix.

Memoization and thread count never change the bytes produced: both the
memoized and direct evaluations use the same association order, and the
per-path results are independent of scheduling.
"""

from __future__ import annotations

import json
import logging
import struct
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .graph import HeteroGraph, LabelTable, content_hash
from .metapaths import Metapath, MetapathSet, StepCache, build_metapath_set, validate_metapath
from .sparse import SparseMatrix, rm_diag, sparse_matmul, spmm

logger = logging.getLogger(__name__)

SMX_MAGIC = b"SMX1"
ORACLE_MAX_HOP = 4


@dataclass
class SemanticMatrix:
    metapath: Metapath
    matrix: np.ndarray  # (num_target_nodes, width) float64

    @property
    def path_id(self) -> str:
        return self.metapath.path_id


class _SuffixMemo:
    """Thread-safe map from a type-sequence suffix to its dense product."""

    def __init__(self):
        self._data: dict[tuple[str, ...], np.ndarray] = {}
        self._lock = threading.Lock()

    def get(self, key):
        with self._lock:
            return self._data.get(key)

    def put(self, key, value):
        # first writer wins; concurrent writers hold bitwise-identical values
        with self._lock:
            return self._data.setdefault(key, value)


def _feature_suffix(graph, steps, types, memo):
    if memo is not None:
        hit = memo.get(types)
        if hit is not None:
            return hit
    if len(types) == 1:
        out = graph.features[types[0]].matrix
    else:
        out = spmm(steps.normalized(types[0], types[1]), _feature_suffix(graph, steps, types[1:], memo))
    if memo is not None:
        out = memo.put(types, out)
    return out


def propagate_features(
    graph: HeteroGraph,
    paths: list[Metapath],
    memoize: bool = True,
    steps: StepCache | None = None,
) -> list[SemanticMatrix]:
    """Aggregate raw features along each feature metapath."""
    steps = steps or StepCache(graph)
    memo = _SuffixMemo() if memoize else None
    out = []
    for p in paths:
        if p.kind != "feature":
            raise ValueError(f"{p.canonical} is not a feature metapath")
        validate_metapath(graph.schema, p)
        mat = _feature_suffix(graph, steps, p.types, memo)
        out.append(SemanticMatrix(p, mat.copy()))
    return out


class _PrefixMemo(_SuffixMemo):
    pass


def _composite_prefix(steps, types, memo) -> SparseMatrix:
    if memo is not None:
        hit = memo.get(types)
        if hit is not None:
            return hit
    if len(types) == 2:
        out = steps.normalized(types[0], types[1])
    else:
        out = sparse_matmul(
            _composite_prefix(steps, types[:-1], memo), steps.normalized(types[-2], types[-1])
        )
    if memo is not None:
        out = memo.put(types, out)
    return out


def propagate_labels(
    graph: HeteroGraph,
    paths: list[Metapath],
    memoize: bool = True,
    steps: StepCache | None = None,
) -> list[SemanticMatrix]:
    """Propagate one-hot train labels along each label metapath.

    The composite adjacency's diagonal is removed before applying the label
    matrix, so row i never receives node i's own label.
    """
    steps = steps or StepCache(graph)
    memo = _PrefixMemo() if memoize else None
    onehot = graph.labels.train_onehot(graph.schema.num_classes)
    out = []
    for p in paths:
        if p.kind != "label":
            raise ValueError(f"{p.canonical} is not a label metapath")
        validate_metapath(graph.schema, p)
        composite = _composite_prefix(steps, p.types, memo)
        out.append(SemanticMatrix(p, spmm(rm_diag(composite), onehot)))
    return out


def oracle_aggregate(graph: HeteroGraph, path: Metapath, node: int) -> np.ndarray:
    """Brute-force single-node aggregation by walking every metapath instance.

    Each instance contributes the source node's feature vector weighted by
    the product of inverse step degrees along the walk. Independent of the
    matrix pipeline; kept for verification.
    """
    if path.kind != "feature":
        raise ValueError("oracle covers feature metapaths")
    if path.hop > ORACLE_MAX_HOP:
        raise ValueError(f"hop bound exceeded: {path.hop} > {ORACLE_MAX_HOP}")
    validate_metapath(graph.schema, path)
    steps = StepCache(graph)
    feats = graph.features[path.types[-1]].matrix

    def walk(depth: int, v: int) -> np.ndarray:
        if depth == path.hop:
            return feats[v]
        adj = steps.binary(path.types[depth], path.types[depth + 1])
        cols, _ = adj.row(v)
        if cols.size == 0:
            return np.zeros(feats.shape[1])
        total = np.zeros(feats.shape[1])
        for nb in cols.tolist():
            total = total + walk(depth + 1, nb)
        return total / cols.size

    return walk(0, int(node))


def write_smx(path, matrix: np.ndarray):
    matrix = np.ascontiguousarray(matrix, dtype=np.float64)
    with Path(path).open("wb") as fh:
        fh.write(SMX_MAGIC)
        fh.write(struct.pack("<QQ", matrix.shape[0], matrix.shape[1]))
        fh.write(matrix.astype("<f8").tobytes(order="C"))


def read_smx(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != SMX_MAGIC:
        raise DataError(f"{path}: not a semantic-matrix file")
    rows, cols = struct.unpack("<QQ", raw[4:20])
    body = np.frombuffer(raw, dtype="<f8", offset=20)
    if body.size != rows * cols:
        raise DataError(f"{path}: body size does not match header ({rows}x{cols})")
    return body.reshape(rows, cols).astype(np.float64)


def _smx_filename(path: Metapath) -> str:
    # feature and label paths can share a canonical string (e.g. APA), so
    # label files carry a distinguishing suffix
    return f"{path.canonical}.smx" if path.kind == "feature" else f"{path.canonical}.label.smx"


def precompute(
    graph: HeteroGraph,
    max_hop_features: int,
    max_hop_labels: int,
    out_dir,
    threads: int = 1,
    force: bool = False,
) -> dict:
    """Run the full aggregation for a graph and persist it.

    Writes one .smx file per metapath plus manifest.json, and copies the
    label/split tables so training needs nothing but this directory.
    Refuses to overwrite a directory precomputed from a different graph
    unless ``force`` is set.
    """
    out = Path(out_dir)
    graph_hash = content_hash(graph)
    manifest_path = out / "manifest.json"
    if manifest_path.exists():
        old = json.loads(manifest_path.read_text())
        if old.get("graph_hash") != graph_hash and not force:
            raise DataError(
                f"{out} holds matrices for a different graph "
                f"(hash {old.get('graph_hash', '?')[:12]}.. != {graph_hash[:12]}..); "
                "use force to overwrite"
            )
    out.mkdir(parents=True, exist_ok=True)

    mp_set = build_metapath_set(graph.schema, max_hop_features, max_hop_labels)
    started = time.perf_counter()
    matrices = compute_semantic_matrices(graph, mp_set, threads=threads)
    elapsed_ms = (time.perf_counter() - started) * 1000.0

    entries = []
    for sm in matrices:
        fname = _smx_filename(sm.metapath)
        write_smx(out / fname, sm.matrix)
        entries.append(
            {
                "id": sm.path_id,
                "canonical": sm.metapath.canonical,
                "kind": sm.metapath.kind,
                "types": list(sm.metapath.types),
                "rows": int(sm.matrix.shape[0]),
                "cols": int(sm.matrix.shape[1]),
                "file": fname,
            }
        )
    manifest = {
        "format": 1,
        "graph_hash": graph_hash,
        "target_type": graph.schema.target_type,
        "num_target_nodes": graph.schema.target_count,
        "num_classes": graph.schema.num_classes,
        "max_hop_features": max_hop_features,
        "max_hop_labels": max_hop_labels,
        "num_feature_paths": len(mp_set.feature_paths),
        "num_label_paths": len(mp_set.label_paths),
        "compute_ms": elapsed_ms,
        "entries": entries,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")

    lab = graph.labels
    lines = [f"{i}\t{c}" for i, c in enumerate(lab.labels.tolist()) if c >= 0]
    out.joinpath("labels.tsv").write_text("\n".join(lines) + "\n")
    names = {0: "train", 1: "val", 2: "test"}
    lines = [f"{i}\t{names[c]}" for i, c in enumerate(lab.split.tolist())]
    out.joinpath("splits.tsv").write_text("\n".join(lines) + "\n")
    return manifest


def compute_semantic_matrices(
    graph: HeteroGraph, mp_set: MetapathSet, threads: int = 1
) -> list[SemanticMatrix]:
    """All semantic matrices for a metapath set, optionally in parallel."""
    steps = StepCache(graph)
    if threads <= 1:
        return propagate_features(graph, list(mp_set.feature_paths), steps=steps) + propagate_labels(
            graph, list(mp_set.label_paths), steps=steps
        )
    f_memo = _SuffixMemo()
    l_memo = _PrefixMemo()
    onehot = graph.labels.train_onehot(graph.schema.num_classes)

    def one_feature(p: Metapath) -> SemanticMatrix:
        validate_metapath(graph.schema, p)
        return SemanticMatrix(p, _feature_suffix(graph, steps, p.types, f_memo).copy())

    def one_label(p: Metapath) -> SemanticMatrix:
        validate_metapath(graph.schema, p)
        comp = _composite_prefix(steps, p.types, l_memo)
        return SemanticMatrix(p, spmm(rm_diag(comp), onehot))

    with ThreadPoolExecutor(max_workers=threads) as pool:
        feats = list(pool.map(one_feature, mp_set.feature_paths))
        labs = list(pool.map(one_label, mp_set.label_paths))
    return feats + labs


def load_precomputed(precomputed_dir) -> tuple[list[SemanticMatrix], LabelTable, dict]:
    """Read back matrices, labels and the manifest from a precompute directory."""
    root = Path(precomputed_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"missing manifest: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())

    matrices = []
    for e in manifest["entries"]:
        mat = read_smx(root / e["file"])
        if mat.shape != (e["rows"], e["cols"]):
            raise DataError(f"{e['file']}: shape {mat.shape} does not match manifest")
        matrices.append(SemanticMatrix(Metapath(tuple(e["types"]), e["kind"]), mat))

    n = int(manifest["num_target_nodes"])
    labels = np.full(n, -1, dtype=np.int64)
    for line in (root / "labels.tsv").read_text().splitlines():
        if line.strip():
            i, c = (int(v) for v in line.split("\t"))
            labels[i] = c
    codes = {"train": 0, "val": 1, "test": 2}
    split = np.full(n, 2, dtype=np.int8)
    for line in (root / "splits.tsv").read_text().splitlines():
        if line.strip():
            i, name = line.split("\t")
            split[int(i)] = codes[name]
    table = LabelTable(labels, split)
    table.validate(int(manifest["num_classes"]))
    return matrices, table, manifest
