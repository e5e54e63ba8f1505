"""Typed heterogeneous graph storage and dataset I/O.

On-disk dataset layout (one directory per dataset):

    schema.json         node types (name/count/feature_dim), relations
                        (name/src/dst), target_type, num_classes
    edges/<rel>.tsv     one edge per line: "<src_id>\\t<dst_id>" (0-based,
                        per-type local ids, in the relation's declared
                        src -> dst direction)
    features/<T>.tsv    one row of feature values per node, or
    features/<T>.bin    u64-LE row count, u64-LE col count, f32-LE row-major body
    labels.tsv          "<node_id>\\t<class_id>" for labeled target nodes
    splits.tsv          "<node_id>\\t<train|val|test>" for every target node

A relation named r with source type s and target type t is stored as a
binary CSR matrix of shape (count(t), count(s)): entry (d, q) = 1 for each
edge q -> d. Node types without a feature file get seeded random features of
the dimension declared in the schema.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .sparse import SparseMatrix

logger = logging.getLogger(__name__)

SPLIT_TRAIN, SPLIT_VAL, SPLIT_TEST = 0, 1, 2
_SPLIT_NAMES = {"train": SPLIT_TRAIN, "val": SPLIT_VAL, "test": SPLIT_TEST}
_SPLIT_CODES = {v: k for k, v in _SPLIT_NAMES.items()}
UNLABELED = -1


@dataclass(frozen=True)
class NodeType:
    name: str
    count: int
    feature_dim: int


@dataclass(frozen=True)
class Relation:
    name: str
    src: str
    dst: str


@dataclass(frozen=True)
class Schema:
    node_types: tuple[NodeType, ...]
    relations: tuple[Relation, ...]
    target_type: str
    num_classes: int

    def __post_init__(self):
        names = [t.name for t in self.node_types]
        if len(set(names)) != len(names):
            raise DataError("duplicate node type names")
        initials = [t.name[0].upper() for t in self.node_types]
        if len(set(initials)) != len(initials):
            raise DataError("node type initials must be unique (used as metapath ids)")
        if any(t.count < 1 for t in self.node_types):
            raise DataError("every node type needs count >= 1")
        if any(t.feature_dim < 1 for t in self.node_types):
            raise DataError("every node type needs feature_dim >= 1")
        rel_names = [r.name for r in self.relations]
        if len(set(rel_names)) != len(rel_names):
            raise DataError("duplicate relation names")
        for r in self.relations:
            if r.src not in names or r.dst not in names:
                raise DataError(f"relation {r.name!r} references undeclared node type")
        if self.target_type not in names:
            raise DataError(f"target type {self.target_type!r} not declared")
        if self.num_classes < 2:
            raise DataError("num_classes must be >= 2")

    def count(self, type_name: str) -> int:
        return self._by_name[type_name].count

    def feature_dim(self, type_name: str) -> int:
        return self._by_name[type_name].feature_dim

    def initial(self, type_name: str) -> str:
        return type_name[0].upper()

    @property
    def _by_name(self) -> dict[str, NodeType]:
        return {t.name: t for t in self.node_types}

    @property
    def type_names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.node_types)

    @property
    def target_count(self) -> int:
        return self.count(self.target_type)

    def to_dict(self) -> dict:
        return {
            "node_types": [
                {"name": t.name, "count": t.count, "feature_dim": t.feature_dim}
                for t in self.node_types
            ],
            "relations": [{"name": r.name, "src": r.src, "dst": r.dst} for r in self.relations],
            "target_type": self.target_type,
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Schema":
        try:
            return cls(
                node_types=tuple(
                    NodeType(t["name"], int(t["count"]), int(t["feature_dim"]))
                    for t in doc["node_types"]
                ),
                relations=tuple(
                    Relation(r["name"], r["src"], r["dst"]) for r in doc["relations"]
                ),
                target_type=doc["target_type"],
                num_classes=int(doc["num_classes"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed schema document: {exc}") from exc


@dataclass
class FeatureTable:
    node_type: str
    matrix: np.ndarray  # (node_count, feature_dim) float64

    def __post_init__(self):
        self.matrix = np.ascontiguousarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise DataError(f"feature table for {self.node_type!r} must be 2-D")
        if not np.all(np.isfinite(self.matrix)):
            raise DataError(f"non-finite feature value for type {self.node_type!r}")


@dataclass
class LabelTable:
    labels: np.ndarray  # (n_target,) int64, UNLABELED for missing
    split: np.ndarray   # (n_target,) int8 of SPLIT_* codes

    def __post_init__(self):
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        self.split = np.ascontiguousarray(self.split, dtype=np.int8)
        if self.labels.shape != self.split.shape or self.labels.ndim != 1:
            raise DataError("labels and split must be 1-D arrays of equal length")

    def mask(self, split_code: int) -> np.ndarray:
        return self.split == split_code

    def indices(self, split_code: int) -> np.ndarray:
        return np.nonzero(self.split == split_code)[0]

    def train_onehot(self, num_classes: int) -> np.ndarray:
        """One-hot label rows for train nodes, zero rows everywhere else."""
        out = np.zeros((self.labels.shape[0], num_classes), dtype=np.float64)
        tr = self.indices(SPLIT_TRAIN)
        out[tr, self.labels[tr]] = 1.0
        return out

    def validate(self, num_classes: int):
        lab = self.labels
        known = lab != UNLABELED
        if known.any() and (lab[known].min() < 0 or lab[known].max() >= num_classes):
            raise DataError("class id out of range")
        for code in (SPLIT_TRAIN, SPLIT_VAL):
            if np.any(lab[self.mask(code)] == UNLABELED):
                raise DataError(f"every {_SPLIT_CODES[code]} node must be labeled")


@dataclass
class HeteroGraph:
    schema: Schema
    adjacency: dict[str, SparseMatrix] = field(default_factory=dict)
    features: dict[str, FeatureTable] = field(default_factory=dict)
    labels: LabelTable | None = None

    def __post_init__(self):
        s = self.schema
        for r in s.relations:
            a = self.adjacency.get(r.name)
            if a is None:
                raise DataError(f"missing adjacency for relation {r.name!r}")
            want = (s.count(r.dst), s.count(r.src))
            if a.shape != want:
                raise DataError(f"adjacency {r.name!r} has shape {a.shape}, expected {want}")
        for t in s.node_types:
            f = self.features.get(t.name)
            if f is None:
                raise DataError(f"missing features for type {t.name!r}")
            if f.matrix.shape != (t.count, t.feature_dim):
                raise DataError(
                    f"features for {t.name!r} have shape {f.matrix.shape}, "
                    f"expected {(t.count, t.feature_dim)}"
                )
        if not any(s.target_type in (r.src, r.dst) for r in s.relations):
            raise DataError("no relation incident to the target type")
        if self.labels is not None:
            if self.labels.labels.shape[0] != s.target_count:
                raise DataError("label table length does not match target node count")
            self.labels.validate(s.num_classes)

    @property
    def num_edges(self) -> int:
        return sum(a.nnz for a in self.adjacency.values())


def content_hash(graph: HeteroGraph) -> str:
    """Stable hex digest of the full graph content (schema, edges, features, labels)."""
    h = hashlib.sha256()
    h.update(json.dumps(graph.schema.to_dict(), sort_keys=True).encode())
    for r in graph.schema.relations:
        a = graph.adjacency[r.name]
        h.update(r.name.encode())
        h.update(a.row_offsets.tobytes())
        h.update(a.col_indices.tobytes())
        h.update(a.values.tobytes())
    for t in graph.schema.node_types:
        h.update(t.name.encode())
        h.update(graph.features[t.name].matrix.tobytes())
    if graph.labels is not None:
        h.update(graph.labels.labels.tobytes())
        h.update(graph.labels.split.tobytes())
    return h.hexdigest()


def _require(path: Path) -> Path:
    if not path.exists():
        raise DataError(f"missing file: {path}")
    return path


def _load_edges(path: Path, n_src: int, n_dst: int, rel: Relation, drop_self_loops: bool) -> SparseMatrix:
    src, dst = [], []
    with path.open() as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{ln}: expected two tab-separated ids")
            try:
                s, d = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise DataError(f"{path}:{ln}: non-integer id") from exc
            if not (0 <= s < n_src) or not (0 <= d < n_dst):
                raise DataError(f"{path}:{ln}: node id out of range")
            src.append(s)
            dst.append(d)
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if drop_self_loops and rel.src == rel.dst and src.size:
        keep = src != dst
        dropped = int(src.size - keep.sum())
        if dropped:
            logger.warning("relation %s: dropped %d self-loop(s)", rel.name, dropped)
        src, dst = src[keep], dst[keep]
    # matrix rows are destination nodes, columns are source nodes
    mat = SparseMatrix.from_coo(n_dst, n_src, dst, src, dedup=True)
    if mat.nnz < src.size:
        logger.warning("relation %s: deduplicated %d repeated edge(s)", rel.name, src.size - mat.nnz)
    return mat


def _load_features_bin(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < 16:
        raise DataError(f"{path}: truncated header")
    rows, cols = struct.unpack("<QQ", raw[:16])
    body = np.frombuffer(raw, dtype="<f4", offset=16)
    if body.size != rows * cols:
        raise DataError(f"{path}: body size does not match header ({rows}x{cols})")
    return body.reshape(rows, cols).astype(np.float64)


def _load_features_tsv(path: Path) -> np.ndarray:
    try:
        return np.loadtxt(path, dtype=np.float64, delimiter="\t", ndmin=2)
    except ValueError as exc:
        raise DataError(f"{path}: malformed feature table: {exc}") from exc


def _random_features(type_name: str, count: int, dim: int) -> np.ndarray:
    """Seeded stand-in features for node types that ship without any."""
    seed = int.from_bytes(hashlib.sha256(type_name.encode()).digest()[:8], "little")
    rng = np.random.default_rng(seed)
    return rng.standard_normal((count, dim))


def load_graph(dataset_dir) -> HeteroGraph:
    """Load a dataset directory into an in-memory graph.

    Deterministic: repeated loads of the same directory produce identical
    graphs (including the filled-in features of featureless node types).
    """
    root = Path(dataset_dir)
    doc = json.loads(_require(root / "schema.json").read_text())
    schema = Schema.from_dict(doc)

    adjacency = {}
    for r in schema.relations:
        path = _require(root / "edges" / f"{r.name}.tsv")
        adjacency[r.name] = _load_edges(
            path, schema.count(r.src), schema.count(r.dst), r, drop_self_loops=True
        )

    features = {}
    for t in schema.node_types:
        bin_path = root / "features" / f"{t.name}.bin"
        tsv_path = root / "features" / f"{t.name}.tsv"
        if bin_path.exists():
            mat = _load_features_bin(bin_path)
        elif tsv_path.exists():
            mat = _load_features_tsv(tsv_path)
        else:
            logger.info("type %s has no feature file; using seeded random features", t.name)
            mat = _random_features(t.name, t.count, t.feature_dim)
        if mat.shape != (t.count, t.feature_dim):
            raise DataError(
                f"features for {t.name!r} have shape {mat.shape}, "
                f"expected {(t.count, t.feature_dim)}"
            )
        features[t.name] = FeatureTable(t.name, mat)

    n = schema.target_count
    labels = np.full(n, UNLABELED, dtype=np.int64)
    for ln, line in enumerate(_require(root / "labels.tsv").read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            i, c = (int(v) for v in line.split("\t"))
        except ValueError as exc:
            raise DataError(f"labels.tsv:{ln}: malformed line") from exc
        if not 0 <= i < n:
            raise DataError(f"labels.tsv:{ln}: node id out of range")
        if not 0 <= c < schema.num_classes:
            raise DataError(f"labels.tsv:{ln}: class id {c} out of range")
        labels[i] = c

    split = np.full(n, SPLIT_TEST, dtype=np.int8)
    for ln, line in enumerate(_require(root / "splits.tsv").read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or parts[1] not in _SPLIT_NAMES:
            raise DataError(f"splits.tsv:{ln}: malformed line")
        i = int(parts[0])
        if not 0 <= i < n:
            raise DataError(f"splits.tsv:{ln}: node id out of range")
        split[i] = _SPLIT_NAMES[parts[1]]

    return HeteroGraph(schema, adjacency, features, LabelTable(labels, split))


def save_graph(graph: HeteroGraph, dataset_dir):
    """Write a graph as a dataset directory (features in .bin format)."""
    if graph.labels is None:
        raise DataError("cannot save a graph without labels")
    root = Path(dataset_dir)
    (root / "edges").mkdir(parents=True, exist_ok=True)
    (root / "features").mkdir(exist_ok=True)
    root.joinpath("schema.json").write_text(json.dumps(graph.schema.to_dict(), indent=2) + "\n")

    for r in graph.schema.relations:
        a = graph.adjacency[r.name]
        dst = a._expand_rows()
        lines = [f"{s}\t{d}" for d, s in zip(dst.tolist(), a.col_indices.tolist())]
        root.joinpath("edges", f"{r.name}.tsv").write_text("\n".join(lines) + ("\n" if lines else ""))

    for t in graph.schema.node_types:
        mat = graph.features[t.name].matrix.astype("<f4")
        with root.joinpath("features", f"{t.name}.bin").open("wb") as fh:
            fh.write(struct.pack("<QQ", mat.shape[0], mat.shape[1]))
            fh.write(mat.tobytes(order="C"))

    lab = graph.labels
    lines = [f"{i}\t{c}" for i, c in enumerate(lab.labels.tolist()) if c != UNLABELED]
    root.joinpath("labels.tsv").write_text("\n".join(lines) + "\n")
    lines = [f"{i}\t{_SPLIT_CODES[c]}" for i, c in enumerate(lab.split.tolist())]
    root.joinpath("splits.tsv").write_text("\n".join(lines) + "\n")
