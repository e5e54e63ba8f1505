"""Seeded synthetic heterogeneous graphs with a planted structural signal.

Every node carries a latent community. Edges are community-assortative, and
each target node's class is the weighted majority community of its 2-hop
metapath neighbors (computed through the row-normalized 2-hop composite with
the diagonal removed, ties to the lowest class). Features are
class-conditional Gaussians keyed to a node's own community - except that a
target node's community is re-drawn with probability ``1 - coupling`` before
generating its features, so raw target features only partially predict the
class while the 2-hop structure predicts it almost perfectly. That gap is
the point: models that aggregate neighborhoods beat models that only read
raw features.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError
from .graph import (
    FeatureTable,
    HeteroGraph,
    LabelTable,
    NodeType,
    Relation,
    Schema,
    SPLIT_TEST,
    SPLIT_TRAIN,
    SPLIT_VAL,
)
from .sparse import SparseMatrix, rm_diag, row_normalize, sparse_matmul, spmm


@dataclass(frozen=True)
class SynthRelation:
    name: str
    src: str
    dst: str
    avg_out_degree: float
    within_prob: float = 0.9


@dataclass(frozen=True)
class SynthConfig:
    target_type: str = "P"
    node_counts: dict = field(default_factory=lambda: {"P": 2000, "A": 300, "S": 40})
    feature_dims: dict = field(default_factory=lambda: {"P": 24, "A": 12, "S": 8})
    relations: tuple = (
        SynthRelation("pa", "P", "A", 3.0),
        SynthRelation("ps", "P", "S", 1.5),
        SynthRelation("pp", "P", "P", 3.0),
    )
    num_classes: int = 3
    coupling: float = 0.5       # P(target features keyed to its true community)
    feature_noise: float = 1.0
    split_fractions: tuple = (0.24, 0.06, 0.70)
    edge_multiplier: float = 1.0
    label_intermediate: str = "A"  # 2-hop label path runs target -> this -> target

    def schema(self) -> Schema:
        return Schema(
            node_types=tuple(
                NodeType(name, int(self.node_counts[name]), int(self.feature_dims[name]))
                for name in sorted(self.node_counts)
            ),
            relations=tuple(Relation(r.name, r.src, r.dst) for r in self.relations),
            target_type=self.target_type,
            num_classes=self.num_classes,
        )


def with_target_nodes(cfg: SynthConfig, n: int) -> SynthConfig:
    counts = dict(cfg.node_counts)
    old = counts[cfg.target_type]
    for name in counts:
        counts[name] = max(4, int(round(counts[name] * n / old)))
    counts[cfg.target_type] = n
    return replace(cfg, node_counts=counts)


def _sample_edges(rng, n_src, n_dst, comm_src, comm_dst, num_classes, avg_deg, within_prob, same_type):
    """Per-source Poisson degrees; each edge picks a same-community destination
    with probability within_prob, otherwise any destination."""
    by_comm = [np.nonzero(comm_dst == c)[0] for c in range(num_classes)]
    src_ids, dst_ids = [], []
    degrees = rng.poisson(avg_deg, size=n_src)
    for s in range(n_src):
        k = degrees[s]
        if k == 0:
            continue
        pool = by_comm[comm_src[s]]
        within = rng.random(k) < within_prob
        for w in within.tolist():
            if w and pool.size:
                d = int(pool[rng.integers(pool.size)])
            else:
                d = int(rng.integers(n_dst))
            if same_type and d == s:
                continue
            src_ids.append(s)
            dst_ids.append(d)
    return np.asarray(src_ids, np.int64), np.asarray(dst_ids, np.int64)


def gen_synthetic(cfg: SynthConfig, seed: int) -> HeteroGraph:
    """Deterministic for a fixed (cfg, seed); every target node ends up labeled."""
    schema = cfg.schema()
    tgt = cfg.target_type
    for r in cfg.relations:
        if tgt in (r.src, r.dst) and r.avg_out_degree * cfg.edge_multiplier <= 0:
            raise DataError(
                f"relation {r.name!r} touches the target type but expects zero edges"
            )

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EB6]))
    c = cfg.num_classes

    comm = {name: rng.integers(0, c, size=schema.count(name)) for name in sorted(cfg.node_counts)}

    adjacency = {}
    for r in cfg.relations:
        src_ids, dst_ids = _sample_edges(
            rng,
            schema.count(r.src),
            schema.count(r.dst),
            comm[r.src],
            comm[r.dst],
            c,
            r.avg_out_degree * cfg.edge_multiplier,
            r.within_prob,
            same_type=r.src == r.dst,
        )
        adjacency[r.name] = SparseMatrix.from_coo(
            schema.count(r.dst), schema.count(r.src), dst_ids, src_ids, dedup=True
        )

    # feature community of target nodes: coupled to the true community only
    # with probability `coupling`
    z = comm[tgt].copy()
    redraw = rng.random(z.size) >= cfg.coupling
    z[redraw] = rng.integers(0, c, size=int(redraw.sum()))

    labels = _planted_labels(cfg, schema, adjacency, comm)

    features = {}
    for name in sorted(cfg.node_counts):
        dim = schema.feature_dim(name)
        means = rng.standard_normal((c, dim))
        keyed = z if name == tgt else comm[name]
        mat = means[keyed] + cfg.feature_noise * rng.standard_normal((schema.count(name), dim))
        # quantize to f32 so the .bin feature format round-trips exactly
        features[name] = FeatureTable(name, mat.astype(np.float32).astype(np.float64))

    split = _stratified_split(rng, labels, cfg.split_fractions)
    return HeteroGraph(schema, adjacency, features, LabelTable(labels, split))


def _planted_labels(cfg, schema, adjacency, comm) -> np.ndarray:
    """Weighted majority community of 2-hop neighbors via target->mid->target."""
    tgt, mid = cfg.target_type, cfg.label_intermediate
    out_step, back_step = None, None
    for r in cfg.relations:
        mat = adjacency[r.name]
        if r.src == tgt and r.dst == mid:
            out_step, back_step = mat.transpose(), mat
        elif r.src == mid and r.dst == tgt:
            out_step, back_step = mat, mat.transpose()
    if out_step is None:
        raise DataError(f"no relation connects {tgt!r} and {cfg.label_intermediate!r}")
    composite = rm_diag(sparse_matmul(row_normalize(out_step), row_normalize(back_step)))
    onehot = np.zeros((schema.count(tgt), cfg.num_classes))
    onehot[np.arange(comm[tgt].size), comm[tgt]] = 1.0
    votes = spmm(composite, onehot)
    labels = np.argmax(votes, axis=1).astype(np.int64)
    isolated = votes.sum(axis=1) == 0
    labels[isolated] = comm[tgt][isolated]
    return labels


def _stratified_split(rng, labels, fractions) -> np.ndarray:
    f_train, f_val, _ = fractions
    split = np.full(labels.size, SPLIT_TEST, dtype=np.int8)
    for cls in np.unique(labels):
        ids = rng.permutation(np.nonzero(labels == cls)[0])
        n = ids.size
        n_train = min(max(1, int(round(f_train * n))), n)
        n_val = min(max(1, int(round(f_val * n))), n - n_train) if n - n_train > 0 else 0
        split[ids[:n_train]] = SPLIT_TRAIN
        split[ids[n_train:n_train + n_val]] = SPLIT_VAL
    return split
