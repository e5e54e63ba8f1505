import numpy as np
import pytest

from sehgnn.graph import (
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
from sehgnn.sparse import SparseMatrix


def rand_csr(rng, n_rows, n_cols, density=0.15, binary=False):
    mask = rng.random((n_rows, n_cols)) < density
    rows, cols = np.nonzero(mask)
    values = None if binary else rng.uniform(0.1, 2.0, size=rows.size)
    return SparseMatrix.from_coo(n_rows, n_cols, rows, cols, values=values)


def assert_canonical(m: SparseMatrix):
    """Re-validate a matrix's structural invariants from its raw arrays."""
    SparseMatrix(m.n_rows, m.n_cols, m.row_offsets, m.col_indices, m.values, validate=True)


def triangle_schema(n_t=12, n_u=9, n_v=7, dims=(5, 4, 3), num_classes=3):
    """Three node types connected in a triangle; target type T."""
    return Schema(
        node_types=(
            NodeType("T", n_t, dims[0]),
            NodeType("U", n_u, dims[1]),
            NodeType("V", n_v, dims[2]),
        ),
        relations=(
            Relation("tu", "T", "U"),
            Relation("uv", "U", "V"),
            Relation("vt", "V", "T"),
        ),
        target_type="T",
        num_classes=num_classes,
    )


def random_hetero(seed, n_t=12, n_u=9, n_v=7, density=0.2, num_classes=3):
    """Small random graph over the triangle schema, fully labeled and split."""
    rng = np.random.default_rng(seed)
    schema = triangle_schema(n_t, n_u, n_v, num_classes=num_classes)
    adjacency = {
        "tu": rand_csr(rng, n_u, n_t, density, binary=True),  # rows dst=U, cols src=T
        "uv": rand_csr(rng, n_v, n_u, density, binary=True),
        "vt": rand_csr(rng, n_t, n_v, density, binary=True),
    }
    features = {
        t.name: FeatureTable(t.name, rng.standard_normal((t.count, t.feature_dim)))
        for t in schema.node_types
    }
    labels = rng.integers(0, num_classes, size=n_t)
    split = np.full(n_t, SPLIT_TEST, dtype=np.int8)
    order = rng.permutation(n_t)
    split[order[: max(2, n_t // 3)]] = SPLIT_TRAIN
    split[order[max(2, n_t // 3): max(3, n_t // 3 + 2)]] = SPLIT_VAL
    return HeteroGraph(schema, adjacency, features, LabelTable(labels, split))


def dblp_like_schema():
    """Author/Paper/Term/Venue with relations A->P, P->T, P->V; target Author."""
    return Schema(
        node_types=(
            NodeType("Author", 11, 4),
            NodeType("Paper", 17, 5),
            NodeType("Term", 8, 3),
            NodeType("Venue", 4, 2),
        ),
        relations=(
            Relation("ap", "Author", "Paper"),
            Relation("pt", "Paper", "Term"),
            Relation("pv", "Paper", "Venue"),
        ),
        target_type="Author",
        num_classes=4,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)
