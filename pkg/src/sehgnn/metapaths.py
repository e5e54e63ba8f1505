"""Metapath enumeration over the node-type graph.

A walk step u -> v (aggregate v-features into u-nodes) exists when some
relation connects the two types. Cross-type relations are traversable in
both directions (the reverse adjacency is materialized as a transpose on
demand); same-type relations are traversed only in their declared
orientation, so a directed same-type edge set stays directed unless the
schema also declares the reverse relation. Multiple relations covering the
same ordered type pair are merged into one binary step matrix.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

from .graph import HeteroGraph, Schema
from .sparse import SparseMatrix, merge_binary, row_normalize


@dataclass(frozen=True)
class Metapath:
    types: tuple[str, ...]  # starts at the target type
    kind: str               # "feature" | "label"

    def __post_init__(self):
        if self.kind not in ("feature", "label"):
            raise ValueError(f"bad metapath kind {self.kind!r}")
        if not self.types:
            raise ValueError("empty metapath")
        if self.kind == "label" and (self.hop < 2 or self.types[0] != self.types[-1]):
            raise ValueError("label metapaths must loop back to the target type (hop >= 2)")

    @property
    def hop(self) -> int:
        return len(self.types) - 1

    @property
    def canonical(self) -> str:
        """Concatenated type initials, e.g. ('A','P','A') -> 'APA'."""
        return "".join(t[0].upper() for t in self.types)

    @property
    def path_id(self) -> str:
        """Unique id across kinds ('x:' feature / 'y:' label prefix)."""
        return ("x:" if self.kind == "feature" else "y:") + self.canonical

    def sort_key(self):
        return (self.hop, self.canonical)


@dataclass(frozen=True)
class MetapathSet:
    feature_paths: tuple[Metapath, ...]
    label_paths: tuple[Metapath, ...]

    def all_paths(self) -> tuple[Metapath, ...]:
        return self.feature_paths + self.label_paths


def type_steps(schema: Schema) -> dict[str, tuple[str, ...]]:
    """For each node type u, the sorted types v reachable by one walk step."""
    steps: dict[str, set[str]] = {t: set() for t in schema.type_names}
    for r in schema.relations:
        steps[r.dst].add(r.src)
        if r.src != r.dst:
            steps[r.src].add(r.dst)
    return {u: tuple(sorted(vs)) for u, vs in steps.items()}


def _walks(schema: Schema, start: str, max_hop: int):
    steps = type_steps(schema)
    frontier = [(start,)]
    for _ in range(max_hop):
        nxt = []
        for walk in frontier:
            for v in steps[walk[-1]]:
                nxt.append(walk + (v,))
        yield from nxt
        frontier = nxt


def enumerate_feature_metapaths(schema: Schema, max_hop: int) -> list[Metapath]:
    """All walks from the target type up to max_hop, plus the 0-hop path."""
    if max_hop < 0:
        raise ValueError("max_hop must be >= 0")
    paths = [Metapath((schema.target_type,), "feature")]
    paths += [Metapath(w, "feature") for w in _walks(schema, schema.target_type, max_hop)]
    return sorted(paths, key=Metapath.sort_key)


def enumerate_label_metapaths(schema: Schema, max_hop: int) -> list[Metapath]:
    """All walks of hop 2..max_hop that start and end at the target type."""
    paths = [
        Metapath(w, "label")
        for w in _walks(schema, schema.target_type, max_hop)
        if len(w) >= 3 and w[-1] == schema.target_type
    ]
    return sorted(paths, key=Metapath.sort_key)


def build_metapath_set(schema: Schema, max_hop_features: int, max_hop_labels: int) -> MetapathSet:
    return MetapathSet(
        tuple(enumerate_feature_metapaths(schema, max_hop_features)),
        tuple(enumerate_label_metapaths(schema, max_hop_labels)),
    )


def validate_metapath(schema: Schema, path: Metapath):
    if path.types[0] != schema.target_type:
        raise ValueError(f"metapath {path.canonical} does not start at the target type")
    steps = type_steps(schema)
    for u, v in zip(path.types, path.types[1:]):
        if v not in steps.get(u, ()):
            raise ValueError(f"metapath {path.canonical}: no relation connects {u} -> {v}")


class StepCache:
    """Per-graph cache of step matrices and their row-normalized forms.

    Thread-safe; identical values regardless of which thread computes them
    first, so concurrent precomputation stays deterministic.
    """

    def __init__(self, graph: HeteroGraph):
        self.graph = graph
        self._binary: dict[tuple[str, str], SparseMatrix] = {}
        self._normalized: dict[tuple[str, str], SparseMatrix] = {}
        self._lock = threading.Lock()

    def binary(self, u: str, v: str) -> SparseMatrix:
        """Binary adjacency with u-rows and v-columns (union over relations)."""
        key = (u, v)
        with self._lock:
            if key in self._binary:
                return self._binary[key]
        parts = []
        for r in self.graph.schema.relations:
            if r.dst == u and r.src == v:
                parts.append(self.graph.adjacency[r.name])
            elif r.src == u and r.dst == v and r.src != r.dst:
                parts.append(self.graph.adjacency[r.name].transpose())
        if not parts:
            raise ValueError(f"no relation connects {u} -> {v}")
        mat = merge_binary(parts)
        with self._lock:
            return self._binary.setdefault(key, mat)

    def normalized(self, u: str, v: str) -> SparseMatrix:
        key = (u, v)
        with self._lock:
            if key in self._normalized:
                return self._normalized[key]
        mat = row_normalize(self.binary(u, v))
        with self._lock:
            return self._normalized.setdefault(key, mat)
