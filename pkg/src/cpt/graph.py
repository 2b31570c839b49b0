"""Attributed graph, propagation operator, and DropEdge."""

from dataclasses import dataclass
from functools import cached_property
from typing import FrozenSet

import numpy as np

from . import _kernels
from .errors import InputError

UNLABELED = -1


def _frozen(arr):
    # already-frozen arrays are shared, so derived graphs do not copy features
    if isinstance(arr, np.ndarray) and not arr.flags.writeable and arr.base is None:
        return arr
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


def canonical_edges(pairs, num_nodes=None):
    """Canonicalise an iterable of node pairs.

    Returns ``(edges, n_dropped)`` where ``edges`` is a sorted ``(E, 2)``
    int64 array with ``u < v`` per row and ``n_dropped`` counts the
    duplicates and self-loops that were removed.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    raw = pairs.shape[0]
    if num_nodes is not None and raw and (pairs.min() < 0 or pairs.max() >= num_nodes):
        raise InputError(f"edge endpoint out of range [0, {num_nodes})")
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    keep = lo != hi
    both = np.stack([lo[keep], hi[keep]], axis=1)
    if both.shape[0]:
        both = np.unique(both, axis=0)
    return both.reshape(-1, 2), raw - both.shape[0]


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected attributed graph.

    ``edges`` holds each undirected edge once as ``(u, v)`` with ``u < v``,
    sorted lexicographically. ``labels`` uses ``UNLABELED`` (-1) for nodes
    without a class.
    """

    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        n = int(self.num_nodes)
        object.__setattr__(self, "num_nodes", n)
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        feats = np.asarray(self.features)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if feats.ndim != 2 or feats.shape[0] != n:
            raise InputError(f"features must have shape ({n}, d), got {feats.shape}")
        if not np.issubdtype(feats.dtype, np.floating):
            raise InputError(f"features must be floating point, got {feats.dtype}")
        if labels.shape[0] != n:
            raise InputError(f"expected {n} labels, got {labels.shape[0]}")
        if labels.size and labels.min() < UNLABELED:
            raise InputError("labels must be >= 0 or the unlabeled sentinel -1")
        if edges.shape[0]:
            if edges.min() < 0 or edges.max() >= n:
                raise InputError(f"edge endpoint out of range [0, {n})")
            if np.any(edges[:, 0] >= edges[:, 1]):
                raise InputError("edges must be canonical (u < v) and free of self-loops")
            order = np.lexsort((edges[:, 1], edges[:, 0]))
            edges = edges[order]
            if np.any(np.all(edges[1:] == edges[:-1], axis=1)):
                raise InputError("duplicate edges")
        object.__setattr__(self, "edges", _frozen(edges))
        object.__setattr__(self, "features", _frozen(feats))
        object.__setattr__(self, "labels", _frozen(labels))

    @classmethod
    def from_pairs(cls, num_nodes, pairs, features, labels):
        edges, _ = canonical_edges(pairs, num_nodes)
        return cls(num_nodes, edges, features, labels)

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    @cached_property
    def degrees(self) -> np.ndarray:
        deg = np.bincount(self.edges.reshape(-1), minlength=self.num_nodes)
        deg.setflags(write=False)
        return deg

    @cached_property
    def classes(self) -> np.ndarray:
        """Sorted distinct class ids among labeled nodes."""
        return np.unique(self.labels[self.labels != UNLABELED])

    @cached_property
    def nodes_by_class(self) -> dict:
        out = {}
        for c in self.classes:
            idx = np.flatnonzero(self.labels == c)
            idx.setflags(write=False)
            out[int(c)] = idx
        return out

    def with_edges(self, edges) -> "Graph":
        return Graph(self.num_nodes, edges, self.features, self.labels)


@dataclass(frozen=True)
class ClassSplit:
    base_classes: FrozenSet[int]
    validation_classes: FrozenSet[int]
    novel_classes: FrozenSet[int]

    def __post_init__(self):
        for name in ("base_classes", "validation_classes", "novel_classes"):
            object.__setattr__(self, name, frozenset(int(c) for c in getattr(self, name)))
        b, v, n = self.base_classes, self.validation_classes, self.novel_classes
        if b & v or b & n or v & n:
            raise InputError("class split sets must be pairwise disjoint")

    def all_classes(self):
        return self.base_classes | self.validation_classes | self.novel_classes

    def to_dict(self):
        return {
            "base": sorted(self.base_classes),
            "validation": sorted(self.validation_classes),
            "novel": sorted(self.novel_classes),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["base"], d["validation"], d["novel"])


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    """CSR form of D~^-1/2 (A + I) D~^-1/2. Symmetric, so it is its own transpose."""

    num_nodes: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    def matmul(self, dense):
        return _kernels.spmm(self.indptr, self.indices, self.data, dense)

    __matmul__ = matmul

    def diagonal(self):
        rows = np.repeat(np.arange(self.num_nodes), np.diff(self.indptr))
        return self.data[rows == self.indices]

    def to_dense(self):
        out = np.zeros((self.num_nodes, self.num_nodes))
        rows = np.repeat(np.arange(self.num_nodes), np.diff(self.indptr))
        out[rows, self.indices] = self.data
        return out


def degree(graph: Graph, node: int) -> int:
    """Number of edges incident to ``node``."""
    if not 0 <= node < graph.num_nodes:
        raise InputError(f"node {node} out of range [0, {graph.num_nodes})")
    return int(graph.degrees[node])


def normalize_adjacency(graph: Graph) -> NormalizedAdjacency:
    indptr, indices, data = _kernels.norm_adj(graph.num_nodes, graph.edges)
    for a in (indptr, indices, data):
        a.setflags(write=False)
    return NormalizedAdjacency(graph.num_nodes, indptr, indices, data)


def dropped_edge_count(n_edges: int, beta: float) -> int:
    return int(np.floor(beta * n_edges + 0.5))


def drop_edges(graph: Graph, beta: float, rng: np.random.Generator) -> Graph:
    """Remove exactly ``round(beta * |E|)`` edges chosen uniformly without replacement.

    Halves round up. The input graph is left untouched.
    """
    if not 0.0 <= beta <= 1.0:
        raise InputError(f"beta must lie in [0, 1], got {beta}")
    n_edges = graph.num_edges
    n_drop = dropped_edge_count(n_edges, beta)
    if n_drop == 0:
        return graph.with_edges(graph.edges)
    gone = rng.choice(n_edges, size=n_drop, replace=False)
    keep = np.ones(n_edges, dtype=bool)
    keep[gone] = False
    return graph.with_edges(graph.edges[keep])
