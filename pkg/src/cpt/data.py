"""Dataset files, synthetic stochastic-block-model graphs, and class splits.

On-disk format (one dataset = three files):

* edge file: text, one ``u<TAB>v`` pair per line, ``#`` lines ignored;
* feature file: little-endian binary, header ``(num_nodes, feature_dim)`` as
  two uint64, then ``num_nodes * feature_dim`` float32 values, row-major;
* label file: text, one integer class id per line (line i is node i),
  ``-1`` marks an unlabeled node.
"""

import logging
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConsistencyError, InputError, ParseError
from .graph import UNLABELED, ClassSplit, Graph, canonical_edges

log = logging.getLogger(__name__)

FEATURE_HEADER = np.dtype("<u8")
FEATURE_VALUE = np.dtype("<f4")

EDGE_FILE = "edges.tsv"
FEATURE_FILE = "features.bin"
LABEL_FILE = "labels.txt"


def _read_edges(path):
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(path, lineno, f"expected two tab-separated node ids, got {line!r}")
            try:
                u, v = int(parts[0], 10), int(parts[1], 10)
            except ValueError:
                raise ParseError(path, lineno, f"non-integer node id in {line!r}") from None
            if u < 0 or v < 0:
                raise ParseError(path, lineno, "negative node id")
            pairs.append((u, v))
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def _read_labels(path):
    labels = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            try:
                value = int(text, 10)
            except ValueError:
                raise ParseError(path, lineno, f"invalid class id {text!r}") from None
            if value < UNLABELED:
                raise ParseError(path, lineno, f"class id {value} below sentinel -1")
            labels.append(value)
    return np.asarray(labels, dtype=np.int64)


def read_features(path):
    with open(path, "rb") as fh:
        header = fh.read(2 * FEATURE_HEADER.itemsize)
        if len(header) != 2 * FEATURE_HEADER.itemsize:
            raise ParseError(path, 1, "truncated feature header")
        n, d = (int(x) for x in np.frombuffer(header, dtype=FEATURE_HEADER))
        expected = n * d
        body = np.fromfile(fh, dtype=FEATURE_VALUE, count=expected)
        if body.size != expected or fh.read(1):
            raise ConsistencyError(
                f"{path}: header declares {n}x{d} values but body holds a different amount")
    return body.reshape(n, d)


def write_features(path, features):
    features = np.asarray(features)
    n, d = features.shape
    with open(path, "wb") as fh:
        fh.write(np.asarray([n, d], dtype=FEATURE_HEADER).tobytes())
        fh.write(np.ascontiguousarray(features, dtype=FEATURE_VALUE).tobytes())


def load_graph(edge_path, feature_path, label_path) -> Graph:
    features = read_features(feature_path)
    labels = _read_labels(label_path)
    n = features.shape[0]
    if labels.shape[0] != n:
        raise ConsistencyError(
            f"feature file has {n} nodes but label file has {labels.shape[0]} lines")
    pairs = _read_edges(edge_path)
    if pairs.size and pairs.max() >= n:
        raise ConsistencyError(f"edge file references node {int(pairs.max())} but graph has {n} nodes")
    edges, n_dropped = canonical_edges(pairs, n)
    if n_dropped:
        log.warning("%s: dropped %d duplicate or self-loop edge lines", edge_path, n_dropped)
    features.setflags(write=False)
    return Graph(n, edges, features, labels)


def load_dataset_dir(directory) -> Graph:
    d = Path(directory)
    return load_graph(d / EDGE_FILE, d / FEATURE_FILE, d / LABEL_FILE)


def save_graph(graph: Graph, edge_path, feature_path, label_path):
    with open(edge_path, "w", encoding="utf-8") as fh:
        for u, v in graph.edges:
            fh.write(f"{u}\t{v}\n")
    write_features(feature_path, graph.features)
    with open(label_path, "w", encoding="utf-8") as fh:
        for y in graph.labels:
            fh.write(f"{y}\n")


def save_dataset_dir(graph: Graph, directory):
    d = Path(directory)
    os.makedirs(d, exist_ok=True)
    paths = (d / EDGE_FILE, d / FEATURE_FILE, d / LABEL_FILE)
    save_graph(graph, *paths)
    return paths


@dataclass(frozen=True)
class SbmSpec:
    num_classes: int
    nodes_per_class: int
    intra_p: float
    inter_p: float
    feature_dim: int = 16
    feature_noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1 or self.nodes_per_class < 1:
            raise InputError("num_classes and nodes_per_class must be >= 1")
        if not 0.0 <= self.inter_p < self.intra_p <= 1.0:
            raise InputError(
                f"need 0 <= inter_p < intra_p <= 1, got inter_p={self.inter_p}, intra_p={self.intra_p}")
        if self.feature_dim < 1:
            raise InputError("feature_dim must be >= 1")
        if self.feature_noise < 0:
            raise InputError("feature_noise must be non-negative")

    def to_dict(self):
        return asdict(self)


def _sample_pairs(rng, n_pairs, p):
    if n_pairs == 0 or p <= 0.0:
        return np.empty(0, dtype=np.int64)
    if p >= 1.0:
        return np.arange(n_pairs, dtype=np.int64)
    m = rng.binomial(n_pairs, p)
    return np.sort(rng.choice(n_pairs, size=m, replace=False))


def generate_sbm(spec: SbmSpec) -> Graph:
    """Planted-partition graph with noisy one-hot block features.

    Every within-block pair is an edge with probability ``intra_p`` and
    every cross-block pair with ``inter_p``. Block ``c`` gets the signature
    vector ``e_{c mod feature_dim}``.
    """
    rng = np.random.default_rng(spec.seed)
    b, m = spec.num_classes, spec.nodes_per_class
    n = b * m
    labels = np.repeat(np.arange(b, dtype=np.int64), m)

    iu, ju = np.triu_indices(m, k=1)
    chunks = []
    for c in range(b):
        picked = _sample_pairs(rng, iu.size, spec.intra_p)
        chunks.append(np.stack([iu[picked] + c * m, ju[picked] + c * m], axis=1))
    for c1 in range(b):
        for c2 in range(c1 + 1, b):
            picked = _sample_pairs(rng, m * m, spec.inter_p)
            chunks.append(np.stack([picked // m + c1 * m, picked % m + c2 * m], axis=1))
    edges = np.concatenate(chunks, axis=0) if chunks else np.empty((0, 2), dtype=np.int64)

    signature = np.zeros((n, spec.feature_dim), dtype=np.float64)
    signature[np.arange(n), labels % spec.feature_dim] = 1.0
    noise = rng.standard_normal((n, spec.feature_dim)) * spec.feature_noise
    features = (signature + noise).astype(np.float32)
    return Graph(n, edges, features, labels)


def split_classes(graph_or_classes, counts, rng: np.random.Generator) -> ClassSplit:
    """Randomly partition the observed class ids into base/validation/novel sets."""
    if isinstance(graph_or_classes, Graph):
        classes = graph_or_classes.classes
    else:
        classes = np.unique(np.asarray(list(graph_or_classes), dtype=np.int64))
    n_base, n_val, n_novel = (int(c) for c in counts)
    if min(n_base, n_val, n_novel) < 0 or n_base + n_val + n_novel != classes.size:
        raise InputError(
            f"split counts {tuple(counts)} must be non-negative and sum to {classes.size} classes")
    perm = classes[rng.permutation(classes.size)]
    return ClassSplit(
        perm[:n_base].tolist(),
        perm[n_base:n_base + n_val].tolist(),
        perm[n_base + n_val:].tolist(),
    )
