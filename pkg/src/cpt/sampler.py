"""N-way K-shot episode construction."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError
from .graph import Graph


@dataclass(frozen=True, eq=False)
class EpisodeTask:
    """One episode. Local label ``j`` stands for ``class_list[j]``."""

    class_list: tuple
    support_nodes: np.ndarray
    support_labels: np.ndarray
    query_nodes: np.ndarray
    query_labels: np.ndarray

    @property
    def n_way(self) -> int:
        return len(self.class_list)

    @property
    def support(self):
        return list(zip(self.support_nodes.tolist(), self.support_labels.tolist()))

    @property
    def query(self):
        return list(zip(self.query_nodes.tolist(), self.query_labels.tolist()))

    def __eq__(self, other):
        if not isinstance(other, EpisodeTask):
            return NotImplemented
        return (self.class_list == other.class_list
                and np.array_equal(self.support_nodes, other.support_nodes)
                and np.array_equal(self.support_labels, other.support_labels)
                and np.array_equal(self.query_nodes, other.query_nodes)
                and np.array_equal(self.query_labels, other.query_labels))


def sample_task(graph: Graph, pool, n_way: int, k_shot: int, r_query: int,
                rng: np.random.Generator) -> EpisodeTask:
    """Draw ``n_way`` classes from ``pool``, then ``k_shot + r_query`` nodes per class.

    Nodes are drawn without replacement within a class; the first
    ``k_shot`` go to the support set and the next ``r_query`` to the query
    set. Support is ordered class by class, and so is the query set.
    """
    if n_way < 1 or k_shot < 1 or r_query < 1:
        raise ConfigurationError(
            f"n_way, k_shot and r_query must be >= 1 (got {n_way}, {k_shot}, {r_query})")
    pool = np.sort(np.fromiter((int(c) for c in pool), dtype=np.int64))
    if pool.size < n_way:
        raise ConfigurationError(
            f"class pool has {pool.size} classes, fewer than n_way={n_way}")
    chosen = rng.choice(pool, size=n_way, replace=False)
    per_class = k_shot + r_query
    s_nodes = np.empty(n_way * k_shot, dtype=np.int64)
    q_nodes = np.empty(n_way * r_query, dtype=np.int64)
    by_class = graph.nodes_by_class
    for j, c in enumerate(chosen):
        members = by_class.get(int(c))
        if members is None or members.size < per_class:
            have = 0 if members is None else members.size
            raise DataError(
                f"class {int(c)} has {have} labeled nodes, needs k_shot + r_query = {per_class}")
        picked = rng.choice(members, size=per_class, replace=False)
        s_nodes[j * k_shot:(j + 1) * k_shot] = picked[:k_shot]
        q_nodes[j * r_query:(j + 1) * r_query] = picked[k_shot:]
    return EpisodeTask(
        class_list=tuple(int(c) for c in chosen),
        support_nodes=s_nodes,
        support_labels=np.repeat(np.arange(n_way, dtype=np.int64), k_shot),
        query_nodes=q_nodes,
        query_labels=np.repeat(np.arange(n_way, dtype=np.int64), r_query),
    )
