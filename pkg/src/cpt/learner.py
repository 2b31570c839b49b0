"""Episode losses and meta-updates.

Two learners share the encoder:

* ``prototypical``: logits are negative squared distances from query
  embeddings to per-class support means; parameters get a plain descent
  step on the query loss.
* ``fomaml``: the first ``n_way`` embedding columns are class logits; the
  support loss drives ``inner_steps`` adaptation steps and the query loss
  gradient at the adapted parameters is applied to the original ones
  (first-order MAML).
"""

from dataclasses import asdict, dataclass

import numpy as np

from .encoder import EncoderParams, encode, encode_backward
from .errors import CPTError, ConfigurationError, InputError, NumericalError

LEARNERS = ("prototypical", "fomaml")


@dataclass(frozen=True)
class MetaConfig:
    alpha1: float = 0.01
    alpha2: float = 0.01
    learner_kind: str = "prototypical"
    inner_steps: int = 1
    gamma: float = 1.0

    def __post_init__(self):
        if self.alpha1 <= 0 or self.alpha2 <= 0:
            raise ConfigurationError("alpha1 and alpha2 must be positive")
        if self.learner_kind not in LEARNERS:
            raise ConfigurationError(f"unknown learner_kind {self.learner_kind!r}; expected one of {LEARNERS}")
        if self.inner_steps < 1:
            raise ConfigurationError("inner_steps must be >= 1")

    def to_dict(self):
        return asdict(self)


def softmax_probs(logits):
    logits = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(logits).all():
        raise NumericalError("softmax received non-finite logits")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(logits).all():
        raise NumericalError("softmax received non-finite logits")
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(probs, local_labels):
    """Summed cross-entropy and its gradient with respect to the logits (Z - Y)."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(local_labels, dtype=np.int64)
    n_way = probs.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_way):
        raise InputError(f"labels must lie in [0, {n_way})")
    rows = np.arange(labels.size)
    picked = probs[rows, labels]
    loss = float(-np.sum(np.log(np.maximum(picked, np.finfo(np.float64).tiny))))
    grad = probs.copy()
    grad[rows, labels] -= 1.0
    return loss, grad


def _ce_from_logits(logits, labels):
    logp = log_softmax(logits)
    rows = np.arange(labels.size)
    loss = float(-logp[rows, labels].sum())
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return loss, grad


def _accuracy(logits, labels):
    # np.argmax breaks ties toward the lowest class index
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def prototypes(embeddings, task):
    s = embeddings[task.support_nodes]
    n_way = task.n_way
    counts = np.bincount(task.support_labels, minlength=n_way)
    if np.any(counts == 0):
        raise CPTError("a class has no support nodes")
    sums = np.zeros((n_way, embeddings.shape[1]))
    np.add.at(sums, task.support_labels, s)
    return sums / counts[:, None], counts


def proto_logits(embeddings, task):
    protos, _ = prototypes(embeddings, task)
    q = embeddings[task.query_nodes]
    diff = q[:, None, :] - protos[None, :, :]
    return -np.einsum("qnd,qnd->qn", diff, diff)


def proto_episode_loss(embeddings, task):
    """Prototypical-head loss on the query set.

    Returns ``(loss, accuracy, grad_embeddings)`` with the gradient covering
    every node row (zero for nodes outside the episode).
    """
    E = np.asarray(embeddings, dtype=np.float64)
    protos, counts = prototypes(E, task)
    q = E[task.query_nodes]
    diff = q[:, None, :] - protos[None, :, :]
    logits = -np.einsum("qnd,qnd->qn", diff, diff)
    loss, g = _ce_from_logits(logits, task.query_labels)
    acc = _accuracy(logits, task.query_labels)

    # logits[i, j] = -|q_i - c_j|^2
    grad_q = -2.0 * np.einsum("qn,qnd->qd", g, diff)
    grad_c = 2.0 * np.einsum("qn,qnd->nd", g, diff)
    grad = np.zeros_like(E)
    np.add.at(grad, task.query_nodes, grad_q)
    np.add.at(grad, task.support_nodes, grad_c[task.support_labels] / counts[task.support_labels, None])
    return loss, acc, grad


def linear_episode_loss(embeddings, nodes, labels, n_way):
    """Cross-entropy with the first ``n_way`` embedding columns as logits."""
    E = np.asarray(embeddings, dtype=np.float64)
    if E.shape[1] < n_way:
        raise ConfigurationError(f"embed_dim {E.shape[1]} < n_way {n_way}; fomaml needs one column per class")
    logits = E[nodes, :n_way]
    loss, g = _ce_from_logits(logits, labels)
    acc = _accuracy(logits, labels)
    grad = np.zeros_like(E)
    np.add.at(grad[:, :n_way], nodes, g)
    return loss, acc, grad


def inner_step(params: EncoderParams, grads, alpha1) -> EncoderParams:
    """One task-adaptation step; returns a new parameter set."""
    dW1, dW2 = grads
    return EncoderParams(params.W1 - alpha1 * dW1, params.W2 - alpha1 * dW2)


def outer_step(params: EncoderParams, grads_list, alpha2) -> EncoderParams:
    """Meta-update with the summed first-order task gradients."""
    grads_list = list(grads_list)
    if not grads_list:
        raise InputError("outer_step needs at least one task gradient")
    g1 = sum(g[0] for g in grads_list)
    g2 = sum(g[1] for g in grads_list)
    return EncoderParams(params.W1 - alpha2 * g1, params.W2 - alpha2 * g2)


def proto_task_gradient(adj, features, params, task, gamma=1.0, dropout=0.0, rng=None):
    """Loss, accuracy and parameter gradient of one prototypical episode."""
    emb, cache = encode(adj, features, params, dropout, rng)
    loss, acc, g = proto_episode_loss(emb, task)
    grads = encode_backward(gamma * g, cache, adj, params)
    return gamma * loss, acc, grads


def fomaml_adapt(adj, features, params, task, cfg: MetaConfig, dropout=0.0, rng=None):
    """Inner loop on the support set; returns the adapted parameters."""
    adapted = params
    for _ in range(cfg.inner_steps):
        emb, cache = encode(adj, features, adapted, dropout, rng)
        _, _, g = linear_episode_loss(emb, task.support_nodes, task.support_labels, task.n_way)
        adapted = inner_step(adapted, encode_backward(cfg.gamma * g, cache, adj, adapted), cfg.alpha1)
    return adapted


def fomaml_task_gradient(adj, features, params, task, cfg: MetaConfig, dropout=0.0, rng=None):
    """Query loss/accuracy at the adapted parameters and the first-order meta-gradient."""
    adapted = fomaml_adapt(adj, features, params, task, cfg, dropout, rng)
    emb, cache = encode(adj, features, adapted, dropout, rng)
    loss, acc, g = linear_episode_loss(emb, task.query_nodes, task.query_labels, task.n_way)
    grads = encode_backward(cfg.gamma * g, cache, adj, adapted)
    return cfg.gamma * loss, acc, grads


def episode_logits(adj, features, params, task, cfg: MetaConfig, embeddings=None):
    """Query logits of one episode with frozen ``params``.

    The prototypical learner reuses ``embeddings`` when given (they do not
    depend on the episode). The fomaml learner adapts a throwaway copy on
    the support set first.
    """
    if cfg.learner_kind == "prototypical":
        if embeddings is None:
            embeddings, _ = encode(adj, features, params)
        return proto_logits(embeddings, task)
    adapted = fomaml_adapt(adj, features, params, task, cfg)
    emb, _ = encode(adj, features, adapted)
    if emb.shape[1] < task.n_way:
        raise ConfigurationError(f"embed_dim {emb.shape[1]} < n_way {task.n_way}; fomaml needs one column per class")
    return emb[task.query_nodes, :task.n_way]


def episode_loss_from_logits(logits, task, gamma=1.0):
    loss, _ = _ce_from_logits(logits, task.query_labels)
    return gamma * loss
