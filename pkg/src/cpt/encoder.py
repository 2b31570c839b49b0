"""Two-layer graph-convolutional encoder with hand-written gradients.

    embeddings = A_hat @ relu(A_hat @ X @ W1) @ W2

No biases. The relu subgradient at 0 is 0.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import CPTError, InputError, ParseError
from .graph import NormalizedAdjacency

CHECKPOINT_HEADER = np.dtype("<u8")
CHECKPOINT_VALUE = np.dtype("<f8")


@dataclass(frozen=True, eq=False)
class EncoderParams:
    W1: np.ndarray
    W2: np.ndarray

    def __post_init__(self):
        w1 = np.asarray(self.W1, dtype=np.float64)
        w2 = np.asarray(self.W2, dtype=np.float64)
        if w1.ndim != 2 or w2.ndim != 2 or w1.shape[1] != w2.shape[0]:
            raise InputError(f"incompatible weight shapes {w1.shape} and {w2.shape}")
        object.__setattr__(self, "W1", w1)
        object.__setattr__(self, "W2", w2)

    @property
    def feature_dim(self):
        return self.W1.shape[0]

    @property
    def hidden_dim(self):
        return self.W1.shape[1]

    @property
    def embed_dim(self):
        return self.W2.shape[1]

    @property
    def size(self):
        return self.W1.size + self.W2.size

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.W2.ravel()])

    def unflatten(self, flat) -> "EncoderParams":
        """Build params of this shape from a flat vector."""
        flat = np.asarray(flat, dtype=np.float64)
        k = self.W1.size
        return EncoderParams(flat[:k].reshape(self.W1.shape).copy(),
                             flat[k:].reshape(self.W2.shape).copy())

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.W1.copy(), self.W2.copy())

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.W1).all() and np.isfinite(self.W2).all())

    def equals(self, other) -> bool:
        return np.array_equal(self.W1, other.W1) and np.array_equal(self.W2, other.W2)


class ForwardCache(NamedTuple):
    inputs: np.ndarray       # features after dropout, float64
    pre: np.ndarray          # A_hat @ X @ W1
    hidden: np.ndarray       # relu(pre)
    propagated: np.ndarray   # A_hat @ hidden


def glorot(rng, fan_in, fan_out):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def init_params(feature_dim, hidden_dim, embed_dim, rng: np.random.Generator) -> EncoderParams:
    return EncoderParams(glorot(rng, feature_dim, hidden_dim), glorot(rng, hidden_dim, embed_dim))


def feature_dropout(features, rate, rng):
    """Inverted dropout on input features; identity when ``rate == 0``."""
    if rate <= 0.0:
        return features
    if rate >= 1.0:
        raise InputError("dropout rate must be < 1")
    keep = rng.random(features.shape) >= rate
    return features * keep / (1.0 - rate)


def encode(adj: NormalizedAdjacency, features, params: EncoderParams,
           dropout: float = 0.0, rng: Optional[np.random.Generator] = None):
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.feature_dim:
        raise InputError(f"features of shape {X.shape} do not match W1 rows {params.feature_dim}")
    if X.shape[0] != adj.num_nodes:
        raise InputError(f"{X.shape[0]} feature rows for a {adj.num_nodes}-node adjacency")
    if dropout > 0.0:
        if rng is None:
            raise InputError("dropout requires a random generator")
        X = feature_dropout(X, dropout, rng)
    pre = adj @ (X @ params.W1)
    hidden = np.maximum(pre, 0.0)
    propagated = adj @ hidden
    return propagated @ params.W2, ForwardCache(X, pre, hidden, propagated)


def encode_backward(grad_embeddings, cache: ForwardCache, adj: NormalizedAdjacency,
                    params: EncoderParams):
    """Reverse-mode gradients ``(dW1, dW2)`` of the encoder, using A_hat^T = A_hat."""
    G = np.asarray(grad_embeddings, dtype=np.float64)
    if G.shape != (cache.propagated.shape[0], params.embed_dim):
        raise CPTError(f"gradient of shape {G.shape} does not match encoder output")
    if cache.pre.shape[1] != params.hidden_dim:
        raise CPTError("forward cache does not belong to these parameters")
    dW2 = cache.propagated.T @ G
    d_hidden = adj @ (G @ params.W2.T)
    d_pre = np.where(cache.pre > 0.0, d_hidden, 0.0)
    dW1 = cache.inputs.T @ (adj @ d_pre)
    return dW1, dW2


def save_checkpoint(path, params: EncoderParams, flags: int = 0):
    header = np.asarray([params.feature_dim, params.hidden_dim, params.embed_dim, flags],
                        dtype=CHECKPOINT_HEADER)
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        fh.write(np.ascontiguousarray(params.W1, dtype=CHECKPOINT_VALUE).tobytes())
        fh.write(np.ascontiguousarray(params.W2, dtype=CHECKPOINT_VALUE).tobytes())


def load_checkpoint(path):
    """Return ``(params, flags)`` read from a checkpoint file."""
    with open(path, "rb") as fh:
        raw = fh.read(4 * CHECKPOINT_HEADER.itemsize)
        if len(raw) != 4 * CHECKPOINT_HEADER.itemsize:
            raise ParseError(path, 1, "truncated checkpoint header")
        f, h, e, flags = (int(x) for x in np.frombuffer(raw, dtype=CHECKPOINT_HEADER))
        w1 = np.fromfile(fh, dtype=CHECKPOINT_VALUE, count=f * h)
        w2 = np.fromfile(fh, dtype=CHECKPOINT_VALUE, count=h * e)
        if w1.size != f * h or w2.size != h * e or fh.read(1):
            raise ParseError(path, 1, f"checkpoint body does not match header ({f}, {h}, {e})")
    return EncoderParams(w1.reshape(f, h).astype(np.float64), w2.reshape(h, e).astype(np.float64)), flags
