"""Central finite-difference gradient checking."""

import numpy as np

from .encoder import EncoderParams, encode, encode_backward, init_params
from .errors import NumericalError
from .graph import Graph, normalize_adjacency
from .learner import proto_episode_loss
from .sampler import sample_task


def numerical_gradient(f, theta, epsilon=1e-5):
    theta = np.array(theta, dtype=np.float64)
    grad = np.empty_like(theta)
    flat = theta.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + epsilon
        fp = f(theta)
        flat[i] = old - epsilon
        fm = f(theta)
        flat[i] = old
        g[i] = (fp - fm) / (2.0 * epsilon)
    return grad


def grad_check(loss_fn, theta, epsilon=1e-5, floor=1e-6, pattern_fn=None):
    """Worst coordinatewise relative error between analytic and numeric gradients.

    ``loss_fn(theta) -> (loss, grad)`` over a flat parameter vector. The
    relative error of coordinate i is ``|a_i - n_i| / max(|a_i|, |n_i|, floor)``.

    ``pattern_fn(theta)``, if given, returns the activation pattern of any
    piecewise-linear units; coordinates whose +/- epsilon probes change the
    pattern straddle a kink and are skipped.
    """
    theta = np.array(theta, dtype=np.float64).reshape(-1)
    loss, analytic = loss_fn(theta)
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    if not np.isfinite(loss) or not np.isfinite(analytic).all():
        raise NumericalError("loss or analytic gradient is not finite")
    base_pattern = pattern_fn(theta) if pattern_fn is not None else None

    worst = 0.0
    probe = theta.copy()
    for i in range(theta.size):
        probe[i] = theta[i] + epsilon
        fp = loss_fn(probe)[0]
        kink = base_pattern is not None and not np.array_equal(pattern_fn(probe), base_pattern)
        probe[i] = theta[i] - epsilon
        fm = loss_fn(probe)[0]
        kink = kink or (base_pattern is not None
                        and not np.array_equal(pattern_fn(probe), base_pattern))
        probe[i] = theta[i]
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError(f"non-finite loss while probing coordinate {i}")
        if kink:
            continue
        numeric = (fp - fm) / (2.0 * epsilon)
        denom = max(abs(analytic[i]), abs(numeric), floor)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst


def random_encoder_instance(rng, max_nodes=10, max_features=8):
    """A small random graph, encoder and prototypical episode for gradient checks.

    Returns ``(loss_fn, pattern_fn, theta)`` over the flattened encoder weights.
    """
    n_way = int(rng.integers(2, 4))
    k_shot = int(rng.integers(1, 3))
    r_query = 1
    per_class = k_shot + r_query
    n = int(rng.integers(n_way * per_class, max_nodes + 1))
    d = int(rng.integers(2, max_features + 1))
    labels = np.concatenate([np.repeat(np.arange(n_way), per_class),
                             rng.integers(0, n_way, size=n - n_way * per_class)])
    iu, ju = np.triu_indices(n, k=1)
    mask = rng.random(iu.size) < 0.4
    graph = Graph(n, np.stack([iu[mask], ju[mask]], axis=1), rng.standard_normal((n, d)), labels)
    adj = normalize_adjacency(graph)
    X = graph.features.astype(np.float64)
    shape = init_params(d, int(rng.integers(2, 7)), int(rng.integers(2, 6)), rng)
    task = sample_task(graph, range(n_way), n_way, k_shot, r_query, rng)

    def loss_fn(theta):
        p = shape.unflatten(theta)
        emb, cache = encode(adj, X, p)
        loss, _, g = proto_episode_loss(emb, task)
        dW1, dW2 = encode_backward(g, cache, adj, p)
        return loss, EncoderParams(dW1, dW2).flatten()

    def pattern_fn(theta):
        p = shape.unflatten(theta)
        return encode(adj, X, p)[1].pre > 0.0

    return loss_fn, pattern_fn, shape.flatten()


def check_encoder_gradients(trials=20, seed=0, epsilon=1e-5):
    """Worst relative error over ``trials`` random encoder + prototypical-loss instances."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        loss_fn, pattern_fn, theta = random_encoder_instance(rng)
        worst = max(worst, grad_check(loss_fn, theta, epsilon, pattern_fn=pattern_fn))
    return worst
