import numpy as np
import pytest

from cpt.encoder import (EncoderParams, encode, encode_backward, init_params, load_checkpoint,
                         save_checkpoint)
from cpt.errors import InputError, NumericalError, ParseError
from cpt.gradcheck import check_encoder_gradients, grad_check
from cpt.graph import Graph, normalize_adjacency

from conftest import random_graph


def dense_encode(graph, X, W1, W2):
    n = graph.num_nodes
    A = np.eye(n)
    for u, v in graph.edges:
        A[u, v] = A[v, u] = 1.0
    d = A.sum(axis=1)
    Ah = A / np.sqrt(np.outer(d, d))
    return Ah @ np.maximum(Ah @ X @ W1, 0.0) @ W2


def test_zero_w1_gives_zero_embeddings(rng):
    g = random_graph(rng, 6)
    p = EncoderParams(np.zeros((4, 3)), rng.standard_normal((3, 2)))
    emb, _ = encode(normalize_adjacency(g), g.features, p)
    assert np.all(emb == 0)


def test_single_node_is_plain_mlp(rng):
    x = rng.standard_normal((1, 4))
    g = Graph(1, [], x, [0])
    p = init_params(4, 5, 3, rng)
    emb, _ = encode(normalize_adjacency(g), x, p)
    np.testing.assert_allclose(emb, np.maximum(x @ p.W1, 0) @ p.W2, rtol=1e-15)


@pytest.mark.parametrize("seed", range(3))
def test_matches_dense_reference(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, 8, d=5)
    p = init_params(5, 6, 4, rng)
    emb, _ = encode(normalize_adjacency(g), g.features, p)
    np.testing.assert_allclose(emb, dense_encode(g, g.features, p.W1, p.W2), rtol=0, atol=1e-12)


def test_shape_mismatch(rng):
    g = random_graph(rng, 5, d=4)
    with pytest.raises(InputError):
        encode(normalize_adjacency(g), g.features, init_params(3, 2, 2, rng))


def test_zero_upstream_gradient(rng):
    g = random_graph(rng, 6)
    p = init_params(4, 3, 2, rng)
    adj = normalize_adjacency(g)
    emb, cache = encode(adj, g.features, p)
    dW1, dW2 = encode_backward(np.zeros_like(emb), cache, adj, p)
    assert not dW1.any() and not dW2.any()


def test_sum_loss_single_node(rng):
    x = rng.standard_normal((1, 4))
    g = Graph(1, [], x, [0])
    p = init_params(4, 5, 3, rng)
    adj = normalize_adjacency(g)
    emb, cache = encode(adj, x, p)
    _, dW2 = encode_backward(np.ones_like(emb), cache, adj, p)
    np.testing.assert_allclose(dW2, np.maximum(x @ p.W1, 0).T @ np.ones((1, 3)), rtol=1e-15)


def test_gradients_match_finite_differences():
    assert check_encoder_gradients(trials=20, seed=0) < 1e-4


def test_grad_check_quadratic(rng):
    theta = rng.standard_normal(7)
    err = grad_check(lambda t: (0.5 * t @ t, t.copy()), theta, epsilon=1e-5)
    assert err < 1e-9


def test_grad_check_detects_wrong_gradient(rng):
    theta = rng.standard_normal(4) + 3.0
    assert grad_check(lambda t: (0.5 * t @ t, 2 * t), theta) > 0.4


def test_grad_check_skips_relu_kinks(rng):
    # relu at exactly zero: both probes sit on different linear pieces
    def loss(t):
        return float(np.maximum(t, 0).sum()), (t > 0).astype(float)
    err = grad_check(loss, np.zeros(3), pattern_fn=lambda t: t > 0)
    assert err == 0.0


def test_grad_check_non_finite():
    with pytest.raises(NumericalError):
        grad_check(lambda t: (float("nan"), t), np.ones(2))


def test_equivariance_under_node_permutation(rng):
    g = random_graph(rng, 9, d=3)
    p = init_params(3, 4, 2, rng)
    perm = rng.permutation(9)
    inv = np.argsort(perm)
    g2 = Graph.from_pairs(9, inv[g.edges], g.features[perm], g.labels[perm])
    e1, _ = encode(normalize_adjacency(g), g.features, p)
    e2, _ = encode(normalize_adjacency(g2), g2.features, p)
    np.testing.assert_allclose(e2, e1[perm], atol=1e-12)


def test_dropout_requires_rng_and_is_inverted(rng):
    g = random_graph(rng, 6)
    p = init_params(4, 3, 2, rng)
    adj = normalize_adjacency(g)
    with pytest.raises(InputError):
        encode(adj, g.features, p, dropout=0.5)
    _, cache = encode(adj, g.features, p, dropout=0.5, rng=np.random.default_rng(0))
    X = g.features.astype(float)
    kept = cache.inputs != 0
    np.testing.assert_allclose(cache.inputs[kept], 2 * X[kept])


def test_checkpoint_round_trip(tmp_path, rng):
    p = init_params(5, 4, 3, rng)
    path = tmp_path / "w.ckpt"
    save_checkpoint(path, p, flags=1)
    raw = path.read_bytes()
    assert np.frombuffer(raw[:32], dtype="<u8").tolist() == [5, 4, 3, 1]
    assert len(raw) == 32 + 8 * (20 + 12)
    q, flags = load_checkpoint(path)
    assert flags == 1 and q.equals(p)


def test_checkpoint_truncated(tmp_path, rng):
    path = tmp_path / "w.ckpt"
    save_checkpoint(path, init_params(2, 2, 2, rng))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ParseError):
        load_checkpoint(path)
