import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import special_ortho_group

from cpt.encoder import EncoderParams, encode, init_params
from cpt.errors import InputError, NumericalError
from cpt.gradcheck import grad_check, numerical_gradient
from cpt.graph import normalize_adjacency
from cpt.learner import (MetaConfig, cross_entropy, fomaml_adapt, fomaml_task_gradient,
                         inner_step, linear_episode_loss, outer_step, proto_episode_loss,
                         softmax_probs)
from cpt.sampler import EpisodeTask, sample_task

from conftest import random_graph


def make_task(n_way, k_shot, r_query, offset=0):
    per = k_shot + r_query
    nodes = np.arange(n_way * per).reshape(n_way, per) + offset
    return EpisodeTask(tuple(range(n_way)), nodes[:, :k_shot].ravel(),
                       np.repeat(np.arange(n_way), k_shot), nodes[:, k_shot:].ravel(),
                       np.repeat(np.arange(n_way), r_query))


def test_softmax_uniform():
    np.testing.assert_allclose(softmax_probs(np.zeros((3, 5))), 0.2, rtol=1e-15)


def test_softmax_stable_for_large_logits():
    p = softmax_probs(np.array([[1000.0, 0.0]]))
    assert p[0, 0] == 1.0 and 0.0 <= p[0, 1] < 1e-300


def test_softmax_rows_sum_to_one(rng):
    p = softmax_probs(rng.standard_normal((3, 4)))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_softmax_rejects_nonfinite():
    with pytest.raises(NumericalError):
        softmax_probs(np.array([[np.inf, 0.0]]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=6), st.floats(-100, 100))
def test_softmax_shift_invariant(row, shift):
    a = softmax_probs(np.array([row]))
    b = softmax_probs(np.array([row]) + shift)
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert np.argmax(a) == np.argmax(b)


def test_cross_entropy_uniform():
    loss, _ = cross_entropy(np.full((1, 5), 0.2), [3])
    assert loss == pytest.approx(math.log(5), rel=1e-15)


def test_cross_entropy_perfect():
    loss, grad = cross_entropy(np.eye(3), [0, 1, 2])
    assert loss == 0.0 and not grad.any()


def test_cross_entropy_label_range():
    with pytest.raises(InputError):
        cross_entropy(np.full((1, 2), 0.5), [2])


def test_cross_entropy_gradient_fd(rng):
    logits = rng.standard_normal((4, 3))
    labels = np.array([0, 2, 1, 2])

    def f(z):
        return cross_entropy(softmax_probs(z.reshape(4, 3)), labels)[0]

    _, analytic = cross_entropy(softmax_probs(logits), labels)
    np.testing.assert_allclose(numerical_gradient(f, logits, 1e-6), analytic, atol=1e-6)


def test_proto_separable_clusters():
    task = make_task(2, 3, 4)
    emb = np.zeros((14, 2))
    emb[:7] = [10.0, 0.0]
    emb[7:] = [-10.0, 0.0]
    _, acc, _ = proto_episode_loss(emb, task)
    assert acc == 1.0


def test_proto_identical_embeddings():
    task = make_task(4, 2, 3)
    loss, acc, _ = proto_episode_loss(np.ones((20, 3)), task)
    assert loss == pytest.approx(12 * math.log(4), rel=1e-14)
    assert acc == 0.25  # ties resolve to class 0; 3 of 12 queries are class 0


@pytest.mark.parametrize("seed", range(5))
def test_proto_gradient_fd(seed):
    rng = np.random.default_rng(seed)
    task = make_task(3, 2, 2, offset=1)
    emb = rng.standard_normal((14, 4))
    _, _, analytic = proto_episode_loss(emb, task)

    def f(e):
        return proto_episode_loss(e.reshape(14, 4), task)[0]

    err = grad_check(lambda t: (f(t), analytic.ravel()), emb.ravel())
    assert err < 1e-4
    assert not analytic[0].any() and not analytic[13].any()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_proto_accuracy_rotation_invariant(seed):
    rng = np.random.default_rng(seed)
    task = make_task(3, 2, 3)
    emb = rng.standard_normal((15, 4))
    R = special_ortho_group.rvs(4, random_state=seed % (2**31))
    assert proto_episode_loss(emb, task)[1] == proto_episode_loss(emb @ R, task)[1]


def test_linear_head_needs_enough_columns():
    with pytest.raises(Exception, match="embed_dim"):
        linear_episode_loss(np.zeros((4, 2)), np.arange(3), np.arange(3), 3)


def _params(w1, w2):
    return EncoderParams(np.asarray(w1, float), np.asarray(w2, float))


def test_inner_step_cases(rng):
    p = init_params(3, 2, 2, rng)
    zero = (np.zeros_like(p.W1), np.zeros_like(p.W2))
    assert inner_step(p, zero, 0.1).equals(p)
    g = (rng.standard_normal(p.W1.shape), rng.standard_normal(p.W2.shape))
    assert inner_step(p, g, 0.0).equals(p)
    z = _params(np.zeros((3, 2)), np.zeros((2, 2)))
    q = inner_step(z, g, 0.1)
    np.testing.assert_array_equal(q.W1, -0.1 * g[0])
    np.testing.assert_array_equal(q.W2, -0.1 * g[1])


def test_inner_step_does_not_mutate(rng):
    p = init_params(3, 2, 2, rng)
    before = p.copy()
    inner_step(p, (np.ones_like(p.W1), np.ones_like(p.W2)), 0.5)
    outer_step(p, [(np.ones_like(p.W1), np.ones_like(p.W2))], 0.5)
    assert p.equals(before)


def test_outer_step_cancellation(rng):
    p = init_params(3, 2, 2, rng)
    g = (rng.standard_normal(p.W1.shape), rng.standard_normal(p.W2.shape))
    assert outer_step(p, [g, (-g[0], -g[1])], 0.3).equals(p)


def test_outer_step_empty(rng):
    with pytest.raises(InputError):
        outer_step(init_params(2, 2, 2, rng), [], 0.1)


def test_fomaml_quadratic_closed_form(rng):
    # support loss 0.5 h |theta - a|^2, query loss 0.5 |theta - b|^2
    h, alpha1, alpha2 = 0.7, 0.1, 0.05
    shape = init_params(3, 2, 2, rng)
    theta, a, b = (shape.unflatten(rng.standard_normal(shape.size)) for _ in range(3))

    def grad(p, centre, scale=1.0):
        return (scale * (p.W1 - centre.W1), scale * (p.W2 - centre.W2))

    adapted = inner_step(theta, grad(theta, a, h), alpha1)
    new = outer_step(theta, [grad(adapted, b)], alpha2)

    t, av, bv = theta.flatten(), a.flatten(), b.flatten()
    t_adapted = t - alpha1 * h * (t - av)
    expected = t - alpha2 * (t_adapted - bv)
    np.testing.assert_allclose(new.flatten(), expected, rtol=0, atol=1e-10)
    # exact MAML differs only by the (1 - alpha1 h) Jacobian factor
    exact = t - alpha2 * (1 - alpha1 * h) * (t_adapted - bv)
    np.testing.assert_allclose(t - (t - exact) / (1 - alpha1 * h), new.flatten(), atol=1e-10)


def test_fomaml_gradient_is_query_gradient_at_adapted(rng):
    g = random_graph(rng, 10, p=0.4, d=3, n_classes=2)
    labels = np.array([0, 0, 0, 0, 0, 1, 1, 1, 1, 1])
    g = type(g)(10, g.edges, g.features, labels)
    adj = normalize_adjacency(g)
    X = g.features.astype(float)
    cfg = MetaConfig(alpha1=0.05, alpha2=0.1, learner_kind="fomaml", inner_steps=2)
    p = init_params(3, 4, 2, rng)
    task = sample_task(g, [0, 1], 2, 2, 2, rng)
    _, _, (dW1, dW2) = fomaml_task_gradient(adj, X, p, task, cfg)
    adapted = fomaml_adapt(adj, X, p, task, cfg)

    def q_loss(theta):
        e, _ = encode(adj, X, adapted.unflatten(theta))
        return linear_episode_loss(e, task.query_nodes, task.query_labels, 2)[0]

    err = grad_check(lambda t: (q_loss(t), EncoderParams(dW1, dW2).flatten()), adapted.flatten())
    assert err < 1e-4
    assert not adapted.equals(p)


def test_meta_config_validation():
    with pytest.raises(Exception):
        MetaConfig(alpha1=0)
    with pytest.raises(Exception):
        MetaConfig(learner_kind="maml2")
