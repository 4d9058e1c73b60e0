import numpy as np
import pytest

from fairsample.compgraph import Batch, build_full, build_sampled
from fairsample.gcn import (GcnParams, forward, full_probabilities, load_checkpoint, predict,
                            save_checkpoint, sgcn_forward)
from fairsample.theory import random_walk_matrix
from fairsample.trainer import _loss_terms
from fairsample.tensor import Tape

from _util import central_diff, make_graph, max_rel_err, random_graph

SIX_EDGES = [[0, 1], [0, 2], [1, 2], [2, 3], [3, 4], [4, 5], [1, 5]]


def dense_gcn(g, params):
    """Matrix form: h^l = relu(T h^{l-1} W_l) with T = (D+I)^{-1}(A+I)."""
    A = g.adjacency().toarray() + np.eye(g.n)
    T = A / A.sum(axis=1, keepdims=True)
    h = g.features
    for W in params.weights:
        h = np.maximum(T @ h @ W, 0)
    z = h @ params.head
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def recursive_h(g, params, v, l):
    """Mean aggregation by direct recursion over the neighborhood, no shared structure."""
    if l == 0:
        return g.features[v]
    group = [v] + g.neighbors(v).tolist()
    agg = np.mean([recursive_h(g, params, u, l - 1) for u in group], axis=0)
    return np.maximum(agg @ params.weights[l - 1], 0)


def test_star_leaf_first_layer():
    # star centered at node 0: leaf 1 aggregates only itself and the center
    x = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 3.0], [-1.0, 4.0]])
    g = make_graph(4, [[0, 1], [0, 2], [0, 3]], x=x)
    W1 = np.eye(2)
    params = GcnParams([W1, np.eye(2)], np.eye(2))
    batch = Batch([build_full(g, 0, 2)])
    _, _, hs = forward(g, params, batch)
    lv1 = batch.nodes[1]
    row = np.flatnonzero(lv1 == 1)[0]
    np.testing.assert_allclose(hs[1].value[row], 0.5 * (x[0] + x[1]) @ W1)
    root_h1 = hs[1].value[np.flatnonzero(batch.is_self[1])[0]]
    np.testing.assert_allclose(root_h1, np.maximum(x.mean(axis=0) @ W1, 0))


def test_isolated_node_self_term():
    g = make_graph(3, [[0, 1]])
    rng = np.random.default_rng(0)
    params = GcnParams.init(2, 3, 1, rng)
    _, _, hs = forward(g, params, Batch([build_full(g, 2, 1)]))
    np.testing.assert_allclose(hs[1].value[0], np.maximum(g.features[2] @ params.weights[0], 0))


def test_full_tree_forward_matches_dense_oracle():
    g = make_graph(6, SIX_EDGES, d=3, seed=4)
    params = GcnParams.init(3, 5, 2, np.random.default_rng(1))
    dense = dense_gcn(g, params)
    _, probs, hs = forward(g, params, Batch([build_full(g, v, 2) for v in range(6)]))
    np.testing.assert_allclose(probs.value, dense, atol=1e-10)
    np.testing.assert_allclose(full_probabilities(g, params), dense, atol=1e-10)
    for v in range(6):
        np.testing.assert_allclose(hs[2].value[v], recursive_h(g, params, v, 2), atol=1e-10)


def test_probabilities_are_distributions():
    rng = np.random.default_rng(3)
    g = random_graph(20, 0.2, rng, d=4)
    params = GcnParams.init(4, 8, 2, rng)
    _, probs, _ = forward(g, params, Batch([build_full(g, v, 2) for v in range(20)]))
    np.testing.assert_allclose(probs.value.sum(axis=1), 1.0, atol=1e-9)
    assert np.all((probs.value >= 0) & (probs.value <= 1))


def test_equal_features_give_equal_outputs():
    rng = np.random.default_rng(8)
    g = random_graph(15, 0.3, rng, d=3)
    g = make_graph(15, g.edges, x=np.tile([0.3, -1.0, 2.0], (15, 1)))
    params = GcnParams.init(3, 4, 2, rng)
    probs = full_probabilities(g, params)
    np.testing.assert_allclose(probs, np.tile(probs[0], (15, 1)), atol=1e-12)
    # sampled trees too: aggregation of identical vectors is the identity
    uniform = 1.0 / np.repeat(g.degree, g.degree)
    trees = [build_sampled(g, v, 2, 2, uniform, np.random.default_rng(v)) for v in range(15)]
    _, sp_probs, _ = forward(g, params, Batch(trees))
    np.testing.assert_allclose(sp_probs.value, probs, atol=1e-12)


def test_depth_mismatch():
    g = make_graph(3, [[0, 1]])
    params = GcnParams.init(2, 3, 2, np.random.default_rng(0))
    with pytest.raises(ValueError, match="depth"):
        forward(g, params, Batch([build_full(g, 0, 1)]))


def test_k0_is_logistic_regression():
    g = make_graph(4, [[0, 1], [2, 3]], d=3)
    params = GcnParams.init(3, 4, 0, np.random.default_rng(0))
    z = g.features @ params.head
    e = np.exp(z - z.max(axis=1, keepdims=True))
    np.testing.assert_allclose(full_probabilities(g, params), e / e.sum(axis=1, keepdims=True))


def test_sgcn_forward():
    g = make_graph(6, SIX_EDGES, d=3, seed=2)
    W = np.random.default_rng(0).normal(size=(3, 2))
    np.testing.assert_allclose(sgcn_forward(g, W, 0), g.features @ W)
    A = g.adjacency().toarray() + np.eye(6)
    T = A / A.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(sgcn_forward(g, W, 2), T @ T @ g.features @ W, atol=1e-12)
    np.testing.assert_allclose(sgcn_forward(g, W, 2),
                               random_walk_matrix(g, 2).walk @ g.features @ W, atol=1e-12)
    pair = make_graph(2, [[0, 1]], x=[[1.0, 0.0], [0.0, 3.0]])
    np.testing.assert_allclose(sgcn_forward(pair, np.eye(2), 1)[0], [0.5, 1.5])
    with pytest.raises(ValueError):
        sgcn_forward(g, np.ones((2, 2)), 1)


def test_predict():
    assert predict([[0.2, 0.8]]).tolist() == [1]
    assert predict([[0.5, 0.5]]).tolist() == [0]
    rng = np.random.default_rng(0)
    p = rng.random(100)
    probs = np.stack([p, 1 - p], axis=1)
    assert predict(probs).tolist() == [0 if a >= b else 1 for a, b in probs]
    with pytest.raises(ValueError):
        predict([[0.5, 0.6]])


def test_two_layer_loss_gradient_fd():
    g = make_graph(6, SIX_EDGES, d=3, seed=9, s=[0, 0, 1, 1, 0, 1], y=[0, 1, 1, 0, 1, 0])
    params = GcnParams.init(3, 4, 2, np.random.default_rng(5))
    batch = Batch([build_full(g, v, 2) for v in range(6)])
    y, s = g.labels, g.sensitive

    def value():
        t = Tape()
        logits, probs, _ = forward(g, params, batch, t, ([t.const(w) for w in params.weights], t.const(params.head)))
        return _loss_terms(t, logits, probs, y, s, 2, 0.7)[0].value[0, 0]

    t = Tape()
    logits, probs, _ = forward(g, params, batch, t)
    grads = t.backward(_loss_terms(t, logits, probs, y, s, 2, 0.7)[0])
    for name, arr in params.as_dict().items():
        assert max_rel_err(grads[name], central_diff(value, arr)) < 1e-4, name


def test_checkpoint_round_trip(tmp_path):
    params = GcnParams.init(3, 4, 2, np.random.default_rng(0))
    save_checkpoint(tmp_path / "c.json", params.as_dict(), {"K": 2})
    tensors, meta = load_checkpoint(tmp_path / "c.json")
    back = GcnParams.from_dict(tensors)
    for a, b in zip(params.weights + [params.head], back.weights + [back.head]):
        assert np.array_equal(a, b)
    assert meta == {"K": 2}
    (tmp_path / "bad.json").write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad.json")
