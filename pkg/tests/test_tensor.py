import numpy as np
import pytest
import scipy.sparse as sp

from fairsample.tensor import Tape, TapeError, glorot_uniform

from _util import central_diff, max_rel_err


def test_matmul_identity():
    t = Tape()
    M = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(t.matmul(t.const(np.eye(2)), t.const(M)).value, M)


def test_relu():
    t = Tape()
    np.testing.assert_array_equal(t.relu(t.const([[-1.0, 2.0]])).value, [[0.0, 2.0]])


def test_softmax_ce_uniform():
    t = Tape()
    assert t.softmax_ce(t.const([[0.0, 0.0]]), [0]).value[0, 0] == pytest.approx(np.log(2))


def test_shape_mismatch():
    t = Tape()
    with pytest.raises(ValueError):
        t.matmul(t.const(np.ones((2, 3))), t.const(np.ones((2, 3))))
    with pytest.raises(ValueError):
        t.add(t.const(np.ones((2, 3))), t.const(np.ones((3, 2))))


def test_non_finite_signals_divergence():
    t = Tape()
    with pytest.raises(FloatingPointError):
        t.log(t.param([[0.0]], "w"))


def test_sum_gradient_is_ones():
    t = Tape()
    W = t.param(np.random.default_rng(0).normal(size=(2, 2)), "W")
    grads = t.backward(t.sum(W))
    np.testing.assert_array_equal(grads["W"], np.ones((2, 2)))


def test_backward_errors():
    t = Tape()
    W = t.param(np.ones((2, 2)), "W")
    with pytest.raises(TapeError, match="scalar"):
        t.backward(W)
    loss = t.sum(W)
    t.backward(loss)
    with pytest.raises(TapeError, match="consumed"):
        t.backward(loss)


def test_unused_param_has_zero_grad():
    t = Tape()
    W = t.param(np.ones((2, 2)), "W")
    t.param(np.ones((3, 1)), "unused")
    grads = t.backward(t.sum(W))
    np.testing.assert_array_equal(grads["unused"], np.zeros((3, 1)))


def test_softmax_ce_gradient_fd():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(5, 3))
    W = rng.normal(size=(3, 2))
    y = rng.integers(0, 2, 5)

    def loss():
        t = Tape()
        return t.softmax_ce(t.matmul(t.const(x), t.const(W)), y).value[0, 0]

    t = Tape()
    Wt = t.param(W, "W")
    analytic = t.backward(t.softmax_ce(t.matmul(t.const(x), Wt), y))["W"]
    assert max_rel_err(analytic, central_diff(loss, W)) < 1e-6


def _composite(t, params, x, agg, groups):
    W, b, c = params
    h = t.relu(t.add(t.matmul(t.row_mean(x, agg), W), b))
    g = t.gather(h, [0, 2, 3, 3])
    p = t.softmax(t.matmul(g, c))
    pos = t.column(p, 1)
    l1 = t.abs_mean_diff(pos, groups, 2)
    l2 = t.sum(t.log(t.scale(t.add(p, t.const(np.full(p.shape, 0.5))), 2.0)))
    l3 = t.weighted_sum(t.rowdot(h, h), np.arange(h.shape[0], dtype=float)[:, None])
    lm = t.mul(pos, pos)
    cc = t.concat(pos, t.column(p, 0))
    return t.add(t.add(t.add(l1, l2), t.scale(l3, 0.01)), t.add(t.sum(lm), t.sum(t.mul(cc, cc))))


def test_every_primitive_gradient_fd():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(4, 3))
    agg = sp.csr_matrix(np.array([[0.5, 0.5, 0, 0], [0, 1, 0, 0], [1 / 3, 0, 1 / 3, 1 / 3], [0, 0, 0.5, 0.5]]))
    groups = [0, 1, 1, 0]
    params = [rng.normal(size=(3, 4)), rng.normal(size=(1, 4)), rng.normal(size=(4, 2))]

    def value():
        t = Tape()
        return _composite(t, [t.const(p) for p in params], t.const(x), agg, groups).value[0, 0]

    t = Tape()
    reg = [t.param(p, f"p{i}") for i, p in enumerate(params)]
    grads = t.backward(_composite(t, reg, t.const(x), agg, groups))
    for i, p in enumerate(params):
        assert max_rel_err(grads[f"p{i}"], central_diff(value, p)) < 1e-4


def test_segment_log_softmax_gradient_fd():
    rng = np.random.default_rng(5)
    q = rng.normal(size=(7, 1))
    ptr = [0, 3, 4, 7]
    w = rng.normal(size=(7, 1))

    def value():
        t = Tape()
        return t.weighted_sum(t.segment_log_softmax(t.const(q), ptr), w).value[0, 0]

    t = Tape()
    qt = t.param(q, "q")
    out = t.segment_log_softmax(qt, ptr)
    for lo, hi in zip(ptr[:-1], ptr[1:]):
        assert np.exp(out.value[lo:hi]).sum() == pytest.approx(1.0)
    grads = t.backward(t.weighted_sum(out, w))
    assert max_rel_err(grads["q"], central_diff(value, q)) < 1e-6


def test_backward_is_deterministic():
    rng = np.random.default_rng(2)
    x, W = rng.normal(size=(6, 3)), rng.normal(size=(3, 2))
    out = []
    for _ in range(2):
        t = Tape()
        Wt = t.param(W, "W")
        out.append(t.backward(t.softmax_ce(t.matmul(t.const(x), Wt), [0, 1, 0, 1, 1, 0]))["W"])
    assert np.array_equal(out[0], out[1])


def test_wrt_intermediate_gradient():
    t = Tape()
    W = t.param([[2.0]], "W")
    h = t.matmul(t.const([[3.0]]), W)
    loss = t.sum(t.mul(h, h))
    t.backward(loss, wrt=[h])
    assert h.grad[0, 0] == pytest.approx(12.0)


def test_glorot_range():
    w = glorot_uniform(np.random.default_rng(0), 10, 6)
    assert np.all(np.abs(w) <= np.sqrt(6 / 16))
