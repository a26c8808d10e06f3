import math

import numpy as np
import scipy.sparse as sp
import pytest

from hypersmote import tensor as T
from hypersmote.tensor import Adam, Linear, Tape, Tensor
from oracles import central_diff, loop_group_mean, naive_matmul, rel_err, scalar_bce

RNG = np.random.default_rng(1234)


def grad_check(build_loss, arrays, tol=1e-4):
    """Compare tape gradients with central differences for every array in ``arrays``."""
    params = [Tensor.param(a) for a in arrays]

    def f():
        for p, a in zip(params, arrays):
            p.data = a
        return build_loss(*params).item()

    with Tape() as tape:
        loss = build_loss(*params)
    analytic = tape.gradient(loss, params)
    numeric = central_diff(f, arrays)
    for a, n in zip(analytic, numeric):
        assert rel_err(a, n) < tol


# ---- matmul


def test_matmul_identity():
    m = RNG.normal(size=(2, 3))
    assert np.array_equal(T.matmul(np.eye(2), m).data, m)


def test_matmul_hand():
    assert T.matmul([[1, 2]], [[3], [4]]).data.tolist() == [[11.0]]


def test_matmul_vs_loops():
    a, b = RNG.normal(size=(5, 4)), RNG.normal(size=(4, 3))
    np.testing.assert_allclose(T.matmul(a, b).data, naive_matmul(a.tolist(), b.tolist()), atol=1e-12, rtol=0)


def test_matmul_shape_error():
    with pytest.raises(T.ShapeError):
        T.matmul(np.ones((2, 3)), np.ones((2, 3)))


@pytest.mark.parametrize("shape", [(3, 4, 2), (8, 8, 8), (1, 5, 1)])
def test_matmul_gradient(shape):
    n, k, m = shape
    grad_check(lambda a, b: T.sum_all(T.matmul(a, b)), [RNG.normal(size=(n, k)), RNG.normal(size=(k, m))])


def test_sparse_matmul_matches_dense():
    import scipy.sparse as sp

    a = (RNG.random((6, 5)) < 0.3) * 1.0
    w = RNG.normal(size=(5, 3))
    np.testing.assert_allclose(T.sparse_matmul(sp.csr_matrix(a), w).data, a @ w, atol=1e-12)
    grad_check(lambda w_: T.sum_all(T.relu(T.sparse_matmul(sp.csr_matrix(a), w_))), [w])


# ---- group mean


def test_group_mean_examples():
    rows = np.array([[2.0, 0.0], [0.0, 2.0]])
    assert T.group_mean(rows, [{0, 1}]).data.tolist() == [[1.0, 1.0]]
    assert T.group_mean(rows, [{0}]).data.tolist() == [[2.0, 0.0]]


def test_group_mean_vs_loops():
    rows = RNG.normal(size=(7, 4))
    groups = [[0, 3, 5], [1], [2, 4, 6, 0]]
    np.testing.assert_allclose(T.group_mean(rows, groups).data, loop_group_mean(rows, groups), atol=1e-12, rtol=0)


def test_group_mean_gradient_scatter():
    rows = RNG.normal(size=(4, 3))
    groups = [[0, 1], [1, 2, 3]]
    p = Tensor.param(rows)
    with Tape() as tape:
        loss = T.sum_all(T.group_mean(p, groups))
    (g,) = tape.gradient(loss, [p])
    expected = np.array([[0.5] * 3, [0.5 + 1 / 3] * 3, [1 / 3] * 3, [1 / 3] * 3])
    np.testing.assert_allclose(g, expected, atol=1e-12)
    grad_check(lambda r: T.sum_all(T.group_mean(r, groups)), [rows])


def test_group_mean_empty_group():
    with pytest.raises(T.ShapeError):
        T.group_mean(np.ones((2, 2)), [[0], []])


def test_group_mean_envelope():
    rows = RNG.normal(size=(9, 5))
    groups = [RNG.choice(9, size=int(RNG.integers(1, 9)), replace=False) for _ in range(20)]
    out = T.group_mean(rows, groups).data
    for o, grp in zip(out, groups):
        assert np.all(o >= rows[grp].min(axis=0) - 1e-12)
        assert np.all(o <= rows[grp].max(axis=0) + 1e-12)


# ---- activations


def test_activation_values():
    assert T.sigmoid(np.array([0.0])).data[0] == 0.5
    assert T.relu(np.array([-3.0, 3.0])).data.tolist() == [0.0, 3.0]


def test_sigmoid_open_interval():
    s = T.sigmoid(np.array([-40.0, -5.0, 0.0, 5.0, 30.0])).data
    assert np.all(s > 0) and np.all(s < 1)


def test_sigmoid_gradient():
    x = RNG.normal(size=(4, 3))
    grad_check(lambda a: T.sum_all(T.sigmoid(a)), [x], tol=1e-6)


def test_relu_gradient():
    x = RNG.normal(size=(5, 4))
    x[np.abs(x) < 1e-3] = 0.5  # keep away from the kink
    grad_check(lambda a: T.sum_all(T.relu(a)), [x])


def test_nonfinite_rejected():
    with pytest.raises(ValueError):
        Tensor.const([1.0, np.nan])
    with pytest.raises(ValueError):
        Tensor.param([np.inf])


# ---- losses


def test_bce_single_entry():
    assert T.bce_loss(np.array([[0.5]]), np.array([[1.0]])).item() == pytest.approx(math.log(2))


def test_bce_perfect_is_zero():
    t = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert T.bce_loss(t, t).item() == pytest.approx(0.0, abs=1e-10)


def test_bce_vs_scalar_loop():
    p = RNG.uniform(0.01, 0.99, size=(3, 3))
    t = (RNG.random((3, 3)) < 0.5) * 1.0
    assert abs(T.bce_loss(p, t).item() - scalar_bce(p, t)) < 1e-12


def test_bce_gradient():
    p = RNG.uniform(0.05, 0.95, size=(3, 4))
    t = (RNG.random((3, 4)) < 0.5) * 1.0
    grad_check(lambda a: T.bce_loss(a, t), [p])


def test_bce_shape_error():
    with pytest.raises(T.ShapeError):
        T.bce_loss(np.full((2, 2), 0.5), np.ones((2, 3)))


def test_bce_with_logits_matches_composition():
    z = RNG.normal(scale=3, size=(6, 5))
    t = (RNG.random((6, 5)) < 0.3) * 1.0
    fused = T.bce_with_logits_loss(z, t).item()
    composed = T.bce_loss(T.sigmoid(z), t).item()
    assert fused == pytest.approx(composed, rel=1e-12)
    grad_check(lambda a: T.bce_with_logits_loss(a, t), [z])
    mask = (RNG.random((6, 5)) < 0.5) * 1.0
    grad_check(lambda a: T.bce_with_logits_loss(a, t, mask), [z])


def test_bce_with_logits_sparse_target_matches_dense():
    z = RNG.normal(scale=3, size=(7, 9))
    t = (RNG.random((7, 9)) < 0.2) * 1.0
    mask = (RNG.random((7, 9)) < 0.5) * 1.0
    for m in (None, mask):
        with T.Tape() as tape:
            a = T.Tensor.param(z.copy())
            dense = T.bce_with_logits_loss(a, t, m)
        (gd,) = tape.gradient(dense, [a])
        with T.Tape() as tape:
            b = T.Tensor.param(z.copy())
            sparse = T.bce_with_logits_loss(b, sp.csr_matrix(t), m)
        (gs,) = tape.gradient(sparse, [b])
        assert sparse.item() == pytest.approx(dense.item(), rel=1e-13)
        np.testing.assert_allclose(gs, gd, rtol=1e-13, atol=1e-15)


def test_softmax_ce_uniform():
    logits = np.zeros((4, 5))
    assert T.softmax_ce_loss(logits, [0, 1, 2, 3]).item() == pytest.approx(math.log(5))


def test_softmax_ce_saturated():
    logits = np.array([[500.0, 0.0, 0.0]])
    assert T.softmax_ce_loss(logits, [0]).item() == pytest.approx(0.0, abs=1e-12)


def test_softmax_ce_gradient_with_mask():
    z = RNG.normal(size=(6, 4))
    y = RNG.integers(0, 4, size=6)
    mask = np.array([1, 0, 1, 1, 0, 1], dtype=bool)
    grad_check(lambda a: T.softmax_ce_loss(a, y, mask), [z])


def test_softmax_ce_all_masked():
    with pytest.raises(T.ShapeError):
        T.softmax_ce_loss(np.zeros((2, 2)), [0, 1], np.zeros(2, dtype=bool))


# ---- tape


def test_sum_gradient_is_ones():
    w = Tensor.param(RNG.normal(size=(3, 2)))
    with Tape() as tape:
        loss = T.sum_all(w)
    (g,) = tape.gradient(loss, [w])
    assert np.array_equal(g, np.ones((3, 2)))


def test_gradient_needs_loss_from_tape():
    w = Tensor.param(np.ones((2, 2)))
    with Tape():
        loss = T.sum_all(w)
    with pytest.raises(T.TapeError):
        Tape().gradient(loss, [w])
    with pytest.raises(T.TapeError):
        Tape().gradient(Tensor(1.0), [w])


def test_untouched_parameter_zero_gradient():
    w, unused = Tensor.param(np.ones((2, 2))), Tensor.param(np.ones(3))
    with Tape() as tape:
        loss = T.sum_all(w)
    _, g = tape.gradient(loss, [w, unused])
    assert np.array_equal(g, np.zeros(3))


def test_each_op_visited_once():
    calls = []
    w = Tensor.param(np.ones((2, 2)))
    with Tape() as tape:
        h = T.relu(w)
        loss = T.sum_all(T.matmul(h, h))
    for op in tape.ops:
        fn = op.backward
        op.backward = lambda g, fn=fn, op=op: calls.append(id(op)) or fn(g)
    tape.gradient(loss, [w])
    assert len(calls) == len(tape.ops) == len(set(calls))


def test_composed_model_gradient():
    x = RNG.normal(size=(6, 4))
    groups = [[0, 1, 2], [2, 3], [3, 4, 5], [1, 5]]
    y = np.array([0, 2, 1, 2])
    w1, b1 = RNG.normal(size=(4, 5)), RNG.normal(size=(5,))
    w2, b2 = RNG.normal(size=(5, 3)), RNG.normal(size=(3,))

    def model(w1_, b1_, w2_, b2_):
        h = T.relu(T.add_bias(T.matmul(x, w1_), b1_))
        pooled = T.group_mean(h, groups)
        return T.softmax_ce_loss(T.add_bias(T.matmul(pooled, w2_), b2_), y)

    grad_check(model, [w1, b1, w2, b2])


# ---- optimizer


def test_adam_zero_gradient_no_change():
    p = Tensor.param(RNG.normal(size=(3, 3)))
    before = p.data.copy()
    opt = Adam([p])
    opt.step([np.zeros((3, 3))])
    assert np.array_equal(p.data, before)


def test_adam_first_step_is_lr_sign():
    p = Tensor.param(np.zeros(4))
    g = np.array([0.3, -2.0, 5.0, -1e-3])
    opt = Adam([p], lr=0.01)
    opt.step([g])
    # m_hat = g, v_hat = g^2 after bias correction
    expected = -0.01 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(p.data, expected, rtol=1e-12)
    np.testing.assert_allclose(np.abs(p.data), 0.01, rtol=1e-4)


def test_adam_weight_decay_only_on_selected():
    a, b = Tensor.param(np.ones(2)), Tensor.param(np.ones(2))
    opt = Adam([a, b], lr=0.1, weight_decay=0.5, decay=[a])
    opt.step([np.zeros(2), np.zeros(2)])
    assert np.all(a.data < 1.0)
    assert np.array_equal(b.data, np.ones(2))


def test_adam_shape_mismatch():
    opt = Adam([Tensor.param(np.ones(2))])
    with pytest.raises(T.ShapeError):
        opt.step([np.ones(3)])


def test_seeded_runs_bitwise_identical():
    def run():
        rng = np.random.default_rng(7)
        lin = Linear.init(4, 3, rng)
        x = rng.normal(size=(5, 4))
        opt = Adam(lin.params())
        for _ in range(5):
            with Tape() as tape:
                loss = T.sum_all(T.sigmoid(lin(T.dropout(x, 0.3, rng))))
            opt.step(tape.gradient(loss, lin.params()))
        return [p.data for p in lin.params()]

    for a, b in zip(run(), run()):
        assert np.array_equal(a, b)


def test_linear_init_bounds():
    lin = Linear.init(16, 4, np.random.default_rng(0))
    assert np.all(np.abs(lin.weight.data) <= 0.25)
