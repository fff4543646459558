import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from assg import numerics as nx

from .oracles import central_difference


def test_affine_identity():
    out = nx.pointwise_affine(nx.const(np.eye(2)), nx.const(np.zeros((2, 1))), nx.const([[1, 2], [3, 4]]))
    assert np.array_equal(out.value, [[1, 2], [3, 4]])


def test_affine_zero_map():
    out = nx.pointwise_affine(nx.const(np.zeros((1, 1))), nx.const([[5.0]]), nx.const([[7.0, -2.0, 3.0]]))
    assert np.array_equal(out.value, [[5, 5, 5]])


def test_affine_row_sum():
    out = nx.pointwise_affine(nx.const([[1.0, 1.0]]), nx.const([[0.0]]), nx.const([[1, 2], [3, 4]]))
    assert np.array_equal(out.value, [[4, 6]])


def test_affine_shape_mismatch():
    with pytest.raises(nx.DimensionError):
        nx.pointwise_affine(nx.const(np.eye(2)), nx.const(np.zeros((2, 1))), nx.const(np.ones((3, 4))))
    with pytest.raises(nx.DimensionError):
        nx.pointwise_affine(nx.const(np.eye(2)), nx.const(np.zeros((3, 1))), nx.const(np.ones((2, 4))))


@pytest.mark.parametrize("x, expected", [
    ([[-1, 2]], [[0, 2]]),
    ([[0, 0]], [[0, 0]]),
    ([[-3, -1]], [[0, 0]]),
])
def test_relu(x, expected):
    assert np.array_equal(nx.relu(nx.const(x)).value, expected)


def test_softmax_columns_cases():
    sm = nx.softmax_columns(nx.const([[0.0, 0.0, 1000.0], [0.0, np.log(3.0), 0.0]])).value
    assert np.allclose(sm[:, 0], [0.5, 0.5])
    assert np.allclose(sm[:, 1], [0.25, 0.75], atol=1e-15)
    assert abs(sm[0, 2] - 1.0) < 1e-9 and sm[1, 2] < 1e-9
    assert np.all(np.isfinite(sm))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(-50, 50, allow_nan=False)))
def test_softmax_columns_normalized(x):
    sm = nx.softmax_columns(nx.const(x)).value
    assert np.all(np.abs(sm.sum(axis=0) - 1.0) < 1e-9)
    assert np.all(sm >= 0) and np.all(sm <= 1)


def test_softmax_entries_strictly_inside_for_moderate_logits():
    x = np.random.default_rng(0).uniform(-5, 5, size=(4, 9))
    sm = nx.softmax_columns(nx.const(x)).value
    assert np.all((sm > 0) & (sm < 1))


def test_backward_relu_subgradient():
    x = nx.param([[-1.0, 2.0]])
    (g,) = nx.backward(nx.sum_all(nx.relu(x)), [x])
    assert np.array_equal(g, [[0.0, 1.0]])


def test_backward_relu_at_zero_is_zero():
    x = nx.param([[0.0]])
    (g,) = nx.backward(nx.sum_all(nx.relu(x)), [x])
    assert g[0, 0] == 0.0


def test_backward_linear_weight_gradient_is_input_structure():
    x = np.array([[1.0], [-2.0], [0.5]])
    W = nx.param(np.zeros((2, 3)))
    (g,) = nx.backward(nx.sum_all(nx.matmul(W, nx.const(x))), [W])
    fd = central_difference(lambda w: float((w @ x).sum()), np.zeros((2, 3)))
    assert np.allclose(g, fd, atol=1e-9)
    assert np.allclose(g, np.tile(x.T, (2, 1)))


def test_backward_rejects_non_scalar():
    with pytest.raises(nx.DimensionError):
        nx.backward(nx.relu(nx.param(np.ones((2, 2)))))


def test_backward_unreached_parameter_gets_zero():
    a, b = nx.param(np.ones((2, 2))), nx.param(np.ones((3, 1)))
    ga, gb = nx.backward(nx.sum_all(a), [a, b])
    assert np.array_equal(ga, np.ones((2, 2))) and np.array_equal(gb, np.zeros((3, 1)))


def _two_layer(leaves, x):
    W1, b1, W2, b2 = leaves
    h = nx.relu(nx.pointwise_affine(W1, b1, nx.const(x)))
    out = nx.pointwise_affine(W2, b2, h)
    return nx.sum_all(nx.log_softmax(out, axis=0))


@pytest.mark.parametrize("seed", range(5))
def test_two_layer_net_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2, 2, size=(3, 4))
    params = [rng.uniform(-2, 2, s) for s in [(5, 3), (5, 1), (2, 5), (2, 1)]]
    assert nx.finite_diff_check(lambda L: _two_layer(L, x), params) < 1e-4


def test_finite_diff_check_square():
    err = nx.finite_diff_check(lambda L: nx.dot_const(nx.matmul(L[0], L[0]), [[1.0]]), [np.array([[3.0]])])
    assert err < 1e-8


def test_finite_diff_check_constant_function():
    assert nx.finite_diff_check(lambda L: nx.const([[4.2]]), [np.ones((2, 2))]) == 0.0


OPS = {
    "relu": lambda a: nx.relu(a),
    "neg": lambda a: nx.neg(a),
    "transpose": lambda a: nx.transpose(a),
    "softmax0": lambda a: nx.softmax(a, axis=0),
    "softmax1": lambda a: nx.softmax(a, axis=1),
    "log_softmax0": lambda a: nx.log_softmax(a, axis=0),
    "log_softmax1": lambda a: nx.log_softmax(a, axis=1),
    "sum_rows": lambda a: nx.sum_rows(a),
    "mean_cols": lambda a: nx.mean_cols(a),
    "max_cols": lambda a: nx.max_cols(a),
    "mask_columns": lambda a: nx.mask_columns(a, np.arange(a.shape[1]) % 2 == 0),
    "pick": lambda a: nx.pick(a, [0, 1, 0], [0, 2, 2]),
    "vstack": lambda a: nx.vstack([a, nx.scale(a, 2.0)]),
    "matmul_self_t": lambda a: nx.matmul(a, nx.transpose(a)),
    "add": lambda a: nx.add(a, nx.relu(a)),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name):
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    w = rng.uniform(-1, 1, size=(2, 3))
    op = OPS[name]
    for _ in range(5):
        x = rng.uniform(-2, 2, size=(2, 3))
        weights = _weights(op(nx.const(x)).shape, w)
        assert nx.finite_diff_check(lambda L: nx.dot_const(op(L[0]), weights), [x]) < 1e-4


def _weights(shape, w):
    # fixed pseudo-random weights so the check is not a plain sum
    flat = np.resize(w.ravel(), shape[0] * shape[1])
    return flat.reshape(shape)


def test_adam_first_step():
    params, state = nx.adam_update([np.array([[0.0]])], [np.array([[1.0]])],
                                   nx.AdamState.zeros_like([np.zeros((1, 1))], lr=0.1))
    assert abs(params[0][0, 0] + 0.1) < 1e-6
    assert state.t == 1


def test_adam_zero_gradient_leaves_params():
    p = [np.array([[1.5, -2.0]])]
    out, state = nx.adam_update(p, [np.zeros((1, 2))], nx.AdamState.zeros_like(p, lr=0.1))
    assert np.array_equal(out[0], p[0])
    assert np.array_equal(state.m[0], np.zeros((1, 2)))


def test_adam_moments_decay_with_zero_gradient():
    p = [np.ones((1, 1))]
    s = nx.AdamState([np.full((1, 1), 0.5)], [np.full((1, 1), 0.25)], t=3, lr=0.1)
    _, s2 = nx.adam_update(p, [np.zeros((1, 1))], s)
    assert s2.m[0][0, 0] == 0.9 * 0.5 and s2.v[0][0, 0] == 0.999 * 0.25
    assert s2.t == 4 and s.t == 3


def test_adam_is_deterministic_and_pure():
    rng = np.random.default_rng(1)
    p = [rng.standard_normal((3, 2))]
    g = [rng.standard_normal((3, 2))]
    s = nx.AdamState.zeros_like(p, lr=0.01)
    a, sa = nx.adam_update(p, g, s)
    b, sb = nx.adam_update(p, g, s)
    assert a[0].tobytes() == b[0].tobytes() and sa.v[0].tobytes() == sb.v[0].tobytes()
    assert s.t == 0 and not s.m[0].any()


def test_adam_inplace_matches_pure():
    rng = np.random.default_rng(2)
    p = [rng.standard_normal((4, 4)), rng.standard_normal((4, 1))]
    g = [rng.standard_normal((4, 4)), rng.standard_normal((4, 1))]
    pure, s1 = nx.adam_update(p, g, nx.AdamState.zeros_like(p, lr=0.01))
    q = [a.copy() for a in p]
    s2 = nx.AdamState.zeros_like(q, lr=0.01)
    nx.adam_update_inplace(q, g, s2)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(pure, q))


def test_adam_shape_mismatch():
    with pytest.raises(nx.DimensionError):
        nx.adam_update([np.zeros((2, 2))], [np.zeros((2, 1))], nx.AdamState.zeros_like([np.zeros((2, 2))]))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_ops_finite_and_pure(x):
    a = nx.const(x)
    for op in (nx.relu, lambda t: nx.softmax_columns(t), lambda t: nx.log_softmax(t, 0), nx.sum_rows):
        r1, r2 = op(a).value, op(a).value
        assert np.all(np.isfinite(r1))
        assert r1.tobytes() == r2.tobytes()
