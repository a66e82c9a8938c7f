import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from madae import autodiff as ad
from madae.autodiff import AdamState, DomainError, ShapeError, Tape, Tensor, adam_step

import oracles

rng = np.random.default_rng(20240817)


def _t(shape, positive=False, away_from_zero=False):
    x = rng.standard_normal(shape)
    if positive:
        x = np.abs(x) + 0.5
    if away_from_zero:
        x = np.sign(x) * (np.abs(x) + 0.2)
    return Tensor(x, requires_grad=True)


# ---------------------------------------------------------------- forward values


def test_softmax_uniform_on_equal_logits():
    out = ad.softmax(Tensor([0.0, 0.0]))
    np.testing.assert_allclose(out.data, [0.5, 0.5], rtol=0, atol=0)


def test_matmul_identity():
    a = rng.standard_normal((3, 3))
    out = ad.matmul(Tensor(np.eye(3)), Tensor(a))
    np.testing.assert_array_equal(out.data, a)


def test_conv1d_matches_sliding_dot_oracle():
    x = Tensor(np.array([1.0, 2, 3, 4, 5]).reshape(1, 1, 5))
    w = Tensor(np.ones((1, 1, 3)))
    out = ad.conv1d(x, w, stride=1, padding=0)
    expected = oracles.conv1d_sliding_dot(x.data, w.data)
    np.testing.assert_allclose(out.data, expected, atol=1e-12)
    np.testing.assert_allclose(out.data.ravel(), [6.0, 9.0, 12.0], atol=0)


def test_conv1d_stride_padding_matches_oracle():
    x = rng.standard_normal((2, 3, 9))
    w = rng.standard_normal((4, 3, 3))
    out = ad.conv1d(Tensor(x), Tensor(w), stride=2, padding=1)
    np.testing.assert_allclose(out.data, oracles.conv1d_sliding_dot(x, w, 2, 1), atol=1e-12)


def test_sigmoid_midpoint_gradient():
    x = Tensor([0.0], requires_grad=True)
    with Tape() as tape:
        loss = ad.sigmoid(x).sum()
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, [0.25], atol=1e-15)


def test_backward_of_elementwise_square():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with Tape() as tape:
        loss = (x * x).sum()
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])


def test_fanout_accumulates():
    x = Tensor([3.0], requires_grad=True)
    with Tape() as tape:
        loss = (x + x).sum()
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [2.0])


def test_slice_routes_gradient():
    x = Tensor(np.arange(12.0).reshape(4, 3), requires_grad=True)
    with Tape() as tape:
        loss = x[1:3].sum()
    tape.backward(loss)
    expected = np.zeros((4, 3))
    expected[1:3] = 1.0
    np.testing.assert_array_equal(x.grad, expected)


# ---------------------------------------------------------------- error handling


def test_shape_mismatch_names_primitive():
    with pytest.raises(ShapeError, match="matmul"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
    with pytest.raises(ShapeError, match="add"):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))))


def test_domain_errors():
    with pytest.raises(DomainError):
        ad.sqrt(Tensor([-1.0]))
    with pytest.raises(DomainError):
        ad.log(Tensor([0.0]))


def test_nonscalar_loss_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(ShapeError):
        tape.backward(y)


def test_backward_requires_loss_from_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        x.sum()
    stray = Tensor(0.0)
    with pytest.raises(ValueError):
        tape.backward(stray)


# ---------------------------------------------------------------- gradient checks

# (name, graph builder) pairs; each builder returns (loss_fn, [leaves]) where
# loss_fn rebuilds the scalar graph from current leaf values.
def _scalarize(out, seed=0):
    c = Tensor(np.random.default_rng(seed).standard_normal(out.shape))
    return (out * c).sum()


def _case_add():
    a, b = _t((3, 4)), _t((4,))
    return lambda: _scalarize(ad.add(a, b)), [a, b]


def _case_subtract():
    a, b = _t((3, 4)), _t((3, 1))
    return lambda: _scalarize(ad.subtract(a, b)), [a, b]


def _case_multiply():
    a, b = _t((2, 3, 4)), _t((3, 4))
    return lambda: _scalarize(ad.multiply(a, b)), [a, b]


def _case_matmul():
    a, b = _t((3, 4)), _t((4, 5))
    return lambda: _scalarize(ad.matmul(a, b)), [a, b]


def _case_matmul_batched():
    a, b = _t((2, 3, 4)), _t((4, 5))
    return lambda: _scalarize(ad.matmul(a, b)), [a, b]


def _case_conv1d():
    x, w = _t((2, 3, 8)), _t((4, 3, 3))
    return lambda: _scalarize(ad.conv1d(x, w, stride=2, padding=1)), [x, w]


def _case_transpose():
    x = _t((2, 3, 4))
    return lambda: _scalarize(ad.transpose(x, (2, 0, 1))), [x]


def _case_reshape():
    x = _t((3, 4))
    return lambda: _scalarize(ad.reshape(x, (2, 6))), [x]


def _case_slice():
    x = _t((4, 6))
    return lambda: _scalarize(x[1:3, ::2]), [x]


def _case_slice_int():
    x = _t((4, 6))
    return lambda: _scalarize(x[2]), [x]


def _case_concat():
    a, b = _t((2, 3)), _t((4, 3))
    return lambda: _scalarize(ad.concat([a, b], axis=0)), [a, b]


def _case_mean():
    x = _t((3, 5))
    return lambda: ad.mean(x), [x]


def _case_mean_axis():
    x = _t((3, 5))
    return lambda: _scalarize(ad.mean(x, axis=1)), [x]


def _case_sum():
    x = _t((2, 3, 4))
    return lambda: _scalarize(ad.sum_(x, axis=(0, 2))), [x]


def _case_sqrt():
    x = _t((3, 4), positive=True)
    return lambda: _scalarize(ad.sqrt(x)), [x]


def _case_exp():
    x = _t((3, 4))
    return lambda: _scalarize(ad.exp(x)), [x]


def _case_log():
    x = _t((3, 4), positive=True)
    return lambda: _scalarize(ad.log(x)), [x]


def _case_sigmoid():
    x = _t((3, 4))
    return lambda: _scalarize(ad.sigmoid(x)), [x]


def _case_tanh():
    x = _t((3, 4))
    return lambda: _scalarize(ad.tanh(x)), [x]


def _case_relu():
    x = _t((3, 4), away_from_zero=True)
    return lambda: _scalarize(ad.relu(x)), [x]


def _case_softmax():
    x = _t((3, 5))
    return lambda: _scalarize(ad.softmax(x, axis=-1)), [x]


GRAD_CASES = {
    "add": _case_add,
    "subtract": _case_subtract,
    "multiply": _case_multiply,
    "matmul": _case_matmul,
    "matmul_batched": _case_matmul_batched,
    "conv1d": _case_conv1d,
    "transpose": _case_transpose,
    "reshape": _case_reshape,
    "slice": _case_slice,
    "slice_int": _case_slice_int,
    "concat": _case_concat,
    "mean": _case_mean,
    "mean_axis": _case_mean_axis,
    "sum": _case_sum,
    "sqrt": _case_sqrt,
    "exp": _case_exp,
    "log": _case_log,
    "sigmoid": _case_sigmoid,
    "tanh": _case_tanh,
    "relu": _case_relu,
    "softmax": _case_softmax,
}


@pytest.mark.parametrize("name", sorted(GRAD_CASES))
def test_primitive_gradcheck(name):
    loss_fn, leaves = GRAD_CASES[name]()
    assert oracles.gradcheck(loss_fn, leaves) < 1e-4


def test_mlp_gradcheck():
    # three affine layers with mixed activations, checked end to end
    w1, b1 = _t((6, 8)), _t((8,))
    w2, b2 = _t((8, 5)), _t((5,))
    w3, b3 = _t((5, 1)), _t((1,))
    x = Tensor(rng.standard_normal((4, 6)))

    def loss_fn():
        h1 = ad.tanh(x @ w1 + b1)
        h2 = ad.sigmoid(h1 @ w2 + b2)
        return ((h2 @ w3 + b3) * (h2 @ w3 + b3)).mean()

    assert oracles.gradcheck(loss_fn, [w1, b1, w2, b2, w3, b3]) < 1e-4


def test_backward_is_deterministic():
    w = Tensor(rng.standard_normal((5, 5)), requires_grad=True)
    x = Tensor(rng.standard_normal((3, 5)))

    def run():
        w.grad = None
        with Tape() as tape:
            loss = ad.tanh(x @ w).sum()
        tape.backward(loss)
        return w.grad.tobytes()

    assert run() == run()


# ---------------------------------------------------------------- properties


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
@settings(max_examples=50, deadline=None)
def test_softmax_rows_sum_to_one(logits):
    out = ad.softmax(Tensor(logits))
    assert abs(out.data.sum() - 1.0) < 1e-9
    assert np.all(out.data >= 0)


@given(
    st.integers(1, 30), st.integers(1, 6), st.integers(0, 4), st.integers(1, 4)
)
@settings(max_examples=60, deadline=None)
def test_conv1d_output_length(length, ksz, pad, stride):
    if length + 2 * pad < ksz:
        return
    out = ad.conv1d(Tensor(np.ones((1, 1, length))), Tensor(np.ones((1, 1, ksz))),
                    stride=stride, padding=pad)
    assert out.shape == (1, 1, (length + 2 * pad - ksz) // stride + 1)


# ---------------------------------------------------------------- Adam


def test_adam_single_step_value():
    p = Tensor([1.0], requires_grad=True)
    p.grad = np.array([1.0])
    state = AdamState(learning_rate=1e-3)
    adam_step(state, [p])
    # first step: m_hat = v_hat = 1, so the update is lr / (1 + eps)
    expected = 1.0 - 1e-3 * 1.0 / (1.0 + 1e-8)
    np.testing.assert_allclose(p.data, [expected], rtol=0, atol=1e-15)
    np.testing.assert_allclose(p.data, [0.999], atol=1e-6)
    assert p.grad is None
    assert state.step_count == 1


def test_adam_zero_grad_no_move():
    p = Tensor([2.5], requires_grad=True)
    p.grad = np.zeros(1)
    adam_step(AdamState(), [p])
    np.testing.assert_array_equal(p.data, [2.5])


def test_adam_twin_parameters_stay_identical():
    a = Tensor(rng.standard_normal(4), requires_grad=True)
    b = Tensor(a.data.copy(), requires_grad=True)
    state = AdamState()
    for step in range(7):
        g = np.sin(np.arange(4.0) + step)
        a.grad = g.copy()
        b.grad = g.copy()
        adam_step(state, [a, b])
        assert a.data.tobytes() == b.data.tobytes()


def test_adam_missing_grad_is_error():
    p = Tensor([1.0], requires_grad=True)
    with pytest.raises(ValueError, match="no gradient"):
        adam_step(AdamState(), [p])


def test_adam_moment_shapes_follow_parameters():
    p = Tensor(np.ones((2, 3)), requires_grad=True)
    p.grad = np.ones((2, 3))
    state = AdamState()
    adam_step(state, [p])
    assert state.m[0].shape == (2, 3) and state.v[0].shape == (2, 3)
    assert state.step_count == 1
    p.grad = np.ones((2, 3))
    adam_step(state, [p])
    assert state.step_count == 2
