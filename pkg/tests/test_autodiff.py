import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dudocf.autodiff import (
    ContractError,
    DimensionError,
    RunningStats,
    Tape,
    Tensor,
    UninitializedStatsError,
    avg_pool3d,
    backward,
    batch_norm3d,
    concat_channels,
    conv3d,
    conv3d_transpose,
    elementwise_mul,
    fully_connected,
    global_avg_pool,
    l1_loss,
    linear_map,
    mul,
    no_grad,
    pad_axis,
    relu,
    sigmoid,
    slice_axis,
    softplus,
    tsum,
    upsample_nearest,
)
from dudocf.autodiff.gradcheck import directional_check, gradcheck, rel_err

TOL = 1e-6


def weighted(out_fn, shape_rng):
    """Scalar probe <out, W> with a fixed random W, so every output entry matters."""
    cache = {}

    def f():
        out = out_fn()
        if "W" not in cache:
            cache["W"] = shape_rng.standard_normal(out.shape)
        return tsum(mul(out, cache["W"]))

    return f


def T(a, grad=True):
    return Tensor(np.array(a, dtype=float), requires_grad=grad)


# ------------------------------------------------------------------ tensor core
def test_grad_buffer_matches_shape(rng):
    x = T(rng.standard_normal((2, 3)))
    assert x.grad.shape == x.shape
    assert Tensor(np.ones(3)).grad is None


def test_backward_sum_gives_ones(rng):
    x = T(rng.standard_normal((3, 4)))
    with Tape():
        backward(x.sum())
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_square_gives_2x(rng):
    x = T(rng.standard_normal(5))
    with Tape():
        backward(tsum(x * x))
    np.testing.assert_allclose(x.grad, 2 * x.data, rtol=0, atol=0)


def test_backward_accumulates(rng):
    x = T(rng.standard_normal(4))
    for _ in range(2):
        with Tape():
            backward(x.sum())
    np.testing.assert_array_equal(x.grad, 2 * np.ones(4))
    x.zero_grad()
    np.testing.assert_array_equal(x.grad, 0)


def test_backward_non_scalar_is_contract_error(rng):
    x = T(rng.standard_normal(3))
    with Tape():
        with pytest.raises(ContractError):
            backward(x * 2.0)


def test_tape_replays_once(rng):
    x = T(rng.standard_normal(3))
    with Tape():
        loss = tsum(x * x)
        backward(loss)
        with pytest.raises(ContractError):
            backward(loss)


def test_tape_is_topologically_ordered(rng):
    x = T(rng.standard_normal(3))
    with Tape() as tape:
        y = relu(x * 3.0)
        z = tsum(y + x)
        pos = {id(n.output): n.index for n in tape.nodes}
        for node in tape.nodes:
            for inp in node.inputs:
                if inp._node is not None:
                    assert pos[id(inp)] < node.index
        backward(z)


def test_no_grad_records_nothing(rng):
    x = T(rng.standard_normal(3))
    with Tape() as tape, no_grad():
        y = x * 2.0
    assert len(tape) == 0 and not y.requires_grad


# ---------------------------------------------------------------------- conv3d
def test_conv_ones_interior_and_corner():
    x = Tensor(np.ones((1, 1, 4, 4, 4)))
    k = Tensor(np.ones((1, 1, 3, 3, 3)))
    out = conv3d(x, k, Tensor(np.zeros(1)), 1, 1).data[0, 0]
    assert out[1, 1, 1] == 27.0
    assert out[0, 0, 0] == 8.0


@pytest.mark.parametrize("stride,padding", [(1, 1), (1, 0), (2, 1), (2, 0)])
def test_conv_output_extents(rng, stride, padding):
    x = Tensor(rng.standard_normal((1, 2, 7, 6, 5)))
    k = Tensor(rng.standard_normal((3, 2, 3, 3, 3)))
    out = conv3d(x, k, None, stride, padding)
    expect = tuple((n + 2 * padding - 3) // stride + 1 for n in (7, 6, 5))
    assert out.shape == (1, 3) + expect


@pytest.mark.parametrize("stride,padding,k", [(1, 1, 3), (1, 0, 3), (2, 1, 3), (1, 0, 1)])
def test_conv_gradcheck(rng, stride, padding, k):
    x = T(rng.standard_normal((2, 2, 4, 5, 4)))
    w = T(rng.standard_normal((3, 2, k, k, k)))
    b = T(rng.standard_normal(3))
    assert gradcheck(weighted(lambda: conv3d(x, w, b, stride, padding), rng), [x, w, b]) < TOL


def test_conv_channel_mismatch_names_axis(rng):
    x = Tensor(rng.standard_normal((1, 2, 4, 4, 4)))
    k = Tensor(rng.standard_normal((1, 3, 3, 3, 3)))
    with pytest.raises(DimensionError) as e:
        conv3d(x, k)
    assert e.value.axis == 1


def test_conv_even_kernel_rejected(rng):
    with pytest.raises(DimensionError):
        conv3d(Tensor(np.ones((1, 1, 4, 4, 4))), Tensor(np.ones((1, 1, 2, 2, 2))))


def test_conv_adjoint_dot_test(rng):
    for stride in (1, 2):
        x = rng.standard_normal((2, 3, 8, 6, 4))
        w = Tensor(rng.standard_normal((4, 3, 3, 3, 3)))
        y = conv3d(Tensor(x), w, None, stride, 1)
        v = rng.standard_normal(y.shape)
        lhs = np.sum(y.data * v)
        rhs = np.sum(x * conv3d_transpose(Tensor(v), w, None, stride, padding=1, output_padding=(stride - 1)).data)
        assert abs(lhs - rhs) / abs(lhs) < 1e-12


# ------------------------------------------------------------ conv3d_transpose
def test_transpose_doubles_extents(rng):
    x = Tensor(rng.standard_normal((1, 4, 3, 2, 5)))
    w = Tensor(rng.standard_normal((4, 2, 3, 3, 3)))
    assert conv3d_transpose(x, w).shape == (1, 2, 6, 4, 10)


def test_transpose_delta_places_kernel(rng):
    x = np.zeros((1, 1, 3, 3, 3))
    x[0, 0, 1, 1, 1] = 1.0
    w = rng.standard_normal((1, 1, 3, 3, 3))
    out = conv3d_transpose(Tensor(x), Tensor(w)).data[0, 0]
    # input voxel 1 maps to output 2; padding 1 puts the kernel on 1..3
    np.testing.assert_array_equal(out[1:4, 1:4, 1:4], w[0, 0])
    mask = np.ones_like(out, dtype=bool)
    mask[1:4, 1:4, 1:4] = False
    assert np.all(out[mask] == 0)


def test_transpose_gradcheck(rng):
    x = T(rng.standard_normal((2, 3, 2, 3, 2)))
    w = T(rng.standard_normal((3, 2, 3, 3, 3)))
    b = T(rng.standard_normal(2))
    assert gradcheck(weighted(lambda: conv3d_transpose(x, w, b), rng), [x, w, b]) < TOL


def test_transpose_incompatible_target(rng):
    x = Tensor(rng.standard_normal((1, 2, 3, 3, 3)))
    w = Tensor(rng.standard_normal((2, 1, 3, 3, 3)))
    with pytest.raises(DimensionError):
        conv3d_transpose(x, w, output_shape=(7, 6, 6))


# --------------------------------------------------------------------- pooling
def test_avg_pool_constant():
    out = avg_pool3d(Tensor(np.full((1, 2, 4, 6, 2), 3.5)))
    assert out.shape == (1, 2, 2, 3, 1)
    np.testing.assert_array_equal(out.data, 3.5)


def test_avg_pool_indivisible():
    with pytest.raises(DimensionError) as e:
        avg_pool3d(Tensor(np.ones((1, 1, 4, 5, 4))))
    assert e.value.axis == 3


def test_global_avg_pool_example():
    x = np.zeros((1, 2, 2, 2, 2))
    x[0, 0] = np.arange(1, 9).reshape(2, 2, 2)
    np.testing.assert_allclose(global_avg_pool(Tensor(x)).data, [[4.5, 0.0]])


def test_pool_gradchecks(rng):
    x = T(rng.standard_normal((2, 2, 4, 2, 6)))
    assert gradcheck(weighted(lambda: avg_pool3d(x), rng), [x]) < TOL
    assert gradcheck(weighted(lambda: global_avg_pool(x), rng), [x]) < TOL
    assert gradcheck(weighted(lambda: upsample_nearest(x, 2), rng), [x]) < TOL


# ------------------------------------------------------------------- dense/misc
def test_fully_connected_identity_and_zero(rng):
    x = rng.standard_normal((3, 4))
    np.testing.assert_array_equal(fully_connected(Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4))).data, x)
    b = rng.standard_normal(5)
    out = fully_connected(Tensor(x), Tensor(np.zeros((5, 4))), Tensor(b)).data
    np.testing.assert_array_equal(out, np.tile(b, (3, 1)))


def test_fully_connected_gradcheck_and_errors(rng):
    x, w, b = T(rng.standard_normal((3, 4))), T(rng.standard_normal((2, 4))), T(rng.standard_normal(2))
    assert gradcheck(weighted(lambda: fully_connected(x, w, b), rng), [x, w, b]) < TOL
    with pytest.raises(DimensionError):
        fully_connected(Tensor(np.ones((3, 5))), w, b)


def test_activation_values():
    assert sigmoid(Tensor(0.0)).data == 0.5
    np.testing.assert_array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
    assert np.isclose(softplus(Tensor(0.0)).data, np.log(2.0))
    big = sigmoid(Tensor([-800.0, 800.0])).data
    assert np.all(np.isfinite(big)) and big[0] == 0.0 and big[1] == 1.0


def test_activation_gradchecks(rng):
    # keep relu inputs away from the kink
    x = T(rng.standard_normal((3, 4)))
    x.data[np.abs(x.data) < 1e-2] += 0.1
    for f in (sigmoid, relu, softplus):
        assert gradcheck(weighted(lambda: f(x), rng), [x]) < TOL


def test_elementwise_and_concat(rng):
    a = rng.standard_normal((1, 3, 2, 2, 2))
    np.testing.assert_array_equal(elementwise_mul(Tensor(a), Tensor(np.ones_like(a))).data, a)
    c = concat_channels([Tensor(np.ones((1, 3, 2, 2, 2))), Tensor(np.ones((1, 5, 2, 2, 2)))])
    assert c.shape[1] == 8
    with pytest.raises(DimensionError) as e:
        concat_channels([Tensor(np.ones((1, 3, 2, 2, 2))), Tensor(np.ones((1, 5, 2, 3, 2)))])
    assert e.value.axis == 3


def test_broadcast_mul_and_concat_gradcheck(rng):
    x = T(rng.standard_normal((2, 3, 2, 3, 2)))
    w = T(rng.standard_normal((2, 3, 1, 1, 1)))
    m = T(rng.standard_normal((2, 1, 2, 3, 2)))
    y = T(rng.standard_normal((2, 2, 2, 3, 2)))
    f = weighted(lambda: concat_channels([x * w, x * m, y]), rng)
    assert gradcheck(f, [x, w, m, y]) < TOL


def test_pad_slice_gradcheck(rng):
    x = T(rng.standard_normal((1, 2, 3, 2, 3)))
    assert gradcheck(weighted(lambda: slice_axis(pad_axis(x, 4, 1, 2), 4, 0, 4), rng), [x]) < TOL


def test_linear_map_is_adjoint_consistent(rng):
    M = rng.standard_normal((6, 8))
    x = T(rng.standard_normal((2, 1, 2, 2, 2)))
    f = weighted(lambda: linear_map(x, lambda X: M @ X, lambda Y: M.T @ Y, (3, 2)), rng)
    assert gradcheck(f, [x]) < TOL


# ------------------------------------------------------------------- batchnorm
def test_batchnorm_train_statistics(rng):
    x = rng.standard_normal((3, 2, 3, 3, 3)) * 4 + 2
    gamma, beta = np.array([2.0, -0.5]), np.array([1.0, 3.0])
    st = RunningStats(2)
    y = batch_norm3d(Tensor(x), Tensor(gamma), Tensor(beta), st, True).data
    mean = y.mean(axis=(0, 2, 3, 4))
    std = y.std(axis=(0, 2, 3, 4))
    var = x.var(axis=(0, 2, 3, 4))
    np.testing.assert_allclose(mean, beta, atol=1e-12)
    np.testing.assert_allclose(std, np.abs(gamma) * np.sqrt(var / (var + 1e-5)), rtol=1e-12)
    np.testing.assert_allclose(std, np.abs(gamma), rtol=1e-6)
    assert st.initialized
    n = x.size // 2
    np.testing.assert_allclose(st.mean, 0.1 * x.mean(axis=(0, 2, 3, 4)))
    np.testing.assert_allclose(st.var, 0.9 + 0.1 * var * n / (n - 1))


def test_batchnorm_standardized_input_is_identity(rng):
    x = rng.standard_normal((4, 1, 4, 4, 4))
    x = (x - x.mean()) / x.std()
    y = batch_norm3d(Tensor(x), Tensor([1.0]), Tensor([0.0]), RunningStats(1), True).data
    # identity up to the eps in the denominator
    np.testing.assert_allclose(y, x / np.sqrt(1.0 + 1e-5), rtol=1e-12, atol=1e-12)


def test_batchnorm_eval_needs_stats(rng):
    with pytest.raises(UninitializedStatsError):
        batch_norm3d(Tensor(np.ones((1, 1, 2, 2, 2))), Tensor([1.0]), Tensor([0.0]), RunningStats(1), False)


@pytest.mark.parametrize("training", [True, False])
def test_batchnorm_gradcheck(rng, training):
    x = T(rng.standard_normal((2, 3, 2, 3, 2)))
    g = T(rng.standard_normal(3))
    b = T(rng.standard_normal(3))
    st = RunningStats(3)
    batch_norm3d(Tensor(rng.standard_normal(x.shape)), g, b, st, True)
    assert gradcheck(weighted(lambda: batch_norm3d(x, g, b, st, training), rng), [x, g, b]) < TOL


# ------------------------------------------------------------------------- loss
def test_l1_values(rng):
    x = rng.standard_normal((2, 3))
    assert l1_loss(Tensor(x), Tensor(x)).data == 0.0
    assert l1_loss(Tensor(np.ones(7)), Tensor(np.zeros(7))).data == 1.0


def test_l1_gradient_is_sign_over_n(rng):
    x = T(rng.standard_normal(10))
    y = rng.standard_normal(10)
    y[3] = x.data[3]
    with Tape():
        backward(l1_loss(x, Tensor(y)))
    expect = np.sign(x.data - y) / 10
    np.testing.assert_array_equal(x.grad, expect)
    assert x.grad[3] == 0.0
    # away from ties the finite-difference oracle agrees
    x2 = T(y + 0.5 * np.sign(rng.standard_normal(10)))
    assert gradcheck(lambda: l1_loss(x2, Tensor(y)), [x2]) < TOL


# ----------------------------------------------------------------- properties
@given(
    st.integers(1, 2),
    st.integers(1, 3),
    st.integers(1, 3),
    st.tuples(st.integers(3, 6), st.integers(3, 6), st.integers(3, 6)),
    st.integers(0, 10_000),
)
def test_conv_gradcheck_random_shapes(B, ci, co, spatial, seed):
    r = np.random.default_rng(seed)
    x = T(r.standard_normal((B, ci) + spatial))
    w = T(r.standard_normal((co, ci, 3, 3, 3)))
    b = T(r.standard_normal(co))
    assert gradcheck(weighted(lambda: conv3d(x, w, b, 1, 1), r), [x, w, b]) < TOL


@given(st.integers(1, 2), st.integers(1, 3), st.lists(st.integers(1, 3), min_size=3, max_size=3), st.integers(1, 2))
def test_encoder_decoder_shape_algebra(B, C, mult, n):
    spatial = tuple(m * 2**n for m in mult)
    x = Tensor(np.ones((B, C) + spatial))
    w = Tensor(np.ones((C, C, 3, 3, 3)))
    h = x
    for _ in range(n):
        h = avg_pool3d(h)
    for _ in range(n):
        h = conv3d_transpose(h, w)
    assert h.shape == x.shape


@given(st.integers(0, 10_000))
def test_ops_are_deterministic_and_finite(seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((1, 2, 4, 4, 4))
    w = r.standard_normal((2, 2, 3, 3, 3))
    a = sigmoid(conv3d(Tensor(x), Tensor(w), None, 1, 1)).data
    b = sigmoid(conv3d(Tensor(x), Tensor(w), None, 1, 1)).data
    assert np.array_equal(a, b) and np.all(np.isfinite(a))


def test_directional_check_catches_wrong_adjoint(rng):
    M = rng.standard_normal((6, 8))
    x = T(rng.standard_normal((1, 1, 2, 2, 2)))
    good = weighted(lambda: linear_map(x, lambda X: M @ X, lambda Y: M.T @ Y, (6,)), rng)
    bad = weighted(lambda: linear_map(x, lambda X: M @ X, lambda Y: 1.001 * M.T @ Y, (6,)), rng)
    steps = (1e-5, 1e-6, 1e-7)
    assert directional_check(good, [x], rng, steps) < 1e-8
    assert directional_check(bad, [x], rng, steps) > 5e-4


def test_rel_err_helper():
    assert rel_err(np.ones(3), np.ones(3)) == 0.0
