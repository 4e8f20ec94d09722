import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpan.gradcheck import numerical_grad, relative_error
from fpan.tensor import (
    DimensionError,
    Tensor,
    add,
    broadcast_add,
    concat_channels,
    conv2d,
    conv2d_direct,
    layer_norm,
    matmul,
    mean_all,
    mul,
    pixel_shuffle,
    pixel_unshuffle,
    precision,
    relu,
    reshape,
    softmax_positions,
    softmax_rows,
    sum_all,
    transpose,
)

GRAD_TOL = 1e-4


def param(rng, *shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)


def weighted_sum(y: Tensor, w: np.ndarray) -> Tensor:
    """Scalar probe <y, w> that makes every output element matter."""
    return sum_all(mul(y, Tensor(w)))


def assert_grads(fn, inputs, rng):
    """Gradient of <fn(inputs), w> for random w, checked against finite differences."""
    out = fn(*inputs)
    w = rng.normal(size=out.shape)
    loss = lambda: weighted_sum(fn(*inputs), w)  # noqa: E731
    for t in inputs:
        t.grad = None
    loss().backward()
    for t in inputs:
        if t.requires_grad:
            err = relative_error(t.grad, numerical_grad(loss, t))
            assert err < GRAD_TOL, err


class TestConv2d:
    def test_all_ones_counts_overlap(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        k = Tensor(np.ones((1, 1, 3, 3)))
        y = conv2d(x, k, None, 1, 1).data[0, 0]
        assert y[1, 1] == 9
        assert y[0, 0] == y[0, 2] == y[2, 0] == y[2, 2] == 4

    def test_identity_kernel(self, rng):
        x = Tensor(rng.normal(size=(2, 1, 5, 6)))
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 1] = 1
        np.testing.assert_array_equal(conv2d(x, Tensor(k), None, 1, 1).data, x.data)

    @pytest.mark.parametrize("stride,pad,k", [(1, 1, 3), (1, 0, 1), (2, 2, 6), (2, 0, 3), (1, 2, 3)])
    def test_matches_direct_loops(self, f64, rng, stride, pad, k):
        x = rng.normal(size=(2, 3, 7, 6))
        w = rng.normal(size=(4, 3, k, k))
        b = rng.normal(size=4)
        got = conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad).data
        want = conv2d_direct(x, w, b, stride, pad)
        assert got.shape == want.shape
        np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-12)

    def test_spec_case_random_5x5(self, f64, rng):
        x = rng.normal(size=(2, 3, 5, 5))
        w = rng.normal(size=(4, 3, 3, 3))
        b = np.zeros(4)
        got = conv2d(Tensor(x), Tensor(w), Tensor(b), 1, 1).data
        np.testing.assert_allclose(got, conv2d_direct(x, w, b, 1, 1), rtol=1e-6)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))

    def test_kernel_too_large(self):
        with pytest.raises(DimensionError):
            conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 6, 6))), pad=1)

    @pytest.mark.parametrize("stride,pad,k", [(1, 1, 3), (2, 2, 6), (1, 0, 1)])
    def test_gradients(self, f64, rng, stride, pad, k):
        x, w, b = param(rng, 2, 3, 6, 6), param(rng, 2, 3, k, k), param(rng, 2)
        assert_grads(lambda x, w, b: conv2d(x, w, b, stride, pad), [x, w, b], rng)

    @settings(max_examples=25, deadline=None)
    @given(h=st.integers(1, 9), w=st.integers(1, 9), k=st.sampled_from([1, 3, 5]))
    def test_same_padding_preserves_size(self, h, w, k):
        x = Tensor(np.zeros((1, 2, h, w)))
        y = conv2d(x, Tensor(np.zeros((3, 2, k, k))), None, 1, (k - 1) // 2)
        assert y.shape == (1, 3, h, w)


class TestRelu:
    def test_values_and_grad(self):
        x = Tensor(np.array([-2.0, 3.0, 0.0]), requires_grad=True)
        y = relu(x)
        np.testing.assert_array_equal(y.data, [0, 3, 0])
        sum_all(y).backward()
        np.testing.assert_array_equal(x.grad, [0, 1, 0])

    def test_elementwise_oracle(self, rng):
        x = rng.normal(size=(2, 3, 4, 4)).astype(np.float32)
        np.testing.assert_array_equal(relu(Tensor(x)).data, np.maximum(0, x))

    def test_gradient(self, f64, rng):
        # keep entries away from the kink at 0
        x = Tensor(rng.uniform(0.1, 1, (1, 2, 3, 3)) * rng.choice([-1, 1], (1, 2, 3, 3)), requires_grad=True)
        assert_grads(relu, [x], rng)


class TestConcat:
    def test_shape(self):
        y = concat_channels([Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 4, 4)))])
        assert y.shape == (1, 5, 4, 4)

    def test_single_is_identity(self, rng):
        x = Tensor(rng.normal(size=(1, 2, 3, 3)))
        assert concat_channels([x]) is x

    def test_slice_back(self, rng):
        a, b = rng.normal(size=(2, 2, 3, 3)), rng.normal(size=(2, 4, 3, 3))
        y = concat_channels([Tensor(a), Tensor(b)]).data
        np.testing.assert_array_equal(y[:, :2], a.astype(np.float32))
        np.testing.assert_array_equal(y[:, 2:], b.astype(np.float32))

    def test_spatial_mismatch(self):
        with pytest.raises(DimensionError):
            concat_channels([Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 2, 4, 5)))])

    def test_gradient(self, f64, rng):
        a, b, c = param(rng, 1, 2, 3, 3), param(rng, 1, 1, 3, 3), param(rng, 1, 3, 3, 3)
        assert_grads(lambda a, b, c: concat_channels([a, b, c]), [a, b, c], rng)


class TestAdd:
    def test_add_zero(self, rng):
        a = Tensor(rng.normal(size=(1, 2, 3, 3)))
        np.testing.assert_array_equal(add(a, Tensor(np.zeros(a.shape))).data, a.data)

    def test_broadcast_constant(self):
        v = Tensor(np.full((2, 3, 1, 1), 1.5))
        y = broadcast_add(Tensor(np.zeros((2, 3, 4, 5))), v)
        assert np.all(y.data == 1.5)

    def test_broadcast_grad_is_spatial_sum(self, f64, rng):
        x, v = param(rng, 2, 3, 4, 5), param(rng, 2, 3, 1, 1)
        g = rng.normal(size=(2, 3, 4, 5))
        weighted_sum(broadcast_add(x, v), g).backward()
        np.testing.assert_allclose(v.grad, g.sum(axis=(2, 3), keepdims=True))
        assert_grads(broadcast_add, [x, v], rng)

    def test_shape_errors(self):
        with pytest.raises(DimensionError):
            add(Tensor(np.zeros((1, 2))), Tensor(np.zeros((2, 1))))
        with pytest.raises(DimensionError):
            broadcast_add(Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.zeros((1, 3, 1, 1))))


class TestSoftmax:
    def test_uniform(self):
        p = softmax_positions(Tensor(np.zeros((1, 1, 2, 2)))).data
        np.testing.assert_allclose(p, 0.25)

    def test_shift_invariance(self, f64, rng):
        x = rng.normal(size=(2, 1, 3, 4))
        np.testing.assert_allclose(softmax_positions(Tensor(x + 7.3)).data, softmax_positions(Tensor(x)).data, atol=1e-15)

    def test_direct_oracle(self, f64, rng):
        x = rng.normal(size=(3, 1, 4, 5))
        e = np.exp(x)
        want = e / e.sum(axis=(2, 3), keepdims=True)
        np.testing.assert_allclose(softmax_positions(Tensor(x)).data, want, atol=1e-7)

    def test_large_logits_stay_finite(self):
        p = softmax_positions(Tensor(np.array([[[[1000.0, 0.0], [-1000.0, 999.0]]]]))).data
        assert np.all(np.isfinite(p))

    def test_needs_single_channel(self):
        with pytest.raises(DimensionError):
            softmax_positions(Tensor(np.zeros((1, 2, 3, 3))))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 6))
    def test_is_distribution(self, seed, h, w):
        x = np.random.default_rng(seed).normal(scale=5, size=(2, 1, h, w))
        p = softmax_positions(Tensor(x)).data
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=(2, 3)), 1.0, atol=1e-6)

    def test_gradients(self, f64, rng):
        assert_grads(softmax_positions, [param(rng, 2, 1, 3, 3)], rng)
        assert_grads(softmax_rows, [param(rng, 2, 4, 5)], rng)


class TestLayerNorm:
    def test_constant_input(self):
        y = layer_norm(Tensor(np.full((2, 4, 1, 1), 3.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
        np.testing.assert_array_equal(y.data, 0)

    def test_normalized_moments(self, f64, rng):
        y = layer_norm(Tensor(rng.normal(3, 2, (5, 8, 1, 1))), Tensor(np.ones(8)), Tensor(np.zeros(8)), eps=1e-12)
        v = y.data.reshape(5, 8)
        np.testing.assert_allclose(v.mean(axis=1), 0, atol=1e-6)
        np.testing.assert_allclose(v.var(axis=1), 1, atol=1e-6)

    def test_direct_formula(self, f64, rng):
        x = rng.normal(size=(3, 6, 1, 1))
        g, b = rng.normal(size=6), rng.normal(size=6)
        got = layer_norm(Tensor(x), Tensor(g), Tensor(b), eps=1e-5).data.reshape(3, 6)
        for i in range(3):
            row = x[i, :, 0, 0]
            mu = sum(row) / 6
            var = sum((r - mu) ** 2 for r in row) / 6
            want = [(r - mu) / np.sqrt(var + 1e-5) * g[c] + b[c] for c, r in enumerate(row)]
            np.testing.assert_allclose(got[i], want, rtol=1e-12)

    def test_gradients(self, f64, rng):
        x, g, b = param(rng, 3, 5, 1, 1), param(rng, 5), param(rng, 5)
        assert_grads(lambda x, g, b: layer_norm(x, g, b, 1e-5), [x, g, b], rng)


class TestPixelShuffle:
    def test_shape(self):
        assert pixel_shuffle(Tensor(np.zeros((1, 4, 2, 2))), 2).shape == (1, 1, 4, 4)

    def test_constant(self):
        assert np.all(pixel_shuffle(Tensor(np.full((1, 8, 3, 3), 2.5)), 2).data == 2.5)

    @pytest.mark.parametrize("r", [2, 3])
    def test_index_oracle(self, rng, r):
        n, c, h, w = 2, 3, 3, 4
        x = rng.normal(size=(n, c * r * r, h, w)).astype(np.float32)
        y = pixel_shuffle(Tensor(x), r).data
        for b in range(n):
            for ch in range(c):
                for i in range(r * h):
                    for j in range(r * w):
                        assert y[b, ch, i, j] == x[b, ch * r * r + (i % r) * r + (j % r), i // r, j // r]

    def test_not_divisible(self):
        with pytest.raises(DimensionError):
            pixel_shuffle(Tensor(np.zeros((1, 6, 2, 2))), 2)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(0, 999))
    def test_inverse_is_identity(self, r, c, h, w, seed):
        x = np.random.default_rng(seed).normal(size=(2, c * r * r, h, w))
        np.testing.assert_array_equal(pixel_unshuffle(pixel_shuffle(Tensor(x), r), r).data, Tensor(x).data)

    def test_gradient(self, f64, rng):
        assert_grads(lambda x: pixel_shuffle(x, 2), [param(rng, 1, 8, 2, 3)], rng)


class TestMatmul:
    def test_identity(self, rng):
        a = rng.normal(size=(3, 4)).astype(np.float32)
        np.testing.assert_array_equal(matmul(Tensor(np.eye(3)), Tensor(a)).data, a)

    def test_hand_case(self):
        y = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor(np.eye(2)))
        np.testing.assert_array_equal(y.data, [[1, 2], [3, 4]])

    def test_triple_loop(self, f64, rng):
        a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
        want = np.zeros((5, 3))
        for i in range(5):
            for j in range(3):
                for k in range(7):
                    want[i, j] += a[i, k] * b[k, j]
        np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, want, rtol=1e-12)

    def test_inner_mismatch(self):
        with pytest.raises(DimensionError):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_gradients(self, f64, rng):
        assert_grads(matmul, [param(rng, 5, 7), param(rng, 7, 3)], rng)
        assert_grads(matmul, [param(rng, 2, 3, 4), param(rng, 2, 4, 2)], rng)


class TestShapeOps:
    def test_reshape_transpose_gradients(self, f64, rng):
        assert_grads(lambda x: transpose(reshape(x, (2, 3, 4)), (0, 2, 1)), [param(rng, 2, 12)], rng)

    def test_mean_gradient(self, f64, rng):
        x = param(rng, 2, 3)
        mean_all(x).backward()
        np.testing.assert_allclose(x.grad, 1 / 6)


class TestBackward:
    def test_square(self):
        x = Tensor(np.array(3.0), requires_grad=True)
        (x * x).backward()
        assert x.grad == 6

    def test_accumulates(self, rng):
        x = Tensor(np.array(3.0), requires_grad=True)
        (x * x).backward()
        (x * x).backward()
        assert x.grad == 12

    def test_non_scalar_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(RuntimeError):
            (x * x).backward()

    def test_shared_node_visited_once(self):
        x = Tensor(np.array(2.0), requires_grad=True)
        y = x * x
        (y + y).backward()  # d(2x^2)/dx = 4x
        assert x.grad == 8

    def test_conv_relu_chain(self, f64, rng):
        x = param(rng, 1, 2, 5, 5)
        w1, b1 = param(rng, 3, 2, 3, 3), param(rng, 3)
        w2, b2 = param(rng, 1, 3, 3, 3), param(rng, 1)
        f = lambda: sum_all(conv2d(relu(conv2d(x, w1, b1, 1, 1)), w2, b2, 2, 1))  # noqa: E731
        f().backward()
        for t in (x, w1, b1, w2, b2):
            assert relative_error(t.grad, numerical_grad(f, t)) < GRAD_TOL

    def test_graph_is_consumed(self):
        x = Tensor(np.array(2.0), requires_grad=True)
        y = x * x
        y.backward()
        assert y._parents == ()


def test_precision_mode_is_module_wide():
    with precision("float64"):
        assert Tensor([1.0]).data.dtype == np.float64
    assert Tensor([1.0]).data.dtype == np.float32


def test_ops_are_deterministic(rng):
    x = rng.normal(size=(2, 3, 6, 6))
    w = rng.normal(size=(4, 3, 3, 3))
    a = conv2d(Tensor(x), Tensor(w), None, 1, 1).data
    b = conv2d(Tensor(x), Tensor(w), None, 1, 1).data
    assert a.tobytes() == b.tobytes()
