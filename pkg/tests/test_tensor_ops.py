"""Primitive op semantics, naive-loop oracles, and gradient checks."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import assert_gradients_close, conv2d_naive, dft2d_naive, strip_means_naive
from tanet import tensor as T
from tanet.tensor import GradTape, ShapeError, Tensor, backward, fft2d, ifft2d


def grid(values, channels=1):
    """Wrap a 2-D list/array as a (1, H, W, C) tensor."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None, :, :, None]
    if channels > 1 and arr.shape[3] == 1:
        arr = np.repeat(arr, channels, axis=3)
    return Tensor(arr)


class TestConv2d:
    def test_all_ones_3x3(self):
        x = grid(np.ones((3, 3)))
        w = Tensor(np.ones((3, 3, 1, 1)))
        b = Tensor(np.zeros((1, 1, 1, 1)))
        y = T.conv2d(x, w, b, stride=1, padding=(1, 1)).data[0, :, :, 0]
        assert y[1, 1] == 9
        assert y[0, 0] == y[0, 2] == y[2, 0] == y[2, 2] == 4
        assert y[0, 1] == y[1, 0] == y[1, 2] == y[2, 1] == 6

    def test_identity_1x1_kernel(self, rng):
        x = Tensor(rng.standard_normal((2, 4, 5, 3)))
        w = np.zeros((1, 1, 3, 3))
        w[0, 0] = np.eye(3)
        y = T.conv2d(x, Tensor(w), Tensor(np.zeros((1, 1, 1, 3))))
        np.testing.assert_array_equal(y.data, x.data)

    def test_matches_naive_oracle(self, rng):
        x = rng.standard_normal((1, 5, 5, 2))
        w = rng.standard_normal((3, 3, 2, 3))
        b = rng.standard_normal(3)
        y = T.conv2d(Tensor(x), Tensor(w), Tensor(b.reshape(1, 1, 1, 3)), padding=(1, 1))
        np.testing.assert_allclose(y.data, conv2d_naive(x, w, b, padding=(1, 1)), atol=1e-12)

    @pytest.mark.parametrize("stride,pad,kh,kw", [(1, (0, 0), 1, 3), (2, (1, 1), 3, 3), (1, (3, 3), 7, 7), (1, (1, 0), 3, 1)])
    def test_oracle_shapes(self, rng, stride, pad, kh, kw):
        x = rng.standard_normal((2, 6, 5, 2))
        w = rng.standard_normal((kh, kw, 2, 4))
        b = rng.standard_normal(4)
        y = T.conv2d(Tensor(x), Tensor(w), Tensor(b.reshape(1, 1, 1, 4)), stride=stride, padding=pad)
        np.testing.assert_allclose(y.data, conv2d_naive(x, w, b, stride=stride, padding=pad), atol=1e-10)

    def test_channel_mismatch(self, rng):
        x = Tensor(rng.standard_normal((1, 4, 4, 2)))
        w = Tensor(rng.standard_normal((3, 3, 3, 1)))
        with pytest.raises(ShapeError):
            T.conv2d(x, w, Tensor(np.zeros((1, 1, 1, 1))))

    def test_nonpositive_output(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 2, 1)))
        w = Tensor(rng.standard_normal((5, 5, 1, 1)))
        with pytest.raises(ShapeError):
            T.conv2d(x, w, Tensor(np.zeros((1, 1, 1, 1))))

    def test_gradients(self, rng):
        x = Tensor(rng.standard_normal((2, 5, 4, 2)), requires_grad=True)
        w = Tensor(rng.standard_normal((3, 3, 2, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal((1, 1, 1, 3)), requires_grad=True)

        def loss():
            return T.mean_all(T.mul(y := T.conv2d(x, w, b, stride=2, padding=(1, 1)), y))

        assert_gradients_close(loss, [("x", x), ("w", w), ("b", b)])


class TestChannelPools:
    def test_constant_input(self):
        x = Tensor(np.full((1, 3, 3, 5), 0.7))
        np.testing.assert_array_equal(T.channel_avg_pool(x).data, 0.7)
        np.testing.assert_array_equal(T.channel_max_pool(x).data, 0.7)

    def test_two_channel_pixel(self):
        x = Tensor(np.array([1.0, 5.0]).reshape(1, 1, 1, 2))
        assert T.channel_avg_pool(x).item() == 3.0
        assert T.channel_max_pool(x).item() == 5.0

    def test_single_channel_identity(self, rng):
        x = Tensor(rng.standard_normal((1, 4, 4, 1)))
        np.testing.assert_array_equal(T.channel_avg_pool(x).data, x.data)
        np.testing.assert_array_equal(T.channel_max_pool(x).data, x.data)

    def test_max_grad_routes_to_first_argmax(self):
        x = Tensor(np.array([2.0, 2.0, 1.0]).reshape(1, 1, 1, 3), requires_grad=True)
        backward(T.sum_all(T.channel_max_pool(x)))
        np.testing.assert_array_equal(x.grad.reshape(-1), [1.0, 0.0, 0.0])

    def test_gradients(self, rng):
        # distinct entries keep the max-pool argmax FD-differentiable
        base = rng.permutation(4 * 3 * 3 * 4).astype(np.float64).reshape(4, 3, 3, 4)
        x = Tensor(base, requires_grad=True)

        def loss():
            s = T.concat_channels([T.channel_avg_pool(x), T.channel_max_pool(x)])
            return T.mean_all(T.mul(s, s))

        assert_gradients_close(loss, [("x", x)])


class TestStripPooling:
    def test_two_by_two(self):
        x = grid([[1.0, 3.0], [5.0, 7.0]])
        np.testing.assert_array_equal(T.strip_pool_h(x).data.reshape(-1), [3.0, 5.0])
        np.testing.assert_array_equal(T.strip_pool_v(x).data.reshape(-1), [2.0, 6.0])

    def test_constant(self):
        x = Tensor(np.full((2, 3, 4, 2), 1.25))
        np.testing.assert_array_equal(T.strip_pool_h(x).data, 1.25)
        np.testing.assert_array_equal(T.strip_pool_v(x).data, 1.25)

    def test_degenerate_axis_identity(self, rng):
        x = Tensor(rng.standard_normal((1, 1, 5, 2)))
        np.testing.assert_array_equal(T.strip_pool_h(x).data, x.data)

    def test_matches_naive_oracle(self, rng):
        x = rng.standard_normal((2, 7, 5, 3))
        col, row = strip_means_naive(x)
        np.testing.assert_allclose(T.strip_pool_h(Tensor(x)).data, col, atol=1e-12)
        np.testing.assert_allclose(T.strip_pool_v(Tensor(x)).data, row, atol=1e-12)

    def test_gradients(self, rng):
        x = Tensor(rng.standard_normal((1, 4, 5, 2)), requires_grad=True)

        def loss():
            s = T.concat_channels([
                T.expand(T.strip_pool_h(x), 4, 5),
                T.expand(T.strip_pool_v(x), 4, 5),
            ])
            return T.mean_all(T.mul(s, s))

        assert_gradients_close(loss, [("x", x)])


class TestExpand:
    def test_row_strip(self):
        strip = Tensor(np.array([3.0, 5.0]).reshape(1, 1, 2, 1))
        out = T.expand(strip, 2, 2)
        np.testing.assert_array_equal(out.data[0, :, :, 0], [[3, 5], [3, 5]])

    def test_pointwise_strip_constant(self, rng):
        strip = Tensor(rng.standard_normal((1, 1, 1, 3)))
        out = T.expand(strip, 4, 5)
        for c in range(3):
            assert np.all(out.data[0, :, :, c] == strip.data[0, 0, 0, c])

    def test_backward_sums_over_copies(self):
        strip = Tensor(np.array([1.0, 2.0]).reshape(1, 1, 2, 1), requires_grad=True)
        backward(T.sum_all(T.expand(strip, 5, 2)))
        np.testing.assert_array_equal(strip.grad.reshape(-1), [5.0, 5.0])

    def test_rejects_full_grid(self, rng):
        with pytest.raises(ShapeError):
            T.expand(Tensor(rng.standard_normal((1, 2, 2, 1))), 4, 4)

    def test_mismatched_other_axis(self, rng):
        with pytest.raises(ShapeError):
            T.expand(Tensor(rng.standard_normal((1, 1, 3, 1))), 4, 5)


class TestInstanceNorm:
    def _affine(self, c, gamma=1.0, beta=0.0):
        g = Tensor(np.full((1, 1, 1, c), gamma), requires_grad=True)
        b = Tensor(np.full((1, 1, 1, c), beta), requires_grad=True)
        return g, b

    def test_hand_computed(self):
        x = grid([[1.0, 2.0], [3.0, 4.0]])
        g, b = self._affine(1)
        y = T.instance_norm(x, g, b, eps=1e-12).data.reshape(-1)
        np.testing.assert_allclose(y, [-1.3416, -0.4472, 0.4472, 1.3416], atol=1e-3)

    def test_zero_variance_channel(self):
        x = Tensor(np.zeros((1, 3, 3, 1)))
        g, b = self._affine(1, beta=0.7)
        y = T.instance_norm(x, g, b, eps=1e-5)
        np.testing.assert_array_equal(y.data, 0.7)

    @given(a=st.floats(0.5, 2.0), b=st.floats(-1.0, 1.0))
    def test_scale_shift_invariance(self, a, b):
        rng = np.random.default_rng(99)
        x = rng.standard_normal((1, 6, 6, 2))
        g = Tensor(np.ones((1, 1, 1, 2)))
        bt = Tensor(np.zeros((1, 1, 1, 2)))
        y1 = T.instance_norm(Tensor(x), g, bt, eps=1e-10).data
        y2 = T.instance_norm(Tensor(a * x + b), g, bt, eps=1e-10).data
        np.testing.assert_allclose(y1, y2, atol=1e-6)

    def test_normalized_moments(self, rng):
        x = Tensor(rng.standard_normal((2, 8, 8, 3)) * 3 + 1)
        g, b = self._affine(3)
        y = T.instance_norm(x, g, b, eps=1e-10).data
        assert np.abs(y.mean(axis=(1, 2))).max() <= 1e-6
        np.testing.assert_allclose(y.std(axis=(1, 2)), 1.0, atol=1e-5)

    def test_eps_validation(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 2, 1)))
        g, b = self._affine(1)
        with pytest.raises(ValueError):
            T.instance_norm(x, g, b, eps=0.0)

    def test_gradients(self, rng):
        x = Tensor(rng.standard_normal((2, 4, 3, 2)), requires_grad=True)
        g, b = self._affine(2, gamma=1.3, beta=-0.2)

        def loss():
            y = T.instance_norm(x, g, b, eps=1e-3)
            return T.mean_all(T.mul(y, y))

        assert_gradients_close(loss, [("x", x), ("gamma", g), ("beta", b)])


class TestElementwise:
    def test_sigmoid_at_zero(self):
        assert T.sigmoid(Tensor(np.zeros((1, 1, 1, 1)))).item() == 0.5

    def test_sigmoid_open_interval(self):
        x = Tensor(np.array([-1e6, -50.0, 0.0, 50.0, 1e6]).reshape(1, 1, 5, 1))
        s = T.sigmoid(x).data
        assert np.all(s > 0.0) and np.all(s < 1.0)

    def test_sigmoid_gradients(self, rng):
        x = Tensor(rng.standard_normal((1, 3, 3, 2)), requires_grad=True)
        assert_gradients_close(lambda: T.sum_all(T.sigmoid(x)), [("x", x)])

    def test_concat_split_roundtrip(self, rng):
        a = Tensor(rng.standard_normal((1, 3, 3, 2)))
        b = Tensor(rng.standard_normal((1, 3, 3, 3)))
        both = T.concat_channels([a, b])
        ra, rb = T.split_channels(both, 2)
        np.testing.assert_array_equal(ra.data, a.data)
        np.testing.assert_array_equal(rb.data, b.data)

    def test_split_concat_roundtrip(self, rng):
        x = Tensor(rng.standard_normal((2, 3, 3, 6)))
        lo, hi = T.split_channels(x, 4)
        np.testing.assert_array_equal(T.concat_channels([lo, hi]).data, x.data)

    def test_split_boundary_validation(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 2, 4)))
        for bad in (0, 4, 5):
            with pytest.raises(ShapeError):
                T.split_channels(x, bad)

    def test_broadcast_mul_halves(self, rng):
        x = Tensor(rng.standard_normal((1, 4, 4, 3)))
        half = Tensor(np.full((1, 4, 4, 1), 0.5))
        np.testing.assert_allclose(T.mul(half, x).data, 0.5 * x.data, atol=0)

    def test_incompatible_shapes(self, rng):
        a = Tensor(rng.standard_normal((1, 4, 4, 2)))
        b = Tensor(rng.standard_normal((1, 3, 4, 2)))
        with pytest.raises(ShapeError):
            T.add(a, b)
        with pytest.raises(ShapeError):
            T.mul(a, b)

    def test_arithmetic_gradients(self, rng):
        a = Tensor(rng.standard_normal((1, 3, 3, 2)), requires_grad=True)
        b = Tensor(rng.standard_normal((1, 3, 3, 1)), requires_grad=True)

        def loss():
            return T.mean_all(T.mul(T.add(a, b), T.sub(a, b)))

        assert_gradients_close(loss, [("a", a), ("b", b)])

    def test_upsample_values_and_gradients(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 2, 2)), requires_grad=True)
        y = T.upsample_nearest2x(x)
        assert y.shape == (1, 4, 4, 2)
        np.testing.assert_array_equal(y.data[0, :2, :2, 0], x.data[0, 0, 0, 0])
        assert_gradients_close(
            lambda: T.mean_all(T.mul(u := T.upsample_nearest2x(x), u)), [("x", x)]
        )


class TestFFT2d:
    def test_all_ones_2x2(self):
        g = fft2d(grid(np.ones((2, 2))))
        np.testing.assert_allclose(g.re.reshape(-1), [4, 0, 0, 0], atol=1e-12)
        np.testing.assert_allclose(g.im, 0, atol=1e-12)

    def test_zeros(self):
        g = fft2d(grid(np.zeros((3, 5))))
        assert not g.re.any() and not g.im.any()

    def test_matches_naive_dft(self, rng):
        x = rng.standard_normal((1, 4, 4, 1))
        got = fft2d(Tensor(x))
        want = dft2d_naive(x[0, :, :, 0])
        np.testing.assert_allclose(got.re[0, :, :, 0], want.real, atol=1e-10)
        np.testing.assert_allclose(got.im[0, :, :, 0], want.imag, atol=1e-10)

    def test_non_power_of_two(self, rng):
        x = rng.standard_normal((1, 3, 5, 1))
        got = fft2d(Tensor(x))
        want = dft2d_naive(x[0, :, :, 0])
        np.testing.assert_allclose(got.re[0, :, :, 0], want.real, atol=1e-10)
        np.testing.assert_allclose(got.im[0, :, :, 0], want.imag, atol=1e-10)

    def test_dc_bin_is_spatial_sum(self, rng):
        x = rng.standard_normal((2, 4, 6, 3))
        g = fft2d(Tensor(x))
        np.testing.assert_allclose(g.re[:, 0, 0, :], x.sum(axis=(1, 2)), atol=1e-10)

    def test_linearity(self, rng):
        x = rng.standard_normal((1, 4, 4, 2))
        y = rng.standard_normal((1, 4, 4, 2))
        a = 2.75
        lhs = fft2d(Tensor(a * x + y))
        fx, fy = fft2d(Tensor(x)), fft2d(Tensor(y))
        np.testing.assert_allclose(lhs.re, a * fx.re + fy.re, atol=1e-10)
        np.testing.assert_allclose(lhs.im, a * fx.im + fy.im, atol=1e-10)

    def test_roundtrip(self, rng):
        x = rng.standard_normal((2, 6, 6, 3))
        back = ifft2d(fft2d(Tensor(x)))
        assert np.abs(back.re - x).max() / np.abs(x).max() < 1e-10
        assert np.abs(back.im).max() < 1e-10


class TestBackward:
    def test_sum_gives_ones(self, rng):
        x = Tensor(rng.standard_normal((2, 3, 3, 2)), requires_grad=True)
        backward(T.sum_all(x))
        np.testing.assert_array_equal(x.grad, np.ones_like(x.data))

    def test_non_scalar_loss_rejected(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 2, 1)), requires_grad=True)
        with pytest.raises(ShapeError):
            backward(T.relu(x))

    def test_constant_subgraph_contributes_nothing(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 2, 1)), requires_grad=True)
        const = Tensor(rng.standard_normal((1, 2, 2, 1)))  # no grad requested
        backward(T.sum_all(T.add(x, T.mul(const, const))))
        np.testing.assert_array_equal(x.grad, np.ones_like(x.data))
        assert const.grad is None

    def test_fanout_accumulates(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 2, 1)), requires_grad=True)
        backward(T.sum_all(T.add(x, x)))
        np.testing.assert_array_equal(x.grad, np.full_like(x.data, 2.0))

    def test_tape_is_topological_and_visits_once(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 2, 2)), requires_grad=True)
        y = T.relu(x)
        z = T.add(y, y)
        loss = T.mean_all(T.mul(z, z))
        tape = GradTape.trace(loss)
        ids = [id(t) for t in tape.order]
        assert len(ids) == len(set(ids)), "a node was recorded twice"
        pos = {i: k for k, i in enumerate(ids)}
        for t in tape.order:
            for parent in t._node.inputs:
                if parent._node is not None:
                    assert pos[id(parent)] < pos[id(t)], "tape order is not topological"

    def test_no_grad_suppresses_recording(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 2, 1)), requires_grad=True)
        with T.no_grad():
            y = T.relu(x)
        assert y._node is None and not y.requires_grad


class TestTensorInvariants:
    def test_rank_and_dims_validated(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 2)))
        with pytest.raises(ShapeError):
            Tensor(np.zeros((1, 0, 2, 2)))

    @given(st.integers(0, 10_000))
    def test_ops_keep_values_finite(self, seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.standard_normal((1, 4, 4, 2)) * 100)
        outs = [
            T.sigmoid(x), T.relu(x), T.channel_avg_pool(x), T.channel_max_pool(x),
            T.strip_pool_h(x), T.strip_pool_v(x),
        ]
        for out in outs:
            assert np.isfinite(out.data).all()
