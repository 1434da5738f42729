import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rtsr.tensor import (
    ActivationKind,
    ConvParams,
    activation_apply,
    as_tensor,
    concat_channels,
    conv2d,
    elementwise,
    pixel_shuffle,
    pixel_unshuffle,
)


def conv2d_oracle(x, weight, bias=None, stride=1, padding=0, groups=1):
    """Direct nested-loop cross-correlation, independent of the library path."""
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    n, c, h, w = x.shape
    o, cig, kh, kw = weight.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, o, oh, ow))
    cout_g = o // groups
    for ni in range(n):
        for oi in range(o):
            gi = oi // cout_g
            for yy in range(oh):
                for xx in range(ow):
                    acc = 0.0
                    for ci in range(cig):
                        for u in range(kh):
                            for v in range(kw):
                                acc += (
                                    weight[oi, ci, u, v]
                                    * xp[ni, gi * cig + ci, yy * stride + u, xx * stride + v]
                                )
                    if bias is not None:
                        acc += bias[oi]
                    out[ni, oi, yy, xx] = acc
    return out


def rand_tensor(rng, shape):
    return rng.standard_normal(shape).astype(np.float32)


class TestConv2d:
    def test_scalar_multiply_add(self):
        x = as_tensor([[[[2.0]]]])
        p = ConvParams(weight=np.full((1, 1, 1, 1), 3.0, np.float32), bias=np.array([0.5]))
        assert conv2d(x, p)[0, 0, 0, 0] == pytest.approx(6.5)

    def test_all_ones_3x3(self):
        x = np.ones((1, 1, 3, 3), np.float32)
        p = ConvParams(weight=np.ones((1, 1, 3, 3), np.float32), padding=1)
        y = conv2d(x, p)[0, 0]
        expected = conv2d_oracle(x, p.weight, padding=1)[0, 0]
        np.testing.assert_allclose(y, expected, atol=1e-6)
        assert y[1, 1] == 9
        assert y[0, 1] == 6 and y[1, 0] == 6
        assert y[0, 0] == 4 and y[2, 2] == 4

    def test_dirac_kernel_is_identity(self):
        rng = np.random.default_rng(0)
        x = rand_tensor(rng, (2, 3, 5, 7))
        w = np.zeros((3, 3, 3, 3), np.float32)
        for c in range(3):
            w[c, c, 1, 1] = 1.0
        y = conv2d(x, ConvParams(weight=w, padding=1))
        np.testing.assert_array_equal(y, x)

    @pytest.mark.parametrize("stride,padding,groups", [(1, 0, 1), (1, 1, 1), (2, 1, 1), (1, 1, 2)])
    def test_against_nested_loop_oracle(self, stride, padding, groups):
        rng = np.random.default_rng(7)
        for _ in range(3):
            x = rand_tensor(rng, (2, 4, 8, 8))
            w = rand_tensor(rng, (6, 4 // groups, 3, 3))
            b = rand_tensor(rng, (6,))
            got = conv2d(x, ConvParams(weight=w, bias=b, stride=stride, padding=padding, groups=groups))
            want = conv2d_oracle(x, w, b, stride, padding, groups)
            np.testing.assert_allclose(got, want, atol=1e-5)

    def test_linearity_without_bias(self):
        rng = np.random.default_rng(3)
        x = rand_tensor(rng, (1, 3, 6, 6))
        y = rand_tensor(rng, (1, 3, 6, 6))
        p = ConvParams(weight=rand_tensor(rng, (5, 3, 3, 3)), padding=1)
        lhs = conv2d(2.0 * x + 0.5 * y, p)
        rhs = 2.0 * conv2d(x, p) + 0.5 * conv2d(y, p)
        np.testing.assert_allclose(lhs, rhs, atol=1e-4)

    def test_channel_mismatch_names_both_shapes(self):
        x = np.zeros((1, 2, 4, 4), np.float32)
        p = ConvParams(weight=np.zeros((1, 3, 3, 3), np.float32))
        with pytest.raises(ValueError, match=r"\(1, 2, 4, 4\).*\(1, 3, 3, 3\)"):
            conv2d(x, p)

    def test_zero_sized_output_rejected(self):
        x = np.zeros((1, 1, 2, 2), np.float32)
        p = ConvParams(weight=np.zeros((1, 1, 3, 3), np.float32))
        with pytest.raises(ValueError, match="smaller than kernel"):
            conv2d(x, p)

    def test_batch_rows_deterministic(self):
        rng = np.random.default_rng(11)
        x = rand_tensor(rng, (1, 2, 16, 16))
        p = ConvParams(weight=rand_tensor(rng, (4, 2, 3, 3)), padding=1)
        np.testing.assert_array_equal(conv2d(x, p), conv2d(x, p))


class TestShuffle:
    def test_r1_identity(self):
        x = np.arange(24, dtype=np.float32).reshape(1, 2, 3, 4)
        np.testing.assert_array_equal(pixel_shuffle(x, 1), x)
        np.testing.assert_array_equal(pixel_unshuffle(x, 1), x)

    def test_forced_2x2_layout(self):
        x = np.array([1.0, 2.0, 3.0, 4.0], np.float32).reshape(1, 4, 1, 1)
        y = pixel_shuffle(x, 2)
        np.testing.assert_array_equal(y[0, 0], [[1, 2], [3, 4]])
        back = pixel_unshuffle(y, 2)
        np.testing.assert_array_equal(back, x)

    @settings(max_examples=30, deadline=None)
    @given(
        n=st.integers(1, 2),
        c=st.integers(1, 3),
        h=st.integers(1, 5),
        w=st.integers(1, 5),
        r=st.integers(1, 3),
        seed=st.integers(0, 2**16),
    )
    def test_round_trips_bit_exact(self, n, c, h, w, r, seed):
        rng = np.random.default_rng(seed)
        x = rand_tensor(rng, (n, c * r * r, h, w))
        np.testing.assert_array_equal(pixel_unshuffle(pixel_shuffle(x, r), r), x)
        y = rand_tensor(rng, (n, c, h * r, w * r))
        np.testing.assert_array_equal(pixel_shuffle(pixel_unshuffle(y, r), r), y)

    def test_preserves_value_multiset(self):
        rng = np.random.default_rng(5)
        x = rand_tensor(rng, (2, 8, 3, 5))
        y = pixel_shuffle(x, 2)
        np.testing.assert_array_equal(np.sort(x.ravel()), np.sort(y.ravel()))

    def test_divisibility_errors(self):
        x = np.zeros((1, 3, 4, 4), np.float32)
        with pytest.raises(ValueError, match="not divisible"):
            pixel_shuffle(x, 2)
        x = np.zeros((1, 3, 5, 4), np.float32)
        with pytest.raises(ValueError, match="not divisible"):
            pixel_unshuffle(x, 2)


class TestActivations:
    def test_relu(self):
        x = np.array([-1.0, 2.0], np.float32).reshape(1, 1, 1, 2)
        y = activation_apply(x, ActivationKind.RELU)
        np.testing.assert_array_equal(y.ravel(), [0.0, 2.0])

    def test_zero_fixed_points(self):
        zero = np.zeros((1, 1, 1, 1), np.float32)
        assert activation_apply(zero, ActivationKind.SIGMOID_CENTERED)[0, 0, 0, 0] == 0.0
        assert activation_apply(zero, ActivationKind.GELU_TANH_APPROX)[0, 0, 0, 0] == 0.0

    def test_sigmoid_centered_is_odd(self):
        rng = np.random.default_rng(9)
        x = rand_tensor(rng, (1, 1, 8, 8)) * 5
        f = activation_apply(x, ActivationKind.SIGMOID_CENTERED)
        g = activation_apply(-x, ActivationKind.SIGMOID_CENTERED)
        np.testing.assert_allclose(f, -g, atol=1e-6)

    def test_gelu_matches_reference_values(self):
        # tanh approximation at a few probe points, against the closed form
        x = np.array([-2.0, -0.5, 0.5, 2.0], np.float32).reshape(1, 1, 1, 4)
        y = activation_apply(x, ActivationKind.GELU_TANH_APPROX).ravel()
        ref = 0.5 * x.ravel() * (1 + np.tanh(np.sqrt(2 / np.pi) * (x.ravel() + 0.044715 * x.ravel() ** 3)))
        np.testing.assert_allclose(y, ref, atol=1e-6)


class TestElementwise:
    def test_add_zeros_and_mul_ones(self):
        rng = np.random.default_rng(2)
        x = rand_tensor(rng, (1, 2, 3, 3))
        np.testing.assert_array_equal(elementwise(x, np.zeros_like(x), "add"), x)
        np.testing.assert_array_equal(elementwise(x, np.ones_like(x), "mul"), x)

    def test_concat_preserves_blocks(self):
        rng = np.random.default_rng(4)
        a = rand_tensor(rng, (1, 2, 2, 2))
        b = rand_tensor(rng, (1, 3, 2, 2))
        y = concat_channels([a, b])
        assert y.shape == (1, 5, 2, 2)
        for ci in range(2):
            np.testing.assert_array_equal(y[:, ci], a[:, ci])
        for ci in range(3):
            np.testing.assert_array_equal(y[:, 2 + ci], b[:, ci])

    def test_shape_mismatch_errors(self):
        a = np.zeros((1, 2, 3, 3), np.float32)
        b = np.zeros((1, 2, 4, 3), np.float32)
        with pytest.raises(ValueError, match="mismatch"):
            elementwise(a, b, "add")
        with pytest.raises(ValueError, match="incompatible"):
            concat_channels([a, b])


def test_as_tensor_rejects_partial_zero_shapes():
    with pytest.raises(ValueError, match="zero only all together"):
        as_tensor(np.zeros((1, 0, 2, 2)))
    assert as_tensor(np.zeros((0, 0, 0, 0))).shape == (0, 0, 0, 0)
