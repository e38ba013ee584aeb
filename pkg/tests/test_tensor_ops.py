"""Forward semantics of the tensor core ops."""

import math

import numpy as np
import pytest

from falconfuse import ops
from falconfuse.errors import ConfigError, DataError, ShapeError
from falconfuse.tensor import Tensor

from oracles import conv2d_reference, matmul_reference


class TestConv2d:
    def test_identity_1x1_kernel(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        w = Tensor(np.ones((1, 1, 1, 1)))
        out = ops.conv2d(x, w)
        np.testing.assert_array_equal(out.data, np.ones((1, 1, 3, 3)))

    def test_depthwise_shape_preserved(self, rng):
        x = Tensor(rng.normal(size=(1, 4, 8, 8)))
        w = Tensor(rng.normal(size=(4, 1, 3, 3)))
        out = ops.conv2d(x, w, stride=1, padding=1, groups=4)
        assert out.shape == (1, 4, 8, 8)

    def test_matches_nested_loop_oracle(self, rng):
        x = rng.normal(size=(1, 2, 5, 5))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        got = ops.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
        want = conv2d_reference(x, w, b)
        np.testing.assert_allclose(got, want, rtol=1e-5)

    @pytest.mark.parametrize("stride,padding,groups", [(1, 0, 1), (2, 1, 1), (1, 2, 2), (2, 0, 4)])
    def test_oracle_over_strides_paddings_groups(self, rng, stride, padding, groups):
        x = rng.normal(size=(2, 4, 9, 7))
        w = rng.normal(size=(8, 4 // groups, 3, 3))
        got = ops.conv2d(Tensor(x), Tensor(w), stride=stride, padding=padding, groups=groups).data
        want = conv2d_reference(x, w, stride=stride, padding=padding, groups=groups)
        np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-10)

    def test_depthwise_equals_per_channel_convs(self, rng):
        # groups=C must equal C independent single-channel convolutions.
        c = 3
        x = rng.normal(size=(2, c, 4, 4))
        w = rng.normal(size=(c, 1, 3, 3))
        got = ops.conv2d(Tensor(x), Tensor(w), padding=1, groups=c).data
        for ci in range(c):
            single = ops.conv2d(
                Tensor(x[:, ci : ci + 1]), Tensor(w[ci : ci + 1]), padding=1
            ).data
            np.testing.assert_allclose(got[:, ci : ci + 1], single, rtol=1e-6)

    def test_groups_not_dividing_channels(self, rng):
        x = Tensor(rng.normal(size=(1, 3, 4, 4)))
        w = Tensor(rng.normal(size=(4, 1, 3, 3)))
        with pytest.raises(ConfigError):
            ops.conv2d(x, w, groups=2)

    def test_kernel_larger_than_input(self, rng):
        x = Tensor(rng.normal(size=(1, 1, 2, 2)))
        w = Tensor(rng.normal(size=(1, 1, 5, 5)))
        with pytest.raises(ShapeError):
            ops.conv2d(x, w)

    def test_channel_mismatch(self, rng):
        x = Tensor(rng.normal(size=(1, 3, 4, 4)))
        w = Tensor(rng.normal(size=(2, 4, 3, 3)))
        with pytest.raises(ShapeError):
            ops.conv2d(x, w)


class TestActivations:
    def test_silu_at_zero(self):
        assert ops.silu(Tensor(np.zeros(1))).data[0] == 0.0

    def test_relu_values(self):
        out = ops.relu(Tensor(np.array([-1.0, 2.0])))
        np.testing.assert_array_equal(out.data, [0.0, 2.0])

    def test_silu_closed_form_at_one(self):
        # x*sigmoid(x) at x=1 evaluated with the math module as oracle.
        want = 1.0 / (1.0 + math.exp(-1.0))
        got = ops.silu(Tensor(np.array([1.0]))).data[0]
        assert abs(got - want) < 1e-12

    def test_gelu_tanh_constant(self):
        assert abs(ops.GELU_TANH_COEFF - math.sqrt(2.0 / math.pi)) < 1e-15

    def test_dispatch_unknown_kind(self):
        with pytest.raises(ConfigError):
            ops.activation(Tensor(np.zeros(2)), "tanh")

    def test_dispatch_matches_direct(self, rng):
        x = rng.normal(size=7)
        for kind, fn in [("relu", ops.relu), ("gelu", ops.gelu), ("silu", ops.silu), ("sigmoid", ops.sigmoid)]:
            np.testing.assert_array_equal(
                ops.activation(Tensor(x), kind).data, fn(Tensor(x)).data
            )

    def test_sigmoid_extreme_inputs_finite(self):
        out = ops.sigmoid(Tensor(np.array([-1e4, 1e4]))).data
        assert np.all(np.isfinite(out))
        assert out[0] == pytest.approx(0.0, abs=1e-12)
        assert out[1] == pytest.approx(1.0, abs=1e-12)


class TestLayerNorm:
    def test_constant_input_zeroed(self):
        x = Tensor(np.full((2, 5, 3, 3), 7.0))
        out = ops.layer_norm(x, Tensor(np.ones(5)), Tensor(np.zeros(5)))
        np.testing.assert_allclose(out.data, 0.0)

    def test_moments(self, rng):
        x = Tensor(rng.normal(size=(2, 16, 4, 4)))
        out = ops.layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16)), eps=1e-12).data
        mu = out.mean(axis=1)
        var = out.var(axis=1)
        assert np.abs(mu).max() < 1e-6
        assert np.abs(var - 1.0).max() < 1e-4

    def test_beta_shift(self):
        x = Tensor(np.full((1, 4, 2, 2), 3.0))
        out = ops.layer_norm(x, Tensor(np.ones(4)), Tensor(np.full(4, 5.0)))
        np.testing.assert_allclose(out.data, 5.0)

    def test_rejects_nonpositive_eps(self):
        x = Tensor(np.zeros((1, 4, 2, 2)))
        with pytest.raises(ConfigError):
            ops.layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)), eps=0.0)

    def test_2d_input(self, rng):
        x = Tensor(rng.normal(size=(3, 8)))
        out = ops.layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8)), eps=1e-12).data
        assert np.abs(out.mean(axis=1)).max() < 1e-6


class TestBatchNorm:
    def _affine(self, c):
        return Tensor(np.ones(c)), Tensor(np.zeros(c))

    def test_training_batch_mean_zero(self, rng):
        x = Tensor(rng.normal(size=(4, 3, 5, 5)))
        gamma, beta = self._affine(3)
        rm, rv = np.zeros(3), np.ones(3)
        out = ops.batch_norm(x, gamma, beta, rm, rv, training=True).data
        assert np.abs(out.mean(axis=(0, 2, 3))).max() < 1e-5

    def test_eval_with_initial_stats(self, rng):
        x = rng.normal(size=(2, 3, 4, 4))
        gamma, beta = self._affine(3)
        rm, rv = np.zeros(3), np.ones(3)
        eps = 1e-3
        out = ops.batch_norm(Tensor(x), gamma, beta, rm, rv, eps=eps, training=False).data
        np.testing.assert_allclose(out, x / np.sqrt(1.0 + eps), rtol=1e-6)

    def test_momentum_one_takes_batch_stats(self, rng):
        x = rng.normal(size=(4, 3, 5, 5))
        gamma, beta = self._affine(3)
        rm, rv = np.zeros(3), np.ones(3)
        ops.batch_norm(Tensor(x), gamma, beta, rm, rv, momentum=1.0, training=True)
        np.testing.assert_allclose(rm, x.mean(axis=(0, 2, 3)), rtol=1e-6, atol=1e-12)
        np.testing.assert_allclose(rv, x.var(axis=(0, 2, 3)), rtol=1e-6, atol=1e-12)

    def test_eval_does_not_touch_stats(self, rng):
        x = Tensor(rng.normal(size=(2, 3, 4, 4)))
        gamma, beta = self._affine(3)
        rm, rv = np.full(3, 0.5), np.full(3, 2.0)
        ops.batch_norm(x, gamma, beta, rm, rv, training=False)
        np.testing.assert_array_equal(rm, 0.5)
        np.testing.assert_array_equal(rv, 2.0)

    def test_training_needs_two_positions(self, rng):
        x = Tensor(rng.normal(size=(1, 3, 1, 1)))
        gamma, beta = self._affine(3)
        with pytest.raises(ShapeError):
            ops.batch_norm(x, gamma, beta, np.zeros(3), np.ones(3), training=True)


class TestPoolingAndFusion:
    def test_gap_constant_plane(self):
        x = Tensor(np.full((2, 3, 4, 4), 3.0))
        np.testing.assert_allclose(ops.global_avg_pool(x).data, 3.0)

    def test_gap_identity_on_1x1(self, rng):
        x = rng.normal(size=(2, 5, 1, 1))
        out = ops.global_avg_pool(Tensor(x)).data
        np.testing.assert_array_equal(out, x[:, :, 0, 0])

    def test_gap_matches_direct_mean(self, rng):
        x = rng.normal(size=(2, 3, 4, 4))
        out = ops.global_avg_pool(Tensor(x)).data
        np.testing.assert_allclose(out, x.mean(axis=(2, 3)), atol=1e-6)

    def test_concat_values(self):
        a = Tensor(np.array([[1.0, 2.0]]))
        b = Tensor(np.array([[3.0, 4.0, 5.0]]))
        out = ops.concat_features(a, b)
        np.testing.assert_array_equal(out.data, [[1.0, 2.0, 3.0, 4.0, 5.0]])

    def test_concat_empty_rhs(self, rng):
        a = rng.normal(size=(3, 4))
        out = ops.concat_features(Tensor(a), Tensor(np.zeros((3, 0))))
        np.testing.assert_array_equal(out.data, a)

    def test_concat_batch_mismatch(self):
        with pytest.raises(ShapeError):
            ops.concat_features(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 3))))

    def test_dense_identity(self, rng):
        x = rng.normal(size=(3, 4))
        out = ops.dense(Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4)))
        np.testing.assert_allclose(out.data, x)

    def test_dense_small_case(self):
        out = ops.dense(
            Tensor(np.array([[1.0, 1.0]])),
            Tensor(np.array([[1.0], [1.0]])),
            Tensor(np.array([1.0])),
        )
        assert out.data[0, 0] == 3.0

    def test_dense_matches_loop_oracle(self, rng):
        x = rng.normal(size=(4, 6))
        w = rng.normal(size=(6, 3))
        b = rng.normal(size=3)
        got = ops.dense(Tensor(x), Tensor(w), Tensor(b)).data
        np.testing.assert_allclose(got, matmul_reference(x, w, b), rtol=1e-6)

    def test_dense_inner_dim_mismatch(self):
        with pytest.raises(ShapeError):
            ops.dense(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss, probs = ops.softmax_cross_entropy(Tensor(np.zeros((2, 3))), [0, 2])
        np.testing.assert_allclose(probs.data, 1.0 / 3.0)
        assert loss.item() == pytest.approx(math.log(3.0), rel=1e-6)

    def test_saturated_true_class(self):
        logits = np.zeros((1, 3))
        logits[0, 1] = 100.0
        loss, _ = ops.softmax_cross_entropy(Tensor(logits), [1])
        assert loss.item() < 1e-6

    def test_rows_sum_to_one_under_huge_logits(self, rng):
        logits = rng.uniform(-1e4, 1e4, size=(5, 3))
        _, probs = ops.softmax_cross_entropy(Tensor(logits), [0, 1, 2, 0, 1])
        np.testing.assert_allclose(probs.data.sum(axis=1), 1.0, atol=1e-6)

    def test_label_out_of_range(self):
        with pytest.raises(DataError):
            ops.softmax_cross_entropy(Tensor(np.zeros((1, 3))), [3])


class TestDropout:
    def test_rate_zero_is_identity(self, rng):
        x = Tensor(rng.normal(size=(4, 8)))
        out = ops.dropout(x, 0.0, np.random.default_rng(0))
        assert out is x

    def test_mask_is_deterministic_per_stream(self, rng):
        x = Tensor(rng.normal(size=(10, 20)))
        a = ops.dropout(x, 0.5, np.random.default_rng(7)).data
        b = ops.dropout(x, 0.5, np.random.default_rng(7)).data
        np.testing.assert_array_equal(a, b)

    def test_kept_values_scaled(self, rng):
        x = Tensor(np.ones((100, 100)))
        out = ops.dropout(x, 0.2, np.random.default_rng(3)).data
        kept = out[out != 0]
        np.testing.assert_allclose(kept, 1.0 / 0.8)

    def test_invalid_rate(self):
        with pytest.raises(ConfigError):
            ops.dropout(Tensor(np.zeros(3)), 1.0, np.random.default_rng(0))


class TestScaleChannels:
    def test_per_channel_scale(self, rng):
        x = rng.normal(size=(2, 3, 4, 4))
        s = np.array([0.0, 1.0, 2.0])
        out = ops.scale_channels(Tensor(x), Tensor(s)).data
        np.testing.assert_allclose(out, x * s[None, :, None, None])

    def test_per_sample_gate(self, rng):
        x = rng.normal(size=(2, 3, 4, 4))
        s = rng.uniform(size=(2, 3))
        out = ops.scale_channels(Tensor(x), Tensor(s)).data
        np.testing.assert_allclose(out, x * s[:, :, None, None])
