"""Gradient correctness of every differentiable op (finite differences, f64)."""

import numpy as np
import pytest

from falconfuse import ops
from falconfuse.errors import GradientTapeError
from falconfuse.gradcheck import check_gradients
from falconfuse.optim import AdamHyper, AdamState, adam_step
from falconfuse.tensor import Parameter, Tensor, backward, no_grad


def leaf(rng, *shape):
    t = Tensor(rng.normal(size=shape).astype(np.float64))
    t.requires_grad = True
    return t


class TestBackwardBasics:
    def test_square(self):
        x = Tensor(np.array(3.0))
        x.requires_grad = True
        y = ops.mul(x, x)
        y.backward()
        assert x.grad == pytest.approx(6.0)

    def test_unused_parameter_gets_zero_grad(self, rng):
        x = leaf(rng, 4)
        unused = Parameter("unused", Tensor(rng.normal(size=(2, 2))))
        loss = ops.sum_all(x)
        backward(loss, [unused])
        np.testing.assert_array_equal(unused.tensor.grad, 0.0)

    def test_double_backward_raises(self, rng):
        x = leaf(rng, 3)
        loss = ops.sum_all(x)
        loss.backward()
        with pytest.raises(GradientTapeError):
            loss.backward()

    def test_nonscalar_root_raises(self, rng):
        x = leaf(rng, 3)
        y = ops.relu(x)
        with pytest.raises(GradientTapeError):
            y.backward()

    def test_forward_backward_twice_identical(self, rng):
        x = leaf(rng, 2, 5)
        w = leaf(rng, 5, 3)
        b = leaf(rng, 3)

        def run():
            for t in (x, w, b):
                t.zero_grad()
            loss, _ = ops.softmax_cross_entropy(ops.dense(x, w, b), [0, 2])
            loss.backward()
            return [t.grad.copy() for t in (x, w, b)]

        first = run()
        second = run()
        for a, b_ in zip(first, second):
            np.testing.assert_array_equal(a, b_)

    def test_diamond_graph_accumulates(self, rng):
        # y = x*x + x*x reuses the same intermediate twice.
        x = leaf(rng, 4)
        sq = ops.mul(x, x)
        y = ops.sum_all(ops.add(sq, sq))
        y.backward()
        np.testing.assert_allclose(x.grad, 4.0 * x.data)

    def test_no_grad_builds_no_tape(self, rng):
        x = leaf(rng, 3)
        with no_grad():
            y = ops.relu(x)
        assert y._backward is None and y._parents == ()


class TestOpGradients:
    """Central finite differences, f64, rel err < 1e-5, >=10 coords per tensor."""

    def check(self, f, tensors, rng, tol=1e-5):
        return check_gradients(f, tensors, rng, samples_per_tensor=10, rel_tol=tol)

    def test_conv2d(self, rng):
        x = leaf(rng, 2, 4, 6, 6)
        w = leaf(rng, 6, 2, 3, 3)
        b = leaf(rng, 6)
        self.check(
            lambda: ops.sum_all(ops.mul(
                ops.conv2d(x, w, b, stride=2, padding=1, groups=2),
                ops.conv2d(x, w, b, stride=2, padding=1, groups=2),
            )),
            [x, w, b],
            rng,
        )

    def test_conv2d_depthwise(self, rng):
        x = leaf(rng, 1, 4, 5, 5)
        w = leaf(rng, 4, 1, 3, 3)
        self.check(
            lambda: ops.sum_all(ops.silu(ops.conv2d(x, w, padding=1, groups=4))),
            [x, w],
            rng,
        )

    @pytest.mark.parametrize("kind", ["relu", "gelu", "silu", "sigmoid"])
    def test_activations(self, rng, kind):
        # Keep relu inputs away from the kink where the derivative jumps.
        x = leaf(rng, 4, 5)
        x.data[np.abs(x.data) < 0.05] += 0.1
        self.check(
            lambda: ops.sum_all(ops.mul(ops.activation(x, kind), ops.activation(x, kind))),
            [x],
            rng,
        )

    def test_layer_norm(self, rng):
        x = leaf(rng, 2, 6, 3, 3)
        g = leaf(rng, 6)
        b = leaf(rng, 6)
        self.check(
            lambda: ops.sum_all(ops.gelu(ops.layer_norm(x, g, b, eps=1e-5))),
            [x, g, b],
            rng,
        )

    def test_batch_norm_training(self, rng):
        x = leaf(rng, 3, 4, 3, 3)
        g = leaf(rng, 4)
        b = leaf(rng, 4)
        rm, rv = np.zeros(4), np.ones(4)
        self.check(
            lambda: ops.sum_all(
                ops.silu(ops.batch_norm(x, g, b, rm, rv, eps=1e-3, training=True))
            ),
            [x, g, b],
            rng,
        )

    def test_batch_norm_eval(self, rng):
        x = leaf(rng, 2, 4, 3, 3)
        g = leaf(rng, 4)
        b = leaf(rng, 4)
        rm = rng.normal(size=4)
        rv = rng.uniform(0.5, 2.0, size=4)
        self.check(
            lambda: ops.sum_all(
                ops.sigmoid(ops.batch_norm(x, g, b, rm, rv, training=False))
            ),
            [x, g, b],
            rng,
        )

    def test_global_avg_pool(self, rng):
        x = leaf(rng, 2, 3, 4, 4)
        self.check(lambda: ops.sum_all(ops.mul(ops.global_avg_pool(x), ops.global_avg_pool(x))), [x], rng)

    def test_concat_backward_splits(self, rng):
        a = leaf(rng, 3, 2)
        b = leaf(rng, 3, 4)
        out = ops.sum_all(ops.concat_features(a, b))
        out.backward()
        np.testing.assert_array_equal(a.grad, np.ones((3, 2)))
        np.testing.assert_array_equal(b.grad, np.ones((3, 4)))

    def test_concat_gradcheck(self, rng):
        a = leaf(rng, 3, 2)
        b = leaf(rng, 3, 4)
        self.check(
            lambda: ops.sum_all(ops.silu(ops.concat_features(a, b))), [a, b], rng
        )

    def test_dense(self, rng):
        x = leaf(rng, 3, 5)
        w = leaf(rng, 5, 4)
        b = leaf(rng, 4)
        self.check(lambda: ops.sum_all(ops.gelu(ops.dense(x, w, b))), [x, w, b], rng)

    def test_softmax_cross_entropy_matches_probs_minus_onehot(self, rng):
        logits = leaf(rng, 4, 3)
        labels = [0, 2, 1, 1]
        loss, probs = ops.softmax_cross_entropy(logits, labels)
        loss.backward()
        onehot = np.zeros((4, 3))
        onehot[np.arange(4), labels] = 1.0
        np.testing.assert_allclose(logits.grad, (probs.data - onehot) / 4.0, rtol=1e-10)

    def test_softmax_cross_entropy_gradcheck(self, rng):
        logits = leaf(rng, 5, 3)
        labels = [0, 1, 2, 0, 1]
        self.check(
            lambda: ops.softmax_cross_entropy(logits, labels)[0], [logits], rng
        )

    def test_dropout(self, rng):
        x = leaf(rng, 6, 6)
        self.check(
            lambda: ops.sum_all(
                ops.mul(
                    ops.dropout(x, 0.4, np.random.default_rng(11)),
                    ops.dropout(x, 0.4, np.random.default_rng(11)),
                )
            ),
            [x],
            rng,
        )

    def test_scale_channels_learned(self, rng):
        x = leaf(rng, 2, 4, 3, 3)
        s = leaf(rng, 4)
        self.check(lambda: ops.sum_all(ops.gelu(ops.scale_channels(x, s))), [x, s], rng)

    def test_scale_channels_gate(self, rng):
        x = leaf(rng, 2, 4, 3, 3)
        s = leaf(rng, 2, 4)
        self.check(lambda: ops.sum_all(ops.silu(ops.scale_channels(x, s))), [x, s], rng)


class TestAdam:
    def test_first_step_moves_by_lr_sign(self, rng):
        # Bias-corrected first step: delta = lr * g / (|g| + eps') ~ lr*sign(g).
        data = rng.normal(size=(4, 3))
        p = Parameter("w", Tensor(data.copy().astype(np.float64)))
        p.tensor.grad = np.full_like(p.data, 0.5)
        state = AdamState(hyper=AdamHyper(lr=1e-3))
        adam_step([p], state)
        np.testing.assert_allclose(data - p.data, 1e-3, rtol=1e-4)
        assert state.step_count == 1

    def test_zero_grad_barely_drifts(self):
        p = Parameter("w", Tensor(np.ones(3)))
        state = AdamState()
        for _ in range(5):
            p.tensor.grad = np.zeros(3)
            adam_step([p], state)
        assert np.abs(p.data - 1.0).max() < 5 * state.hyper.eps * state.hyper.lr

    def test_deterministic_across_runs(self, rng):
        grads = [rng.normal(size=(3, 3)) for _ in range(10)]

        def run():
            p = Parameter("w", Tensor(np.ones((3, 3))))
            state = AdamState()
            for g in grads:
                p.tensor.grad = g.copy()
                adam_step([p], state)
            return p.data.copy()

        np.testing.assert_array_equal(run(), run())

    def test_missing_grad_raises(self):
        p = Parameter("w", Tensor(np.ones(2)))
        with pytest.raises(Exception, match="no gradient"):
            adam_step([p], AdamState())

    def test_matches_reference_formula(self, rng):
        # Closed-form two-step reference for a single coordinate.
        g1, g2 = 0.3, -0.7
        p = Parameter("w", Tensor(np.array([1.0])))
        state = AdamState(hyper=AdamHyper(lr=0.01))
        h = state.hyper
        p.tensor.grad = np.array([g1])
        adam_step([p], state)
        p.tensor.grad = np.array([g2])
        adam_step([p], state)

        m1 = (1 - h.beta1) * g1
        v1 = (1 - h.beta2) * g1 * g1
        x = 1.0 - h.lr * (m1 / (1 - h.beta1)) / (np.sqrt(v1 / (1 - h.beta2)) + h.eps)
        m2 = h.beta1 * m1 + (1 - h.beta1) * g2
        v2 = h.beta2 * v1 + (1 - h.beta2) * g2 * g2
        x -= h.lr * (m2 / (1 - h.beta1**2)) / (np.sqrt(v2 / (1 - h.beta2**2)) + h.eps)
        assert p.data[0] == pytest.approx(x, rel=1e-12)
