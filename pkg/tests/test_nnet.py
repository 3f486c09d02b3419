import numpy as np
import pytest

from gradcheck import fd_check

from ramanmix import nnet


def rng_for(seed):
    return np.random.Generator(np.random.Philox(key=seed))


class TestLayerGradients:
    def test_dense(self):
        rng = rng_for(0)
        x = np.random.default_rng(3).standard_normal((3, 7))
        assert fd_check(nnet.Dense(7, 4, rng), x) < 1e-4

    def test_dense_on_token_batches(self):
        rng = rng_for(1)
        x = np.random.default_rng(3).standard_normal((2, 4, 5))
        assert fd_check(nnet.Dense(5, 6, rng), x) < 1e-4

    @pytest.mark.parametrize("kernel,channels", [(3, 1), (5, 2)])
    def test_conv1d(self, kernel, channels):
        rng = rng_for(2)
        x = np.random.default_rng(4).standard_normal((2, 11, channels))
        assert fd_check(nnet.Conv1D(channels, 3, kernel, rng), x) < 1e-4

    def test_layernorm(self):
        x = np.random.default_rng(5).standard_normal((3, 4, 6))
        assert fd_check(nnet.LayerNorm(6), x) < 1e-4

    @pytest.mark.parametrize("kind,param", [
        ("relu", None), ("leaky_relu", 0.02), ("softmax", None),
        ("soft_rect_tanh", 10.0),
    ])
    def test_activations(self, kind, param):
        # keep inputs away from the relu kink where the derivative jumps
        x = np.random.default_rng(6).standard_normal((3, 5))
        x[np.abs(x) < 1e-3] = 0.1
        assert fd_check(nnet.Activation(kind, param), x) < 1e-4

    def test_attention(self):
        rng = rng_for(7)
        x = np.random.default_rng(8).standard_normal((2, 6, 8))
        assert fd_check(nnet.MultiHeadAttention(8, 2, 4, rng), x) < 1e-4

    def test_conv_identity_kernel(self):
        rng = rng_for(9)
        conv = nnet.Conv1D(1, 1, 3, rng)
        conv.W[...] = np.array([0.0, 1.0, 0.0]).reshape(3, 1, 1)
        conv.b[...] = 0.0
        x = np.random.default_rng(10).standard_normal((2, 9, 1))
        assert np.allclose(conv.forward(x), x)

    def test_dense_identity(self):
        rng = rng_for(11)
        lin = nnet.Dense(4, 4, rng)
        lin.W[...] = np.eye(4)
        lin.b[...] = 0.0
        x = np.random.default_rng(12).standard_normal((5, 4))
        assert np.array_equal(lin.forward(x), x)

    def test_scalar_dense_chain_rule(self):
        rng = rng_for(13)
        lin = nnet.Dense(1, 1, rng)
        x = np.array([[3.0]])
        lin.forward(x)
        lin.backward(np.array([[2.0]]))
        assert lin.gW[0, 0] == pytest.approx(6.0)  # input * grad_out


class TestActivationValues:
    def test_leaky_relu_definition(self):
        act = nnet.Activation("leaky_relu", 0.02)
        out = act.forward(np.array([-1.0, 3.0]))
        assert np.allclose(out, [-0.02, 3.0])

    def test_softmax_symmetry(self):
        out = nnet.softmax(np.zeros((1, 3)))
        assert np.allclose(out, 1 / 3)

    def test_softmax_rows_sum_to_one(self):
        x = np.random.default_rng(1).standard_normal((1000, 7)) * 20
        y = nnet.softmax(x)
        assert np.abs(y.sum(axis=1) - 1.0).max() < 1e-12
        assert y.min() > 0

    def test_soft_rect_tanh_frozen_values(self):
        f = nnet.soft_rect_tanh
        assert f(np.array([0.0]))[0] == pytest.approx(np.log(2) / 10, abs=1e-15)
        hi = np.log1p(np.exp(10.0)) / 10.0       # 1.0000045398899218
        lo = np.log1p(np.exp(-10.0)) / 10.0      # 4.5398899216870535e-06
        assert f(np.array([60.0]))[0] == pytest.approx(hi, abs=1e-12)
        assert f(np.array([-60.0]))[0] == pytest.approx(lo, abs=1e-12)

    def test_soft_rect_tanh_monotone_and_bounded(self):
        x = np.linspace(-30, 30, 5001)
        y = nnet.soft_rect_tanh(x)
        assert np.all(np.diff(y) >= 0)
        assert y.min() > 0
        assert y.max() < 1.00001


class TestDropout:
    def test_infer_mode_is_identity(self):
        drop = nnet.Dropout(0.5)
        x = np.random.default_rng(0).standard_normal((4, 6))
        assert drop.forward(x, train=False) is x
        g = np.ones_like(x)
        assert drop.backward(g) is g

    def test_train_mode_preserves_expectation(self):
        drop = nnet.Dropout(0.3)
        x = np.ones((200, 500))
        y = drop.forward(x, train=True, rng=rng_for(3))
        assert y.mean() == pytest.approx(1.0, abs=0.01)

    def test_masks_are_seeded(self):
        drop = nnet.Dropout(0.4)
        x = np.ones((10, 10))
        y1 = drop.forward(x, train=True, rng=rng_for(8))
        y2 = drop.forward(x, train=True, rng=rng_for(8))
        assert np.array_equal(y1, y2)

    def test_backward_applies_mask(self):
        drop = nnet.Dropout(0.4)
        x = np.ones((6, 6))
        drop.forward(x, train=True, rng=rng_for(9))
        g = np.random.default_rng(2).standard_normal((6, 6))
        assert np.array_equal(drop.backward(g), g * drop._mask)


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = np.ones(5) * 2.0
        opt = nnet.Adam([p], lr=1e-3)
        opt.step([np.zeros(5)])
        assert np.array_equal(p, np.ones(5) * 2.0)

    def test_first_step_magnitude_is_lr(self):
        # bias-corrected first step: lr * g / (|g| + eps) per element
        p = np.zeros(4)
        opt = nnet.Adam([p], lr=1e-3)
        g = np.array([2.0, -3.0, 0.5, 10.0])
        opt.step([g])
        assert np.allclose(np.abs(p), 1e-3, atol=1e-8)
        assert np.array_equal(np.sign(p), -np.sign(g))

    def test_second_identical_step_not_larger(self):
        p = np.zeros(3)
        opt = nnet.Adam([p], lr=1e-3)
        g = np.array([1.0, -2.0, 5.0])
        opt.step([g])
        first = np.abs(p).copy()
        before = p.copy()
        opt.step([g])
        second = np.abs(p - before)
        assert np.all(second <= first + 1e-12)

    def test_step_counter_and_validation(self):
        p = np.zeros(2)
        opt = nnet.Adam([p])
        opt.step([np.ones(2)])
        assert opt.t == 1
        with pytest.raises(ValueError, match="shape"):
            opt.step([np.ones(3)])
        with pytest.raises(ValueError):
            nnet.Adam([p], lr=0.0)


class TestClip:
    def test_clip_examples(self):
        assert np.array_equal(nnet.clip_nonnegative(np.array([-1.0, 0.0, 2.0])),
                              [0.0, 0.0, 2.0])
        pos = np.array([0.5, 1.0])
        assert np.array_equal(nnet.clip_nonnegative(pos), pos)

    def test_clip_idempotent(self):
        x = np.random.default_rng(0).standard_normal(100)
        once = nnet.clip_nonnegative(x)
        assert np.array_equal(nnet.clip_nonnegative(once), once)
