import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lal.network import NetworkConfig, build_unet_lal
from lal.phantom import PhantomConfig, generate_dataset
from lal.tensor import Graph, Tensor, backward
from lal.training import (
    LabelPair, OptimizerState, TrainConfig, TrainingDiverged, bce, lal_loss, optimizer_step, train,
)


def hand_bce(p, t):
    return -sum(ti * math.log(pi) + (1 - ti) * math.log(1 - pi) for pi, ti in zip(p, t)) / len(p)


def random_case(rng, shape=(1, 6, 6)):
    pred = rng.uniform(0.01, 0.99, shape)
    pixel = rng.random(shape) < 0.4
    skeleton = pixel & (rng.random(shape) < 0.5)
    return pred, LabelPair(pixel, skeleton)


class TestBce:
    @pytest.mark.parametrize("p,t,expected", [
        (0.5, 1, 0.6931471805599453),
        (0.8, 1, 0.2231435513142097),
        (0.2, 1, 1.6094379124341003),
        (0.2, 0, 0.2231435513142097),
    ])
    def test_single_pixel_values(self, p, t, expected):
        assert bce(np.array([[p]]), np.array([[t]])).item() == pytest.approx(expected, abs=1e-12)

    def test_mean_over_pixels(self):
        p, t = [0.1, 0.6, 0.9, 0.35], [0, 1, 1, 0]
        got = bce(np.array(p).reshape(2, 2), np.array(t).reshape(2, 2)).item()
        assert got == pytest.approx(hand_bce(p, t), abs=1e-14)

    def test_clamped_at_extremes(self):
        v = bce(np.array([[0.0, 1.0]]), np.array([[1.0, 0.0]])).item()
        assert math.isfinite(v) and v == pytest.approx(-math.log(1e-7), rel=1e-6)


class TestLalLoss:
    def setup_method(self):
        pixel = np.array([[1, 1], [1, 0]], bool)
        skeleton = np.array([[1, 0], [0, 0]], bool)
        self.labels = LabelPair(pixel, skeleton)
        self.pred = np.array([[0.8, 0.2], [0.6, 0.1]])

    def test_endpoints_are_bitwise_plain_bce(self):
        assert lal_loss(self.pred, self.labels, 0.0).item() == bce(self.pred, self.labels.skeleton).item()
        assert lal_loss(self.pred, self.labels, 1.0).item() == bce(self.pred, self.labels.pixel).item()

    def test_intermediate_by_hand(self):
        p = self.pred.ravel().tolist()
        sk = hand_bce(p, self.labels.skeleton.ravel().astype(int))
        px = hand_bce(p, self.labels.pixel.ravel().astype(int))
        got = lal_loss(self.pred, self.labels, 0.3).item()
        assert got == pytest.approx(0.7 * sk + 0.3 * px, abs=1e-14)

    @pytest.mark.parametrize("w", [-0.1, 1.2])
    def test_rejects_w_outside(self, w):
        with pytest.raises(ValueError):
            lal_loss(self.pred, self.labels, w)

    def test_gradient_is_affine_in_w(self):
        grads = {}
        for w in (0.0, 0.4, 1.0):
            x = Tensor(self.pred.copy(), requires_grad=True)
            g = Graph()
            backward(g, lal_loss(x, self.labels, w, graph=g), [x])
            grads[w] = x.grad
        np.testing.assert_allclose(grads[0.4], 0.6 * grads[0.0] + 0.4 * grads[1.0], atol=1e-14)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), w=st.floats(0.0, 1.0))
    def test_affine_between_endpoints(self, seed, w):
        pred, labels = random_case(np.random.default_rng(seed))
        a = lal_loss(pred, labels, 0.0).item()
        b = lal_loss(pred, labels, 1.0).item()
        assert abs(lal_loss(pred, labels, w).item() - ((1 - w) * a + w * b)) < 1e-12


class TestLabelPair:
    def test_skeleton_must_be_inside_pixel(self):
        with pytest.raises(ValueError, match="contained"):
            LabelPair(np.zeros((2, 2)), np.ones((2, 2)))

    def test_non_binary_rejected(self):
        with pytest.raises(ValueError):
            LabelPair(np.full((2, 2), 2), np.zeros((2, 2)))


class TestOptimizer:
    def make(self):
        p = build_unet_lal(NetworkConfig(depth=1, base_channels=2), 0)
        rng = np.random.default_rng(1)
        for t in p:
            t.grad = rng.normal(size=t.shape)
        return p

    def test_sgd_single_step(self):
        p = self.make()
        before = {k: t.data.copy() for k, t in p.tensors.items()}
        optimizer_step(p, OptimizerState(), TrainConfig(optimizer="sgd", learning_rate=0.1))
        for k, t in p.tensors.items():
            np.testing.assert_allclose(t.data, before[k] - 0.1 * t.grad, atol=1e-15)

    def test_adam_first_step_is_sign_times_lr(self):
        # bias correction makes the first update lr * g / (|g| + eps)
        p = self.make()
        before = {k: t.data.copy() for k, t in p.tensors.items()}
        optimizer_step(p, OptimizerState(), TrainConfig(learning_rate=0.01))
        for k, t in p.tensors.items():
            expected = before[k] - 0.01 * t.grad / (np.abs(t.grad) + 1e-8)
            np.testing.assert_allclose(t.data, expected, atol=1e-14)

    def test_zero_gradient_leaves_parameters(self):
        p = self.make()
        for t in p:
            t.grad = np.zeros_like(t.data)
        before = [t.data.copy() for t in p]
        state = OptimizerState()
        optimizer_step(p, state, TrainConfig())
        optimizer_step(p, state, TrainConfig())
        assert all(np.array_equal(a, t.data) for a, t in zip(before, p))
        assert state.step == 2


@pytest.fixture(scope="module")
def tiny_data():
    return generate_dataset(PhantomConfig(size=16), 6)


TINY = NetworkConfig(depth=2, base_channels=4)


class TestTrain:
    def test_zero_learning_rate_keeps_initial_weights(self, tiny_data):
        params, _ = train(tiny_data, TrainConfig(epochs=1, learning_rate=0.0), TINY)
        init = build_unet_lal(TINY, 0)
        assert all(np.array_equal(params[k].data, init[k].data) for k in init.tensors)

    def test_same_seed_is_bit_identical(self, tiny_data):
        cfg = TrainConfig(epochs=2, seed=3)
        a, ha = train(tiny_data, cfg, TINY)
        b, hb = train(tiny_data, cfg, TINY)
        assert ha == hb
        assert all(a[k].data.tobytes() == b[k].data.tobytes() for k in a.tensors)

    def test_history_has_one_entry_per_epoch(self, tiny_data):
        seen = []
        _, h = train(tiny_data, TrainConfig(epochs=3), TINY, on_epoch=lambda e, l: seen.append(e))
        assert len(h) == 3 and seen == [0, 1, 2]

    def test_size_must_match_depth(self):
        data = generate_dataset(PhantomConfig(size=8), 2)
        with pytest.raises(ValueError, match="divisible by 16"):
            train(data, TrainConfig(epochs=1), NetworkConfig(depth=4, base_channels=2))

    def test_divergence_is_reported(self, tiny_data):
        params = build_unet_lal(TINY, 0)
        params["head.bias"].data[:] = np.nan
        with pytest.raises(TrainingDiverged, match="learning rate"):
            train(tiny_data, TrainConfig(epochs=1), TINY, params=params)

    def test_loss_strictly_decreases_over_first_epochs(self):
        data = generate_dataset(PhantomConfig(), 50)
        _, h = train(data, TrainConfig(epochs=5), NetworkConfig())
        assert all(b < a for a, b in zip(h, h[1:])), h
