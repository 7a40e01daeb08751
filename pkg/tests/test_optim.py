"""Tests for SGD with momentum, coupled weight decay, and the LR schedule."""

from types import SimpleNamespace

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from uenl.config import BackboneSpec, ExperimentConfig
from uenl.optim import OptState, lr_at_epoch, sgd_step
from uenl.tensor import Tensor


def one_param(theta):
    weights = {"w": Tensor(np.asarray(theta, dtype=np.float64))}
    return weights, OptState.zeros_like(weights)


class TestFrozenSteps:
    def test_vanilla_step(self):
        # m=0, wd=0, theta=1, g=0.5, lr=0.1  ->  theta'=0.95
        weights, state = one_param(1.0)
        new_w, _ = sgd_step(weights, {"w": np.asarray(0.5)}, state, lr=0.1, momentum=0.0, weight_decay=0.0)
        assert new_w["w"].item() == 0.95

    def test_momentum_recurrence_two_steps(self):
        # m=0.9, wd=0, g=1 each step, lr=0.1, from v=0: v1=-0.1, v2=-0.19
        weights, state = one_param(1.0)
        g = {"w": np.asarray(1.0)}
        w1, s1 = sgd_step(weights, g, state, lr=0.1, momentum=0.9, weight_decay=0.0)
        assert s1.velocity["w"].item() == -0.1
        assert w1["w"].item() == 0.9
        w2, s2 = sgd_step(w1, g, s1, lr=0.1, momentum=0.9, weight_decay=0.0)
        assert s2.velocity["w"].item() == pytest.approx(-0.19, abs=1e-15)
        assert w2["w"].item() == pytest.approx(0.71, abs=1e-15)

    def test_pure_decay_step(self):
        # wd=0.0005, g=0, theta=1, lr=0.1, m=0  ->  theta'=0.99995
        weights, state = one_param(1.0)
        new_w, _ = sgd_step(weights, {"w": np.asarray(0.0)}, state, lr=0.1, momentum=0.0, weight_decay=0.0005)
        assert new_w["w"].item() == 0.99995


class TestUpdateRule:
    def test_matches_manual_recurrence_with_momentum_and_decay(self):
        """Several steps of the coupled-decay recurrence, bit-exact vs. a
        hand-rolled numpy loop using the same v <- m*v - lr*(g + wd*w) rule."""
        rng = np.random.default_rng(7)
        theta = rng.standard_normal((4, 3))
        weights = {"w": Tensor(theta)}
        state = OptState.zeros_like(weights)
        v_ref = np.zeros_like(theta)
        w_ref = theta.copy()
        lr, m, wd = 0.05, 0.9, 0.01
        for _ in range(6):
            g = rng.standard_normal((4, 3))
            weights, state = sgd_step(weights, {"w": g}, state, lr=lr, momentum=m, weight_decay=wd)
            v_ref = m * v_ref - lr * (g + wd * w_ref)
            w_ref = w_ref + v_ref
            assert_array_equal(state.velocity["w"].array, v_ref)
            assert_array_equal(weights["w"].array, w_ref)

    def test_multiple_parameters_updated_independently(self):
        weights = {
            "a": Tensor(np.array([1.0, 2.0])),
            "b": Tensor(np.array([[3.0]])),
        }
        grads = {"a": np.array([0.5, 0.5]), "b": np.array([[1.0]])}
        new_w, new_s = sgd_step(weights, grads, OptState.zeros_like(weights), lr=0.1, momentum=0.0, weight_decay=0.0)
        assert_array_equal(new_w["a"].array, [0.95, 1.95])
        assert_array_equal(new_w["b"].array, [[2.9]])
        assert set(new_s.velocity) == {"a", "b"}

    def test_accepts_tensor_gradients(self):
        weights, state = one_param(1.0)
        new_w, _ = sgd_step(weights, {"w": Tensor(0.5)}, state, lr=0.1, momentum=0.0, weight_decay=0.0)
        assert new_w["w"].item() == 0.95

    def test_inputs_not_mutated(self):
        weights, state = one_param(2.0)
        before_w = weights["w"].array.copy()
        before_v = state.velocity["w"].array.copy()
        new_w, new_s = sgd_step(weights, {"w": np.asarray(1.0)}, state, lr=0.1)
        assert new_w is not weights and new_s is not state
        assert_array_equal(weights["w"].array, before_w)
        assert_array_equal(state.velocity["w"].array, before_v)

    def test_momentum_coasts_with_zero_gradient(self):
        """Momentum alone (zero gradient, zero decay) keeps coasting."""
        weights, state = one_param(0.0)
        g1 = {"w": np.asarray(1.0)}
        weights, state = sgd_step(weights, g1, state, lr=0.1, momentum=0.5, weight_decay=0.0)
        weights, state = sgd_step(weights, {"w": np.asarray(0.0)}, state, lr=0.1, momentum=0.5, weight_decay=0.0)
        assert state.velocity["w"].item() == -0.05
        assert weights["w"].item() == -0.1 + -0.05


class TestOptState:
    def test_zeros_like_mirrors_shapes(self):
        weights = {
            "w1": Tensor(np.ones((3, 2))),
            "w2": Tensor(np.ones(5)),
            "w3": Tensor(1.0),
        }
        state = OptState.zeros_like(weights)
        assert set(state.velocity) == set(weights)
        for name, w in weights.items():
            v = state.velocity[name]
            assert v.shape == w.shape
            assert_array_equal(v.array, np.zeros(w.shape))


class TestErrors:
    def test_lr_must_be_positive(self):
        weights, state = one_param(1.0)
        with pytest.raises(ValueError, match="lr"):
            sgd_step(weights, {"w": np.asarray(0.0)}, state, lr=0.0)
        with pytest.raises(ValueError, match="lr"):
            sgd_step(weights, {"w": np.asarray(0.0)}, state, lr=-0.1)

    def test_momentum_range(self):
        weights, state = one_param(1.0)
        for bad in (-0.1, 1.0, 1.5):
            with pytest.raises(ValueError, match="momentum"):
                sgd_step(weights, {"w": np.asarray(0.0)}, state, lr=0.1, momentum=bad)

    def test_negative_weight_decay_rejected(self):
        weights, state = one_param(1.0)
        with pytest.raises(ValueError, match="weight_decay"):
            sgd_step(weights, {"w": np.asarray(0.0)}, state, lr=0.1, weight_decay=-1e-4)

    def test_missing_gradient_names_parameter(self):
        weights = {"w": Tensor(1.0), "head.b": Tensor(2.0)}
        state = OptState.zeros_like(weights)
        with pytest.raises(ValueError, match="head.b"):
            sgd_step(weights, {"w": np.asarray(0.0)}, state, lr=0.1)

    def test_shape_mismatch_names_parameter(self):
        weights = {"w": Tensor(np.ones((2, 3)))}
        state = OptState.zeros_like(weights)
        with pytest.raises(ValueError, match="w"):
            sgd_step(weights, {"w": np.ones((3, 2))}, state, lr=0.1)

    def test_non_finite_gradient_names_parameter(self):
        weights = {"w": Tensor(np.ones(3)), "other": Tensor(1.0)}
        state = OptState.zeros_like(weights)
        grads = {"w": np.array([0.0, np.nan, 0.0]), "other": np.asarray(0.0)}
        with pytest.raises(FloatingPointError, match="w"):
            sgd_step(weights, grads, state, lr=0.1)
        grads["w"] = np.array([np.inf, 0.0, 0.0])
        with pytest.raises(FloatingPointError, match="w"):
            sgd_step(weights, grads, state, lr=0.1)


class TestLrSchedule:
    def test_paper_schedule(self):
        # Base 0.1 with drops at 80 and 140: epoch 79 -> 0.1, 80 -> 0.01, 140 -> 0.001.
        config = ExperimentConfig(backbone=BackboneSpec(4, (8,), 2))
        assert config.lr == 0.1 and config.lr_drop_epochs == (80, 140)
        assert lr_at_epoch(0, config) == 0.1
        assert lr_at_epoch(79, config) == 0.1
        assert lr_at_epoch(80, config) == pytest.approx(0.01, rel=1e-12)
        assert lr_at_epoch(139, config) == pytest.approx(0.01, rel=1e-12)
        assert lr_at_epoch(140, config) == pytest.approx(0.001, rel=1e-12)
        assert lr_at_epoch(10_000, config) == pytest.approx(0.001, rel=1e-12)

    def test_no_drops_constant(self):
        config = SimpleNamespace(lr=0.05, lr_drop_epochs=())
        assert all(lr_at_epoch(e, config) == 0.05 for e in range(200))

    def test_custom_desk_scale_drops(self):
        # Drops at [2]: 0.1 for epochs 0-1, then 0.01 from epoch 2 on.
        config = SimpleNamespace(lr=0.1, lr_drop_epochs=(2,))
        assert lr_at_epoch(0, config) == 0.1
        assert lr_at_epoch(1, config) == 0.1
        assert lr_at_epoch(2, config) == pytest.approx(0.01, rel=1e-12)
        assert lr_at_epoch(3, config) == pytest.approx(0.01, rel=1e-12)

    def test_negative_epoch_rejected(self):
        config = SimpleNamespace(lr=0.1, lr_drop_epochs=(80, 140))
        with pytest.raises(ValueError, match="epoch"):
            lr_at_epoch(-1, config)
