# tests/test_network_core.py
import math

import numpy as np
import pytest

from errors import ConfigError, RangeError, ShapeError, SpecError, UsageError
from network_core import (LOSSES, GroupSpec, LayerSpec, LrSchedule, NetworkSpec, Objective, OptimizerState,
                          ParameterSet, backward, conv2d_forward, forward, grad_check, init_network,
                          loss_and_grads, lr_at, maxpool_forward, predict, sgd_step, split_param_id)


class TestNetworkSpec:
    def test_even_kernel_rejected(self):
        with pytest.raises(SpecError):
            LayerSpec.conv2d(1, 2, kernel=2)

    def test_chain_mismatch_rejected(self):
        with pytest.raises(SpecError):
            NetworkSpec((6,), (GroupSpec("base", (LayerSpec.dense(5, 4),)),), backbone="base",
                        heads=(("out", (GroupSpec("out_head", (LayerSpec.dense(4, 2),)),)),))

    def test_duplicate_group_names_rejected(self):
        with pytest.raises(SpecError):
            NetworkSpec((4,), (GroupSpec("base", (LayerSpec.dense(4, 4),)),), backbone="base",
                        heads=(("out", (GroupSpec("base", (LayerSpec.dense(4, 2),)),)),))

    def test_maskable_ids_exclude_biases_and_head_outputs(self, tiny_spec):
        maskable = tiny_spec.maskable_ids()
        assert "classify_head/2/weight" not in maskable
        assert "classify_head/0/weight" in maskable
        assert all(pid.endswith("/weight") for pid in maskable)
        assert {"base/0/weight", "base/2/weight", "top/0/weight", "top/2/weight", "neck/0/weight"} <= maskable

    def test_backbone_groups(self, tiny_spec):
        assert tiny_spec.backbone_groups() == ["base", "top"]
        assert tiny_spec.output_shape("classify") == (4,)

    def test_split_param_id(self):
        assert split_param_id("neck/0/weight") == ("neck", 0, "weight")
        with pytest.raises(SpecError):
            split_param_id("neck/0")


class TestInitNetwork:
    def test_same_seed_is_bit_identical(self, tiny_spec):
        assert init_network(tiny_spec, 7).equals(init_network(tiny_spec, 7))

    def test_different_seed_differs(self, tiny_spec):
        assert not init_network(tiny_spec, 7).equals(init_network(tiny_spec, 8))

    def test_dense_bound(self):
        spec = NetworkSpec((4,), (GroupSpec("base", (LayerSpec.dense(4, 4), LayerSpec.relu())),),
                           backbone="base", heads=(("out", (GroupSpec("out_head", (LayerSpec.dense(4, 2),)),)),))
        for seed in range(20):
            weight = init_network(spec, seed)["base/0/weight"]
            assert np.all(np.abs(weight) <= np.float32(math.sqrt(6 / 8)))

    def test_biases_zero_and_float32(self, tiny_spec):
        params = init_network(tiny_spec, 0)
        for pid, tensor in params.items():
            assert tensor.dtype == np.float32
            if pid.endswith("/bias"):
                assert not np.any(tensor)


class TestForward:
    def test_relu_then_identity(self, relu_dense_spec, make_params):
        params = make_params({"out_head/0/weight": np.eye(3), "out_head/0/bias": np.zeros(3)}, [])
        outputs, _ = forward(params, relu_dense_spec, np.array([[-1.0, 0.0, 2.0]], dtype=np.float32), "out")
        np.testing.assert_array_equal(outputs, [[0.0, 0.0, 2.0]])

    def test_conv_same_padding_counts(self):
        x = np.ones((1, 1, 4, 4), dtype=np.float32)
        y, _ = conv2d_forward(x, np.ones((1, 1, 3, 3), dtype=np.float32), np.zeros(1, dtype=np.float32))
        assert y.shape == (1, 1, 4, 4)
        assert y[0, 0, 0, 0] == 4 and y[0, 0, 3, 3] == 4
        assert y[0, 0, 1, 1] == 9 and y[0, 0, 2, 2] == 9
        assert y[0, 0, 0, 1] == 6

    def test_maxpool(self):
        x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
        y, _ = maxpool_forward(x)
        np.testing.assert_array_equal(y[0, 0], [[5, 7], [13, 15]])

    def test_shape_mismatch(self, tiny_spec):
        params = init_network(tiny_spec, 0)
        with pytest.raises(ShapeError):
            forward(params, tiny_spec, np.zeros((2, 3, 16, 16), dtype=np.float32), "classify")

    def test_unknown_head(self, tiny_spec):
        params = init_network(tiny_spec, 0)
        with pytest.raises(SpecError):
            forward(params, tiny_spec, np.zeros((2, 3, 8, 8), dtype=np.float32), "keypoint")

    def test_predict_matches_forward(self, tiny_spec, tiny_dataset):
        params = init_network(tiny_spec, 0)
        images = tiny_dataset.val.images
        full, _ = forward(params, tiny_spec, images, "classify")
        chunked = predict(params, tiny_spec, images, "classify", chunk=5)
        np.testing.assert_allclose(chunked, full, rtol=1e-5, atol=1e-6)


class TestBackward:
    def test_zero_loss_grad_gives_zero_grads(self, tiny_spec, tiny_dataset):
        params = init_network(tiny_spec, 0)
        outputs, cache = forward(params, tiny_spec, tiny_dataset.train.images[:4], "classify")
        grads = backward(cache, np.zeros_like(outputs))
        for pid, grad in grads.items():
            assert grad.shape == params[pid].shape
            assert not np.any(grad)

    def test_stale_cache(self, tiny_spec, tiny_dataset):
        params = init_network(tiny_spec, 0)
        outputs, cache = forward(params, tiny_spec, tiny_dataset.train.images[:2], "classify")
        backward(cache, np.ones_like(outputs))
        with pytest.raises(UsageError):
            backward(cache, np.ones_like(outputs))

    def test_dense_closed_form(self, relu_dense_spec, make_params):
        rng = np.random.default_rng(3)
        params = make_params({"out_head/0/weight": rng.standard_normal((3, 3)),
                              "out_head/0/bias": np.zeros(3)}, [])
        x = np.array([[0.5, 1.5, 2.0]], dtype=np.float32)
        t = np.array([[1.0, -1.0, 0.0]], dtype=np.float32)
        _, grads = loss_and_grads(params, Objective(relu_dense_spec, "out"), x, t)
        y = x @ params["out_head/0/weight"].T
        np.testing.assert_allclose(grads["out_head/0/weight"], 2 * (y - t).T @ x, rtol=1e-5)

    def test_shapes_conserved_for_every_head(self, multi_spec, tiny_dataset):
        params = init_network(multi_spec, 1)
        for head in multi_spec.head_names:
            outputs, cache = forward(params, multi_spec, tiny_dataset.train.images[:3], head)
            grads = backward(cache, np.ones_like(outputs))
            assert list(grads) == list(params)
            assert all(grads[pid].shape == params[pid].shape for pid in params)


class TestGradCheck:
    def test_linear_model_is_exact(self, relu_dense_spec, make_params):
        rng = np.random.default_rng(0)
        params = make_params({"out_head/0/weight": rng.standard_normal((3, 3)),
                              "out_head/0/bias": rng.standard_normal(3)}, [])
        batch = rng.uniform(0.5, 1.5, size=(4, 3)).astype(np.float32)
        assert grad_check(relu_dense_spec, params, batch, 1e-3) <= 1e-6

    def test_mlp(self, mlp_spec):
        params = init_network(mlp_spec, 2)
        batch = np.random.default_rng(1).standard_normal((8, 6)).astype(np.float32)
        assert grad_check(mlp_spec, params, batch, 1e-3) <= 1e-3

    def test_conv_network(self, tiny_spec, tiny_dataset):
        params = init_network(tiny_spec, 3)
        assert grad_check(tiny_spec, params, tiny_dataset.train.images[:4], 1e-3, head="classify") <= 1e-3

    def test_every_head(self, multi_spec, tiny_dataset):
        params = init_network(multi_spec, 4)
        for head in multi_spec.head_names:
            error = grad_check(multi_spec, params, tiny_dataset.train.images[:3], 1e-3, head=head, samples=60)
            assert error <= 1e-3

    @pytest.mark.parametrize("loss", ["cross_entropy", "bce", "squared_error"])
    def test_loss_gradients(self, loss):
        rng = np.random.default_rng(5)
        logits = rng.standard_normal((5, 4))
        targets = {"cross_entropy": rng.integers(0, 4, size=5),
                   "bce": rng.integers(0, 2, size=(5, 4)).astype(np.float64),
                   "squared_error": rng.standard_normal((5, 4))}[loss]
        _, analytic = LOSSES[loss](logits, targets)
        numeric = np.zeros_like(logits)
        eps = 1e-6
        for index in np.ndindex(logits.shape):
            plus, minus = logits.copy(), logits.copy()
            plus[index] += eps
            minus[index] -= eps
            numeric[index] = (LOSSES[loss](plus, targets)[0] - LOSSES[loss](minus, targets)[0]) / (2 * eps)
        np.testing.assert_allclose(analytic, numeric, atol=1e-7)

    def test_eps_must_be_positive(self, mlp_spec):
        params = init_network(mlp_spec, 0)
        with pytest.raises(RangeError):
            grad_check(mlp_spec, params, np.zeros((2, 6), dtype=np.float32), 0.0)


class TestSgdStep:
    @staticmethod
    def _single(value: float) -> ParameterSet:
        return ParameterSet({"base/0/weight": np.full((1, 1), value, dtype=np.float32)})

    def test_lr_zero_keeps_params(self, tiny_spec):
        params = init_network(tiny_spec, 0)
        grads = {pid: np.ones_like(t) for pid, t in params.items()}
        updated = sgd_step(params, grads, OptimizerState.zeros_like(params), 0.0)
        assert updated.equals(params)

    def test_plain_step(self):
        params = self._single(1.0)
        state = OptimizerState.zeros_like(params, momentum=0.0, weight_decay=0.0)
        updated = sgd_step(params, {"base/0/weight": np.full((1, 1), 0.5, dtype=np.float32)}, state, 0.1)
        assert updated["base/0/weight"][0, 0] == pytest.approx(0.95, abs=1e-7)

    def test_momentum_two_steps(self):
        params = self._single(0.0)
        state = OptimizerState.zeros_like(params, momentum=0.9, weight_decay=0.0)
        grad = {"base/0/weight": np.ones((1, 1), dtype=np.float32)}
        params = sgd_step(params, grad, state, 1.0)
        assert params["base/0/weight"][0, 0] == pytest.approx(-1.0)
        params = sgd_step(params, grad, state, 1.0)
        assert params["base/0/weight"][0, 0] == pytest.approx(-2.9, abs=1e-6)

    def test_shape_mismatch(self):
        params = self._single(0.0)
        with pytest.raises(ShapeError):
            sgd_step(params, {"base/0/weight": np.ones(2, dtype=np.float32)},
                     OptimizerState.zeros_like(params), 0.1)


class TestLrSchedule:
    def test_warmup_ramp(self):
        assert lr_at(LrSchedule(0.1, warmup_iters=100), 49) == pytest.approx(0.05)

    def test_decay_milestone(self):
        assert lr_at(LrSchedule(0.1, decay_milestones=(8000,), decay_factor=0.1), 8001) == pytest.approx(0.01)

    def test_factor_one_is_constant(self):
        assert lr_at(LrSchedule(0.1, decay_milestones=(5, 10), decay_factor=1.0), 50) == 0.1

    def test_non_increasing_after_warmup(self):
        schedule = LrSchedule(0.2, warmup_iters=3, decay_milestones=(10, 20), decay_factor=0.5)
        values = [lr_at(schedule, i) for i in range(3, 40)]
        assert all(b <= a for a, b in zip(values, values[1:]))

    @pytest.mark.parametrize("kwargs", [dict(base_lr=0.0), dict(base_lr=0.1, decay_factor=0.0),
                                        dict(base_lr=0.1, decay_milestones=(5, 5))])
    def test_invalid_schedule(self, kwargs):
        with pytest.raises(ConfigError):
            LrSchedule(**kwargs)

    def test_negative_iteration(self):
        with pytest.raises(RangeError):
            lr_at(LrSchedule(0.1), -1)
