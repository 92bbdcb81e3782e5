# tests/test_mask_utils.py
import numpy as np
import pytest

from errors import AlignmentError, ContractError, UnknownGroupError
from mask_utils import (PruneMask, apply_mask, full_mask, masked_train_step, maskable_sparsity,
                        satisfies_mask, sparsity)
from network_core import Objective, OptimizerState, forward, init_network, loss_and_grads, sgd_step
from shapes_tasks import task_targets


def _random_mask(params, rng, keep=0.5):
    bits = {pid: (rng.random(t.shape) < keep) if pid in params.maskable_ids else np.ones(t.shape, dtype=bool)
            for pid, t in params.items()}
    return PruneMask(bits, params.maskable_ids)


class TestPruneMask:
    def test_non_maskable_must_be_ones(self):
        with pytest.raises(AlignmentError):
            PruneMask({"a/0/weight": [[True, False]], "a/0/bias": [False]}, ["a/0/weight"])

    def test_bits_are_read_only(self, tiny_spec):
        mask = full_mask(init_network(tiny_spec, 0))
        with pytest.raises(ValueError):
            mask["base/0/weight"][0, 0, 0, 0] = False

    def test_refines(self, tiny_spec):
        params = init_network(tiny_spec, 0)
        mask = _random_mask(params, np.random.default_rng(0))
        assert mask.refines(full_mask(params))
        assert not full_mask(params).refines(mask)


class TestFullMask:
    def test_zero_sparsity_and_identity(self, tiny_spec):
        params = init_network(tiny_spec, 1)
        mask = full_mask(params)
        assert sparsity(mask).network_sparsity == 0.0
        assert apply_mask(params, mask).equals(params)

    def test_maskable_ids_are_layer_weights(self, tiny_spec):
        params = init_network(tiny_spec, 1)
        assert full_mask(params).maskable_ids == tiny_spec.maskable_ids()


class TestApplyMask:
    def test_definition(self, make_params):
        params = make_params({"a/0/weight": [[1.5, -2.0, 0.3]], "a/0/bias": [0.0]})
        mask = PruneMask({"a/0/weight": [[True, False, True]], "a/0/bias": [True]}, params.maskable_ids)
        masked = apply_mask(params, mask)
        np.testing.assert_array_equal(masked["a/0/weight"], [[1.5, 0.0, 0.3]])
        assert not np.signbit(masked["a/0/weight"][0, 1])

    def test_negative_zero_becomes_positive(self, make_params):
        params = make_params({"a/0/weight": [[-3.0, 1.0]], "a/0/bias": [0.0]})
        mask = PruneMask({"a/0/weight": [[False, True]], "a/0/bias": [True]}, params.maskable_ids)
        assert not np.signbit(apply_mask(params, mask)["a/0/weight"][0, 0])

    def test_idempotent(self, tiny_spec):
        params = init_network(tiny_spec, 2)
        mask = _random_mask(params, np.random.default_rng(1))
        once = apply_mask(params, mask)
        assert apply_mask(once, mask).equals(once)

    def test_misaligned(self, tiny_spec, mlp_spec):
        with pytest.raises(AlignmentError):
            apply_mask(init_network(tiny_spec, 0), full_mask(init_network(mlp_spec, 0)))

    def test_all_zeros_gives_bias_only_output(self, mlp_spec):
        params = init_network(mlp_spec, 0)
        params = params.replace({pid: np.full_like(t, 0.25) for pid, t in params.items() if pid.endswith("/bias")})
        mask = full_mask(params).with_bits({pid: np.zeros(params[pid].shape, dtype=bool)
                                            for pid in params.maskable_ids})
        batch = np.random.default_rng(0).standard_normal((4, 6)).astype(np.float32)
        outputs, _ = forward(apply_mask(params, mask), mlp_spec, batch, "out")
        # só o viés da camada neck chega à cabeça
        neck = np.maximum(params["neck/0/bias"], 0)
        expected = neck @ params["out_head/0/weight"].T + params["out_head/0/bias"]
        np.testing.assert_allclose(outputs, np.broadcast_to(expected, outputs.shape), rtol=1e-6)


class TestMaskedTrainStep:
    def _setup(self, spec, seed=0):
        params = init_network(spec, seed)
        mask = _random_mask(params, np.random.default_rng(seed), keep=0.3)
        return apply_mask(params, mask), mask

    def test_pruned_positions_stay_zero(self, tiny_spec, classify_task):
        params, mask = self._setup(tiny_spec)
        state = OptimizerState.zeros_like(params)
        objective = Objective(tiny_spec, "classify", "cross_entropy")
        batch = (classify_task.inputs("train")[:16], classify_task.targets("train")[:16])
        for _ in range(5):
            params = masked_train_step(params, mask, batch, state, 0.05, objective)
            assert satisfies_mask(params, mask)
            for pid in mask.maskable_ids:
                assert not np.any(state.buffers[pid][~mask[pid]])
        pruned = {pid: int(np.count_nonzero(~mask[pid])) for pid in mask.maskable_ids}
        assert all(np.count_nonzero(params[pid] == 0) >= pruned[pid] for pid in mask.maskable_ids)

    def test_full_mask_matches_sgd_step(self, tiny_spec, classify_task):
        params = init_network(tiny_spec, 5)
        objective = Objective(tiny_spec, "classify", "cross_entropy")
        inputs, targets = classify_task.inputs("train")[:8], classify_task.targets("train")[:8]
        state_a = OptimizerState.zeros_like(params)
        state_b = OptimizerState.zeros_like(params)
        stepped = masked_train_step(params, full_mask(params), (inputs, targets), state_a, 0.05, objective)
        _, grads = loss_and_grads(params, objective, inputs, targets)
        plain = sgd_step(params, grads, state_b, 0.05)
        assert stepped.equals(plain)
        assert state_a.equals(state_b)

    def test_precondition(self, tiny_spec, classify_task):
        params = init_network(tiny_spec, 0)
        mask = _random_mask(params, np.random.default_rng(0))
        batch = (classify_task.inputs("train")[:4], task_targets(classify_task.spec, classify_task.dataset.train)[:4])
        with pytest.raises(ContractError):
            masked_train_step(params, mask, batch, OptimizerState.zeros_like(params), 0.1,
                              Objective(tiny_spec, "classify", "cross_entropy"))


class TestSparsity:
    def test_half_of_single_tensor(self, make_params):
        params = make_params({"a/0/weight": np.ones((2, 5))})
        bits = np.array([[True] * 5, [False] * 5])
        assert sparsity(PruneMask({"a/0/weight": bits}, params.maskable_ids)).network_sparsity == 0.5

    def test_group_projection_example(self, make_params):
        # 35120 de 100000 elementos no grupo podado, 90% dele zerado
        params = make_params({"base/0/weight": np.ones((35120, 1)), "head/0/weight": np.ones((64880, 1))})
        bits = np.ones((35120, 1), dtype=bool)
        bits[:31608] = False
        mask = PruneMask({"base/0/weight": bits, "head/0/weight": np.ones((64880, 1), dtype=bool)},
                         params.maskable_ids)
        assert sparsity(mask).network_sparsity == pytest.approx(0.3161, abs=1e-4)
        assert maskable_sparsity(mask, ["base"]) == pytest.approx(0.9, abs=1e-4)

    def test_empty_filter(self, tiny_spec):
        with pytest.raises(ContractError):
            sparsity(full_mask(init_network(tiny_spec, 0)), [])

    def test_unknown_group(self, tiny_spec):
        with pytest.raises(UnknownGroupError):
            sparsity(full_mask(init_network(tiny_spec, 0)), ["missing"])

    def test_additivity(self, tiny_spec):
        params = init_network(tiny_spec, 0)
        report = sparsity(_random_mask(params, np.random.default_rng(3)))
        weighted = sum(report.group_sparsity(g) * report.group_total[g] for g in report.group_total) / report.total
        assert weighted == pytest.approx(report.network_sparsity, abs=1e-12)
        assert report.pruned == sum(layer.pruned for layer in report.layers)

    def test_refinement_is_monotone(self, tiny_spec):
        params = init_network(tiny_spec, 0)
        rng = np.random.default_rng(4)
        coarse = _random_mask(params, rng, keep=0.7)
        fine = coarse.with_bits({pid: coarse[pid] & (rng.random(coarse[pid].shape) < 0.5)
                                 for pid in coarse.maskable_ids})
        assert fine.refines(coarse)
        assert sparsity(fine).network_sparsity >= sparsity(coarse).network_sparsity
