# tests/test_transfer_utils.py
import numpy as np
import pytest

from errors import ConfigError, MappingError
from mask_utils import PruneMask, full_mask, maskable_sparsity, satisfies_mask, sparsity
from network_core import OptimizerState, ParameterSet, group_of, init_network
from pruning_utils import PruneConfig, Ticket, imp
from shapes_tasks import build_network, make_task
from transfer_utils import (GroupMapping, TransferSpec, cross_task_transfer, mask_transfer, param_shapes,
                            run_transfer, ticket_transfer)

BACKBONE = ("base", "top")


@pytest.fixture
def keypoint_spec():
    return build_network("small", ("keypoint",), image_size=8)


@pytest.fixture
def source_ticket(tiny_spec, classify_task, short_train):
    config = PruneConfig(0.7, 1, "global", BACKBONE, 0, short_train.total_iters)
    return imp(tiny_spec, classify_task, config, 3, short_train)


class TestGroupMapping:
    def test_for_groups_identity(self, tiny_spec, keypoint_spec):
        mapping = GroupMapping.for_groups(BACKBONE, tiny_spec, keypoint_spec)
        assert all(source == target for source, target in mapping.pairs)
        assert {group_of(pid) for pid in mapping.targets} == set(BACKBONE)
        assert len(mapping.pairs) == 8

    def test_shape_mismatch(self, tiny_spec):
        wide = build_network("large", ("classify",), image_size=8)
        with pytest.raises(MappingError):
            GroupMapping.for_groups(("base",), tiny_spec, wide)

    def test_unknown_group(self, tiny_spec, keypoint_spec):
        with pytest.raises(MappingError):
            GroupMapping.for_groups(("missing",), tiny_spec, keypoint_spec)

    def test_not_injective(self):
        with pytest.raises(MappingError):
            GroupMapping((("a/0/weight", "b/0/weight"), ("c/0/weight", "b/0/weight")))

    def test_json_round_trip(self, tiny_spec, keypoint_spec, tmp_path):
        mapping = GroupMapping.for_groups(("base",), tiny_spec, keypoint_spec)
        path = str(tmp_path / "mapping.json")
        mapping.save(path)
        assert GroupMapping.load(path) == mapping

    @pytest.mark.parametrize("text", ['{"pairs": ["a/0/weight"]}', '{"pairs": ["->b"]}', "{", '{"other": []}'])
    def test_malformed_json(self, text):
        with pytest.raises(MappingError):
            GroupMapping.from_json(text)


class TestTicketTransfer:
    def test_mapped_weights_and_fresh_head(self, source_ticket, tiny_spec, keypoint_spec):
        mapping = GroupMapping.for_groups(BACKBONE, tiny_spec, keypoint_spec)
        params, mask = ticket_transfer(source_ticket, keypoint_spec, mapping, seed=8)
        fresh = init_network(keypoint_spec, 8)
        for pid in mapping.targets:
            np.testing.assert_array_equal(params[pid], source_ticket.rewind_weights[pid])
            np.testing.assert_array_equal(mask[pid], source_ticket.mask[pid])
        for pid in mapping.fresh_ids(params):
            assert mask[pid].all()
            np.testing.assert_array_equal(params[pid], fresh[pid])
        assert satisfies_mask(params, mask)

    def test_sparsity_bookkeeping(self, source_ticket, tiny_spec, keypoint_spec):
        mapping = GroupMapping.for_groups(BACKBONE, tiny_spec, keypoint_spec)
        _, mask = ticket_transfer(source_ticket, keypoint_spec, mapping)
        assert maskable_sparsity(mask, BACKBONE) == pytest.approx(maskable_sparsity(source_ticket.mask, BACKBONE))
        report = sparsity(mask)
        assert report.pruned == sparsity(source_ticket.mask).pruned
        assert report.network_sparsity < sparsity(source_ticket.mask, BACKBONE).network_sparsity


class TestMaskTransfer:
    def test_keeps_largest_per_tensor(self, make_params):
        pretrained = make_params({"a/0/weight": [[0.3, -0.9, 0.05, 0.4]]})
        target = make_params({"a/0/weight": [[1.0, 1.0, 1.0, 1.0]]})
        mapping = GroupMapping((("a/0/weight", "a/0/weight"),))
        params, mask = mask_transfer(pretrained, 0.5, mapping, target, conv_only=False)
        np.testing.assert_array_equal(mask["a/0/weight"], [[False, True, False, True]])
        np.testing.assert_array_equal(params["a/0/weight"], np.array([[0.0, -0.9, 0.0, 0.4]], dtype=np.float32))

    def test_zero_fraction_is_plain_copy(self, tiny_spec, keypoint_spec):
        pretrained = init_network(tiny_spec, 1)
        mapping = GroupMapping.for_groups(BACKBONE, tiny_spec, keypoint_spec)
        params, mask = mask_transfer(pretrained, 0.0, mapping, keypoint_spec, seed=2)
        assert mask.equals(full_mask(params))
        for pid in mapping.targets:
            np.testing.assert_array_equal(params[pid], pretrained[pid])

    def test_conv_only_leaves_dense_tensors(self, tiny_spec, keypoint_spec):
        pretrained = init_network(tiny_spec, 1)
        mapping = GroupMapping.for_groups(("top", "neck"), tiny_spec, keypoint_spec)
        _, mask = mask_transfer(pretrained, 0.6, mapping, keypoint_spec, conv_only=True)
        assert maskable_sparsity(mask, ["neck"]) == 0.0
        assert maskable_sparsity(mask, ["top"]) == pytest.approx(0.6, abs=0.01)

    def test_fraction_range(self, make_params):
        params = make_params({"a/0/weight": [[1.0]]})
        with pytest.raises(MappingError):
            mask_transfer(params, 1.0, GroupMapping((("a/0/weight", "a/0/weight"),)), params)


class TestCrossTaskTransfer:
    def test_target_sparsity(self, source_ticket, tiny_spec, keypoint_spec):
        mapping = GroupMapping.for_groups(BACKBONE, tiny_spec, keypoint_spec)
        outcome = cross_task_transfer(source_ticket, keypoint_spec, mapping, BACKBONE)
        assert outcome.network_sparsity == pytest.approx(sparsity(outcome.mask).network_sparsity)
        assert 0.0 < outcome.network_sparsity < 0.7

    def test_incomplete_mapping(self, source_ticket, tiny_spec, keypoint_spec):
        mapping = GroupMapping.for_groups(("base",), tiny_spec, keypoint_spec)
        with pytest.raises(MappingError):
            cross_task_transfer(source_ticket, keypoint_spec, mapping, BACKBONE)

    def test_mapping_outside_shared_groups(self, source_ticket, tiny_spec, keypoint_spec):
        mapping = GroupMapping.for_groups(("base", "top", "neck"), tiny_spec, keypoint_spec)
        with pytest.raises(MappingError):
            cross_task_transfer(source_ticket, keypoint_spec, mapping, BACKBONE)

    def test_zeros_into_unmaskable_tensor(self, make_params):
        weights = make_params({"a/0/weight": [[0.0, 1.0]]})
        ticket = Ticket(PruneMask({"a/0/weight": [[False, True]]}, weights.maskable_ids), weights,
                        OptimizerState.zeros_like(weights), 0)
        target = ParameterSet({"a/0/weight": np.ones((1, 2), dtype=np.float32)}, maskable=[])
        with pytest.raises(MappingError):
            ticket_transfer(ticket, target, GroupMapping((("a/0/weight", "a/0/weight"),)))


class TestTransferSpec:
    def test_mode_checks(self, source_ticket, tiny_spec, keypoint_spec):
        mapping = GroupMapping.for_groups(BACKBONE, tiny_spec, keypoint_spec)
        with pytest.raises(ConfigError):
            TransferSpec("unknown", source_ticket, mapping)
        with pytest.raises(ConfigError):
            TransferSpec("mask_transfer", source_ticket, mapping)
        with pytest.raises(ConfigError):
            TransferSpec("cross_task", source_ticket, mapping)

    def test_run_transfer_keeps_mask(self, source_ticket, tiny_spec, keypoint_spec, tiny_dataset, short_train):
        mapping = GroupMapping.for_groups(BACKBONE, tiny_spec, keypoint_spec)
        transfer = TransferSpec("ticket_transfer", source_ticket, mapping)
        result, mask = run_transfer(transfer, make_task("keypoint", tiny_dataset), keypoint_spec, short_train, 0)
        assert satisfies_mask(result.params, mask)
        assert result.final_iteration == short_train.total_iters


def test_param_shapes_follow_init(tiny_spec):
    params = init_network(tiny_spec, 0)
    assert param_shapes(tiny_spec) == {pid: t.shape for pid, t in params.items()}
