"""Backbone construction, partitioning, aux heads, and gradient isolation."""

import numpy as np
import pytest

import pgl.tensor as T
from pgl.errors import ConfigError
from pgl.layers import softmax_cross_entropy
from pgl.network import (AuxHead, AuxHeadSpec, DecoupledModel, MlpSpec, ResNetSpec,
                         ResidualUnit, aux_adapt_policy, attach_aux, build_backbone,
                         partition, partition_spanning)
from pgl.tensor import Tensor, backward


def small_mlp(J=2, widths=None, classes=2, seed=0):
    spec = MlpSpec(widths=widths or [8, 8, 8, 8], num_classes=classes)
    return DecoupledModel(spec, J, "aux_adapt", seed)


class TestBuildBackbone:
    def test_resnet32_unit_count(self):
        units = build_backbone(ResNetSpec(depth=32, num_classes=10), rng=0)
        assert len(units) == 17                      # stem + 3*5 residual + classifier
        assert sum(isinstance(u, ResidualUnit) for u in units) == 15

    def test_resnet110_residual_count(self):
        units = build_backbone(ResNetSpec(depth=110, num_classes=10), rng=0)
        assert sum(isinstance(u, ResidualUnit) for u in units) == 54

    def test_resnet_channel_progression(self):
        units = build_backbone(ResNetSpec(depth=20, num_classes=10), rng=0)
        widths = [u.out_width for u in units if isinstance(u, ResidualUnit)]
        assert widths == [16, 16, 16, 32, 32, 32, 64, 64, 64]

    def test_mlp_units(self):
        units = build_backbone(MlpSpec(widths=[8, 8, 8, 8], num_classes=2), rng=0)
        assert len(units) == 5                       # 4 hidden + classifier
        assert [u.partitionable for u in units] == [True] * 4 + [False]

    def test_bad_depth(self):
        with pytest.raises(ConfigError):
            build_backbone(ResNetSpec(depth=33, num_classes=10), rng=0)

    def test_resnet_forward_shapes(self):
        units = build_backbone(ResNetSpec(depth=8, num_classes=10), rng=0)
        h = Tensor(np.random.default_rng(0).normal(size=(2, 3, 32, 32)).astype(np.float32))
        for u in units:
            h = u.forward(h, train=True)
        assert h.shape == (2, 10)


class TestPartition:
    def test_too_many_blocks(self):
        units = build_backbone(ResNetSpec(depth=32, num_classes=10), rng=0)
        with pytest.raises(ConfigError):
            partition(units, 16)                     # only 15 partitionable units

    def test_one_unit_per_block(self):
        units = build_backbone(MlpSpec(widths=[4] * 16, num_classes=2), rng=0)
        p = partition(units, 16)
        assert p.core_sizes == [1] * 16

    def test_remainder_rule(self):
        units = build_backbone(ResNetSpec(depth=32, num_classes=10), rng=0)
        p = partition(units, 4)
        assert p.core_sizes == [4, 4, 4, 3]
        # stem merges into block 1, classifier into block 4
        assert p.ranges[0] == (0, 5)
        assert p.ranges[-1][1] == 17

    def test_ranges_reconstruct_units(self):
        units = build_backbone(MlpSpec(widths=[3] * 7, num_classes=2), rng=0)
        p = partition(units, 3)
        covered = [i for start, end in p.ranges for i in range(start, end)]
        assert covered == list(range(len(units)))

    def test_spanning_allows_classifier_block(self):
        units = build_backbone(ResNetSpec(depth=32, num_classes=10), rng=0)
        p = partition_spanning(units, 16)            # 17 units incl. stem + classifier
        assert p.core_sizes == [2] + [1] * 15
        assert max(p.core_sizes) - min(p.core_sizes) <= 1

    def test_spanning_bound(self):
        units = build_backbone(MlpSpec(widths=[4, 4], num_classes=2), rng=0)
        with pytest.raises(ConfigError):
            partition_spanning(units, 4)


class TestAuxAdapt:
    def test_paper_mapping(self):
        assert (aux_adapt_policy(16).n_conv, aux_adapt_policy(16).n_fc) == (2, 2)
        assert (aux_adapt_policy(32).n_conv, aux_adapt_policy(32).n_fc) == (1, 3)
        assert (aux_adapt_policy(64).n_conv, aux_adapt_policy(64).n_fc) == (1, 2)

    def test_fallback(self):
        spec = aux_adapt_policy(100)
        assert (spec.n_conv, spec.n_fc) == (1, 2)


class TestAttachAux:
    def test_two_blocks_one_head(self):
        m = small_mlp(J=2)
        assert len(m.heads) == 1

    def test_resnet_j8_head_channels(self):
        units = build_backbone(ResNetSpec(depth=32, num_classes=10), rng=0)
        p = partition(units, 8)
        heads = attach_aux(units, p, "aux_adapt", 10, rng=0)
        assert len(heads) == 7
        # independent enumeration: channel of the last unit in each block
        expected = [units[end - 1].out_width for (start, end) in p.ranges[:-1]]
        got = [h.spec.in_width for h in heads]
        assert got == expected
        assert expected == [16, 16, 32, 32, 32, 64, 64]

    def test_fixed_policy_structure(self):
        units = build_backbone(ResNetSpec(depth=20, num_classes=10), rng=0)
        p = partition(units, 3)
        heads = attach_aux(units, p, (1, 2), 10, rng=0)
        for h in heads:
            assert len(h.convs) == 1 and len(h.fcs) == 2

    def test_head_forward_shapes(self):
        head = AuxHead(AuxHeadSpec(2, 2, 16, 10), "conv", np.random.default_rng(0))
        out = head.forward(Tensor(np.zeros((4, 16, 8, 8), dtype=np.float32)))
        assert out.shape == (4, 10)
        dense = AuxHead(AuxHeadSpec(1, 3, 8, 5), "dense", np.random.default_rng(0))
        assert dense.forward(Tensor(np.zeros((4, 8), dtype=np.float32))).shape == (4, 5)


def _param_ids(named):
    return {p.node_id for _, p in named}


class TestForwardLocal:
    def test_gradients_reach_only_own_block(self):
        m = small_mlp(J=4, widths=[8] * 8)
        x = Tensor(np.random.default_rng(0).normal(size=(4, 2)).astype(np.float32))
        labels = np.array([0, 1, 0, 1])
        T.clear_tape()
        _, logits = m.forward_local(x, 1, train=True)
        grads = backward(softmax_cross_entropy(logits, labels))
        allowed = _param_ids(m.block_named_params(1)) | _param_ids(m.head_named_params(1))
        for j in range(2, 5):
            for _, p in m.block_named_params(j):
                assert p.node_id not in grads
        for name, p in list(m.block_named_params(1)) + list(m.head_named_params(1)):
            assert p.node_id in grads, name
        assert set(grads) - allowed == {nid for nid in grads if nid not in allowed}

    def test_matches_global_slices_bitwise(self):
        m = small_mlp(J=3, widths=[6] * 6, classes=3)
        x = np.random.default_rng(1).normal(size=(5, 2)).astype(np.float32)
        logits, xs = m.forward_global(Tensor(x), train=False)
        h = Tensor(x)
        for j in range(1, 4):
            h, _ = m.forward_local(h, j, train=False)
            assert np.array_equal(h.data, xs[j - 1].data)
            h = h.detach()

    def test_last_block_uses_terminal_classifier(self):
        m = small_mlp(J=2)
        boundary = Tensor(np.zeros((2, 8), dtype=np.float32))
        x_j, logits = m.forward_local(boundary, 2, train=False)
        assert logits is x_j
        assert logits.shape == (2, 2)

    def test_block_index_bounds(self):
        m = small_mlp(J=2)
        with pytest.raises(ConfigError):
            m.forward_local(Tensor(np.zeros((1, 2), dtype=np.float32)), 3)


class TestForwardGlobal:
    def test_gradients_cover_theta_never_gamma(self):
        m = small_mlp(J=4, widths=[8] * 8)
        x = Tensor(np.random.default_rng(2).normal(size=(4, 2)).astype(np.float32))
        T.clear_tape()
        logits, _ = m.forward_global(x, train=True)
        grads = backward(softmax_cross_entropy(logits, np.array([0, 1, 0, 1])))
        for j in range(1, 5):
            for name, p in m.block_named_params(j):
                assert p.node_id in grads, name
        for j in range(1, 4):
            for name, p in m.head_named_params(j):
                assert p.node_id not in grads, name

    def test_eval_equals_chained_local(self):
        spec = ResNetSpec(depth=8, num_classes=4)
        m = DecoupledModel(spec, 2, "aux_adapt", seed=3)
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 3, 16, 16)).astype(np.float32)
        spec.input_hw = 16
        m.forward_global(Tensor(x), train=True)       # populate batchnorm stats
        logits_g, _ = m.forward_global(Tensor(x), train=False)
        h = Tensor(x)
        for j in range(1, m.J + 1):
            h, logits_l = m.forward_local(h, j, train=False)
            h = h.detach()
        assert np.array_equal(logits_g.data, logits_l.data)

    def test_boundaries_are_detached(self):
        m = small_mlp(J=3, widths=[4] * 6)
        _, xs = m.forward_global(Tensor(np.zeros((2, 2), dtype=np.float32)), train=True)
        assert all(not b.requires_grad for b in xs)
        assert len(xs) == 3


class TestModelBookkeeping:
    def test_every_param_in_exactly_one_group(self):
        m = small_mlp(J=3, widths=[5] * 6)
        groups = [_param_ids(m.block_named_params(j)) for j in range(1, 4)]
        groups += [_param_ids(m.head_named_params(j)) for j in range(1, 3)]
        all_ids = [nid for g in groups for nid in g]
        assert len(all_ids) == len(set(all_ids))
        assert set(all_ids) == _param_ids(m.named_params())

    def test_same_seed_same_init(self):
        a = small_mlp(J=2, seed=9)
        b = small_mlp(J=2, seed=9)
        for (na, pa), (nb, pb) in zip(a.named_params(), b.named_params()):
            assert na == nb
            assert np.array_equal(pa.data, pb.data)
