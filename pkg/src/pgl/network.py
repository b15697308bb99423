"""Backbone construction, block partitioning, and auxiliary classifier heads.

A backbone is a flat list of units (stem / residual blocks / dense layers /
terminal classifier).  ``partition`` groups the units into J contiguous
blocks, merging the stem into block 1 and the classifier into block J.  Every
block except the last gets an auxiliary head; block J's own classifier plays
that role.  Gradient isolation between blocks comes from detaching boundary
activations, never from parameter bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from . import tensor as T
from .errors import ConfigError
from .tensor import Tensor


# ---------------------------------------------------------------------------
# network specs

@dataclass
class MlpSpec:
    widths: list
    num_classes: int
    in_features: int = 2

    def validate(self):
        if not self.widths or any(w < 1 for w in self.widths):
            raise ConfigError("mlp widths must be a non-empty list of positive ints")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")


@dataclass
class ResNetSpec:
    depth: int
    num_classes: int
    in_channels: int = 3
    input_hw: int = 32
    stage_channels: tuple = (16, 32, 64)

    def validate(self):
        if self.depth < 8 or (self.depth - 2) % 6 != 0:
            raise ConfigError(f"resnet depth must be 6n+2, got {self.depth}")
        if tuple(self.stage_channels) != (16, 32, 64):
            raise ConfigError("stage_channels are fixed at (16, 32, 64)")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")

    @property
    def units_per_stage(self) -> int:
        return (self.depth - 2) // 6


# ---------------------------------------------------------------------------
# units

class StemUnit:
    """3x3 conv (in->16) + bn + relu; not partitionable (merges into block 1)."""

    kind = "conv"
    partitionable = False

    def __init__(self, in_ch: int, out_ch: int, rng):
        self.conv = L.Conv2d(in_ch, out_ch, 3, rng, stride=1, pad=1, bias=False)
        self.bn = L.BatchNorm2d(out_ch)
        self.out_width = out_ch

    def forward(self, x, train=True):
        return T.relu(self.bn.forward(self.conv.forward(x, train), train))

    def named_params(self, prefix):
        yield from self.conv.named_params(f"{prefix}.conv")
        yield from self.bn.named_params(f"{prefix}.bn")

    def named_bns(self, prefix):
        yield from self.bn.named_bns(f"{prefix}.bn")


class ResidualUnit:
    kind = "conv"
    partitionable = True

    def __init__(self, in_ch: int, out_ch: int, stride: int, rng):
        self.block = L.ResidualBasic(in_ch, out_ch, stride, rng)
        self.out_width = out_ch

    def forward(self, x, train=True):
        return self.block.forward(x, train)

    def named_params(self, prefix):
        yield from self.block.named_params(prefix)

    def named_bns(self, prefix):
        yield from self.block.named_bns(prefix)


class PoolClassifierUnit:
    """Global average pool + linear; terminal unit of conv backbones."""

    kind = "dense"
    partitionable = False

    def __init__(self, in_ch: int, num_classes: int, rng):
        self.fc = L.Linear(in_ch, num_classes, rng)
        self.out_width = num_classes

    def forward(self, x, train=True):
        return self.fc.forward(L.global_avg_pool(x), train)

    def named_params(self, prefix):
        yield from self.fc.named_params(f"{prefix}.fc")

    def named_bns(self, prefix):
        return iter(())


class DenseUnit:
    """Linear + relu; the hidden unit of MLP backbones."""

    kind = "dense"
    partitionable = True

    def __init__(self, d_in: int, d_out: int, rng):
        self.fc = L.Linear(d_in, d_out, rng)
        self.out_width = d_out

    def forward(self, x, train=True):
        return T.relu(self.fc.forward(x, train))

    def named_params(self, prefix):
        yield from self.fc.named_params(f"{prefix}.fc")

    def named_bns(self, prefix):
        return iter(())


class LinearClassifierUnit:
    kind = "dense"
    partitionable = False

    def __init__(self, d_in: int, num_classes: int, rng):
        self.fc = L.Linear(d_in, num_classes, rng)
        self.out_width = num_classes

    def forward(self, x, train=True):
        return self.fc.forward(x, train)

    def named_params(self, prefix):
        yield from self.fc.named_params(f"{prefix}.fc")

    def named_bns(self, prefix):
        return iter(())


def build_backbone(spec, rng) -> list:
    """Materialize the unit list for an MLP or CIFAR-style residual network."""
    spec.validate()
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    units = []
    if isinstance(spec, ResNetSpec):
        units.append(StemUnit(spec.in_channels, spec.stage_channels[0], rng))
        in_ch = spec.stage_channels[0]
        for stage, ch in enumerate(spec.stage_channels):
            for i in range(spec.units_per_stage):
                stride = 2 if (stage > 0 and i == 0) else 1
                units.append(ResidualUnit(in_ch, ch, stride, rng))
                in_ch = ch
        units.append(PoolClassifierUnit(in_ch, spec.num_classes, rng))
    elif isinstance(spec, MlpSpec):
        d = spec.in_features
        for w in spec.widths:
            units.append(DenseUnit(d, w, rng))
            d = w
        units.append(LinearClassifierUnit(d, spec.num_classes, rng))
    else:
        raise ConfigError(f"unknown network spec {type(spec).__name__}")
    return units


# ---------------------------------------------------------------------------
# partitioning

@dataclass
class Partition:
    """J contiguous index ranges covering a unit list exactly once."""
    J: int
    ranges: list          # [(start, end)) over the full unit list
    core_sizes: list = field(default_factory=list)  # partitionable units per block

    def validate(self, n_units: int):
        if self.J < 1 or len(self.ranges) != self.J:
            raise ConfigError(f"partition must have J >= 1 ranges, got {self.ranges}")
        pos = 0
        for start, end in self.ranges:
            if start != pos or end <= start:
                raise ConfigError(f"partition ranges must be contiguous and non-empty: {self.ranges}")
            pos = end
        if pos != n_units:
            raise ConfigError(f"partition covers {pos} of {n_units} units")

    def block_units(self, units, j: int) -> list:
        start, end = self.ranges[j - 1]
        return units[start:end]


def _near_equal_sizes(n: int, J: int) -> list:
    base, rem = divmod(n, J)
    return [base + 1 if j < rem else base for j in range(J)]


def partition(units, J: int) -> Partition:
    """Split near-equally over the partitionable units; the leading
    non-partitionable prefix (stem) merges into block 1 and the trailing
    classifier into block J.  Remainder units go to the earliest blocks."""
    n = len(units)
    prefix = 0
    while prefix < n and not units[prefix].partitionable:
        prefix += 1
    suffix = 0
    while suffix < n - prefix and not units[n - 1 - suffix].partitionable:
        suffix += 1
    core = n - prefix - suffix
    if not 1 <= J <= core:
        raise ConfigError(f"J={J} out of range: only {core} partitionable units")
    sizes = _near_equal_sizes(core, J)
    ranges = []
    pos = 0
    for j, size in enumerate(sizes):
        start = pos
        end = pos + size
        if j == 0:
            end += prefix
        if j == J - 1:
            end += suffix
        ranges.append((start, end))
        pos = end
    p = Partition(J, ranges, sizes)
    p.validate(n)
    return p


def partition_spanning(units, J: int) -> Partition:
    """Near-equal split where every unit counts, stem and classifier included.

    This is the block accounting used for footprint profiles at block counts
    the trainer cannot form (e.g. a 16-way split of the 17-unit depth-32
    backbone, where the terminal classifier stands alone as the final
    block)."""
    n = len(units)
    if not 1 <= J <= n:
        raise ConfigError(f"J={J} out of range for {n} units")
    sizes = _near_equal_sizes(n, J)
    ranges = []
    pos = 0
    for size in sizes:
        ranges.append((pos, pos + size))
        pos += size
    p = Partition(J, ranges, sizes)
    p.validate(n)
    return p


# ---------------------------------------------------------------------------
# auxiliary heads

@dataclass
class AuxHeadSpec:
    n_conv: int
    n_fc: int
    in_width: int
    num_classes: int
    hidden: int = 128

    def validate(self):
        if not (0 <= self.n_conv <= 2):
            raise ConfigError(f"aux head n_conv must be 0..2, got {self.n_conv}")
        if not (1 <= self.n_fc <= 3):
            raise ConfigError(f"aux head n_fc must be 1..3, got {self.n_fc}")


_AUX_ADAPT = {16: (2, 2), 32: (1, 3), 64: (1, 2)}


def aux_adapt_policy(input_channels: int, num_classes: int = 10) -> AuxHeadSpec:
    """Channel-adaptive head sizing: wider heads on earlier, narrower blocks.

    16 -> 2 convs + 2 fc, 32 -> 1 conv + 3 fc, 64 -> 1 conv + 2 fc.  Any
    other width falls back to the 1 conv + 2 fc shape.
    """
    n_conv, n_fc = _AUX_ADAPT.get(int(input_channels), (1, 2))
    return AuxHeadSpec(n_conv, n_fc, int(input_channels), num_classes)


class AuxHead:
    """Small classifier on a block boundary.

    Conv inputs: n_conv channel-preserving 3x3 stride-2 convs with relu, then
    global average pooling, then the fc stack.  Dense inputs replace each conv
    with a width-preserving linear + relu.  The fc stack ends in num_classes;
    intermediate fc layers use the hidden width with relu between.
    """

    def __init__(self, spec: AuxHeadSpec, input_kind: str, rng):
        spec.validate()
        self.spec = spec
        self.input_kind = input_kind
        self.convs = []
        w = spec.in_width
        for _ in range(spec.n_conv):
            if input_kind == "conv":
                self.convs.append(L.Conv2d(w, w, 3, rng, stride=2, pad=1, bias=False))
            else:
                self.convs.append(L.Linear(w, w, rng))
        self.fcs = []
        d = w
        for i in range(spec.n_fc - 1):
            self.fcs.append(L.Linear(d, spec.hidden, rng))
            d = spec.hidden
        self.fcs.append(L.Linear(d, spec.num_classes, rng))

    def forward(self, x: Tensor, train: bool = True) -> Tensor:
        h = x
        for conv in self.convs:
            h = T.relu(conv.forward(h, train))
        if self.input_kind == "conv":
            h = L.global_avg_pool(h)
        for fc in self.fcs[:-1]:
            h = T.relu(fc.forward(h, train))
        return self.fcs[-1].forward(h, train)

    def named_params(self, prefix):
        for i, conv in enumerate(self.convs):
            yield from conv.named_params(f"{prefix}.conv{i}")
        for i, fc in enumerate(self.fcs):
            yield from fc.named_params(f"{prefix}.fc{i}")


def attach_aux(units, part: Partition, policy, num_classes: int, rng) -> list:
    """Build heads for blocks 1..J-1.  ``policy`` is "aux_adapt" or a fixed
    (n_conv, n_fc) pair applied at every boundary."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    heads = []
    for j in range(1, part.J):
        boundary_unit = units[part.ranges[j - 1][1] - 1]
        width = boundary_unit.out_width
        if policy == "aux_adapt":
            spec = aux_adapt_policy(width, num_classes)
        else:
            n_conv, n_fc = policy
            spec = AuxHeadSpec(n_conv, n_fc, width, num_classes)
        heads.append(AuxHead(spec, boundary_unit.kind, rng))
    return heads


# ---------------------------------------------------------------------------
# the decoupled model

class DecoupledModel:
    """Backbone blocks plus auxiliary heads with stop-gradient boundaries."""

    def __init__(self, spec, J: int, aux_policy, seed: int):
        rng = np.random.default_rng(seed)
        self.spec = spec
        self.units = build_backbone(spec, rng)
        self.partition = partition(self.units, J)
        self.num_classes = spec.num_classes
        self.heads = attach_aux(self.units, self.partition, aux_policy, self.num_classes, rng)
        self.aux_policy = aux_policy
        self.seed = seed

    @property
    def J(self) -> int:
        return self.partition.J

    def forward_global(self, x: Tensor, train: bool = True):
        """One uninterrupted differentiable chain through all blocks.

        Returns (logits, [X_1 .. X_J]) where the boundary activations are
        detached copies for auxiliary-head training.
        """
        h = x
        boundary = []
        for j in range(1, self.J + 1):
            for unit in self.partition.block_units(self.units, j):
                h = unit.forward(h, train)
            boundary.append(h.detach())
        return h, boundary

    def forward_local(self, x: Tensor, j: int, train: bool = True):
        """Forward block j on a detached input; returns (X_j, logits_j).

        The caller must hand in a tensor with no tape lineage so that the
        local loss reaches only this block's parameters and its head.  For
        j == J the terminal classifier inside the block provides the logits.
        """
        if not 1 <= j <= self.J:
            raise ConfigError(f"block index {j} out of [1, {self.J}]")
        h = x
        for unit in self.partition.block_units(self.units, j):
            h = unit.forward(h, train)
        logits = self.heads[j - 1].forward(h, train) if j < self.J else h
        return h, logits

    def aux_logits(self, x_j: Tensor, j: int, train: bool = True) -> Tensor:
        """Head j applied to a (detached) boundary activation."""
        return self.heads[j - 1].forward(x_j, train)

    # -- parameter bookkeeping ------------------------------------------------

    def block_named_params(self, j: int):
        start, end = self.partition.ranges[j - 1]
        for i in range(start, end):
            yield from self.units[i].named_params(f"block{j}.unit{i - start}")

    def head_named_params(self, j: int):
        yield from self.heads[j - 1].named_params(f"aux{j}")

    def named_params(self):
        for j in range(1, self.J + 1):
            yield from self.block_named_params(j)
        for j in range(1, self.J):
            yield from self.head_named_params(j)

    def named_bns(self):
        for j in range(1, self.J + 1):
            start, end = self.partition.ranges[j - 1]
            for i in range(start, end):
                yield from self.units[i].named_bns(f"block{j}.unit{i - start}")

    def param_count(self) -> int:
        return sum(p.size for _, p in self.named_params())
