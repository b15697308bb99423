"""Analytic training-memory estimator for backprop, decoupled-local, and
periodically guided schedules.

Nothing here allocates model tensors: unit output sizes and parameter counts
come from shape formulas over the network spec.  Backprop must hold every
unit's output activation plus optimizer state for all parameters at once;
decoupled-local training holds one block at a time (its activations, its
head, the handed-off boundary input, and its optimizer state).  A guided
schedule time-averages the two at the guided-epoch fraction.

Absolute bytes ignore framework overheads; comparisons are meaningful as
ratios.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError
from .network import AuxHeadSpec, MlpSpec, Partition, ResNetSpec, aux_adapt_policy
from .layers import conv_out_size
from .training import Schedule, guided_epoch_count


@dataclass
class UnitPlan:
    """Shape/parameter facts for one backbone unit; duck-types the real unit
    for the partition helpers."""
    kind: str                 # "conv" or "dense"
    partitionable: bool
    out_shape: tuple          # (C, H, W) or (width,)
    params: int

    @property
    def out_width(self) -> int:
        return self.out_shape[0]

    def out_elements(self, batch: int) -> int:
        n = batch
        for s in self.out_shape:
            n *= s
        return n


def _residual_params(in_ch: int, out_ch: int, stride: int) -> int:
    p = in_ch * out_ch * 9 + 2 * out_ch      # conv1 + bn1
    p += out_ch * out_ch * 9 + 2 * out_ch    # conv2 + bn2
    if in_ch != out_ch or stride != 1:
        p += in_ch * out_ch + 2 * out_ch     # 1x1 projection + bn
    return p


def unit_plan(spec) -> list:
    """Mirror of the backbone builder in pure arithmetic."""
    spec.validate()
    plans = []
    if isinstance(spec, ResNetSpec):
        hw = spec.input_hw
        ch0 = spec.stage_channels[0]
        plans.append(UnitPlan("conv", False, (ch0, hw, hw),
                              spec.in_channels * ch0 * 9 + 2 * ch0))
        in_ch = ch0
        for stage, ch in enumerate(spec.stage_channels):
            for i in range(spec.units_per_stage):
                stride = 2 if (stage > 0 and i == 0) else 1
                hw = conv_out_size(hw, 3, stride, 1)
                plans.append(UnitPlan("conv", True, (ch, hw, hw),
                                      _residual_params(in_ch, ch, stride)))
                in_ch = ch
        plans.append(UnitPlan("dense", False, (spec.num_classes,),
                              in_ch * spec.num_classes + spec.num_classes))
    elif isinstance(spec, MlpSpec):
        d = spec.in_features
        for w in spec.widths:
            plans.append(UnitPlan("dense", True, (w,), d * w + w))
            d = w
        plans.append(UnitPlan("dense", False, (spec.num_classes,),
                              d * spec.num_classes + spec.num_classes))
    else:
        raise ConfigError(f"unknown network spec {type(spec).__name__}")
    return plans


def head_plan(head: AuxHeadSpec, boundary: UnitPlan, batch: int):
    """(activation elements, parameter count) for one auxiliary head."""
    acts = 0
    params = 0
    if boundary.kind == "conv":
        c, h, w = boundary.out_shape
        for _ in range(head.n_conv):
            h = conv_out_size(h, 3, 2, 1)
            w = conv_out_size(w, 3, 2, 1)
            acts += batch * c * h * w
            params += c * c * 9
        acts += batch * c          # global average pool
        d = c
    else:
        (d,) = boundary.out_shape
        for _ in range(head.n_conv):
            acts += batch * d
            params += d * d + d
    for _ in range(head.n_fc - 1):
        acts += batch * head.hidden
        params += d * head.hidden + head.hidden
        d = head.hidden
    acts += batch * head.num_classes
    params += d * head.num_classes + head.num_classes
    return acts, params


@dataclass
class MemProfile:
    unit_activations: list      # per unit, for the given batch size
    unit_params: list
    head_activations: list      # per block 1..J-1
    head_params: list
    bytes_per_element: int = 4


def activation_sizes(spec, part: Partition, batch: int, aux_policy="aux_adapt") -> MemProfile:
    """Element counts per unit output and per aux head, plus parameter counts."""
    if batch < 1:
        raise ConfigError(f"batch must be >= 1, got {batch}")
    plans = unit_plan(spec)
    part.validate(len(plans))
    head_acts, head_params = [], []
    for j in range(1, part.J):
        boundary = plans[part.ranges[j - 1][1] - 1]
        if aux_policy == "aux_adapt":
            head = aux_adapt_policy(boundary.out_width, spec.num_classes)
        else:
            n_conv, n_fc = aux_policy
            head = AuxHeadSpec(n_conv, n_fc, boundary.out_width, spec.num_classes)
        a, p = head_plan(head, boundary, batch)
        head_acts.append(a)
        head_params.append(p)
    return MemProfile([u.out_elements(batch) for u in plans],
                      [u.params for u in plans], head_acts, head_params)


# ---------------------------------------------------------------------------
# estimates

# optimizer state factor: parameters + gradients + velocity
_OPT_FACTOR = 3


def estimate_bp(profile: MemProfile) -> int:
    """All unit activations resident at once, heads unused, full optimizer state."""
    total = sum(profile.unit_activations) + _OPT_FACTOR * sum(profile.unit_params)
    return total * profile.bytes_per_element


def block_footprints(profile: MemProfile, part: Partition) -> list:
    """Per-block byte counts under one-block-at-a-time training.

    Block j holds its own unit activations, its aux head's activations, the
    detached boundary input handed over from block j-1 (none for block 1,
    whose input is the data batch itself), and optimizer state for its
    parameters and its head's.
    """
    part.validate(len(profile.unit_activations))
    # canonical profiles carry J-1 heads (block J's classifier is in-block);
    # hand-built toy profiles may charge an aux term to every block
    n_heads = len(profile.head_activations)
    if n_heads not in (part.J - 1, part.J):
        raise ConfigError(f"profile has {n_heads} heads for J={part.J}")
    out = []
    for j in range(1, part.J + 1):
        start, end = part.ranges[j - 1]
        acts = sum(profile.unit_activations[start:end])
        params = sum(profile.unit_params[start:end])
        if j - 1 < n_heads:
            acts += profile.head_activations[j - 1]
            params += profile.head_params[j - 1]
        if j >= 2:
            acts += profile.unit_activations[part.ranges[j - 2][1] - 1]
        out.append((acts + _OPT_FACTOR * params) * profile.bytes_per_element)
    return out


def estimate_local(profile: MemProfile, part: Partition) -> int:
    """Peak over blocks: only one decoupled block is loaded at a time."""
    return max(block_footprints(profile, part))


def estimate_schedule_avg(profile: MemProfile, part: Partition, schedule: Schedule) -> float:
    """Time-average: guided epochs cost like bp, local epochs like decoupled."""
    schedule.validate()
    f_guided = guided_epoch_count(schedule) / schedule.E
    return f_guided * estimate_bp(profile) + (1.0 - f_guided) * estimate_local(profile, part)


@dataclass
class MemEstimate:
    peak_bp: int
    peak_local: int
    schedule_avg: float
    per_block: list = field(default_factory=list)


def estimate(spec, part: Partition, batch: int, schedule: Schedule,
             aux_policy="aux_adapt") -> MemEstimate:
    profile = activation_sizes(spec, part, batch, aux_policy)
    return MemEstimate(
        peak_bp=estimate_bp(profile),
        peak_local=estimate_local(profile, part),
        schedule_avg=estimate_schedule_avg(profile, part, schedule),
        per_block=block_footprints(profile, part),
    )
