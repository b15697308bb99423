"""Neural layers built on the tensor tape: linear, conv2d (im2col), batch
norm, global average pooling, residual basic blocks, and softmax cross
entropy.

Each layer exists twice: a pure functional form (the testable contract) and a
thin stateful class used to assemble networks.  All gradients flow through
the tape; ``im2col`` and ``softmax_cross_entropy`` are the only custom-
backward primitives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DataError, ShapeError
from .tensor import Tensor, apply_op


# ---------------------------------------------------------------------------
# functional ops

def linear_forward(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x[N,d_in] @ w[d_in,d_out] (+ b[d_out] broadcast over rows)."""
    out = T.matmul(x, w)
    if b is not None:
        if b.shape != (w.shape[1],):
            raise ShapeError(f"linear: bias {list(b.shape)} vs out dim {w.shape[1]}")
        out = T.add(out, b)
    return out


def conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    # floor semantics: trailing rows that do not fit a full stride are dropped
    num = size + 2 * pad - k
    if num < 0:
        raise ShapeError(f"conv2d: kernel {k} exceeds padded input {size + 2 * pad}")
    return num // stride + 1


def im2col(x: Tensor, k: int, stride: int, pad: int) -> Tensor:
    """Lower NCHW patches to a [N*H'*W', C*k*k] matrix (tape primitive)."""
    n, c, h, w = x.shape
    oh = conv_out_size(h, k, stride, pad)
    ow = conv_out_size(w, k, stride, pad)
    img = np.pad(x.data, [(0, 0), (0, 0), (pad, pad), (pad, pad)])
    col = np.empty((n, c, k, k, oh, ow), dtype=x.dtype)
    for ky in range(k):
        for kx in range(k):
            col[:, :, ky, kx] = img[:, :, ky:ky + stride * oh:stride, kx:kx + stride * ow:stride]
    out = col.transpose(0, 4, 5, 1, 2, 3).reshape(n * oh * ow, c * k * k)

    def grad(g):
        gcol = g.reshape(n, oh, ow, c, k, k).transpose(0, 3, 4, 5, 1, 2)
        gimg = np.zeros_like(img)
        for ky in range(k):
            for kx in range(k):
                gimg[:, :, ky:ky + stride * oh:stride, kx:kx + stride * ow:stride] += gcol[:, :, ky, kx]
        return gimg[:, :, pad:pad + h, pad:pad + w]

    return apply_op(out, [(x, grad)])


def conv2d_forward(x: Tensor, w: Tensor, b: Tensor | None = None,
                   stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of x[N,C,H,W] with w[O,C,k,k] -> [N,O,H',W']."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: expects 4-D input and weight, got {list(x.shape)}, {list(w.shape)}")
    n, c, h, width = x.shape
    o, cw, k, k2 = w.shape
    if cw != c or k != k2:
        raise ShapeError(f"conv2d: weight {list(w.shape)} does not match input channels {c}")
    oh = conv_out_size(h, k, stride, pad)
    ow = conv_out_size(width, k, stride, pad)
    col = im2col(x, k, stride, pad)                      # [N*oh*ow, C*k*k]
    wmat = T.reshape(w, (o, c * k * k))                  # [O, C*k*k]
    out = T.matmul(col, T.transpose(wmat, (1, 0)))       # [N*oh*ow, O]
    if b is not None:
        if b.shape != (o,):
            raise ShapeError(f"conv2d: bias {list(b.shape)} vs {o} output channels")
        out = T.add(out, b)
    out = T.reshape(out, (n, oh, ow, o))
    return T.transpose(out, (0, 3, 1, 2))


@dataclass
class BatchNormState:
    """Per-channel running statistics shared between train and eval passes."""
    running_mean: np.ndarray
    running_var: np.ndarray
    batches_tracked: int = 0

    @classmethod
    def init(cls, channels: int) -> "BatchNormState":
        return cls(np.zeros(channels, dtype=np.float32),
                   np.ones(channels, dtype=np.float32))


def batchnorm_forward(x: Tensor, gamma: Tensor, beta: Tensor,
                      state: BatchNormState, mode: str = "train",
                      eps: float = 1e-5, momentum: float = 0.1) -> Tensor:
    """Per-channel normalization over (N,H,W) with biased batch variance.

    Train mode normalizes by batch statistics and updates the running stats
    in place; eval mode uses the running stats and requires them populated.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"batchnorm: expects NCHW input, got {list(x.shape)}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm: affine params must have shape [{c}]")
    bshape = (1, c, 1, 1)
    if mode == "train":
        mu = T.reduce_mean(x, axes=(0, 2, 3), keepdims=True)
        xc = T.sub(x, mu)
        var = T.reduce_mean(T.mul(xc, xc), axes=(0, 2, 3), keepdims=True)
        xhat = T.div(xc, T.sqrt(T.add(var, eps)))
        m = np.float32(momentum)
        state.running_mean = (1 - m) * state.running_mean + m * mu.data.reshape(c)
        state.running_var = (1 - m) * state.running_var + m * var.data.reshape(c)
        state.batches_tracked += 1
    elif mode == "eval":
        if state.batches_tracked == 0:
            raise ContractError("batchnorm: eval mode before any train-mode batch")
        rm = Tensor(state.running_mean.reshape(bshape).astype(x.dtype))
        rv = Tensor(state.running_var.reshape(bshape).astype(x.dtype))
        xhat = T.div(T.sub(x, rm), T.sqrt(T.add(rv, eps)))
    else:
        raise ValueError(f"batchnorm: unknown mode {mode!r}")
    return T.add(T.mul(T.reshape(gamma, bshape), xhat), T.reshape(beta, bshape))


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label], max-stabilized.

    Backward is the closed form (softmax - onehot) / N.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy: expects [N,C] logits, got {list(logits.shape)}")
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise DataError(f"cross_entropy: {n} rows but {labels.shape} labels")
    if labels.min() < 0 or labels.max() >= c:
        raise DataError(f"cross_entropy: labels must lie in [0, {c})")
    z = logits.data.astype(np.float64) if logits.dtype == np.float64 else logits.data
    z = z - z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    loss = -(z[rows, labels] - np.log(ez.sum(axis=1))).mean()

    def grad(g):
        gl = probs.copy()
        gl[rows, labels] -= 1.0
        return (gl / n).astype(logits.dtype) * g

    return apply_op(np.asarray(loss, dtype=logits.dtype), [(logits, grad)])


def global_avg_pool(x: Tensor) -> Tensor:
    """[N,C,H,W] -> [N,C] spatial mean."""
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool: expects NCHW input, got {list(x.shape)}")
    return T.reduce_mean(x, axes=(2, 3))


def flatten(x: Tensor) -> Tensor:
    return T.reshape(x, (x.shape[0], -1))


# ---------------------------------------------------------------------------
# stateful layers

class Linear:
    def __init__(self, d_in: int, d_out: int, rng, bias: bool = True):
        self.w = T.create((d_in, d_out), ("kaiming_normal", d_in), rng, requires_grad=True)
        self.b = T.create((d_out,), "zeros", requires_grad=True) if bias else None

    def forward(self, x: Tensor, train: bool = True) -> Tensor:
        return linear_forward(x, self.w, self.b)

    def named_params(self, prefix: str):
        yield f"{prefix}.weight", self.w
        if self.b is not None:
            yield f"{prefix}.bias", self.b


class Conv2d:
    def __init__(self, in_ch: int, out_ch: int, k: int, rng,
                 stride: int = 1, pad: int = 0, bias: bool = True):
        self.stride, self.pad = stride, pad
        fan_in = in_ch * k * k
        self.w = T.create((out_ch, in_ch, k, k), ("kaiming_normal", fan_in), rng, requires_grad=True)
        self.b = T.create((out_ch,), "zeros", requires_grad=True) if bias else None

    def forward(self, x: Tensor, train: bool = True) -> Tensor:
        return conv2d_forward(x, self.w, self.b, self.stride, self.pad)

    def named_params(self, prefix: str):
        yield f"{prefix}.weight", self.w
        if self.b is not None:
            yield f"{prefix}.bias", self.b


class BatchNorm2d:
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        self.gamma = T.create((channels,), "ones", requires_grad=True)
        self.beta = T.create((channels,), "zeros", requires_grad=True)
        self.state = BatchNormState.init(channels)
        self.eps, self.momentum = eps, momentum

    def forward(self, x: Tensor, train: bool = True) -> Tensor:
        mode = "train" if train else "eval"
        return batchnorm_forward(x, self.gamma, self.beta, self.state, mode,
                                 self.eps, self.momentum)

    def named_params(self, prefix: str):
        yield f"{prefix}.gamma", self.gamma
        yield f"{prefix}.beta", self.beta

    def named_bns(self, prefix: str):
        yield prefix, self


class ResidualBasic:
    """conv3x3(stride s) -> bn -> relu -> conv3x3 -> bn, plus skip, then relu.

    When channels or stride change, the skip path gets a 1x1 stride-matched
    projection followed by batch norm.
    """

    def __init__(self, in_ch: int, out_ch: int, stride: int, rng):
        self.conv1 = Conv2d(in_ch, out_ch, 3, rng, stride=stride, pad=1, bias=False)
        self.bn1 = BatchNorm2d(out_ch)
        self.conv2 = Conv2d(out_ch, out_ch, 3, rng, stride=1, pad=1, bias=False)
        self.bn2 = BatchNorm2d(out_ch)
        if in_ch != out_ch or stride != 1:
            self.proj = Conv2d(in_ch, out_ch, 1, rng, stride=stride, pad=0, bias=False)
            self.proj_bn = BatchNorm2d(out_ch)
        else:
            self.proj = None
            self.proj_bn = None
        self.in_ch, self.out_ch, self.stride = in_ch, out_ch, stride

    def forward(self, x: Tensor, train: bool = True) -> Tensor:
        out = T.relu(self.bn1.forward(self.conv1.forward(x, train), train))
        out = self.bn2.forward(self.conv2.forward(out, train), train)
        skip = x if self.proj is None else self.proj_bn.forward(self.proj.forward(x, train), train)
        return T.relu(T.add(out, skip))

    def named_params(self, prefix: str):
        yield from self.conv1.named_params(f"{prefix}.conv1")
        yield from self.bn1.named_params(f"{prefix}.bn1")
        yield from self.conv2.named_params(f"{prefix}.conv2")
        yield from self.bn2.named_params(f"{prefix}.bn2")
        if self.proj is not None:
            yield from self.proj.named_params(f"{prefix}.proj")
            yield from self.proj_bn.named_params(f"{prefix}.proj_bn")

    def named_bns(self, prefix: str):
        yield f"{prefix}.bn1", self.bn1
        yield f"{prefix}.bn2", self.bn2
        if self.proj_bn is not None:
            yield f"{prefix}.proj_bn", self.proj_bn


def residual_block_forward(x: Tensor, block: ResidualBasic, train: bool = True) -> Tensor:
    return block.forward(x, train)
