"""Finite-difference verification of every differentiable primitive and layer.

The oracle is independent of the tape: central differences with step 1e-3,
evaluated in float64.  Each case runs several random small shapes and reports
the worst elementwise error, measured relative to max(1, |numeric|).  The
same suite backs both the pytest gradient tests and the ``gradcheck`` CLI
subcommand.
"""

from __future__ import annotations

import numpy as np

from . import layers as L
from . import tensor as T
from .tensor import Tensor

FD_STEP = 1e-3
DEFAULT_TOL = 1e-4
BN_TOL = 1e-3


def numerical_grad(f, inputs, h: float = FD_STEP):
    """Central-difference gradients of a scalar function, one element at a time."""
    grads = []
    with T.no_grad():
        for t in inputs:
            g = np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = f(inputs).item()
                flat[i] = orig - h
                fm = f(inputs).item()
                flat[i] = orig
                gflat[i] = (fp - fm) / (2.0 * h)
            grads.append(g)
    return grads


def analytic_grad(f, inputs):
    T.clear_tape()
    loss = f(inputs)
    grads = T.backward(loss)
    T.clear_tape()
    out = []
    for t in inputs:
        g = grads.get(t.node_id)
        out.append(np.zeros_like(t.data) if g is None else g.data)
    return out


def max_rel_err(f, inputs) -> float:
    """Worst |analytic - numeric| / max(1, |numeric|) over all input elements."""
    ana = analytic_grad(f, inputs)
    num = numerical_grad(f, inputs)
    worst = 0.0
    for a, n in zip(ana, num):
        denom = np.maximum(1.0, np.abs(n))
        worst = max(worst, float(np.max(np.abs(a - n) / denom)) if a.size else 0.0)
    return worst


def _leaf(rng, shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _weighted_sum(out: Tensor, w: np.ndarray) -> Tensor:
    # random projection of the output, so the check exercises the full Jacobian
    return T.reduce_sum(T.mul(out, Tensor(w)))


def _proj(rng, shape):
    return rng.uniform(-1.0, 1.0, size=shape)


# ---------------------------------------------------------------------------
# cases: each yields (inputs, f) pairs for several random shapes

def _case_matmul(rng):
    for _ in range(5):
        m, k, n = rng.integers(1, 6, size=3)
        a, b = _leaf(rng, (m, k)), _leaf(rng, (k, n))
        w = _proj(rng, (m, n))
        yield [a, b], lambda ts, w=w: _weighted_sum(T.matmul(ts[0], ts[1]), w)


def _binary_case(op_name):
    # ops resolve at run time so the suite always checks the live implementation
    def gen(rng):
        op = getattr(T, op_name)
        for i in range(5):
            shape = tuple(rng.integers(1, 5, size=rng.integers(1, 4)))
            a = _leaf(rng, shape)
            # alternate equal shapes and scalar broadcast
            b = _leaf(rng, shape if i % 2 == 0 else (1,) * len(shape))
            if op_name == "div":
                b.data = np.abs(b.data) + 0.5
            w = _proj(rng, shape)
            yield [a, b], lambda ts, w=w, op=op: _weighted_sum(op(ts[0], ts[1]), w)
    return gen


def _unary_case(op_name, lo=-1.0, hi=1.0, avoid_kink=0.0):
    def gen(rng):
        op = getattr(T, op_name)
        for _ in range(5):
            shape = tuple(rng.integers(1, 5, size=rng.integers(1, 4)))
            a = _leaf(rng, shape, lo, hi)
            if avoid_kink:
                a.data = np.where(np.abs(a.data) < avoid_kink,
                                  a.data + np.sign(a.data + 1e-12) * avoid_kink, a.data)
            w = _proj(rng, shape)
            yield [a], lambda ts, w=w, op=op: _weighted_sum(op(ts[0]), w)
    return gen


def _case_sum(rng):
    for _ in range(5):
        shape = tuple(rng.integers(1, 5, size=3))
        axes = (None, (0,), (1, 2), (0, 2), (0, 1, 2))[rng.integers(0, 5)]
        a = _leaf(rng, shape)
        out_shape = np.sum(a.data, axis=axes).shape
        w = _proj(rng, out_shape)
        yield [a], lambda ts, w=w, axes=axes: _weighted_sum(T.reduce_sum(ts[0], axes), w)


def _case_mean(rng):
    for _ in range(5):
        shape = tuple(rng.integers(1, 5, size=3))
        axes = (None, (0,), (1, 2), (0, 2))[rng.integers(0, 4)]
        a = _leaf(rng, shape)
        out_shape = np.mean(a.data, axis=axes).shape
        w = _proj(rng, out_shape)
        yield [a], lambda ts, w=w, axes=axes: _weighted_sum(T.reduce_mean(ts[0], axes), w)


def _case_max(rng):
    for _ in range(5):
        n = int(rng.integers(3, 9))
        # keep a clear gap so the finite-difference step cannot flip the argmax
        vals = rng.permutation(np.linspace(-1.0, 1.0, n)) * 0.9
        a = Tensor(vals, requires_grad=True)
        yield [a], lambda ts: T.reduce_max(ts[0])


def _case_reshape(rng):
    for _ in range(5):
        m, n = rng.integers(1, 5, size=2)
        a = _leaf(rng, (m, n))
        w = _proj(rng, (m * n,))
        yield [a], lambda ts, w=w, mn=m * n: _weighted_sum(T.reshape(ts[0], (mn,)), w)


def _case_transpose(rng):
    for _ in range(5):
        shape = tuple(rng.integers(1, 5, size=3))
        axes = tuple(rng.permutation(3))
        a = _leaf(rng, shape)
        w = _proj(rng, tuple(shape[ax] for ax in axes))
        yield [a], lambda ts, w=w, axes=axes: _weighted_sum(T.transpose(ts[0], axes), w)


def _case_pad(rng):
    for _ in range(5):
        shape = tuple(rng.integers(1, 5, size=2))
        pads = [(int(rng.integers(0, 3)), int(rng.integers(0, 3))) for _ in shape]
        a = _leaf(rng, shape)
        out_shape = tuple(s + lo + hi for s, (lo, hi) in zip(shape, pads))
        w = _proj(rng, out_shape)
        yield [a], lambda ts, w=w, pads=pads: _weighted_sum(T.pad(ts[0], pads), w)


def _case_slice(rng):
    for _ in range(5):
        shape = tuple(rng.integers(2, 6, size=2))
        ranges = []
        for s in shape:
            lo = int(rng.integers(0, s))
            hi = int(rng.integers(lo + 1, s + 1))
            ranges.append((lo, hi))
        a = _leaf(rng, shape)
        w = _proj(rng, tuple(hi - lo for lo, hi in ranges))
        yield [a], lambda ts, w=w, rr=ranges: _weighted_sum(T.slice_(ts[0], rr), w)


def _case_im2col(rng):
    for _ in range(5):
        n, c = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        h = int(rng.integers(4, 7))
        k = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        padv = int(rng.integers(0, 2))
        x = _leaf(rng, (n, c, h, h))
        oh = L.conv_out_size(h, k, stride, padv)
        w = _proj(rng, (n * oh * oh, c * k * k))
        yield [x], lambda ts, w=w, k=k, s=stride, p=padv: _weighted_sum(L.im2col(ts[0], k, s, p), w)


def _case_linear(rng):
    for _ in range(5):
        n, di, do = rng.integers(1, 6, size=3)
        x, wgt, b = _leaf(rng, (n, di)), _leaf(rng, (di, do)), _leaf(rng, (do,))
        w = _proj(rng, (n, do))
        yield [x, wgt, b], lambda ts, w=w: _weighted_sum(L.linear_forward(ts[0], ts[1], ts[2]), w)


def _case_conv2d(rng):
    for i in range(5):
        n, c, o = int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(1, 3))
        h = int(rng.integers(4, 7))
        k = int(rng.integers(1, 4))
        stride = 1 + (i % 2)
        padv = i % 2
        x = _leaf(rng, (n, c, h, h))
        wgt = _leaf(rng, (o, c, k, k))
        b = _leaf(rng, (o,))
        oh = L.conv_out_size(h, k, stride, padv)
        w = _proj(rng, (n, o, oh, oh))
        yield [x, wgt, b], lambda ts, w=w, s=stride, p=padv: _weighted_sum(
            L.conv2d_forward(ts[0], ts[1], ts[2], s, p), w)


def _case_batchnorm(rng):
    for _ in range(5):
        n, c, h = int(rng.integers(2, 5)), int(rng.integers(1, 4)), int(rng.integers(2, 5))
        x = _leaf(rng, (n, c, h, h))
        gamma = _leaf(rng, (c,), 0.5, 1.5)
        beta = _leaf(rng, (c,))
        w = _proj(rng, (n, c, h, h))
        state = L.BatchNormState.init(c)
        yield [x, gamma, beta], lambda ts, w=w, st=state: _weighted_sum(
            L.batchnorm_forward(ts[0], ts[1], ts[2], st, "train"), w)


def _case_cross_entropy(rng):
    for _ in range(5):
        n, c = int(rng.integers(2, 6)), int(rng.integers(2, 6))
        logits = _leaf(rng, (n, c), -2.0, 2.0)
        labels = rng.integers(0, c, size=n)
        yield [logits], lambda ts, y=labels: L.softmax_cross_entropy(ts[0], y)


def _case_residual(rng):
    for i in range(5):
        c = int(rng.integers(2, 4))
        stride = 1 + (i % 2)
        out_c = c if stride == 1 else c + 1
        block = L.ResidualBasic(c, out_c, stride, rng)
        params = [p for _, p in block.named_params("b")]
        for p in params:
            p.data = rng.uniform(-0.5, 0.5, size=p.shape)  # float64 for the oracle
        h = int(rng.integers(4, 6))
        x = _leaf(rng, (2, c, h, h))
        oh = L.conv_out_size(h, 3, stride, 1)
        w = _proj(rng, (2, out_c, oh, oh))
        yield [x] + params, lambda ts, w=w, blk=block: _weighted_sum(blk.forward(ts[0], train=True), w)


CASES = [
    ("matmul", _case_matmul, DEFAULT_TOL),
    ("add", _binary_case("add"), DEFAULT_TOL),
    ("sub", _binary_case("sub"), DEFAULT_TOL),
    ("mul", _binary_case("mul"), DEFAULT_TOL),
    ("div", _binary_case("div"), DEFAULT_TOL),
    ("neg", _unary_case("neg"), DEFAULT_TOL),
    ("relu", _unary_case("relu", avoid_kink=0.05), DEFAULT_TOL),
    ("exp", _unary_case("exp"), DEFAULT_TOL),
    ("log", _unary_case("log", lo=0.2, hi=1.2), DEFAULT_TOL),
    ("sqrt", _unary_case("sqrt", lo=0.2, hi=1.2), DEFAULT_TOL),
    ("sum", _case_sum, DEFAULT_TOL),
    ("mean", _case_mean, DEFAULT_TOL),
    ("max", _case_max, DEFAULT_TOL),
    ("reshape", _case_reshape, DEFAULT_TOL),
    ("transpose", _case_transpose, DEFAULT_TOL),
    ("pad", _case_pad, DEFAULT_TOL),
    ("slice", _case_slice, DEFAULT_TOL),
    ("im2col", _case_im2col, DEFAULT_TOL),
    ("linear", _case_linear, DEFAULT_TOL),
    ("conv2d", _case_conv2d, DEFAULT_TOL),
    ("batchnorm", _case_batchnorm, BN_TOL),
    ("cross_entropy", _case_cross_entropy, DEFAULT_TOL),
    ("residual_block", _case_residual, BN_TOL),
]


def run_case(name: str, seed: int = 0) -> float:
    """Worst finite-difference error for one named op."""
    import zlib

    gen = {n: g for n, g, _ in CASES}[name]
    rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
    worst = 0.0
    for inputs, f in gen(rng):
        worst = max(worst, max_rel_err(f, inputs))
    return worst


def run_suite(seed: int = 0, names=None):
    """Run every case; returns [(name, max_err, tolerance, passed)]."""
    results = []
    for name, _, tol in CASES:
        if names is not None and name not in names:
            continue
        err = run_case(name, seed)
        results.append((name, err, tol, err < tol))
    return results
