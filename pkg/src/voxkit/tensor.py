"""Dense float64 tensor kernels with hand-derived backward passes.

Everything here operates on plain C-contiguous ``np.float64`` arrays.
Kernels are pure and deterministic: identical inputs give bit-identical
outputs. Each kernel checks its result for NaN/Inf so numerical blow-ups
surface at the op that produced them instead of corrupting downstream
state.
"""

import numpy as np

from .errors import DimensionError, NumericError

DTYPE = np.float64


def tensor(data):
    """Coerce to a C-contiguous float64 array and reject non-finite input."""
    x = np.ascontiguousarray(data, dtype=DTYPE)
    check_finite(x, "tensor input")
    return x


def check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")
    return x


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------

def matmul(a, b):
    """c[i,j] = sum_k a[i,k] * b[k,j] for 2-D operands."""
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        c = a @ b
    check_finite(c, "matmul output")
    return c


# ---------------------------------------------------------------------------
# conv2d (cross-correlation, zero padding) via im2col
# ---------------------------------------------------------------------------

def _conv_out_size(h, w, kh, kw, sh, sw, ph, pw):
    hp, wp = h + 2 * ph, w + 2 * pw
    if kh > hp or kw > wp:
        raise DimensionError(
            f"kernel ({kh},{kw}) larger than padded input ({hp},{wp})")
    if sh < 1 or sw < 1:
        raise DimensionError(f"strides must be >= 1, got ({sh},{sw})")
    return (hp - kh) // sh + 1, (wp - kw) // sw + 1


def _im2col(xp, kh, kw, sh, sw, oh, ow):
    # xp: padded (C, Hp, Wp) -> patches (oh*ow, C*kh*kw)
    c = xp.shape[0]
    sc, s0, s1 = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(c, kh, kw, oh, ow),
        strides=(sc, s0, s1, s0 * sh, s1 * sw),
        writeable=False,
    )
    return view.transpose(3, 4, 0, 1, 2).reshape(oh * ow, c * kh * kw)


def conv2d(x, w, stride=(1, 1), padding=(0, 0)):
    """Batched 2-D cross-correlation.

    x: (N, C, H, W), w: (O, C, kh, kw) -> (N, O, H', W') with
    H' = floor((H + 2*ph - kh)/sh) + 1 and zero padding. The batch is
    processed one sample at a time so a sample's output never depends on
    what else sits in the batch.
    """
    x = np.asarray(x, dtype=DTYPE)
    w = np.asarray(w, dtype=DTYPE)
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input/weight, got {x.shape}, {w.shape}")
    n, c, h, wid = x.shape
    o, cw, kh, kw = w.shape
    if c != cw:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape} vs weight {w.shape}")
    sh, sw = stride
    ph, pw = padding
    oh, ow = _conv_out_size(h, wid, kh, kw, sh, sw, ph, pw)

    wflat = w.reshape(o, c * kh * kw)
    out = np.empty((n, o, oh, ow), dtype=DTYPE)
    for i in range(n):
        xp = np.pad(x[i], ((0, 0), (ph, ph), (pw, pw)))
        cols = _im2col(xp, kh, kw, sh, sw, oh, ow)
        out[i] = (cols @ wflat.T).T.reshape(o, oh, ow)
    check_finite(out, "conv2d output")
    return out


def conv2d_backward(x, w, grad_out, stride=(1, 1), padding=(0, 0)):
    """Vector-Jacobian products of :func:`conv2d`.

    Returns (grad_input, grad_weight) for the given upstream gradient.
    """
    x = np.asarray(x, dtype=DTYPE)
    w = np.asarray(w, dtype=DTYPE)
    g = np.asarray(grad_out, dtype=DTYPE)
    n, c, h, wid = x.shape
    o, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    oh, ow = _conv_out_size(h, wid, kh, kw, sh, sw, ph, pw)
    if g.shape != (n, o, oh, ow):
        raise DimensionError(
            f"grad_out shape {g.shape} does not match forward output {(n, o, oh, ow)}")

    wflat = w.reshape(o, c * kh * kw)
    gw = np.zeros((o, c * kh * kw), dtype=DTYPE)
    gx = np.zeros((n, c, h + 2 * ph, wid + 2 * pw), dtype=DTYPE)
    for i in range(n):
        xp = np.pad(x[i], ((0, 0), (ph, ph), (pw, pw)))
        cols = _im2col(xp, kh, kw, sh, sw, oh, ow)
        gi = g[i].reshape(o, oh * ow)
        gw += gi @ cols
        # scatter col gradients back onto the padded input
        dcols = (gi.T @ wflat).reshape(oh, ow, c, kh, kw).transpose(2, 3, 4, 0, 1)
        for a in range(kh):
            for b in range(kw):
                gx[i, :, a:a + sh * oh:sh, b:b + sw * ow:sw] += dcols[:, a, b]
    if ph or pw:
        gx = gx[:, :, ph:ph + h, pw:pw + wid]
    gx = np.ascontiguousarray(gx)
    gw = gw.reshape(o, c, kh, kw)
    check_finite(gx, "conv2d grad_input")
    check_finite(gw, "conv2d grad_weight")
    return gx, gw


# ---------------------------------------------------------------------------
# activations and their derivatives
# ---------------------------------------------------------------------------

def relu(x):
    return np.maximum(x, 0.0)


def relu_deriv(x):
    # subgradient at 0 fixed to 0
    return (np.asarray(x) > 0).astype(DTYPE)


def sigmoid(x):
    # split by sign so exp never overflows
    x = np.asarray(x, dtype=DTYPE)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_deriv(x):
    s = sigmoid(x)
    return s * (1.0 - s)


def tanh(x):
    return np.tanh(x)


def tanh_deriv(x):
    t = np.tanh(x)
    return 1.0 - t * t


def softmax(x, axis=-1):
    """Max-subtracted softmax; outputs sum to 1 along ``axis``."""
    x = np.asarray(x, dtype=DTYPE)
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / np.sum(e, axis=axis, keepdims=True)
    check_finite(out, "softmax output")
    return out


def softmax_backward(y, grad_out, axis=-1):
    """VJP of softmax given its output ``y``."""
    dot = np.sum(grad_out * y, axis=axis, keepdims=True)
    return y * (grad_out - dot)


# ---------------------------------------------------------------------------
# reductions and broadcast elementwise ops
# ---------------------------------------------------------------------------

def reduce_sum(x, axis=None):
    out = np.sum(np.asarray(x, dtype=DTYPE), axis=axis)
    check_finite(out, "sum output")
    return out


def reduce_mean(x, axis=None):
    out = np.mean(np.asarray(x, dtype=DTYPE), axis=axis)
    check_finite(out, "mean output")
    return out


def _broadcast_check(a, b, op):
    try:
        shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")
    return shape


def add(a, b):
    a, b = np.asarray(a, dtype=DTYPE), np.asarray(b, dtype=DTYPE)
    _broadcast_check(a, b, "add")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a + b
    check_finite(out, "add output")
    return out


def sub(a, b):
    a, b = np.asarray(a, dtype=DTYPE), np.asarray(b, dtype=DTYPE)
    _broadcast_check(a, b, "sub")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a - b
    check_finite(out, "sub output")
    return out


def mul(a, b):
    a, b = np.asarray(a, dtype=DTYPE), np.asarray(b, dtype=DTYPE)
    _broadcast_check(a, b, "mul")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a * b
    check_finite(out, "mul output")
    return out
