"""Differentiable operations over :class:`Tensor`.

Every op computes its value with numpy and registers a backward rule through
:func:`make_output`.  Gradients are plain float64 arrays.
"""
from __future__ import annotations

import numpy as np

from ..errors import ContractError, DimensionError
from .tensor import Tensor, make_output


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise arithmetic --------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_output(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_output(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_output(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return make_output(
        out, (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)), "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_output(-a.data, (a,), lambda g: (-g,), "neg")


def detach(a: Tensor) -> Tensor:
    """Same values, no gradient path back to ``a``."""
    return Tensor(a.data)


# -- linear algebra ----------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product of 2-D operands; backward accumulates aᵀ·g and g·bᵀ."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects matrices, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")

    def back(g):
        return (g @ b.data.T if a.requires_grad else None, a.data.T @ g if b.requires_grad else None)

    return make_output(a.data @ b.data, (a, b), back, "matmul")


def bmm(a, b) -> Tensor:
    """Batched matmul over the leading axis: [B,M,K] x [B,K,N] -> [B,M,N]."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise DimensionError(f"bmm shape mismatch: {a.shape} x {b.shape}")

    def back(g):
        return (g @ b.data.transpose(0, 2, 1) if a.requires_grad else None,
                a.data.transpose(0, 2, 1) @ g if b.requires_grad else None)

    return make_output(a.data @ b.data, (a, b), back, "bmm")


# -- reductions and shape ----------------------------------------------

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_output(np.asarray(out, dtype=np.float64), (a,), back, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return make_output(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inverse = None if axes is None else tuple(np.argsort(axes))
    return make_output(
        np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return make_output(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
        lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def getitem(a, key) -> Tensor:
    a = as_tensor(a)

    def back(g):
        z = np.zeros_like(a.data)
        np.add.at(z, key, g)
        return (z,)

    return make_output(np.array(a.data[key], dtype=np.float64), (a,), back, "getitem")


def scatter_rows(index: np.ndarray, values: np.ndarray, num_rows: int) -> np.ndarray:
    """out[i] = sum of ``values[j]`` over j with ``index[j] == i``; [num_rows, ...]."""
    out = np.zeros((num_rows,) + values.shape[1:])
    if len(index) == 0:
        return out
    order = np.argsort(index, kind="stable")
    sorted_idx = index[order]
    starts = np.flatnonzero(np.r_[True, sorted_idx[1:] != sorted_idx[:-1]])
    out[sorted_idx[starts]] = np.add.reduceat(values[order], starts, axis=0)
    return out


def take(a, index) -> Tensor:
    """Gather rows ``a[index]`` along axis 0; ``index`` may be any int array."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)

    def back(g):
        return (scatter_rows(index.reshape(-1), g.reshape((-1,) + a.shape[1:]), a.shape[0]),)

    return make_output(a.data[index], (a,), back, "take")


def segment_sum(a, segment_ids, num_segments: int) -> Tensor:
    """Scatter-add rows of ``a`` into ``num_segments`` buckets."""
    a = as_tensor(a)
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    out = scatter_rows(segment_ids, a.data, num_segments)
    return make_output(out, (a,), lambda g: (g[segment_ids],), "segment_sum")


# -- pointwise nonlinearities ------------------------------------------

def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_output(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_output(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_output(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return make_output(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return make_output(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    scale = np.where(a.data > 0, 1.0, slope)
    return make_output(a.data * scale, (a,), lambda g: (g * scale,), "leaky_relu")


def cos(a) -> Tensor:
    a = as_tensor(a)
    return make_output(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), "cos")


# -- normalizations and losses -----------------------------------------

def softmax_rows(x) -> Tensor:
    """Softmax over the last axis, stabilized by the row max."""
    x = as_tensor(x)
    z = np.exp(x.data - x.data.max(axis=-1, keepdims=True))
    out = z / z.sum(axis=-1, keepdims=True)

    def back(g):
        return ((g - (g * out).sum(axis=-1, keepdims=True)) * out,)

    return make_output(out, (x,), back, "softmax_rows")


def log_softmax_rows(x) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return make_output(
        out, (x,), lambda g: (g - soft * g.sum(axis=-1, keepdims=True),), "log_softmax_rows")


def masked_softmax_rows(x, mask) -> Tensor:
    """Softmax over the entries of each row where ``mask`` is true.

    Masked entries get probability exactly 0; a row with no true entry is
    all zeros.  Masked logits never materialize as -inf.
    """
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise DimensionError(f"mask shape {mask.shape} != logits shape {x.shape}")
    filled = np.where(mask, x.data, -np.inf)
    row_max = filled.max(axis=-1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    z = np.where(mask, np.exp(np.where(mask, x.data, 0.0) - row_max), 0.0)
    denom = z.sum(axis=-1, keepdims=True)
    out = z / np.where(denom > 0, denom, 1.0)

    def back(g):
        return ((g - (g * out).sum(axis=-1, keepdims=True)) * out,)

    return make_output(out, (x,), back, "masked_softmax_rows")


def segment_softmax(scores, segment_ids, num_segments: int) -> Tensor:
    """Softmax of ``scores`` rows within each segment, per trailing column.

    ``scores`` is [E, H]; rows sharing a segment id are normalized together,
    independently for every column.
    """
    scores = as_tensor(scores)
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    tail = scores.shape[1:]
    seg_max = np.full((num_segments,) + tail, -np.inf)
    np.maximum.at(seg_max, segment_ids, scores.data)
    z = np.exp(scores.data - seg_max[segment_ids])
    denom = scatter_rows(segment_ids, z, num_segments)
    out = z / denom[segment_ids]

    def back(g):
        gy = g * out
        seg = scatter_rows(segment_ids, gy, num_segments)
        return (gy - out * seg[segment_ids],)

    return make_output(out, (scores,), back, "segment_softmax")


def cross_entropy_logits(logits, target) -> Tensor:
    """-log softmax(logits)[target] with log-sum-exp stabilization.

    A vector of logits with an int target gives a scalar; a [B, N] matrix
    with B targets gives the batch mean.
    """
    logits = as_tensor(logits)
    single = logits.ndim == 1
    x = logits.data.reshape(1, -1) if single else logits.data
    tgt = np.atleast_1d(np.asarray(target, dtype=np.int64))
    n = x.shape[1]
    if tgt.shape[0] != x.shape[0]:
        raise DimensionError(f"{tgt.shape[0]} targets for {x.shape[0]} rows")
    if np.any(tgt < 0) or np.any(tgt >= n):
        raise IndexError(f"target out of range [0, {n})")
    rows = np.arange(x.shape[0])
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    losses = lse - shifted[rows, tgt]
    soft = np.exp(shifted - lse[:, None])

    def back(g):
        grad = soft.copy()
        grad[rows, tgt] -= 1.0
        grad *= g / x.shape[0]
        return (grad.reshape(logits.shape),)

    return make_output(np.asarray(losses.mean()), (logits,), back, "cross_entropy_logits")


# -- convolution and recurrent cell ------------------------------------

def conv2d_3x3(x, kernels, bias=None) -> Tensor:
    """Zero-padded (padding 1) 3x3 cross-correlation.

    ``x`` is [Cin, H, W] or batched [B, Cin, H, W]; ``kernels`` is
    [Cout, Cin, 3, 3].  Output keeps the spatial shape.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    if kernels.ndim != 4 or kernels.shape[2:] != (3, 3):
        raise DimensionError(f"kernels must be [Cout, Cin, 3, 3], got {kernels.shape}")
    single = x.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4 or xd.shape[1] != kernels.shape[1]:
        raise DimensionError(f"input {x.shape} does not match kernels {kernels.shape}")
    _, _, h, w = xd.shape
    padded = np.pad(xd, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.stack(
        [np.stack([padded[:, :, i:i + h, j:j + w] for j in range(3)], axis=2) for i in range(3)],
        axis=2)  # [B, Cin, 3, 3, H, W]
    out = np.einsum("bcijhw,ocij->bohw", cols, kernels.data, optimize=True)
    parents = [x, kernels]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None, None]
        parents.append(bias)

    def back(g):
        gb = g[None] if single else g
        gk = np.einsum("bohw,bcijhw->ocij", gb, cols, optimize=True)
        gcols = np.einsum("bohw,ocij->bcijhw", gb, kernels.data, optimize=True)
        gpad = np.zeros_like(padded)
        for i in range(3):
            for j in range(3):
                gpad[:, :, i:i + h, j:j + w] += gcols[:, :, i, j]
        gx = gpad[:, :, 1:-1, 1:-1]
        grads = [gx[0] if single else gx, gk]
        if bias is not None:
            grads.append(gb.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return make_output(out[0] if single else out, tuple(parents), back, "conv2d_3x3")


def lstm_cell(x, h_prev, c_prev, w_x, w_h, b):
    """One LSTM step with gate blocks ordered (input, forget, cell, output).

    ``w_x`` is [D, 4H], ``w_h`` is [H, 4H], ``b`` is [4H].  Works on single
    vectors or on [B, D] batches; returns ``(h, c)``.
    """
    x, h_prev, c_prev = as_tensor(x), as_tensor(h_prev), as_tensor(c_prev)
    single = x.ndim == 1
    if single:
        x, h_prev, c_prev = (reshape(t, (1, -1)) for t in (x, h_prev, c_prev))
    hid = h_prev.shape[1]
    if w_x.shape != (x.shape[1], 4 * hid) or w_h.shape != (hid, 4 * hid) or b.shape != (4 * hid,):
        raise DimensionError(
            f"lstm weights {w_x.shape}, {w_h.shape}, {b.shape} do not fit x={x.shape} h={h_prev.shape}")
    if c_prev.shape != h_prev.shape:
        raise DimensionError(f"cell state {c_prev.shape} != hidden state {h_prev.shape}")
    gates = matmul(x, w_x) + matmul(h_prev, w_h) + b
    i = sigmoid(gates[:, :hid])
    f = sigmoid(gates[:, hid:2 * hid])
    g = tanh(gates[:, 2 * hid:3 * hid])
    o = sigmoid(gates[:, 3 * hid:])
    c = f * c_prev + i * g
    h = o * tanh(c)
    if single:
        return reshape(h, (hid,)), reshape(c, (hid,))
    return h, c


def check_scalar(t: Tensor) -> None:
    if t.size != 1:
        raise ContractError(f"expected a scalar tensor, got shape {t.shape}")
