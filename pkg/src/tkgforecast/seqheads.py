"""Fixed-length sequence heads: [|hx|, d] history -> [d] future embedding.

All heads take batched input [B, L, d] (a single [L, d] sequence is also
accepted) ordered oldest first, so position L-1 is the current embedding.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .numcore import Tensor, glorot, zeros
from .numcore.ops import bmm, conv2d_3x3, lstm_cell, matmul, relu, softmax_rows


class SeqHeadKind(str, enum.Enum):
    SATT = "satt"
    CONV = "conv"
    MLP = "mlp"
    LSTM = "lstm"


@dataclass(frozen=True)
class SeqHeadConfig:
    satt_layers: int = 2
    satt_heads: int = 4
    conv_channels: int = 8
    mlp_hidden: int = 400
    mlp_layers: int = 2


class SequenceHead:
    def __init__(self, kind, length: int, dim: int, config: SeqHeadConfig | None = None,
                 rng: np.random.Generator | None = None):
        self.kind = SeqHeadKind(kind)
        self.length = length
        self.dim = dim
        self.config = cfg = config or SeqHeadConfig()
        rng = rng or np.random.default_rng(0)
        L, d = length, dim
        p: dict[str, Tensor] = {}
        if self.kind is SeqHeadKind.SATT:
            if d % cfg.satt_heads:
                raise DimensionError(f"dim {d} not divisible by {cfg.satt_heads} heads")
            p["pos"] = glorot(rng, (L, d), "pos")
            for layer in range(cfg.satt_layers):
                for w in ("wq", "wk", "wv", "wo"):
                    p[f"{w}.{layer}"] = glorot(rng, (d, d), f"{w}.{layer}")
        elif self.kind is SeqHeadKind.CONV:
            p["kernels"] = glorot(rng, (cfg.conv_channels, 1, 3, 3), "kernels")
            p["conv_bias"] = zeros((cfg.conv_channels,), "conv_bias")
        elif self.kind is SeqHeadKind.MLP:
            width = L * d
            for layer in range(cfg.mlp_layers):
                out = d if layer == cfg.mlp_layers - 1 else cfg.mlp_hidden
                p[f"w.{layer}"] = glorot(rng, (width, out), f"w.{layer}")
                p[f"b.{layer}"] = zeros((out,), f"b.{layer}")
                width = out
        else:
            p["w_x"] = glorot(rng, (d, 4 * d), "w_x")
            p["w_h"] = glorot(rng, (d, 4 * d), "w_h")
            bias = np.zeros(4 * d)
            bias[d:2 * d] = 1.0  # forget-gate bias
            p["b"] = Tensor(bias, requires_grad=True, name="b")
        if self.kind is not SeqHeadKind.MLP:
            flat_in = cfg.conv_channels * L * d if self.kind is SeqHeadKind.CONV else d
            p["w_out"] = glorot(rng, (flat_in, d), "w_out")
            p["b_out"] = zeros((d,), "b_out")
        self.params = p

    def __call__(self, seq: Tensor) -> Tensor:
        return predict_future(seq, self)


def _batched(seq: Tensor, head: SequenceHead):
    seq = seq if isinstance(seq, Tensor) else Tensor(seq)
    single = seq.ndim == 2
    if single:
        seq = seq.reshape(1, *seq.shape)
    if seq.ndim != 3 or seq.shape[1:] != (head.length, head.dim):
        raise DimensionError(f"expected [B, {head.length}, {head.dim}] history, got {seq.shape}")
    return seq, single


def predict_future(seq: Tensor, head: SequenceHead) -> Tensor:
    """Dispatch to the head's variant; returns [B, d] (or [d] for one sequence)."""
    seq, single = _batched(seq, head)
    if head.kind is SeqHeadKind.SATT:
        out = satt_forward(seq, head.params, head.config.satt_heads)
    elif head.kind is SeqHeadKind.CONV:
        out = conv_forward(seq, head.params)
    elif head.kind is SeqHeadKind.MLP:
        out = mlp_forward(seq, head.params)
    else:
        out = lstm_forward(seq, head.params)
    return out.reshape(head.dim) if single else out


def _project(x: Tensor, p) -> Tensor:
    return matmul(x, p["w_out"]) + p["b_out"]


def satt_encode(seq: Tensor, params, heads: int, return_attention: bool = False):
    """Self-attention encoder over [B, L, d] with residual connections.

    Returns the full [B, L, d] representation (and per-layer attention maps
    [B*heads, L, L] when asked).
    """
    b, L, d = seq.shape
    dh = d // heads
    x = seq + params["pos"]
    maps = []
    layer = 0
    while f"wq.{layer}" in params:
        flat = x.reshape(b * L, d)

        def split(w):
            # [B*L, d] -> [B*heads, L, dh]
            return matmul(flat, params[f"{w}.{layer}"]).reshape(b, L, heads, dh).transpose(0, 2, 1, 3) \
                .reshape(b * heads, L, dh)

        q, k, v = split("wq"), split("wk"), split("wv")
        att = softmax_rows(bmm(q, k.transpose(0, 2, 1)) * (1.0 / np.sqrt(dh)))
        maps.append(att)
        mixed = bmm(att, v).reshape(b, heads, L, dh).transpose(0, 2, 1, 3).reshape(b * L, d)
        x = x + matmul(mixed, params[f"wo.{layer}"]).reshape(b, L, d)
        layer += 1
    return (x, maps) if return_attention else x


def satt_forward(seq: Tensor, params, heads: int = 4) -> Tensor:
    """Self-attention encoder, read out at the current (last) position."""
    x = satt_encode(seq, params, heads)
    return _project(x[:, -1, :], params)


def conv_forward(seq: Tensor, params) -> Tensor:
    b, L, d = seq.shape
    fmap = relu(conv2d_3x3(seq.reshape(b, 1, L, d), params["kernels"], params["conv_bias"]))
    return _project(fmap.reshape(b, -1), params)


def mlp_forward(seq: Tensor, params) -> Tensor:
    b, L, d = seq.shape
    x = seq.reshape(b, L * d)
    layer = 0
    while f"w.{layer}" in params:
        if layer:
            x = relu(x)
        x = matmul(x, params[f"w.{layer}"]) + params[f"b.{layer}"]
        layer += 1
    return x


def lstm_forward(seq: Tensor, params) -> Tensor:
    b, L, _ = seq.shape
    hid = params["w_h"].shape[0]
    h = c = Tensor(np.zeros((b, hid)))
    for i in range(L):
        h, c = lstm_cell(seq[:, i, :], h, c, params["w_x"], params["w_h"], params["b"])
    return _project(h, params)

