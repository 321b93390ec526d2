"""Causal softmax attention with a pluggable value path.

Queries and keys are plain linear projections, rotated by position; the
value tensor comes from an inner function. By default that inner function
is a gated state-space layer (so attention extracts from a selectively
compressed summary of the prefix); configured with a plain W_V projection
the layer reduces exactly to textbook causal attention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .rope import RopeTable, apply_rope
from .seeds import stream
from .ssd import SsdConfig, SsdLayerParams, init_ssd_params, ssd_layer_forward
from .tensor import Tensor


@dataclass
class AttnConfig:
    d_model: int = 256
    n_heads: int = 4
    head_dim: int = 64
    inner_d_state: int = 64
    inner_chunk_len: int = 64
    plain_values: bool = False  # True: V = x W_V (textbook attention)

    @property
    def scale(self) -> float:
        return 1.0 / math.sqrt(self.head_dim)


@dataclass
class AttnLayerParams:
    cfg: AttnConfig
    W_Q: Tensor  # [d_model, n_heads * head_dim]
    W_K: Tensor  # [d_model, n_heads * head_dim]
    W_out: Tensor  # [n_heads * head_dim, d_model]
    inner: Union[SsdLayerParams, Tensor]  # SSD params, or W_V in plain mode

    def named_params(self, prefix: str = "") -> list[tuple[str, Tensor, bool]]:
        out = [
            (prefix + "W_Q", self.W_Q, True),
            (prefix + "W_K", self.W_K, True),
            (prefix + "W_out", self.W_out, True),
        ]
        if isinstance(self.inner, SsdLayerParams):
            out.extend(self.inner.named_params(prefix + "inner."))
        else:
            out.append((prefix + "W_V", self.inner, True))
        return out


def init_attn_params(cfg: AttnConfig, root_seed: int, name: str,
                     dtype=np.float32, out_scale: float = 1.0) -> AttnLayerParams:
    rng = stream(root_seed, "init", name)
    h, hd = cfg.n_heads, cfg.head_dim

    def mat(rows, cols, scale=1.0):
        return Tensor(rng.normal(0.0, 0.02 * scale, size=(rows, cols)), dtype=dtype,
                      requires_grad=True)

    if cfg.plain_values:
        inner: Union[SsdLayerParams, Tensor] = mat(cfg.d_model, h * hd)
    else:
        # the scan output becomes per-head values, so its width is h * hd
        inner_cfg = SsdConfig(d_model=cfg.d_model, n_heads=h, head_dim=hd,
                              d_state=cfg.inner_d_state, chunk_len=cfg.inner_chunk_len,
                              d_out=h * hd)
        inner = init_ssd_params(inner_cfg, "gate_only", root_seed, name + ".inner", dtype=dtype)
    return AttnLayerParams(cfg=cfg, W_Q=mat(cfg.d_model, h * hd),
                           W_K=mat(cfg.d_model, h * hd),
                           W_out=mat(h * hd, cfg.d_model, scale=out_scale),
                           inner=inner)


def causal_mask(l: int, dtype=np.float32) -> Tensor:
    """Additive mask: 0 on and below the diagonal, -inf above."""
    if l < 1:
        raise ShapeError(f"causal_mask: length must be >= 1, got {l}")
    m = np.zeros((l, l), dtype=dtype)
    m[np.triu_indices(l, k=1)] = -np.inf
    return Tensor(m, dtype=dtype)


def attention_forward(x: Tensor, params: AttnLayerParams,
                      rope: Optional[RopeTable] = None) -> Tensor:
    """softmax(scale * Q K^T + mask) @ V, V from the inner function.

    Position enters only through the rotated Q/K; the inner scan runs in
    its bare gated form so position is not injected twice.
    """
    cfg = params.cfg
    b, l, d = x.shape
    if d != cfg.d_model:
        raise ShapeError(f"attention: input width {d} vs configured {cfg.d_model}")
    h, hd = cfg.n_heads, cfg.head_dim

    q = T.reshape(T.matmul(x, params.W_Q), (b, l, h, hd))
    k = T.reshape(T.matmul(x, params.W_K), (b, l, h, hd))
    if rope is not None:
        positions = np.arange(l)
        q = apply_rope(q, rope, positions)
        k = apply_rope(k, rope, positions)

    qt = T.transpose(q, (0, 2, 1, 3))                       # [b, h, l, hd]
    kt = T.transpose(k, (0, 2, 3, 1))                       # [b, h, hd, l]
    attn = T.causal_softmax(T.matmul(qt, kt), cfg.scale)    # [b, h, l, l]

    if isinstance(params.inner, SsdLayerParams):
        v_flat = ssd_layer_forward(x, params.inner, "gate_only")
    else:
        v_flat = T.matmul(x, params.inner)
    v = T.transpose(T.reshape(v_flat, (b, l, h, hd)), (0, 2, 1, 3))

    y = T.matmul(attn, v)                                   # [b, h, l, hd]
    y = T.reshape(T.transpose(y, (0, 2, 1, 3)), (b, l, h * hd))
    return T.matmul(y, params.W_out)


def attention_intermediates(x: Tensor, params: AttnLayerParams,
                            rope: Optional[RopeTable] = None) -> dict[str, np.ndarray]:
    """Post-softmax attention matrix and the inner-function values, for
    test-vector export and inspection."""
    cfg = params.cfg
    b, l, _ = x.shape
    h, hd = cfg.n_heads, cfg.head_dim
    with T.no_grad():
        q = T.reshape(T.matmul(x, params.W_Q), (b, l, h, hd))
        k = T.reshape(T.matmul(x, params.W_K), (b, l, h, hd))
        if rope is not None:
            positions = np.arange(l)
            q = apply_rope(q, rope, positions)
            k = apply_rope(k, rope, positions)
        qt = T.transpose(q, (0, 2, 1, 3))
        kt = T.transpose(k, (0, 2, 3, 1))
        scores = T.mul(T.matmul(qt, kt), cfg.scale)
        upper = np.triu(np.ones((l, l), dtype=bool), k=1)
        attn = T.softmax_lastdim(T.masked_fill(scores, upper, float("-inf")))
        if isinstance(params.inner, SsdLayerParams):
            v_flat = ssd_layer_forward(x, params.inner, "gate_only")
        else:
            v_flat = T.matmul(x, params.inner)
    return {"attention": attn.data, "values": v_flat.data}
