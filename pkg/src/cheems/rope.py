"""Rotary position encoding.

Feature pairs (x_{2i}, x_{2i+1}) are rotated by the angle p * theta_i for
position p, with theta_i = base_n^{-2(i-1)/d} for i = 1..d/2. Inner
products of two rotated vectors then depend only on their position
offset, which is what lets the same tables serve both the attention Q/K
path and the state-space B/C path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, RangeError, ShapeError
from .tensor import Tensor, _from_op


@dataclass
class RopeTable:
    """Precomputed cos/sin angle tables, [max_positions, head_dim // 2].

    Immutable after construction; tables are float64 masters with cached
    per-dtype casts so one table serves every layer.
    """

    base_n: float
    head_dim: int
    max_positions: int
    cos: np.ndarray
    sin: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    def tables(self, dtype):
        key = np.dtype(dtype).name
        if key not in self._cache:
            self._cache[key] = (self.cos.astype(dtype), self.sin.astype(dtype))
        return self._cache[key]


def rope_thetas(base_n: float, head_dim: int) -> np.ndarray:
    i = np.arange(1, head_dim // 2 + 1, dtype=np.float64)
    return base_n ** (-2.0 * (i - 1.0) / head_dim)


def build_rope_table(base_n: float, head_dim: int, max_positions: int) -> RopeTable:
    """Tabulate cos(p * theta_i), sin(p * theta_i) for p < max_positions."""
    if head_dim < 2 or head_dim % 2 != 0:
        raise ConfigError(f"rope: head_dim must be even and >= 2, got {head_dim}")
    if max_positions < 1:
        raise ConfigError(f"rope: max_positions must be >= 1, got {max_positions}")
    thetas = rope_thetas(base_n, head_dim)
    angles = np.arange(max_positions, dtype=np.float64)[:, None] * thetas[None, :]
    return RopeTable(float(base_n), head_dim, max_positions, np.cos(angles), np.sin(angles))


def apply_rope(x: Tensor, table: RopeTable, positions) -> Tensor:
    """Rotate feature pairs of x [batch, len, heads, head_dim] in place of
    their positions. ``positions`` must have one entry per sequence slot."""
    if x.ndim != 4:
        raise ShapeError(f"apply_rope: expected rank-4 input, got {x.shape}")
    b, l, h, d = x.shape
    if d != table.head_dim:
        raise ShapeError(f"apply_rope: head_dim {d} does not match table ({table.head_dim})")
    pos = np.asarray(positions, dtype=np.int64)
    if pos.shape != (l,):
        raise ShapeError(f"apply_rope: positions shape {pos.shape} vs sequence length {l}")
    if pos.size and (pos.min() < 0 or pos.max() >= table.max_positions):
        raise RangeError(f"apply_rope: position out of table range [0, {table.max_positions})")

    cos_t, sin_t = table.tables(x.dtype)
    cos = cos_t[pos][:, None, :]  # [l, 1, d/2]
    sin = sin_t[pos][:, None, :]

    xe = x.data[..., 0::2]
    xo = x.data[..., 1::2]
    data = np.empty_like(x.data)
    data[..., 0::2] = xe * cos - xo * sin
    data[..., 1::2] = xe * sin + xo * cos

    def bwd(g):
        ge = g[..., 0::2]
        go = g[..., 1::2]
        gx = np.empty_like(g)
        gx[..., 0::2] = ge * cos + go * sin  # transpose of a rotation is its inverse
        gx[..., 1::2] = -ge * sin + go * cos
        return (gx,)

    return _from_op(data, (x,), bwd, "apply_rope")
