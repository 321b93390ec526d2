"""Selective gated state-space layer, computable two ways.

The layer's sequence mixer is the 1-semiseparable quadratic form
``Y = (L o C B^T) X`` with ``L[i, j] = a_{j+1} * ... * a_i`` (i >= j, zero
above the diagonal), which equals the gated recurrence
``h_t = a_t h_{t-1} + B_t x_t^T, y_t = C_t h_t``. ``ssd_quadratic``
materializes the masked form; ``ssd_chunked`` computes the same values in
time linear in sequence length by running the quadratic form inside
fixed-size chunks and a state recurrence across them.

Positional information enters through one of three switchable sources:
a short causal conv plus a skip term on the input path ("conv_plus_d"),
the cumulative gate products alone ("gate_only"), or rotation of the
B/C projections ("rope").
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .rope import RopeTable, apply_rope
from .seeds import stream
from .tensor import Tensor

POSITIONAL_MODES = ("rope", "gate_only", "conv_plus_d")

NEG_INF = float("-inf")


@dataclass
class SsdConfig:
    d_model: int = 256
    n_heads: int = 4
    head_dim: int = 64
    d_state: int = 64
    chunk_len: int = 64
    conv_width: int = 4
    d_out: Optional[int] = None  # defaults to d_model; inner-function use overrides

    @property
    def out_dim(self) -> int:
        return self.d_out if self.d_out is not None else self.d_model


@dataclass
class SsdLayerParams:
    """Projections and gate parameters for one layer. No bias terms on any
    of the four projection matrices; the only offset is the one inside the
    softplus that keeps the step size positive."""

    cfg: SsdConfig
    W_x: Tensor      # [d_model, n_heads * head_dim]
    W_B: Tensor      # [d_model, n_heads * d_state]
    W_C: Tensor      # [d_model, n_heads * d_state]
    W_delta: Tensor  # [d_model, n_heads]
    b_delta: Tensor  # [n_heads]
    A_log: Tensor    # [n_heads], log of per-head decay-rate magnitude
    W_out: Tensor    # [n_heads * head_dim, out_dim]
    conv_kernel: Optional[Tensor] = None  # [n_heads * head_dim, conv_width], conv_plus_d only
    D: Optional[Tensor] = None            # [n_heads] skip scale, conv_plus_d only

    def named_params(self, prefix: str = "") -> list[tuple[str, Tensor, bool]]:
        out = [
            (prefix + "W_x", self.W_x, True),
            (prefix + "W_B", self.W_B, True),
            (prefix + "W_C", self.W_C, True),
            (prefix + "W_delta", self.W_delta, True),
            (prefix + "b_delta", self.b_delta, False),
            (prefix + "A_log", self.A_log, False),
            (prefix + "W_out", self.W_out, True),
        ]
        if self.conv_kernel is not None:
            out.append((prefix + "conv_kernel", self.conv_kernel, True))
        if self.D is not None:
            out.append((prefix + "D", self.D, False))
        return out


def _log_spaced(lo: float, hi: float, n: int) -> np.ndarray:
    if n == 1:
        return np.array([math.sqrt(lo * hi)])
    return np.exp(np.linspace(math.log(lo), math.log(hi), n))


def init_ssd_params(cfg: SsdConfig, mode: str, root_seed: int, name: str,
                    dtype=np.float32, out_scale: float = 1.0) -> SsdLayerParams:
    """Deterministic init from the named seed stream.

    Matrices are normal(0, 0.02); the residual output projection is
    additionally shrunk by ``out_scale`` (the model passes 1/sqrt(2 *
    sublayers) so a deep stack does not drown the embedding signal at
    init). Decay magnitudes exp(A_log) cover [1, 16] on a log-spaced grid
    over heads, paired with step sizes whose softplus offsets land on the
    log grid of [1e-3, 1e-1]: every layer then starts with one near-local
    head (gate ~0.2) and one long-memory head (gate ~0.999) instead of
    hoping a random draw provides them.
    """
    if mode not in POSITIONAL_MODES:
        raise ConfigError(f"unknown positional mode {mode!r}, expected one of {POSITIONAL_MODES}")
    if mode == "rope" and cfg.d_state % 2 != 0:
        raise ConfigError(f"rope positional mode needs even d_state, got {cfg.d_state}")
    h, p, s = cfg.n_heads, cfg.head_dim, cfg.d_state
    rng = stream(root_seed, "init", name)

    def mat(rows, cols, scale=1.0):
        return Tensor(rng.normal(0.0, 0.02 * scale, size=(rows, cols)), dtype=dtype,
                      requires_grad=True)

    A_log = np.log(_log_spaced(1.0, 16.0, h))
    dt = _log_spaced(1e-3, 1e-1, h)
    b_delta = np.log(np.expm1(dt))  # softplus(b_delta) == dt

    params = SsdLayerParams(
        cfg=cfg,
        W_x=mat(cfg.d_model, h * p),
        W_B=mat(cfg.d_model, h * s),
        W_C=mat(cfg.d_model, h * s),
        W_delta=mat(cfg.d_model, h),
        b_delta=Tensor(b_delta, dtype=dtype, requires_grad=True),
        A_log=Tensor(A_log, dtype=dtype, requires_grad=True),
        W_out=mat(h * p, cfg.out_dim, scale=out_scale),
    )
    if mode == "conv_plus_d":
        params.conv_kernel = mat(h * p, cfg.conv_width)
        params.D = Tensor(np.ones(h), dtype=dtype, requires_grad=True)
    return params


# ---- core forms ---------------------------------------------------------


def segsum(a_log: Tensor) -> Tensor:
    """Segment sums of gate logs: out[..., i, j] = sum_{t=j+1..i} a_log[..., t]
    for i >= j, -inf above the diagonal (the log of the decay mask L)."""
    l = a_log.shape[-1]
    cs = T.cumsum(a_log, axis=-1)
    row = T.reshape(cs, (*cs.shape, 1))
    col = T.reshape(cs, (*cs.shape[:-1], 1, l))
    diff = T.sub(row, col)
    upper = np.triu(np.ones((l, l), dtype=bool), k=1)
    return T.masked_fill(diff, upper, NEG_INF)


def _check_gates(a: Tensor) -> None:
    if np.any(a.data <= 0) or np.any(a.data > 1):
        raise ContractError("ssd: gates a must lie in (0, 1]")


def ssd_quadratic(x: Tensor, B: Tensor, C: Tensor, a: Tensor) -> Tensor:
    """Materialize M = L o C B^T and multiply: quadratic in sequence length.

    x: [b, l, h, p]; B, C: [b, l, h, s]; a: [b, l, h] with a in (0, 1].
    """
    _check_shapes(x, B, C, a)
    _check_gates(a)
    L = T.decay_mask(T.transpose(T.tlog(a), (0, 2, 1)))        # [b, h, l, l]
    Ct = T.transpose(C, (0, 2, 1, 3))                          # [b, h, l, s]
    Bt = T.transpose(B, (0, 2, 3, 1))                          # [b, h, s, l]
    M = T.mul(T.matmul(Ct, Bt), L)                             # [b, h, l, l]
    Y = T.matmul(M, T.transpose(x, (0, 2, 1, 3)))              # [b, h, l, p]
    return T.transpose(Y, (0, 2, 1, 3))


def ssd_chunked(x: Tensor, B: Tensor, C: Tensor, a: Tensor, chunk_len: int) -> Tensor:
    """Same values as :func:`ssd_quadratic`, linear time for fixed chunk_len.

    Within each chunk the masked quadratic form runs as-is; a summary
    state [b, h, s, p] carries the recurrence across chunk boundaries.
    """
    _check_shapes(x, B, C, a)
    _check_gates(a)
    if chunk_len < 1:
        raise ContractError(f"ssd_chunked: chunk_len must be >= 1, got {chunk_len}")
    b, l, h, p = x.shape
    s = B.shape[-1]
    q = min(chunk_len, l)
    n_chunks = -(-l // q)
    pad = n_chunks * q - l
    if pad:
        x = T.concat([x, Tensor(np.zeros((b, pad, h, p)), dtype=x.dtype)], axis=1)
        B = T.concat([B, Tensor(np.zeros((b, pad, h, s)), dtype=B.dtype)], axis=1)
        C = T.concat([C, Tensor(np.zeros((b, pad, h, s)), dtype=C.dtype)], axis=1)
        a = T.concat([a, Tensor(np.ones((b, pad, h)), dtype=a.dtype)], axis=1)

    state = Tensor(np.zeros((b, h, s, p)), dtype=x.dtype)
    outs = []
    for c in range(n_chunks):
        xc = T.transpose(T.narrow(x, 1, c * q, q), (0, 2, 1, 3))   # [b, h, q, p]
        Bc = T.transpose(T.narrow(B, 1, c * q, q), (0, 2, 1, 3))   # [b, h, q, s]
        Cc = T.transpose(T.narrow(C, 1, c * q, q), (0, 2, 1, 3))   # [b, h, q, s]
        la = T.transpose(T.tlog(T.narrow(a, 1, c * q, q)), (0, 2, 1))  # [b, h, q]
        cs = T.cumsum(la, axis=-1)                                 # sum_{start..t}
        total = T.narrow(cs, 2, q - 1, 1)                          # [b, h, 1]

        # intra-chunk masked quadratic form
        L = T.decay_mask(la)
        y = T.matmul(T.mul(T.matmul(Cc, T.transpose(Bc, (0, 1, 3, 2))), L), xc)

        # contribution of the state entering this chunk
        decay_in = T.reshape(T.texp(cs), (b, h, q, 1))             # prod_{start..t}
        y = T.add(y, T.matmul(T.mul(Cc, decay_in), state))

        # summary state for the next chunk
        decay_out = T.reshape(T.texp(T.sub(total, cs)), (b, h, 1, q))  # prod_{t+1..end}
        new_state = T.matmul(T.mul(T.transpose(Bc, (0, 1, 3, 2)), decay_out), xc)
        carry = T.reshape(T.texp(total), (b, h, 1, 1))
        state = T.add(T.mul(state, carry), new_state)

        outs.append(T.transpose(y, (0, 2, 1, 3)))

    out = outs[0] if len(outs) == 1 else T.concat(outs, axis=1)
    return T.narrow(out, 1, 0, l) if pad else out


def _check_shapes(x: Tensor, B: Tensor, C: Tensor, a: Tensor) -> None:
    if x.ndim != 4 or B.ndim != 4 or C.ndim != 4 or a.ndim != 3:
        raise ShapeError(f"ssd: ranks must be x:4 B:4 C:4 a:3, got {x.shape}, {B.shape}, {C.shape}, {a.shape}")
    if B.shape != C.shape or x.shape[:3] != B.shape[:3] or a.shape != x.shape[:3]:
        raise ShapeError(f"ssd: extents disagree: x {x.shape}, B {B.shape}, C {C.shape}, a {a.shape}")


# ---- full layer ----------------------------------------------------------


def ssd_layer_forward(x: Tensor, params: SsdLayerParams, mode: str,
                      rope: Optional[RopeTable] = None,
                      intermediates: Optional[dict] = None) -> Tensor:
    """Project, apply the selected positional source, scan, project out.

    In conv_plus_d mode the input path runs through a silu-activated
    causal depthwise conv and a per-head skip D (x) x is added to the scan
    output. In rope mode the B and C projections are rotated over the full
    d_state. gate_only leaves both off. Passing an ``intermediates`` dict
    captures the named B, C, a and Y arrays for export.
    """
    if mode not in POSITIONAL_MODES:
        raise ConfigError(f"unknown positional mode {mode!r}")
    cfg = params.cfg
    b, l, _ = x.shape
    h, p, s = cfg.n_heads, cfg.head_dim, cfg.d_state

    xh_flat = T.matmul(x, params.W_x)                     # [b, l, h*p]
    if mode == "conv_plus_d":
        xh_flat = T.silu(T.causal_depthwise_conv(xh_flat, params.conv_kernel))
    xh = T.reshape(xh_flat, (b, l, h, p))

    B = T.reshape(T.matmul(x, params.W_B), (b, l, h, s))
    C = T.reshape(T.matmul(x, params.W_C), (b, l, h, s))
    delta = T.softplus(T.add(T.matmul(x, params.W_delta), params.b_delta))  # [b, l, h]
    a = T.texp(T.neg(T.mul(delta, T.texp(params.A_log))))

    if mode == "rope":
        if s % 2 != 0:
            raise ConfigError(f"rope positional mode needs even d_state, got {s}")
        if rope is None:
            raise ConfigError("rope positional mode needs a RopeTable")
        positions = np.arange(l)
        B = apply_rope(B, rope, positions)
        C = apply_rope(C, rope, positions)

    y = ssd_chunked(xh, B, C, a, cfg.chunk_len)
    if intermediates is not None:
        intermediates.update({"B": B.data, "C": C.data, "a": a.data, "Y": y.data})
    if mode == "conv_plus_d":
        y = T.add(y, T.mul(xh, T.reshape(params.D, (1, 1, h, 1))))
    return T.matmul(T.reshape(y, (b, l, h * p)), params.W_out)
