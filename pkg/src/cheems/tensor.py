"""Dense-tensor arithmetic with reverse-mode differentiation.

A ``Tensor`` wraps a C-contiguous numpy array (float32 for training,
float64 for gradient checks and oracles) plus an optional gradient buffer.
Ops on tensors that require grad record their parents and a backward
closure; ``backward(loss)`` walks the resulting DAG once in reverse
topological order. There is no global tape: the graph hangs off the
tensors themselves, so independent model instances share no mutable state.

Forward ops validate that finite inputs produce finite outputs; a NaN/Inf
is raised as :class:`NonFiniteError`, never propagated silently. The few
ops that produce -inf by design (mask building, log-mask arithmetic) are
exempt at their call site.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, NonFiniteError, ShapeError

float32 = np.float32
float64 = np.float64

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def _finite_checks_enabled() -> bool:
    return getattr(_state, "finite_checks", True)


class no_grad:
    """Context manager: ops inside record no graph (eval / benchmarking)."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class no_finite_checks:
    """Context manager: skip NaN/Inf screening (hot benchmark loops only)."""

    def __enter__(self):
        self._prev = _finite_checks_enabled()
        _state.finite_checks = False
        return self

    def __exit__(self, *exc):
        _state.finite_checks = self._prev
        return False


def _check_finite(data: np.ndarray, op: str) -> None:
    if not _finite_checks_enabled():
        return
    # single-pass screen: NaN/Inf survive summation; values here are O(1)
    # so a finite array cannot overflow the accumulator
    if not np.isfinite(data.sum()):
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(f"{op} produced non-finite values")


class Tensor:
    """N-dimensional array of 32/64-bit reals with an optional grad slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        # ascontiguousarray would promote 0-d scalars to 1-d
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._bwd: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    # ---- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    # ---- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, pow_scalar(other, -1.0))
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return pow_scalar(self, p)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, *axes):
        return transpose(self, axes[0] if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def _from_op(data: np.ndarray, parents: Sequence[Tensor], bwd, op: str, check_finite: bool = True) -> Tensor:
    if check_finite:
        _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data if data.flags.c_contiguous else np.ascontiguousarray(data)
    out.grad = None
    out._parents = ()
    out._bwd = None
    out.requires_grad = _grad_enabled() and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._bwd = bwd
    return out


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _same_dtype(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"{op}: dtype mismatch {a.data.dtype} vs {b.data.dtype}")


# ---- broadcasting ------------------------------------------------------
#
# Allowed forms only: identical shapes; one shape a trailing suffix of the
# other (leading batch dims broadcast); same rank with size-1 axes (the
# keepdims pattern). Anything else needs an explicit expand().


def _broadcast_ok(sa: tuple[int, ...], sb: tuple[int, ...]) -> bool:
    if sa == sb:
        return True
    if len(sa) == len(sb):
        return all(x == y or x == 1 or y == 1 for x, y in zip(sa, sb))
    short, long = (sa, sb) if len(sa) < len(sb) else (sb, sa)
    return short == long[len(long) - len(short):]


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _binary(a: Tensor, b, op_name: str, fwd, da, db) -> Tensor:
    b = _as_tensor(b, a)
    _same_dtype(a, b, op_name)
    if not _broadcast_ok(a.shape, b.shape):
        raise ShapeError(f"{op_name}: shapes {a.shape} and {b.shape} do not align "
                         "(only leading-batch or size-1-axis broadcasting is supported)")
    data = fwd(a.data, b.data)

    def bwd(g):
        return (_unbroadcast(da(g, a.data, b.data), a.shape),
                _unbroadcast(db(g, a.data, b.data), b.shape))

    return _from_op(data, (a, b), bwd, op_name)


# ---- elementwise -------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    return _binary(a, b, "add", lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g)


def sub(a: Tensor, b) -> Tensor:
    return _binary(a, b, "sub", lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g)


def mul(a: Tensor, b) -> Tensor:
    return _binary(a, b, "mul", lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def neg(a: Tensor) -> Tensor:
    return _from_op(-a.data, (a,), lambda g: (-g,), "neg")


def pow_scalar(a: Tensor, p: float) -> Tensor:
    p = float(p)
    data = a.data ** p

    def bwd(g):
        return (g * p * a.data ** (p - 1.0),)

    return _from_op(data, (a,), bwd, "pow")


def texp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow becomes NonFiniteError below
        data = np.exp(a.data)
    return _from_op(data, (a,), lambda g: (g * data,), "exp")


def tlog(a: Tensor) -> Tensor:
    data = np.log(a.data)
    return _from_op(data, (a,), lambda g: (g / a.data,), "log")


def _sigmoid_arr(x: np.ndarray) -> np.ndarray:
    # tanh form: stable in both tails, one ufunc pass
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    data = _sigmoid_arr(a.data)
    return _from_op(data, (a,), lambda g: (g * data * (1.0 - data),), "sigmoid")


def silu(a: Tensor) -> Tensor:
    x = a.data
    s = _sigmoid_arr(x)
    data = x * s

    def bwd(g):
        return (g * (s * (1.0 + x * (1.0 - s))),)

    return _from_op(data, (a,), bwd, "silu")


def softplus(a: Tensor) -> Tensor:
    x = a.data
    data = np.logaddexp(np.asarray(0.0, dtype=x.dtype), x)

    def bwd(g):
        return (g * _sigmoid_arr(x),)

    return _from_op(data, (a,), bwd, "softplus")


# ---- reductions and scans ---------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(a.data.dtype),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _from_op(np.asarray(data), (a,), bwd, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.shape[ax] for ax in axis]))
    else:
        n = a.shape[axis]
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def cumsum(a: Tensor, axis: int) -> Tensor:
    data = np.cumsum(a.data, axis=axis)

    def bwd(g):
        rev = np.flip(g, axis=axis)
        return (np.flip(np.cumsum(rev, axis=axis), axis=axis),)

    return _from_op(data, (a,), bwd, "cumsum")


# ---- shape manipulation ------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        data = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: {a.shape} -> {shape}: {e}") from None

    def bwd(g):
        return (g.reshape(a.shape),)

    return _from_op(data, (a,), bwd, "reshape", check_finite=False)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    data = np.ascontiguousarray(a.data.transpose(axes))
    inv = tuple(np.argsort(axes))

    def bwd(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return _from_op(data, (a,), bwd, "transpose", check_finite=False)


def expand(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if not _broadcast_ok(a.shape, shape):
        raise ShapeError(f"expand: {a.shape} -> {shape}")
    data = np.broadcast_to(a.data, shape).copy()

    def bwd(g):
        return (_unbroadcast(g, a.shape),)

    return _from_op(data, (a,), bwd, "expand", check_finite=False)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(np.ascontiguousarray(np.take(g, range(offsets[i], offsets[i + 1]), axis=axis))
                     for i in range(len(tensors)))

    return _from_op(data, tensors, bwd, "concat", check_finite=False)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    if start < 0 or start + length > a.shape[axis]:
        raise ShapeError(f"narrow: [{start}:{start + length}] out of axis {axis} extent {a.shape[axis]}")
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    data = np.ascontiguousarray(a.data[tuple(idx)])

    def bwd(g):
        full = np.zeros(a.shape, dtype=a.data.dtype)
        full[tuple(idx)] = g
        return (full,)

    return _from_op(data, (a,), bwd, "narrow", check_finite=False)


def split(a: Tensor, n_sections: int, axis: int) -> list[Tensor]:
    extent = a.shape[axis]
    if extent % n_sections != 0:
        raise ShapeError(f"split: axis {axis} extent {extent} not divisible into {n_sections}")
    step = extent // n_sections
    return [narrow(a, axis, i * step, step) for i in range(n_sections)]


# ---- matmul ------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b, "matmul")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must have rank >= 2, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} x {b.shape}")
    batch_a, batch_b = a.shape[:-2], b.shape[:-2]
    if batch_a != batch_b and batch_a != () and batch_b != ():
        raise ShapeError(f"matmul: batch extents differ, {a.shape} x {b.shape}")
    data = a.data @ b.data

    def bwd(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _from_op(data, (a, b), bwd, "matmul")


# ---- masking and softmax ----------------------------------------------


def masked_fill(a: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Set ``a[mask] = value``. ``mask`` broadcasts like a binary op operand."""
    mask = np.asarray(mask, dtype=bool)
    if not _broadcast_ok(a.shape, mask.shape):
        raise ShapeError(f"masked_fill: mask {mask.shape} does not align with {a.shape}")
    data = np.where(mask, np.asarray(value, dtype=a.data.dtype), a.data)

    def bwd(g):
        return (np.where(mask, 0.0, g).astype(g.dtype),)

    # -inf fills are legitimate here (pre-softmax masking)
    return _from_op(data, (a,), bwd, "masked_fill", check_finite=False)


def softmax_lastdim(x: Tensor) -> Tensor:
    """Row-stable softmax over the last axis. Rows may contain -inf (masked)."""
    if x.ndim < 1 or x.shape[-1] < 1:
        raise ShapeError(f"softmax_lastdim: empty last dimension in shape {x.shape}")
    z = x.data
    m = np.max(z, axis=-1, keepdims=True)
    # fully-masked rows would give -inf max; keep the shift finite
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(z - m)
    denom = e.sum(axis=-1, keepdims=True)
    data = e / denom

    def bwd(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        return ((g - dot) * data,)

    return _from_op(data, (x,), bwd, "softmax")


def causal_softmax(x: Tensor, scale: float = 1.0) -> Tensor:
    """softmax(scale * x) over the last axis with the strictly-upper
    triangle of the trailing two axes masked out. One fused op: equivalent
    to mul + masked_fill(-inf) + softmax_lastdim."""
    if x.ndim < 2 or x.shape[-1] != x.shape[-2]:
        raise ShapeError(f"causal_softmax: trailing axes must be square, got {x.shape}")
    l = x.shape[-1]
    tril = np.tril(np.ones((l, l), dtype=bool))
    z = np.where(tril, x.data * np.asarray(scale, x.data.dtype), -np.inf)
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    data = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        return (((g - dot) * data) * np.asarray(scale, g.dtype),)

    return _from_op(data, (x,), bwd, "causal_softmax")


def decay_mask(gate_logs: Tensor) -> Tensor:
    """L[..., i, j] = exp(sum_{t=j+1..i} gate_logs[..., t]) for i >= j,
    zero above the diagonal. Fused form of exp(segsum(.)) with the -inf
    masking handled internally."""
    l = gate_logs.shape[-1]
    cs = np.cumsum(gate_logs.data, axis=-1)
    tril = np.tril(np.ones((l, l), dtype=bool))
    s = np.where(tril, cs[..., :, None] - cs[..., None, :], 0.0)
    data = np.exp(s) * tril

    def bwd(g):
        gs = g * data  # zero above the diagonal already
        gcs = gs.sum(axis=-1) - gs.sum(axis=-2)
        rev = np.flip(gcs, axis=-1)
        return (np.flip(np.cumsum(rev, axis=-1), axis=-1),)

    return _from_op(data, (gate_logs,), bwd, "decay_mask")


def rmsnorm(x: Tensor, weight: Tensor, eps: float) -> Tensor:
    """y = x / sqrt(mean(x^2) + eps) * weight, normalizing the last axis."""
    if weight.shape != (x.shape[-1],):
        raise ShapeError(f"rmsnorm: weight {weight.shape} vs last extent {x.shape[-1]}")
    if eps < 0:
        raise ContractError("rmsnorm: eps must be >= 0")
    xd = x.data
    d = xd.shape[-1]
    inv = 1.0 / np.sqrt(np.mean(np.square(xd), axis=-1, keepdims=True) + np.asarray(eps, xd.dtype))
    xn = xd * inv
    data = xn * weight.data

    def bwd(g):
        gw_side = g * weight.data
        gx = inv * (gw_side - xn * np.mean(gw_side * xn, axis=-1, keepdims=True))
        gw = np.einsum("nd,nd->d", g.reshape(-1, d), xn.reshape(-1, d))
        return (gx, gw)

    return _from_op(data, (x, weight), bwd, "rmsnorm")


# ---- integer-indexed ops ----------------------------------------------


def _as_index(ids) -> np.ndarray:
    ids = ids.data if isinstance(ids, Tensor) else np.asarray(ids)
    return ids.astype(np.int64, copy=False)


def _scatter_add_rows(n_rows: int, idx_flat: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Sum ``rows`` into a fresh [n_rows, width] table by index.

    Small tables go through a one-hot gemm (fastest by far); large ones
    through sort + reduceat to keep memory bounded.
    """
    if idx_flat.size == 0:
        return np.zeros((n_rows, rows.shape[1]), dtype=rows.dtype)
    if idx_flat.size * n_rows <= 16_000_000:
        onehot = np.zeros((idx_flat.size, n_rows), dtype=rows.dtype)
        onehot[np.arange(idx_flat.size), idx_flat] = 1.0
        return onehot.T @ rows
    out = np.zeros((n_rows, rows.shape[1]), dtype=rows.dtype)
    order = np.argsort(idx_flat, kind="stable")
    sidx = idx_flat[order]
    srows = rows[order]
    starts = np.flatnonzero(np.concatenate(([True], sidx[1:] != sidx[:-1])))
    out[sidx[starts]] = np.add.reduceat(srows, starts, axis=0)
    return out


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup: out[..., :] = table[ids[...], :]; grads scatter-add into rows."""
    idx = _as_index(ids)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(f"embedding: index out of range for table with {table.shape[0]} rows")
    data = table.data[idx]

    def bwd(g):
        return (_scatter_add_rows(table.shape[0], idx.reshape(-1),
                                  g.reshape(-1, table.shape[-1])),)

    return _from_op(data, (table,), bwd, "embedding")


def cross_entropy_with_logits(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean token-level cross entropy over masked-in positions.

    ``logits``: [..., vocab]; ``targets``: int array of the leading shape;
    ``mask``: optional bool array, True where the position contributes.
    """
    tgt = _as_index(targets)
    if tgt.shape != logits.shape[:-1]:
        raise ShapeError(f"cross_entropy: targets {tgt.shape} vs logits {logits.shape}")
    if mask is None:
        m = np.ones(tgt.shape, dtype=bool)
    else:
        m = np.asarray(mask, dtype=bool)
        if m.shape != tgt.shape:
            raise ShapeError(f"cross_entropy: mask {m.shape} vs targets {tgt.shape}")
    n = int(m.sum())
    if n == 0:
        raise ContractError("cross_entropy: mask selects no positions")
    z = logits.data
    zmax = z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z - zmax).sum(axis=-1)) + zmax[..., 0]
    picked = np.take_along_axis(z, tgt[..., None], axis=-1)[..., 0]
    losses = lse - picked
    data = np.asarray((losses * m).sum() / n, dtype=z.dtype)

    def bwd(g):
        p = np.exp(z - zmax)
        p /= p.sum(axis=-1, keepdims=True)
        pf = p.reshape(-1, z.shape[-1])
        pf[np.arange(pf.shape[0]), tgt.reshape(-1)] -= 1.0
        p *= (m / n)[..., None]
        return (p * g,)

    return _from_op(data, (logits,), bwd, "cross_entropy")


def causal_depthwise_conv(x: Tensor, weight: Tensor) -> Tensor:
    """Left-padded depthwise conv along axis 1: x [b, l, c], weight [c, k]."""
    if x.ndim != 3 or weight.ndim != 2 or x.shape[2] != weight.shape[0]:
        raise ShapeError(f"causal_depthwise_conv: x {x.shape} vs weight {weight.shape}")
    b, l, c = x.shape
    k = weight.shape[1]
    xp = np.concatenate([np.zeros((b, k - 1, c), dtype=x.data.dtype), x.data], axis=1)
    data = np.zeros((b, l, c), dtype=x.data.dtype)
    for j in range(k):
        data += xp[:, j:j + l, :] * weight.data[:, j]

    def bwd(g):
        gx_p = np.zeros_like(xp)
        gw = np.zeros_like(weight.data)
        for j in range(k):
            gx_p[:, j:j + l, :] += g * weight.data[:, j]
            gw[:, j] = (g * xp[:, j:j + l, :]).sum(axis=(0, 1))
        return (gx_p[:, k - 1:, :], gw)

    return _from_op(data, (x, weight), bwd, "causal_depthwise_conv")


# ---- backward ----------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every reachable tensor with d(loss)/d(tensor).

    The graph below ``loss`` is consumed: a second backward through the
    same ops raises because the recorded closures have been dropped.
    """
    if loss.shape not in ((), (1,)):
        raise ContractError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward: loss does not require grad (no reachable leaves?)")

    # iterative post-order over parents, deterministic in recorded order
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    owned: set[int] = set()  # grads we allocated ourselves, safe for +=
    for node in reversed(topo):
        if node._bwd is None or node.grad is None:
            continue
        grads = node._bwd(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            g = np.asarray(g, dtype=parent.data.dtype).reshape(parent.shape)
            if parent.grad is None:
                # first contribution aliases the producer's buffer; a later
                # one must copy before mutating
                parent.grad = g
            elif id(parent) in owned:
                parent.grad += g
            else:
                parent.grad = parent.grad + g
                owned.add(id(parent))
        node._parents = ()
        node._bwd = None
