"""Loop-level reference computations.

These deliberately avoid the tensor engine and the vectorized layer code:
each function recomputes a quantity from its definition with explicit
Python loops over positions/indices, so the fast paths can be checked
against something that cannot share their bugs. Everything here is
forward-only float64 numpy.
"""

from __future__ import annotations

import math

import numpy as np


def matmul_loops(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += float(a[i, t]) * float(b[t, j])
            out[i, j] = acc
    return out


def rope_rotate(x: np.ndarray, base_n: float, positions) -> np.ndarray:
    """Explicit pairwise rotation of x [..., len, d] (any leading axes folded
    by the caller); positions indexed along the second-to-last axis."""
    *lead, l, d = x.shape
    out = np.array(x, dtype=np.float64, copy=True)
    for t in range(l):
        p = int(positions[t])
        for i in range(d // 2):
            theta = base_n ** (-2.0 * i / d)
            ang = p * theta
            c, s = math.cos(ang), math.sin(ang)
            e = out[..., t, 2 * i].copy()
            o = out[..., t, 2 * i + 1].copy()
            out[..., t, 2 * i] = e * c - o * s
            out[..., t, 2 * i + 1] = e * s + o * c
    return out


def ssd_recurrence(x: np.ndarray, B: np.ndarray, C: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Step recurrence h_t = a_t h_{t-1} + B_t x_t^T; y_t = C_t h_t.

    x [b, l, h, p]; B, C [b, l, h, s]; a [b, l, h].
    """
    b, l, h, p = x.shape
    s = B.shape[-1]
    y = np.zeros((b, l, h, p))
    for bi in range(b):
        for hi in range(h):
            state = np.zeros((s, p))
            for t in range(l):
                state = a[bi, t, hi] * state + np.outer(B[bi, t, hi], x[bi, t, hi])
                y[bi, t, hi] = C[bi, t, hi] @ state
    return y


def decay_mask_products(a: np.ndarray) -> np.ndarray:
    """L[i, j] = prod_{t=j+1..i} a_t for i >= j else 0, by nested loops.
    a is a 1-d gate sequence."""
    l = len(a)
    L = np.zeros((l, l))
    for i in range(l):
        for j in range(i + 1):
            prod = 1.0
            for t in range(j + 1, i + 1):
                prod *= float(a[t])
            L[i, j] = prod
    return L


def causal_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, scale: float) -> np.ndarray:
    """Masked softmax attention by per-row loops. q, k [b, l, h, hd]; v [b, l, h, hd]."""
    b, l, h, hd = q.shape
    out = np.zeros((b, l, h, hd))
    for bi in range(b):
        for hi in range(h):
            for i in range(l):
                scores = np.array([float(q[bi, i, hi] @ k[bi, j, hi]) * scale
                                   for j in range(i + 1)])
                scores -= scores.max()
                w = np.exp(scores)
                w /= w.sum()
                acc = np.zeros(hd)
                for j in range(i + 1):
                    acc += w[j] * v[bi, j, hi]
                out[bi, i, hi] = acc
    return out


def exhaustive_product_key_topk(q: np.ndarray, key1: np.ndarray, key2: np.ndarray,
                                top_k: int) -> tuple[np.ndarray, np.ndarray]:
    """Score every (i1, i2) combination of one query vector; ties break to
    the lowest combined index."""
    half = q.shape[-1] // 2
    r = key1.shape[0]
    sums = np.empty(r * r)
    for i1 in range(r):
        s1 = float(q[:half] @ key1[i1])
        for i2 in range(r):
            sums[i1 * r + i2] = s1 + float(q[half:] @ key2[i2])
    order = np.argsort(-sums, kind="stable")[:top_k]
    return order, sums[order]


def _silu(z: np.ndarray | float):
    return z / (1.0 + np.exp(-z))


def cdmmoe_dense(x: np.ndarray, weights: dict[str, np.ndarray], top_k: int) -> np.ndarray:
    """Evaluate the expert mixture densely: every expert scored and
    activated per token, non-retrieved contributions zeroed afterwards.

    x [b, l, d_model]; weights holds W_s, V_s, W2_s, W_in, W_query,
    key1, key2, expert_w, expert_v, expert_u.
    """
    b, l, _ = x.shape
    n, _ = weights["expert_w"].shape
    r = int(math.isqrt(n))
    out = np.zeros_like(x)
    for bi in range(b):
        for t in range(l):
            xv = x[bi, t]
            gated = (xv @ weights["W_s"]) * _silu(xv @ weights["V_s"])
            x_p = gated @ weights["W_in"]
            qv = x_p @ weights["W_query"]
            half = qv.shape[0] // 2
            scores = np.empty(n)
            for e in range(n):
                i1, i2 = e // r, e % r
                scores[e] = float(qv[:half] @ weights["key1"][i1]) + \
                    float(qv[half:] @ weights["key2"][i2])
            chosen = np.argsort(-scores, kind="stable")[:top_k]
            sel = np.exp(scores[chosen] - scores[chosen].max())
            sel /= sel.sum()
            acc = np.zeros_like(xv)
            for g, e in zip(sel, chosen):
                h_e = float(x_p @ weights["expert_w"][e]) * float(_silu(x_p @ weights["expert_v"][e]))
                acc += g * h_e * weights["expert_u"][e]
            out[bi, t] = acc + gated @ weights["W2_s"]
    return out
