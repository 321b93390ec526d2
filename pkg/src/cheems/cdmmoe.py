"""Cross-domain mixture with product-key expert retrieval.

Every token first runs through one shared gated MLP (the cross-domain
path, where common knowledge lives), then through top-k of N tiny
experts. An expert is a (w, v, u) vector triple: its activation is the
scalar (x w) * silu(x v) and its output is that scalar times u. Retrieval
scores decompose over two sub-key tables of sqrt(N) rows each, so finding
the top-k best of N combinations never scores all N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .seeds import stream
from .tensor import Tensor


@dataclass
class CdmmoeConfig:
    d_model: int = 256
    d_shared: int = 512
    d_private: int = 128
    n_experts: int = 4096
    top_k: int = 16
    d_query: int = 128

    def __post_init__(self):
        r = math.isqrt(self.n_experts)
        if r * r != self.n_experts:
            raise ConfigError(f"n_experts must be a perfect square, got {self.n_experts}")
        if self.d_query % 2 != 0:
            raise ConfigError(f"d_query must be even, got {self.d_query}")
        if self.top_k > self.n_experts:
            raise ConfigError(f"top_k {self.top_k} exceeds n_experts {self.n_experts}")
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")

    @property
    def n_sub_keys(self) -> int:
        return math.isqrt(self.n_experts)


@dataclass
class CdmmoeParams:
    cfg: CdmmoeConfig
    W_s: Tensor   # [d_model, d_shared]
    V_s: Tensor   # [d_model, d_shared]
    W2_s: Tensor  # [d_shared, d_model], shared residual path
    W_in: Tensor  # [d_shared, d_private]
    W_query: Tensor  # [d_private, d_query]
    key1: Tensor  # [sqrt(N), d_query/2]
    key2: Tensor  # [sqrt(N), d_query/2]
    expert_w: Tensor  # [N, d_private]
    expert_v: Tensor  # [N, d_private]
    expert_u: Tensor  # [N, d_model]

    def named_params(self, prefix: str = "") -> list[tuple[str, Tensor, bool]]:
        return [
            (prefix + "W_s", self.W_s, True),
            (prefix + "V_s", self.V_s, True),
            (prefix + "W2_s", self.W2_s, True),
            (prefix + "W_in", self.W_in, True),
            (prefix + "W_query", self.W_query, True),
            (prefix + "key1", self.key1, True),
            (prefix + "key2", self.key2, True),
            (prefix + "expert_w", self.expert_w, True),
            (prefix + "expert_v", self.expert_v, True),
            (prefix + "expert_u", self.expert_u, True),
        ]


def init_cdmmoe_params(cfg: CdmmoeConfig, root_seed: int, name: str,
                       dtype=np.float32, out_scale: float = 1.0) -> CdmmoeParams:
    rng = stream(root_seed, "init", name)

    def mat(rows, cols, scale=1.0):
        return Tensor(rng.normal(0.0, 0.02 * scale, size=(rows, cols)), dtype=dtype,
                      requires_grad=True)

    r, half = cfg.n_sub_keys, cfg.d_query // 2
    return CdmmoeParams(
        cfg=cfg,
        W_s=mat(cfg.d_model, cfg.d_shared),
        V_s=mat(cfg.d_model, cfg.d_shared),
        W2_s=mat(cfg.d_shared, cfg.d_model, scale=out_scale),
        W_in=mat(cfg.d_shared, cfg.d_private),
        W_query=mat(cfg.d_private, cfg.d_query),
        key1=mat(r, half),
        key2=mat(r, half),
        expert_w=mat(cfg.n_experts, cfg.d_private),
        expert_v=mat(cfg.n_experts, cfg.d_private),
        expert_u=mat(cfg.n_experts, cfg.d_model, scale=out_scale),
    )


def cross_domain(x: Tensor, params: CdmmoeParams) -> Tensor:
    """Shared gated value (x W_s) * silu(x V_s), width d_shared."""
    return T.mul(T.matmul(x, params.W_s), T.silu(T.matmul(x, params.V_s)))


def _half_topk(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries along the last axis, ties to the
    lowest index, returned in ascending index order."""
    order = np.argsort(-scores, axis=-1, kind="stable")[..., :k]
    return np.sort(order, axis=-1)


def retrieve_experts(q, params: CdmmoeParams) -> tuple[np.ndarray, np.ndarray]:
    """Top-k experts by s1[i1] + s2[i2] over all N sub-key combinations.

    ``q``: [..., d_query] array or Tensor (values only; the differentiable
    score path is rebuilt from the returned indices). Returns int indices
    [..., k] and their score sums, both ordered by descending score with
    ties broken toward the lowest combined index i1 * sqrt(N) + i2.

    Only min(k, sqrt(N)) rows per half are scored against each other: for
    additive scores the global top-k is always contained in the product of
    the per-half top-k candidate sets.
    """
    cfg = params.cfg
    qv = q.data if isinstance(q, Tensor) else np.asarray(q)
    if qv.shape[-1] != cfg.d_query:
        raise ShapeError(f"retrieve_experts: query width {qv.shape[-1]} vs d_query {cfg.d_query}")
    half = cfg.d_query // 2
    r = cfg.n_sub_keys
    s1 = qv[..., :half] @ params.key1.data.T  # [..., r]
    s2 = qv[..., half:] @ params.key2.data.T

    kh = min(cfg.top_k, r)
    c1 = _half_topk(s1, kh)  # ascending index order
    c2 = _half_topk(s2, kh)
    sums = (np.take_along_axis(s1, c1, -1)[..., :, None]
            + np.take_along_axis(s2, c2, -1)[..., None, :])      # [..., kh, kh]
    combos = c1[..., :, None] * r + c2[..., None, :]
    flat_sums = sums.reshape(*sums.shape[:-2], kh * kh)
    flat_combos = combos.reshape(*combos.shape[:-2], kh * kh)
    # candidates are already in ascending combined-index order, so a stable
    # sort on -score realizes the lowest-index tie break
    order = np.argsort(-flat_sums, axis=-1, kind="stable")[..., :cfg.top_k]
    return (np.take_along_axis(flat_combos, order, -1),
            np.take_along_axis(flat_sums, order, -1))


def cdmmoe_forward(x: Tensor, params: CdmmoeParams, usage: np.ndarray | None = None) -> Tensor:
    """Shared residual plus the softmax-weighted sum of retrieved experts.

    ``usage``, when given, accumulates per-expert hit counts in place."""
    cfg = params.cfg
    b, l, d = x.shape
    if d != cfg.d_model:
        raise ShapeError(f"cdmmoe: input width {d} vs configured {cfg.d_model}")

    gated = cross_domain(x, params)                          # [b, l, d_shared]
    x_p = T.matmul(gated, params.W_in)                       # [b, l, d_private]
    q = T.matmul(x_p, params.W_query)                        # [b, l, d_query]
    idx, _ = retrieve_experts(q, params)                     # [b, l, k]
    if usage is not None:
        usage += np.bincount(idx.reshape(-1), minlength=cfg.n_experts)
    k, dp, dm = cfg.top_k, cfg.d_private, cfg.d_model

    # differentiable scores of the retrieved set; both key halves gathered
    # in one lookup (i2 rows offset into the stacked table)
    half = cfg.d_query // 2
    r = cfg.n_sub_keys
    i1, i2 = idx // r, idx % r
    key_all = T.concat([params.key1, params.key2], axis=0)
    krows = T.embedding(key_all, np.concatenate([i1, i2 + r], axis=-1))  # [b, l, 2k, half]
    q1 = T.reshape(T.narrow(q, 2, 0, half), (b, l, 1, half))
    q2 = T.reshape(T.narrow(q, 2, half, half), (b, l, 1, half))
    scores = T.add(T.tsum(T.mul(T.narrow(krows, 2, 0, k), q1), axis=-1),
                   T.tsum(T.mul(T.narrow(krows, 2, k, k), q2), axis=-1))  # [b, l, k]
    gates = T.softmax_lastdim(scores)

    # single gather over the stacked (w | v | u) expert table
    wvu = T.embedding(T.concat([params.expert_w, params.expert_v, params.expert_u], axis=1),
                      idx)                                                 # [b, l, k, 2dp+dm]
    xp4 = T.reshape(x_p, (b, l, 1, dp))
    act_w = T.tsum(T.mul(T.narrow(wvu, 3, 0, dp), xp4), axis=-1)           # [b, l, k]
    act_v = T.tsum(T.mul(T.narrow(wvu, 3, dp, dp), xp4), axis=-1)
    weights = T.mul(gates, T.mul(act_w, T.silu(act_v)))                    # [b, l, k]

    u = T.narrow(wvu, 3, 2 * dp, dm)                                       # [b, l, k, d_model]
    expert_sum = T.tsum(T.mul(u, T.reshape(weights, (b, l, k, 1))), axis=2)
    shared = T.matmul(gated, params.W2_s)
    return T.add(expert_sum, shared)


def expert_usage(x: Tensor, params: CdmmoeParams) -> np.ndarray:
    """Hit count per expert id over all tokens of x (for the usage CSV)."""
    with T.no_grad():
        gated = cross_domain(x, params)
        q = T.matmul(T.matmul(gated, params.W_in), params.W_query)
    idx, _ = retrieve_experts(q, params)
    return np.bincount(idx.reshape(-1), minlength=params.cfg.n_experts)


def count_params(cfg: CdmmoeConfig) -> tuple[int, dict[str, int]]:
    """Closed-form parameter totals per component, plus the total for a
    dense reference layout (4 gated-MLP experts over the same shared and
    private widths) for parity comparison."""
    m, s, p = cfg.d_model, cfg.d_shared, cfg.d_private
    shared = 3 * m * s
    retrieval = s * p + p * cfg.d_query + cfg.n_sub_keys * cfg.d_query
    experts = cfg.n_experts * (2 * p + m)
    total = shared + retrieval + experts
    dense_reference = shared + 4 * (3 * s * p)
    return total, {
        "shared_path": shared,
        "retrieval": retrieval,
        "expert_tables": experts,
        "total": total,
        "dense_reference_4_experts": dense_reference,
    }
