"""JSON test-vector export for cross-implementation verification.

Each case carries named input tensors, the expected outputs computed by
this package in float64, and a tolerance. The file format is plain JSON:
tensors are {"shape": [...], "data": [flat row-major numbers]}, which
round-trips IEEE doubles exactly through any standards-compliant parser.
"""

from __future__ import annotations

import json
import math
import os

import numpy as np

from . import tensor as T
from .attention import AttnConfig, attention_forward, init_attn_params
from .cdmmoe import CdmmoeConfig, cdmmoe_forward, init_cdmmoe_params
from .rope import apply_rope, build_rope_table
from .seeds import stream
from .ssd import ssd_chunked
from .tensor import Tensor

VECTOR_VERSION = 1
VECTOR_KINDS = ("rope", "ssd", "attention", "cdmmoe")


def tensor_json(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape), "data": [float(v) for v in np.asarray(arr, dtype=np.float64).reshape(-1)]}


def _case(name, kind, inputs, expected, params=None, tolerance=1e-5):
    return {
        "name": name,
        "kind": kind,
        "tolerance": tolerance,
        "params": params or {},
        "inputs": {k: tensor_json(v) for k, v in inputs.items()},
        "expected": {k: tensor_json(v) for k, v in expected.items()},
    }


def _rope_case(rng, i: int) -> dict:
    l = int(rng.integers(2, 12))
    h = int(rng.integers(1, 3))
    d = 2 * int(rng.integers(1, 5))
    base_n = float(rng.choice([10.0, 100.0, 10000.0]))
    x = Tensor(rng.normal(size=(1, l, h, d)), dtype=np.float64)
    positions = np.arange(l) if i % 2 == 0 else np.sort(rng.integers(0, 64, size=l))
    table = build_rope_table(base_n, d, 64)
    with T.no_grad():
        y = apply_rope(x, table, positions)
    return _case(f"rope_{i:03d}", "rope",
                 {"x": x.data, "positions": positions.astype(np.float64)},
                 {"y": y.data}, params={"base_n": base_n})


def _ssd_case(rng, i: int) -> dict:
    l = int(rng.integers(3, 17))
    h = int(rng.integers(1, 3))
    p = int(rng.integers(1, 5))
    s = int(rng.integers(1, 5))
    chunk = int(rng.choice([1, 2, 4, l]))
    x = Tensor(rng.normal(size=(1, l, h, p)), dtype=np.float64)
    B = Tensor(rng.normal(size=(1, l, h, s)), dtype=np.float64)
    C = Tensor(rng.normal(size=(1, l, h, s)), dtype=np.float64)
    a = Tensor(rng.uniform(0.05, 1.0, size=(1, l, h)), dtype=np.float64)
    with T.no_grad():
        y = ssd_chunked(x, B, C, a, chunk)
    return _case(f"ssd_{i:03d}", "ssd",
                 {"x": x.data, "B": B.data, "C": C.data, "a": a.data},
                 {"y": y.data}, params={"chunk_len": chunk})


def _attention_case(rng, i: int) -> dict:
    l = int(rng.integers(2, 12))
    h = int(rng.integers(1, 3))
    hd = int(rng.integers(2, 9))
    scale = 1.0 / math.sqrt(hd)
    q = Tensor(rng.normal(size=(1, h, l, hd)), dtype=np.float64)
    k = Tensor(rng.normal(size=(1, h, l, hd)), dtype=np.float64)
    v = Tensor(rng.normal(size=(1, h, l, hd)), dtype=np.float64)
    upper = np.triu(np.ones((l, l), dtype=bool), k=1)
    with T.no_grad():
        scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), scale)
        attn = T.softmax_lastdim(T.masked_fill(scores, upper, float("-inf")))
        y = T.matmul(attn, v)
    return _case(f"attention_{i:03d}", "attention",
                 {"q": q.data, "k": k.data, "v": v.data},
                 {"y": y.data, "attn": attn.data}, params={"scale": scale})


def _cdmmoe_case(rng, i: int) -> dict:
    n = int(rng.choice([16, 64]))
    cfg = CdmmoeConfig(d_model=int(rng.integers(3, 9)), d_shared=int(rng.integers(4, 13)),
                       d_private=int(rng.integers(3, 9)), n_experts=n,
                       top_k=int(rng.integers(1, min(9, n + 1))),
                       d_query=2 * int(rng.integers(2, 7)))
    params = init_cdmmoe_params(cfg, int(rng.integers(0, 2 ** 31)), f"case{i}", dtype=np.float64)
    x = Tensor(rng.normal(size=(1, int(rng.integers(2, 6)), cfg.d_model)), dtype=np.float64)
    with T.no_grad():
        y = cdmmoe_forward(x, params)
    inputs = {"x": x.data, "W_s": params.W_s.data, "V_s": params.V_s.data,
              "W2_s": params.W2_s.data, "W_in": params.W_in.data,
              "W_query": params.W_query.data, "key1": params.key1.data,
              "key2": params.key2.data, "expert_w": params.expert_w.data,
              "expert_v": params.expert_v.data, "expert_u": params.expert_u.data}
    return _case(f"cdmmoe_{i:03d}", "cdmmoe", inputs, {"y": y.data},
                 params={"top_k": cfg.top_k})


_BUILDERS = {"rope": _rope_case, "ssd": _ssd_case,
             "attention": _attention_case, "cdmmoe": _cdmmoe_case}


def build_vector_cases(seed: int, per_kind: int = 20, kinds=VECTOR_KINDS) -> list[dict]:
    cases = []
    for kind in kinds:
        for i in range(per_kind):
            rng = stream(seed, "vectors", kind, str(i))
            cases.append(_BUILDERS[kind](rng, i))
    return cases


def export_vectors(path: str, seed: int = 0, per_kind: int = 20) -> int:
    """Write the vector file; returns the number of cases."""
    cases = build_vector_cases(seed, per_kind)
    doc = {"version": VECTOR_VERSION, "seed": seed, "cases": cases}
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(doc, f)
    os.replace(tmp, path)
    return len(cases)
