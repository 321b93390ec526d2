"""Built-in invariant suite behind the ``selftest`` subcommand.

Fast, seeded versions of the package's core guarantees: the two scan
forms agree with the step recurrence, rotations preserve norms and only
relative position, every layer is causal and differentiable, product-key
retrieval equals exhaustive search, the schedule and optimizer match
their closed forms, and builds are bit-deterministic. The pytest suite
runs these same checks (plus slower ones) through its own oracles.
"""

from __future__ import annotations

import traceback
from dataclasses import dataclass

import numpy as np

from . import reference, tensor as T
from .attention import AttnConfig, attention_forward, init_attn_params
from .cdmmoe import CdmmoeConfig, cdmmoe_forward, init_cdmmoe_params, retrieve_experts
from .gradcheck import fd_gradcheck
from .harness import AdamWConfig, Schedule, adamw_step_scalar, lr_at
from .model import ModelConfig, build_model
from .rope import apply_rope, build_rope_table
from .seeds import stream
from .ssd import SsdConfig, init_ssd_params, ssd_chunked, ssd_layer_forward, ssd_quadratic
from .tensor import Tensor


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str = ""


def _rand_ssd_inputs(rng, b=1, l=16, h=2, p=3, s=3):
    x = Tensor(rng.normal(size=(b, l, h, p)), dtype=np.float64)
    B = Tensor(rng.normal(size=(b, l, h, s)), dtype=np.float64)
    C = Tensor(rng.normal(size=(b, l, h, s)), dtype=np.float64)
    a = Tensor(rng.uniform(0.05, 1.0, size=(b, l, h)), dtype=np.float64)
    return x, B, C, a


def check_duality():
    for trial in range(6):
        rng = stream(trial, "selftest", "duality")
        l = int(rng.choice([8, 32]))
        x, B, C, a = _rand_ssd_inputs(rng, l=l)
        with T.no_grad():
            yq = ssd_quadratic(x, B, C, a).data
            rec = reference.ssd_recurrence(x.data, B.data, C.data, a.data)
            for chunk in (1, 4, l):
                yc = ssd_chunked(x, B, C, a, chunk).data
                assert np.max(np.abs(yc - yq)) < 1e-10, f"chunk {chunk} vs quadratic"
                assert np.max(np.abs(yc - rec)) < 1e-10, f"chunk {chunk} vs recurrence"


def check_rope():
    table = build_rope_table(10000.0, 8, 64)
    assert np.all(table.cos[0] == 1.0) and np.all(table.sin[0] == 0.0)
    rng = stream(0, "selftest", "rope")
    x = Tensor(rng.normal(size=(1, 32, 1, 8)), dtype=np.float64)
    with T.no_grad():
        y = apply_rope(x, table, np.arange(32))
        # per-pair norm preservation
        n0 = np.hypot(x.data[..., 0::2], x.data[..., 1::2])
        n1 = np.hypot(y.data[..., 0::2], y.data[..., 1::2])
        assert np.max(np.abs(n0 - n1)) < 1e-6
        # inner products depend only on the position offset
        q = Tensor(rng.normal(size=(1, 1, 1, 8)), dtype=np.float64)
        k = Tensor(rng.normal(size=(1, 1, 1, 8)), dtype=np.float64)
        dots = {}
        for i in range(0, 32, 5):
            for j in range(0, 32, 5):
                qi = apply_rope(q, table, [i]).data.reshape(-1)
                kj = apply_rope(k, table, [j]).data.reshape(-1)
                dots.setdefault(i - j, []).append(float(qi @ kj))
        for off, vals in dots.items():
            assert max(vals) - min(vals) < 1e-5, f"offset {off} not invariant"


def check_causality():
    rng = stream(0, "selftest", "causality")
    cfg = SsdConfig(d_model=8, n_heads=2, head_dim=3, d_state=4, chunk_len=4)
    rope = build_rope_table(10000.0, cfg.d_state, 64)
    for mode in ("gate_only", "rope", "conv_plus_d"):
        params = init_ssd_params(cfg, mode, 1, f"causal_{mode}", dtype=np.float64)
        x = rng.normal(size=(1, 16, 8))
        with T.no_grad():
            base = ssd_layer_forward(Tensor(x, dtype=np.float64), params, mode, rope).data
        for t in (1, 7, 15):
            xp = x.copy()
            xp[0, t] += 1.0
            with T.no_grad():
                out = ssd_layer_forward(Tensor(xp, dtype=np.float64), params, mode, rope).data
            assert np.max(np.abs(out[0, :t] - base[0, :t])) == 0.0, f"{mode} leaks at t={t}"


def check_gradients():
    rng = stream(0, "selftest", "grad")
    cfg = SsdConfig(d_model=6, n_heads=2, head_dim=2, d_state=2, chunk_len=3)
    params = init_ssd_params(cfg, "gate_only", 2, "grad_ssd", dtype=np.float64)
    x0 = rng.normal(size=(1, 7, 6))

    def f(inp):
        return T.tsum(ssd_layer_forward(inp["x"], params, "gate_only"))

    fd_gradcheck(f, {"x": Tensor(x0, dtype=np.float64)}, max_coords_per_tensor=12)

    acfg = AttnConfig(d_model=6, n_heads=2, head_dim=2, inner_d_state=2, inner_chunk_len=3)
    aparams = init_attn_params(acfg, 3, "grad_attn", dtype=np.float64)
    rope = build_rope_table(10000.0, 2, 16)

    def g(inp):
        return T.tsum(attention_forward(inp["x"], aparams, rope))

    fd_gradcheck(g, {"x": Tensor(rng.normal(size=(1, 6, 6)), dtype=np.float64)},
                 max_coords_per_tensor=12)


def check_product_key():
    for n in (16, 256):
        rng = stream(n, "selftest", "pk")
        cfg = CdmmoeConfig(d_model=4, d_shared=4, d_private=4, n_experts=n,
                           top_k=4, d_query=8)
        params = init_cdmmoe_params(cfg, n, "pk", dtype=np.float64)
        q = rng.normal(size=(cfg.d_query,))
        idx, scores = retrieve_experts(q, params)
        oidx, oscores = reference.exhaustive_product_key_topk(
            q, params.key1.data, params.key2.data, cfg.top_k)
        assert np.array_equal(idx, oidx), f"N={n}: index sets differ"
        assert np.max(np.abs(scores - oscores)) < 1e-12


def check_inner_fn_reduction():
    rng = stream(0, "selftest", "reduction")
    cfg = AttnConfig(d_model=8, n_heads=2, head_dim=4, plain_values=True)
    params = init_attn_params(cfg, 4, "reduction", dtype=np.float64)
    x = Tensor(rng.normal(size=(1, 9, 8)), dtype=np.float64)
    rope = build_rope_table(10000.0, 4, 16)
    with T.no_grad():
        y = attention_forward(x, params, rope).data
        q = apply_rope(T.reshape(T.matmul(x, params.W_Q), (1, 9, 2, 4)), rope, np.arange(9)).data
        k = apply_rope(T.reshape(T.matmul(x, params.W_K), (1, 9, 2, 4)), rope, np.arange(9)).data
        v = T.reshape(T.matmul(x, params.inner), (1, 9, 2, 4)).data
    ref = reference.causal_attention(q, k, v, cfg.scale)
    ref_out = ref.reshape(1, 9, 8) @ params.W_out.data
    assert np.max(np.abs(y - ref_out)) < 1e-10


def check_schedule_optimizer():
    sched = Schedule(total_steps=1000)
    assert lr_at(0, sched) == 0.0
    assert lr_at(100, sched) == 2e-4
    assert abs(lr_at(1000, sched) - 2e-5) < 1e-20
    assert abs(lr_at(550, sched) - 1.1e-4) < 1e-12
    p, m, v = adamw_step_scalar(1.0, 1.0, 0.0, 0.0, 1, 1e-3, AdamWConfig())
    assert abs(p - (1.0 - 1e-3 / (1.0 + 1e-6))) < 1e-15


def check_determinism():
    cfg = ModelConfig(vocab_size=16, d_model=8, n_cheems_blocks=1, n_heads=2,
                      head_dim=4, d_state=4, chunk_len=8, d_shared=8, d_private=4,
                      n_experts=16, top_k=2, d_query=4, max_positions=32, seed=11)
    tokens = stream(5, "selftest", "det").integers(0, 16, size=(2, 8))
    with T.no_grad():
        l1 = build_model(cfg).forward(tokens).data
        l2 = build_model(cfg).forward(tokens).data
    assert np.array_equal(l1, l2), "same seed must give bit-identical logits"


def check_tensor_props():
    rng = stream(0, "selftest", "tensor")
    x = Tensor(rng.normal(size=(4, 5)), dtype=np.float64)
    with T.no_grad():
        s1 = T.softmax_lastdim(x).data
        s2 = T.softmax_lastdim(T.add(x, 3.7)).data
        assert np.max(np.abs(s1 - s2)) < 1e-6
        a = Tensor(rng.normal(size=(3, 4)), dtype=np.float64)
        b = Tensor(rng.normal(size=(4, 5)), dtype=np.float64)
        c = Tensor(rng.normal(size=(5, 2)), dtype=np.float64)
        left = T.matmul(T.matmul(a, b), c).data
        right = T.matmul(a, T.matmul(b, c)).data
        assert np.max(np.abs(left - right)) < 1e-10
        y = T.transpose(T.transpose(x, (1, 0)), (1, 0)).data
        assert np.array_equal(x.data, y)


CHECKS = [
    ("duality", check_duality),
    ("rope", check_rope),
    ("causality", check_causality),
    ("gradients", check_gradients),
    ("product_key", check_product_key),
    ("inner_fn_reduction", check_inner_fn_reduction),
    ("schedule_optimizer", check_schedule_optimizer),
    ("determinism", check_determinism),
    ("tensor_props", check_tensor_props),
]


def run_selftest(verbose: bool = True) -> list[CheckResult]:
    results = []
    for name, fn in CHECKS:
        try:
            fn()
            results.append(CheckResult(name, True))
        except Exception as e:  # report, never crash the suite
            detail = f"{type(e).__name__}: {e}\n{traceback.format_exc(limit=3)}"
            results.append(CheckResult(name, False, detail))
        if verbose:
            r = results[-1]
            print(f"[{'PASS' if r.ok else 'FAIL'}] {name}" + ("" if r.ok else f"\n{r.detail}"))
    return results
