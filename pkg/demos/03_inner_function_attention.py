"""Attention whose values come from a state-space scan.

With a plain linear value projection the layer IS textbook causal
attention (checked against a nested-loop implementation). Swapping the
value path for a gated scan keeps the attention matrix but lets every
value summarize its whole prefix.
"""

import numpy as np

from cheems import AttnConfig, Tensor, attention_forward
from cheems.attention import attention_intermediates, init_attn_params
from cheems.reference import causal_attention
from cheems.rope import apply_rope, build_rope_table
from cheems import tensor as T

rng = np.random.default_rng(3)
rope = build_rope_table(10000.0, 4, 32)
x = Tensor(rng.normal(size=(1, 10, 8)), dtype=np.float64)

# 1. plain mode reduces to the textbook algorithm
cfg = AttnConfig(d_model=8, n_heads=2, head_dim=4, plain_values=True)
params = init_attn_params(cfg, 0, "demo_plain", dtype=np.float64)
y = attention_forward(x, params, rope).data
pos = np.arange(10)
q = apply_rope(T.reshape(T.matmul(x, params.W_Q), (1, 10, 2, 4)), rope, pos).data
k = apply_rope(T.reshape(T.matmul(x, params.W_K), (1, 10, 2, 4)), rope, pos).data
v = T.reshape(T.matmul(x, params.inner), (1, 10, 2, 4)).data
textbook = causal_attention(q, k, v, cfg.scale).reshape(1, 10, 8) @ params.W_out.data
print(f"plain mode vs nested-loop attention: max abs diff {np.max(np.abs(y - textbook)):.2e}")

# 2. inner-function mode: the value tensor is a scan over the prefix
cfg = AttnConfig(d_model=8, n_heads=2, head_dim=4, inner_d_state=4, inner_chunk_len=8)
params = init_attn_params(cfg, 1, "demo_inner", dtype=np.float64)
inter = attention_intermediates(x, params, rope)
attn = inter["attention"]
print(f"\nattention rows sum to one: max |sum - 1| = {np.max(np.abs(attn.sum(-1) - 1)):.2e}")
print("rows of head 0 (note the causal support):")
for t in (0, 4, 9):
    print(f"  t={t}: {np.round(attn[0, 0, t, :t + 1], 3)}")
