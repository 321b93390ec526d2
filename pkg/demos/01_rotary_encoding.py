"""Rotary position encoding, from the angle tables up.

Feature pairs rotate by p * theta_i, so the inner product of two encoded
vectors depends only on how far apart they are -- the property that lets
one table drive both attention scores and state-space interactions.
"""

import numpy as np

from cheems import Tensor, apply_rope, build_rope_table
from cheems.rope import rope_thetas

# Frequencies for an 8-dim head: theta_1 is always 1, the rest fall off
# geometrically with the base.
for base in (100.0, 10000.0):
    print(f"base {base:>7}: thetas = {np.round(rope_thetas(base, 8), 5)}")

table = build_rope_table(10000.0, 8, max_positions=64)
print(f"\nposition 0 is the identity rotation: cos={table.cos[0]}, sin={table.sin[0]}")

# Rotate one vector to a few positions and watch norms stay put.
rng = np.random.default_rng(0)
v = rng.normal(size=(1, 1, 1, 8))
for p in (0, 1, 13, 50):
    out = apply_rope(Tensor(np.repeat(v, 1, axis=1), dtype=np.float64), table, [p])
    print(f"position {p:2d}: norm {np.linalg.norm(out.data):.6f} (original {np.linalg.norm(v):.6f})")

# The headline property: scores depend only on relative offset.
q = Tensor(rng.normal(size=(1, 1, 1, 8)), dtype=np.float64)
k = Tensor(rng.normal(size=(1, 1, 1, 8)), dtype=np.float64)
print("\ndot(f(q, i), f(k, j)) for fixed i - j = 2:")
for i in (2, 10, 30):
    qi = apply_rope(q, table, [i]).data.reshape(-1)
    kj = apply_rope(k, table, [i - 2]).data.reshape(-1)
    print(f"  i={i:2d}, j={i - 2:2d}: {qi @ kj:.10f}")
