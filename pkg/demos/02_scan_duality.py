"""One layer, three ways to compute it.

The gated recurrence h_t = a_t h_{t-1} + B_t x_t^T with y_t = C_t h_t
equals the masked quadratic form (L o C B^T) X, where L holds the gate
products between positions. The chunked scan computes the same numbers in
linear time. This script runs all three on the same inputs and prints the
agreement, then times the two fast paths as the sequence grows.
"""

import time

import numpy as np

from cheems import Tensor, ssd_chunked, ssd_quadratic
from cheems.reference import ssd_recurrence
from cheems import tensor as T

rng = np.random.default_rng(7)
b, l, h, p, s = 2, 64, 2, 8, 8
x = Tensor(rng.normal(size=(b, l, h, p)), dtype=np.float64)
B = Tensor(rng.normal(size=(b, l, h, s)), dtype=np.float64)
C = Tensor(rng.normal(size=(b, l, h, s)), dtype=np.float64)
a = Tensor(rng.uniform(0.2, 1.0, size=(b, l, h)), dtype=np.float64)

with T.no_grad():
    y_quad = ssd_quadratic(x, B, C, a).data
    y_chunk = ssd_chunked(x, B, C, a, chunk_len=16).data
y_rec = ssd_recurrence(x.data, B.data, C.data, a.data)

print(f"quadratic vs chunked : max abs diff {np.max(np.abs(y_quad - y_chunk)):.2e}")
print(f"chunked vs recurrence: max abs diff {np.max(np.abs(y_chunk - y_rec)):.2e}")

print("\nwall time, forward only (median of 3):")
print(f"{'seq_len':>8} {'quadratic':>12} {'chunked':>12}")
for length in (256, 1024, 4096):
    xs = Tensor(rng.normal(size=(1, length, h, p)).astype(np.float32))
    Bs = Tensor(rng.normal(size=(1, length, h, s)).astype(np.float32))
    Cs = Tensor(rng.normal(size=(1, length, h, s)).astype(np.float32))
    gs = Tensor(rng.uniform(0.5, 1.0, size=(1, length, h)).astype(np.float32))
    times = {}
    for name, fn in (("quad", lambda: ssd_quadratic(xs, Bs, Cs, gs)),
                     ("chunk", lambda: ssd_chunked(xs, Bs, Cs, gs, 64))):
        samples = []
        for _ in range(3):
            t0 = time.perf_counter()
            with T.no_grad():
                fn()
            samples.append(time.perf_counter() - t0)
        times[name] = np.median(samples) * 1e3
    print(f"{length:>8} {times['quad']:>10.1f}ms {times['chunk']:>10.1f}ms")
