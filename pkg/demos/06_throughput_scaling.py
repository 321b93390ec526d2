"""How wall time scales with sequence length.

The chunked scan is linear in sequence length; materialized attention is
quadratic; a full block sits between. Lengths are kept short here so the
demo finishes quickly -- the benchmark subcommand measures the full grid.
"""

from cheems.harness import bench_throughput

rows = bench_throughput([256, 512, 1024], repeats=3)
print(f"{'kind':>14} {'seq_len':>8} {'fwd_ms':>9} {'fwdbwd_ms':>10} {'tok/s':>10}")
for r in rows:
    print(f"{r['kind']:>14} {r['seq_len']:>8} {r['fwd_ms']:>9.2f} "
          f"{r['fwdbwd_ms']:>10.2f} {r['tok_per_s']:>10.0f}")

by_kind = {}
for r in rows:
    by_kind.setdefault(r["kind"], []).append(r["fwdbwd_ms"])
print("\ntime ratio for a 4x longer sequence (1024 / 256):")
for kind, times in by_kind.items():
    print(f"  {kind:>14}: {times[-1] / times[0]:5.1f}x "
          f"({'~4x is linear, ~16x is quadratic'})")
