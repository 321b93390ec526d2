"""Named, splittable random streams.

Every source of randomness in a run is derived from one root seed plus a
tuple of string names (e.g. ``("init", "block0", "ssd3", "W_B")`` or
``("task", "step", "1742")``). Adding a new consumer therefore never
reshuffles the draws seen by existing ones.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_seed(root_seed: int, *names: str) -> int:
    """Derive a 128-bit child seed from a root seed and a name path."""
    h = hashlib.sha256()
    h.update(str(int(root_seed)).encode())
    for name in names:
        h.update(b"/")
        h.update(str(name).encode())
    return int.from_bytes(h.digest()[:16], "little")


def stream(root_seed: int, *names: str) -> np.random.Generator:
    """A PCG64 generator for the named stream. Deterministic across runs."""
    return np.random.Generator(np.random.PCG64(stream_seed(root_seed, *names)))
