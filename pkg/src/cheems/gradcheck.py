"""Central finite-difference gradient checking.

The checker perturbs individual input coordinates of a function mapping
tensors to a scalar and compares (f(x+h) - f(x-h)) / 2h against the
analytic gradient from :func:`cheems.tensor.backward`. Everything runs in
float64; the step is fixed at 1e-5.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ContractError


def fd_gradcheck(fn, inputs: dict[str, T.Tensor], rel_tol: float = 1e-4,
                 h: float = 1e-5, max_coords_per_tensor: int | None = None,
                 coord_rng: np.random.Generator | None = None,
                 coord_filter=None) -> float:
    """Check d(fn)/d(input) for every named input tensor. Returns the worst
    relative error; raises ``AssertionError`` above ``rel_tol``.

    ``fn`` takes the dict of tensors and returns a scalar Tensor. When
    ``max_coords_per_tensor`` is set, a random coordinate subset is probed
    per tensor (gradients themselves are still exact and complete).
    ``coord_filter(name)`` may return an explicit flat-index list per input.
    """
    for name, t in inputs.items():
        if t.data.dtype != np.float64:
            raise ContractError(f"fd_gradcheck: input {name} must be float64")
        t.requires_grad = True
        t.zero_grad()

    loss = fn(inputs)
    T.backward(loss)
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros(t.shape))
                for name, t in inputs.items()}

    worst = 0.0
    worst_at = ""
    for name, t in inputs.items():
        flat = t.data.reshape(-1)
        if coord_filter is not None and coord_filter(name) is not None:
            coords = list(coord_filter(name))
        else:
            coords = list(range(flat.size))
            if max_coords_per_tensor is not None and flat.size > max_coords_per_tensor:
                rng = coord_rng or np.random.default_rng(0)
                coords = list(rng.choice(flat.size, size=max_coords_per_tensor, replace=False))
        an_flat = analytic[name].reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            with T.no_grad():
                fp = fn(inputs).item()
            flat[c] = orig - h
            with T.no_grad():
                fm = fn(inputs).item()
            flat[c] = orig
            fd = (fp - fm) / (2.0 * h)
            err = abs(fd - an_flat[c]) / max(abs(fd), abs(an_flat[c]), 1e-2)
            if err > worst:
                worst, worst_at = err, f"{name}[{c}]"

    if worst > rel_tol:
        raise AssertionError(f"gradient check failed at {worst_at}: rel err {worst:.3e} > {rel_tol:.1e}")
    return worst
