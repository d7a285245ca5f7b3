"""Central finite-difference verification of analytic gradients.

The independent oracle for the engine's backward passes: perturb every
parameter element by +-h in 64-bit precision, re-run the forward loss,
and compare the quotient against the accumulated analytic gradient.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def finite_difference_grad(loss_fn, tensor: Tensor, h: float = 1e-4) -> np.ndarray:
    """Elementwise central differences of ``loss_fn()`` w.r.t. ``tensor``."""
    grad = np.zeros_like(tensor.values, dtype=np.float64)
    flat = tensor.values.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn()
        flat[i] = orig - h
        down = loss_fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-relative gradient mismatch, robust for near-zero gradients."""
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / denom)
