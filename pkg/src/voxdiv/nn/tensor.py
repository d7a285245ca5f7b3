"""Minimal tensor container for the neural engine.

Activations flow through the network as plain numpy arrays shaped
(batch, channels, nx, ny, nz); a Tensor pairs such an array with an
optional gradient buffer and is used for parameters and for values
handed across the public API.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("values", "grad")

    def __init__(self, values: np.ndarray, grad: np.ndarray | None = None):
        self.values = np.asarray(values)
        if grad is not None and grad.shape != self.values.shape:
            raise ValueError(f"grad shape {grad.shape} != values shape {self.values.shape}")
        self.grad = grad

    @property
    def shape(self):
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def require_grad(self) -> "Tensor":
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        return self

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0)

    def astype(self, dtype) -> "Tensor":
        return Tensor(
            self.values.astype(dtype),
            None if self.grad is None else self.grad.astype(dtype),
        )

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, dtype={self.values.dtype})"
