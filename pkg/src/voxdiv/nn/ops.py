"""Masked 3D layers with explicit forward/backward passes.

Every layer multiplies its output by the cell mask, so activations
outside the cell are exactly zero at every stage and border padding
cannot leak information inward. Layers cache what their backward pass
needs; parameters accumulate gradients into their ``grad`` buffers.

Activation layout is (batch, channels, nx, ny, nz); masks are
(batch, 1, nx, ny, nz) arrays of {0, 1} in the activation dtype.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidInputError, NumericError
from .tensor import Tensor

GROUPNORM_EPS = 1e-5


def _check_mask(x: np.ndarray, mask: np.ndarray) -> None:
    if mask.shape[0] != x.shape[0] or mask.shape[1] != 1 or mask.shape[2:] != x.shape[2:]:
        raise InvalidInputError(f"mask shape {mask.shape} does not match input {x.shape}")


def _conv_raw(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Zero-padded 3x3x3 convolution (cross-correlation), no bias, no mask.

    The im2col buffer is built per sample to keep memory bounded; the
    heavy lifting is a single BLAS matmul per sample.
    """
    batch, cin, nx, ny, nz = x.shape
    cout = w.shape[0]
    k = cin * 27
    w2 = w.reshape(cout, k)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    out = np.empty((batch, cout, nx, ny, nz), dtype=x.dtype)
    patches = np.empty((k, nx * ny * nz), dtype=x.dtype)
    for i in range(batch):
        row = 0
        for c in range(cin):
            for dx in range(3):
                for dy in range(3):
                    for dz in range(3):
                        patches[row] = xp[
                            i, c, dx : dx + nx, dy : dy + ny, dz : dz + nz
                        ].reshape(-1)
                        row += 1
        out[i] = (w2 @ patches).reshape(cout, nx, ny, nz)
    return out


def _conv_grad_w(x: np.ndarray, gout: np.ndarray) -> np.ndarray:
    """Weight gradient of _conv_raw: correlate input patches with gout."""
    batch, cin, nx, ny, nz = x.shape
    cout = gout.shape[1]
    k = cin * 27
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    dw2 = np.zeros((cout, k), dtype=x.dtype)
    patches = np.empty((k, nx * ny * nz), dtype=x.dtype)
    for i in range(batch):
        row = 0
        for c in range(cin):
            for dx in range(3):
                for dy in range(3):
                    for dz in range(3):
                        patches[row] = xp[
                            i, c, dx : dx + nx, dy : dy + ny, dz : dz + nz
                        ].reshape(-1)
                        row += 1
        dw2 += gout[i].reshape(cout, -1) @ patches.T
    return dw2.reshape(cout, cin, 3, 3, 3)


class MaskedConv3d:
    """3^3 (or 1^3) convolution whose output is zeroed outside the mask."""

    def __init__(self, cin: int, cout: int, kernel: int = 3, rng=None, dtype=np.float32):
        if kernel not in (1, 3):
            raise InvalidInputError("kernel must be 1 or 3")
        self.kernel = kernel
        fan_in = cin * kernel**3
        limit = float(np.sqrt(1.0 / fan_in))
        rng = rng or np.random.default_rng()
        shape = (cout, cin, kernel, kernel, kernel)
        self.weight = Tensor(rng.uniform(-limit, limit, shape).astype(dtype)).require_grad()
        self.bias = Tensor(np.zeros(cout, dtype=dtype)).require_grad()
        self._cache = None

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x: np.ndarray, mask: np.ndarray) -> np.ndarray:
        _check_mask(x, mask)
        w = self.weight.values
        if self.kernel == 1:
            raw = np.tensordot(w[:, :, 0, 0, 0], x, axes=([1], [1])).swapaxes(0, 1)
        else:
            raw = _conv_raw(x, w)
        out = (raw + self.bias.values[None, :, None, None, None]) * mask
        self._cache = (x, mask)
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        x, mask = self._cache
        g = dout * mask
        self.bias.grad += g.sum(axis=(0, 2, 3, 4))
        w = self.weight.values
        if self.kernel == 1:
            self.weight.grad[:, :, 0, 0, 0] += np.tensordot(g, x, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
            dx = np.tensordot(w[:, :, 0, 0, 0].T, g, axes=([1], [1])).swapaxes(0, 1)
            return np.ascontiguousarray(dx)
        self.weight.grad += _conv_grad_w(x, g)
        # Input gradient is a convolution of g with the transposed,
        # spatially flipped kernel.
        w_flip = w[:, :, ::-1, ::-1, ::-1].swapaxes(0, 1).copy()
        return _conv_raw(g, w_flip)


class MaskedGroupNorm:
    """Group normalization over in-mask voxels only.

    Means and variances per (sample, group) are computed over the masked
    region; the affine output is re-masked, so background stays zero and
    enlarging the background cannot shift the statistics.
    """

    def __init__(self, channels: int, groups: int, dtype=np.float32):
        if channels % groups != 0:
            raise InvalidInputError(f"{groups} groups do not divide {channels} channels")
        self.channels = channels
        self.groups = groups
        self.gamma = Tensor(np.ones(channels, dtype=dtype)).require_grad()
        self.beta = Tensor(np.zeros(channels, dtype=dtype)).require_grad()
        self._cache = None

    def parameters(self):
        return [self.gamma, self.beta]

    def forward(self, x: np.ndarray, mask: np.ndarray) -> np.ndarray:
        _check_mask(x, mask)
        batch, channels = x.shape[:2]
        if channels != self.channels:
            raise InvalidInputError(f"expected {self.channels} channels, got {channels}")
        cg = channels // self.groups
        spatial_count = mask.sum(axis=(1, 2, 3, 4))  # (batch,)
        if np.any(spatial_count == 0):
            raise NumericError("degenerate mask: no in-mask voxels for group norm")
        count = spatial_count[:, None] * cg  # (batch, 1) per group
        xg = x.reshape(batch, self.groups, cg, *x.shape[2:])
        mg = mask[:, None]  # (batch, 1, 1, nx, ny, nz)
        xm = xg * mg
        mean = xm.sum(axis=(2, 3, 4, 5)) / count  # (batch, groups)
        var = (xm * xm).sum(axis=(2, 3, 4, 5)) / count - mean * mean
        istd = 1.0 / np.sqrt(np.maximum(var, 0.0) + GROUPNORM_EPS)
        mean_b = mean[:, :, None, None, None, None]
        istd_b = istd[:, :, None, None, None, None]
        xhat = ((xg - mean_b) * istd_b * mg).reshape(x.shape)
        gamma = self.gamma.values[None, :, None, None, None]
        beta = self.beta.values[None, :, None, None, None]
        out = (xhat * gamma + beta) * mask
        self._cache = (xhat, mask, istd, count)
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        xhat, mask, istd, count = self._cache
        batch, channels = xhat.shape[:2]
        cg = channels // self.groups
        g = dout * mask
        self.gamma.grad += (g * xhat).sum(axis=(0, 2, 3, 4))
        self.beta.grad += g.sum(axis=(0, 2, 3, 4))
        dxhat = g * self.gamma.values[None, :, None, None, None]
        dxg = dxhat.reshape(batch, self.groups, cg, *xhat.shape[2:])
        xhg = xhat.reshape(batch, self.groups, cg, *xhat.shape[2:])
        sum_d = dxg.sum(axis=(2, 3, 4, 5))
        sum_dx = (dxg * xhg).sum(axis=(2, 3, 4, 5))
        istd_b = istd[:, :, None, None, None, None]
        cnt_b = count[:, :, None, None, None, None] if count.ndim == 2 else count
        dx = istd_b * (
            dxg
            - sum_d[:, :, None, None, None, None] / cnt_b
            - xhg * sum_dx[:, :, None, None, None, None] / cnt_b
        )
        dx = dx.reshape(xhat.shape) * mask
        return dx


class ReLU:
    def parameters(self):
        return []

    def forward(self, x: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
        out = np.maximum(x, 0)
        self._pos = x > 0
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout * self._pos


class MaxPool2:
    """x2 max pooling with ceil semantics, applied to both activations and
    mask; pooled activations are re-masked by the pooled mask."""

    def parameters(self):
        return []

    @staticmethod
    def _blocked(a: np.ndarray) -> np.ndarray:
        batch, channels, nx, ny, nz = a.shape
        px, py, pz = -nx % 2, -ny % 2, -nz % 2
        if px or py or pz:
            a = np.pad(a, ((0, 0), (0, 0), (0, px), (0, py), (0, pz)))
        hx, hy, hz = a.shape[2] // 2, a.shape[3] // 2, a.shape[4] // 2
        blocks = a.reshape(batch, channels, hx, 2, hy, 2, hz, 2)
        return blocks.transpose(0, 1, 2, 4, 6, 3, 5, 7).reshape(batch, channels, hx, hy, hz, 8)

    def forward(self, x: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        _check_mask(x, mask)
        xb = self._blocked(x)
        idx = xb.argmax(axis=-1)
        vals = np.take_along_axis(xb, idx[..., None], axis=-1)[..., 0]
        pooled_mask = self._blocked(mask).max(axis=-1)
        out = vals * pooled_mask
        self._cache = (idx, pooled_mask, x.shape)
        return out, pooled_mask

    def backward(self, dout: np.ndarray) -> np.ndarray:
        idx, pooled_mask, in_shape = self._cache
        batch, channels, nx, ny, nz = in_shape
        hx, hy, hz = idx.shape[2:]
        g = dout * pooled_mask
        blocks = np.zeros((batch, channels, hx, hy, hz, 8), dtype=dout.dtype)
        np.put_along_axis(blocks, idx[..., None], g[..., None], axis=-1)
        full = blocks.reshape(batch, channels, hx, hy, hz, 2, 2, 2).transpose(
            0, 1, 2, 5, 3, 6, 4, 7
        ).reshape(batch, channels, hx * 2, hy * 2, hz * 2)
        return np.ascontiguousarray(full[:, :, :nx, :ny, :nz])


class UpsampleConcat:
    """Nearest-neighbor x2 upsampling of decoder activations, masked by the
    encoder-level mask (never an upsampled mask), concatenated with the
    skip activations along channels."""

    def parameters(self):
        return []

    def forward(self, dec: np.ndarray, skip: np.ndarray, skip_mask: np.ndarray) -> np.ndarray:
        _check_mask(skip, skip_mask)
        batch, cd, dx, dy, dz = dec.shape
        nx, ny, nz = skip.shape[2:]
        if not all(d * 2 >= n for d, n in zip((dx, dy, dz), (nx, ny, nz))):
            raise InvalidInputError(
                f"decoder dims {dec.shape[2:]} too small for skip dims {skip.shape[2:]}"
            )
        up = np.empty((batch, cd, dx * 2, dy * 2, dz * 2), dtype=dec.dtype)
        up.reshape(batch, cd, dx, 2, dy, 2, dz, 2)[...] = dec[
            :, :, :, None, :, None, :, None
        ]
        up = up[:, :, :nx, :ny, :nz] * skip_mask
        out = np.concatenate([up, skip * skip_mask], axis=1)
        self._cache = (cd, dec.shape, skip_mask)
        return out

    def backward(self, dout: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        cd, dec_shape, skip_mask = self._cache
        batch, _, dx, dy, dz = dec_shape
        dup = dout[:, :cd] * skip_mask
        dskip = dout[:, cd:] * skip_mask
        pads = [(0, dx * 2 - dup.shape[2]), (0, dy * 2 - dup.shape[3]), (0, dz * 2 - dup.shape[4])]
        if any(p[1] for p in pads):
            dup = np.pad(dup, ((0, 0), (0, 0), *pads))
        ddec = dup.reshape(batch, cd, dx, 2, dy, 2, dz, 2).sum(axis=(3, 5, 7))
        return ddec, dskip


def conv3d(input_tensor: Tensor, weights: Tensor, bias: Tensor, mask: Tensor) -> Tensor:
    """Functional masked convolution over Tensor arguments (forward only)."""
    x = input_tensor.values
    w = weights.values
    raw = _conv_raw(x, w) if w.shape[2] == 3 else np.tensordot(
        w[:, :, 0, 0, 0], x, axes=([1], [1])
    ).swapaxes(0, 1)
    return Tensor((raw + bias.values[None, :, None, None, None]) * mask.values)


def masked_group_norm(
    input_tensor: Tensor, mask: Tensor, groups: int, gamma: Tensor, beta: Tensor
) -> Tensor:
    """Functional masked group normalization (forward only)."""
    op = MaskedGroupNorm(input_tensor.shape[1], groups, dtype=input_tensor.dtype)
    op.gamma = gamma
    op.beta = beta
    return Tensor(op.forward(input_tensor.values, mask.values))


def maxpool2(input_tensor: Tensor, mask: Tensor) -> tuple[Tensor, Tensor]:
    out, pooled = MaxPool2().forward(input_tensor.values, mask.values)
    return Tensor(out), Tensor(pooled)


def upsample_concat(decoder: Tensor, skip: Tensor, skip_mask: Tensor) -> Tensor:
    return Tensor(UpsampleConcat().forward(decoder.values, skip.values, skip_mask.values))
