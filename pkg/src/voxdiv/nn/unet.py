"""The mask-propagating 3D UNet.

The mother-cell mask rides along the whole network: it multiplies every
convolution / normalization output, is max-pooled alongside the
activations in the encoder, and decoder levels reuse the encoder-level
masks through the skip connections (the mask itself is never upsampled,
so the cell silhouette is preserved at every scale). Input is the mask
one-hot encoded over two channels; output is two daughter-label logit
channels, zeroed outside the cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import EmptyMaskError, InvalidInputError
from ..grid import LabelGrid
from .ops import MaskedConv3d, MaskedGroupNorm, MaxPool2, ReLU, UpsampleConcat
from .tensor import Tensor


@dataclass(frozen=True)
class UNetConfig:
    depth: int = 3
    base_channels: int = 8
    kernel: int = 3
    convs_per_level: int = 2
    in_channels: int = 2
    out_channels: int = 2

    def __post_init__(self):
        if self.depth < 2:
            raise InvalidInputError("depth must be >= 2")
        if self.convs_per_level < 1 or self.base_channels < 1:
            raise InvalidInputError("bad channel/conv configuration")

    def groups_for(self, channels: int) -> int:
        return min(4, channels)

    def level_channels(self, level: int) -> int:
        return self.base_channels * (2**level)

    def receptive_field(self) -> int:
        """Bottom-level receptive field via the standard jump/size recursion:
        each k-wide layer adds (k - 1) * jump, pooling doubles the jump."""
        rf, jump = 1, 1
        for level in range(self.depth):
            rf += self.convs_per_level * (self.kernel - 1) * jump
            if level < self.depth - 1:
                rf += jump  # the 2-wide pooling window
                jump *= 2
        return rf

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "base_channels": self.base_channels,
            "kernel": self.kernel,
            "convs_per_level": self.convs_per_level,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UNetConfig":
        return cls(**d)


@dataclass
class MaskPyramid:
    """Per-level masks: level 0 is the input mask, level d its d-fold
    x2 max-pooled reduction."""

    levels: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def build(cls, mask: np.ndarray, depth: int) -> "MaskPyramid":
        pool = MaxPool2()
        levels = [mask]
        for _ in range(depth - 1):
            _, mask = pool.forward(mask, mask)
            levels.append(mask)
        return cls(levels)


def one_hot_mask(mask: np.ndarray) -> np.ndarray:
    """Encode a (batch, 1, ...) binary mask as two indicator channels."""
    return np.concatenate([1.0 - mask, mask], axis=1).astype(mask.dtype)


class _ConvBlock:
    def __init__(self, cin, cout, config: UNetConfig, rng, dtype):
        self.conv = MaskedConv3d(cin, cout, config.kernel, rng=rng, dtype=dtype)
        self.norm = MaskedGroupNorm(cout, config.groups_for(cout), dtype=dtype)
        self.act = ReLU()

    def parameters(self):
        return self.conv.parameters() + self.norm.parameters()

    def forward(self, x, mask):
        return self.act.forward(self.norm.forward(self.conv.forward(x, mask), mask))

    def backward(self, dout):
        return self.conv.backward(self.norm.backward(self.act.backward(dout)))


class MaskedUNet:
    def __init__(self, config: UNetConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        d = config.depth

        self.encoder: list[list[_ConvBlock]] = []
        cin = config.in_channels
        for level in range(d):
            cout = config.level_channels(level)
            blocks = []
            for _ in range(config.convs_per_level):
                blocks.append(_ConvBlock(cin, cout, config, rng, dtype))
                cin = cout
            self.encoder.append(blocks)
            cin = cout

        self.decoder: list[list[_ConvBlock]] = []
        for level in range(d - 2, -1, -1):
            skip_ch = config.level_channels(level)
            cin_dec = cin + skip_ch
            blocks = []
            cout = skip_ch
            for _ in range(config.convs_per_level):
                blocks.append(_ConvBlock(cin_dec, cout, config, rng, dtype))
                cin_dec = cout
            self.decoder.append(blocks)
            cin = cout

        self.head = MaskedConv3d(cin, config.out_channels, kernel=1, rng=rng, dtype=dtype)
        self.pools = [MaxPool2() for _ in range(d - 1)]
        self.ups = [UpsampleConcat() for _ in range(d - 1)]

    # -- parameter plumbing -------------------------------------------------

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for lvl, blocks in enumerate(self.encoder):
            for j, blk in enumerate(blocks):
                out += [
                    (f"enc{lvl}.{j}.w", blk.conv.weight),
                    (f"enc{lvl}.{j}.b", blk.conv.bias),
                    (f"enc{lvl}.{j}.gamma", blk.norm.gamma),
                    (f"enc{lvl}.{j}.beta", blk.norm.beta),
                ]
        for lvl, blocks in enumerate(self.decoder):
            for j, blk in enumerate(blocks):
                out += [
                    (f"dec{lvl}.{j}.w", blk.conv.weight),
                    (f"dec{lvl}.{j}.b", blk.conv.bias),
                    (f"dec{lvl}.{j}.gamma", blk.norm.gamma),
                    (f"dec{lvl}.{j}.beta", blk.norm.beta),
                ]
        out += [("head.w", self.head.weight), ("head.b", self.head.bias)]
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def astype(self, dtype) -> "MaskedUNet":
        clone = MaskedUNet(self.config, seed=0, dtype=dtype)
        for (_, src), (_, dst) in zip(self.named_parameters(), clone.named_parameters()):
            dst.values[...] = src.values.astype(dtype)
            dst.zero_grad()
        return clone

    # -- forward / backward --------------------------------------------------

    def forward(self, x: np.ndarray, mask: np.ndarray) -> np.ndarray:
        """Run the network; ``x`` is (batch, in_channels, nx, ny, nz) and
        ``mask`` the matching (batch, 1, ...) binary mask."""
        d = self.config.depth
        skips = []
        m = mask
        self.mask_pyramid = MaskPyramid([m])
        for level in range(d):
            for blk in self.encoder[level]:
                x = blk.forward(x, m)
            if level < d - 1:
                skips.append((x, m))
                x, m = self.pools[level].forward(x, m)
                self.mask_pyramid.levels.append(m)
        for i, blocks in enumerate(self.decoder):
            skip, sm = skips[d - 2 - i]
            x = self.ups[i].forward(x, skip, sm)
            m = sm
            for blk in blocks:
                x = blk.forward(x, m)
        return self.head.forward(x, m)

    def backward(self, dlogits: np.ndarray) -> None:
        d = self.config.depth
        dx = self.head.backward(dlogits)
        dskips = [None] * (d - 1)
        for i in range(len(self.decoder) - 1, -1, -1):
            for blk in reversed(self.decoder[i]):
                dx = blk.backward(dx)
            dx, dskip = self.ups[i].backward(dx)
            dskips[d - 2 - i] = dskip
        for level in range(d - 1, -1, -1):
            if level < d - 1:
                dx = self.pools[level].backward(dx)
                dx = dx + dskips[level]
            for blk in reversed(self.encoder[level]):
                dx = blk.backward(dx)

    def forward_grid(self, mask_grid: LabelGrid) -> Tensor:
        """One-hot encode a mother mask and return its (1, 2, ...) logits."""
        fg = (mask_grid.labels > 0).astype(self.dtype)
        if not fg.any():
            raise EmptyMaskError("cannot run the network on an empty mask")
        mask = fg[None, None]
        logits = self.forward(one_hot_mask(mask), mask)
        return Tensor(logits)


def unet_forward(mother_mask: LabelGrid, model: MaskedUNet) -> Tensor:
    return model.forward_grid(mother_mask)
