from .adam import Adam, AdamState, adam_step
from .checkpoint import load_checkpoint, save_checkpoint
from .ops import MaskedConv3d, MaskedGroupNorm, MaxPool2, ReLU, UpsampleConcat
from .tensor import Tensor
from .unet import MaskedUNet, MaskPyramid, UNetConfig, one_hot_mask, unet_forward

__all__ = [
    "Adam",
    "AdamState",
    "adam_step",
    "load_checkpoint",
    "save_checkpoint",
    "MaskedConv3d",
    "MaskedGroupNorm",
    "MaxPool2",
    "ReLU",
    "UpsampleConcat",
    "Tensor",
    "MaskedUNet",
    "MaskPyramid",
    "UNetConfig",
    "one_hot_mask",
    "unet_forward",
]
