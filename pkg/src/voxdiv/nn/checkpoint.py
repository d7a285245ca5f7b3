"""Checkpoint files: a JSON manifest line followed by raw little-endian
32-bit floats, one contiguous block per parameter tensor."""

from __future__ import annotations

import json

import numpy as np

from ..errors import FileFormatError
from .unet import MaskedUNet, UNetConfig

CHECKPOINT_MAGIC = "MUNET1"


def save_checkpoint(model: MaskedUNet, path) -> None:
    named = model.named_parameters()
    directory = []
    offset = 0
    blobs = []
    for name, tensor in named:
        arr = np.ascontiguousarray(tensor.values, dtype="<f4")
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.nbytes
        blobs.append(arr.tobytes())
    manifest = {
        "magic": CHECKPOINT_MAGIC,
        "config": model.config.to_dict(),
        "tensors": directory,
        "data_bytes": offset,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest).encode("utf-8"))
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> MaskedUNet:
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            manifest = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FileFormatError(f"{path}: bad checkpoint manifest") from exc
        if manifest.get("magic") != CHECKPOINT_MAGIC:
            raise FileFormatError(f"{path}: not a {CHECKPOINT_MAGIC} checkpoint")
        data = fh.read()
    expected = manifest.get("data_bytes", -1)
    if len(data) != expected:
        raise FileFormatError(
            f"{path}: corrupt checkpoint ({len(data)} data bytes, expected {expected})"
        )
    config = UNetConfig.from_dict(manifest["config"])
    model = MaskedUNet(config, seed=0)
    by_name = dict(model.named_parameters())
    if set(by_name) != {t["name"] for t in manifest["tensors"]}:
        raise FileFormatError(f"{path}: tensor directory does not match the architecture")
    for entry in manifest["tensors"]:
        tensor = by_name[entry["name"]]
        shape = tuple(entry["shape"])
        if shape != tensor.values.shape:
            raise FileFormatError(
                f"{path}: tensor {entry['name']} has shape {shape}, "
                f"expected {tensor.values.shape}"
            )
        count = int(np.prod(shape))
        start = entry["offset"]
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=start)
        tensor.values[...] = arr.reshape(shape)
    return model
