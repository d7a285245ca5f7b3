"""Voxel lattices of small integer labels, and the transforms they support.

A LabelGrid stores a dense uint8 array indexed ``labels[x, y, z]``. The
canonical serialized ordering is x-fastest (x, then y, then z), which for
this indexing convention is Fortran order. Masks use labels {0, 1};
division patterns use {0, 1, 2} where the 1/2 interface is the implicit
division surface.

Grids are immutable by convention: every operation returns a new grid and
never writes through a shared array.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import (
    DegeneratePatternError,
    EmptyMaskError,
    FileFormatError,
    InvalidInputError,
)

DEFAULT_VOXEL_SIZE_UM = 0.35

# 6-neighborhood structuring element (face connectivity)
CROSS_3D = ndimage.generate_binary_structure(3, 1)

VXG_MAGIC = "VXG1"


@dataclass(frozen=True)
class LabelGrid:
    """3D voxel lattice of uint8 labels with isotropic spatial calibration."""

    labels: np.ndarray
    voxel_size: float = DEFAULT_VOXEL_SIZE_UM

    def __post_init__(self):
        arr = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise InvalidInputError(f"labels must be a 3D array, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "labels", arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.labels.shape

    def foreground_count(self) -> int:
        return int(np.count_nonzero(self.labels))

    def mask(self) -> np.ndarray:
        """Binary foreground array (any nonzero label)."""
        return (self.labels > 0).astype(np.uint8)

    def with_labels(self, labels: np.ndarray) -> "LabelGrid":
        return LabelGrid(labels, self.voxel_size)


@dataclass(frozen=True)
class DivisionPattern:
    """A LabelGrid with labels {0, 1, 2}: background and two daughter cells."""

    grid: LabelGrid
    warn_ambiguous: bool = field(default=False, compare=False)

    def __post_init__(self):
        labels = self.grid.labels
        if labels.max(initial=0) > 2:
            raise InvalidInputError("division pattern labels must be in {0, 1, 2}")
        if not (np.any(labels == 1) and np.any(labels == 2)):
            raise DegeneratePatternError("both daughter labels must occur")

    def daughter_volumes(self) -> tuple[int, int]:
        labels = self.grid.labels
        return int(np.count_nonzero(labels == 1)), int(np.count_nonzero(labels == 2))


def merge_daughters(pattern: DivisionPattern) -> LabelGrid:
    """Map both daughter labels back to 1, recovering the mother mask."""
    return pattern.grid.with_labels((pattern.grid.labels > 0).astype(np.uint8))


def volume_ratio(pattern: DivisionPattern) -> float:
    """Smaller daughter volume over the summed daughter volumes, in (0, 0.5]."""
    v1, v2 = pattern.daughter_volumes()
    return min(v1, v2) / (v1 + v2)


def interface_faces(pattern: DivisionPattern) -> np.ndarray:
    """All 6-neighbor voxel face pairs with labels (1, 2).

    Returns an (n, 7) int64 array with rows (axis, x1, y1, z1, x2, y2, z2)
    where voxel 1 carries label 1 and voxel 2 label 2, sorted by axis then
    by the label-1 voxel coordinate. The face count is ``len(rows)``.
    """
    labels = pattern.grid.labels
    rows = []
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        a, b = labels[tuple(lo)], labels[tuple(hi)]
        for first, second in (((a == 1) & (b == 2), False), ((a == 2) & (b == 1), True)):
            coords = np.argwhere(first)
            if coords.size == 0:
                continue
            other = coords.copy()
            other[:, axis] += 1
            one, two = (other, coords) if second else (coords, other)
            block = np.concatenate(
                [np.full((len(coords), 1), axis, dtype=np.int64), one, two], axis=1
            )
            rows.append(block)
    if not rows:
        return np.empty((0, 7), dtype=np.int64)
    out = np.concatenate(rows, axis=0)
    order = np.lexsort(out[:, ::-1].T)
    return out[order]


def interface_area(pattern: DivisionPattern) -> int:
    """Number of (1, 2) face pairs; the discrete division-surface area."""
    labels = pattern.grid.labels
    total = 0
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        a, b = labels[tuple(lo)], labels[tuple(hi)]
        total += int(np.count_nonzero((a == 1) & (b == 2)))
        total += int(np.count_nonzero((a == 2) & (b == 1)))
    return total


def pad(grid: LabelGrid, margins) -> LabelGrid:
    """Zero-pad by per-face margins ((x_lo, x_hi), (y_lo, y_hi), (z_lo, z_hi)).

    A single int pads every face by the same amount.
    """
    if np.isscalar(margins):
        margins = ((margins, margins),) * 3
    margins = tuple((int(lo), int(hi)) for lo, hi in margins)
    if any(lo < 0 or hi < 0 for lo, hi in margins):
        raise InvalidInputError("pad margins must be >= 0")
    return grid.with_labels(np.pad(grid.labels, margins))


def bounding_box(labels: np.ndarray) -> tuple[tuple[int, int], ...]:
    """Inclusive-exclusive (lo, hi) index ranges of the nonzero region."""
    if not np.any(labels):
        raise EmptyMaskError("cannot take the bounding box of an empty grid")
    out = []
    for axis in range(3):
        nz = np.any(labels, axis=tuple(i for i in range(3) if i != axis))
        idx = np.nonzero(nz)[0]
        out.append((int(idx[0]), int(idx[-1]) + 1))
    return tuple(out)


def crop_to_bbox(grid: LabelGrid, margin: int = 0) -> LabelGrid:
    """Tight foreground bounding box expanded by ``margin``, clamped to the grid."""
    bbox = bounding_box(grid.labels)
    slices = tuple(
        slice(max(0, lo - margin), min(n, hi + margin))
        for (lo, hi), n in zip(bbox, grid.dims)
    )
    return grid.with_labels(grid.labels[slices].copy())


def rotate_nearest(grid: LabelGrid, rotation: np.ndarray, margin: int = 2) -> LabelGrid:
    """Rotate a grid about its center with nearest-neighbor label transport.

    The output grid covers the rotated bounding box of the input plus
    ``margin`` voxels per face; each output voxel takes the label of the
    nearest input voxel under the inverse rotation, background filling
    with 0. ``rotation`` must be a proper orthonormal 3x3 matrix.
    """
    rot = np.asarray(rotation, dtype=np.float64)
    if rot.shape != (3, 3) or not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6):
        raise InvalidInputError("rotation must be an orthonormal 3x3 matrix")
    if abs(np.linalg.det(rot) - 1.0) > 1e-6:
        raise InvalidInputError("rotation must be proper (determinant +1)")

    dims_in = np.array(grid.dims, dtype=np.float64)
    center_in = (dims_in - 1.0) / 2.0
    # Rotated extents of the input box determine the output size.
    half = np.abs(rot) @ (dims_in / 2.0)
    dims_out = np.maximum(1, np.ceil(2.0 * half).astype(np.int64)) + 2 * margin
    center_out = (dims_out - 1.0) / 2.0

    idx = np.indices(dims_out, dtype=np.float64).reshape(3, -1)
    src = rot.T @ (idx - center_out[:, None]) + center_in[:, None]
    src = np.rint(src).astype(np.int64)
    valid = np.all((src >= 0) & (src < np.array(grid.dims)[:, None]), axis=0)
    out = np.zeros(int(np.prod(dims_out)), dtype=np.uint8)
    flat_src = np.ravel_multi_index(src[:, valid], grid.dims)
    out[valid] = grid.labels.reshape(-1)[flat_src]
    return grid.with_labels(out.reshape(tuple(dims_out)))


def rotate_point(point, rotation, dims_in, dims_out=None, margin: int = 2):
    """Map a voxel-space point through the same transform as rotate_nearest."""
    rot = np.asarray(rotation, dtype=np.float64)
    dims_in = np.asarray(dims_in, dtype=np.float64)
    if dims_out is None:
        half = np.abs(rot) @ (dims_in / 2.0)
        dims_out = np.maximum(1, np.ceil(2.0 * half).astype(np.int64)) + 2 * margin
    center_in = (dims_in - 1.0) / 2.0
    center_out = (np.asarray(dims_out, dtype=np.float64) - 1.0) / 2.0
    return rot @ (np.asarray(point, dtype=np.float64) - center_in) + center_out


def rescale_isotropic(grid: LabelGrid, factor: float) -> LabelGrid:
    """Nearest-neighbor isotropic rescaling by ``factor``."""
    if factor <= 0:
        raise InvalidInputError("rescale factor must be > 0")
    dims_in = np.array(grid.dims, dtype=np.int64)
    dims_out = np.maximum(1, np.rint(dims_in * factor).astype(np.int64))
    centers = [
        np.clip(np.rint((np.arange(n_out) + 0.5) / factor - 0.5).astype(np.int64), 0, n_in - 1)
        for n_out, n_in in zip(dims_out, dims_in)
    ]
    out = grid.labels[np.ix_(centers[0], centers[1], centers[2])]
    result = grid.with_labels(out.copy())
    if grid.foreground_count() > 0 and result.foreground_count() == 0:
        raise InvalidInputError(f"rescaling by {factor} emptied the grid")
    return result


def shift_plane_by_erosion(pattern: DivisionPattern, k: int, side: int) -> DivisionPattern:
    """Shift the division surface by eroding daughter ``side`` k times.

    One iteration reassigns every ``side`` voxel that touches the other
    daughter across a face; the mother mask is untouched, only the
    interface moves. Raises DegeneratePatternError when the eroded
    daughter vanishes.
    """
    if k < 0:
        raise InvalidInputError("erosion count must be >= 0")
    if side not in (1, 2):
        raise InvalidInputError("side must be 1 or 2")
    labels = pattern.grid.labels.copy()
    other = 3 - side
    for _ in range(k):
        touch = ndimage.binary_dilation(labels == other, structure=CROSS_3D)
        boundary = touch & (labels == side)
        labels[boundary] = other
        if not np.any(labels == side):
            raise DegeneratePatternError(f"erosion annihilated daughter {side}")
    return DivisionPattern(pattern.grid.with_labels(labels))


def connected_components(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """6-connected component labeling of a binary array."""
    return ndimage.label(mask, structure=CROSS_3D)


# ---------------------------------------------------------------------------
# VXG file format: one JSON header line, then nx*ny*nz raw bytes, x-fastest.
# ---------------------------------------------------------------------------

def write_vxg(path, grid: LabelGrid, kind: str | None = None) -> None:
    """Write a grid as a VXG file. ``kind`` defaults from the label range."""
    if kind is None:
        kind = "division" if grid.labels.max(initial=0) > 1 else "mask"
    if kind not in ("mask", "division"):
        raise InvalidInputError(f"unknown VXG kind {kind!r}")
    header = {
        "magic": VXG_MAGIC,
        "dims": list(grid.dims),
        "voxel_size_um": grid.voxel_size,
        "labels": kind,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        fh.write(grid.labels.tobytes(order="F"))


def read_vxg(path) -> LabelGrid:
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FileFormatError(f"{path}: bad VXG header") from exc
        if header.get("magic") != VXG_MAGIC:
            raise FileFormatError(f"{path}: not a {VXG_MAGIC} file")
        dims = header.get("dims")
        if (
            not isinstance(dims, list)
            or len(dims) != 3
            or any(not isinstance(d, int) or d < 1 for d in dims)
        ):
            raise FileFormatError(f"{path}: bad dims {dims!r}")
        n = dims[0] * dims[1] * dims[2]
        raw = fh.read(n + 1)
        if len(raw) != n:
            raise FileFormatError(f"{path}: expected {n} label bytes, got {len(raw)}")
        labels = np.frombuffer(raw, dtype=np.uint8).reshape(dims, order="F")
        return LabelGrid(labels, float(header.get("voxel_size_um", DEFAULT_VOXEL_SIZE_UM)))
