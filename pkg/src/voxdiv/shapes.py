"""Synthetic mother-cell shapes and geometric descriptors.

Cuboids and ellipsoids are parameterized by elongation ``e``, flatness
``f``, and target volume ``v`` (in voxels). Edge / axis lengths follow

    cuboid:     a = (f * v * e^2)^(1/3),          b = a / e,  c = b / f
    ellipsoid:  a = (3 * f * v * e^2 / (4 pi))^(1/3), b = a / e, c = a / (e f)

where cuboid a, b, c are read as full edge lengths (a * b * c = v) and
ellipsoid a, b, c as half-axes (4/3 pi a b c = v). Generated shapes are
axis-aligned with the longest axis along x.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyMaskError, InvalidSpecError
from .grid import DEFAULT_VOXEL_SIZE_UM, LabelGrid

MIN_EDGE_VOXELS = 4.0

# Default sampling ranges for synthetic datasets
E_RANGE = (1.0, 3.0)
F_RANGE = (1.0, 3.0)
V_RANGE = (24000.0, 120000.0)


@dataclass(frozen=True)
class ShapeSpec:
    kind: str  # "cuboid" | "ellipsoid"
    e: float
    f: float
    v: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("cuboid", "ellipsoid"):
            raise InvalidSpecError(f"unknown shape kind {self.kind!r}")
        if self.e < 1.0 or self.f < 1.0:
            raise InvalidSpecError(f"e and f must be >= 1, got e={self.e}, f={self.f}")
        if self.v <= 0:
            raise InvalidSpecError(f"target volume must be > 0, got {self.v}")


@dataclass(frozen=True)
class ShapeDescriptor:
    volume: int
    centroid: np.ndarray
    axes: np.ndarray  # rows = principal axes, descending spread
    axis_lengths: np.ndarray  # sqrt of coordinate-covariance eigenvalues
    elongation: float
    flatness: float


def cuboid_edges(spec: ShapeSpec) -> tuple[float, float, float]:
    a = (spec.f * spec.v * spec.e**2) ** (1.0 / 3.0)
    b = a / spec.e
    c = b / spec.f
    return a, b, c


def ellipsoid_half_axes(spec: ShapeSpec) -> tuple[float, float, float]:
    a = (3.0 * spec.f * spec.v * spec.e**2 / (4.0 * math.pi)) ** (1.0 / 3.0)
    b = a / spec.e
    c = a / (spec.e * spec.f)
    return a, b, c


def _best_integer_edges(edges: tuple[float, float, float], v: float) -> tuple[int, int, int]:
    """Integer voxel counts per axis whose product best matches v.

    Searches the +-1 neighborhood of the rounded edge lengths; ties break
    toward the smallest shape distortion, then lexicographically.
    """
    candidates = []
    for n in itertools.product(*(range(max(4, round(x) - 1), round(x) + 2) for x in edges)):
        vol_err = abs(n[0] * n[1] * n[2] - v) / v
        shape_err = sum(abs(ni - xi) / xi for ni, xi in zip(n, edges))
        candidates.append((vol_err, shape_err, n))
    return min(candidates)[2]


def generate_cuboid(spec: ShapeSpec, margin: int = 2) -> LabelGrid:
    """Rasterize an axis-aligned solid cuboid mask for ``spec``."""
    if spec.kind != "cuboid":
        raise InvalidSpecError(f"spec kind is {spec.kind!r}, expected cuboid")
    edges = cuboid_edges(spec)
    if min(edges) < MIN_EDGE_VOXELS:
        raise InvalidSpecError(f"cuboid edges {edges} too small to rasterize")
    na, nb, nc = _best_integer_edges(edges, spec.v)
    labels = np.zeros((na + 2 * margin, nb + 2 * margin, nc + 2 * margin), dtype=np.uint8)
    labels[margin : margin + na, margin : margin + nb, margin : margin + nc] = 1
    return LabelGrid(labels)


def generate_ellipsoid(spec: ShapeSpec, margin: int = 2) -> LabelGrid:
    """Rasterize an axis-aligned solid ellipsoid mask for ``spec``.

    Voxel centers inside the ellipsoid inequality are foreground. The
    sub-voxel center placement is chosen among 8 half-voxel offsets to
    bring the rasterized volume closest to the target.
    """
    if spec.kind != "ellipsoid":
        raise InvalidSpecError(f"spec kind is {spec.kind!r}, expected ellipsoid")
    a, b, c = ellipsoid_half_axes(spec)
    if min(a, b, c) * 2.0 < MIN_EDGE_VOXELS:
        raise InvalidSpecError(f"ellipsoid axes {(a, b, c)} too small to rasterize")
    dims = tuple(int(np.ceil(2 * h)) + 2 * margin for h in (a, b, c))
    coords = [np.arange(n, dtype=np.float64) for n in dims]
    best = None
    for offset in itertools.product((0.0, 0.5), repeat=3):
        centers = [(n - 1) / 2.0 + d for n, d in zip(dims, offset)]
        qx = ((coords[0] - centers[0]) / a) ** 2
        qy = ((coords[1] - centers[1]) / b) ** 2
        qz = ((coords[2] - centers[2]) / c) ** 2
        inside = qx[:, None, None] + qy[None, :, None] + qz[None, None, :] <= 1.0
        count = int(np.count_nonzero(inside))
        key = (abs(count - spec.v), offset)
        if best is None or key < best[0]:
            best = (key, inside)
    labels = best[1].astype(np.uint8)
    return LabelGrid(labels)


def sample_dataset(
    kind: str,
    n: int,
    seed: int,
    e_range=E_RANGE,
    f_range=F_RANGE,
    v_range=V_RANGE,
) -> list[ShapeSpec]:
    """Draw n i.i.d. shape specs from uniform parameter ranges."""
    if n < 1:
        raise InvalidSpecError("n must be >= 1")
    rng = np.random.default_rng(seed)
    specs = []
    for _ in range(n):
        e = rng.uniform(*e_range)
        f = rng.uniform(*f_range)
        v = rng.uniform(*v_range)
        specs.append(ShapeSpec(kind, e, f, v, seed=int(rng.integers(2**63))))
    return specs


def generate_shape(spec: ShapeSpec, margin: int = 2) -> LabelGrid:
    if spec.kind == "cuboid":
        return generate_cuboid(spec, margin)
    return generate_ellipsoid(spec, margin)


def shape_descriptors(mask: LabelGrid) -> ShapeDescriptor:
    """Principal-axis descriptor of a voxel mask.

    Eigen-decomposition of the coordinate covariance of foreground
    voxels; axes sorted by descending spread with the first nonzero
    component of each axis made positive. Degenerate spreads report
    elongation / flatness of 1 rather than failing.
    """
    coords = np.argwhere(mask.labels > 0).astype(np.float64)
    if len(coords) == 0:
        raise EmptyMaskError("descriptor of an empty mask")
    centroid = coords.mean(axis=0)
    if len(coords) == 1:
        return ShapeDescriptor(1, centroid, np.eye(3), np.zeros(3), 1.0, 1.0)
    cov = np.cov(coords.T, bias=True)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    axes = evecs[:, order].T
    for i in range(3):
        nz = np.nonzero(np.abs(axes[i]) > 1e-12)[0]
        if len(nz) and axes[i, nz[0]] < 0:
            axes[i] = -axes[i]
    lengths = np.sqrt(evals)
    tol = 1e-12
    elongation = lengths[0] / lengths[1] if lengths[1] > tol else 1.0
    flatness = lengths[1] / lengths[2] if lengths[2] > tol else 1.0
    return ShapeDescriptor(len(coords), centroid, axes, lengths, elongation, flatness)
