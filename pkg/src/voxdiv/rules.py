"""Ground-truth division rules: geometric plane splits and the stochastic
interface-area minimizer.

The geometric rules split a mother mask by a plane through its centroid,
orthogonal to a principal axis (longest axis for the shortest-path rule,
shortest axis for the anti-Hertwig rule). The stochastic rule anneals an
initially random two-coloring of the mask with single-voxel Metropolis
flips, minimizing interface face count under a soft volume-ratio penalty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DegeneratePatternError, EmptyMaskError, InvalidInputError
from .grid import DivisionPattern, LabelGrid, connected_components, interface_area
from .shapes import shape_descriptors

# Principal-axis ratios below 1 + AMBIG_EPS mean the rule's axis choice is
# not unique; the produced pattern is flagged rather than rejected.
AMBIG_EPS = 0.01


def plane_split(mask: LabelGrid, normal, point) -> DivisionPattern:
    """Split a mask by the plane through ``point`` with normal ``normal``.

    Voxels with (center - point) . normal <= 0 get label 1, the rest
    label 2 (exact zeros side with label 1).
    """
    normal = np.asarray(normal, dtype=np.float64)
    point = np.asarray(point, dtype=np.float64)
    if not np.any(normal != 0):
        raise InvalidInputError("plane normal must be nonzero")
    if np.any(point < -0.5) or np.any(point > np.array(mask.dims) - 0.5):
        raise InvalidInputError(f"plane point {point} lies outside the grid")
    fg = mask.labels > 0
    if not np.any(fg):
        raise EmptyMaskError("cannot split an empty mask")
    coords = np.indices(mask.dims, dtype=np.float64)
    signed = np.tensordot(normal, coords - point[:, None, None, None], axes=1)
    labels = np.where(signed <= 0.0, np.uint8(1), np.uint8(2)) * fg
    if not (np.any(labels == 1) and np.any(labels == 2)):
        raise DegeneratePatternError("plane split left one daughter empty")
    return DivisionPattern(mask.with_labels(labels))


def _axis_rule(mask: LabelGrid, which: str) -> DivisionPattern:
    desc = shape_descriptors(mask)
    lengths = desc.axis_lengths
    if which == "longest":
        ambiguous = lengths[1] <= 1e-12 or lengths[0] / lengths[1] < 1.0 + AMBIG_EPS
        tied = [
            i for i in range(3)
            if lengths[i] > 1e-12 and lengths[0] / lengths[i] < 1.0 + AMBIG_EPS
        ] or [0]
    else:
        ambiguous = lengths[2] <= 1e-12 or lengths[1] / lengths[2] < 1.0 + AMBIG_EPS
        tied = [
            i for i in range(3)
            if lengths[2] <= 1e-12 or lengths[i] / lengths[2] < 1.0 + AMBIG_EPS
        ] or [2]
    # Deterministic tie-break: lexicographically smallest axis vector.
    axis = min((tuple(desc.axes[i]) for i in tied))
    pattern = plane_split(mask, np.array(axis), desc.centroid)
    return DivisionPattern(pattern.grid, warn_ambiguous=bool(ambiguous))


def errera_axis_rule(mask: LabelGrid) -> DivisionPattern:
    """Symmetric split orthogonal to the longest principal axis.

    For cuboids and ellipsoids this coincides with minimizing the
    daughter contact area under equal-volume division. Near-isotropic
    shapes get ``warn_ambiguous`` set on the result.
    """
    return _axis_rule(mask, "longest")


def anti_hertwig_rule(mask: LabelGrid) -> DivisionPattern:
    """Symmetric split orthogonal to the shortest principal axis."""
    return _axis_rule(mask, "shortest")


@dataclass(frozen=True)
class MetropolisParams:
    """Annealing schedule for the stochastic partitioner.

    The chain occasionally freezes into a flat interface of the wrong
    orientation (a deep local minimum no schedule escapes), so a run
    consists of ``restarts`` independent chains with derived seeds and
    returns the best-energy pattern across them.
    """

    target_ratio: float = 0.5
    ratio_penalty_weight: float = 10.0
    initial_temperature: float = 2.0
    cooling: float = 0.993
    sweeps: int = 1200
    restarts: int = 3
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.target_ratio <= 0.5):
            raise InvalidInputError("target_ratio must be in (0, 0.5]")
        if self.initial_temperature <= 0:
            raise InvalidInputError("initial_temperature must be > 0")
        if not (0.0 < self.cooling < 1.0):
            raise InvalidInputError("cooling factor must be in (0, 1)")
        if self.sweeps < 1 or self.restarts < 1:
            raise InvalidInputError("sweeps and restarts must be >= 1")


@dataclass
class MetropolisResult:
    pattern: DivisionPattern
    energy: float  # energy of the returned (cleaned-up) pattern
    initial_energy: float
    best_energy: float  # best chain energy before connectivity cleanup
    energy_curve: np.ndarray  # best-so-far energy after each sweep


@njit(cache=True)
def _anneal(labels, mask_idx, offs, target, lam, t0, gamma, sweeps, seed):
    np.random.seed(seed)
    total = mask_idx.size

    v1 = 0
    for n in range(total):
        if np.random.random() < 0.5:
            labels[mask_idx[n]] = 1
            v1 += 1
        else:
            labels[mask_idx[n]] = 2
    if v1 == 0:
        labels[mask_idx[0]] = 1
        v1 = 1
    elif v1 == total:
        labels[mask_idx[0]] = 2
        v1 = total - 1

    faces = 0
    for n in range(total):
        i = mask_idx[n]
        li = labels[i]
        for k in range(6):
            lj = labels[i + offs[k]]
            if lj != 0 and lj != li:
                faces += 1
    faces //= 2

    # Active set: in-mask voxels with at least one opposite-label neighbor.
    pos = np.full(labels.size, -1, dtype=np.int64)
    act = np.empty(total, dtype=np.int64)
    nact = 0
    for n in range(total):
        i = mask_idx[n]
        li = labels[i]
        lo = 3 - li
        for k in range(6):
            if labels[i + offs[k]] == lo:
                act[nact] = i
                pos[i] = nact
                nact += 1
                break

    def _pen(v, tot, tgt, w):
        r = min(v, tot - v) / tot
        return w * (r - tgt) * (r - tgt) * tot

    energy = faces + _pen(v1, total, target, lam)
    initial_energy = energy
    best = labels.copy()
    best_energy = energy
    curve = np.empty(sweeps, dtype=np.float64)

    temp = t0
    for sweep in range(sweeps):
        for _ in range(total):
            if nact == 0:
                break
            i = act[np.random.randint(nact)]
            li = labels[i]
            lo = 3 - li
            nsame = 0
            nopp = 0
            for k in range(6):
                lj = labels[i + offs[k]]
                if lj == li:
                    nsame += 1
                elif lj == lo:
                    nopp += 1
            new_v1 = v1 + (1 if li == 2 else -1)
            delta = (nsame - nopp) + _pen(new_v1, total, target, lam) - _pen(
                v1, total, target, lam
            )
            if delta <= 0.0 or np.random.random() < math.exp(-delta / temp):
                labels[i] = lo
                v1 = new_v1
                faces += nsame - nopp
                energy += delta
                # Refresh active-set membership of the voxel and neighbors.
                for k in range(7):
                    j = i if k == 6 else i + offs[k]
                    lj = labels[j]
                    if lj == 0:
                        continue
                    eligible = False
                    lj_opp = 3 - lj
                    for m in range(6):
                        if labels[j + offs[m]] == lj_opp:
                            eligible = True
                            break
                    p = pos[j]
                    if eligible and p < 0:
                        act[nact] = j
                        pos[j] = nact
                        nact += 1
                    elif not eligible and p >= 0:
                        nact -= 1
                        moved = act[nact]
                        act[p] = moved
                        pos[moved] = p
                        pos[j] = -1
        temp *= gamma
        if energy < best_energy:
            best_energy = energy
            best[:] = labels
        curve[sweep] = best_energy

    return best, initial_energy, best_energy, curve


def _enforce_connected(labels: np.ndarray) -> np.ndarray:
    """Reassign minority disconnected components until both daughters are
    6-connected."""
    labels = labels.copy()
    for _ in range(16):
        changed = False
        for side in (1, 2):
            comps, ncomp = connected_components(labels == side)
            if ncomp <= 1:
                continue
            sizes = np.bincount(comps.reshape(-1))[1:]
            keep = int(np.argmax(sizes)) + 1
            labels[(comps != 0) & (comps != keep)] = 3 - side
            changed = True
        if not changed:
            return labels
    return labels


def pattern_energy(pattern: DivisionPattern, params: MetropolisParams) -> float:
    """Interface face count plus the soft volume-ratio penalty."""
    v1, v2 = pattern.daughter_volumes()
    total = v1 + v2
    r = min(v1, v2) / total
    return interface_area(pattern) + params.ratio_penalty_weight * (
        r - params.target_ratio
    ) ** 2 * total


def run_metropolis(mask: LabelGrid, params: MetropolisParams) -> MetropolisResult:
    """Anneal a random two-coloring of ``mask`` into a low-area division."""
    fg = mask.labels > 0
    total = int(np.count_nonzero(fg))
    if total < 100:
        raise InvalidInputError(f"mask volume {total} too small (need >= 100)")

    padded = np.pad(mask.labels, 1).astype(np.int8)
    mask_idx = np.flatnonzero(padded > 0).astype(np.int64)
    ny, nz = padded.shape[1], padded.shape[2]
    offs = np.array([ny * nz, -ny * nz, nz, -nz, 1, -1], dtype=np.int64)
    chain_seeds = np.random.SeedSequence(params.seed % (2**32)).generate_state(
        params.restarts
    )

    winner = None
    for chain_seed in chain_seeds:
        flat = np.zeros(padded.size, dtype=np.int8)
        best, e_init, e_best, curve = _anneal(
            flat,
            mask_idx,
            offs,
            params.target_ratio,
            params.ratio_penalty_weight,
            params.initial_temperature,
            params.cooling,
            params.sweeps,
            int(chain_seed),
        )
        result = best.reshape(padded.shape)[1:-1, 1:-1, 1:-1].astype(np.uint8)
        if not (np.any(result == 1) and np.any(result == 2)):
            continue
        result = _enforce_connected(result)
        if not (np.any(result == 1) and np.any(result == 2)):
            continue
        pattern = DivisionPattern(mask.with_labels(result))
        candidate = MetropolisResult(
            pattern=pattern,
            energy=pattern_energy(pattern, params),
            initial_energy=float(e_init),
            best_energy=float(e_best),
            energy_curve=curve,
        )
        if winner is None or candidate.energy < winner.energy:
            winner = candidate
    if winner is None:
        raise DegeneratePatternError("no chain produced two nonempty daughters")
    return winner


def metropolis_partition(mask: LabelGrid, params: MetropolisParams) -> DivisionPattern:
    return run_metropolis(mask, params).pattern
