"""Masked cross-entropy, masked accuracy, and label-symmetric variants.

All metrics gate on the target label being nonzero, so background voxels
never contribute. The symmetric forms compare against the target and
against the target with daughter labels swapped, keeping the better of
the two, which makes training and scoring independent of which daughter
was called "1".
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import EmptyMaskError
from .grid import DivisionPattern

IDENTITY = "identity"
SWAPPED = "swapped"

EVAL_CSV_COLUMNS = ["cell_id", "accuracy", "loss", "volume_ratio", "permutation"]


@dataclass(frozen=True)
class EvalRecord:
    cell_id: str
    accuracy: float
    loss: float
    volume_ratio: float
    permutation: str


def write_eval_csv(path, records: list[EvalRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EVAL_CSV_COLUMNS)
        for r in records:
            writer.writerow([r.cell_id, repr(r.accuracy), repr(r.loss),
                             repr(r.volume_ratio), r.permutation])


def swap_labels(target: DivisionPattern) -> DivisionPattern:
    """Exchange daughter labels 1 <-> 2 (an involution; 0 stays fixed)."""
    lut = np.array([0, 2, 1], dtype=np.uint8)
    return DivisionPattern(target.grid.with_labels(lut[target.grid.labels]))


def _log_softmax2(logits: np.ndarray) -> np.ndarray:
    """Stable per-voxel log-softmax over the 2-channel axis 1."""
    m = logits.max(axis=1, keepdims=True)
    z = logits - m
    lse = np.log(np.exp(z[:, 0:1]) + np.exp(z[:, 1:2]))
    return z - lse


def batch_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample mean negative log-likelihood over in-mask voxels.

    ``logits`` is (batch, 2, nx, ny, nz); ``labels`` is (batch, nx, ny, nz)
    with values in {0, 1, 2}. Returns a (batch,) array.
    """
    gate = labels > 0
    counts = gate.sum(axis=(1, 2, 3))
    if np.any(counts == 0):
        raise EmptyMaskError("target has no in-mask voxels")
    logp = _log_softmax2(logits)
    channel = np.clip(labels.astype(np.int64) - 1, 0, 1)
    picked = np.take_along_axis(logp, channel[:, None], axis=1)[:, 0]
    return -(picked * gate).sum(axis=(1, 2, 3)) / counts


def batch_cross_entropy_grad(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of ``batch_cross_entropy(...).mean()`` w.r.t. the logits."""
    gate = (labels > 0).astype(logits.dtype)
    counts = gate.sum(axis=(1, 2, 3))
    p = np.exp(_log_softmax2(logits))
    onehot = np.stack([(labels == 1), (labels == 2)], axis=1).astype(logits.dtype)
    scale = (gate / counts[:, None, None, None] / logits.shape[0])[:, None]
    return (p - onehot) * scale


def batch_accuracy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample fraction of in-mask voxels whose argmax channel matches
    the target label; channel ties resolve to label 1."""
    gate = labels > 0
    counts = gate.sum(axis=(1, 2, 3))
    if np.any(counts == 0):
        raise EmptyMaskError("target has no in-mask voxels")
    pred = np.where(logits[:, 1] > logits[:, 0], 2, 1).astype(labels.dtype)
    hits = (pred == labels) & gate
    return hits.sum(axis=(1, 2, 3)) / counts


def _swap_label_array(labels: np.ndarray) -> np.ndarray:
    lut = np.array([0, 2, 1], dtype=labels.dtype)
    return lut[labels]


def batch_symmetric_cross_entropy(logits, labels):
    """Per-sample min of the cross-entropy against the target and the
    label-swapped target. Returns (losses, swapped_flags); ties keep
    the identity permutation."""
    ce_id = batch_cross_entropy(logits, labels)
    ce_sw = batch_cross_entropy(logits, _swap_label_array(labels))
    swapped = ce_sw < ce_id
    return np.where(swapped, ce_sw, ce_id), swapped


def batch_symmetric_cross_entropy_grad(logits, labels):
    """Gradient of the mean symmetric loss: each sample backpropagates
    through its winning permutation."""
    _, swapped = batch_symmetric_cross_entropy(logits, labels)
    effective = labels.copy()
    if np.any(swapped):
        effective[swapped] = _swap_label_array(labels[swapped])
    return batch_cross_entropy_grad(logits, effective), swapped


def batch_symmetric_accuracy(logits, labels, permutation=None):
    """Per-sample max of accuracy against the target and the swapped
    target. Passing ``permutation`` (bool array: True = swapped) scores
    that fixed permutation instead, e.g. the one the loss selected."""
    acc_id = batch_accuracy(logits, labels)
    acc_sw = batch_accuracy(logits, _swap_label_array(labels))
    if permutation is None:
        return np.maximum(acc_id, acc_sw), acc_sw > acc_id
    permutation = np.asarray(permutation, dtype=bool)
    return np.where(permutation, acc_sw, acc_id), permutation


def _as_batch(logits, target: DivisionPattern):
    arr = logits.values if hasattr(logits, "values") else np.asarray(logits)
    if arr.ndim == 4:
        arr = arr[None]
    return arr, target.grid.labels[None]


def masked_cross_entropy(logits, target: DivisionPattern) -> float:
    """Mean in-mask negative log-likelihood of a single prediction."""
    arr, labels = _as_batch(logits, target)
    return float(batch_cross_entropy(arr, labels)[0])


def masked_accuracy(logits, target: DivisionPattern) -> float:
    arr, labels = _as_batch(logits, target)
    return float(batch_accuracy(arr, labels)[0])


def pattern_accuracy(prediction: DivisionPattern, target: DivisionPattern) -> float:
    """Symmetric accuracy between two label patterns on the same mask."""
    gate = target.grid.labels > 0
    n = int(gate.sum())
    pred = prediction.grid.labels
    acc_id = int(((pred == target.grid.labels) & gate).sum()) / n
    acc_sw = int(((pred == _swap_label_array(target.grid.labels)) & gate).sum()) / n
    return max(acc_id, acc_sw)


def symmetric_loss(logits, target: DivisionPattern) -> tuple[float, str]:
    arr, labels = _as_batch(logits, target)
    losses, swapped = batch_symmetric_cross_entropy(arr, labels)
    return float(losses[0]), SWAPPED if swapped[0] else IDENTITY


def symmetric_accuracy(logits, target: DivisionPattern, use_loss_permutation=False):
    """Label-symmetric accuracy; by default the max over permutations.

    With ``use_loss_permutation`` the permutation that won the symmetric
    loss is reused instead of maximizing accuracy independently.
    """
    arr, labels = _as_batch(logits, target)
    if use_loss_permutation:
        _, swapped = batch_symmetric_cross_entropy(arr, labels)
        accs, perm = batch_symmetric_accuracy(arr, labels, permutation=swapped)
    else:
        accs, perm = batch_symmetric_accuracy(arr, labels)
    return float(accs[0]), SWAPPED if perm[0] else IDENTITY
