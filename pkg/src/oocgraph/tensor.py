"""Dense float64 primitives used by the graph-convolution stack.

A "matrix" here is simply a 2-D ``numpy.ndarray`` of dtype float64. The
functions below add the shape checks and numerical guards the rest of the
package relies on; everything else is plain numpy.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import LabelIndexError, ShapeError

PROB_FLOOR = 1e-12


def as_matrix(values, cols: int | None = None) -> np.ndarray:
    """Coerce ``values`` to a 2-D float64 array (a copy is not guaranteed)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1 and cols is not None:
        arr = arr.reshape(-1, cols)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {arr.shape}")
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Softmax along the last axis with per-row max subtraction."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(labels: Sequence[int], num_classes: int) -> np.ndarray:
    idx = np.asarray(labels, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= num_classes):
        raise LabelIndexError(f"label outside [0, {num_classes}): {idx.tolist()}")
    out = np.zeros((idx.size, num_classes))
    out[np.arange(idx.size), idx] = 1.0
    return out


def cross_entropy(probs: np.ndarray, targets: Sequence[int]) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood and its gradient w.r.t. the logits.

    ``probs`` must be the softmax of the logits the gradient refers to; the
    returned gradient is ``(probs - onehot) / rows``.
    """
    if probs.ndim != 2:
        raise ShapeError(f"probs must be 2-D, got {probs.shape}")
    rows, cols = probs.shape
    idx = np.asarray(targets, dtype=np.int64)
    if idx.shape != (rows,):
        raise ShapeError(f"{rows} rows but {idx.shape} targets")
    onehot = one_hot(idx, cols)
    picked = probs[np.arange(rows), idx]
    loss = float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())
    return loss, (probs - onehot) / rows
