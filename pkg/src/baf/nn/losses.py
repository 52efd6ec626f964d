"""Reconstruction and adversarial losses with their input gradients."""

from __future__ import annotations

import numpy as np

from ..errors import DataError
from .layers import _sigmoid


def sigmoid(x: np.ndarray) -> np.ndarray:
    return _sigmoid(np.asarray(x, dtype=np.float64))


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all elements; grad = 2(pred - target)/n."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DataError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    n = pred.size
    diff = pred - target
    loss = float(np.sum(diff * diff) / n)
    return loss, 2.0 * diff / n


def bce_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Binary cross entropy on raw logits, in the overflow-safe form.

    Per element: max(z, 0) - z*y + log(1 + exp(-|z|)). Gradient is
    (sigmoid(z) - y)/n.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if z.shape != y.shape:
        raise DataError(f"bce shapes differ: {z.shape} vs {y.shape}")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise DataError("bce labels must be 0 or 1")
    n = z.size
    per_elem = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    loss = float(np.sum(per_elem) / n)
    return loss, (_sigmoid(z) - y) / n
