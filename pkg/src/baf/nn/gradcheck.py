"""Central finite-difference verification of the analytic gradients."""

from __future__ import annotations

import numpy as np

from ..errors import DataError
from .layers import Activation, MaxPool2x2, Network
from .losses import bce_loss, mse_loss

MAX_CHECK_PARAMS = 10_000


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic) + abs(numeric), floor)


def _loss_and_grad(kind: str, output: np.ndarray, target: np.ndarray):
    if kind == "mse":
        return mse_loss(output, target)
    if kind == "bce":
        return bce_loss(output, target)
    raise DataError(f"unknown loss kind {kind!r}")


def _default_target(kind: str, output: np.ndarray) -> np.ndarray:
    if kind == "mse":
        return np.zeros_like(output)
    # Deterministic 0/1 checkerboard for bce.
    flat = np.arange(output.size) % 2
    return flat.reshape(output.shape).astype(np.float64)


def grad_check(net: Network, x: np.ndarray, loss: str = "mse",
               target: np.ndarray | None = None, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference parameter gradients."""
    params = net.parameters()
    total = sum(p.size for p in params.values())
    if total > MAX_CHECK_PARAMS:
        raise DataError(f"grad_check limited to {MAX_CHECK_PARAMS} parameters, net has {total}")

    out, caches = net.forward(x)
    if target is None:
        target = _default_target(loss, out)
    _, dout = _loss_and_grad(loss, out, target)
    _, grads = net.backward(caches, dout)

    worst = 0.0
    for pid, p in params.items():
        analytic = grads.get(pid, np.zeros_like(p))
        flat = p.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lo_plus, _ = _loss_and_grad(loss, net.forward(x)[0], target)
            flat[i] = orig - eps
            lo_minus, _ = _loss_and_grad(loss, net.forward(x)[0], target)
            flat[i] = orig
            numeric = (lo_plus - lo_minus) / (2.0 * eps)
            worst = max(worst, relative_error(analytic.ravel()[i], numeric))
    return worst


def kink_margin(net: Network, x: np.ndarray) -> float:
    """Smallest margin to a ReLU kink or pooling tie along the forward pass.

    Finite differences are only trustworthy away from these
    non-differentiable points; callers can use the margin to reject a
    configuration before checking it.
    """
    margin = np.inf
    h = np.asarray(x, dtype=np.float64)
    for layer in net.layers:
        if isinstance(layer, Activation) and layer.fn == "relu":
            margin = min(margin, float(np.min(np.abs(h))))
        if isinstance(layer, MaxPool2x2):
            windows = np.sort(layer._windows(h), axis=-1)
            margin = min(margin, float(np.min(windows[..., -1] - windows[..., -2])))
        h, _ = layer.forward(h)
    return margin
