import math

import mpmath
import numpy as np
import pytest

from baf.errors import DataError
from baf.nn import bce_loss, mse_loss


def test_mse_identity_is_zero():
    x = np.random.default_rng(0).standard_normal((4, 5))
    loss, grad = mse_loss(x, x)
    assert loss == 0.0
    assert np.all(grad == 0.0)


def test_mse_analytic_case():
    loss, grad = mse_loss(np.array([1.0, 1.0]), np.array([0.0, 0.0]))
    assert loss == 1.0
    assert np.allclose(grad, [1.0, 1.0])  # 2*diff/n with n=2


def test_mse_matches_scalar_loop():
    rng = np.random.default_rng(9)
    pred = rng.standard_normal((3, 7))
    target = rng.standard_normal((3, 7))
    loss, grad = mse_loss(pred, target)
    acc = 0.0
    for p, t in zip(pred.ravel(), target.ravel()):
        acc += (p - t) ** 2
    assert abs(loss - acc / pred.size) <= 1e-12
    for (i, j) in [(0, 0), (2, 6), (1, 3)]:
        assert abs(grad[i, j] - 2 * (pred[i, j] - target[i, j]) / pred.size) <= 1e-15


def test_mse_shape_mismatch():
    with pytest.raises(DataError):
        mse_loss(np.zeros(3), np.zeros(4))


def test_bce_logit_zero_label_one_is_ln2():
    loss, grad = bce_loss(np.array([0.0]), np.array([1.0]))
    assert abs(loss - math.log(2.0)) <= 1e-15
    assert abs(grad[0] - (0.5 - 1.0)) <= 1e-15


def test_bce_large_logit_is_stable():
    loss, _ = bce_loss(np.array([50.0]), np.array([1.0]))
    assert 0.0 <= loss < 1e-20
    loss, _ = bce_loss(np.array([-800.0]), np.array([0.0]))
    assert np.isfinite(loss) and loss < 1e-200
    loss, _ = bce_loss(np.array([800.0]), np.array([0.0]))
    assert np.isfinite(loss) and abs(loss - 800.0) <= 1e-9


def test_bce_rejects_soft_labels():
    with pytest.raises(DataError, match="labels"):
        bce_loss(np.zeros(2), np.array([0.5, 1.0]))


def test_bce_matches_high_precision_oracle():
    rng = np.random.default_rng(123)
    z = rng.uniform(-30, 30, size=64)
    y = (rng.random(64) > 0.5).astype(float)
    loss, grad = bce_loss(z, y)

    with mpmath.workdps(50):
        total = mpmath.mpf(0)
        for zi, yi in zip(z, y):
            s = 1 / (1 + mpmath.exp(-mpmath.mpf(zi)))
            total += -(mpmath.mpf(yi) * mpmath.log(s) + (1 - mpmath.mpf(yi)) * mpmath.log(1 - s))
        expected = float(total / len(z))
    assert abs(loss - expected) <= 1e-10

    sig = 1.0 / (1.0 + np.exp(-z))
    assert np.max(np.abs(grad - (sig - y) / z.size)) <= 1e-12


def test_losses_are_nonnegative():
    rng = np.random.default_rng(4)
    for _ in range(20):
        a = rng.standard_normal(10)
        b = rng.standard_normal(10)
        assert mse_loss(a, b)[0] >= 0.0
        assert bce_loss(a, (rng.random(10) > 0.3).astype(float))[0] >= 0.0
