"""Binary soft-margin SVM with an RBF kernel, trained by SMO.

The dual problem  min 0.5*a'Qa - sum(a)  s.t.  y'a = 0, 0 <= a <= C
(with Q_ij = y_i y_j K_ij) is solved by sequential minimal optimization
using the first-order maximal-violating-pair working set. External labels
are {0, 1} with the positive class mapped to +1 internally.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .artifacts import floats_from_bytes, floats_to_bytes, read_container, write_container
from .errors import DataError, FormatError

SVM_MAGIC = "BAFSVM1"
_TAU = 1e-12  # curvature floor for the two-variable subproblem
_SV_EPS = 1e-12


@dataclass(frozen=True)
class SvmHyper:
    c: float
    gamma: float

    def __post_init__(self):
        if not (self.c > 0 and self.gamma > 0):
            raise DataError("C and gamma must both be strictly positive")


@dataclass
class TrainOptions:
    tol: float = 1e-3
    max_iter: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if not self.tol > 0:
            raise DataError("KKT tolerance must be positive")


@dataclass
class SvmModel:
    support_vectors: np.ndarray  # (m, d)
    dual_coef: np.ndarray        # (m,) alpha_i * y_i
    bias: float
    hyper: SvmHyper
    n_features: int


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    d2 = (
        np.sum(A * A, axis=1)[:, None]
        + np.sum(B * B, axis=1)[None, :]
        - 2.0 * (A @ B.T)
    )
    return np.exp(-gamma * np.maximum(d2, 0.0))


def _coerce_labels(y) -> np.ndarray:
    y = np.asarray(y)
    vals = set(np.unique(y).tolist())
    if vals <= {0, 1}:
        return np.where(y == 1, 1.0, -1.0)
    if vals <= {-1, 1}:
        return y.astype(np.float64)
    raise DataError(f"labels must be in {{0,1}} or {{-1,+1}}, got {sorted(vals)}")


def smo_solve(K: np.ndarray, y: np.ndarray, c: float,
              tol: float = 1e-3, max_iter: int = 100_000):
    """SMO on a precomputed kernel; returns (alpha, bias, n_iterations).

    Keeps y'a = 0 exactly by construction of the pair updates.
    """
    n = K.shape[0]
    Q = (y[:, None] * y[None, :]) * K
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of the dual objective at alpha = 0

    it = 0
    for it in range(1, max_iter + 1):
        minus_yg = -y * grad
        up = ((y > 0) & (alpha < c - _SV_EPS)) | ((y < 0) & (alpha > _SV_EPS))
        low = ((y > 0) & (alpha > _SV_EPS)) | ((y < 0) & (alpha < c - _SV_EPS))
        if not up.any() or not low.any():
            break
        i = int(np.flatnonzero(up)[np.argmax(minus_yg[up])])
        j = int(np.flatnonzero(low)[np.argmin(minus_yg[low])])
        if minus_yg[i] - minus_yg[j] <= tol:
            break

        ai_old, aj_old = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = Q[i, i] + Q[j, j] + 2.0 * Q[i, j]
            delta = (-grad[i] - grad[j]) / max(quad, _TAU)
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if diff > 0:
                if aj < 0:
                    ai, aj = diff, 0.0
            else:
                if ai < 0:
                    ai, aj = 0.0, -diff
            if diff > 0:
                if ai > c:
                    ai, aj = c, c - diff
            else:
                if aj > c:
                    ai, aj = c + diff, c
        else:
            quad = Q[i, i] + Q[j, j] - 2.0 * Q[i, j]
            delta = (grad[i] - grad[j]) / max(quad, _TAU)
            total = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if total > c:
                if ai > c:
                    ai, aj = c, total - c
                if aj > c:
                    ai, aj = total - c, c
            else:
                if aj < 0:
                    ai, aj = total, 0.0
                if ai < 0:
                    ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        grad += Q[:, i] * (ai - ai_old) + Q[:, j] * (aj - aj_old)
    else:
        warnings.warn(f"SMO hit max_iter={max_iter} before reaching tol={tol}")

    minus_yg = -y * grad
    free = (alpha > _SV_EPS) & (alpha < c - _SV_EPS)
    if free.any():
        bias = float(minus_yg[free].mean())
    else:
        up = ((y > 0) & (alpha < c - _SV_EPS)) | ((y < 0) & (alpha > _SV_EPS))
        low = ((y > 0) & (alpha > _SV_EPS)) | ((y < 0) & (alpha < c - _SV_EPS))
        hi = minus_yg[up].max() if up.any() else 0.0
        lo = minus_yg[low].min() if low.any() else 0.0
        bias = float((hi + lo) / 2.0)
    return alpha, bias, it


def dual_objective(K: np.ndarray, y: np.ndarray, alpha: np.ndarray) -> float:
    Q = (y[:, None] * y[None, :]) * K
    return float(0.5 * alpha @ Q @ alpha - alpha.sum())


def train_svm(X, y, hyper: SvmHyper, opts: TrainOptions | None = None) -> SvmModel:
    opts = opts or TrainOptions()
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DataError("need an (n >= 2, d) training matrix")
    if not np.all(np.isfinite(X)):
        raise DataError("training features must be finite")
    ypm = _coerce_labels(y)
    if len(np.unique(ypm)) < 2:
        raise DataError("training labels contain a single class")

    K = rbf_kernel(X, X, hyper.gamma)
    alpha, bias, _ = smo_solve(K, ypm, hyper.c, opts.tol, opts.max_iter)
    sv = alpha > _SV_EPS
    return SvmModel(
        support_vectors=X[sv].copy(),
        dual_coef=(alpha * ypm)[sv],
        bias=bias,
        hyper=hyper,
        n_features=X.shape[1],
    )


def decision_values(model: SvmModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None]
    if X.shape[1] != model.n_features:
        raise DataError(f"expected {model.n_features} features, got {X.shape[1]}")
    K = rbf_kernel(X, model.support_vectors, model.hyper.gamma)
    vals = K @ model.dual_coef + model.bias
    return vals[0] if single else vals


def predict(model: SvmModel, x) -> tuple[int, float] | tuple[np.ndarray, np.ndarray]:
    """Label in {0, 1} (1 iff the decision value is positive) plus the value itself."""
    vals = decision_values(model, x)
    if np.ndim(vals) == 0:
        return int(vals > 0), float(vals)
    return (vals > 0).astype(int), vals


def grid_search(X_train, y_train, X_val, y_val, c_grid, gamma_grid,
                opts: TrainOptions | None = None) -> SvmHyper:
    """Best (C, gamma) by validation accuracy; ties prefer smaller C then gamma."""
    if len(c_grid) == 0 or len(gamma_grid) == 0:
        raise DataError("hyperparameter grids must be non-empty")
    y_val = np.asarray(y_val)
    best = None
    best_acc = -1.0
    for c in sorted(c_grid):
        for gamma in sorted(gamma_grid):
            hyper = SvmHyper(c=float(c), gamma=float(gamma))
            model = train_svm(X_train, y_train, hyper, opts)
            labels, _ = predict(model, X_val)
            acc = float(np.mean(labels == _to01(y_val)))
            if acc > best_acc:
                best, best_acc = hyper, acc
    return best


def _to01(y) -> np.ndarray:
    y = np.asarray(y)
    return np.where(y == 1, 1, 0) if set(np.unique(y)) <= {0, 1} else np.where(y > 0, 1, 0)


def save_svm(path, model: SvmModel) -> None:
    header = {
        "c": model.hyper.c,
        "gamma": model.hyper.gamma,
        "bias": model.bias,
        "n_sv": int(model.support_vectors.shape[0]),
        "dim": model.n_features,
    }
    payload = floats_to_bytes(model.support_vectors) + floats_to_bytes(model.dual_coef)
    write_container(path, SVM_MAGIC, header, payload)


def load_svm(path) -> SvmModel:
    header, payload = read_container(path, SVM_MAGIC)
    sv, offset = floats_from_bytes(payload, (header["n_sv"], header["dim"]))
    coef, offset = floats_from_bytes(payload, (header["n_sv"],), offset)
    if offset != len(payload):
        raise FormatError(f"{path}: trailing bytes in SVM payload")
    return SvmModel(
        support_vectors=sv,
        dual_coef=coef,
        bias=header["bias"],
        hyper=SvmHyper(c=header["c"], gamma=header["gamma"]),
        n_features=header["dim"],
    )


class SmoSvc(BaseEstimator, ClassifierMixin):
    """Estimator facade over the SMO trainer (labels in {0, 1})."""

    def __init__(self, c=1.0, gamma=0.1, tol=1e-3, max_iter=100_000):
        self.c = c
        self.gamma = gamma
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        self.model_ = train_svm(X, y, SvmHyper(self.c, self.gamma),
                                TrainOptions(tol=self.tol, max_iter=self.max_iter))
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return decision_values(self.model_, check_array(X, dtype=np.float64))

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) > 0).astype(int)
