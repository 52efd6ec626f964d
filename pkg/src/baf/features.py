"""Feature assembly, z-scoring, and greedy forward selection.

A subject's vector concatenates one block per (region, metric) pair --
SCC metrics first, then thalamus metrics, each in MetricId order -- and
ends with age and sex (M=0, F=1). With N-word histograms that is
N*14 + 2 scalars (282 at N=20); the statistical baseline has 5*14 + 2 = 72.
Selection works at single-scalar granularity over these columns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .bow import STAT_NAMES
from .errors import DataError, FormatError, InputError
from .splits import make_stratified_splits
from .svm import SvmHyper, TrainOptions, train_svm, predict
from .volumes import LABELS, REGION_METRIC_PAIRS, MetricId, RegionId

KIND_HISTOGRAM = "histogram_bin"
KIND_STATISTIC = "statistic"
KIND_DEMOGRAPHIC = "demographic"

SEX_CODES = {"M": 0.0, "F": 1.0}


@dataclass(frozen=True)
class FeatureDescriptor:
    kind: str
    detail: str
    metric: MetricId | None = None
    region: RegionId | None = None

    @property
    def name(self) -> str:
        if self.kind == KIND_DEMOGRAPHIC:
            return self.detail
        return f"{self.metric.name}_{self.region.name}_{self.detail}"


def bow_descriptors(n_words: int) -> list[FeatureDescriptor]:
    descs = [
        FeatureDescriptor(KIND_HISTOGRAM, f"w{k}", metric, region)
        for region, metric in REGION_METRIC_PAIRS
        for k in range(n_words)
    ]
    descs += [FeatureDescriptor(KIND_DEMOGRAPHIC, "age"), FeatureDescriptor(KIND_DEMOGRAPHIC, "sex")]
    return descs


def stats_descriptors() -> list[FeatureDescriptor]:
    descs = [
        FeatureDescriptor(KIND_STATISTIC, stat, metric, region)
        for region, metric in REGION_METRIC_PAIRS
        for stat in STAT_NAMES
    ]
    descs += [FeatureDescriptor(KIND_DEMOGRAPHIC, "age"), FeatureDescriptor(KIND_DEMOGRAPHIC, "sex")]
    return descs


def descriptor_from_name(name: str) -> FeatureDescriptor:
    if name in ("age", "sex"):
        return FeatureDescriptor(KIND_DEMOGRAPHIC, name)
    parts = name.split("_")
    if len(parts) != 3:
        raise FormatError(f"unparseable feature name {name!r}")
    metric, region, detail = parts
    kind = KIND_HISTOGRAM if detail.startswith("w") and detail[1:].isdigit() else KIND_STATISTIC
    if kind == KIND_STATISTIC and detail not in STAT_NAMES:
        raise FormatError(f"unknown statistic in feature name {name!r}")
    return FeatureDescriptor(kind, detail, MetricId[metric], RegionId[region])


def assemble_features(blocks: dict, age: float, sex: str, block_width: int) -> np.ndarray:
    """Concatenate per-(region, metric) blocks in canonical order plus demographics."""
    if sex not in SEX_CODES:
        raise DataError(f"unknown sex code {sex!r}")
    parts = []
    for region, metric in REGION_METRIC_PAIRS:
        if (region, metric) not in blocks:
            raise DataError(f"missing feature block for {region.name}/{metric.name}")
        block = np.asarray(blocks[(region, metric)], dtype=np.float64)
        if block.shape != (block_width,):
            raise DataError(
                f"block {region.name}/{metric.name} has shape {block.shape}, expected ({block_width},)")
        parts.append(block)
    parts.append(np.array([float(age), SEX_CODES[sex]]))
    vec = np.concatenate(parts)
    if not np.all(np.isfinite(vec)):
        raise DataError("assembled feature vector contains non-finite values")
    return vec


@dataclass
class FeatureMatrix:
    values: np.ndarray            # (n, D)
    labels01: np.ndarray          # (n,)
    subject_ids: list[str]
    descriptors: list[FeatureDescriptor]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.labels01 = np.asarray(self.labels01, dtype=int)
        if self.values.shape != (len(self.subject_ids), len(self.descriptors)):
            raise DataError("feature matrix shape does not match ids/descriptors")
        names = [d.name for d in self.descriptors]
        if len(set(names)) != len(names):
            raise DataError("descriptor names must be unique")

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def rows(self, idx) -> "FeatureMatrix":
        idx = np.asarray(idx)
        return FeatureMatrix(self.values[idx], self.labels01[idx],
                             [self.subject_ids[i] for i in idx], self.descriptors)

    def column_index(self, name: str) -> int:
        for i, d in enumerate(self.descriptors):
            if d.name == name:
                return i
        raise DataError(f"no feature named {name!r}")


def save_feature_matrix(path, fm: FeatureMatrix) -> None:
    lines = ["subject_id,label," + ",".join(d.name for d in fm.descriptors)]
    for sid, lab, row in zip(fm.subject_ids, fm.labels01, fm.values):
        lines.append(f"{sid},{LABELS[lab]}," + ",".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_feature_matrix(path) -> FeatureMatrix:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"no feature matrix at {path}")
    lines = path.read_text().strip().split("\n")
    header = lines[0].split(",")
    if header[:2] != ["subject_id", "label"]:
        raise FormatError(f"{path}: bad feature CSV header")
    descriptors = [descriptor_from_name(name) for name in header[2:]]
    ids, labels, rows = [], [], []
    for line in lines[1:]:
        cells = line.split(",")
        ids.append(cells[0])
        if cells[1] not in LABELS:
            raise FormatError(f"{path}: unknown label {cells[1]!r}")
        labels.append(LABELS.index(cells[1]))
        rows.append([float(c) for c in cells[2:]])
    return FeatureMatrix(np.array(rows), np.array(labels), ids, descriptors)


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray
    zero_variance: np.ndarray
    fitted_on: tuple[str, ...] = ()

    def to_jsonable(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "zero_variance": self.zero_variance.astype(int).tolist(),
            "fitted_on": list(self.fitted_on),
        }

    @classmethod
    def from_jsonable(cls, doc: dict) -> "Normalizer":
        return cls(np.array(doc["mean"]), np.array(doc["std"]),
                   np.array(doc["zero_variance"], dtype=bool), tuple(doc["fitted_on"]))


def fit_normalizer(X: np.ndarray, fitted_on: tuple[str, ...] = ()) -> Normalizer:
    """Per-column mean and population std from training rows only."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DataError("need at least 2 training rows to fit a normalizer")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    zero_variance = std == 0.0
    std = np.where(zero_variance, 1.0, std)
    return Normalizer(mean=mean, std=std, zero_variance=zero_variance, fitted_on=fitted_on)


def apply_normalizer(nrm: Normalizer, X: np.ndarray) -> np.ndarray:
    """Z-score with training statistics; zero-variance columns map to 0."""
    X = np.asarray(X, dtype=np.float64)
    z = (X - nrm.mean) / nrm.std
    if X.ndim == 1:
        return np.where(nrm.zero_variance, 0.0, z)
    return np.where(nrm.zero_variance[None, :], 0.0, z)


class ZScoreNormalizer(BaseEstimator, TransformerMixin):
    def fit(self, X, y=None):
        self.normalizer_ = fit_normalizer(X)
        return self

    def transform(self, X):
        check_is_fitted(self, "normalizer_")
        return apply_normalizer(self.normalizer_, X)


def default_trainer(c: float = 1.0, gamma: float | None = None,
                    tol: float = 1e-3, max_iter: int = 100_000):
    """Classifier-fitting callback used inside selection loops.

    gamma=None means 1/n_features at fit time, a sane default for
    z-scored inputs.
    """
    def fit(X, y):
        g = gamma if gamma is not None else 1.0 / X.shape[1]
        model = train_svm(X, y, SvmHyper(c=c, gamma=g), TrainOptions(tol=tol, max_iter=max_iter))

        class _Clf:
            def predict(self, Xq):
                return predict(model, Xq)[0]

        return _Clf()

    return fit


def cv_accuracy(X, y, cols, trainer, splits) -> float:
    """Mean validation accuracy of the trainer on the given columns."""
    cols = list(cols)
    accs = []
    for train_idx, val_idx in splits:
        nrm = fit_normalizer(X[np.ix_(train_idx, cols)])
        x_tr = apply_normalizer(nrm, X[np.ix_(train_idx, cols)])
        x_va = apply_normalizer(nrm, X[np.ix_(val_idx, cols)])
        clf = trainer(x_tr, y[train_idx])
        accs.append(float(np.mean(clf.predict(x_va) == y[val_idx])))
    return float(np.mean(accs))


@dataclass
class SelectionState:
    selected: list[int]
    accuracy_trace: list[float]
    splits: list = field(default_factory=list)
    feature_names: list[str] = field(default_factory=list)

    def to_jsonable(self) -> dict:
        return {
            "selected": [int(i) for i in self.selected],
            "accuracy_trace": self.accuracy_trace,
            "feature_names": self.feature_names,
            "splits": [[t.tolist(), v.tolist()] for t, v in self.splits],
        }

    @classmethod
    def from_jsonable(cls, doc: dict) -> "SelectionState":
        return cls(
            selected=list(doc["selected"]),
            accuracy_trace=list(doc["accuracy_trace"]),
            splits=[(np.array(t), np.array(v)) for t, v in doc["splits"]],
            feature_names=list(doc.get("feature_names", [])),
        )


def save_selection(path, state: SelectionState) -> None:
    Path(path).write_text(json.dumps(state.to_jsonable(), sort_keys=True, indent=1) + "\n")


def load_selection(path) -> SelectionState:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"no selection state at {path}")
    return SelectionState.from_jsonable(json.loads(path.read_text()))


def greedy_forward_select(X, y, trainer=None, splits=None, max_k: int = 10,
                          seed: int = 0, cv_runs: int = 50, val_frac: float = 0.2,
                          stop_on_no_improvement: bool = False, n_jobs: int = 1,
                          feature_names: list[str] | None = None) -> SelectionState:
    """Pick scalar features one at a time by mean cross-validated accuracy.

    At each step every unchosen column is appended to the current set and
    scored over the split plan; the argmax wins, ties going to the lowest
    column index. Stops at max_k, or earlier when the best candidate fails
    to improve on the previous step and the stop rule is enabled.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    if len(np.unique(y)) < 2:
        raise DataError("selection needs both classes present")
    if max_k > X.shape[1]:
        raise DataError(f"max_k {max_k} exceeds {X.shape[1]} available features")
    trainer = trainer or default_trainer()
    if splits is None:
        splits = make_stratified_splits(y, runs=cv_runs, val_frac=val_frac, seed=seed)

    state = SelectionState(selected=[], accuracy_trace=[], splits=splits,
                           feature_names=feature_names or [])
    best_so_far = -np.inf
    runner = Parallel(n_jobs=n_jobs) if n_jobs != 1 else None
    while len(state.selected) < max_k:
        candidates = [f for f in range(X.shape[1]) if f not in state.selected]
        if not candidates:
            break
        jobs = [state.selected + [f] for f in candidates]
        if runner is not None:
            accs = runner(delayed(cv_accuracy)(X, y, cols, trainer, splits) for cols in jobs)
        else:
            accs = [cv_accuracy(X, y, cols, trainer, splits) for cols in jobs]
        best_pos = int(np.argmax(accs))  # candidates are in ascending column order
        if stop_on_no_improvement and accs[best_pos] <= best_so_far:
            break
        best_so_far = accs[best_pos]
        state.selected.append(candidates[best_pos])
        state.accuracy_trace.append(float(accs[best_pos]))
    return state


class GreedyForwardSelector(BaseEstimator):
    """Estimator facade: fit learns the ordered column subset, transform applies it."""

    def __init__(self, max_k=10, cv_runs=50, val_frac=0.2, seed=0,
                 stop_on_no_improvement=False, n_jobs=1):
        self.max_k = max_k
        self.cv_runs = cv_runs
        self.val_frac = val_frac
        self.seed = seed
        self.stop_on_no_improvement = stop_on_no_improvement
        self.n_jobs = n_jobs

    def fit(self, X, y):
        self.state_ = greedy_forward_select(
            X, y, max_k=self.max_k, seed=self.seed, cv_runs=self.cv_runs,
            val_frac=self.val_frac, stop_on_no_improvement=self.stop_on_no_improvement,
            n_jobs=self.n_jobs)
        self.selected_ = list(self.state_.selected)
        return self

    def transform(self, X):
        check_is_fitted(self, "selected_")
        return np.asarray(X)[:, self.selected_]
