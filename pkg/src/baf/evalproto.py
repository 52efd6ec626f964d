"""Validation protocols: repeated splits, SVM ensembles, heldout runs, metrics.

The repeated-split protocol draws seeded stratified 80/20 folds; each fold
fits a normalizer on its training rows, grid-searches SVM hyperparameters
against the fold's validation rows, and contributes one member to a voting
ensemble. The heldout protocol excludes a subject set up front, runs the
whole thing on the remainder (feature selection included, once per
repeat), and scores the ensemble on the untouched heldout subjects.

Validation fold sizes are computed against the full cohort size even when
a heldout set is excluded, so a 227-subject cohort at 20% yields 45
validation / 137 training subjects inside a 45-subject heldout run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .errors import DataError
from .artifacts import floats_from_bytes, floats_to_bytes, read_container, write_container
from .features import (
    FeatureMatrix,
    Normalizer,
    SelectionState,
    apply_normalizer,
    cv_accuracy,
    default_trainer,
    fit_normalizer,
    greedy_forward_select,
)
from .splits import make_stratified_splits
from .svm import SvmHyper, SvmModel, TrainOptions, decision_values, grid_search, train_svm

ENSEMBLE_MAGIC = "BAFENS1"

DEFAULT_C_GRID = (0.1, 1.0, 10.0, 100.0)
DEFAULT_GAMMA_GRID = (0.001, 0.01, 0.1, 1.0)
ROC_THRESHOLDS = tuple(round(0.05 * i, 2) for i in range(21))


@dataclass
class SplitPlan:
    folds: list[tuple[list[str], list[str]]]  # (train ids, validation ids)
    heldout_ids: list[str]
    val_frac: float
    seed: int

    def validate(self, cohort_ids: set[str]) -> None:
        held = set(self.heldout_ids)
        for train, val in self.folds:
            tr, va = set(train), set(val)
            if tr & va:
                raise DataError("split has overlapping train and validation ids")
            if (tr | va) & held:
                raise DataError("heldout ids leaked into a fold")
            if not (tr | va) <= cohort_ids:
                raise DataError("split references unknown subject ids")


def make_split_plan(subject_ids, labels01, runs: int = 50, val_frac: float = 0.2,
                    seed: int = 0, heldout_ids=(), val_count: int | None = None) -> SplitPlan:
    """Seeded stratified split plan over the cohort minus any heldout ids."""
    subject_ids = list(subject_ids)
    labels01 = np.asarray(labels01, dtype=int)
    if len(subject_ids) < 10:
        raise DataError("cohort too small for a split plan (need >= 10 subjects)")
    held = set(heldout_ids)
    if not held <= set(subject_ids):
        raise DataError("heldout ids must belong to the cohort")
    if val_count is None:
        # Sized against the full cohort, heldout included.
        val_count = int(np.floor(val_frac * len(subject_ids)))

    pool = [i for i, sid in enumerate(subject_ids) if sid not in held]
    pool_ids = [subject_ids[i] for i in pool]
    pool_labels = labels01[pool]
    splits = make_stratified_splits(pool_labels, runs=runs, val_frac=val_frac,
                                    seed=seed, val_count=val_count)
    folds = []
    for train_idx, val_idx in splits:
        train_labels = pool_labels[train_idx]
        if len(np.unique(train_labels)) < 2:
            raise DataError("a split lost one class from its training half")
        folds.append(([pool_ids[i] for i in train_idx], [pool_ids[i] for i in val_idx]))
    plan = SplitPlan(folds=folds, heldout_ids=sorted(held), val_frac=val_frac, seed=seed)
    plan.validate(set(subject_ids))
    return plan


@dataclass
class EnsembleMember:
    normalizer: Normalizer
    selected: list[int]
    svm: SvmModel
    trained_on: tuple[str, ...]

    def predict_one(self, x: np.ndarray) -> int:
        z = apply_normalizer(self.normalizer, np.asarray(x)[self.selected])
        return int(decision_values(self.svm, z) > 0)


@dataclass
class EnsembleModel:
    members: list[EnsembleMember]
    threshold: float = 0.5
    feature_names: list[str] = field(default_factory=list)

    def vote_fraction(self, x: np.ndarray) -> float:
        votes = [m.predict_one(x) for m in self.members]
        return float(np.mean(votes))


def ensemble_predict(ens: EnsembleModel, x: np.ndarray) -> tuple[float, int]:
    """Vote fraction over members and the thresholded label (strict >)."""
    x = np.asarray(x, dtype=np.float64)
    if ens.feature_names and x.shape != (len(ens.feature_names),):
        raise DataError(f"expected {len(ens.feature_names)} features, got {x.shape}")
    fraction = ens.vote_fraction(x)
    return fraction, int(fraction > ens.threshold)


def ensemble_votes(ens: EnsembleModel, fm: FeatureMatrix) -> np.ndarray:
    return np.array([ensemble_predict(ens, row)[0] for row in fm.values])


@dataclass
class CrossValResult:
    mean_accuracy: float
    fold_accuracies: list[float]
    ensemble: EnsembleModel
    fold_hypers: list[SvmHyper] = field(default_factory=list)


def _fit_fold(fm: FeatureMatrix, train_ids, val_ids, selected, c_grid, gamma_grid, opts):
    index = {sid: i for i, sid in enumerate(fm.subject_ids)}
    tr = np.array([index[s] for s in train_ids])
    va = np.array([index[s] for s in val_ids])
    cols = list(selected)
    nrm = fit_normalizer(fm.values[np.ix_(tr, cols)], fitted_on=tuple(train_ids))
    x_tr = apply_normalizer(nrm, fm.values[np.ix_(tr, cols)])
    x_va = apply_normalizer(nrm, fm.values[np.ix_(va, cols)])
    y_tr, y_va = fm.labels01[tr], fm.labels01[va]

    hyper = grid_search(x_tr, y_tr, x_va, y_va, c_grid, gamma_grid, opts)
    model = train_svm(x_tr, y_tr, hyper, opts)
    labels = (decision_values(model, x_va) > 0).astype(int)
    acc = float(np.mean(labels == y_va))
    member = EnsembleMember(normalizer=nrm, selected=cols, svm=model,
                            trained_on=tuple(train_ids))
    return acc, hyper, member


def cross_validate(fm: FeatureMatrix, plan: SplitPlan, selected,
                   c_grid=DEFAULT_C_GRID, gamma_grid=DEFAULT_GAMMA_GRID,
                   opts: TrainOptions | None = None, threshold: float = 0.5,
                   n_jobs: int = 1) -> CrossValResult:
    """One ensemble member per fold: normalize, grid-search, train, score."""
    opts = opts or TrainOptions()
    plan.validate(set(fm.subject_ids))
    if not selected:
        raise DataError("cross_validate needs a non-empty selected feature set")
    jobs = [(train_ids, val_ids) for train_ids, val_ids in plan.folds]
    if n_jobs != 1:
        results = Parallel(n_jobs=n_jobs)(
            delayed(_fit_fold)(fm, tr, va, selected, c_grid, gamma_grid, opts)
            for tr, va in jobs)
    else:
        results = [_fit_fold(fm, tr, va, selected, c_grid, gamma_grid, opts)
                   for tr, va in jobs]
    accs = [r[0] for r in results]
    hypers = [r[1] for r in results]
    members = [r[2] for r in results]
    ensemble = EnsembleModel(members=members, threshold=threshold,
                             feature_names=[d.name for d in fm.descriptors])
    return CrossValResult(
        mean_accuracy=float(np.mean(accs)),
        fold_accuracies=accs,
        ensemble=ensemble,
        fold_hypers=hypers,
    )


@dataclass
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else float("nan")


def confusion(labels01, predictions01) -> ConfusionMatrix:
    labels01 = np.asarray(labels01, dtype=int)
    predictions01 = np.asarray(predictions01, dtype=int)
    if labels01.shape != predictions01.shape:
        raise DataError("labels and predictions must have equal length")
    return ConfusionMatrix(
        tp=int(np.sum((labels01 == 1) & (predictions01 == 1))),
        fp=int(np.sum((labels01 == 0) & (predictions01 == 1))),
        tn=int(np.sum((labels01 == 0) & (predictions01 == 0))),
        fn=int(np.sum((labels01 == 1) & (predictions01 == 0))),
    )


def sens_spec(cm: ConfusionMatrix) -> tuple[float | None, float | None]:
    """Sensitivity TP/(TP+FN) and specificity TN/(TN+FP); None when undefined."""
    sens = cm.tp / (cm.tp + cm.fn) if (cm.tp + cm.fn) > 0 else None
    spec = cm.tn / (cm.tn + cm.fp) if (cm.tn + cm.fp) > 0 else None
    return sens, spec


@dataclass
class RocCurve:
    thresholds: list[float]
    points: list[tuple[float, float]]  # (FPR, TPR) per threshold
    auc: float


def roc(fractions, labels01) -> RocCurve:
    """Threshold sweep 0..1 in steps of 0.05, positive iff fraction > t."""
    fractions = np.asarray(fractions, dtype=np.float64)
    labels01 = np.asarray(labels01, dtype=int)
    n_pos = int(np.sum(labels01 == 1))
    n_neg = int(np.sum(labels01 == 0))
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC needs both classes present")
    points = []
    for t in ROC_THRESHOLDS:
        pred = fractions > t
        tpr = float(np.sum(pred & (labels01 == 1)) / n_pos)
        fpr = float(np.sum(pred & (labels01 == 0)) / n_neg)
        points.append((fpr, tpr))
    # Anchors close the curve for the trapezoid integral.
    closed = sorted(set(points) | {(0.0, 0.0), (1.0, 1.0)})
    xs = np.array([p[0] for p in closed])
    ys = np.array([p[1] for p in closed])
    auc = float(np.trapezoid(ys, xs))
    return RocCurve(thresholds=list(ROC_THRESHOLDS), points=points, auc=auc)


@dataclass
class SelectionSpec:
    """Knobs for the per-repeat greedy selection inside protocols."""
    max_k: int = 10
    cv_runs: int = 50
    val_frac: float = 0.2
    trainer_c: float = 1.0
    trainer_gamma: float | None = None
    stop_on_no_improvement: bool = False

    def trainer(self):
        return default_trainer(c=self.trainer_c, gamma=self.trainer_gamma)


@dataclass
class HeldoutRepeat:
    heldout_ids: list[str]
    selection: SelectionState
    cross_val: CrossValResult
    fractions: dict[str, float]
    accuracy: float
    sensitivity: float | None
    specificity: float | None
    member_accuracy_std: float


@dataclass
class HeldoutResult:
    repeats: list[HeldoutRepeat]

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([r.accuracy for r in self.repeats]))


def _choose_heldout(subject_ids, labels01, size: int, rng) -> list[str]:
    # Stratified draw so both classes stay represented everywhere.
    labels01 = np.asarray(labels01)
    n = len(subject_ids)
    take_pos = int(round(size * np.sum(labels01 == 1) / n))
    take_pos = min(max(take_pos, 1), size - 1)
    held = []
    for cls, take in ((1, take_pos), (0, size - take_pos)):
        members = np.flatnonzero(labels01 == cls)
        order = rng.permutation(len(members))
        held.extend(subject_ids[members[i]] for i in order[:take])
    return sorted(held)


def heldout_protocol(fm: FeatureMatrix, heldout_size: int = 45, repeats: int = 4,
                     inner_runs: int = 50, val_frac: float = 0.2, seed: int = 0,
                     selection: SelectionSpec | None = None,
                     c_grid=DEFAULT_C_GRID, gamma_grid=DEFAULT_GAMMA_GRID,
                     opts: TrainOptions | None = None, refit=None,
                     n_jobs: int = 1) -> HeldoutResult:
    """Repeated heldout evaluation with per-repeat selection on the pool only.

    ``refit(pool_ids, repeat_seed)`` may rebuild the feature matrix with all
    data-dependent stages fitted on the pool subjects; it must return a
    FeatureMatrix covering every subject. Without it the supplied features
    are reused as-is.
    """
    selection = selection or SelectionSpec()
    opts = opts or TrainOptions()
    n = len(fm.subject_ids)
    if n < heldout_size + 20:
        raise DataError(f"cohort of {n} too small for heldout size {heldout_size}")

    streams = np.random.SeedSequence(seed).spawn(repeats)
    out = []
    for r in range(repeats):
        rng = np.random.default_rng(streams[r])
        repeat_seed = int(rng.integers(2 ** 31))
        held = _choose_heldout(fm.subject_ids, fm.labels01, heldout_size, rng)

        fm_r = refit(held, repeat_seed) if refit is not None else fm
        if sorted(fm_r.subject_ids) != sorted(fm.subject_ids):
            raise DataError("refit must return features for the full cohort")
        index = {sid: i for i, sid in enumerate(fm_r.subject_ids)}
        pool_rows = np.array([index[s] for s in fm_r.subject_ids if s not in set(held)])

        sel_state = greedy_forward_select(
            fm_r.values[pool_rows], fm_r.labels01[pool_rows],
            trainer=selection.trainer(), max_k=selection.max_k,
            seed=repeat_seed ^ 0x5E1EC7, cv_runs=selection.cv_runs,
            val_frac=selection.val_frac,
            stop_on_no_improvement=selection.stop_on_no_improvement,
            n_jobs=n_jobs,
            feature_names=[fm_r.descriptors[i].name for i in range(fm_r.n_features)],
        )

        plan = make_split_plan(fm_r.subject_ids, fm_r.labels01, runs=inner_runs,
                               val_frac=val_frac, seed=repeat_seed, heldout_ids=held)
        cv = cross_validate(fm_r, plan, sel_state.selected, c_grid, gamma_grid,
                            opts, n_jobs=n_jobs)

        held_rows = np.array([index[s] for s in held])
        fractions = {}
        hard = []
        member_rows = []
        for sid, row in zip(held, fm_r.values[held_rows]):
            frac, label = ensemble_predict(cv.ensemble, row)
            fractions[sid] = frac
            hard.append(label)
            member_rows.append([m.predict_one(row) for m in cv.ensemble.members])
        y_held = fm_r.labels01[held_rows]
        cm = confusion(y_held, hard)
        sens, spec = sens_spec(cm)
        member_votes = np.array(member_rows)  # (n_held, n_members)
        member_acc = (member_votes == y_held[:, None]).mean(axis=0)
        out.append(HeldoutRepeat(
            heldout_ids=held,
            selection=sel_state,
            cross_val=cv,
            fractions=fractions,
            accuracy=cm.accuracy,
            sensitivity=sens,
            specificity=spec,
            member_accuracy_std=float(member_acc.std()),
        ))
    return HeldoutResult(repeats=out)


def sweep_training_ratio(fm: FeatureMatrix, ratios, selected, runs: int = 50,
                         seed: int = 0, c_grid=DEFAULT_C_GRID,
                         gamma_grid=DEFAULT_GAMMA_GRID,
                         opts: TrainOptions | None = None, n_jobs: int = 1):
    """Accuracy/sensitivity/specificity of the repeated-split protocol per training ratio."""
    rows = []
    n = len(fm.subject_ids)
    for ratio in ratios:
        if not 0 < ratio < 1:
            raise DataError(f"training ratio {ratio} outside (0, 1)")
        if int(np.ceil(n * ratio)) < 2:
            raise DataError(f"training ratio {ratio} leaves fewer than 2 training subjects")
        val_frac = 1.0 - ratio
        plan = make_split_plan(fm.subject_ids, fm.labels01, runs=runs,
                               val_frac=val_frac, seed=seed)
        cv = cross_validate(fm, plan, selected, c_grid, gamma_grid, opts, n_jobs=n_jobs)

        index = {sid: i for i, sid in enumerate(fm.subject_ids)}
        y_all, p_all = [], []
        for (train_ids, val_ids), member in zip(plan.folds, cv.ensemble.members):
            rows_va = np.array([index[s] for s in val_ids])
            for i in rows_va:
                y_all.append(fm.labels01[i])
                p_all.append(member.predict_one(fm.values[i]))
        cm = confusion(y_all, p_all)
        sens, spec = sens_spec(cm)
        rows.append({"ratio": float(ratio), "accuracy": cv.mean_accuracy,
                     "sensitivity": sens, "specificity": spec})
    return rows


def majority_class_accuracy(fm: FeatureMatrix, plan: SplitPlan) -> float:
    """No-feature baseline: every fold predicts its training majority class."""
    index = {sid: i for i, sid in enumerate(fm.subject_ids)}
    accs = []
    for train_ids, val_ids in plan.folds:
        y_tr = fm.labels01[[index[s] for s in train_ids]]
        majority = int(np.sum(y_tr == 1) > np.sum(y_tr == 0))
        y_va = fm.labels01[[index[s] for s in val_ids]]
        accs.append(float(np.mean(y_va == majority)))
    return float(np.mean(accs))


def sweep_feature_count(fm: FeatureMatrix, ks, selection_state: SelectionState,
                        runs: int = 50, val_frac: float = 0.2, seed: int = 0,
                        c_grid=DEFAULT_C_GRID, gamma_grid=DEFAULT_GAMMA_GRID,
                        opts: TrainOptions | None = None, n_jobs: int = 1):
    """Protocol accuracy using the first k greedily selected features, per k."""
    rows = []
    plan = make_split_plan(fm.subject_ids, fm.labels01, runs=runs,
                           val_frac=val_frac, seed=seed)
    for k in ks:
        if k > len(selection_state.selected):
            raise DataError(f"k={k} exceeds the {len(selection_state.selected)} selected features")
        if k == 0:
            rows.append({"k": 0, "accuracy": majority_class_accuracy(fm, plan)})
            continue
        cv = cross_validate(fm, plan, selection_state.selected[:k], c_grid,
                            gamma_grid, opts, n_jobs=n_jobs)
        rows.append({"k": int(k), "accuracy": cv.mean_accuracy})
    return rows


def save_ensemble(path, ens: EnsembleModel) -> None:
    members_meta = []
    payload = b""
    for m in ens.members:
        members_meta.append({
            "selected": [int(i) for i in m.selected],
            "fitted_on": list(m.normalizer.fitted_on),
            "trained_on": list(m.trained_on),
            "zero_variance": m.normalizer.zero_variance.astype(int).tolist(),
            "bias": m.svm.bias,
            "c": m.svm.hyper.c,
            "gamma": m.svm.hyper.gamma,
            "n_sv": int(m.svm.support_vectors.shape[0]),
            "dim": int(m.svm.n_features),
        })
        payload += floats_to_bytes(m.normalizer.mean)
        payload += floats_to_bytes(m.normalizer.std)
        payload += floats_to_bytes(m.svm.support_vectors)
        payload += floats_to_bytes(m.svm.dual_coef)
    header = {
        "threshold": ens.threshold,
        "feature_names": ens.feature_names,
        "members": members_meta,
    }
    write_container(path, ENSEMBLE_MAGIC, header, payload)


def load_ensemble(path) -> EnsembleModel:
    header, payload = read_container(path, ENSEMBLE_MAGIC)
    members = []
    offset = 0
    for meta in header["members"]:
        k = len(meta["selected"])
        mean, offset = floats_from_bytes(payload, (k,), offset)
        std, offset = floats_from_bytes(payload, (k,), offset)
        sv, offset = floats_from_bytes(payload, (meta["n_sv"], meta["dim"]), offset)
        coef, offset = floats_from_bytes(payload, (meta["n_sv"],), offset)
        nrm = Normalizer(mean=mean, std=std,
                         zero_variance=np.array(meta["zero_variance"], dtype=bool),
                         fitted_on=tuple(meta["fitted_on"]))
        svm = SvmModel(support_vectors=sv, dual_coef=coef, bias=meta["bias"],
                       hyper=SvmHyper(c=meta["c"], gamma=meta["gamma"]),
                       n_features=meta["dim"])
        members.append(EnsembleMember(normalizer=nrm, selected=list(meta["selected"]),
                                      svm=svm, trained_on=tuple(meta["trained_on"])))
    return EnsembleModel(members=members, threshold=header["threshold"],
                         feature_names=list(header["feature_names"]))
