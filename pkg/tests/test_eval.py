import numpy as np
import pytest

from baf.errors import DataError
from baf.evalproto import (
    ConfusionMatrix,
    EnsembleMember,
    EnsembleModel,
    SelectionSpec,
    confusion,
    cross_validate,
    ensemble_predict,
    heldout_protocol,
    load_ensemble,
    make_split_plan,
    majority_class_accuracy,
    roc,
    save_ensemble,
    sens_spec,
    sweep_feature_count,
    sweep_training_ratio,
)
from baf.features import FeatureMatrix, bow_descriptors, fit_normalizer, greedy_forward_select
from baf.svm import SvmHyper, train_svm


def _dummy_cohort(n, seed=0, informative=2, d=6, gap=3.0):
    rng = np.random.default_rng(seed)
    labels = (np.arange(n) % 2).astype(int)
    X = rng.standard_normal((n, d))
    for c in range(informative):
        X[:, c] += gap * labels
    names = [f"f{i}" for i in range(d - 2)] + ["age", "sex"]
    from baf.features import descriptor_from_name, FeatureDescriptor, KIND_HISTOGRAM
    from baf.volumes import MetricId, RegionId
    descs = [FeatureDescriptor(KIND_HISTOGRAM, f"w{i}", MetricId.FA, RegionId.SCC)
             for i in range(d - 2)]
    descs += [FeatureDescriptor("demographic", "age"), FeatureDescriptor("demographic", "sex")]
    ids = [f"s{i:03d}" for i in range(n)]
    return FeatureMatrix(X, labels, ids, descs)


def test_split_plan_227_cohort_sizes():
    labels = np.array([1] * 109 + [0] * 118)
    ids = [f"s{i}" for i in range(227)]
    # Plain protocol: 45 validation / 182 training.
    plan = make_split_plan(ids, labels, runs=5, val_frac=0.2, seed=1)
    for train, val in plan.folds:
        assert len(val) == 45
        assert len(train) == 182

    # Heldout run: 45 heldout, folds become 45 validation / 137 training.
    held = ids[::5][:45]
    plan = make_split_plan(ids, labels, runs=5, val_frac=0.2, seed=2, heldout_ids=held)
    for train, val in plan.folds:
        assert len(val) == 45
        assert len(train) == 137
        assert not set(train) & set(held)
        assert not set(val) & set(held)


def test_split_plan_is_seeded_and_disjoint():
    labels = (np.arange(40) % 2).astype(int)
    ids = [f"s{i}" for i in range(40)]
    a = make_split_plan(ids, labels, runs=10, val_frac=0.2, seed=7)
    b = make_split_plan(ids, labels, runs=10, val_frac=0.2, seed=7)
    assert a.folds == b.folds
    for seed in range(200):
        plan = make_split_plan(ids, labels, runs=2, val_frac=0.25, seed=seed)
        for train, val in plan.folds:
            assert not set(train) & set(val)
            assert set(train) | set(val) == set(ids)


def test_split_plan_keeps_both_classes_in_train():
    labels = np.array([1] * 3 + [0] * 17)
    ids = [f"s{i}" for i in range(20)]
    for seed in range(50):
        plan = make_split_plan(ids, labels, runs=3, val_frac=0.2, seed=seed)
        label_of = dict(zip(ids, labels))
        for train, _ in plan.folds:
            got = {label_of[s] for s in train}
            assert got == {0, 1}


def test_split_plan_rejects_tiny_cohorts():
    with pytest.raises(DataError, match="too small"):
        make_split_plan(["a", "b"], [0, 1], runs=1, val_frac=0.5, seed=0)


def _tiny_members(votes):
    """Fabricated ensemble members that always vote the given labels."""
    members = []
    for v in votes:
        class _FixedSvm:
            def __init__(self, label):
                self.label = label
        member = EnsembleMember.__new__(EnsembleMember)
        member.normalizer = None
        member.selected = [0]
        member.svm = None
        member.trained_on = ()
        member.predict_one = (lambda x, lab=v: lab)
        members.append(member)
    return members


def test_ensemble_vote_fraction_and_tie_rule():
    ens = EnsembleModel(members=_tiny_members([1] * 50), threshold=0.5)
    frac, label = ensemble_predict(ens, np.zeros(1))
    assert frac == 1.0 and label == 1

    ens = EnsembleModel(members=_tiny_members([1] * 25 + [0] * 25), threshold=0.5)
    frac, label = ensemble_predict(ens, np.zeros(1))
    assert frac == 0.5
    assert label == 0  # strict > at the threshold

    votes = [1] * 13 + [0] * 37
    ens = EnsembleModel(members=_tiny_members(votes), threshold=0.5)
    frac, _ = ensemble_predict(ens, np.zeros(1))
    assert frac == np.mean(votes)


def test_confusion_and_sens_spec():
    cm = ConfusionMatrix(tp=8, fn=2, tn=9, fp=1)
    sens, spec = sens_spec(cm)
    assert sens == 0.8
    assert spec == 0.9

    labels = [1, 1, 0, 0, 1]
    preds = [1, 0, 0, 1, 1]
    cm = confusion(labels, preds)
    assert (cm.tp, cm.fn, cm.tn, cm.fp) == (2, 1, 1, 1)
    assert cm.total == 5

    perfect = confusion([1, 0], [1, 0])
    assert sens_spec(perfect) == (1.0, 1.0)

    degenerate = confusion([1, 1], [1, 0])
    sens, spec = sens_spec(degenerate)
    assert sens == 0.5
    assert spec is None  # no negatives: not applicable, not a crash


def test_confusion_matches_tally_oracle():
    rng = np.random.default_rng(3)
    labels = (rng.random(200) > 0.5).astype(int)
    preds = (rng.random(200) > 0.5).astype(int)
    cm = confusion(labels, preds)
    tp = sum(1 for l, p in zip(labels, preds) if l == 1 and p == 1)
    fp = sum(1 for l, p in zip(labels, preds) if l == 0 and p == 1)
    tn = sum(1 for l, p in zip(labels, preds) if l == 0 and p == 0)
    fn = sum(1 for l, p in zip(labels, preds) if l == 1 and p == 0)
    assert (cm.tp, cm.fp, cm.tn, cm.fn) == (tp, fp, tn, fn)


def test_roc_endpoints_and_perfect_auc():
    fractions = np.array([0.9, 0.8, 0.7, 0.2, 0.1, 0.05])
    labels = np.array([1, 1, 1, 0, 0, 0])
    curve = roc(fractions, labels)
    assert curve.points[0] == (1.0, 1.0)  # threshold 0: everything positive
    assert curve.auc == 1.0

    # TPR and FPR never increase as the threshold rises.
    fprs = [p[0] for p in curve.points]
    tprs = [p[1] for p in curve.points]
    assert all(a >= b for a, b in zip(fprs, fprs[1:]))
    assert all(a >= b for a, b in zip(tprs, tprs[1:]))


def test_roc_random_scores_auc_near_half():
    aucs = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        labels = (np.arange(500) % 2).astype(int)
        fractions = rng.random(500)
        aucs.append(roc(fractions, labels).auc)
    assert abs(np.mean(aucs) - 0.5) <= 0.05


def test_roc_needs_both_classes():
    with pytest.raises(DataError):
        roc([0.5, 0.6], [1, 1])


def test_cross_validate_separable_cohort():
    fm = _dummy_cohort(40, seed=1)
    plan = make_split_plan(fm.subject_ids, fm.labels01, runs=6, val_frac=0.2, seed=3)
    cv = cross_validate(fm, plan, selected=[0, 1], c_grid=[1.0], gamma_grid=[0.1])
    assert cv.mean_accuracy == 1.0
    assert cv.mean_accuracy == np.mean(cv.fold_accuracies)
    assert len(cv.ensemble.members) == 6


def test_cross_validate_mean_is_exact_bookkeeping():
    fm = _dummy_cohort(30, seed=2, gap=0.6)
    plan = make_split_plan(fm.subject_ids, fm.labels01, runs=5, val_frac=0.2, seed=4)
    cv = cross_validate(fm, plan, selected=[0, 1, 2], c_grid=[1.0], gamma_grid=[0.1])
    assert cv.mean_accuracy == float(np.mean(cv.fold_accuracies))


def test_cross_validate_permuted_labels_near_chance():
    accs = []
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        fm = _dummy_cohort(40, seed=seed, gap=0.0)  # no signal at all
        plan = make_split_plan(fm.subject_ids, fm.labels01, runs=4, val_frac=0.2, seed=seed)
        cv = cross_validate(fm, plan, selected=[0, 1], c_grid=[1.0], gamma_grid=[0.1])
        accs.append(cv.mean_accuracy)
    assert abs(np.mean(accs) - 0.5) <= 0.1


def test_normalizer_provenance_is_fold_train_only():
    fm = _dummy_cohort(30, seed=5)
    plan = make_split_plan(fm.subject_ids, fm.labels01, runs=4, val_frac=0.2, seed=6)
    cv = cross_validate(fm, plan, selected=[0, 1], c_grid=[1.0], gamma_grid=[0.1])
    for (train_ids, val_ids), member in zip(plan.folds, cv.ensemble.members):
        assert set(member.normalizer.fitted_on) == set(train_ids)
        assert not set(member.normalizer.fitted_on) & set(val_ids)


def test_heldout_protocol_on_separable_cohort():
    fm = _dummy_cohort(60, seed=7)
    result = heldout_protocol(
        fm, heldout_size=12, repeats=2, inner_runs=6, seed=1,
        selection=SelectionSpec(max_k=2, cv_runs=4),
        c_grid=[1.0], gamma_grid=[0.1],
    )
    assert result.mean_accuracy >= 0.85
    for rep in result.repeats:
        held = set(rep.heldout_ids)
        assert len(held) == 12
        # Heldout ids never appear in any member's training set.
        for member in rep.cross_val.ensemble.members:
            assert not set(member.trained_on) & held
            assert not set(member.normalizer.fitted_on) & held
        assert set(rep.fractions) == held
        assert 0.0 <= rep.member_accuracy_std <= 0.5


def test_heldout_cohort_too_small():
    fm = _dummy_cohort(30, seed=8)
    with pytest.raises(DataError, match="too small"):
        heldout_protocol(fm, heldout_size=20, repeats=1, inner_runs=2, seed=0)


def test_sweep_training_ratio_shapes_and_consistency():
    fm = _dummy_cohort(40, seed=9)
    rows = sweep_training_ratio(fm, [0.8], selected=[0, 1], runs=4, seed=5,
                                c_grid=[1.0], gamma_grid=[0.1])
    assert len(rows) == 1
    assert rows[0]["ratio"] == 0.8

    plan = make_split_plan(fm.subject_ids, fm.labels01, runs=4, val_frac=0.2, seed=5)
    cv = cross_validate(fm, plan, selected=[0, 1], c_grid=[1.0], gamma_grid=[0.1])
    assert rows[0]["accuracy"] == cv.mean_accuracy


def test_sweep_training_ratio_monotone_tendency():
    # Averaged over seeds, 80% training beats 20% training on separable data.
    lo, hi = [], []
    for seed in range(10):
        fm = _dummy_cohort(40, seed=200 + seed, gap=1.2)
        rows = sweep_training_ratio(fm, [0.2, 0.8], selected=[0, 1], runs=3,
                                    seed=seed, c_grid=[1.0], gamma_grid=[0.1])
        lo.append(rows[0]["accuracy"])
        hi.append(rows[1]["accuracy"])
    assert np.mean(hi) >= np.mean(lo)


def test_sweep_training_ratio_validates_input():
    fm = _dummy_cohort(20, seed=10)
    with pytest.raises(DataError, match="outside"):
        sweep_training_ratio(fm, [1.5], selected=[0], runs=2, seed=0)


def test_sweep_feature_count_k0_and_plateau():
    fm = _dummy_cohort(40, seed=11, informative=3, d=8)
    state = greedy_forward_select(fm.values, fm.labels01, max_k=5, cv_runs=3, seed=2)
    rows = sweep_feature_count(fm, [0, 1, 3, 5], state, runs=4, seed=3,
                               c_grid=[1.0], gamma_grid=[0.1])
    assert rows[0]["k"] == 0
    plan = make_split_plan(fm.subject_ids, fm.labels01, runs=4, val_frac=0.2, seed=3)
    assert rows[0]["accuracy"] == majority_class_accuracy(fm, plan)
    # All signal is in 3 features: k=3 and k=5 should both be near-perfect.
    assert rows[2]["accuracy"] >= 0.95
    assert rows[3]["accuracy"] >= 0.95


def test_ensemble_roundtrip_preserves_predictions(tmp_path):
    fm = _dummy_cohort(30, seed=12)
    plan = make_split_plan(fm.subject_ids, fm.labels01, runs=5, val_frac=0.2, seed=1)
    cv = cross_validate(fm, plan, selected=[0, 1, 2], c_grid=[1.0], gamma_grid=[0.1])
    path = tmp_path / "ens.bafens"
    save_ensemble(path, cv.ensemble)
    loaded = load_ensemble(path)
    for row in fm.values:
        assert ensemble_predict(loaded, row) == ensemble_predict(cv.ensemble, row)
    # Double-save is byte identical.
    path2 = tmp_path / "ens2.bafens"
    save_ensemble(path2, loaded)
    assert path.read_bytes() == path2.read_bytes()
