import numpy as np
import pytest

from baf.errors import DataError
from baf.features import (
    FeatureMatrix,
    GreedyForwardSelector,
    apply_normalizer,
    assemble_features,
    bow_descriptors,
    cv_accuracy,
    default_trainer,
    descriptor_from_name,
    fit_normalizer,
    greedy_forward_select,
    load_feature_matrix,
    load_selection,
    save_feature_matrix,
    save_selection,
    stats_descriptors,
)
from baf.splits import make_stratified_splits
from baf.volumes import REGION_METRIC_PAIRS, MetricId, RegionId


def _blocks(width, fill=0.1):
    return {(r, m): np.full(width, fill) for r, m in REGION_METRIC_PAIRS}


def test_bow_assembly_is_282_at_20_words():
    vec = assemble_features(_blocks(20), age=30.0, sex="M", block_width=20)
    assert vec.shape == (282,)
    assert len(bow_descriptors(20)) == 282


def test_bow_assembly_is_142_at_10_words():
    vec = assemble_features(_blocks(10), age=30.0, sex="F", block_width=10)
    assert vec.shape == (142,)
    assert vec[-1] == 1.0  # F -> 1


def test_stats_assembly_is_72():
    vec = assemble_features(_blocks(5), age=44.0, sex="M", block_width=5)
    assert vec.shape == (72,)
    assert len(stats_descriptors()) == 72


def test_assembly_rejects_missing_block():
    blocks = _blocks(20)
    del blocks[(RegionId.SCC, MetricId.AWF)]
    with pytest.raises(DataError, match="missing feature block"):
        assemble_features(blocks, age=30.0, sex="M", block_width=20)


def test_descriptor_names_roundtrip():
    for desc in bow_descriptors(20) + stats_descriptors():
        back = descriptor_from_name(desc.name)
        assert back == desc


def test_normalizer_two_point_column():
    nrm = fit_normalizer(np.array([[2.0], [4.0]]))
    z = apply_normalizer(nrm, np.array([[2.0], [4.0]]))
    assert np.allclose(z.ravel(), [-1.0, 1.0])


def test_normalizer_constant_column_flags_and_zeroes():
    X = np.array([[3.0, 1.0], [3.0, 2.0], [3.0, 3.0]])
    nrm = fit_normalizer(X)
    assert nrm.zero_variance.tolist() == [True, False]
    z = apply_normalizer(nrm, X)
    assert np.all(z[:, 0] == 0.0)


def test_normalizer_makes_columns_standard():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((200, 7)) * rng.uniform(0.5, 5, 7) + rng.uniform(-3, 3, 7)
    nrm = fit_normalizer(X)
    z = apply_normalizer(nrm, X)
    assert np.max(np.abs(z.mean(axis=0))) <= 1e-12
    assert np.max(np.abs(z.std(axis=0) - 1.0)) <= 1e-12


def test_normalizer_unchanged_for_unseen_rows():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((50, 3))
    nrm = fit_normalizer(X)
    fresh = rng.standard_normal(3)
    z = apply_normalizer(nrm, fresh)
    assert np.allclose(z, (fresh - nrm.mean) / nrm.std)


def _signal_dataset(rng, n=60, d=6, informative=(3,)):
    y = (np.arange(n) % 2).astype(int)
    X = rng.standard_normal((n, d))
    for col in informative:
        X[:, col] += 2.5 * y  # clean separation on these columns only
    return X, y


def test_first_pick_is_the_separating_feature():
    rng = np.random.default_rng(2)
    X, y = _signal_dataset(rng, informative=(3,))
    state = greedy_forward_select(X, y, max_k=1, cv_runs=6, seed=5)
    assert state.selected == [3]
    assert len(state.accuracy_trace) == 1


def test_max_k_zero_selects_nothing():
    rng = np.random.default_rng(3)
    X, y = _signal_dataset(rng)
    state = greedy_forward_select(X, y, max_k=0, cv_runs=4, seed=1)
    assert state.selected == []
    assert state.accuracy_trace == []


def _oracle_greedy(X, y, trainer, splits, max_k):
    """Brute-force reference: no shared code with the library loop."""
    chosen = []
    trace = []
    for _ in range(max_k):
        best_f, best_acc = None, -1.0
        for f in range(X.shape[1]):
            if f in chosen:
                continue
            cols = chosen + [f]
            accs = []
            for tr, va in splits:
                mu = X[np.ix_(tr, cols)].mean(axis=0)
                sd = X[np.ix_(tr, cols)].std(axis=0)
                sd_safe = np.where(sd == 0, 1.0, sd)
                xt = (X[np.ix_(tr, cols)] - mu) / sd_safe
                xv = (X[np.ix_(va, cols)] - mu) / sd_safe
                xt[:, sd == 0] = 0.0
                xv[:, sd == 0] = 0.0
                clf = trainer(xt, y[tr])
                accs.append(np.mean(clf.predict(xv) == y[va]))
            acc = float(np.mean(accs))
            if acc > best_acc:
                best_f, best_acc = f, acc
        chosen.append(best_f)
        trace.append(best_acc)
    return chosen, trace


def test_greedy_matches_bruteforce_oracle_on_8_features():
    rng = np.random.default_rng(4)
    X, y = _signal_dataset(rng, n=40, d=8, informative=(1, 6))
    X[:, 4] += 0.8 * y  # a weaker signal to make ordering non-trivial
    splits = make_stratified_splits(y, runs=5, val_frac=0.25, seed=9)
    trainer = default_trainer()

    state = greedy_forward_select(X, y, trainer=trainer, splits=splits, max_k=4)
    oracle_sel, oracle_trace = _oracle_greedy(X, y, trainer, splits, max_k=4)
    assert state.selected == oracle_sel
    assert np.allclose(state.accuracy_trace, oracle_trace, atol=1e-12)


def test_selection_is_deterministic():
    rng = np.random.default_rng(5)
    X, y = _signal_dataset(rng, n=50, d=10, informative=(2, 7))
    a = greedy_forward_select(X, y, max_k=3, cv_runs=5, seed=11)
    b = greedy_forward_select(X, y, max_k=3, cv_runs=5, seed=11)
    assert a.selected == b.selected
    assert a.accuracy_trace == b.accuracy_trace


def test_selection_parallel_matches_serial():
    rng = np.random.default_rng(6)
    X, y = _signal_dataset(rng, n=40, d=9, informative=(0, 5))
    serial = greedy_forward_select(X, y, max_k=3, cv_runs=4, seed=2, n_jobs=1)
    parallel = greedy_forward_select(X, y, max_k=3, cv_runs=4, seed=2, n_jobs=2)
    assert serial.selected == parallel.selected
    assert serial.accuracy_trace == parallel.accuracy_trace


def test_selection_trace_is_recomputable_from_stored_splits():
    rng = np.random.default_rng(7)
    X, y = _signal_dataset(rng, n=44, d=7, informative=(2,))
    trainer = default_trainer()
    state = greedy_forward_select(X, y, trainer=trainer, max_k=3, cv_runs=5, seed=3)
    for k, acc in enumerate(state.accuracy_trace):
        recomputed = cv_accuracy(X, y, state.selected[:k + 1], trainer, state.splits)
        assert recomputed == acc


def test_selection_subsets_are_nested_and_unique():
    rng = np.random.default_rng(8)
    X, y = _signal_dataset(rng, n=50, d=12, informative=(1, 4, 9))
    state = greedy_forward_select(X, y, max_k=6, cv_runs=4, seed=6)
    assert len(set(state.selected)) == len(state.selected) == 6


def test_selection_requires_two_classes():
    with pytest.raises(DataError, match="both classes"):
        greedy_forward_select(np.zeros((10, 3)), np.zeros(10, dtype=int), max_k=1)


def test_selection_state_roundtrip(tmp_path):
    rng = np.random.default_rng(9)
    X, y = _signal_dataset(rng, n=30, d=5, informative=(2,))
    state = greedy_forward_select(X, y, max_k=2, cv_runs=3, seed=4,
                                  feature_names=[f"f{i}" for i in range(5)])
    path = tmp_path / "sel.json"
    save_selection(path, state)
    loaded = load_selection(path)
    assert loaded.selected == state.selected
    assert loaded.accuracy_trace == state.accuracy_trace
    assert loaded.feature_names == state.feature_names
    for (t1, v1), (t2, v2) in zip(loaded.splits, state.splits):
        assert np.array_equal(t1, t2) and np.array_equal(v1, v2)


def test_selector_estimator_transform():
    rng = np.random.default_rng(10)
    X, y = _signal_dataset(rng, n=40, d=6, informative=(5,))
    sel = GreedyForwardSelector(max_k=2, cv_runs=4, seed=0).fit(X, y)
    reduced = sel.transform(X)
    assert reduced.shape == (40, 2)
    assert sel.selected_[0] == 5


def test_feature_matrix_roundtrip(tmp_path):
    rng = np.random.default_rng(11)
    descs = bow_descriptors(3)
    fm = FeatureMatrix(
        values=rng.standard_normal((4, len(descs))),
        labels01=np.array([0, 1, 0, 1]),
        subject_ids=[f"s{i}" for i in range(4)],
        descriptors=descs,
    )
    path = tmp_path / "features.csv"
    save_feature_matrix(path, fm)
    loaded = load_feature_matrix(path)
    assert loaded.subject_ids == fm.subject_ids
    assert np.array_equal(loaded.labels01, fm.labels01)
    assert np.array_equal(loaded.values, fm.values)  # %.17g is float64-exact
    assert [d.name for d in loaded.descriptors] == [d.name for d in fm.descriptors]
