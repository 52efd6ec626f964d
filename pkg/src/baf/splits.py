"""Seeded stratified train/validation split plans shared by selection and evaluation."""

from __future__ import annotations

import numpy as np

from .errors import DataError


def stratified_val_counts(labels01: np.ndarray, val_count: int) -> dict[int, int]:
    """Per-class validation counts by largest remainder, keeping >= 1 training row per class."""
    n = len(labels01)
    counts = {}
    remainders = []
    taken = 0
    for cls in (0, 1):
        n_c = int(np.sum(labels01 == cls))
        exact = val_count * n_c / n
        take = int(np.floor(exact))
        counts[cls] = take
        taken += take
        remainders.append((exact - take, cls))
    for _, cls in sorted(remainders, reverse=True):
        if taken == val_count:
            break
        counts[cls] += 1
        taken += 1
    for cls in (0, 1):
        n_c = int(np.sum(labels01 == cls))
        if counts[cls] >= n_c:  # keep at least one training row per class
            spill = counts[cls] - (n_c - 1)
            counts[cls] = n_c - 1
            other = 1 - cls
            counts[other] = min(counts[other] + spill, int(np.sum(labels01 == other)) - 1)
    return counts


def make_stratified_splits(labels01, runs: int, val_frac: float, seed: int,
                           val_count: int | None = None):
    """Seeded list of (train_idx, val_idx) pairs with both classes in every train split.

    val_count defaults to floor(val_frac * n); passing it explicitly lets a
    protocol size validation folds against a larger parent cohort.
    """
    labels01 = np.asarray(labels01)
    n = len(labels01)
    if n < 4:
        raise DataError("cohort too small to split")
    if not 0 < val_frac < 1:
        raise DataError("val_frac must lie in (0, 1)")
    classes, counts = np.unique(labels01, return_counts=True)
    if len(classes) < 2:
        raise DataError("both classes must be present to build splits")
    if val_count is None:
        val_count = int(np.floor(val_frac * n))
    if not 0 < val_count < n:
        raise DataError(f"validation count {val_count} infeasible for {n} subjects")

    per_class = stratified_val_counts(labels01, val_count)
    rng = np.random.default_rng(seed)
    plan = []
    for _ in range(runs):
        val_parts = []
        for cls in (0, 1):
            members = np.flatnonzero(labels01 == cls)
            order = rng.permutation(len(members))
            val_parts.append(members[order[:per_class[cls]]])
        val_idx = np.sort(np.concatenate(val_parts))
        mask = np.ones(n, dtype=bool)
        mask[val_idx] = False
        train_idx = np.flatnonzero(mask)
        plan.append((train_idx, val_idx))
    return plan
