"""Visual-word codebooks, region histograms, and the statistical baseline.

Codebooks are fitted per (metric, region, feature source) with k-means++
initialization and Lloyd iterations. Raw-patch, convolutional, and
adversarial feature sources all flow through the same quantize/histogram
path; only the feature dimension differs (256 for raw tiles, the latent
width otherwise).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .artifacts import floats_from_bytes, floats_to_bytes, read_container, write_container
from .errors import DataError, FormatError
from .volumes import MetricId, RegionId

CODEBOOK_MAGIC = "BAFCB1"

SOURCES = ("RAW", "CAE", "AAE")
STAT_NAMES = ("mean", "std", "skewness", "kurtosis", "entropy")
ENTROPY_BINS = 32


@dataclass
class Codebook:
    metric: MetricId
    region: RegionId
    source: str
    centroids: np.ndarray  # (N, d)
    seed: int
    inertia: float

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if self.centroids.ndim != 2 or self.centroids.shape[0] < 1:
            raise DataError("codebook needs an (N, d) centroid matrix with N >= 1")
        if not np.all(np.isfinite(self.centroids)):
            raise DataError("codebook centroids must be finite")
        if self.source not in SOURCES:
            raise DataError(f"unknown feature source {self.source!r}")

    @property
    def n_words(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, clipped at zero for float safety."""
    d2 = (
        np.sum(X * X, axis=1)[:, None]
        + np.sum(C * C, axis=1)[None, :]
        - 2.0 * (X @ C.T)
    )
    return np.maximum(d2, 0.0)


def _kmeans_plus_plus(X: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    m = X.shape[0]
    centroids = np.empty((n, X.shape[1]))
    centroids[0] = X[rng.integers(m)]
    closest = _sq_dists(X, centroids[:1]).ravel()
    for k in range(1, n):
        total = closest.sum()
        if total <= 0.0:
            idx = int(rng.integers(m))  # all points coincide with a centroid
        else:
            idx = int(rng.choice(m, p=closest / total))
        centroids[k] = X[idx]
        closest = np.minimum(closest, _sq_dists(X, centroids[k:k + 1]).ravel())
    return centroids


def kmeans_fit(X: np.ndarray, n_clusters: int, seed: int,
               max_iter: int = 300, tol: float = 1e-6) -> tuple[np.ndarray, float]:
    """k-means++ then Lloyd until the centroid shift drops below tol.

    Empty clusters are reseeded to the point currently farthest from its
    assigned centroid. Returns (centroids, inertia).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError("k-means features must be a 2D matrix")
    if not np.all(np.isfinite(X)):
        raise DataError("k-means features must be finite")
    m = X.shape[0]
    if m < n_clusters:
        raise DataError(f"need at least {n_clusters} points, got {m}")

    rng = np.random.default_rng(seed)
    centroids = _kmeans_plus_plus(X, n_clusters, rng)
    prev_inertia = np.inf
    for _ in range(max_iter):
        d2 = _sq_dists(X, centroids)
        labels = d2.argmin(axis=1)
        closest = d2[np.arange(m), labels]
        inertia = float(closest.sum())
        # Lloyd never increases the objective; a violation is a bug.
        assert inertia <= prev_inertia * (1 + 1e-12) + 1e-12, "k-means inertia increased"
        prev_inertia = inertia

        new_centroids = centroids.copy()
        counts = np.bincount(labels, minlength=n_clusters)
        for k in range(n_clusters):
            if counts[k] > 0:
                new_centroids[k] = X[labels == k].mean(axis=0)
        for k in np.flatnonzero(counts == 0):
            far = int(np.argmax(closest))
            new_centroids[k] = X[far]
            closest[far] = 0.0  # don't hand the same point to two empty clusters

        shift = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        if shift < tol:
            break

    d2 = _sq_dists(X, centroids)
    inertia = float(d2[np.arange(m), d2.argmin(axis=1)].sum())
    return centroids, inertia


def fit_codebook(features: np.ndarray, n_words: int, seed: int,
                 metric: MetricId, region: RegionId, source: str,
                 max_iter: int = 300, tol: float = 1e-6) -> Codebook:
    centroids, inertia = kmeans_fit(features, n_words, seed, max_iter, tol)
    if len(np.unique(centroids, axis=0)) != n_words:
        raise DataError(
            "duplicate centroids after fit; reduce the word count or deduplicate features")
    return Codebook(metric=metric, region=region, source=source,
                    centroids=centroids, seed=seed, inertia=inertia)


def quantize(cb: Codebook, feature: np.ndarray) -> int:
    """Index of the nearest centroid; ties resolve to the lowest index."""
    feature = np.asarray(feature, dtype=np.float64)
    if feature.shape != (cb.dim,):
        raise DataError(f"feature dim {feature.shape} != codebook dim ({cb.dim},)")
    return int(_sq_dists(feature[None], cb.centroids).argmin())


def quantize_batch(cb: Codebook, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != cb.dim:
        raise DataError(f"features must be (n, {cb.dim}), got {features.shape}")
    if features.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return _sq_dists(features, cb.centroids).argmin(axis=1)


def encode_histogram(cb: Codebook, features: np.ndarray) -> np.ndarray:
    """L1-normalized visual-word frequencies; all-zero for an empty patch set."""
    words = quantize_batch(cb, np.asarray(features, dtype=np.float64).reshape(-1, cb.dim)
                           if np.asarray(features).size else np.zeros((0, cb.dim)))
    counts = np.bincount(words, minlength=cb.n_words).astype(np.float64)
    total = counts.sum()
    return counts / total if total > 0 else counts


@dataclass
class StatFeatures:
    metric: MetricId
    region: RegionId
    mean: float
    std: float
    skewness: float
    kurtosis: float
    entropy: float

    def as_array(self) -> np.ndarray:
        return np.array([self.mean, self.std, self.skewness, self.kurtosis, self.entropy])


def statistical_features(voxels: np.ndarray, metric: MetricId, region: RegionId) -> StatFeatures:
    """Population mean/std, standardized 3rd/4th moments, and Shannon entropy.

    Entropy (base 2) uses a 32-bin equal-width histogram over the region's
    own value range. A constant region degenerates to (c, 0, 0, 0, 0).
    """
    v = np.asarray(voxels, dtype=np.float64).ravel()
    if v.size < 2:
        raise DataError("need at least 2 voxels for region statistics")
    if not np.all(np.isfinite(v)):
        raise DataError("region voxels must be finite")
    mean = float(v.mean())
    var = float(np.mean((v - mean) ** 2))
    if var == 0.0:
        return StatFeatures(metric, region, mean, 0.0, 0.0, 0.0, 0.0)
    std = float(np.sqrt(var))
    centered = v - mean
    skew = float(np.mean(centered ** 3) / std ** 3)
    kurt = float(np.mean(centered ** 4) / std ** 4)
    counts, _ = np.histogram(v, bins=ENTROPY_BINS, range=(v.min(), v.max()))
    p = counts[counts > 0] / v.size
    entropy = float(-(p * np.log2(p)).sum())
    return StatFeatures(metric, region, mean, std, skew, kurt, entropy)


def class_mean_histograms(histograms: np.ndarray, labels01: np.ndarray):
    """Elementwise group means and their difference (positive minus control)."""
    histograms = np.asarray(histograms, dtype=np.float64)
    labels01 = np.asarray(labels01)
    pos = histograms[labels01 == 1]
    neg = histograms[labels01 == 0]
    if pos.shape[0] == 0 or neg.shape[0] == 0:
        raise DataError("both label groups must be non-empty")
    mean_pos = pos.mean(axis=0)
    mean_neg = neg.mean(axis=0)
    return mean_pos, mean_neg, mean_pos - mean_neg


def save_codebook(path, cb: Codebook) -> None:
    header = {
        "metric": cb.metric.name,
        "region": cb.region.name,
        "source": cb.source,
        "n_words": cb.n_words,
        "dim": cb.dim,
        "seed": cb.seed,
        "inertia": cb.inertia,
    }
    write_container(path, CODEBOOK_MAGIC, header, floats_to_bytes(cb.centroids))


def load_codebook(path) -> Codebook:
    header, payload = read_container(path, CODEBOOK_MAGIC)
    centroids, offset = floats_from_bytes(payload, (header["n_words"], header["dim"]))
    if offset != len(payload):
        raise FormatError(f"{path}: trailing bytes in centroid payload")
    return Codebook(
        metric=MetricId[header["metric"]],
        region=RegionId[header["region"]],
        source=header["source"],
        centroids=centroids,
        seed=header["seed"],
        inertia=header["inertia"],
    )


class VisualWordCodebook(BaseEstimator):
    """sklearn-style wrapper: fit on patch features, predict word indices."""

    def __init__(self, n_words=20, seed=0, max_iter=300, tol=1e-6):
        self.n_words = n_words
        self.seed = seed
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.centroids_, self.inertia_ = kmeans_fit(
            X, self.n_words, self.seed, self.max_iter, self.tol)
        return self

    def _codebook(self, metric=MetricId.FA, region=RegionId.SCC, source="RAW") -> Codebook:
        check_is_fitted(self, "centroids_")
        return Codebook(metric=metric, region=region, source=source,
                        centroids=self.centroids_, seed=self.seed, inertia=self.inertia_)

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "centroids_")
        X = check_array(X, dtype=np.float64)
        return _sq_dists(X, self.centroids_).argmin(axis=1)

    def histogram(self, X) -> np.ndarray:
        counts = np.bincount(self.predict(X), minlength=self.n_words).astype(np.float64)
        total = counts.sum()
        return counts / total if total > 0 else counts
