"""Metric normalization and 2D patch extraction over ROI masks.

Patches are axial (fixed z) square tiles laid on a stride grid anchored at
each slice's mask bounding-box origin. A window is kept when the fraction
of mask voxels it covers reaches the coverage threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .volumes import MetricId, MetricVolume, RegionId, RoiMask

PATCH_SIZE = 16
PATCH_STRIDE = 3
MIN_COVERAGE = 0.5


@dataclass(frozen=True)
class NormRange:
    """Per-metric global min-max map onto [0, 1], fitted on training volumes."""

    vmin: float
    vmax: float

    def apply(self, values: np.ndarray) -> np.ndarray:
        # Out-of-range values from unseen subjects clamp to the unit interval.
        scaled = (np.asarray(values, dtype=np.float64) - self.vmin) / (self.vmax - self.vmin)
        return np.clip(scaled, 0.0, 1.0)


def fit_norm_range(volumes: list[MetricVolume]) -> NormRange:
    if not volumes:
        raise DataError("need at least one volume to fit a normalization range")
    vmin = min(float(v.values.min()) for v in volumes)
    vmax = max(float(v.values.max()) for v in volumes)
    if vmax == vmin:
        raise DataError("degenerate metric range (max equals min)")
    return NormRange(vmin=vmin, vmax=vmax)


def normalize_metric(volumes: list[MetricVolume]) -> tuple[list[MetricVolume], NormRange]:
    """Fit the global range on the given (training) pool and rescale every volume."""
    rng = fit_norm_range(volumes)
    normalized = [
        MetricVolume(subject_id=v.subject_id, metric=v.metric, values=rng.apply(v.values))
        for v in volumes
    ]
    return normalized, rng


@dataclass
class Patch:
    values: np.ndarray  # (size, size) float64, indexed [x, y]
    subject_id: str
    metric: MetricId
    region: RegionId
    slice_index: int
    offset: tuple[int, int]  # (x, y) of the window's low corner

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(self.values)):
            raise DataError(f"patch at z={self.slice_index} offset={self.offset} has non-finite values")


def extract_patches(
    volume: MetricVolume,
    mask: RoiMask,
    size: int = PATCH_SIZE,
    stride: int = PATCH_STRIDE,
    coverage: float = MIN_COVERAGE,
) -> list[Patch]:
    """Slide a size x size window at the given stride over every axial slice.

    The grid starts at the per-slice bounding box of the mask and only
    windows fully inside the volume are considered. Output is ordered by
    (z, y, x). An empty mask yields an empty list.
    """
    if volume.dims != mask.dims:
        raise DataError(f"volume dims {volume.dims} != mask dims {mask.dims}")
    nx, ny, nz = volume.dims
    if size > nx or size > ny:
        raise DataError(f"patch size {size} exceeds slice dims ({nx}, {ny})")
    if stride < 1:
        raise DataError("stride must be >= 1")
    if not 0 < coverage <= 1:
        raise DataError("coverage must lie in (0, 1]")

    window_area = size * size
    patches: list[Patch] = []
    for z in range(nz):
        m = mask.voxels[:, :, z]
        if not m.any():
            continue
        xs, ys = np.nonzero(m)
        x0, y0 = int(xs.min()), int(ys.min())
        # Summed-area table makes each window's coverage an O(1) lookup.
        sat = np.zeros((nx + 1, ny + 1), dtype=np.int64)
        sat[1:, 1:] = m.cumsum(axis=0).cumsum(axis=1)
        for y in range(y0, ny - size + 1, stride):
            for x in range(x0, nx - size + 1, stride):
                inside = sat[x + size, y + size] - sat[x, y + size] - sat[x + size, y] + sat[x, y]
                if inside / window_area >= coverage:
                    patches.append(
                        Patch(
                            values=volume.values[x:x + size, y:y + size, z].copy(),
                            subject_id=volume.subject_id,
                            metric=volume.metric,
                            region=mask.region,
                            slice_index=z,
                            offset=(x, y),
                        )
                    )
    return patches


def patch_matrix(patches: list[Patch]) -> np.ndarray:
    """Stack patch tiles into an (n, size, size) array."""
    if not patches:
        return np.zeros((0, PATCH_SIZE, PATCH_SIZE))
    return np.stack([p.values for p in patches])
