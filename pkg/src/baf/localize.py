"""Visual-word occurrence heatmaps over region volumes.

For a chosen word, every extracted patch is featurized and quantized; when
it lands on that word, all voxels under the patch footprint are
incremented on the patch's slice. Raw counts are exported; display scaling
is left to the consumer.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bow import Codebook, quantize_batch
from .errors import DataError
from .patches import extract_patches
from .volumes import MetricVolume, RegionId, RoiMask


@dataclass
class Heatmap:
    region: RegionId
    counts: np.ndarray  # (nx, ny, nz) int64

    @property
    def dims(self):
        return self.counts.shape


def word_heatmap(featurize, cb: Codebook, volume: MetricVolume, mask: RoiMask,
                 word: int, size: int = 16, stride: int = 3,
                 coverage: float = 0.5) -> Heatmap:
    """Count, per voxel, the accepted patches quantized to ``word`` that cover it.

    ``featurize`` maps an (n, size, size) patch stack to (n, d) feature
    rows and must match the codebook's source (flattened tiles for RAW,
    encoder latents otherwise).
    """
    if not 0 <= word < cb.n_words:
        raise DataError(f"word index {word} outside [0, {cb.n_words})")
    patches = extract_patches(volume, mask, size=size, stride=stride, coverage=coverage)
    counts = np.zeros(volume.dims, dtype=np.int64)
    if not patches:
        return Heatmap(region=mask.region, counts=counts)
    stack = np.stack([p.values for p in patches])
    feats = np.asarray(featurize(stack), dtype=np.float64)
    if feats.shape != (len(patches), cb.dim):
        raise DataError(
            f"featurizer returned {feats.shape}, codebook expects (n, {cb.dim})")
    words = quantize_batch(cb, feats)
    for patch, w in zip(patches, words):
        if w == word:
            x, y = patch.offset
            counts[x:x + size, y:y + size, patch.slice_index] += 1
    return Heatmap(region=mask.region, counts=counts)


def mean_heatmap(heatmaps: list[Heatmap], labels01) -> tuple[np.ndarray, np.ndarray]:
    """Voxelwise mean count maps (positive class, control class)."""
    labels01 = np.asarray(labels01, dtype=int)
    if len(heatmaps) != len(labels01):
        raise DataError("one label per heatmap required")
    stack = np.stack([h.counts for h in heatmaps]).astype(np.float64)
    pos = stack[labels01 == 1]
    neg = stack[labels01 == 0]
    if pos.shape[0] == 0 or neg.shape[0] == 0:
        raise DataError("both label groups must be non-empty")
    return pos.mean(axis=0), neg.mean(axis=0)


def heatmap_slice_to_pgm(path, counts: np.ndarray, z: int) -> None:
    """One axial slice as an ASCII PGM with raw counts as pixel values."""
    plane = counts[:, :, z]
    maxval = max(1, int(plane.max()))
    lines = [f"P2", f"{plane.shape[0]} {plane.shape[1]}", str(maxval)]
    for y in range(plane.shape[1]):
        lines.append(" ".join(str(int(v)) for v in plane[:, y]))
    Path(path).write_text("\n".join(lines) + "\n")


def heatmap_to_csv(path, counts: np.ndarray) -> None:
    """All slices as CSV rows: z, y, then one column per x."""
    lines = ["z,y," + ",".join(f"x{t}" for t in range(counts.shape[0]))]
    for z in range(counts.shape[2]):
        for y in range(counts.shape[1]):
            row = ",".join(str(int(v)) for v in counts[:, y, z])
            lines.append(f"{z},{y},{row}")
    Path(path).write_text("\n".join(lines) + "\n")
