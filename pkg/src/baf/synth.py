"""Synthetic labeled cohorts with a controllable texture-level class effect.

Every (subject, region, metric) volume is a smoothed Gaussian field. For
positive-class subjects, affected (metric, region) pairs get their texture
shifted by the effect size: variance multiplied by (1 + effect), or a
sinusoidal ripple of relative amplitude effect added. Demographics are
drawn identically for both classes, so only the affected texture carries
label information; with effect 0 the class generators are identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .volumes import (
    CohortManifest,
    MetricId,
    MetricVolume,
    RegionId,
    RoiMask,
    SubjectRecord,
    pair_key,
    save_manifest,
    save_mask,
    save_volume,
)

TEXTURES = ("variance-shift", "frequency-shift")

DEFAULT_DIMS = (48, 48, 13)
DEFAULT_SEMI_AXES = (15.0, 15.0, 4.8)
DEFAULT_AFFECTED = ((MetricId.MD, RegionId.Thalamus), (MetricId.RK, RegionId.SCC))


@dataclass
class SynthConfig:
    n_per_class: int = 30
    dims: dict = field(default_factory=lambda: {r: DEFAULT_DIMS for r in RegionId})
    semi_axes: dict = field(default_factory=lambda: {r: DEFAULT_SEMI_AXES for r in RegionId})
    noise_mean: float = 0.5
    noise_std: float = 0.1
    effect_size: float = 2.0
    affected: tuple = DEFAULT_AFFECTED
    texture: str = "variance-shift"
    seed: int = 0

    def validate(self):
        if self.n_per_class < 1:
            raise ConfigError("n_per_class must be >= 1")
        if self.effect_size < 0:
            raise ConfigError("effect_size must be >= 0")
        if self.texture not in TEXTURES:
            raise ConfigError(f"texture must be one of {TEXTURES}")
        if self.noise_std <= 0:
            raise ConfigError("noise_std must be positive")
        for metric, region in self.affected:
            if metric not in region.metrics:
                raise ConfigError(f"{metric.name} is not carried by region {region.name}")


def _smooth3(fieldvals: np.ndarray) -> np.ndarray:
    """Separable [1, 2, 1]/4 smoothing along each axis with edge padding."""
    out = fieldvals
    for axis in range(3):
        pad = [(1, 1) if a == axis else (0, 0) for a in range(3)]
        p = np.pad(out, pad, mode="edge")
        n = out.shape[axis]
        sl = lambda k: tuple(slice(k, k + n) if a == axis else slice(None) for a in range(3))
        out = 0.25 * p[sl(0)] + 0.5 * p[sl(1)] + 0.25 * p[sl(2)]
    return out


def ellipsoid_mask(region: RegionId, dims, semi_axes) -> RoiMask:
    nx, ny, nz = dims
    cx, cy, cz = (nx - 1) / 2.0, (ny - 1) / 2.0, (nz - 1) / 2.0
    a, b, c = semi_axes
    x, y, z = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    inside = ((x - cx) / a) ** 2 + ((y - cy) / b) ** 2 + ((z - cz) / c) ** 2 <= 1.0
    return RoiMask(region=region, voxels=inside)


def _field_seed(cfg_seed: int, subject_idx: int, region: RegionId, metric: MetricId):
    region_idx = list(RegionId).index(region)
    metric_idx = list(MetricId).index(metric)
    return np.random.SeedSequence(entropy=cfg_seed,
                                  spawn_key=(1, subject_idx, region_idx, metric_idx))


def _demo_seed(cfg_seed: int, subject_idx: int):
    return np.random.SeedSequence(entropy=cfg_seed, spawn_key=(2, subject_idx))


def generate_field(cfg: SynthConfig, subject_idx: int, positive: bool,
                   region: RegionId, metric: MetricId) -> np.ndarray:
    """One subject's volume for a (region, metric) pair, honoring the class effect."""
    rng = np.random.default_rng(_field_seed(cfg.seed, subject_idx, region, metric))
    dims = tuple(cfg.dims[region])
    white = rng.standard_normal(dims)
    affected = positive and (metric, region) in tuple(cfg.affected)
    std = cfg.noise_std
    if affected and cfg.texture == "variance-shift":
        std = cfg.noise_std * np.sqrt(1.0 + cfg.effect_size)
    fieldvals = cfg.noise_mean + _smooth3(white * std)
    if affected and cfg.texture == "frequency-shift":
        # Ripple amplitude is relative to the base noise scale.
        nx, ny, _ = dims
        x, y, z = np.meshgrid(np.arange(dims[0]), np.arange(dims[1]),
                              np.arange(dims[2]), indexing="ij")
        fieldvals = fieldvals + cfg.effect_size * cfg.noise_std * np.sin(
            2.0 * np.pi * (x + y) / 6.0)
    return fieldvals


def generate_cohort(cfg: SynthConfig, out_dir) -> CohortManifest:
    """Write masks, volumes, and the manifest; byte-identical given the same seed."""
    cfg.validate()
    out_dir = Path(out_dir)
    (out_dir / "volumes").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)

    mask_paths = {}
    for region in RegionId:
        mask = ellipsoid_mask(region, cfg.dims[region], cfg.semi_axes[region])
        rel = f"masks/{region.name.lower()}.mask"
        save_mask(out_dir / rel, mask)
        mask_paths[region] = rel

    subjects = []
    n_total = 2 * cfg.n_per_class
    for idx in range(n_total):
        positive = idx < cfg.n_per_class
        label = "MTBI" if positive else "Control"
        sid = f"{'mtbi' if positive else 'ctrl'}_{idx if positive else idx - cfg.n_per_class:03d}"
        demo_rng = np.random.default_rng(_demo_seed(cfg.seed, idx))
        age = float(demo_rng.uniform(18.0, 64.0))
        sex = "M" if demo_rng.random() < 0.5 else "F"

        volume_paths = {}
        for region in RegionId:
            for metric in region.metrics:
                values = generate_field(cfg, idx, positive, region, metric)
                rel = f"volumes/{sid}_{region.name}_{metric.name}.vol"
                save_volume(out_dir / rel, MetricVolume(sid, metric, values))
                volume_paths[pair_key(region, metric)] = rel
        subjects.append(SubjectRecord(subject_id=sid, label=label, age=age,
                                      sex=sex, volume_paths=volume_paths))

    manifest = CohortManifest(root=out_dir, subjects=subjects, mask_paths=mask_paths)
    save_manifest(out_dir / "cohort.json", manifest)
    manifest.source_path = out_dir / "cohort.json"
    return manifest
