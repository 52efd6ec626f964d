"""Configuration and feature-building orchestration shared by the CLI stages.

Features for one cohort and one source kind flow through:

    volumes -> per-metric min-max normalization -> ROI patches
            -> (encoder latents | flattened tiles | region statistics)
            -> per-(metric, region) codebook histograms
            -> assembled vectors with demographics

``fit_ids`` names the subjects whose data may influence fitted stages
(normalization ranges, encoders, codebooks); histograms and statistics are
then computed for every subject. The honest heldout path rebuilds all of
this per repeat with the heldout subjects excluded from ``fit_ids``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from .autoencoder import (
    AaeConfig,
    CaeConfig,
    EncoderModel,
    TrainingLog,
    encode_batch,
    train_aae,
    train_cae,
)
from .bow import Codebook, encode_histogram, fit_codebook, statistical_features
from .errors import ConfigError, DataError, InputError
from .evalproto import SelectionSpec
from .features import (
    FeatureMatrix,
    assemble_features,
    bow_descriptors,
    stats_descriptors,
)
from .patches import NormRange, extract_patches, fit_norm_range
from .synth import DEFAULT_AFFECTED, DEFAULT_DIMS, DEFAULT_SEMI_AXES, SynthConfig
from .volumes import CohortManifest, MetricId, RegionId, load_manifest

SOURCES = ("raw", "cae", "aae", "stats")

_METRIC_SEEDS = {m: i for i, m in enumerate(MetricId)}


def _manifest_path(manifest: CohortManifest) -> Path:
    path = getattr(manifest, "source_path", None)
    if path is None:
        path = manifest.root / "cohort.json"
    if not Path(path).is_file():
        raise InputError(f"cohort manifest file not found at {path}")
    return Path(path)


def _default_n_jobs() -> int:
    return max(1, min(4, os.cpu_count() or 1))


@dataclass
class PipelineConfig:
    cohort: str = ""
    work_dir: str = "work"
    source: str = "aae"
    words: int = 20
    seed: int = 1234
    n_jobs: int = field(default_factory=_default_n_jobs)

    # patch extraction
    patch_size: int = 16
    patch_stride: int = 3
    patch_coverage: float = 0.5

    # encoder training
    latent_dim: int = 32
    batch_size: int = 250
    epochs: int = 8
    cae_learning_rate: float = 3e-4
    aae_lambda: float = 0.1
    aae_lr_generator: float = 6e-4
    aae_lr_discriminator: float = 8e-4
    train_patch_cap: int = 3000

    # greedy selection
    selection_max_k: int = 10
    selection_cv_runs: int = 6
    selection_val_frac: float = 0.2
    selection_trainer_c: float = 1.0
    selection_trainer_gamma: float | None = None
    selection_stop_on_no_improvement: bool = False

    # SVM grids
    svm_c_grid: tuple = (0.1, 1.0, 10.0, 100.0)
    svm_gamma_grid: tuple = (0.001, 0.01, 0.1, 1.0)
    svm_tol: float = 1e-3

    # evaluation protocol
    eval_runs: int = 50
    eval_val_frac: float = 0.2
    heldout_size: int = 12
    heldout_repeats: int = 2
    vote_threshold: float = 0.5

    # synthetic cohort generation
    synth_n_per_class: int = 30
    synth_dims: tuple = DEFAULT_DIMS
    synth_semi_axes: tuple = DEFAULT_SEMI_AXES
    synth_noise_mean: float = 0.5
    synth_noise_std: float = 0.1
    synth_effect_size: float = 2.0
    synth_affected: tuple = tuple((m.name, r.name) for m, r in DEFAULT_AFFECTED)
    synth_texture: str = "variance-shift"

    _GROUPS = {
        "patch": ("size", "stride", "coverage"),
        "encoder": ("latent_dim", "batch_size", "epochs", "cae_learning_rate",
                    "aae_lambda", "aae_lr_generator", "aae_lr_discriminator",
                    "train_patch_cap"),
        "selection": ("max_k", "cv_runs", "val_frac", "trainer_c", "trainer_gamma",
                      "stop_on_no_improvement"),
        "svm": ("c_grid", "gamma_grid", "tol"),
        "eval": ("runs", "val_frac", "heldout_size", "heldout_repeats", "vote_threshold"),
        "synth": ("n_per_class", "dims", "semi_axes", "noise_mean", "noise_std",
                  "effect_size", "affected", "texture"),
    }
    _GROUP_PREFIX = {"patch": "patch", "encoder": "", "selection": "selection",
                     "svm": "svm", "eval": "eval", "synth": "synth"}
    _TOP_KEYS = ("cohort", "work_dir", "source", "words", "seed", "n_jobs")

    def validate(self) -> None:
        if self.source not in SOURCES:
            raise ConfigError(f"source must be one of {SOURCES}, got {self.source!r}")
        if self.words < 1:
            raise ConfigError("words must be >= 1")
        if not 0 < self.patch_coverage <= 1:
            raise ConfigError("patch coverage must lie in (0, 1]")
        if self.patch_size < 4 or self.patch_size % 4:
            raise ConfigError("patch size must be a positive multiple of 4")
        if self.patch_stride < 1:
            raise ConfigError("patch stride must be >= 1")
        for name in ("selection_max_k", "selection_cv_runs", "eval_runs",
                     "heldout_size", "heldout_repeats", "epochs", "batch_size",
                     "latent_dim", "train_patch_cap", "n_jobs", "words"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not (0 < self.selection_val_frac < 1 and 0 < self.eval_val_frac < 1):
            raise ConfigError("validation fractions must lie in (0, 1)")
        if not 0 <= self.vote_threshold <= 1:
            raise ConfigError("vote threshold must lie in [0, 1]")
        if len(self.svm_c_grid) == 0 or len(self.svm_gamma_grid) == 0:
            raise ConfigError("SVM grids must be non-empty")

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        cfg = cls()
        doc = dict(doc)
        for key in list(doc):
            if key in cls._TOP_KEYS:
                setattr(cfg, key, doc.pop(key))
        for group, keys in cls._GROUPS.items():
            sub = doc.pop(group, {})
            if not isinstance(sub, dict):
                raise ConfigError(f"config section {group!r} must be an object")
            prefix = cls._GROUP_PREFIX[group]
            for key in list(sub):
                if key not in keys:
                    raise ConfigError(f"unknown config key {group}.{key}")
                attr = f"{prefix}_{key}" if prefix else key
                value = sub[key]
                if isinstance(value, list):
                    value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
                setattr(cfg, attr, value)
        if doc:
            raise ConfigError(f"unknown config keys: {sorted(doc)}")
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        path = Path(path)
        if not path.is_file():
            raise InputError(f"no config file at {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_dict(doc)

    def to_canonical_dict(self) -> dict:
        doc = {k: getattr(self, k) for k in self._TOP_KEYS}
        for group, keys in self._GROUPS.items():
            prefix = self._GROUP_PREFIX[group]
            doc[group] = {}
            for key in keys:
                attr = f"{prefix}_{key}" if prefix else key
                value = getattr(self, attr)
                if isinstance(value, tuple):
                    value = [list(v) if isinstance(v, tuple) else v for v in value]
                doc[group][key] = value
        return doc

    def synth_config(self) -> SynthConfig:
        affected = tuple((MetricId[m], RegionId[r]) for m, r in self.synth_affected)
        return SynthConfig(
            n_per_class=self.synth_n_per_class,
            dims={r: tuple(self.synth_dims) for r in RegionId},
            semi_axes={r: tuple(self.synth_semi_axes) for r in RegionId},
            noise_mean=self.synth_noise_mean,
            noise_std=self.synth_noise_std,
            effect_size=self.synth_effect_size,
            affected=affected,
            texture=self.synth_texture,
            seed=self.seed,
        )

    def selection_spec(self) -> SelectionSpec:
        return SelectionSpec(
            max_k=self.selection_max_k,
            cv_runs=self.selection_cv_runs,
            val_frac=self.selection_val_frac,
            trainer_c=self.selection_trainer_c,
            trainer_gamma=self.selection_trainer_gamma,
            stop_on_no_improvement=self.selection_stop_on_no_improvement,
        )


@dataclass
class BuildArtifacts:
    norm_ranges: dict            # MetricId -> NormRange
    encoders: dict               # MetricId -> EncoderModel (cae/aae only)
    training_logs: dict          # MetricId -> TrainingLog
    codebooks: dict              # (MetricId, RegionId) -> Codebook (bow sources)
    fit_ids: tuple


def _metric_volumes(manifest: CohortManifest, metric: MetricId, subject_ids):
    """All volumes of one metric in block order: SCC first, then thalamus."""
    out = []
    for region in (RegionId.SCC, RegionId.Thalamus):
        if metric not in region.metrics:
            continue
        for sid in subject_ids:
            out.append((region, sid, manifest.load_volume(sid, region, metric)))
    return out


def _extract_all(manifest, metric, norm_range: NormRange, subject_ids, cfg: PipelineConfig):
    """Normalized patch stacks keyed (region, subject)."""
    masks = {region: manifest.load_mask(region) for region in RegionId
             if metric in region.metrics}
    stacks = {}
    for region, sid, vol in _metric_volumes(manifest, metric, subject_ids):
        vol.values = norm_range.apply(vol.values)
        patches = extract_patches(vol, masks[region], size=cfg.patch_size,
                                  stride=cfg.patch_stride, coverage=cfg.patch_coverage)
        stacks[(region, sid)] = (
            np.stack([p.values for p in patches]) if patches
            else np.zeros((0, cfg.patch_size, cfg.patch_size)))
    return stacks


def _derived_seed(root_seed: int, *key) -> int:
    ss = np.random.SeedSequence(entropy=root_seed, spawn_key=tuple(key))
    return int(ss.generate_state(1)[0])


def metric_norm_range(manifest: CohortManifest, metric: MetricId, fit_ids) -> NormRange:
    vols = [v for _, _, v in _metric_volumes(manifest, metric, list(fit_ids))]
    return fit_norm_range(vols)


def encoder_corpus(stacks: dict, fit_ids, cfg: PipelineConfig, seed: int) -> np.ndarray:
    """Training patches pooled over both regions, capped by a seeded subsample."""
    fit = set(fit_ids)
    corpus = np.concatenate([stacks[key] for key in sorted(stacks, key=lambda k: (k[0].name, k[1]))
                             if key[1] in fit])
    if corpus.shape[0] > cfg.train_patch_cap:
        rng = np.random.default_rng(seed)
        keep = rng.choice(corpus.shape[0], size=cfg.train_patch_cap, replace=False)
        corpus = corpus[np.sort(keep)]
    return corpus


def train_metric_encoder(manifest: CohortManifest, metric: MetricId, cfg: PipelineConfig,
                         norm_range: NormRange, fit_ids, root_seed: int):
    """Train this metric's CAE or AAE on fit-subject patches from both regions."""
    mi = _METRIC_SEEDS[metric]
    stacks = _extract_all(manifest, metric, norm_range, list(fit_ids), cfg)
    corpus = encoder_corpus(stacks, fit_ids, cfg, _derived_seed(root_seed, mi, 0))
    train_seed = _derived_seed(root_seed, mi, 1)
    shape = (cfg.patch_size, cfg.patch_size)
    if cfg.source == "cae":
        c = CaeConfig(latent_dim=cfg.latent_dim, learning_rate=cfg.cae_learning_rate,
                      batch_size=min(cfg.batch_size, corpus.shape[0]),
                      epochs=cfg.epochs, patch_shape=shape, seed=train_seed)
        enc, _, log = train_cae(corpus, c)
    elif cfg.source == "aae":
        a = AaeConfig(latent_dim=cfg.latent_dim, lam=cfg.aae_lambda,
                      lr_generator=cfg.aae_lr_generator,
                      lr_discriminator=cfg.aae_lr_discriminator,
                      batch_size=min(cfg.batch_size, corpus.shape[0]),
                      epochs=cfg.epochs, patch_shape=shape, seed=train_seed)
        enc, _, _, log = train_aae(corpus, a)
    else:
        raise ConfigError(f"source {cfg.source!r} does not train an encoder")
    model = EncoderModel(metric=metric, source=cfg.source.upper(), encoder=enc,
                         norm_range=norm_range, latent_dim=cfg.latent_dim,
                         patch_shape=shape)
    return model, log


def _featurizer(cfg: PipelineConfig, encoder: EncoderModel | None):
    def featurize(stack: np.ndarray) -> np.ndarray:
        if stack.shape[0] == 0:
            dim = encoder.latent_dim if encoder else cfg.patch_size ** 2
            return np.zeros((0, dim))
        if encoder is not None:
            return encode_batch(encoder.encoder, stack, (cfg.patch_size, cfg.patch_size))
        return stack.reshape(stack.shape[0], -1)
    return featurize


def fit_metric_codebooks(manifest: CohortManifest, metric: MetricId, cfg: PipelineConfig,
                         norm_range: NormRange, encoder: EncoderModel | None,
                         fit_ids, root_seed: int) -> dict:
    """One codebook per region this metric appears in, fitted on fit-subject patches."""
    mi = _METRIC_SEEDS[metric]
    stacks = _extract_all(manifest, metric, norm_range, list(fit_ids), cfg)
    featurize = _featurizer(cfg, encoder)
    codebooks = {}
    for ri, region in enumerate(RegionId):
        if metric not in region.metrics:
            continue
        feats = np.concatenate([featurize(stacks[(region, sid)]) for sid in fit_ids])
        cb_seed = _derived_seed(root_seed, mi, 2 + ri)
        codebooks[region] = fit_codebook(feats, cfg.words, cb_seed, metric, region,
                                         cfg.source.upper())
    return codebooks


def _metric_job(manifest_path: str, metric_name: str, cfg: PipelineConfig,
                fit_ids: tuple, all_ids: tuple, root_seed: int):
    """Everything for one metric: normalize, patch, train, codebook, histograms."""
    manifest = load_manifest(manifest_path)
    metric = MetricId[metric_name]

    norm_range = metric_norm_range(manifest, metric, fit_ids)
    encoder_model = None
    log = None
    if cfg.source in ("cae", "aae"):
        encoder_model, log = train_metric_encoder(manifest, metric, cfg, norm_range,
                                                  fit_ids, root_seed)
    region_cbs = fit_metric_codebooks(manifest, metric, cfg, norm_range,
                                      encoder_model, fit_ids, root_seed)

    stacks = _extract_all(manifest, metric, norm_range, list(all_ids), cfg)
    featurize = _featurizer(cfg, encoder_model)
    codebooks = {}
    histograms = {}
    for region, cb in region_cbs.items():
        codebooks[region.name] = cb
        for sid in all_ids:
            histograms[(region.name, sid)] = encode_histogram(
                cb, featurize(stacks[(region, sid)]))

    return {
        "metric": metric.name,
        "norm_range": (norm_range.vmin, norm_range.vmax),
        "encoder": encoder_model,
        "log": log,
        "codebooks": codebooks,
        "histograms": histograms,
    }


def _stats_job(manifest_path: str, metric_name: str, fit_ids: tuple, all_ids: tuple):
    manifest = load_manifest(manifest_path)
    metric = MetricId[metric_name]
    fit_vols = [v for _, _, v in _metric_volumes(manifest, metric, list(fit_ids))]
    norm_range = fit_norm_range(fit_vols)
    del fit_vols
    masks = {region: manifest.load_mask(region) for region in RegionId
             if metric in region.metrics}
    blocks = {}
    for region, sid, vol in _metric_volumes(manifest, metric, list(all_ids)):
        voxels = norm_range.apply(vol.values)[masks[region].voxels]
        stats = statistical_features(voxels, metric, region)
        blocks[(region.name, sid)] = stats.as_array()
    return {
        "metric": metric.name,
        "norm_range": (norm_range.vmin, norm_range.vmax),
        "encoder": None,
        "log": None,
        "codebooks": {},
        "histograms": blocks,
    }


def build_features(manifest: CohortManifest, cfg: PipelineConfig, fit_ids=None,
                   seed: int | None = None) -> tuple[FeatureMatrix, BuildArtifacts]:
    """Assemble the cohort feature matrix for the configured source kind."""
    cfg.validate()
    all_ids = tuple(manifest.subject_ids)
    fit_ids = tuple(fit_ids) if fit_ids is not None else all_ids
    if not set(fit_ids) <= set(all_ids):
        raise DataError("fit_ids must be cohort subjects")
    seed = cfg.seed if seed is None else seed
    manifest_path = str(_manifest_path(manifest))

    if cfg.source == "stats":
        jobs = [delayed(_stats_job)(manifest_path, m.name, fit_ids, all_ids)
                for m in MetricId]
    else:
        jobs = [delayed(_metric_job)(manifest_path, m.name, cfg, fit_ids, all_ids, seed)
                for m in MetricId]
    results = Parallel(n_jobs=cfg.n_jobs)(jobs)
    by_metric = {r["metric"]: r for r in results}

    width = 5 if cfg.source == "stats" else cfg.words
    descriptors = stats_descriptors() if cfg.source == "stats" else bow_descriptors(cfg.words)
    rows = []
    for sid in all_ids:
        record = manifest.subject(sid)
        blocks = {}
        for region in RegionId:
            for metric in region.metrics:
                blocks[(region, metric)] = by_metric[metric.name]["histograms"][(region.name, sid)]
        rows.append(assemble_features(blocks, record.age, record.sex, width))
    fm = FeatureMatrix(
        values=np.vstack(rows),
        labels01=np.array([manifest.subject(sid).label01 for sid in all_ids]),
        subject_ids=list(all_ids),
        descriptors=descriptors,
    )

    artifacts = BuildArtifacts(
        norm_ranges={MetricId[m]: NormRange(*r["norm_range"]) for m, r in by_metric.items()},
        encoders={MetricId[m]: r["encoder"] for m, r in by_metric.items() if r["encoder"]},
        training_logs={MetricId[m]: r["log"] for m, r in by_metric.items() if r["log"]},
        codebooks={(MetricId[m], RegionId[rn]): cb
                   for m, r in by_metric.items() for rn, cb in r["codebooks"].items()},
        fit_ids=fit_ids,
    )
    return fm, artifacts


def _apply_job(manifest_path: str, metric_name: str, cfg: PipelineConfig,
               all_ids: tuple, norm_range_bounds: tuple,
               encoder: EncoderModel | None, codebooks: dict):
    """Histograms/statistics for every subject from already fitted artifacts."""
    manifest = load_manifest(manifest_path)
    metric = MetricId[metric_name]
    norm_range = NormRange(*norm_range_bounds)

    if cfg.source == "stats":
        masks = {region: manifest.load_mask(region) for region in RegionId
                 if metric in region.metrics}
        blocks = {}
        for region, sid, vol in _metric_volumes(manifest, metric, list(all_ids)):
            voxels = norm_range.apply(vol.values)[masks[region].voxels]
            blocks[(region.name, sid)] = statistical_features(voxels, metric, region).as_array()
        return {"metric": metric.name, "histograms": blocks}

    stacks = _extract_all(manifest, metric, norm_range, list(all_ids), cfg)

    def featurize(stack):
        if stack.shape[0] == 0:
            dim = encoder.latent_dim if encoder else cfg.patch_size ** 2
            return np.zeros((0, dim))
        if encoder is not None:
            return encode_batch(encoder.encoder, stack, (cfg.patch_size, cfg.patch_size))
        return stack.reshape(stack.shape[0], -1)

    histograms = {}
    for region in RegionId:
        if metric not in region.metrics:
            continue
        cb = codebooks[region.name]
        for sid in all_ids:
            histograms[(region.name, sid)] = encode_histogram(
                cb, featurize(stacks[(region, sid)]))
    return {"metric": metric.name, "histograms": histograms}


def apply_features(manifest: CohortManifest, cfg: PipelineConfig,
                   norm_ranges: dict, encoders: dict, codebooks: dict) -> FeatureMatrix:
    """Assemble features for all subjects from staged artifacts (no fitting)."""
    cfg.validate()
    all_ids = tuple(manifest.subject_ids)
    manifest_path = str(_manifest_path(manifest))
    jobs = []
    for metric in MetricId:
        bounds = (norm_ranges[metric].vmin, norm_ranges[metric].vmax)
        cb_map = {region.name: codebooks[(metric, region)] for region in RegionId
                  if metric in region.metrics} if cfg.source != "stats" else {}
        jobs.append(delayed(_apply_job)(manifest_path, metric.name, cfg, all_ids,
                                        bounds, encoders.get(metric), cb_map))
    results = Parallel(n_jobs=cfg.n_jobs)(jobs)
    by_metric = {r["metric"]: r for r in results}

    width = 5 if cfg.source == "stats" else cfg.words
    descriptors = stats_descriptors() if cfg.source == "stats" else bow_descriptors(cfg.words)
    rows = []
    for sid in all_ids:
        record = manifest.subject(sid)
        blocks = {}
        for region in RegionId:
            for metric in region.metrics:
                blocks[(region, metric)] = by_metric[metric.name]["histograms"][(region.name, sid)]
        rows.append(assemble_features(blocks, record.age, record.sex, width))
    return FeatureMatrix(
        values=np.vstack(rows),
        labels01=np.array([manifest.subject(sid).label01 for sid in all_ids]),
        subject_ids=list(all_ids),
        descriptors=descriptors,
    )


def cohort_feature_stub(manifest: CohortManifest) -> FeatureMatrix:
    """Ids and labels only; used when a refit callback supplies real features."""
    from .features import FeatureDescriptor, KIND_DEMOGRAPHIC
    ids = manifest.subject_ids
    return FeatureMatrix(
        values=np.zeros((len(ids), 1)),
        labels01=np.array([manifest.subject(sid).label01 for sid in ids]),
        subject_ids=ids,
        descriptors=[FeatureDescriptor(KIND_DEMOGRAPHIC, "age")],
    )


def mean_only_view(fm: FeatureMatrix) -> FeatureMatrix:
    """Restrict a statistical feature matrix to per-region means plus demographics."""
    keep = [i for i, d in enumerate(fm.descriptors)
            if d.kind == "demographic" or d.detail == "mean"]
    return FeatureMatrix(
        values=fm.values[:, keep],
        labels01=fm.labels01,
        subject_ids=fm.subject_ids,
        descriptors=[fm.descriptors[i] for i in keep],
    )


def run_heldout_pipeline(cfg: PipelineConfig, manifest: CohortManifest,
                         feature_filter=None):
    """Per-repeat honest heldout run: all fitted stages rebuilt on the pool."""
    from .evalproto import heldout_protocol
    from .svm import TrainOptions

    def refit(held_ids, repeat_seed):
        pool = [sid for sid in manifest.subject_ids if sid not in set(held_ids)]
        fm, _ = build_features(manifest, cfg, fit_ids=pool, seed=repeat_seed)
        return feature_filter(fm) if feature_filter else fm

    stub = cohort_feature_stub(manifest)
    return heldout_protocol(
        stub,
        heldout_size=cfg.heldout_size,
        repeats=cfg.heldout_repeats,
        inner_runs=cfg.eval_runs,
        val_frac=cfg.eval_val_frac,
        seed=cfg.seed,
        selection=cfg.selection_spec(),
        c_grid=cfg.svm_c_grid,
        gamma_grid=cfg.svm_gamma_grid,
        opts=TrainOptions(tol=cfg.svm_tol),
        refit=refit,
        n_jobs=cfg.n_jobs,
    )
