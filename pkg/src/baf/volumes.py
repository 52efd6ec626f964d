"""Metric volumes, ROI masks, subjects, and on-disk cohort ingestion.

File formats
------------
Volume (``.vol``): ASCII header line ``BAFVOL1 nx ny nz`` followed by
``nx*ny*nz`` little-endian float32 values in x-fastest order.

Mask (``.mask``): same layout with magic ``BAFMASK1`` and a payload of
single bytes restricted to {0, 1}.

Cohort manifest (``cohort.json``): JSON object with keys ``format``
(``"BAFCOHORT1"``), ``masks`` (region name -> mask path) and ``subjects``
(list of records with ``subject_id``, ``label``, ``age``, ``sex`` and
``volumes``, a mapping ``"<REGION>/<METRIC>" -> path``). Paths are
relative to the manifest's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, InputError

VOLUME_MAGIC = "BAFVOL1"
MASK_MAGIC = "BAFMASK1"
MANIFEST_FORMAT = "BAFCOHORT1"

LABELS = ("Control", "MTBI")
POSITIVE_LABEL = "MTBI"
SEXES = ("M", "F")


class MetricId(Enum):
    """The nine scalar diffusion metrics handled by the pipeline."""

    AWF = "axonal water fraction"
    DA = "diffusivity within axons"
    DePar = "extra-axonal diffusion parallel to axonal tracts"
    DePerp = "extra-axonal diffusion perpendicular to axonal tracts"
    FA = "fractional anisotropy"
    MD = "mean diffusion"
    AK = "axial kurtosis"
    MK = "mean kurtosis"
    RK = "radial kurtosis"

    @property
    def description(self) -> str:
        return self.value


class RegionId(Enum):
    Thalamus = "Thalamus"
    SCC = "SCC"

    @property
    def metrics(self) -> tuple[MetricId, ...]:
        """Metrics carried by this region, in MetricId declaration order."""
        return REGION_METRICS[self]


REGION_METRICS = {
    RegionId.Thalamus: (MetricId.FA, MetricId.MD, MetricId.AK, MetricId.MK, MetricId.RK),
    RegionId.SCC: tuple(MetricId),
}

# (region, metric) pairs in the canonical feature-block order: all SCC
# metrics first, then thalamus metrics, each in MetricId order.
REGION_METRIC_PAIRS = tuple(
    (region, metric)
    for region in (RegionId.SCC, RegionId.Thalamus)
    for metric in REGION_METRICS[region]
)


def pair_key(region: RegionId, metric: MetricId) -> str:
    return f"{region.name}/{metric.name}"


@dataclass
class MetricVolume:
    """One 3D scalar map for one subject."""

    subject_id: str
    metric: MetricId
    values: np.ndarray  # (nx, ny, nz) float64

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or min(self.values.shape) < 1:
            raise DataError(f"volume needs 3 positive dims, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DataError(f"volume {self.subject_id}/{self.metric.name} has non-finite values")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass
class RoiMask:
    region: RegionId
    voxels: np.ndarray  # (nx, ny, nz) bool

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=bool)
        if self.voxels.ndim != 3 or min(self.voxels.shape) < 1:
            raise DataError(f"mask needs 3 positive dims, got shape {self.voxels.shape}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.voxels.shape


@dataclass
class SubjectRecord:
    subject_id: str
    label: str
    age: float
    sex: str
    volume_paths: dict[str, str]  # pair_key -> path relative to manifest dir

    def __post_init__(self):
        if self.label not in LABELS:
            raise DataError(f"unknown label {self.label!r} for subject {self.subject_id}")
        if self.sex not in SEXES:
            raise DataError(f"unknown sex {self.sex!r} for subject {self.subject_id}")
        if not self.age > 0:
            raise DataError(f"age must be positive, got {self.age} for {self.subject_id}")
        expected = {pair_key(r, m) for r, m in REGION_METRIC_PAIRS}
        if set(self.volume_paths) != expected:
            missing = sorted(expected - set(self.volume_paths))
            extra = sorted(set(self.volume_paths) - expected)
            raise DataError(
                f"subject {self.subject_id}: volume map mismatch "
                f"(missing {missing}, unexpected {extra})"
            )

    @property
    def label01(self) -> int:
        return int(self.label == POSITIVE_LABEL)


@dataclass
class CohortManifest:
    root: Path
    subjects: list[SubjectRecord]
    mask_paths: dict[RegionId, str]

    def __post_init__(self):
        ids = [s.subject_id for s in self.subjects]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate subject_ids in cohort manifest")
        if set(self.mask_paths) != set(RegionId):
            raise DataError("manifest must name one mask per region")

    @property
    def subject_ids(self) -> list[str]:
        return [s.subject_id for s in self.subjects]

    @property
    def label_counts(self) -> dict[str, int]:
        counts = {label: 0 for label in LABELS}
        for s in self.subjects:
            counts[s.label] += 1
        return counts

    def subject(self, subject_id: str) -> SubjectRecord:
        for s in self.subjects:
            if s.subject_id == subject_id:
                return s
        raise InputError(f"unknown subject_id {subject_id!r}")

    def volume_path(self, subject_id: str, region: RegionId, metric: MetricId) -> Path:
        return self.root / self.subject(subject_id).volume_paths[pair_key(region, metric)]

    def mask_path(self, region: RegionId) -> Path:
        return self.root / self.mask_paths[region]

    def load_mask(self, region: RegionId) -> RoiMask:
        return load_mask(self.mask_path(region), region)

    def load_volume(self, subject_id: str, region: RegionId, metric: MetricId) -> MetricVolume:
        vol = load_volume(self.volume_path(subject_id, region, metric))
        vol.subject_id = subject_id
        vol.metric = metric
        return vol


def _read_header(path: Path, magic: str) -> tuple[tuple[int, int, int], bytes]:
    if not Path(path).is_file():
        raise InputError(f"no such file: {path}")
    raw = Path(path).read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise FormatError(f"{path}: missing header line")
    fields = raw[:newline].decode("ascii", errors="replace").split()
    if not fields or fields[0] != magic:
        raise FormatError(f"{path}: unknown artifact version (expected {magic})")
    if len(fields) != 4:
        raise FormatError(f"{path}: header must be '{magic} nx ny nz'")
    try:
        nx, ny, nz = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: non-integer dims in header") from exc
    if min(nx, ny, nz) < 1:
        raise FormatError(f"{path}: dims must be >= 1, got {(nx, ny, nz)}")
    return (nx, ny, nz), raw[newline + 1:]


def load_volume(path, subject_id: str = "", metric: MetricId = MetricId.FA) -> MetricVolume:
    """Read a BAFVOL1 file. Values come back as float64 copies of the stored float32."""
    (nx, ny, nz), payload = _read_header(Path(path), VOLUME_MAGIC)
    n = nx * ny * nz
    values = np.frombuffer(payload, dtype="<f4")
    if values.size != n:
        raise FormatError(f"{path}: payload length mismatch (header {n}, payload {values.size})")
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path}: non-finite values in volume payload")
    grid = values.astype(np.float64).reshape((nx, ny, nz), order="F")
    return MetricVolume(subject_id=subject_id, metric=metric, values=grid)


def save_volume(path, volume: MetricVolume) -> None:
    nx, ny, nz = volume.dims
    header = f"{VOLUME_MAGIC} {nx} {ny} {nz}\n".encode("ascii")
    payload = volume.values.astype("<f4").ravel(order="F").tobytes()
    Path(path).write_bytes(header + payload)


def load_mask(path, region: RegionId) -> RoiMask:
    (nx, ny, nz), payload = _read_header(Path(path), MASK_MAGIC)
    n = nx * ny * nz
    values = np.frombuffer(payload, dtype=np.uint8)
    if values.size != n:
        raise FormatError(f"{path}: payload length mismatch (header {n}, payload {values.size})")
    if not np.all((values == 0) | (values == 1)):
        raise FormatError(f"{path}: mask bytes must be 0 or 1")
    voxels = values.astype(bool).reshape((nx, ny, nz), order="F")
    return RoiMask(region=region, voxels=voxels)


def save_mask(path, mask: RoiMask) -> None:
    nx, ny, nz = mask.dims
    header = f"{MASK_MAGIC} {nx} {ny} {nz}\n".encode("ascii")
    payload = mask.voxels.astype(np.uint8).ravel(order="F").tobytes()
    Path(path).write_bytes(header + payload)


def load_manifest(path) -> CohortManifest:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"no such cohort manifest: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON manifest: {exc}") from exc
    if doc.get("format") != MANIFEST_FORMAT:
        raise FormatError(f"{path}: unknown artifact version (expected {MANIFEST_FORMAT})")
    try:
        masks = {RegionId[name]: p for name, p in doc["masks"].items()}
        subjects = [
            SubjectRecord(
                subject_id=rec["subject_id"],
                label=rec["label"],
                age=float(rec["age"]),
                sex=rec["sex"],
                volume_paths=dict(rec["volumes"]),
            )
            for rec in doc["subjects"]
        ]
    except KeyError as exc:
        raise FormatError(f"{path}: manifest missing field {exc}") from exc
    manifest = CohortManifest(root=path.parent, subjects=subjects, mask_paths=masks)
    manifest.source_path = path
    return manifest


def save_manifest(path, manifest: CohortManifest) -> None:
    doc = {
        "format": MANIFEST_FORMAT,
        "masks": {region.name: p for region, p in sorted(manifest.mask_paths.items(), key=lambda kv: kv[0].name)},
        "subjects": [
            {
                "subject_id": s.subject_id,
                "label": s.label,
                "age": s.age,
                "sex": s.sex,
                "volumes": dict(sorted(s.volume_paths.items())),
            }
            for s in manifest.subjects
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
