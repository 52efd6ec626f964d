import numpy as np
import pytest

from baf.errors import DataError, FormatError, InputError
from baf.volumes import (
    MetricId,
    MetricVolume,
    RegionId,
    RoiMask,
    SubjectRecord,
    CohortManifest,
    REGION_METRIC_PAIRS,
    load_mask,
    load_manifest,
    load_volume,
    pair_key,
    save_mask,
    save_manifest,
    save_volume,
)


def test_metric_enum_has_nine_described_members():
    assert len(MetricId) == 9
    assert [m.name for m in MetricId] == ["AWF", "DA", "DePar", "DePerp", "FA", "MD", "AK", "MK", "RK"]
    for m in MetricId:
        assert isinstance(m.description, str) and m.description


def test_region_metric_lists():
    assert len(RegionId.Thalamus.metrics) == 5
    assert len(RegionId.SCC.metrics) == 9
    assert set(RegionId.Thalamus.metrics) <= set(RegionId.SCC.metrics)
    assert len(REGION_METRIC_PAIRS) == 14


def test_zero_volume_roundtrip(tmp_path):
    vol = MetricVolume("s0", MetricId.FA, np.zeros((4, 4, 2)))
    path = tmp_path / "zero.vol"
    save_volume(path, vol)
    loaded = load_volume(path)
    assert loaded.dims == (4, 4, 2)
    assert loaded.values.size == 32
    assert np.all(loaded.values == 0.0)


def test_payload_length_mismatch(tmp_path):
    path = tmp_path / "bad.vol"
    header = b"BAFVOL1 3 3 3\n"
    payload = np.zeros(26, dtype="<f4").tobytes()  # one value short
    path.write_bytes(header + payload)
    with pytest.raises(FormatError, match="payload length mismatch"):
        load_volume(path)


def test_random_volume_roundtrip_bit_identical(tmp_path):
    rng = np.random.default_rng(7)
    # Stored precision is float32, so a float32-representable source must
    # survive write -> load without any change.
    values = rng.standard_normal((5, 6, 4)).astype(np.float32).astype(np.float64)
    vol = MetricVolume("s1", MetricId.MD, values)
    path = tmp_path / "rt.vol"
    save_volume(path, vol)
    loaded = load_volume(path)
    assert loaded.values.dtype == np.float64
    assert np.array_equal(loaded.values, values)


def test_volume_rejects_nonfinite(tmp_path):
    path = tmp_path / "nan.vol"
    header = b"BAFVOL1 2 2 1\n"
    payload = np.array([0.0, 1.0, np.nan, 2.0], dtype="<f4").tobytes()
    path.write_bytes(header + payload)
    with pytest.raises(DataError, match="non-finite"):
        load_volume(path)


def test_unknown_magic(tmp_path):
    path = tmp_path / "odd.vol"
    path.write_bytes(b"BAFXX9 2 2 1\n" + np.zeros(4, dtype="<f4").tobytes())
    with pytest.raises(FormatError, match="unknown artifact version"):
        load_volume(path)


def test_missing_file():
    with pytest.raises(InputError):
        load_volume("/nonexistent/path.vol")


def test_mask_roundtrip_and_byte_validation(tmp_path):
    rng = np.random.default_rng(3)
    voxels = rng.random((6, 5, 3)) > 0.5
    mask = RoiMask(RegionId.Thalamus, voxels)
    path = tmp_path / "m.mask"
    save_mask(path, mask)
    loaded = load_mask(path, RegionId.Thalamus)
    assert np.array_equal(loaded.voxels, voxels)

    bad = tmp_path / "bad.mask"
    bad.write_bytes(b"BAFMASK1 2 2 1\n" + bytes([0, 1, 2, 1]))
    with pytest.raises(FormatError, match="0 or 1"):
        load_mask(bad, RegionId.SCC)


def _demo_record(sid="s0", label="Control"):
    paths = {pair_key(r, m): f"{sid}_{r.name}_{m.name}.vol" for r, m in REGION_METRIC_PAIRS}
    return SubjectRecord(subject_id=sid, label=label, age=30.0, sex="M", volume_paths=paths)


def test_subject_record_requires_all_pairs():
    paths = {pair_key(r, m): "x.vol" for r, m in REGION_METRIC_PAIRS[:-1]}
    with pytest.raises(DataError, match="volume map mismatch"):
        SubjectRecord("s0", "MTBI", 25.0, "F", paths)


def test_subject_record_label01():
    assert _demo_record(label="MTBI").label01 == 1
    assert _demo_record(label="Control").label01 == 0


def test_manifest_roundtrip(tmp_path):
    subjects = [_demo_record("a", "MTBI"), _demo_record("b", "Control")]
    manifest = CohortManifest(
        root=tmp_path,
        subjects=subjects,
        mask_paths={RegionId.Thalamus: "thal.mask", RegionId.SCC: "scc.mask"},
    )
    path = tmp_path / "cohort.json"
    save_manifest(path, manifest)
    loaded = load_manifest(path)
    assert loaded.subject_ids == ["a", "b"]
    assert loaded.label_counts == {"Control": 1, "MTBI": 1}
    assert loaded.mask_path(RegionId.SCC) == tmp_path / "scc.mask"


def test_manifest_rejects_duplicate_ids(tmp_path):
    with pytest.raises(DataError, match="duplicate"):
        CohortManifest(
            root=tmp_path,
            subjects=[_demo_record("a"), _demo_record("a")],
            mask_paths={RegionId.Thalamus: "t.mask", RegionId.SCC: "s.mask"},
        )
