import pytest

from mmfal import FibrosisStage, ModalityKind, load_manifest, write_manifest
from mmfal.errors import ManifestError

from conftest import make_manifest


def _record(sid, pid="p1", modality="LSTE", stage="F0", path="img.png", roi=None):
    return {
        "sample_id": sid,
        "patient_id": pid,
        "modality": modality,
        "stage": stage,
        "path": path,
        "roi": roi,
    }


def test_empty_manifest(tmp_path):
    index = load_manifest(make_manifest(tmp_path, []))
    assert len(index) == 0
    assert index.modality_counts == {}


def test_single_patient_two_lste(tmp_path):
    index = load_manifest(make_manifest(tmp_path, [_record("a"), _record("b")]))
    assert index.modality_counts == {ModalityKind.LSTE: 2}
    assert index.patient("p1").stage == FibrosisStage.F0


def test_full_cohort_patient_counts(tmp_path):
    records = []
    counts = {"F0": 41, "F1": 51, "F2": 31, "F3": 27, "F4": 18}
    for stage, n in counts.items():
        for i in range(n):
            pid = f"{stage}-{i}"
            records.append(_record(f"{pid}-img", pid=pid, stage=stage))
    index = load_manifest(make_manifest(tmp_path, records))
    assert len(index) == 168
    assert {s.name: c for s, c in index.stage_counts.items()} == counts


def test_duplicate_sample_id_names_line(tmp_path):
    path = make_manifest(tmp_path, [_record("a"), _record("a")])
    with pytest.raises(ManifestError, match="line 2.*duplicate"):
        load_manifest(path)


def test_unknown_modality_token(tmp_path):
    path = make_manifest(tmp_path, [_record("a", modality="XRAY")])
    with pytest.raises(ManifestError, match="line 1.*modality"):
        load_manifest(path)


def test_missing_field_names_line(tmp_path):
    record = _record("a")
    del record["stage"]
    path = make_manifest(tmp_path, [_record("b"), record])
    with pytest.raises(ManifestError, match="line 2.*stage"):
        load_manifest(path)


def test_invalid_json_line(tmp_path):
    path = tmp_path / "broken.jsonl"
    path.write_text('{"sample_id": "a"}\nnot json\n')
    with pytest.raises(ManifestError, match="line 1|line 2"):
        load_manifest(path)


def test_conflicting_patient_stage(tmp_path):
    path = make_manifest(tmp_path, [_record("a", stage="F0"), _record("b", stage="F1")])
    with pytest.raises(ManifestError, match="conflicting stages"):
        load_manifest(path)


def test_roi_must_be_quadruple(tmp_path):
    path = make_manifest(tmp_path, [_record("a", roi=[1, 2, 3])])
    with pytest.raises(ManifestError, match="roi"):
        load_manifest(path)


def test_relative_paths_resolve_against_manifest_dir(tmp_path):
    index = load_manifest(make_manifest(tmp_path, [_record("a", path="sub/img.png")]))
    sample = index.sample("a")
    assert sample.source_path == tmp_path / "sub" / "img.png"


def test_write_then_load_roundtrip(tmp_path):
    records = [
        _record("a", pid="p1", modality="LSTE", stage="F2", roi=[1, 2, 10, 12]),
        _record("b", pid="p1", modality="LUS", stage="F2"),
        _record("c", pid="p2", modality="LSTQ", stage="F4"),
    ]
    index = load_manifest(make_manifest(tmp_path, records))
    out = tmp_path / "copy.jsonl"
    write_manifest(index, out)
    reloaded = load_manifest(out)
    assert reloaded.modality_counts == index.modality_counts
    assert reloaded.sample("a").roi.as_list() == [1, 2, 10, 12]
    assert reloaded.patient("p2").stage == FibrosisStage.F4
