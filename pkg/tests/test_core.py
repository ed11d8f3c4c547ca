import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import cohort, make_manifest, make_recording
from inkdx.core import (
    TASKS,
    CanonicalImage,
    DatasetManifest,
    DiagnosticClass,
    DuplicateId,
    InkRecording,
    InvalidParams,
    ManifestEntry,
    MissingFile,
    Modality,
    ParseError,
    PenSample,
    Provenance,
    SchemaViolation,
    format_recording,
    load_manifest,
    manifest_from_json,
    param_digest,
    parse_classes,
    parse_recording,
    save_manifest,
    serialize_manifest,
    validate_recording,
)


def write_files(root, manifest):
    for e in manifest.entries:
        p = root / e.path
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text("# t x y pressure pen_down\n0 0 0 1 1\n")


def test_five_entry_round_trip(tmp_path):
    m = cohort(3, 2)
    write_files(tmp_path, m)
    save_manifest(m, tmp_path / "manifest.json")
    loaded = load_manifest(tmp_path / "manifest.json")
    assert len(loaded) == 5 and loaded == m
    assert loaded.resolve(loaded.entries[0]) == tmp_path / m.entries[0].path


def test_missing_file_names_path(tmp_path):
    m = cohort(1, 1)
    save_manifest(m, tmp_path / "manifest.json")
    with pytest.raises(MissingFile, match="PD000-0.txt"):
        load_manifest(tmp_path / "manifest.json")
    with pytest.raises(MissingFile):
        load_manifest(tmp_path / "nope.json")


def test_pahaw_shaped_counts():
    # 38 CTL + 37 PD subjects; 302 CTL and 295 PD samples
    subs = [(f"C{i}", "CTL", 8 if i < 36 else 7) for i in range(38)]
    subs += [(f"P{i}", "PD", 8 if i < 36 else 7) for i in range(37)]
    m = make_manifest(subs, name="PaHaW")
    assert len(m) == 597 and len(m.subjects()) == 75
    counts = m.class_counts()
    assert (counts["CTL"], counts["PD"]) == (302, 295)
    assert sum(counts.values()) == len(m)


def test_duplicate_ids():
    e = ManifestEntry("a", "s", DiagnosticClass.PD, "Spiral", Modality.IMAGE, "a.png")
    with pytest.raises(DuplicateId):
        DatasetManifest("x", False, (e, e))


def test_subject_with_two_classes_rejected():
    a = ManifestEntry("a", "s", DiagnosticClass.PD, "Spiral", Modality.IMAGE, "a.png")
    b = ManifestEntry("b", "s", DiagnosticClass.CTL, "Spiral", Modality.IMAGE, "b.png")
    with pytest.raises(SchemaViolation):
        DatasetManifest("x", False, (a, b)).subjects()


@pytest.mark.parametrize("patch", [
    {"label": "XX"}, {"task_id": "Juggling"}, {"modality": "audio"}, {"sample_id": ""},
])
def test_schema_violations(patch):
    d = {"sample_id": "a", "subject_id": "s", "label": "PD", "task_id": "Spiral",
         "modality": "image", "path": "a.png"} | patch
    with pytest.raises((SchemaViolation, InvalidParams)):
        manifest_from_json({"dataset_name": "x", "has_template": False, "entries": [d]})


def test_not_a_manifest(tmp_path):
    (tmp_path / "m.json").write_text("{broken")
    with pytest.raises(SchemaViolation):
        load_manifest(tmp_path / "m.json")
    with pytest.raises(SchemaViolation):
        manifest_from_json({"dataset_name": "x", "entries": []})


entry_st = st.builds(
    lambda i, subj, label, task, mod, ar: ManifestEntry(
        f"s{i}", f"subj{subj}", label, task, mod, f"files/s{i}.dat", ar),
    st.integers(0, 10**6), st.integers(0, 50), st.sampled_from(list(DiagnosticClass)),
    st.sampled_from(TASKS), st.sampled_from(list(Modality)),
    st.one_of(st.none(), st.floats(0.1, 10, allow_nan=False)),
)


@settings(max_examples=60, deadline=None)
@given(st.lists(entry_st, max_size=30, unique_by=lambda e: e.sample_id),
       st.text(min_size=1, max_size=12), st.booleans())
def test_serialization_round_trip(entries, name, template):
    m = DatasetManifest(name, template, tuple(entries))
    assert manifest_from_json(json.loads(serialize_manifest(m))) == m


def test_validate_recording_examples():
    ok = make_recording([(0, 0), (1, 1), (2, 2)], pressure=[1, 2, 3])
    assert validate_recording(ok) == []
    bad = InkRecording(tuple(PenSample(t, 0, 0, 1) for t in (0, 10, 5)))
    v = validate_recording(bad)
    assert [(x.kind, x.index) for x in v] == [("non_monotone_time", 2)]
    assert [x.kind for x in validate_recording(InkRecording(()))] == ["empty_recording"]
    weird = InkRecording((PenSample(-1, 0, 0, -2), PenSample(0, float("nan"), 0, 1)))
    assert {x.kind for x in validate_recording(weird)} == {
        "negative_time", "negative_pressure", "non_finite"}


def test_recording_text_round_trip():
    rec = InkRecording((PenSample(0, 1.5, -2.25, 0.1, True),
                        PenSample(10, 1e-7, 3, 0, False, 45.0, None)))
    back = parse_recording(format_recording(rec))
    assert back.samples == rec.samples
    assert format_recording(rec).splitlines()[0] == "# t x y pressure pen_down azimuth altitude"
    plain = make_recording([(0, 0)])
    assert format_recording(plain).splitlines()[0] == "# t x y pressure pen_down"


def test_parse_error_line():
    with pytest.raises(ParseError) as err:
        parse_recording("# h\n0 0 0 1 1\n5 0 0 x 1\n")
    assert err.value.line == 3


def test_parse_classes():
    assert parse_classes("PD,CTL") == (DiagnosticClass.PD, DiagnosticClass.CTL)
    assert parse_classes(["ctl", "ad"]) == (DiagnosticClass.CTL, DiagnosticClass.AD)
    for bad in ("PD,AD", "PD", "PD,CTL,AD"):
        with pytest.raises(InvalidParams):
            parse_classes(bad)


def test_canonical_image_checks():
    img = CanonicalImage(np.zeros((224, 224), np.uint8), Provenance("a", "1", "d"))
    assert img.as_rgb().shape == (224, 224, 3)
    with pytest.raises(SchemaViolation):
        CanonicalImage(np.zeros((10, 10), np.uint8), Provenance("a", "1", "d"))


def test_param_digest_stable_and_sensitive():
    assert param_digest("a", {"x": 1, "y": 2}) == param_digest("a", {"y": 2, "x": 1})
    assert param_digest("a", {"x": 1}) != param_digest("a", {"x": 2})
