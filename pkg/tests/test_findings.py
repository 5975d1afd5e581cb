"""Findings parsing/validation and description composition, including the
committed golden strings derived by hand from the example record."""

import pytest

from voxalign import goldens
from voxalign.findings import (
    ABNORMAL,
    EMPTY_CHUNK_SENTENCE,
    NORMAL,
    NOT_EXAMINED,
    ORGAN_REGISTRY,
    FindingsParseError,
    FindingsValidationError,
    OrganFinding,
    OrganFindingsRecord,
    compose_description,
    parse_findings,
    partition_statuses,
)


@pytest.fixture(scope="module")
def example_record():
    return goldens.example_record()


def golden(name: str) -> str:
    return goldens.golden_text(name.removesuffix(".txt"))


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def test_registry_is_the_example_schema():
    assert len(ORGAN_REGISTRY) == 39
    assert ORGAN_REGISTRY == tuple(sorted(ORGAN_REGISTRY))
    assert "Liver" in ORGAN_REGISTRY and "general" not in ORGAN_REGISTRY


def test_parse_example_record(example_record):
    rec = example_record
    assert rec.organs["Liver"] == OrganFinding(
        ABNORMAL,
        "Liver size increased (hepatomegaly). Other upper abdominal sections within "
        "the examination area are normal.")
    assert rec.organs["Brain"] == OrganFinding(NOT_EXAMINED, "not_examined")
    assert rec.organs["Heart"].status == NORMAL
    assert rec.general.startswith("Mediastinal structures were evaluated as suboptimal")
    assert len(rec.organs) == 39


def test_parse_general_only():
    rec = parse_findings('{"general": "x"}')
    assert rec.organs == {}
    assert rec.general == "x"


def test_parse_rejects_not_examined_with_findings():
    with pytest.raises(FindingsValidationError, match="Liver"):
        parse_findings('{"Liver": {"status": "not_examined", "findings": "healthy"}}')


def test_parse_rejects_unknown_organ():
    with pytest.raises(FindingsValidationError, match="Wings"):
        parse_findings('{"Wings": {"status": "normal", "findings": "fine"}}')


def test_parse_rejects_bad_status():
    with pytest.raises(FindingsValidationError, match="Liver"):
        parse_findings('{"Liver": {"status": "odd", "findings": "x"}}')


def test_parse_malformed_json_reports_byte_offset():
    text = '{"Liver": {"status": "normal", "findings": }'
    with pytest.raises(FindingsParseError, match="byte offset") as exc:
        parse_findings(text)
    assert exc.value.offset == text.index("}", 10)


def test_parse_non_object_rejected():
    with pytest.raises(FindingsParseError):
        parse_findings("[1, 2]")


# ---------------------------------------------------------------------------
# partition
# ---------------------------------------------------------------------------

def test_partition_registry_order(example_record):
    x, n, a = partition_statuses(example_record,
                                 {"Lung", "Liver", "Kidney", "Colon", "Aorta", "Heart"})
    assert x == ["Colon", "Kidney"]
    assert n == ["Aorta", "Heart"]
    assert a == ["Liver", "Lung"]


def test_partition_drops_examined_empty_findings():
    rec = OrganFindingsRecord(organs={
        "Liver": OrganFinding(NORMAL, ""),
        "Lung": OrganFinding(ABNORMAL, "lesion."),
    })
    x, n, a = partition_statuses(rec, {"Liver", "Lung"})
    assert x == [] and n == [] and a == ["Lung"]


def test_partition_missing_record_entry_counts_not_examined():
    rec = OrganFindingsRecord(organs={})
    x, n, a = partition_statuses(rec, {"Liver"})
    assert x == ["Liver"] and n == [] and a == []


# ---------------------------------------------------------------------------
# composition
# ---------------------------------------------------------------------------

def test_compose_empty_set_is_sentinel(example_record):
    assert compose_description(example_record, set()) == EMPTY_CHUNK_SENTENCE


def test_compose_golden_brain_liver_lung(example_record):
    got = compose_description(example_record, {"Brain", "Liver", "Lung"})
    assert got == golden("golden_window_brain_liver_lung.txt")


def test_compose_golden_heart_window(example_record):
    got = compose_description(example_record, {"Heart"})
    assert got == golden("golden_window_heart.txt")


def test_compose_golden_mixed_statuses(example_record):
    organs = {"Aorta", "Colon", "Esophagus", "Kidney", "Liver", "Lymph nodes"}
    got = compose_description(example_record, organs)
    assert got == golden("golden_window_mixed_statuses.txt")


def test_compose_single_normal_organ_no_general():
    rec = OrganFindingsRecord(organs={
        "Heart": OrganFinding(NORMAL,
                              "Heart contour size is natural; pericardial "
                              "thickening-effusion was not detected."),
    })
    got = compose_description(rec, {"Heart"})
    assert got == ("Heart contour size is natural; pericardial thickening-effusion "
                   "was not detected.")
    assert not got.endswith(" ")
    assert ", " not in got[-2:]


def test_compose_general_not_examined_suppressed():
    rec = OrganFindingsRecord(
        organs={"Heart": OrganFinding(NORMAL, "fine.")}, general=NOT_EXAMINED)
    assert compose_description(rec, {"Heart"}) == "fine."
    rec2 = OrganFindingsRecord(
        organs={"Heart": OrganFinding(NORMAL, "fine.")}, general="")
    assert compose_description(rec2, {"Heart"}) == "fine."


def test_compose_pure_function(example_record):
    organs = {"Brain", "Liver"}
    a = compose_description(example_record, organs)
    b = compose_description(example_record, set(organs))
    assert a == b


def test_compose_findings_are_verbatim_substrings(example_record):
    # provenance: every findings string in the output comes verbatim from the record
    organs = {"Aorta", "Esophagus", "Liver", "Lung", "Lymph nodes", "Colon"}
    out = compose_description(example_record, organs)
    for organ in ("Aorta", "Esophagus", "Liver", "Lung", "Lymph nodes"):
        assert example_record.organs[organ].findings in out
    # and no findings text appears twice
    for organ in ("Aorta", "Liver"):
        text = example_record.organs[organ].findings
        assert out.count(text) == 1


def test_compose_sentinel_iff_empty(example_record):
    assert EMPTY_CHUNK_SENTENCE not in compose_description(example_record, {"Liver"})
    assert compose_description(example_record, set()) == EMPTY_CHUNK_SENTENCE


def test_compose_rejects_organs_outside_registry(example_record):
    with pytest.raises(FindingsValidationError):
        compose_description(example_record, {"Liver", "Nonsense"})
