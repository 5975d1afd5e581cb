"""Access to the committed example findings record and its hand-derived
composition goldens (used by the verification suites and the test suite)."""

from __future__ import annotations

from pathlib import Path

from .findings import OrganFindingsRecord, parse_findings

_DIR = Path(__file__).parent / "goldens"

# windows are organ sets realized by slicing the synthetic verification mask
GOLDEN_WINDOWS: dict[str, frozenset[str]] = {
    "golden_window_brain_liver_lung": frozenset({"Brain", "Liver", "Lung"}),
    "golden_window_heart": frozenset({"Heart"}),
    "golden_window_mixed_statuses": frozenset(
        {"Aorta", "Colon", "Esophagus", "Kidney", "Liver", "Lymph nodes"}),
}

FULL_VOLUME_GOLDEN = "golden_full_volume"
FULL_VOLUME_ORGANS = frozenset({"Brain", "Heart", "Liver", "Lung"})


def example_findings_text() -> str:
    return (_DIR / "findings_example.json").read_text(encoding="utf-8")


def example_record() -> OrganFindingsRecord:
    return parse_findings(example_findings_text())


def golden_text(name: str) -> str:
    return (_DIR / f"{name}.txt").read_text(encoding="utf-8")
