"""Organ findings records and chunk-aligned description composition.

A findings record maps each organ to a (status, findings-text) pair plus an
optional general note. Descriptions for a chunk are composed from the organs
whose masks intersect it: the not-examined list first, then normal findings,
then abnormal findings, then the general note, comma-joining inside each
segment and single-space-joining across segments. A chunk that intersects no
organ gets a fixed sentinel sentence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional

NORMAL = "normal"
ABNORMAL = "abnormal"
NOT_EXAMINED = "not_examined"
STATUSES = (NORMAL, ABNORMAL, NOT_EXAMINED)

GENERAL_KEY = "general"

EMPTY_CHUNK_SENTENCE = "No target structures were detected in this CT block."

# the appendix schema's organ list, alphabetical; "general" is not an organ
ORGAN_REGISTRY: tuple[str, ...] = (
    "Adrenal gland",
    "Aorta",
    "Brain",
    "Breast",
    "Clavicle",
    "Colon",
    "Esophagus",
    "Femur",
    "Gallbladder",
    "Gluteus muscles",
    "Great vessels",
    "Heart",
    "Hip/Pelvis",
    "Humerus",
    "Iliopsoas",
    "Inferior vena cava",
    "Kidney",
    "Liver",
    "Lung",
    "Lymph nodes",
    "Pancreas",
    "Paraspinal muscles",
    "Pericardium",
    "Pleura",
    "Portal vein and splenic vein",
    "Prostate",
    "Pulmonary vessels",
    "Ribs",
    "Scapula",
    "Skull",
    "Small intestine",
    "Spinal cord",
    "Spine/Vertebrae",
    "Spleen",
    "Sternum",
    "Stomach",
    "Thyroid gland",
    "Trachea",
    "Urinary bladder",
)


class FindingsParseError(ValueError):
    """Malformed findings JSON; carries the byte offset when known."""

    def __init__(self, message: str, offset: Optional[int] = None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class FindingsValidationError(ValueError):
    """Well-formed JSON violating the record constraints; names the organ."""


class OrganFinding(NamedTuple):
    status: str
    findings: str


@dataclass
class OrganFindingsRecord:
    """Per-study organ -> (status, findings) map plus optional general note."""

    organs: dict[str, OrganFinding] = field(default_factory=dict)
    general: Optional[str] = None

    def status_of(self, organ: str) -> str:
        """Organs missing from the record are treated as not examined."""
        entry = self.organs.get(organ)
        return entry.status if entry is not None else NOT_EXAMINED

    def findings_of(self, organ: str) -> str:
        entry = self.organs.get(organ)
        return entry.findings if entry is not None else NOT_EXAMINED


def parse_findings(text: str, registry: Iterable[str] = ORGAN_REGISTRY) -> OrganFindingsRecord:
    """Parse and validate one findings JSON document."""
    registry = set(registry)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise FindingsParseError(f"malformed findings JSON: {e.msg}", offset=e.pos) from e
    if not isinstance(doc, dict):
        raise FindingsParseError("findings JSON must be an object")
    organs: dict[str, OrganFinding] = {}
    general: Optional[str] = None
    for key, value in doc.items():
        if key == GENERAL_KEY:
            if not isinstance(value, str):
                raise FindingsValidationError("'general' must map to a string")
            general = value
            continue
        if key not in registry:
            raise FindingsValidationError(f"unknown organ name '{key}'")
        if not isinstance(value, dict) or set(value) != {"status", "findings"}:
            raise FindingsValidationError(
                f"organ '{key}' must map to an object with exactly 'status' and 'findings'")
        status, found = value["status"], value["findings"]
        if status not in STATUSES:
            raise FindingsValidationError(f"organ '{key}' has invalid status '{status}'")
        if not isinstance(found, str):
            raise FindingsValidationError(f"organ '{key}' findings must be a string")
        if status == NOT_EXAMINED and found != NOT_EXAMINED:
            raise FindingsValidationError(
                f"organ '{key}': status not_examined requires findings 'not_examined'")
        organs[key] = OrganFinding(status, found)
    return OrganFindingsRecord(organs=organs, general=general)


def partition_statuses(record: OrganFindingsRecord, organs: Iterable[str],
                       registry: tuple[str, ...] = ORGAN_REGISTRY
                       ) -> tuple[list[str], list[str], list[str]]:
    """Split the chunk's organs into (not-examined, normal, abnormal) lists.

    Output follows fixed registry order; examined organs with empty findings
    are dropped entirely.
    """
    organs = set(organs)
    not_examined: list[str] = []
    normal: list[str] = []
    abnormal: list[str] = []
    for organ in registry:
        if organ not in organs:
            continue
        status = record.status_of(organ)
        if status == NOT_EXAMINED:
            not_examined.append(organ)
        elif record.findings_of(organ) == "":
            continue
        elif status == NORMAL:
            normal.append(organ)
        else:
            abnormal.append(organ)
    return not_examined, normal, abnormal


def compose_description(record: OrganFindingsRecord, organs: Iterable[str],
                        registry: tuple[str, ...] = ORGAN_REGISTRY) -> str:
    """Build the chunk-aligned supervision text for the given organ set."""
    organs = set(organs)
    unknown = organs - set(registry)
    if unknown:
        raise FindingsValidationError(f"organs outside the registry: {sorted(unknown)}")
    if not organs:
        return EMPTY_CHUNK_SENTENCE
    not_examined, normal, abnormal = partition_statuses(record, organs, registry)
    segments: list[str] = []
    if not_examined:
        segments.append(", ".join(not_examined) + " were not examined.")
    if normal:
        segments.append(", ".join(record.findings_of(o) for o in normal))
    if abnormal:
        segments.append(", ".join(record.findings_of(o) for o in abnormal))
    if record.general not in (None, "", NOT_EXAMINED):
        segments.append(record.general)
    return " ".join(segments)
