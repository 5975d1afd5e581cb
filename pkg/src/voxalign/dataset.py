"""On-disk synthetic dataset: per-study volume/mask/findings files plus a
JSON manifest. Every byte is deterministic given (seed, config)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .container import atomic_write_text
from .findings import GENERAL_KEY, ORGAN_REGISTRY, OrganFindingsRecord, parse_findings
from .studies import (
    MaskVolume,
    SynthConfig,
    read_mask,
    read_volume,
    synth_study,
    write_mask,
    write_volume,
)

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


def record_to_json(record: OrganFindingsRecord,
                   registry: tuple[str, ...] = ORGAN_REGISTRY) -> str:
    """Serialize a record in the appendix schema (registry order, general last)."""
    doc: dict = {}
    for organ in registry:
        entry = record.organs.get(organ)
        if entry is not None:
            doc[organ] = {"status": entry.status, "findings": entry.findings}
    if record.general is not None:
        doc[GENERAL_KEY] = record.general
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


@dataclass
class Study:
    study_id: str
    volume: np.ndarray
    mask: MaskVolume
    record: OrganFindingsRecord

    @property
    def depth(self) -> int:
        return int(self.volume.shape[0])


def synth_dataset(out_dir, count: int, seed: int,
                  cfg: SynthConfig = SynthConfig()) -> dict:
    """Write `count` studies and the manifest; returns the manifest dict."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(count):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        volume, mask, record = synth_study(rng, cfg)
        study_id = f"study_{i:04d}"
        write_volume(out_dir / f"{study_id}.vol", volume)
        write_mask(out_dir / f"{study_id}.mask", mask)
        atomic_write_text(out_dir / f"{study_id}.json", record_to_json(record))
        entries.append({
            "id": study_id,
            "volume": f"{study_id}.vol",
            "mask": f"{study_id}.mask",
            "findings": f"{study_id}.json",
            "depth": int(volume.shape[0]),
        })
    manifest = {
        "version": MANIFEST_VERSION,
        "seed": seed,
        "count": count,
        "synth_config": asdict(cfg),
        "studies": entries,
    }
    atomic_write_text(out_dir / MANIFEST_NAME,
                      json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_manifest(dataset_dir) -> dict:
    path = Path(dataset_dir) / MANIFEST_NAME
    with open(path, encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("version") != MANIFEST_VERSION:
        raise ValueError(f"{path}: unsupported manifest version {manifest.get('version')}")
    return manifest


def load_study(dataset_dir, entry: dict) -> Study:
    dataset_dir = Path(dataset_dir)
    volume = read_volume(dataset_dir / entry["volume"])
    mask = read_mask(dataset_dir / entry["mask"])
    with open(dataset_dir / entry["findings"], encoding="utf-8") as f:
        record = parse_findings(f.read())
    return Study(entry["id"], volume, mask, record)


def load_dataset(dataset_dir) -> list[Study]:
    manifest = load_manifest(dataset_dir)
    return [load_study(dataset_dir, entry) for entry in manifest["studies"]]
