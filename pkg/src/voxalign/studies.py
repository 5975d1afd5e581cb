"""Chunk sampling, organ masks, chunk/text pairing, and the synthetic
study generator.

A study is (volume, mask, findings record). Chunks are contiguous z-windows
with lengths drawn uniformly from {32, 64, 128} (restricted to the volume
depth); the organs whose masks intersect a chunk drive its composed text.
Synthetic studies place ellipsoid "organs" with class-coded intensities at
near-canonical in-plane positions so that appearance and findings text are
genuinely correlated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .container import read_container, write_container
from .findings import (
    ABNORMAL,
    NORMAL,
    NOT_EXAMINED,
    ORGAN_REGISTRY,
    OrganFinding,
    OrganFindingsRecord,
    compose_description,
)

CHUNK_LENGTHS = (32, 64, 128)


class BoundsError(ValueError):
    """A chunk window leaves the volume."""


@dataclass(frozen=True)
class ChunkSpec:
    """z-window [start, start + length) plus the seed that produced it, for audit."""

    start: int
    length: int
    seed: Optional[int] = None

    def check_within(self, depth: int) -> None:
        if self.start < 0 or self.length < 1 or self.start + self.length > depth:
            raise BoundsError(
                f"chunk [{self.start}, {self.start + self.length}) exceeds depth {depth}")


def sample_chunk(depth: int, rng: np.random.Generator,
                 seed: Optional[int] = None) -> ChunkSpec:
    """Uniform length from {32, 64, 128} capped at depth, uniform start.

    Volumes shallower than the smallest length yield one full-volume chunk
    (repeat padding downstream handles the short depth).
    """
    if depth < 1:
        raise BoundsError(f"volume depth must be >= 1, got {depth}")
    if depth < CHUNK_LENGTHS[0]:
        return ChunkSpec(0, depth, seed)
    admissible = [l for l in CHUNK_LENGTHS if l <= depth]
    length = admissible[int(rng.integers(len(admissible)))]
    start = int(rng.integers(0, depth - length + 1))
    return ChunkSpec(start, length, seed)


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------

@dataclass
class MaskVolume:
    """Binary organ occupancy: a per-slice presence summary plus optional dense voxels."""

    organs: tuple[str, ...]
    presence: np.ndarray  # bool [depth, n_organs]
    dense: Optional[np.ndarray] = None  # uint8 [depth, H, W, n_organs]

    def __post_init__(self):
        self.presence = np.asarray(self.presence, dtype=bool)
        if self.presence.ndim != 2 or self.presence.shape[1] != len(self.organs):
            raise ValueError(f"presence summary shape {self.presence.shape} does not "
                             f"match {len(self.organs)} organs")
        if self.dense is not None and not self.consistent():
            raise ValueError("presence summary disagrees with dense mask payload")

    @property
    def depth(self) -> int:
        return self.presence.shape[0]

    @classmethod
    def from_dense(cls, dense: np.ndarray, organs: tuple[str, ...]) -> "MaskVolume":
        dense = np.asarray(dense, dtype=np.uint8)
        if dense.ndim != 4 or dense.shape[3] != len(organs):
            raise ValueError(f"dense mask shape {dense.shape} does not match organs")
        presence = dense.any(axis=(1, 2))
        return cls(organs=organs, presence=presence, dense=dense)

    def consistent(self) -> bool:
        if self.dense is None:
            return True
        return bool(np.array_equal(self.presence, self.dense.any(axis=(1, 2))))


def organs_in_chunk(mask: MaskVolume, chunk: ChunkSpec) -> set[str]:
    """Organs whose mask occupies any slice of [start, start + length)."""
    chunk.check_within(mask.depth)
    hit = mask.presence[chunk.start: chunk.start + chunk.length].any(axis=0)
    return {organ for organ, present in zip(mask.organs, hit) if present}


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

def write_volume(path, volume: np.ndarray) -> None:
    volume = np.asarray(volume)
    t, hy, wx = volume.shape
    header = {"T": int(t), "Hy": int(hy), "Wx": int(wx), "dtype": "<f4"}
    write_container(path, header, np.ascontiguousarray(volume, dtype="<f4").tobytes())


def read_volume(path) -> np.ndarray:
    header, payload = read_container(path)
    shape = (header["T"], header["Hy"], header["Wx"])
    data = np.frombuffer(payload, dtype=header["dtype"])
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{path}: payload size {data.size} != header shape {shape}")
    return data.reshape(shape).astype(np.float64)


def write_mask(path, mask: MaskVolume) -> None:
    if mask.dense is not None:
        dims = list(mask.dense.shape)
        encoding = "dense_u8"
        payload = np.ascontiguousarray(mask.dense, dtype=np.uint8).tobytes()
    else:
        dims = [mask.depth, 0, 0, len(mask.organs)]
        encoding = "presence_only"
        payload = b""
    header = {
        "dims": dims,
        "organs": list(mask.organs),
        "encoding": encoding,
        "presence": mask.presence.astype(int).tolist(),
    }
    write_container(path, header, payload)


def read_mask(path) -> MaskVolume:
    header, payload = read_container(path)
    organs = tuple(header["organs"])
    presence = np.asarray(header["presence"], dtype=bool)
    dense = None
    if header["encoding"] == "dense_u8":
        dims = tuple(header["dims"])
        dense = np.frombuffer(payload, dtype=np.uint8).reshape(dims)
    return MaskVolume(organs=organs, presence=presence, dense=dense)


# ---------------------------------------------------------------------------
# training pairs
# ---------------------------------------------------------------------------

def build_training_pair(volume: np.ndarray, mask: MaskVolume,
                        record: OrganFindingsRecord, rng: np.random.Generator,
                        patch_z: int, pad_mode: str = "repeat",
                        registry: tuple[str, ...] = ORGAN_REGISTRY,
                        seed: Optional[int] = None):
    """Sample a chunk, slice + pad the voxels, and compose its aligned text."""
    from .encoder import pad_slices

    depth = volume.shape[0]
    if mask.depth != depth:
        raise BoundsError(f"mask depth {mask.depth} != volume depth {depth}")
    chunk = sample_chunk(depth, rng, seed)
    voxels = pad_slices(volume[chunk.start: chunk.start + chunk.length], patch_z, pad_mode)
    text = compose_description(record, organs_in_chunk(mask, chunk), registry)
    return voxels, text, chunk


# ---------------------------------------------------------------------------
# synthetic studies
# ---------------------------------------------------------------------------

DEFAULT_ORGAN_POOL: tuple[str, ...] = (
    "Aorta", "Colon", "Esophagus", "Gallbladder", "Heart", "Kidney",
    "Liver", "Lung", "Pancreas", "Spleen", "Stomach", "Trachea",
)

# intensity classes: low half reads normal, high half abnormal; spaced well
# clear of the background noise band so class identity is visually decidable
CLASS_INTENSITY = (-0.9, -0.45, 0.4, 0.85)
NORMAL_SENTENCES = (
    "{organ} appears faint but homogeneous with smooth contours.",
    "{organ} shows moderate uniform attenuation and preserved margins.",
)
ABNORMAL_SENTENCES = (
    "{organ} demonstrates a marked expansile lesion distorting its contour.",
    "{organ} contains an intense focal mass with irregular borders.",
)
GENERAL_NOTES = (
    "Overall scan quality is adequate.",
    "Overall scan quality is limited by motion.",
    "Overall scan quality is excellent.",
)


def finding_for(organ: str, intensity_class: int) -> OrganFinding:
    """Deterministic template sentence keyed by (organ, intensity class)."""
    half = len(CLASS_INTENSITY) // 2
    if intensity_class < half:
        return OrganFinding(NORMAL, NORMAL_SENTENCES[intensity_class].format(organ=organ))
    return OrganFinding(ABNORMAL,
                        ABNORMAL_SENTENCES[intensity_class - half].format(organ=organ))


@dataclass(frozen=True)
class SynthConfig:
    depth_range: tuple[int, int] = (32, 48)
    in_plane_size: int = 64
    organ_pool: tuple[str, ...] = DEFAULT_ORGAN_POOL
    organs_range: tuple[int, int] = (2, 4)
    noise: float = 0.05
    general_note_prob: float = 0.5
    dense_masks: bool = True

    def __post_init__(self):
        unknown = set(self.organ_pool) - set(ORGAN_REGISTRY)
        if unknown:
            raise ValueError(f"synthetic organ pool outside the registry: {sorted(unknown)}")


def _canonical_center(index: int, pool_size: int, size: int) -> tuple[float, float]:
    cols = int(np.ceil(np.sqrt(pool_size)))
    row, col = divmod(index, cols)
    rows = int(np.ceil(pool_size / cols))
    return ((row + 0.5) / rows * size, (col + 0.5) / cols * size)


def synth_study(rng: np.random.Generator, cfg: SynthConfig = SynthConfig()):
    """Generate one (volume, mask, record) triple.

    Each placed organ is an axis-aligned ellipsoid at a near-canonical in-plane
    position with a class-coded intensity; its findings sentence comes from the
    template bank keyed by (organ, class), so text and appearance correlate.
    """
    depth = int(rng.integers(cfg.depth_range[0], cfg.depth_range[1] + 1))
    size = cfg.in_plane_size
    volume = rng.uniform(-cfg.noise, cfg.noise, size=(depth, size, size))
    pool = cfg.organ_pool
    k_lo, k_hi = cfg.organs_range
    k = int(rng.integers(k_lo, min(k_hi, len(pool)) + 1))
    chosen_idx = sorted(rng.permutation(len(pool))[:k].tolist())

    dense = np.zeros((depth, size, size, len(pool)), dtype=np.uint8)
    organs: dict[str, OrganFinding] = {}
    zz, yy, xx = np.ogrid[0:depth, 0:size, 0:size]
    for idx in chosen_idx:
        organ = pool[idx]
        intensity_class = int(rng.integers(len(CLASS_INTENSITY)))
        cy, cx = _canonical_center(idx, len(pool), size)
        cy += rng.uniform(-size / 16, size / 16)
        cx += rng.uniform(-size / 16, size / 16)
        cz = rng.uniform(0, depth)
        rz = rng.uniform(max(2.0, depth * 0.10), max(3.0, depth * 0.35))
        ry = rng.uniform(size * 0.08, size * 0.16)
        rx = rng.uniform(size * 0.08, size * 0.16)
        inside = (((zz - cz) / rz) ** 2 + ((yy - cy) / ry) ** 2
                  + ((xx - cx) / rx) ** 2) <= 1.0
        if not inside.any():
            # degenerate draw; pin a single voxel so the organ exists
            inside[min(int(cz), depth - 1), int(cy) % size, int(cx) % size] = True
        volume[inside] = CLASS_INTENSITY[intensity_class]
        dense[..., idx][inside] = 1
        organs[organ] = finding_for(organ, intensity_class)

    volume = np.clip(volume, -1.0, 1.0)
    for organ in ORGAN_REGISTRY:
        if organ not in organs:
            organs[organ] = OrganFinding(NOT_EXAMINED, NOT_EXAMINED)
    general = None
    if rng.uniform() < cfg.general_note_prob:
        general = GENERAL_NOTES[int(rng.integers(len(GENERAL_NOTES)))]
    record = OrganFindingsRecord(organs=organs, general=general)
    mask = MaskVolume.from_dense(dense, pool)
    if not cfg.dense_masks:
        mask = MaskVolume(organs=pool, presence=mask.presence, dense=None)
    return volume.astype(np.float32), mask, record
