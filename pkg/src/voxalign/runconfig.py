"""One-document run configuration: encoder, optimizer, synthesis, training
and evaluation knobs plus seeds and output directory.

Accepts TOML or JSON with identical structure; unknown keys are rejected at
every level (silent typo-tolerance destroys reproducibility). Every
artifact-producing command persists the resolved configuration next to its
outputs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .container import atomic_write_text
from .encoder import ConfigError, EncoderConfig
from .objective import HybridConfig, MUON_HYBRID, ADAMW_ONLY
from .studies import SynthConfig


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 200
    batch_size: int = 8
    checkpoint_every: int = 500
    pad_mode: str = "repeat"
    dtype: str = "float32"

    def __post_init__(self):
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"train dtype must be float32 or float64, got {self.dtype}")
        if self.pad_mode not in ("repeat", "zero"):
            raise ConfigError(f"pad_mode must be repeat or zero, got {self.pad_mode}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass(frozen=True)
class EvalConfig:
    slice_counts: tuple[int, ...] = (32, 64, 128)
    b_multipliers: tuple[float, ...] = (0.5, 1.0, 2.0)
    pairs: int = 16
    bootstrap_subset: int = 8
    bootstrap_iters: int = 100
    probe_l2: float = 0.0

    def __post_init__(self):
        if 1.0 not in self.b_multipliers:
            raise ConfigError("b_multipliers must include the training base (1.0)")
        if self.pairs < 2:
            raise ConfigError("eval needs at least 2 pairs")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    synth_count: int = 16
    optimizer: str = MUON_HYBRID
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    optim: HybridConfig = field(default_factory=HybridConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.optimizer not in (MUON_HYBRID, ADAMW_ONLY):
            raise ConfigError(f"optimizer must be {MUON_HYBRID} or {ADAMW_ONLY}")

    def to_json_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {
    "encoder": EncoderConfig,
    "optim": HybridConfig,
    "synth": SynthConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}


def _coerce(dc_type, data: dict, where: str):
    allowed = {f.name for f in fields(dc_type)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in [{where}]")
    # TOML/JSON arrays arrive as lists; every sequence-valued config field is a tuple
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    return dc_type(**kwargs)


def config_from_dict(doc: dict) -> RunConfig:
    doc = dict(doc)
    kwargs = {}
    for name, dc_type in _SECTIONS.items():
        if name in doc:
            section = doc.pop(name)
            if not isinstance(section, dict):
                raise ConfigError(f"section [{name}] must be a table/object")
            kwargs[name] = _coerce(dc_type, section, name)
    top_allowed = {"seed", "out_dir", "synth_count", "optimizer"}
    unknown = set(doc) - top_allowed
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {sorted(unknown)}")
    kwargs.update(doc)
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".json":
        doc = json.loads(raw.decode("utf-8"))
    else:
        doc = tomllib.loads(raw.decode("utf-8"))
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config document must be a table/object")
    return config_from_dict(doc)


def persist_config(cfg: RunConfig, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out_dir / "resolved_config.json",
                      json.dumps(cfg.to_json_dict(), indent=2, sort_keys=True) + "\n")
