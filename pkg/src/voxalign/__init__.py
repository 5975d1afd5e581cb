"""Chunk-wise volumetric vision-language pretraining on synthetic data.

Variable-length 3D chunk encoders with on-the-fly rotary position
embeddings, organ-aware chunk/text alignment, a pairwise sigmoid
contrastive objective, a momentum-only/AdamW hybrid optimizer, and
retrieval / linear-probe evaluation — all on a small tape-based autodiff
engine verifiable against brute-force oracles.
"""

from .encoder import (
    AlignmentModel,
    EncoderConfig,
    apply_rope,
    load_checkpoint,
    pad_slices,
    paper_faithful_config,
    rope_frequencies,
    save_checkpoint,
    tiny_config,
)
from .findings import (
    EMPTY_CHUNK_SENTENCE,
    ORGAN_REGISTRY,
    OrganFindingsRecord,
    compose_description,
    parse_findings,
)
from .metrics import bootstrap_eval, cosine_matrix, linear_probe, retrieval_metrics
from .objective import HybridConfig, HybridOptimizer, sigmoid_pair_loss
from .runconfig import RunConfig, load_config
from .studies import ChunkSpec, MaskVolume, organs_in_chunk, sample_chunk, synth_study
from .tensor import Tape, Tensor, grad_check

__version__ = "0.1.0"

__all__ = [
    "AlignmentModel",
    "ChunkSpec",
    "EMPTY_CHUNK_SENTENCE",
    "EncoderConfig",
    "HybridConfig",
    "HybridOptimizer",
    "MaskVolume",
    "ORGAN_REGISTRY",
    "OrganFindingsRecord",
    "RunConfig",
    "Tape",
    "Tensor",
    "apply_rope",
    "bootstrap_eval",
    "compose_description",
    "cosine_matrix",
    "grad_check",
    "linear_probe",
    "load_checkpoint",
    "load_config",
    "organs_in_chunk",
    "pad_slices",
    "paper_faithful_config",
    "parse_findings",
    "retrieval_metrics",
    "rope_frequencies",
    "sample_chunk",
    "save_checkpoint",
    "sigmoid_pair_loss",
    "synth_study",
    "tiny_config",
]
