"""Volume and text towers: 3D patch embedding, rotary-position attention
blocks, masked mean pooling, and unit-norm projection heads.

No absolute position table exists anywhere; position enters only through
the rotary rotation of query/key pairs inside attention, computed on the
fly from the current sequence length. The text tower reuses the identical
block stack over 1D token positions.
"""

from __future__ import annotations

import re
import zlib
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import tensor as tz
from .container import read_container, write_container
from .tensor import ContractError, Tensor


class ConfigError(ValueError):
    """Encoder configuration violates a structural requirement."""


class CheckpointError(ValueError):
    """Checkpoint file disagrees with the config/parameter schema."""


REPEAT = "repeat"
ZERO = "zero"
PAD_MODES = (REPEAT, ZERO)

MLP_RATIO = 4


@dataclass(frozen=True)
class EncoderConfig:
    """Dimensions shared by both towers; fully determines the parameter set."""

    channels: int = 32
    heads: int = 4
    layers: int = 2
    embed_dim: int = 32
    rope_base: float = 1000.0
    in_plane_size: int = 256
    patch_xy: int = 16
    patch_z: int = 16
    text_vocab_size: int = 512
    text_max_len: int = 128

    def __post_init__(self):
        if self.channels % self.heads != 0:
            raise ConfigError(f"channels {self.channels} not divisible by heads {self.heads}")
        if self.head_dim % 2 != 0:
            raise ConfigError(f"head_dim {self.head_dim} must be even for pair rotation")
        if self.rope_base <= 1.0:
            raise ConfigError(f"rope_base must be > 1, got {self.rope_base}")
        if self.in_plane_size % self.patch_xy != 0:
            raise ConfigError(
                f"in_plane_size {self.in_plane_size} not divisible by patch_xy {self.patch_xy}")
        for name in ("channels", "heads", "layers", "embed_dim", "patch_z",
                     "text_vocab_size", "text_max_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads

    @property
    def patch_volume(self) -> int:
        return self.patch_z * self.patch_xy * self.patch_xy

    def token_count(self, padded_len: int) -> int:
        n = self.in_plane_size // self.patch_xy
        return (padded_len // self.patch_z) * n * n


def paper_faithful_config(**overrides) -> EncoderConfig:
    """The documented full-geometry preset: 256 in-plane, 16x16x16 patches, base 1000."""
    base = dict(channels=32, heads=4, layers=2, embed_dim=64, rope_base=1000.0,
                in_plane_size=256, patch_xy=16, patch_z=16)
    base.update(overrides)
    return EncoderConfig(**base)


def tiny_config(**overrides) -> EncoderConfig:
    """Desk-scale CI preset, geometry scaled so multi-axis flattening is still exercised."""
    base = dict(channels=32, heads=4, layers=2, embed_dim=32, rope_base=1000.0,
                in_plane_size=64, patch_xy=8, patch_z=8, text_vocab_size=512,
                text_max_len=128)
    base.update(overrides)
    return EncoderConfig(**base)


# ---------------------------------------------------------------------------
# rotary position embedding
# ---------------------------------------------------------------------------

def rope_frequencies(d: int, base: float) -> np.ndarray:
    """Geometric frequencies b^(-2r/d) for pair indices r = 0 .. d/2-1."""
    if d % 2 != 0:
        raise ConfigError(f"rotary dimension must be even, got {d}")
    if base <= 1.0:
        raise ConfigError(f"rotary base must be > 1, got {base}")
    r = np.arange(d // 2, dtype=np.float64)
    return base ** (-2.0 * r / d)


def apply_rope(x: Tensor, positions: np.ndarray, base: float) -> Tensor:
    """Rotate each (even, odd) coordinate pair of x[..., L, d] by angle t * w_r.

    Values at position t=0 are untouched; the rotation is orthogonal, so the
    backward pass is the transposed (negative-angle) rotation of the gradient.
    """
    d = x.shape[-1]
    positions = np.asarray(positions)
    if positions.shape != (x.shape[-2],):
        raise ContractError(
            f"positions length {positions.shape} must match sequence length {x.shape[-2]}")
    freqs = rope_frequencies(d, base)
    ang = positions[:, None].astype(np.float64) * freqs[None, :]
    dtype = x.data.dtype
    cos = np.cos(ang).astype(dtype)
    sin = np.sin(ang).astype(dtype)
    even = x.data[..., 0::2]
    odd = x.data[..., 1::2]
    out = np.empty_like(x.data)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos

    def backward(g):
        ge = g[..., 0::2]
        go = g[..., 1::2]
        gx = np.empty_like(g)
        gx[..., 0::2] = ge * cos + go * sin
        gx[..., 1::2] = -ge * sin + go * cos
        return (gx,)

    return tz.emit("apply_rope", out, (x,), backward)


# ---------------------------------------------------------------------------
# slice padding and 3D patch extraction
# ---------------------------------------------------------------------------

def pad_slices(voxels: np.ndarray, patch_z: int, mode: str = REPEAT) -> np.ndarray:
    """Pad the z-axis up to the next multiple of patch_z.

    Repeat mode cycles through the existing slices; zero mode appends zero
    slices. Already-divisible inputs are returned unchanged.
    """
    if mode not in PAD_MODES:
        raise ContractError(f"unknown padding mode {mode!r}; use one of {PAD_MODES}")
    length = voxels.shape[0]
    if length < 1:
        raise ContractError("cannot pad an empty chunk")
    target = -(-length // patch_z) * patch_z
    if target == length:
        return voxels
    if mode == REPEAT:
        idx = np.arange(target) % length
        return voxels[idx]
    pad = np.zeros((target - length,) + voxels.shape[1:], dtype=voxels.dtype)
    return np.concatenate([voxels, pad], axis=0)


def extract_patches(voxels: np.ndarray, patch_z: int, patch_xy: int) -> np.ndarray:
    """Cut [l, H, W] voxels into non-overlapping patches, flattened z-major then y then x."""
    lz, hy, wx = voxels.shape
    if lz % patch_z != 0:
        raise ContractError(f"slice count {lz} not divisible by patch_z {patch_z}")
    if hy % patch_xy != 0 or wx % patch_xy != 0:
        raise ConfigError(f"in-plane size {hy}x{wx} not divisible by patch_xy {patch_xy}")
    nz, ny, nx = lz // patch_z, hy // patch_xy, wx // patch_xy
    v = voxels.reshape(nz, patch_z, ny, patch_xy, nx, patch_xy)
    v = v.transpose(0, 2, 4, 1, 3, 5)
    return np.ascontiguousarray(v).reshape(nz * ny * nx, patch_z * patch_xy * patch_xy)


# ---------------------------------------------------------------------------
# transformer blocks
# ---------------------------------------------------------------------------

def _init_block(cfg: EncoderConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    c = cfg.channels
    hidden = MLP_RATIO * c
    s = 1.0 / np.sqrt(c)
    return {
        "ln1_gain": tz.param(np.ones(c)),
        "ln1_bias": tz.param(np.zeros(c)),
        "wq": tz.param(rng.normal(0.0, s, (c, c))),
        "wk": tz.param(rng.normal(0.0, s, (c, c))),
        "wv": tz.param(rng.normal(0.0, s, (c, c))),
        "wo": tz.param(rng.normal(0.0, s, (c, c))),
        "ln2_gain": tz.param(np.ones(c)),
        "ln2_bias": tz.param(np.zeros(c)),
        "mlp_w1": tz.param(rng.normal(0.0, s, (c, hidden))),
        "mlp_b1": tz.param(np.zeros(hidden)),
        "mlp_w2": tz.param(rng.normal(0.0, 1.0 / np.sqrt(hidden), (hidden, c))),
        "mlp_b2": tz.param(np.zeros(c)),
    }


def attention_block(h: Tensor, positions: np.ndarray, pad_mask: Optional[np.ndarray],
                    blk: dict[str, Tensor], cfg: EncoderConfig,
                    rope_base: Optional[float] = None) -> Tensor:
    """Pre-norm block: rotary attention with additive key mask, then a 4x MLP.

    Rotation is applied to queries and keys only; values stay unrotated.
    pad_mask is boolean [B, L], True marking padded tokens that must not be
    attended to.
    """
    b, length, c = h.shape
    if length == 0:
        raise ContractError("attention over an empty sequence")
    nheads, hd = cfg.heads, cfg.head_dim
    base = cfg.rope_base if rope_base is None else rope_base

    x = tz.layer_norm(h, blk["ln1_gain"], blk["ln1_bias"])
    q = tz.matmul(x, blk["wq"]).reshape(b, length, nheads, hd).transpose((0, 2, 1, 3))
    k = tz.matmul(x, blk["wk"]).reshape(b, length, nheads, hd).transpose((0, 2, 1, 3))
    v = tz.matmul(x, blk["wv"]).reshape(b, length, nheads, hd).transpose((0, 2, 1, 3))
    q = apply_rope(q, positions, base)
    k = apply_rope(k, positions, base)
    scores = tz.matmul(q, k.transpose((0, 1, 3, 2))) * (1.0 / float(np.sqrt(hd)))
    if pad_mask is not None and pad_mask.any():
        additive = np.where(pad_mask, -np.inf, 0.0).reshape(b, 1, 1, length)
        scores = scores + tz.constant(additive)
    attn = tz.softmax_lastdim(scores)
    ctx = tz.matmul(attn, v).transpose((0, 2, 1, 3)).reshape(b, length, c)
    h = h + tz.matmul(ctx, blk["wo"])

    x2 = tz.layer_norm(h, blk["ln2_gain"], blk["ln2_bias"])
    m = tz.gelu(tz.matmul(x2, blk["mlp_w1"]) + blk["mlp_b1"])
    m = tz.matmul(m, blk["mlp_w2"]) + blk["mlp_b2"]
    return h + m


def masked_mean_pool(h: Tensor, pad_mask: Optional[np.ndarray]) -> Tensor:
    """Mean over non-pad tokens of h[B, L, C]."""
    b, length, _ = h.shape
    if pad_mask is None:
        keep = np.ones((b, length))
    else:
        keep = (~pad_mask).astype(np.float64)
    counts = keep.sum(axis=1, keepdims=True)
    if (counts < 1).any():
        raise ContractError("masked_mean_pool needs at least one non-pad token per row")
    weights = (keep / counts)[:, :, None]
    return (h * tz.constant(weights)).sum(axis=1)


def l2_normalize_rows(x: Tensor) -> Tensor:
    n2 = (x * x).sum(axis=-1, keepdims=True)
    return x / tz.sqrt(n2)


# ---------------------------------------------------------------------------
# towers
# ---------------------------------------------------------------------------

class VolumeTower:
    """3D patch embedding -> rotary attention stack -> pooled unit embedding."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        p = cfg.patch_volume
        self.patch_w = tz.param(rng.normal(0.0, 1.0 / np.sqrt(p), (p, cfg.channels)))
        self.patch_b = tz.param(np.zeros(cfg.channels))
        self.blocks = [_init_block(cfg, rng) for _ in range(cfg.layers)]
        self.proj_w = tz.param(rng.normal(0.0, 1.0 / np.sqrt(cfg.channels),
                                          (cfg.channels, cfg.embed_dim)))
        self.proj_b = tz.param(np.zeros(cfg.embed_dim))

    def patch_tokens(self, voxels: np.ndarray) -> tuple[Tensor, np.ndarray]:
        """Project one padded chunk into a token sequence with positions 0..L-1."""
        patches = extract_patches(voxels, self.cfg.patch_z, self.cfg.patch_xy)
        tokens = tz.matmul(tz.constant(patches), self.patch_w) + self.patch_b
        return tokens, np.arange(patches.shape[0])

    def forward(self, voxel_batch: np.ndarray,
                rope_base: Optional[float] = None) -> Tensor:
        """Encode [B, l', S, S] padded chunks (equal length) to unit rows [B, embed_dim]."""
        bsz = voxel_batch.shape[0]
        patches = np.stack([
            extract_patches(voxel_batch[i], self.cfg.patch_z, self.cfg.patch_xy)
            for i in range(bsz)
        ])
        h = tz.matmul(tz.constant(patches), self.patch_w) + self.patch_b
        positions = np.arange(patches.shape[1])
        for blk in self.blocks:
            h = attention_block(h, positions, None, blk, self.cfg, rope_base)
        pooled = masked_mean_pool(h, None)
        return l2_normalize_rows(tz.matmul(pooled, self.proj_w) + self.proj_b)

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.patch_w": self.patch_w, f"{prefix}.patch_b": self.patch_b}
        for i, blk in enumerate(self.blocks):
            for k, t in blk.items():
                out[f"{prefix}.block{i}.{k}"] = t
        out[f"{prefix}.proj_w"] = self.proj_w
        out[f"{prefix}.proj_b"] = self.proj_b
        return out


class Tokenizer:
    """Lowercased word split hashed into a fixed vocabulary; id 0 is the reserved BOS."""

    BOS = 0
    _WORD = re.compile(r"[a-z0-9]+")

    def __init__(self, vocab_size: int, max_len: int):
        if vocab_size < 2:
            raise ConfigError("text_vocab_size must be >= 2 (BOS plus one bucket)")
        self.vocab_size = vocab_size
        self.max_len = max_len
        self.truncations = 0

    def encode(self, text: str) -> list[int]:
        words = self._WORD.findall(text.lower())
        ids = [self.BOS] + [
            zlib.crc32(w.encode("utf-8")) % (self.vocab_size - 1) + 1 for w in words
        ]
        if len(ids) > self.max_len:
            self.truncations += 1
            ids = ids[: self.max_len]
        return ids


class TextTower:
    """Learned token embeddings (no position table) through the same rotary stack."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.tokenizer = Tokenizer(cfg.text_vocab_size, cfg.text_max_len)
        s = 1.0 / np.sqrt(cfg.channels)
        self.embed = tz.param(rng.normal(0.0, s, (cfg.text_vocab_size, cfg.channels)))
        self.blocks = [_init_block(cfg, rng) for _ in range(cfg.layers)]
        self.proj_w = tz.param(rng.normal(0.0, s, (cfg.channels, cfg.embed_dim)))
        self.proj_b = tz.param(np.zeros(cfg.embed_dim))

    def forward_ids(self, ids_batch: list[list[int]],
                    rope_base: Optional[float] = None) -> Tensor:
        bsz = len(ids_batch)
        max_len = max(len(ids) for ids in ids_batch)
        padded = np.zeros((bsz, max_len), dtype=np.int64)
        pad_mask = np.ones((bsz, max_len), dtype=bool)
        for i, ids in enumerate(ids_batch):
            padded[i, : len(ids)] = ids
            pad_mask[i, : len(ids)] = False
        h = tz.embedding(self.embed, padded)
        positions = np.arange(max_len)
        mask = pad_mask if pad_mask.any() else None
        for blk in self.blocks:
            h = attention_block(h, positions, mask, blk, self.cfg, rope_base)
        pooled = masked_mean_pool(h, mask)
        return l2_normalize_rows(tz.matmul(pooled, self.proj_w) + self.proj_b)

    def forward(self, texts: list[str], rope_base: Optional[float] = None) -> Tensor:
        return self.forward_ids([self.tokenizer.encode(t) for t in texts], rope_base)

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.embed": self.embed}
        for i, blk in enumerate(self.blocks):
            for k, t in blk.items():
                out[f"{prefix}.block{i}.{k}"] = t
        out[f"{prefix}.proj_w"] = self.proj_w
        out[f"{prefix}.proj_b"] = self.proj_b
        return out


class AlignmentModel:
    """Both towers plus the learnable loss temperature/bias scalars."""

    def __init__(self, cfg: EncoderConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.volume = VolumeTower(cfg, rng)
        self.text = TextTower(cfg, rng)
        # published sigmoid-objective defaults: scale exp(0)=1, bias -2
        self.log_temp = tz.param(np.zeros(()))
        self.pair_bias = tz.param(np.full((), -2.0))

    def parameters(self) -> dict[str, Tensor]:
        out = self.volume.named_params("volume")
        out.update(self.text.named_params("text"))
        out["log_temp"] = self.log_temp
        out["pair_bias"] = self.pair_bias
        return out

    def encode_volume(self, voxels: np.ndarray, pad_mode: str = REPEAT,
                      rope_base: Optional[float] = None) -> np.ndarray:
        """Pad one raw [l, S, S] chunk and return its unit embedding (no grads)."""
        padded = pad_slices(voxels, self.cfg.patch_z, pad_mode)
        return self.volume.forward(padded[None, ...], rope_base).data[0]

    def encode_volume_batch(self, chunks: list[np.ndarray], pad_mode: str = REPEAT,
                            rope_base: Optional[float] = None) -> np.ndarray:
        """Encode raw variable-length chunks, grouping equal padded lengths per pass."""
        padded = [pad_slices(c, self.cfg.patch_z, pad_mode) for c in chunks]
        out = np.zeros((len(chunks), self.cfg.embed_dim))
        by_len: dict[int, list[int]] = {}
        for i, p in enumerate(padded):
            by_len.setdefault(p.shape[0], []).append(i)
        for _, idxs in sorted(by_len.items()):
            batch = np.stack([padded[i] for i in idxs])
            emb = self.volume.forward(batch, rope_base).data
            for row, i in enumerate(idxs):
                out[i] = emb[row]
        return out

    def encode_text(self, texts: list[str], rope_base: Optional[float] = None) -> np.ndarray:
        return self.text.forward(texts, rope_base).data


# ---------------------------------------------------------------------------
# weight checkpoint: JSON manifest + raw little-endian float32 per parameter
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = 1


def save_checkpoint(path, model: AlignmentModel) -> None:
    params = model.parameters()
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(model.cfg),
        "params": [{"name": n, "shape": list(t.shape)} for n, t in params.items()],
    }
    payload = b"".join(
        np.ascontiguousarray(t.data, dtype="<f4").tobytes() for t in params.values()
    )
    write_container(path, manifest, payload)


def load_checkpoint(path) -> AlignmentModel:
    manifest, payload = read_container(path)
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unsupported checkpoint format {manifest.get('format')}")
    try:
        cfg = EncoderConfig(**manifest["config"])
    except (TypeError, KeyError, ConfigError) as e:
        raise CheckpointError(f"{path}: bad config in manifest: {e}") from e
    model = AlignmentModel(cfg, seed=0)
    params = model.parameters()
    entries = manifest["params"]
    if [e["name"] for e in entries] != list(params.keys()):
        raise CheckpointError(f"{path}: parameter names disagree with config-built model")
    offset = 0
    for entry in entries:
        t = params[entry["name"]]
        if list(t.shape) != entry["shape"]:
            raise CheckpointError(
                f"{path}: shape {entry['shape']} for {entry['name']} != expected {list(t.shape)}")
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        raw = np.frombuffer(payload, dtype="<f4", count=n, offset=offset)
        offset += 4 * n
        t.data = raw.reshape(t.shape).astype(tz.default_dtype())
    if offset != len(payload):
        raise CheckpointError(f"{path}: payload length {len(payload)} != manifest total {offset}")
    return model
