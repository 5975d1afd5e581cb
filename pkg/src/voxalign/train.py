"""Training loop: per step, sample (chunk, text) pairs from the study pool,
encode both towers, take the pairwise sigmoid loss, and apply the hybrid
optimizer step. Emits an append-only loss CSV, periodic checkpoints, and a
JSON-lines audit dump of every composed pair."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import tensor as tz
from .container import atomic_write_text
from .dataset import Study
from .encoder import AlignmentModel, save_checkpoint
from .objective import HybridOptimizer, sigmoid_pair_loss
from .runconfig import RunConfig
from .studies import build_training_pair
from .tensor import Tape

LOSS_CSV_HEADER = "step,loss,lr,wall_ms"


class TrainingAborted(RuntimeError):
    """Loss went non-finite; carries the failing step."""

    def __init__(self, step: int):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step


@dataclass
class TrainResult:
    steps: int
    final_loss: float
    first_loss: float
    checkpoint_path: Path
    loss_csv_path: Path
    pairs_path: Path
    overlap_collisions: int


def _window_overlaps(batch_specs) -> int:
    """Count in-batch pairs from the same study with overlapping z-windows."""
    collisions = 0
    for i in range(len(batch_specs)):
        for j in range(i + 1, len(batch_specs)):
            (study_i, spec_i), (study_j, spec_j) = batch_specs[i], batch_specs[j]
            if study_i != study_j:
                continue
            if spec_i.start < spec_j.start + spec_j.length \
                    and spec_j.start < spec_i.start + spec_i.length:
                collisions += 1
    return collisions


def train(model: AlignmentModel, studies: list[Study], cfg: RunConfig,
          out_dir, log=None) -> TrainResult:
    """Run cfg.train.steps optimization steps; deterministic given cfg.seed."""
    if not studies:
        raise ValueError("training needs at least one study")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    optimizer = HybridOptimizer(model.parameters(), replace(cfg.optim, mode=cfg.optimizer))
    patch_z = cfg.encoder.patch_z
    loss_rows = [LOSS_CSV_HEADER]
    collisions = 0
    first_loss = final_loss = float("nan")
    ckpt_path = out_dir / "checkpoint_final.ckpt"
    pairs_path = out_dir / "composed_pairs.jsonl"
    pair_lines: list[str] = []

    for step in range(cfg.train.steps):
        t0 = time.perf_counter()
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2, step]))
        picks = [int(rng.integers(len(studies))) for _ in range(cfg.train.batch_size)]
        items = []
        for pick in picks:
            study = studies[pick]
            voxels, text, spec = build_training_pair(
                study.volume, study.mask, study.record, rng, patch_z,
                pad_mode=cfg.train.pad_mode)
            items.append((study.study_id, voxels, text, spec))
            pair_lines.append(json.dumps({
                "step": step, "study_id": study.study_id, "s": spec.start,
                "length": spec.length, "text": text}, ensure_ascii=False))
        collisions += _window_overlaps([(sid, spec) for sid, _, _, spec in items])

        # group equal padded lengths for batched vision forwards; the loss is
        # permutation-invariant so the sorted order is safe
        items.sort(key=lambda it: it[1].shape[0])
        with Tape() as tape:
            groups = []
            texts = []
            start = 0
            while start < len(items):
                end = start
                while end < len(items) and items[end][1].shape[0] == items[start][1].shape[0]:
                    end += 1
                batch = np.stack([items[i][1] for i in range(start, end)])
                groups.append(model.volume.forward(batch))
                texts.extend(items[i][2] for i in range(start, end))
                start = end
            img = tz.concat0(groups)
            txt = model.text.forward(texts)
            loss = sigmoid_pair_loss(img, txt, model.log_temp, model.pair_bias)
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise TrainingAborted(step)
            tape.backward(loss)
        optimizer.step()
        optimizer.zero_grad()

        wall_ms = (time.perf_counter() - t0) * 1000.0
        loss_rows.append(f"{step},{loss_value!r},{cfg.optim.lr!r},{wall_ms:.3f}")
        if step == 0:
            first_loss = loss_value
        final_loss = loss_value
        if log is not None and (step % 50 == 0 or step == cfg.train.steps - 1):
            log(f"step {step}: loss {loss_value:.6f}")
        if cfg.train.checkpoint_every and (step + 1) % cfg.train.checkpoint_every == 0:
            save_checkpoint(out_dir / f"checkpoint_{step + 1:06d}.ckpt", model)

    save_checkpoint(ckpt_path, model)
    loss_csv_path = out_dir / "loss.csv"
    atomic_write_text(loss_csv_path, "\n".join(loss_rows) + "\n")
    atomic_write_text(pairs_path, "\n".join(pair_lines) + ("\n" if pair_lines else ""))
    return TrainResult(steps=cfg.train.steps, final_loss=final_loss,
                       first_loss=first_loss, checkpoint_path=ckpt_path,
                       loss_csv_path=loss_csv_path, pairs_path=pairs_path,
                       overlap_collisions=collisions)
