"""Evaluation runs over a frozen checkpoint: paired retrieval with bootstrap
statistics per slice count, the rotary-base multiplier sweep, organ-presence
linear probes, similarity heatmap dumps, and the repeat-vs-zero padding
comparison on single-slice inputs."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .container import atomic_write_text
from .dataset import Study
from .encoder import REPEAT, ZERO, AlignmentModel
from .findings import compose_description
from .metrics import ProbeReport, RetrievalReport, bootstrap_eval, cosine_matrix, linear_probe
from .runconfig import RunConfig
from .studies import ChunkSpec, organs_in_chunk


@dataclass
class EvalPairs:
    chunks: list[np.ndarray]
    texts: list[str]
    labels: np.ndarray  # organ presence per pool organ, [N, |pool|]
    organs: tuple[str, ...]
    specs: list[ChunkSpec]


def build_eval_pairs(studies: list[Study], slice_count: int, seed: int,
                     limit: int | None = None) -> EvalPairs:
    """One deterministic chunk/text pair per study at the requested slice count.

    Volumes shallower than the slice count contribute their full depth (the
    encoder's repeat padding handles the remainder).
    """
    chunks, texts, specs, label_rows = [], [], [], []
    picked = studies if limit is None else studies[:limit]
    organs: tuple[str, ...] = picked[0].mask.organs if picked else ()
    for i, study in enumerate(picked):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 3, i, slice_count]))
        depth = study.depth
        length = min(slice_count, depth)
        start = int(rng.integers(0, depth - length + 1))
        spec = ChunkSpec(start, length)
        hit = organs_in_chunk(study.mask, spec)
        chunks.append(study.volume[start: start + length])
        texts.append(compose_description(study.record, hit))
        label_rows.append([int(o in hit) for o in study.mask.organs])
        specs.append(spec)
    return EvalPairs(chunks=chunks, texts=texts,
                     labels=np.asarray(label_rows, dtype=int), organs=organs,
                     specs=specs)


def rope_base_sweep(model: AlignmentModel, pairs: EvalPairs,
                    multipliers: tuple[float, ...], subset_size: int, iters: int,
                    seed: int, pad_mode: str = REPEAT) -> dict[float, RetrievalReport]:
    """Re-encode at inference-time base b * multiplier; the training-base row is flagged."""
    out: dict[float, RetrievalReport] = {}
    for mult in multipliers:
        base = model.cfg.rope_base * mult
        img = model.encode_volume_batch(pairs.chunks, pad_mode=pad_mode, rope_base=base)
        txt = model.encode_text(pairs.texts, rope_base=base)
        report = bootstrap_eval(img, txt, subset_size=subset_size, iters=iters, seed=seed)
        report.meta["b_multiplier"] = mult
        report.meta["rope_base"] = base
        report.meta["is_training_base"] = (mult == 1.0)
        out[mult] = report
    return out


def _probe_split(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = labels.shape[0]
    half = n // 2
    return np.arange(half), np.arange(half, n)


def run_eval(model: AlignmentModel, studies: list[Study], cfg: RunConfig,
             out_dir, log=None) -> dict:
    """Full evaluation protocol; writes JSON/CSV reports and heatmap dumps."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ecfg = cfg.eval
    summary: dict = {"slice_counts": {}, "pairs": ecfg.pairs}
    csv_rows = ["slice_count,b_multiplier,metric,mean,std"]
    for slice_count in ecfg.slice_counts:
        pairs = build_eval_pairs(studies, slice_count, cfg.seed, limit=ecfg.pairs)
        subset = min(ecfg.bootstrap_subset, len(pairs.chunks))
        sweep = rope_base_sweep(model, pairs, ecfg.b_multipliers, subset,
                                ecfg.bootstrap_iters, cfg.seed,
                                pad_mode=cfg.train.pad_mode)
        # similarity heatmap at the training base
        img = model.encode_volume_batch(pairs.chunks, pad_mode=cfg.train.pad_mode)
        txt = model.encode_text(pairs.texts)
        sim = cosine_matrix(img, txt)
        atomic_write_text(out_dir / f"heatmap_slice{slice_count}.csv",
                          "\n".join(",".join(f"{v:.8f}" for v in row) for row in sim)
                          + "\n")
        # organ-presence probe over the frozen embeddings
        train_idx, test_idx = _probe_split(pairs.labels)
        probe = linear_probe(img[train_idx], pairs.labels[train_idx],
                             img[test_idx], pairs.labels[test_idx], l2=ecfg.probe_l2)
        slice_doc = {"rope_base_sweep": {}, "probe": probe.to_json_dict()}
        for mult, report in sweep.items():
            slice_doc["rope_base_sweep"][str(mult)] = report.to_json_dict()
            for metric, mean, std in report.to_csv_rows():
                csv_rows.append(f"{slice_count},{mult},{metric},{mean!r},{std!r}")
        summary["slice_counts"][str(slice_count)] = slice_doc
        if log is not None:
            base_report = sweep[1.0]
            log(f"slice {slice_count}: R@1 {base_report.stats['R@1'].mean:.3f} "
                f"MeanRank {base_report.stats['MeanRank'].mean:.2f}")
    atomic_write_text(out_dir / "eval_report.json",
                      json.dumps(summary, indent=2, sort_keys=True) + "\n")
    atomic_write_text(out_dir / "eval_report.csv", "\n".join(csv_rows) + "\n")
    return summary


def padding_comparison(model: AlignmentModel, studies: list[Study], n_samples: int,
                       seed: int, l2: float = 0.0) -> dict:
    """Single-slice organ-presence probe under repeat vs zero padding.

    Returns both probe reports and their macro F1 values; the direction
    (repeat >= zero) is the trained-without-empty-slices expectation.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 4]))
    slices, label_rows = [], []
    for i in range(n_samples):
        study = studies[i % len(studies)]
        z = int(rng.integers(study.depth))
        slices.append(study.volume[z: z + 1])
        label_rows.append(study.mask.presence[z].astype(int))
    labels = np.asarray(label_rows, dtype=int)
    train_idx, test_idx = _probe_split(labels)
    out: dict = {"n_samples": n_samples}
    for mode in (REPEAT, ZERO):
        emb = model.encode_volume_batch(slices, pad_mode=mode)
        probe = linear_probe(emb[train_idx], labels[train_idx],
                             emb[test_idx], labels[test_idx], l2=l2)
        out[mode] = probe.to_json_dict()
        out[f"{mode}_f1"] = probe.macro["f1"].mean if "f1" in probe.macro else 0.0
    return out
