"""Command-line entry point: synth | train | eval | compose | verify.

Every subcommand is deterministic given (config, seed). Artifact-producing
commands persist their resolved configuration next to the outputs. Exit
codes: 0 success, 1 validation/contract failure, 2 IO failure. The output
directory may be overridden with the VOXALIGN_OUT environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import tensor as tz
from . import verify as verify_mod
from .dataset import load_dataset, synth_dataset
from .encoder import AlignmentModel, CheckpointError, ConfigError, load_checkpoint
from .evalrun import padding_comparison, run_eval
from .findings import FindingsParseError, FindingsValidationError, parse_findings
from .runconfig import RunConfig, load_config, persist_config
from .studies import BoundsError, ChunkSpec, organs_in_chunk, read_mask
from .findings import compose_description
from .tensor import ContractError, ShapeError
from .train import TrainingAborted, train

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2

_VALIDATION_ERRORS = (
    ConfigError, ContractError, ShapeError, CheckpointError, BoundsError,
    FindingsParseError, FindingsValidationError, TrainingAborted, ValueError,
)


def _resolve_out(args, cfg: RunConfig) -> Path:
    if args.out:
        return Path(args.out)
    env = os.environ.get("VOXALIGN_OUT")
    if env:
        return Path(env)
    return Path(cfg.out_dir)


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def cmd_synth(args) -> int:
    cfg = _load_run_config(args)
    if args.count is not None:
        cfg = replace(cfg, synth_count=args.count)
    out_dir = _resolve_out(args, cfg)
    persist_config(cfg, out_dir)
    manifest = synth_dataset(out_dir, cfg.synth_count, cfg.seed, cfg.synth)
    print(f"wrote {manifest['count']} studies to {out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    if args.steps is not None:
        cfg = replace(cfg, train=replace(cfg.train, steps=args.steps))
    if args.optimizer is not None:
        cfg = replace(cfg, optimizer=args.optimizer)
    out_dir = _resolve_out(args, cfg)
    tz.set_default_dtype(np.float64 if cfg.train.dtype == "float64" else np.float32)
    try:
        studies = load_dataset(args.dataset)
        model = AlignmentModel(cfg.encoder, seed=cfg.seed)
        persist_config(cfg, out_dir)
        result = train(model, studies, cfg, out_dir, log=print)
    finally:
        tz.set_default_dtype(np.float64)
    print(f"trained {result.steps} steps; loss {result.first_loss:.6f} -> "
          f"{result.final_loss:.6f}; overlap collisions {result.overlap_collisions}")
    print(f"checkpoint: {result.checkpoint_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    tz.set_default_dtype(np.float64)
    model = load_checkpoint(args.checkpoint)
    cfg = _load_run_config(args)
    if args.config and cfg.encoder != model.cfg:
        raise CheckpointError(
            f"checkpoint encoder config {model.cfg} disagrees with --config {cfg.encoder}")
    cfg = replace(cfg, encoder=model.cfg)
    if args.slice_counts:
        counts = tuple(int(v) for v in args.slice_counts.split(","))
        cfg = replace(cfg, eval=replace(cfg.eval, slice_counts=counts))
    if args.b_multipliers:
        mults = tuple(float(v) for v in args.b_multipliers.split(","))
        cfg = replace(cfg, eval=replace(cfg.eval, b_multipliers=mults))
    out_dir = _resolve_out(args, cfg)
    studies = load_dataset(args.dataset)
    persist_config(cfg, out_dir)
    run_eval(model, studies, cfg, out_dir, log=print)
    pad_doc = padding_comparison(model, studies, n_samples=max(16, 2 * len(studies)),
                                 seed=cfg.seed, l2=cfg.eval.probe_l2)
    from .container import atomic_write_text
    atomic_write_text(Path(out_dir) / "padding_comparison.json",
                      json.dumps(pad_doc, indent=2, sort_keys=True) + "\n")
    print(f"repeat-pad F1 {pad_doc['repeat_f1']:.3f} vs zero-pad F1 {pad_doc['zero_f1']:.3f}")
    print(f"reports in {out_dir}")
    return EXIT_OK


def cmd_compose(args) -> int:
    findings_text = Path(args.findings).read_text(encoding="utf-8")
    record = parse_findings(findings_text)
    mask = read_mask(args.mask)
    spec = ChunkSpec(args.start, args.length)
    organs = organs_in_chunk(mask, spec)
    print(compose_description(record, organs))
    return EXIT_OK


def cmd_verify(args) -> int:
    tz.set_default_dtype(np.float64)
    results = verify_mod.run_all()
    for result in results:
        print(result.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxalign",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic study dataset")
    p.add_argument("--config", help="TOML or JSON run config")
    p.add_argument("--out", help="output directory (overrides config/env)")
    p.add_argument("--count", type=int, help="number of studies")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a synthesized dataset")
    p.add_argument("--config", help="TOML or JSON run config")
    p.add_argument("--dataset", required=True, help="dataset directory with manifest")
    p.add_argument("--out", help="output directory")
    p.add_argument("--steps", type=int)
    p.add_argument("--optimizer", choices=["muon_hybrid", "adamw_only"])
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", help="optional run config; encoder section must match")
    p.add_argument("--out", help="output directory")
    p.add_argument("--slice-counts", dest="slice_counts", help="e.g. 32,64,128")
    p.add_argument("--b-multipliers", dest="b_multipliers", help="e.g. 0.5,1,2")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compose", help="print the composed description for a window")
    p.add_argument("--findings", required=True, help="findings JSON path")
    p.add_argument("--mask", required=True, help="mask container path")
    p.add_argument("--start", type=int, required=True)
    p.add_argument("--length", type=int, required=True)
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("verify", help="run the built-in verification suites")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
