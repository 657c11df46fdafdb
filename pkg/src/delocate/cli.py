"""Command-line entry points: gen-data, train, eval, infer, sweep.

Exit codes: 0 success, 2 invalid input, 3 phase-order or file-format errors.
Set DELOCATE_DETERMINISTIC=1 to force deterministic kernels and seeding.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import RunConfig, apply_overrides, load_config
from .dataio.store import load_manifest, load_manifest_clip
from .dataio.synthetic import FORGERY_SHAPES, generate_synthetic_corpus
from .errors import (
    DegenerateGeometry,
    FormatError,
    InvalidInput,
    InvariantViolation,
    PhaseOrderError,
    SplitInfeasible,
)
from .masking import STRATEGIES
from .metatrain import load_pipeline, run_training
from .pipeline import evaluate_manifest, infer_clip
from .torchutils import deterministic_mode_requested, seed_everything


def _parse_shapes(text: str) -> set[str]:
    shapes = {s.strip() for s in text.split(",") if s.strip()}
    for s in shapes:
        if s not in FORGERY_SHAPES:
            raise InvalidInput(f"unknown shape {s!r}; choose from {sorted(FORGERY_SHAPES)}")
    return shapes


def _parse_size(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise InvalidInput(f"size must look like TxHxW, got {text!r}")
    t, h, w = (int(p) for p in parts)
    return t, h, w


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise InvalidInput(f"output directory {out} is not empty; pass --force to overwrite")
    manifest = generate_synthetic_corpus(
        out,
        n_real=args.n_real,
        n_fake=args.n_fake,
        forgery_shapes=_parse_shapes(args.shapes),
        size=_parse_size(args.size),
        seed=args.seed,
        val_fraction=args.val_frac,
        test_fraction=args.test_frac,
    )
    print(f"wrote {len(manifest.entries)} clips to {out / 'manifest.json'}")
    return 0


def _assemble_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.mask_ratio is not None:
        overrides["masking.ratio"] = args.mask_ratio
    if args.mask_strategy is not None:
        if args.mask_strategy not in STRATEGIES:
            raise InvalidInput(f"unknown masking strategy {args.mask_strategy!r}")
        overrides["masking.strategy"] = args.mask_strategy
    if args.split_mode is not None:
        overrides["split_mode"] = args.split_mode
    if getattr(args, "epochs_recover", None) is not None:
        overrides["pretrain.epochs"] = args.epochs_recover
    if getattr(args, "epochs_finetune", None) is not None:
        overrides["finetune.epochs"] = args.epochs_finetune
    if getattr(args, "epochs_localize", None) is not None:
        overrides["localize.epochs"] = args.epochs_localize
    config = apply_overrides(config, overrides) if overrides else config
    if deterministic_mode_requested():
        config = apply_overrides(config, {"deterministic": True})
    return config


def _check_corpus_matches(config: RunConfig, manifest) -> None:
    if not manifest.entries:
        raise InvalidInput("manifest has no entries")
    clip = load_manifest_clip(manifest, manifest.entries[0])
    h, w = clip.shape
    if (clip.num_frames, h, w) != (config.data.frames, config.data.image_size, config.data.image_size):
        raise InvalidInput(
            f"corpus clips are T={clip.num_frames}, {h}x{w} but config expects "
            f"T={config.data.frames}, {config.data.image_size}x{config.data.image_size}"
        )


def cmd_train(args) -> int:
    config = _assemble_config(args)
    manifest = load_manifest(args.data)
    _check_corpus_matches(config, manifest)
    phases = ("recover", "finetune", "localize") if args.phase == "all" else (args.phase,)
    run_training(config, manifest, args.run, phases=phases)
    print(f"run directory: {args.run}")
    return 0


def cmd_eval(args) -> int:
    config = load_config(Path(args.run) / "config.json")
    seed_everything(config.seed, config.deterministic or deterministic_mode_requested())
    manifest = load_manifest(args.data)
    pipeline = load_pipeline(args.run, config)
    report = evaluate_manifest(
        pipeline, manifest, split=args.split, config=config, include_reals=args.include_reals
    )
    out_dir = Path(args.out) if args.out else Path(args.run) / f"eval_{args.split}"
    path = report.write(out_dir)
    loc_basis = report.localization_over
    print(f"report: {path}")
    print(f"auc={report.auc:.4f} eer={report.eer:.4f} (n_real={report.n_real} n_fake={report.n_fake})")
    print(f"iou={report.iou} pbca={report.pbca} over {loc_basis}")
    return 0


def cmd_infer(args) -> int:
    config = load_config(Path(args.run) / "config.json")
    seed_everything(config.seed, config.deterministic or deterministic_mode_requested())
    pipeline = load_pipeline(args.run, config)
    payload = infer_clip(pipeline, args.clip, args.out)
    print(json.dumps({k: payload[k] for k in ("clip_id", "score", "label_at_0.5")}, indent=1))
    return 0


def cmd_sweep(args) -> int:
    ratios = [float(r) for r in args.ratios.split(",")] if args.ratios else [None]
    strategies = args.strategies.split(",") if args.strategies else [None]
    base = Path(args.out)
    base.mkdir(parents=True, exist_ok=True)
    summary = []
    for ratio in ratios:
        for strategy in strategies:
            run_args = argparse.Namespace(**vars(args))
            run_args.mask_ratio = ratio
            run_args.mask_strategy = strategy
            tag = []
            if strategy is not None:
                tag.append(strategy)
            if ratio is not None:
                tag.append(f"r{ratio:g}")
            run_dir = base / ("run_" + "_".join(tag) if tag else "run_default")
            run_args.run = str(run_dir)
            run_args.phase = "all"
            cmd_train(run_args)
            entry = {"run": str(run_dir), "ratio": ratio, "strategy": strategy}
            if args.eval_data:
                eval_args = argparse.Namespace(
                    run=str(run_dir), data=args.eval_data, split=args.eval_split,
                    include_reals=False, out=None,
                )
                config = load_config(run_dir / "config.json")
                seed_everything(config.seed, config.deterministic)
                manifest = load_manifest(args.eval_data)
                pipeline = load_pipeline(run_dir, config)
                report = evaluate_manifest(pipeline, manifest, split=args.eval_split, config=config)
                report.write(run_dir / f"eval_{args.eval_split}")
                entry.update({"auc": report.auc, "eer": report.eer, "iou": report.iou})
                _ = eval_args
            summary.append(entry)
    (base / "sweep_summary.json").write_text(json.dumps(summary, indent=1))
    print(f"sweep summary: {base / 'sweep_summary.json'} ({len(summary)} runs)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="delocate", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--n-real", type=int, default=20)
    g.add_argument("--n-fake", type=int, default=20)
    g.add_argument("--shapes", default="ellipse")
    g.add_argument("--size", default="8x64x64")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--val-frac", type=float, default=0.0)
    g.add_argument("--test-frac", type=float, default=0.0)
    g.add_argument("--force", action="store_true")
    g.set_defaults(fn=cmd_gen_data)

    def add_train_flags(p):
        p.add_argument("--config", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--mask-ratio", type=float, default=None)
        p.add_argument("--mask-strategy", default=None, choices=sorted(STRATEGIES))
        p.add_argument("--split-mode", default=None, choices=["by_manipulation", "random_7_3"])
        p.add_argument("--epochs-recover", type=int, default=None)
        p.add_argument("--epochs-finetune", type=int, default=None)
        p.add_argument("--epochs-localize", type=int, default=None)
        p.add_argument("--workers", type=int, default=1, help="data-pipeline parallelism")

    t = sub.add_parser("train", help="run training phases")
    t.add_argument("--data", required=True)
    t.add_argument("--run", required=True)
    t.add_argument("--phase", default="all", choices=["all", "recover", "finetune", "localize"])
    add_train_flags(t)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a trained run over a manifest split")
    e.add_argument("--data", required=True)
    e.add_argument("--run", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--include-reals", action="store_true")
    e.add_argument("--out", default=None)
    e.set_defaults(fn=cmd_eval)

    i = sub.add_parser("infer", help="score one clip directory")
    i.add_argument("--clip", required=True)
    i.add_argument("--run", required=True)
    i.add_argument("--out", required=True)
    i.set_defaults(fn=cmd_infer)

    s = sub.add_parser("sweep", help="ablation sweep over ratios and strategies")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--ratios", default=None)
    s.add_argument("--strategies", default=None)
    s.add_argument("--eval-data", default=None)
    s.add_argument("--eval-split", default="test")
    s.add_argument("--phase", default="all")
    add_train_flags(s)
    s.set_defaults(fn=cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (InvalidInput, InvariantViolation, DegenerateGeometry, SplitInfeasible) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (PhaseOrderError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
