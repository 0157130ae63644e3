"""Command-line entry point.

Subcommands: gen-data, train, infer, eval, ablate, stats.  All outputs
land under --out; every command is idempotent given identical inputs and
--seed.  Exit codes: 0 success, 2 configuration/validation problem, 3 I/O
problem.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import config as cfgmod
from .errors import (
    AnnotationError,
    ConfigError,
    ContractError,
    DimensionError,
    EmptyInputError,
    ValidationError,
)
from .evaluation import PROTOCOLS, evaluate, write_report
from .inference import run_inference
from .model import MODES, forward, load_checkpoint
from .synthdata import corpus_stats, generate_corpus, load_manifest, pad_to_length, read_features
from .trainer import ablate, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3

_CONFIG_ERRORS = (
    ConfigError, AnnotationError, ValidationError, DimensionError,
    EmptyInputError, ContractError, ValueError, json.JSONDecodeError,
)


def _write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_gen_data(args) -> int:
    resolved = cfgmod.load_run_config(args.config, seed_override=args.seed)
    out = Path(args.out)
    cfgmod.echo_resolved(resolved, out)
    paths = generate_corpus(cfgmod.corpus_config(resolved), out)
    with open(paths.stats) as fh:
        stats = json.load(fh)
    print(f"wrote corpus to {paths.root}")
    print(f"train manifest: {paths.train_manifest}")
    print(f"test manifest:  {paths.test_manifest}")
    print(f"foreground frames: {stats['foreground_pct']:.2f}% of {stats['total_frames']}")
    return EXIT_OK


def cmd_train(args) -> int:
    resolved = cfgmod.load_run_config(args.config, seed_override=args.seed)
    out = Path(args.out)
    cfgmod.echo_resolved(resolved, out)
    train_cfg = cfgmod.train_config(resolved, mode_override=args.mode)
    result = train(train_cfg, args.manifest, out)
    last = result.history[-1].l_total if result.history else float("nan")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"log:        {result.log_path}")
    print(f"steps: {len(result.history)}  final loss: {last:.4f}")
    return EXIT_OK


def _dump_scores(params, manifest, out_dir: Path) -> None:
    """Per-video CSV of frame scores, for external plotting."""
    out_dir.mkdir(parents=True, exist_ok=True)
    n_classes = params.config.num_classes
    for video in manifest.videos:
        features = read_features(manifest.feature_path(video))
        padded, mask = pad_to_length(features, params.config.max_frames)
        bundle = forward(params, padded, mask)
        with open(out_dir / f"{video.video_id}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["frame", "foreground"]
            header += [f"conditional_{c}" for c in range(n_classes)]
            header += [f"action_{c}" for c in range(n_classes)]
            writer.writerow(header)
            fg = bundle.foreground_scores.data if bundle.foreground_scores is not None else None
            cond = bundle.conditional_scores.data if bundle.conditional_scores is not None else None
            action = bundle.action_scores.data
            for t in range(int(mask.sum())):
                row = [t, f"{fg[t]:.6f}" if fg is not None else ""]
                row += [f"{cond[t, c]:.6f}" if cond is not None else "" for c in range(n_classes)]
                row += [f"{action[t, c]:.6f}" for c in range(n_classes)]
                writer.writerow(row)


def cmd_infer(args) -> int:
    resolved = cfgmod.load_run_config(args.config, seed_override=args.seed)
    out = Path(args.out)
    cfgmod.echo_resolved(resolved, out)
    params = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    preds_path = run_inference(params, manifest, cfgmod.inference_config(resolved), out / "predictions.json")
    if args.dump_scores:
        _dump_scores(params, manifest, out / "scores")
    print(f"predictions: {preds_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    resolved = cfgmod.load_run_config(args.config, seed_override=args.seed)
    out = Path(args.out)
    cfgmod.echo_resolved(resolved, out)
    report = evaluate(
        args.predictions, args.manifest, args.protocol,
        iou_thresholds=cfgmod.iou_thresholds(resolved),
    )
    write_report(report, out / "report.json", out / "report.txt")
    sys.stdout.write(report.to_table())
    return EXIT_OK


def cmd_ablate(args) -> int:
    resolved = cfgmod.load_run_config(args.config, seed_override=args.seed)
    out = Path(args.out)
    cfgmod.echo_resolved(resolved, out)
    arms = ablate(
        cfgmod.train_config(resolved),
        args.manifest,
        args.test_manifest,
        cfgmod.inference_config(resolved),
        out,
    )
    print((out / "ablation_summary.txt").read_text(), end="")
    for mode, arm in arms.items():
        for protocol, report in arm.reports.items():
            avg = report.average_map
            if avg is None:
                print(f"{mode} [{protocol}]: no defined classes")
    return EXIT_OK


def cmd_stats(args) -> int:
    stats = corpus_stats(args.manifest)
    out = Path(args.out)
    _write_json(out / "stats.json", stats)
    print(f"basis: {stats['basis']}")
    print(f"videos: {stats['num_videos']}  bg-only: {stats['bg_only_videos']}")
    print(f"foreground frames: {stats['foreground_pct']:.2f}%")
    for c, row in sorted(stats["per_class"].items()):
        print(
            f"class {c}: all {row['all_frames_pct']:.2f}%  "
            f"fg {row['foreground_frames_pct']:.2f}%  "
            f"ratio {row['improvement_ratio']:.1f}x"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="c2f",
        description="Generate synthetic corpora, train the frame scorer, propose segments, and evaluate mAP.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, sections, **kwargs):
        p = sub.add_parser(
            name,
            epilog=cfgmod.describe_defaults(sections),
            formatter_class=argparse.RawDescriptionHelpFormatter,
            **kwargs,
        )
        p.set_defaults(func=func)
        p.add_argument("--config", default=None, help="run config JSON (defaults apply when omitted)")
        p.add_argument("--out", required=True, help="output directory; all writes land here")
        p.add_argument("--seed", type=int, default=None, help="override corpus and train seeds")
        return p

    add("gen-data", cmd_gen_data, ["corpus"], help="generate a synthetic corpus + manifests + stats")

    p = add("train", cmd_train, ["model", "loss", "train"], help="train one arm on a corpus")
    p.add_argument("--manifest", required=True, help="training manifest JSON")
    p.add_argument("--mode", choices=MODES, default=None, help="override train.mode")

    p = add("infer", cmd_infer, ["inference"], help="propose segments from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--dump-scores", action="store_true",
                   help="also write per-video frame-score CSVs under <out>/scores/")

    p = add("eval", cmd_eval, ["eval"], help="score predictions against a manifest")
    p.add_argument("--predictions", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--protocol", choices=PROTOCOLS, required=True)

    p = add("ablate", cmd_ablate, ["model", "loss", "train", "inference"],
            help="train + evaluate all three arms on one corpus")
    p.add_argument("--manifest", required=True, help="training manifest JSON")
    p.add_argument("--test-manifest", required=True, help="test manifest JSON (needs all-occurrence GT)")

    p = sub.add_parser("stats", help="recount the imbalance report from a manifest")
    p.set_defaults(func=cmd_stats)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
