#!/usr/bin/env python3
"""
Spoof cue experiment command line.

Subcommands:
    train        train generator + auxiliary classifier on a manifest/protocol
    eval         score a protocol's test set and write the metrics report
    score        write a score file for one manifest split
    synth-data   generate a synthetic live/spoof dataset
    export-cues  dump cue maps of loose images as 8-bit PNGs

Settings precedence: command-line flags > environment > --config file > defaults.
Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

# Add the root directory to the path so the src package is importable
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import torch
from PIL import Image

from src.core.config import ARTIFACT_TYPES, EvalConfig, SpoofCueSettings, load_settings
from src.core.utils import get_output_directory, resolve_device
from src.data.manifest import Split, load_manifest, load_protocol
from src.data.pipeline import denormalize_image, load_views
from src.data.synthetic import MANIFEST_NAME, synth_dataset
from src.evaluation.metrics import MetricsReport, compute_acer_report, compute_eer
from src.evaluation.scoring import read_score_file, spoof_scores
from src.monitoring.error import SpoofCueException, with_error_handling
from src.training.checkpoint import load_checkpoint, restore_models
from src.training.trainer import evaluate, fit, score_split

logger = logging.getLogger("spoofcue")

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}


def _overrides(**sections: Dict[str, Any]) -> Dict[str, Dict[str, Any]]:
    """Drop flags that were not given so lower-precedence sources apply"""
    return {
        name: {key: value for key, value in values.items() if value is not None}
        for name, values in sections.items()
    }


def _pct(rate: Optional[float]) -> str:
    return "n/a" if rate is None else f"{rate * 100:.2f}%"


def print_report(report: MetricsReport) -> None:
    print("📊 Results:")
    print(f"   Threshold ({report.threshold_policy}): {report.threshold:.6g}")
    for attack_type, rate in sorted(report.apcer_per_pai.items()):
        print(f"   APCER[{attack_type}]: {_pct(rate)}")
    print(f"   APCER: {_pct(report.apcer)}")
    print(f"   BPCER: {_pct(report.bpcer)}")
    print(f"   ACER:  {_pct(report.acer)}")
    print(f"   HTER:  {_pct(report.hter)}")
    if report.eer is not None:
        print(f"   Dev EER: {_pct(report.eer)}")
    if report.classifier_accuracy is not None:
        print(f"   Classifier accuracy: {_pct(report.classifier_accuracy)}")


@with_error_handling("cmd_train")
def cmd_train(args: argparse.Namespace) -> int:
    settings = load_settings(args.config, _overrides(
        train={
            "seed": getattr(args, "seed", None),
            "checkpoint_dir": getattr(args, "out", None),
            "epochs": getattr(args, "epochs", None),
            "batch_size": getattr(args, "batch_size", None),
            "device": getattr(args, "device", None),
        },
        pipeline={"seed": getattr(args, "seed", None), "input_mode": getattr(args, "input_mode", None)},
    ))
    manifest = load_manifest(args.manifest)
    protocol = load_protocol(args.protocol)

    print(f"🚀 Training on {args.manifest} with protocol {protocol.name}")
    checkpoint = fit(settings, manifest, protocol, resume_from=args.resume)
    print(f"✅ Final checkpoint: {checkpoint}")
    return 0


def _eval_offline(args: argparse.Namespace, settings: SpoofCueSettings) -> int:
    records = read_score_file(args.scores)
    eer = None
    if settings.eval.threshold_policy == "dev_eer":
        if not args.dev_scores:
            print("❌ The dev_eer threshold policy needs --dev-scores with an offline --scores report", file=sys.stderr)
            return 2
        eer, threshold = compute_eer(read_score_file(args.dev_scores))
    else:
        threshold = settings.eval.threshold
    report = compute_acer_report(records, threshold, threshold_policy=settings.eval.threshold_policy)
    report.eer = eer
    report.extras["scores"] = str(args.scores)
    out_dir = get_output_directory(args.report)
    report.write(out_dir / "report.txt")
    print_report(report)
    return 0


@with_error_handling("cmd_eval")
def cmd_eval(args: argparse.Namespace) -> int:
    if args.dev_eer:
        policy = "dev_eer"
    else:
        policy = "fixed" if getattr(args, "threshold", None) is not None else None
    settings = load_settings(args.config, _overrides(
        eval={
            "threshold": getattr(args, "threshold", None),
            "threshold_policy": policy,
            "video_aggregation": getattr(args, "video_aggregation", None),
        },
    ))
    if args.scores:
        return _eval_offline(args, settings)

    manifest = load_manifest(args.manifest)
    protocol = load_protocol(args.protocol)
    stored = load_checkpoint(args.checkpoint).restore_settings()

    # eval flags and environment win; remaining eval/pipeline values come from the checkpoint
    eval_config = EvalConfig(**{**stored.eval.model_dump(), **_explicit_eval_fields(settings)})
    print(f"🔍 Evaluating {args.checkpoint} on protocol {protocol.name}")
    result = evaluate(
        args.checkpoint, manifest, protocol, args.report,
        eval_config=eval_config,
        pipeline_config=stored.pipeline,
        device=settings.train.device,
        report_classifier=args.classifier_accuracy,
    )
    print_report(result.report)
    print(f"✅ Report: {result.report_path}")
    print(f"   Scores: {result.score_path}")
    print(f"   Embeddings: {result.embeddings_path}")
    return 0


def _explicit_eval_fields(settings: SpoofCueSettings) -> Dict[str, Any]:
    """Eval fields set on the command line, in the environment or in the config file"""
    explicit = settings.eval.model_fields_set
    return {name: getattr(settings.eval, name) for name in explicit}


@with_error_handling("cmd_score")
def cmd_score(args: argparse.Namespace) -> int:
    settings = load_settings(args.config)
    manifest = load_manifest(args.manifest)
    samples = manifest.by_split(args.split)
    if not samples:
        print(f"❌ Split {args.split!r} of {args.manifest} is empty", file=sys.stderr)
        return 1
    stored = load_checkpoint(args.checkpoint).restore_settings()
    records = score_split(
        args.checkpoint, manifest, samples, args.out,
        eval_config=stored.eval, pipeline_config=stored.pipeline, device=settings.train.device,
    )
    print(f"✅ Wrote {len(records)} score records to {args.out}")
    return 0


@with_error_handling("cmd_synth_data")
def cmd_synth_data(args: argparse.Namespace) -> int:
    settings = load_settings(args.config, _overrides(synth={
        "count": getattr(args, "count", None),
        "image_size": getattr(args, "size", None),
        "artifact_types": getattr(args, "artifacts", None),
        "artifact_strength": getattr(args, "strength", None),
        "seed": getattr(args, "seed", None),
    }))
    print(f"🛠️  Generating {settings.synth.count} live + {settings.synth.count} spoof images...")
    manifest = synth_dataset(settings.synth, args.out)
    print(f"✅ Wrote {len(manifest)} samples and {Path(args.out) / MANIFEST_NAME}")
    return 0


def _collect_images(paths: Sequence[str]) -> List[Path]:
    images: List[Path] = []
    for entry in paths:
        path = Path(entry)
        if path.is_dir():
            images.extend(sorted(p for p in path.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES))
        else:
            images.append(path)
    return images


@with_error_handling("cmd_export_cues")
def cmd_export_cues(args: argparse.Namespace) -> int:
    """
    Write each image's cue map as an 8-bit PNG plus cue_scores.jsonl. The PNG is the
    first evaluation view (the center crop unless PIPELINE_EVAL_PATCHES > 1); the
    score averages all views, as eval does.
    """
    settings = load_settings(args.config)
    device = resolve_device(settings.train.device)
    generator, _, stored = restore_models(load_checkpoint(args.checkpoint, device), device)
    generator.eval()
    out_dir = get_output_directory(args.out)

    images = _collect_images(args.images)
    stacks = load_views([str(p) for p in images], stored.pipeline)
    lines = []
    with torch.no_grad():
        for path, views in zip(images, stacks):
            cue_maps = generator(views.to(device)).cue_map
            score = float(spoof_scores(cue_maps).sum() / len(cue_maps))
            cue = cue_maps[0].permute(1, 2, 0).cpu().numpy()
            target = out_dir / f"{path.stem}_cue.png"
            Image.fromarray(denormalize_image(cue)).save(target, format="PNG")
            lines.append(json.dumps({"image": str(path), "cue_map": str(target), "score": score, "views": len(cue_maps)}))

    (out_dir / "cue_scores.jsonl").write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    print(f"✅ Exported {len(lines)} cue maps to {out_dir}")
    return 0


def _artifact_list(value: str) -> List[str]:
    names = [name.strip() for name in value.split(",") if name.strip()]
    unknown = [name for name in names if name not in ARTIFACT_TYPES]
    if unknown or not names:
        raise argparse.ArgumentTypeError(
            f"unknown artifact type(s) {unknown}; valid names: {', '.join(ARTIFACT_TYPES)}"
        )
    return names


def build_parser() -> argparse.ArgumentParser:
    formatter = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="spoofcue", description="Spoof cue learning for face anti-spoofing", formatter_class=formatter
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    def add_config(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--config", help="flat KEY=VALUE config file (default: spoofcue.env if present)")

    train = subparsers.add_parser("train", help="train a model", formatter_class=formatter)
    add_config(train)
    train.add_argument("--manifest", required=True, help="dataset manifest (JSONL)")
    train.add_argument("--protocol", default="intra", help="'intra', 'unseen:<attacks>' or a protocol JSON file")
    train.add_argument("--out", default=argparse.SUPPRESS, help="output directory (config TRAIN_CHECKPOINT_DIR, default runs/spoofcue)")
    train.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="initialization and sampling seed (config TRAIN_SEED, default 0)")
    train.add_argument("--epochs", type=int, default=argparse.SUPPRESS, help="training epochs (config TRAIN_EPOCHS, default 20)")
    train.add_argument("--batch-size", type=int, default=argparse.SUPPRESS, help="even batch size (config TRAIN_BATCH_SIZE, default 32)")
    train.add_argument("--input-mode", choices=["patched", "resized"], default=argparse.SUPPRESS, help="input preparation (default patched)")
    train.add_argument("--device", default=argparse.SUPPRESS, help="torch device (default cpu)")
    train.add_argument("--resume", default=None, help="checkpoint to resume from")
    train.set_defaults(handler=cmd_train)

    ev = subparsers.add_parser("eval", help="evaluate a checkpoint", formatter_class=formatter)
    add_config(ev)
    ev.add_argument("--checkpoint", help="checkpoint file")
    ev.add_argument("--manifest", help="dataset manifest (JSONL)")
    ev.add_argument("--protocol", default="intra", help="'intra', 'unseen:<attacks>' or a protocol JSON file")
    threshold = ev.add_mutually_exclusive_group()
    threshold.add_argument("--threshold", type=float, default=argparse.SUPPRESS, help="fixed spoof score threshold (default 0.01)")
    threshold.add_argument("--dev-eer", action="store_true", help="select the threshold at the dev-set equal error rate")
    ev.add_argument("--video-aggregation", choices=["mean", "max"], default=argparse.SUPPRESS, help="frame score aggregation per video (default mean)")
    ev.add_argument("--classifier-accuracy", action="store_true", help="also report auxiliary classifier accuracy")
    ev.add_argument("--scores", default=None, help="recompute the report offline from this score file")
    ev.add_argument("--dev-scores", default=None, help="dev-split score file for --dev-eer with --scores (see the score command)")
    ev.add_argument("--report", default="eval_report", help="output directory for report, scores and embeddings")
    ev.set_defaults(handler=cmd_eval)

    score = subparsers.add_parser("score", help="write a score file for a manifest split", formatter_class=formatter)
    add_config(score)
    score.add_argument("--checkpoint", required=True, help="checkpoint file")
    score.add_argument("--manifest", required=True, help="dataset manifest (JSONL)")
    score.add_argument("--split", choices=[s.value for s in Split], default="test", help="manifest split to score")
    score.add_argument("--out", required=True, help="score file to write (JSONL)")
    score.set_defaults(handler=cmd_score)

    synth = subparsers.add_parser("synth-data", help="generate a synthetic dataset", formatter_class=formatter)
    add_config(synth)
    synth.add_argument("--count", type=int, default=argparse.SUPPRESS, help="images per class (default 100)")
    synth.add_argument("--size", type=int, default=argparse.SUPPRESS, help="image side length in pixels (default 96)")
    synth.add_argument("--artifacts", type=_artifact_list, default=argparse.SUPPRESS,
                       help=f"comma-separated artifact types from {', '.join(ARTIFACT_TYPES)} (default all)")
    synth.add_argument("--strength", type=float, default=argparse.SUPPRESS, help="artifact strength in (0, 1] (default 0.6)")
    synth.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="generation seed (default 0)")
    synth.add_argument("--out", required=True, help="output directory")
    synth.set_defaults(handler=cmd_synth_data)

    export = subparsers.add_parser("export-cues", help="export cue maps as images", formatter_class=formatter)
    add_config(export)
    export.add_argument("--checkpoint", required=True, help="checkpoint file")
    export.add_argument("--images", required=True, nargs="+", help="image files or directories")
    export.add_argument("--out", required=True, help="output directory")
    export.set_defaults(handler=cmd_export_cues)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == "eval" and not args.scores and not (args.checkpoint and args.manifest):
        parser.error("eval needs --checkpoint and --manifest, or --scores for an offline report")
    if args.command == "eval" and args.scores and args.dev_eer and not args.dev_scores:
        parser.error("eval --scores --dev-eer needs --dev-scores: a score file has no split to take the dev set from")
    if args.command == "eval" and args.dev_scores and not args.scores:
        parser.error("--dev-scores only applies to an offline --scores report")

    try:
        return args.handler(args)
    except SpoofCueException as e:
        print(f"❌ {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
