"""Command-line entry points: `curate` for the pipeline, `scl` for the model core."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import diversity as diversity_mod
from . import sclcore
from .imaging import decode_image, resize_bilinear
from .manifest import load_manifest, save_manifest, verify_accounting
from .pipeline import (
    PipelineConfig,
    PipelineError,
    load_record_image,
    run_stage,
)


def _build_curate_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="curate", description="Food-image dataset curation pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def stage_parser(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--manifest", required=True, help="manifest .jsonl path")
        p.add_argument("--config", help="pipeline config JSON")
        p.add_argument("--force", action="store_true", help="redo the most recent stage")
        return p

    stage_parser("ingest", "scan category roots into a fresh manifest")
    stage_parser("format", "decode, validate, and size-gate images")
    p = stage_parser("dedup", "drop near-duplicate images within each category")
    p.add_argument("--threshold", type=int, default=None, help="max differing bits of 192")
    p.add_argument("--exact", action="store_true", help="exact-hash duplicates only")
    p.add_argument("--clusters-out", help="write cluster report JSON Lines here")
    p = stage_parser("foodness", "filter non-food images with the configured scorer")
    p.add_argument("--scorer", help="baseline .bin or imported scores .csv")
    p.add_argument("--accept", type=float, default=None, help="keep score >= threshold")
    p.add_argument("--eval", dest="eval_labels", help="human labels CSV to evaluate against")
    p = stage_parser("calibrate", "serve the review API or finalize the stage")
    p.add_argument("--serve", type=int, metavar="PORT", help="run the review server")
    p.add_argument("--ui", help="directory of built review UI assets")
    p.add_argument("--finalize", action="store_true", help="fold decisions and close the stage")
    p = stage_parser("export", "write active images to per-category directories")
    p.add_argument("--out", help="export directory (defaults to config export_dir)")
    p.add_argument("--floor", type=int, default=None, help="flag categories below this size")

    p = sub.add_parser("diversity", help="per-category diversity report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--metric", choices=("jpeg", "embed", "both"), default="both")
    p.add_argument("--sample-cap", type=int, default=2000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--encoder", help="trained encoder checkpoint for the embed metric")

    p = sub.add_parser("verify", help="check manifest accounting invariants")
    p.add_argument("--manifest", required=True)
    return parser


def _load_config(args: argparse.Namespace) -> PipelineConfig:
    if not args.config:
        raise PipelineError(f"command {args.command!r} needs --config")
    return PipelineConfig.from_json(args.config)


def curate_main(argv: list[str] | None = None) -> int:
    args = _build_curate_parser().parse_args(argv)
    try:
        return _curate_dispatch(args)
    except (PipelineError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _curate_dispatch(args: argparse.Namespace) -> int:
    if args.command == "verify":
        violations = verify_accounting(load_manifest(args.manifest))
        for v in violations:
            print(f"violation: {v}")
        print("accounting ok" if not violations else f"{len(violations)} violations")
        return 0 if not violations else 1

    if args.command == "diversity":
        m = load_manifest(args.manifest)
        embedder = None
        if args.metric in ("embed", "both"):
            if not args.encoder:
                print("error: embed metric needs --encoder", file=sys.stderr)
                return 1
            encoder, _, _, _ = sclcore.load_model(args.encoder)
            embedder = diversity_mod.make_encoder_embedder(encoder)
        report = diversity_mod.dataset_report(
            m,
            image_provider=load_record_image,
            embedder=embedder,
            with_jpeg=args.metric in ("jpeg", "both"),
            with_distance=args.metric in ("embed", "both"),
            sample_cap=args.sample_cap,
            seed=args.seed,
        )
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        print(f"wrote {args.out}")
        return 0

    if args.command == "calibrate" and args.serve is not None:
        from .server import make_server, serve_forever

        server = make_server(args.manifest, port=args.serve, ui_dir=args.ui)
        serve_forever(server)
        return 0

    config = _load_config(args)
    if args.command == "dedup":
        if args.exact:
            config.dedup_threshold = 0
        elif args.threshold is not None:
            config.dedup_threshold = args.threshold
    if args.command == "foodness":
        if args.scorer:
            config.foodness_scorer = args.scorer
        if args.accept is not None:
            config.foodness_accept = args.accept
    if args.command == "export":
        if args.out:
            config.export_dir = args.out
        if args.floor is not None:
            config.export_floor = args.floor

    clusters_out = getattr(args, "clusters_out", None)
    report = run_stage(
        config, args.command, args.manifest, force=args.force, clusters_out=clusters_out
    )
    print(
        f"{report.stage}: input {report.input_count}, kept {report.kept_count},"
        f" removed {report.removed_count}"
    )

    if args.command == "foodness" and args.eval_labels:
        from . import foodness as foodness_mod

        scorer = config.foodness_scorer
        loaded = (
            foodness_mod.load_scores_csv(scorer)
            if scorer.endswith(".csv")
            else foodness_mod.load_baseline(scorer)
        )
        labels = foodness_mod.load_labels_csv(args.eval_labels)
        m = load_manifest(args.manifest)
        by_id = {r.id: r for r in m.records}
        result = foodness_mod.evaluate(
            loaded,
            labels,
            threshold=config.foodness_accept,
            image_provider=lambda image_id: load_record_image(by_id[image_id]),
        )
        print(f"foodness accuracy {result['accuracy']:.4f} confusion {result['confusion']}")
    return 0


def _build_scl_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scl", description="Supervised-contrastive recognition core"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run stage 1 (contrastive) or stage 2 (linear probe)")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--config", help="TrainConfig overrides JSON")
    p.add_argument("--data", required=True, help="directory of per-class image folders")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--init", help="stage-1 checkpoint to start stage 2 from")
    p.add_argument("--curve", help="write the per-epoch loss curve CSV here")
    p.add_argument("--size", type=int, default=64, help="training image side")

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p.add_argument("--n", type=int, default=20, help="random instances per check")
    p.add_argument("--seed", type=int, default=7)

    p = sub.add_parser("eval", help="top-k accuracy of a stage-2 checkpoint")
    p.add_argument("--topk", default="1,5", help="comma-separated k values")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--size", type=int, default=64)
    return parser


def _load_image_dir(root: str | Path, side: int) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Per-class subdirectories of JPEG/PNG files -> (samples, labels, class names)."""
    root = Path(root)
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise PipelineError(f"{root} has no class subdirectories")
    samples: list[np.ndarray] = []
    labels: list[int] = []
    for label, cdir in enumerate(class_dirs):
        for path in sorted(cdir.iterdir()):
            if path.suffix.lower() not in (".jpg", ".jpeg", ".png"):
                continue
            img = resize_bilinear(decode_image(path.read_bytes()), side, side)
            p = img.pixels
            if p.shape[2] == 1:
                p = np.repeat(p, 3, axis=2)
            samples.append(p)
            labels.append(label)
    if not samples:
        raise PipelineError(f"{root} contains no images")
    return np.stack(samples), np.asarray(labels), [d.name for d in class_dirs]


def _train_config_from_json(path: str | None) -> sclcore.TrainConfig:
    if path is None:
        return sclcore.TrainConfig()
    with open(path, encoding="utf-8") as f:
        obj = json.load(f)
    if "conv_channels" in obj:
        obj["conv_channels"] = tuple(obj["conv_channels"])
    if "augmentation" in obj:
        obj["augmentation"] = sclcore.AugmentationPair(**{
            **obj["augmentation"],
            "crop_scale": tuple(obj["augmentation"].get("crop_scale", (0.6, 1.0))),
        })
    return sclcore.TrainConfig(**obj)


def _write_curve(path: str, curve: list[float]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "loss"])
        for i, loss in enumerate(curve):
            writer.writerow([i, f"{loss:.10f}"])


def scl_main(argv: list[str] | None = None) -> int:
    args = _build_scl_parser().parse_args(argv)
    try:
        return _scl_dispatch(args)
    except (PipelineError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _scl_dispatch(args: argparse.Namespace) -> int:
    if args.command == "gradcheck":
        from .gradcheck import run_gradcheck

        ok = run_gradcheck(n_instances=args.n, seed=args.seed, verbose=True)
        return 0 if ok else 1

    if args.command == "train":
        cfg = _train_config_from_json(args.config)
        samples, labels, class_names = _load_image_dir(args.data, args.size)
        if args.stage == 1:
            encoder, projector, curve = sclcore.train_stage1(samples, labels, cfg)
            sclcore.save_model(
                args.out, encoder, projector=projector, extra={"classes": class_names}
            )
        else:
            if not args.init:
                print("error: stage 2 needs --init with a stage-1 checkpoint", file=sys.stderr)
                return 1
            encoder, _, _, extra = sclcore.load_model(args.init)
            head, curve = sclcore.train_stage2(
                encoder, samples, labels, cfg, n_classes=len(class_names)
            )
            sclcore.save_model(args.out, encoder, head=head, extra={"classes": class_names})
        if args.curve:
            _write_curve(args.curve, curve)
        print(f"stage {args.stage} done: epochs {len(curve)}, final loss"
              f" {curve[-1]:.6f}" if curve else f"stage {args.stage} done: 0 epochs")
        print(f"wrote {args.out}")
        return 0

    if args.command == "eval":
        encoder, _, head, _ = sclcore.load_model(args.ckpt)
        if head is None:
            print("error: checkpoint has no class head; run stage 2 first", file=sys.stderr)
            return 1
        samples, labels, _ = _load_image_dir(args.data, args.size)
        for k_str in args.topk.split(","):
            k = int(k_str)
            acc = sclcore.evaluate_topk(encoder, head, samples, labels, k)
            print(f"top-{k} accuracy: {acc:.4f}")
        return 0
    return 1
