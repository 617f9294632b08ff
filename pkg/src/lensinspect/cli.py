"""Command-line front end.

Commands: detect, eval, stream, augment, info, gen-weights.
Exit codes: 0 success, 1 usage error, 2 data error, 3 model error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import net
from .augment import AugmentRanges, augment_dataset
from .data import DataError, annotation_to_pixels, load_dataset, load_image
from .decode import DetectionBox
from .metrics import (
    GroundTruthBox,
    evaluate,
    render_confusion_csv,
    render_pr_curve_csv,
    render_report_csv,
    render_report_json,
    render_report_text,
)
from .ops import ShapeError
from .pipeline import (
    Detector,
    RunConfig,
    apply_config_file,
    default_class_names,
    format_detection,
)
from .stream import run_stream
from .weights import ModelError, load_weights, save_weights

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_MODEL = 3

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

log = logging.getLogger(__name__)


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we want exit 1
        raise UsageError(message)


def _add_common(p: Parser, *names) -> None:
    flags = {
        "weights": lambda: p.add_argument("--weights", type=Path, help="weight file"),
        "conf": lambda: p.add_argument("--conf", type=float, default=None,
                                       help="detection confidence threshold"),
        "nms-iou": lambda: p.add_argument("--nms-iou", type=float, default=None,
                                          help="NMS IoU threshold"),
        "eval-iou": lambda: p.add_argument("--eval-iou", type=float, default=None,
                                           help="evaluation IoU threshold"),
        "eval-conf": lambda: p.add_argument("--eval-conf", type=float, default=None,
                                            help="P/R/F1 confidence threshold"),
        "out": lambda: p.add_argument("--out", type=Path, default=None,
                                      help="output directory"),
        "seed": lambda: p.add_argument("--seed", type=int, default=None),
        "fps": lambda: p.add_argument("--fps", type=float, default=None,
                                      help="simulated frame arrival rate"),
        "max-det": lambda: p.add_argument("--max-det", type=int, default=None,
                                          help="max detections per image"),
        "workers": lambda: p.add_argument("--workers", type=int, default=None,
                                          help="parallel image workers"),
        "class-names": lambda: p.add_argument("--class-names", type=str, default=None,
                                              help="comma-separated class names"),
        "config": lambda: p.add_argument("--config", type=Path, default=None,
                                         help="key = value config file"),
    }
    for name in names:
        flags[name]()


def _build_config(args) -> RunConfig:
    config = RunConfig()
    if getattr(args, "config", None):
        try:
            config = apply_config_file(config, args.config)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    overrides = {
        "weights": "weights", "conf": "conf_threshold", "nms_iou": "nms_iou",
        "eval_iou": "eval_iou", "eval_conf": "eval_conf", "out": "out_dir",
        "seed": "seed", "fps": "target_fps", "max_det": "max_detections",
        "workers": "workers",
    }
    for arg_name, attr in overrides.items():
        value = getattr(args, arg_name, None)
        if value is not None:
            setattr(config, attr, value)
    names = getattr(args, "class_names", None)
    if names:
        config.class_names = [c.strip() for c in names.split(",") if c.strip()]
    if getattr(args, "oracle_inject", False):
        config.oracle_inject = True
    try:
        config.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return config


def _load_detector(config: RunConfig) -> Detector:
    if config.weights is None:
        raise UsageError("--weights is required for this command")
    return Detector.load(
        config.weights, class_names=config.class_names,
        conf_threshold=config.conf_threshold, nms_iou=config.nms_iou,
        max_detections=config.max_detections,
    )


def _out_dir(config: RunConfig) -> Path:
    try:
        config.out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {config.out_dir}: {exc}") from exc
    return config.out_dir


# ---------------------------------------------------------------- commands

def cmd_detect(args) -> int:
    config = _build_config(args)
    detector = _load_detector(config)
    image = load_image(args.image)
    detections, _ = detector.detect(image)
    print(f"{args.image}: {len(detections)} detections")
    lines = []
    for box in detections:
        name = detector.class_names[box.class_id]
        line = format_detection(Path(args.image).name, name, box)
        print(" ".join(line.split()[1:]))
        lines.append(line)
    out = _out_dir(config)
    (out / "detections.txt").write_text("".join(line + "\n" for line in lines),
                                        encoding="utf-8")
    return EXIT_OK


def _eval_one(record, detector, config, class_names):
    image = load_image(record.image)
    h, w = image.shape[:2]
    gts = [
        GroundTruthBox(ann.class_id, *annotation_to_pixels(ann, w, h))
        for ann in record.annotations
    ]
    if config.oracle_inject:
        preds = [DetectionBox(g.x1, g.y1, g.x2, g.y2, g.class_id, 1.0) for g in gts]
    else:
        preds, _ = detector.detect(image)
    return preds, gts


def cmd_eval(args) -> int:
    config = _build_config(args)
    manifest = load_dataset(args.manifest)
    if args.split not in manifest.splits:
        raise DataError(
            f"manifest has no split {args.split!r} "
            f"(available: {', '.join(manifest.splits)})"
        )
    records = manifest.splits[args.split]
    if not records:
        raise DataError(f"split {args.split!r} is empty")
    class_names = config.class_names or manifest.class_names
    detector = None
    if not config.oracle_inject:
        detector = _load_detector(config)
        class_names = detector.class_names

    failures = []

    def run_one(indexed):
        idx, record = indexed
        try:
            return _eval_one(record, detector, config, class_names)
        except DataError as exc:
            failures.append(f"{record.image}: {exc}")
            return None

    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        results = list(pool.map(run_one, enumerate(records)))
    kept = [r for r in results if r is not None]
    if not kept:
        raise DataError(f"no evaluable images in split {args.split!r}")
    preds = [r[0] for r in kept]
    gts = [r[1] for r in kept]
    report = evaluate(preds, gts, class_names,
                      conf_threshold=config.eval_conf, iou_threshold=config.eval_iou)

    out = _out_dir(config)
    text = render_report_text(report)
    (out / "metrics.txt").write_text(text, encoding="utf-8")
    (out / "metrics.csv").write_text(render_report_csv(report), encoding="utf-8")
    (out / "metrics.json").write_text(render_report_json(report), encoding="utf-8")
    (out / "pr_curve.csv").write_text(render_pr_curve_csv(report), encoding="utf-8")
    (out / "confusion_matrix.csv").write_text(render_confusion_csv(report),
                                              encoding="utf-8")
    det_lines = []
    for (img_preds, _), record in zip(kept, [r for r, k in zip(records, results) if k is not None]):
        for box in img_preds:
            det_lines.append(format_detection(record.image.name,
                                              class_names[box.class_id], box))
    (out / "detections.txt").write_text(
        "".join(line + "\n" for line in det_lines), encoding="utf-8")

    print(text, end="")
    print(f"evaluated {len(kept)} images "
          f"({len(failures)} failed), outputs in {out}")
    for failure in failures:
        log.warning("eval failure: %s", failure)
    return EXIT_OK


def cmd_stream(args) -> int:
    config = _build_config(args)
    detector = _load_detector(config)
    frames_dir = Path(args.frames_dir)
    if not frames_dir.is_dir():
        raise DataError(f"{frames_dir} is not a directory")
    paths = sorted(p for p in frames_dir.iterdir()
                   if p.suffix.lower() in IMAGE_SUFFIXES)
    if not paths:
        raise DataError(f"no frames ({'/'.join(IMAGE_SUFFIXES)}) in {frames_dir}")
    summary = run_stream(paths, detector, target_fps=config.target_fps)
    out = _out_dir(config)
    (out / "timings.csv").write_text(summary.timings_csv(), encoding="utf-8")
    print(f"frames: {summary.frames_total} arrived, {summary.frames_processed} "
          f"processed, {summary.frames_dropped} dropped, {summary.frames_failed} failed")
    print(summary.format_stage_line())
    print(f"p50: preprocess {summary.p50[0]:.1f}ms, inference {summary.p50[1]:.1f}ms, "
          f"postprocess {summary.p50[2]:.1f}ms")
    print(f"p95: preprocess {summary.p95[0]:.1f}ms, inference {summary.p95[1]:.1f}ms, "
          f"postprocess {summary.p95[2]:.1f}ms")
    print(f"achieved {summary.mean.fps:.2f} FPS over {summary.wall_seconds:.2f}s "
          f"(target {config.target_fps:g})")
    for failure in summary.failures:
        log.warning("stream failure: %s", failure)
    return EXIT_OK


def cmd_augment(args) -> int:
    config = _build_config(args)
    manifest = load_dataset(args.manifest)
    ranges = AugmentRanges(
        max_rotation=args.max_rotation,
        flip_probability=args.flip_prob,
        max_shift=args.max_shift,
        blur_probability=args.blur_prob,
        blur_sigma=(args.blur_sigma_min, args.blur_sigma_max),
    )
    out = _out_dir(config)
    _, stats = augment_dataset(manifest, args.split, out, multiplier=args.multiplier,
                               ranges=ranges, seed=config.seed)
    print(f"augmented {stats.images_in} images x{args.multiplier} -> "
          f"{stats.images_out} outputs in {out}")
    print(f"boxes: {stats.boxes_in} in, {stats.boxes_out} out, "
          f"{stats.boxes_dropped} dropped by clipping")
    return EXIT_OK


def cmd_info(args) -> int:
    config = _build_config(args)
    if config.weights is None:
        raise UsageError("--weights is required for info")
    store = load_weights(config.weights)
    graph = net.build_graph(store.num_classes, store.reg_max)
    names = config.class_names or default_class_names(store.num_classes)
    print(f"weights: {config.weights}")
    print(f"checksum: {store.checksum():#010x}")
    print(f"classes: {store.num_classes} ({', '.join(names)})")
    print(f"reg_max: {store.reg_max}")
    print(f"fused on disk: {'yes' if store.fused else 'no'}")
    print(f"parameters: {store.parameter_count()}")
    print(f"layers (unfused): {net.count_layers(graph, fused=False)}")
    print(f"layers (fused): {net.count_layers(graph, fused=True)}")
    return EXIT_OK


def cmd_gen_weights(args) -> int:
    config = _build_config(args)
    graph = net.build_graph(args.num_classes, args.reg_max)
    store = net.gen_weights(graph, seed=config.seed)
    out_path = Path(args.out_file)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_weights(store, out_path)
    print(f"wrote {out_path}: {store.parameter_count()} parameters, "
          f"num_classes={args.num_classes}, reg_max={args.reg_max}, "
          f"seed={config.seed}, checksum={store.checksum():#010x}")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> Parser:
    parser = Parser(prog="lensinspect",
                    description="Optical-lens defect inspection toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("detect", help="detect objects in one image")
    p.add_argument("image", type=Path)
    _add_common(p, "weights", "conf", "nms-iou", "max-det", "out", "seed",
                "class-names", "config")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="evaluate detection quality over a split")
    p.add_argument("manifest", type=Path)
    p.add_argument("--split", default="val")
    p.add_argument("--oracle-inject", action="store_true",
                   help="score the ground truth against itself (metrics self-check)")
    _add_common(p, "weights", "conf", "nms-iou", "eval-iou", "eval-conf",
                "max-det", "out", "seed", "workers", "class-names", "config")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stream", help="simulate a conveyor feed over a frame directory")
    p.add_argument("frames_dir", type=Path)
    _add_common(p, "weights", "conf", "nms-iou", "max-det", "out", "seed",
                "fps", "class-names", "config")
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("augment", help="write an augmented copy of a dataset split")
    p.add_argument("manifest", type=Path)
    p.add_argument("--split", default="train")
    p.add_argument("--multiplier", type=int, default=3)
    p.add_argument("--max-rotation", type=float, default=15.0)
    p.add_argument("--flip-prob", type=float, default=0.5)
    p.add_argument("--max-shift", type=float, default=0.2)
    p.add_argument("--blur-prob", type=float, default=0.3)
    p.add_argument("--blur-sigma-min", type=float, default=0.5)
    p.add_argument("--blur-sigma-max", type=float, default=1.5)
    _add_common(p, "out", "seed", "config")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("info", help="summarize a weight file")
    _add_common(p, "weights", "class-names", "config")
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("gen-weights", help="write seeded synthetic weights")
    p.add_argument("out_file", type=Path)
    p.add_argument("--num-classes", type=int, default=2)
    p.add_argument("--reg-max", type=int, default=16)
    _add_common(p, "seed", "config")
    p.set_defaults(func=cmd_gen_weights)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ModelError, ShapeError) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
