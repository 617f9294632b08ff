"""Single-frame detection pipeline and run configuration."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import net
from .data import DataError, letterbox, to_network_input
from .decode import DetectionBox, postprocess
from .weights import ModelError, WeightStore, load_weights


def default_class_names(num_classes: int) -> list[str]:
    if num_classes == 2:
        return ["defect", "lens"]
    return [f"class{i}" for i in range(num_classes)]


@dataclass
class RunConfig:
    """Defaults for every command; a config file and flags may override."""

    weights: Path | None = None
    class_names: list[str] | None = None
    conf_threshold: float = 0.25
    nms_iou: float = 0.45
    eval_iou: float = 0.5
    eval_conf: float = 0.5
    max_detections: int = 300
    input_size: int = 640
    out_dir: Path = Path("runs")
    seed: int = 0
    target_fps: float = 10.0
    workers: int = 1
    oracle_inject: bool = False

    def validate(self) -> None:
        for name in ("conf_threshold", "nms_iou", "eval_iou", "eval_conf"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if self.max_detections < 1:
            raise ValueError(f"max_detections must be >= 1, got {self.max_detections}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.target_fps <= 0:
            raise ValueError(f"target_fps must be positive, got {self.target_fps}")


# config-file key -> (RunConfig field, parser)
CONFIG_KEYS = {
    "weights": ("weights", Path),
    "class_names": ("class_names", lambda s: [c.strip() for c in s.split(",") if c.strip()]),
    "conf": ("conf_threshold", float),
    "nms_iou": ("nms_iou", float),
    "eval_iou": ("eval_iou", float),
    "eval_conf": ("eval_conf", float),
    "max_det": ("max_detections", int),
    "out": ("out_dir", Path),
    "seed": ("seed", int),
    "fps": ("target_fps", float),
    "workers": ("workers", int),
}


def apply_config_file(config: RunConfig, path) -> RunConfig:
    """Read ``key = value`` lines (# comments allowed) onto a RunConfig."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in CONFIG_KEYS:
            raise ValueError(
                f"{path}:{lineno}: unknown config key {key!r} "
                f"(known: {', '.join(sorted(CONFIG_KEYS))})"
            )
        attr, parse = CONFIG_KEYS[key]
        try:
            setattr(config, attr, parse(raw))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    return config


class Detector:
    """Loaded network plus thresholds; immutable and thread-safe after init."""

    def __init__(self, graph: net.NetGraph, store: WeightStore,
                 class_names: list[str] | None = None, conf_threshold: float = 0.25,
                 nms_iou: float = 0.45, max_detections: int = 300):
        net.validate_store(graph, store)
        self.graph = graph
        self.store = store
        self.class_names = list(class_names) if class_names else \
            default_class_names(graph.num_classes)
        if len(self.class_names) != graph.num_classes:
            raise ModelError(
                f"{len(self.class_names)} class names for a "
                f"{graph.num_classes}-class model"
            )
        self.conf_threshold = conf_threshold
        self.nms_iou = nms_iou
        self.max_detections = max_detections

    @classmethod
    def load(cls, weights_path, class_names=None, conf_threshold: float = 0.25,
             nms_iou: float = 0.45, max_detections: int = 300,
             fuse: bool = True) -> "Detector":
        try:
            store = load_weights(weights_path)
        except OSError as exc:
            raise ModelError(f"cannot read weights {weights_path}: {exc}") from exc
        graph = net.build_graph(store.num_classes, store.reg_max)
        if fuse and not store.fused:
            graph, store = net.fuse(graph, store)
        return cls(graph, store, class_names, conf_threshold, nms_iou, max_detections)

    def preprocess(self, image: np.ndarray):
        """RGB image -> (network input tensor, letterbox transform)."""
        boxed, transform = letterbox(image, target=net.INPUT_SIZE)
        return to_network_input(boxed), transform

    def infer(self, x: np.ndarray) -> net.FeaturePyramid:
        return net.forward(self.graph, self.store, x)

    def postprocess(self, pyramid: net.FeaturePyramid, transform) -> list[DetectionBox]:
        return postprocess(
            pyramid, transform, conf_threshold=self.conf_threshold,
            iou_threshold=self.nms_iou, num_classes=self.graph.num_classes,
            reg_max=self.graph.reg_max, max_det=self.max_detections,
        )

    def detect(self, image: np.ndarray):
        """Run all three stages; returns (detections, (pre_ms, inf_ms, post_ms))."""
        t0 = time.perf_counter()
        x, transform = self.preprocess(image)
        t1 = time.perf_counter()
        pyramid = self.infer(x)
        t2 = time.perf_counter()
        detections = self.postprocess(pyramid, transform)
        t3 = time.perf_counter()
        return detections, ((t1 - t0) * 1e3, (t2 - t1) * 1e3, (t3 - t2) * 1e3)


def format_detection(image_name: str, class_name: str, box: DetectionBox) -> str:
    """One canonical detections-file line (fixed precision, byte-stable)."""
    return (f"{image_name} {class_name} {box.confidence:.6f} "
            f"{box.x1:.2f} {box.y1:.2f} {box.x2:.2f} {box.y2:.2f}")
