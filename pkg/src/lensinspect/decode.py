"""Raw head outputs to final boxes.

Covers the anchor-free grid, per-side distance expectation over the
discrete bin distribution, sigmoid class scoring with confidence
filtering, greedy per-class NMS, and inversion of the letterbox mapping
back to original-image pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import LetterboxTransform
from .net import STRIDES, FeaturePyramid


@dataclass(frozen=True)
class AnchorPoint:
    """Grid-cell center in cell units plus the cell's pixel stride."""

    cx: float
    cy: float
    stride: int


@dataclass(frozen=True)
class DetectionBox:
    """One predicted object: corner-form pixels, class id, confidence."""

    x1: float
    y1: float
    x2: float
    y2: float
    class_id: int
    confidence: float

    def coords(self) -> tuple[float, float, float, float]:
        return self.x1, self.y1, self.x2, self.y2


def make_anchors(grid_sizes) -> list[AnchorPoint]:
    """Cell-center anchors, row-major per scale, scales in stride order."""
    strides = [s for _, _, s in grid_sizes]
    if strides != sorted(strides) or len(set(strides)) != len(strides):
        raise ValueError(f"grid strides must be strictly increasing, got {strides}")
    anchors = []
    for h, w, stride in grid_sizes:
        for i in range(h):
            for j in range(w):
                anchors.append(AnchorPoint(j + 0.5, i + 0.5, stride))
    return anchors


def _expectation(logits: np.ndarray) -> np.ndarray:
    """Softmax-weighted bin index over the last axis, in float64."""
    z = logits.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    w = np.exp(z)
    w /= w.sum(axis=-1, keepdims=True)
    bins = np.arange(logits.shape[-1], dtype=np.float64)
    return w @ bins


def dfl_expectation(logits, reg_max: int) -> tuple[float, float, float, float]:
    """Decode 4*reg_max side logits into (l, t, r, b) grid-unit distances."""
    arr = np.asarray(logits, dtype=np.float64).reshape(-1)
    if arr.shape[0] != 4 * reg_max:
        raise ValueError(
            f"expected {4 * reg_max} logits (4 sides x reg_max={reg_max}), "
            f"got {arr.shape[0]}"
        )
    sides = _expectation(arr.reshape(4, reg_max))
    return tuple(float(v) for v in sides)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x.astype(np.float64)))


def decode(pyramid: FeaturePyramid, conf_threshold: float, num_classes: int,
           reg_max: int) -> list[DetectionBox]:
    """Per-anchor boxes and class scores; one detection per (anchor, class)
    whose sigmoid score reaches the threshold. Boxes are in network-input
    (letterbox) pixels, unclipped, in anchor-major order."""
    if not 0.0 <= conf_threshold <= 1.0:
        raise ValueError(f"conf_threshold must be in [0, 1], got {conf_threshold}")
    detections: list[DetectionBox] = []
    for feat, stride in zip(pyramid.maps(), STRIDES):
        n, ch, h, w = feat.shape
        if n != 1:
            raise ValueError(f"decode expects batch size 1, got {n}")
        if ch != 4 * reg_max + num_classes:
            raise ValueError(
                f"feature map has {ch} channels, expected 4*{reg_max}+{num_classes}"
            )
        flat = feat[0].reshape(ch, h * w).T  # (anchors, ch), row-major anchors
        dists = _expectation(flat[:, : 4 * reg_max].reshape(-1, 4, reg_max))
        jj, ii = np.meshgrid(np.arange(w), np.arange(h))
        cx = jj.reshape(-1) + 0.5
        cy = ii.reshape(-1) + 0.5
        x1 = (cx - dists[:, 0]) * stride
        y1 = (cy - dists[:, 1]) * stride
        x2 = (cx + dists[:, 2]) * stride
        y2 = (cy + dists[:, 3]) * stride
        scores = _sigmoid(flat[:, 4 * reg_max:])
        for ai, ci in np.argwhere(scores >= conf_threshold):
            detections.append(DetectionBox(
                float(x1[ai]), float(y1[ai]), float(x2[ai]), float(y2[ai]),
                class_id=int(ci), confidence=float(scores[ai, ci]),
            ))
    return detections


def _sort_key(b: DetectionBox):
    return (-b.confidence, b.class_id, b.x1, b.y1, b.x2, b.y2)


def nms(boxes: list[DetectionBox], iou_threshold: float,
        max_det: int | None = None) -> list[DetectionBox]:
    """Greedy per-class NMS.

    Repeatedly keeps the best remaining box and suppresses same-class
    boxes overlapping it with IoU strictly above the threshold. "Best"
    is highest confidence, ties broken by smaller class id then
    lexicographic coordinates, so the result is deterministic. Output is
    sorted by descending confidence.
    """
    if not boxes:
        return []
    ordered = sorted(boxes, key=_sort_key)
    x1 = np.array([b.x1 for b in ordered])
    y1 = np.array([b.y1 for b in ordered])
    x2 = np.array([b.x2 for b in ordered])
    y2 = np.array([b.y2 for b in ordered])
    cls = np.array([b.class_id for b in ordered])
    areas = np.maximum(x2 - x1, 0.0) * np.maximum(y2 - y1, 0.0)
    n = len(ordered)
    alive = np.ones(n, dtype=bool)
    kept: list[int] = []
    for i in range(n):
        if not alive[i]:
            continue
        kept.append(i)
        if max_det is not None and len(kept) >= max_det:
            break
        rest = alive.copy()
        rest[: i + 1] = False
        rest &= cls == cls[i]
        if not rest.any():
            continue
        idx = np.flatnonzero(rest)
        iw = np.minimum(x2[i], x2[idx]) - np.maximum(x1[i], x1[idx])
        ih = np.minimum(y2[i], y2[idx]) - np.maximum(y1[i], y1[idx])
        inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
        union = areas[i] + areas[idx] - inter
        with np.errstate(invalid="ignore", divide="ignore"):
            iou = np.where(union > 0, inter / union, 0.0)
        alive[idx[iou > iou_threshold]] = False
    return [ordered[i] for i in kept]


def unletterbox(boxes: list[DetectionBox], transform: LetterboxTransform,
                orig_size: tuple[int, int] | None = None) -> list[DetectionBox]:
    """Map letterbox-space boxes back to original pixels, clipped to bounds.

    Boxes that fall entirely outside the original image are dropped.
    """
    ow, oh = orig_size if orig_size is not None else transform.original
    out: list[DetectionBox] = []
    for b in boxes:
        x1 = min(max((b.x1 - transform.pad_left) / transform.scale, 0.0), float(ow))
        y1 = min(max((b.y1 - transform.pad_top) / transform.scale, 0.0), float(oh))
        x2 = min(max((b.x2 - transform.pad_left) / transform.scale, 0.0), float(ow))
        y2 = min(max((b.y2 - transform.pad_top) / transform.scale, 0.0), float(oh))
        if x2 - x1 <= 0 or y2 - y1 <= 0:
            continue
        out.append(replace(b, x1=x1, y1=y1, x2=x2, y2=y2))
    return out


def postprocess(pyramid: FeaturePyramid, transform: LetterboxTransform,
                conf_threshold: float, iou_threshold: float, num_classes: int,
                reg_max: int, max_det: int = 300,
                pre_nms_limit: int = 3000) -> list[DetectionBox]:
    """decode -> NMS -> cap -> unletterbox, the full postprocessing chain."""
    raw = decode(pyramid, conf_threshold, num_classes, reg_max)
    if len(raw) > pre_nms_limit:
        raw = sorted(raw, key=_sort_key)[:pre_nms_limit]
    kept = nms(raw, iou_threshold, max_det=max_det)
    return unletterbox(kept, transform)
