"""Shared fixture builders: synthetic pyramids, scenes, and datasets."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import yaml

from lensinspect.data import save_image, save_labels, Annotation
from lensinspect.decode import DetectionBox
from lensinspect.metrics import GroundTruthBox

STRIDES = (8, 16, 32)


def blank_pyramid_maps(num_classes=2, reg_max=16, base_logit=-40.0, size=640):
    """Head maps whose anchors all score ~0 (silent network)."""
    ch = 4 * reg_max + num_classes
    return [
        np.full((1, ch, size // s, size // s), base_logit, dtype=np.float32)
        for s in STRIDES
    ]


def encode_side(distance: float, reg_max: int, hot=10.0, cold=-40.0) -> np.ndarray:
    """Logits whose softmax expectation is ~`distance` (two-hot encoding)."""
    logits = np.full(reg_max, cold, dtype=np.float32)
    k = int(math.floor(distance))
    frac = distance - k
    if frac < 1e-9 or k == reg_max - 1:
        logits[k] = hot
    else:
        logits[k] = hot + math.log(1.0 - frac)
        logits[k + 1] = hot + math.log(frac)
    return logits


def encode_box_into_maps(maps, scale_idx, cell, distances, class_id, confidence,
                         reg_max=16):
    """Write one (anchor, class) detection into blank head maps, in place.

    `cell` is (row, col) on the chosen scale; `distances` are the
    (l, t, r, b) grid-unit distances from the cell center.
    """
    i, j = cell
    for side, d in enumerate(distances):
        maps[scale_idx][0, side * reg_max:(side + 1) * reg_max, i, j] = \
            encode_side(d, reg_max)
    cls_logit = math.log(confidence / (1.0 - confidence))
    maps[scale_idx][0, 4 * reg_max + class_id, i, j] = cls_logit


def expected_box(scale_idx, cell, distances):
    """Letterbox-space corner box implied by a cell + distance encoding."""
    stride = STRIDES[scale_idx]
    i, j = cell
    cx, cy = j + 0.5, i + 0.5
    l, t, r, b = distances
    return ((cx - l) * stride, (cy - t) * stride, (cx + r) * stride, (cy + b) * stride)


def random_boxes(rng, count, num_classes=2, span=100.0, min_size=2.0):
    """Random detection boxes with distinct-ish confidences."""
    boxes = []
    for _ in range(count):
        x1 = float(rng.uniform(0, span - min_size))
        y1 = float(rng.uniform(0, span - min_size))
        w = float(rng.uniform(min_size, span / 2))
        h = float(rng.uniform(min_size, span / 2))
        boxes.append(DetectionBox(
            x1, y1, x1 + w, y1 + h,
            class_id=int(rng.integers(num_classes)),
            confidence=float(np.round(rng.uniform(0.05, 0.99), 3)),
        ))
    return boxes


def random_gt_boxes(rng, count, num_classes=2, span=100.0, min_size=2.0):
    return [
        GroundTruthBox(b.class_id, b.x1, b.y1, b.x2, b.y2)
        for b in random_boxes(rng, count, num_classes, span, min_size)
    ]


def make_synthetic_dataset(root, num_images, seed=0, split="val",
                           image_size=(320, 240),
                           class_names=("defect", "lens")) -> Path:
    """Tiny lens-and-defect dataset: images, labels, and a manifest."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    w, h = image_size
    entries = []
    for idx in range(num_images):
        img = rng.integers(30, 60, size=(h, w, 3), dtype=np.uint8)
        annotations = []
        # one "lens": a large bright rectangle
        lw, lh = int(w * 0.6), int(h * 0.6)
        lx = int(rng.integers(0, w - lw))
        ly = int(rng.integers(0, h - lh))
        img[ly:ly + lh, lx:lx + lw] = 200
        annotations.append(Annotation(
            1, (lx + lw / 2) / w, (ly + lh / 2) / h, lw / w, lh / h))
        # zero to three "defects": small dark patches inside the lens
        for _ in range(int(rng.integers(0, 4))):
            dw, dh = int(rng.integers(6, 20)), int(rng.integers(6, 20))
            dx = int(rng.integers(lx, lx + lw - dw))
            dy = int(rng.integers(ly, ly + lh - dh))
            img[dy:dy + dh, dx:dx + dw] = 10
            annotations.append(Annotation(
                0, (dx + dw / 2) / w, (dy + dh / 2) / h, dw / w, dh / h))
        name = f"img_{idx:03d}.png"
        save_image(root / "images" / name, img)
        save_labels(root / "labels" / f"img_{idx:03d}.txt", annotations)
        entries.append(f"images/{name}")
    manifest_path = root / "dataset.yaml"
    manifest_path.write_text(yaml.safe_dump({
        "classes": list(class_names),
        "splits": {split: entries},
    }), encoding="utf-8")
    return manifest_path
