"""Bounding-box-aware offline augmentations.

Rotation about the image center (positive angle = counterclockwise on
screen), horizontal/vertical flips, fractional x/y shifts, and separable
Gaussian blur. Pixel warps use bilinear interpolation with black fill;
boxes are transformed analytically, clipped, and dropped when less than
a survival fraction of their original area remains visible.

``augment_dataset`` scales a dataset offline: a fixed number of variants
per source image, parameters sampled from per-image seeded generators so
output is reproducible for a given master seed regardless of ordering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
import yaml

from .data import (
    Annotation,
    DataError,
    DatasetManifest,
    ImageRecord,
    load_image,
    save_image,
    save_labels,
)

DEFAULT_SURVIVAL = 0.25  # minimum visible fraction of a box's original area

FLIP_CHOICES = ("none", "horizontal", "vertical")


@dataclass(frozen=True)
class AugmentSpec:
    """Concrete parameters for one augmented variant."""

    rotation_degrees: float = 0.0
    flip: str = "none"
    shift: tuple[float, float] = (0.0, 0.0)
    blur_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.flip not in FLIP_CHOICES:
            raise ValueError(f"flip must be one of {FLIP_CHOICES}, got {self.flip!r}")
        if abs(self.shift[0]) > 0.5 or abs(self.shift[1]) > 0.5:
            raise ValueError(f"|shift| components must be <= 0.5, got {self.shift}")
        if self.blur_sigma < 0:
            raise ValueError(f"blur_sigma must be >= 0, got {self.blur_sigma}")


@dataclass(frozen=True)
class AugmentRanges:
    """Sampling ranges for augment_dataset's per-variant parameters."""

    max_rotation: float = 15.0
    flip_probability: float = 0.5
    max_shift: float = 0.2
    blur_probability: float = 0.3
    blur_sigma: tuple[float, float] = (0.5, 1.5)


@dataclass
class AugmentStats:
    images_in: int = 0
    images_out: int = 0
    boxes_in: int = 0
    boxes_out: int = 0
    boxes_dropped: int = 0
    outputs: list[str] = field(default_factory=list)


def _clip_box_norm(x1, y1, x2, y2):
    return max(0.0, x1), max(0.0, y1), min(1.0, x2), min(1.0, y2)


def _box_from_corners(class_id, x1, y1, x2, y2) -> Annotation:
    return Annotation(class_id, (x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)


def rotation_matrix(angle_degrees: float, width: int, height: int) -> np.ndarray:
    """2x3 affine rotating about the image center, CCW-positive on screen."""
    theta = math.radians(angle_degrees)
    ca, sa = math.cos(theta), math.sin(theta)
    cx, cy = width / 2.0, height / 2.0
    return np.array([
        [ca, sa, (1 - ca) * cx - sa * cy],
        [-sa, ca, sa * cx + (1 - ca) * cy],
    ], dtype=np.float64)


def rotate(image: np.ndarray, annotations: list[Annotation], angle_degrees: float,
           survival: float = DEFAULT_SURVIVAL) -> tuple[np.ndarray, list[Annotation]]:
    """Rotate image and boxes about the center; canvas size is preserved.

    Each box becomes the axis-aligned hull of its four rotated corners,
    clipped to the frame; boxes keeping less than `survival` of their
    original area are dropped.
    """
    if not -180.0 <= angle_degrees <= 180.0:
        raise ValueError(f"angle must be in [-180, 180], got {angle_degrees}")
    h, w = image.shape[:2]
    m = rotation_matrix(angle_degrees, w, h)
    rotated = cv2.warpAffine(image, m, (w, h), flags=cv2.INTER_LINEAR,
                             borderMode=cv2.BORDER_CONSTANT, borderValue=(0, 0, 0))
    out: list[Annotation] = []
    for ann in annotations:
        nx1, ny1, nx2, ny2 = ann.corners()
        corners = np.array([
            [nx1 * w, ny1 * h], [nx2 * w, ny1 * h],
            [nx1 * w, ny2 * h], [nx2 * w, ny2 * h],
        ])
        moved = corners @ m[:, :2].T + m[:, 2]
        x1, y1 = moved[:, 0].min() / w, moved[:, 1].min() / h
        x2, y2 = moved[:, 0].max() / w, moved[:, 1].max() / h
        cx1, cy1, cx2, cy2 = _clip_box_norm(x1, y1, x2, y2)
        if cx2 - cx1 <= 0 or cy2 - cy1 <= 0:
            continue
        if (cx2 - cx1) * (cy2 - cy1) < survival * ann.w * ann.h:
            continue
        out.append(_box_from_corners(ann.class_id, cx1, cy1, cx2, cy2))
    return rotated, out


def flip(image: np.ndarray, annotations: list[Annotation], axis: str
         ) -> tuple[np.ndarray, list[Annotation]]:
    """Mirror pixels and boxes: horizontal maps cx to 1-cx, vertical cy to 1-cy."""
    if axis == "horizontal":
        flipped = np.ascontiguousarray(image[:, ::-1])
        boxes = [Annotation(a.class_id, 1.0 - a.cx, a.cy, a.w, a.h)
                 for a in annotations]
    elif axis == "vertical":
        flipped = np.ascontiguousarray(image[::-1])
        boxes = [Annotation(a.class_id, a.cx, 1.0 - a.cy, a.w, a.h)
                 for a in annotations]
    else:
        raise ValueError(f"axis must be 'horizontal' or 'vertical', got {axis!r}")
    return flipped, boxes


def shift(image: np.ndarray, annotations: list[Annotation], sx: float, sy: float,
          survival: float = DEFAULT_SURVIVAL) -> tuple[np.ndarray, list[Annotation]]:
    """Translate by (sx*width, sy*height) pixels with black fill.

    Boxes translate by (sx, sy) in normalized units and are clipped;
    those keeping less than `survival` of their area are dropped.
    """
    if abs(sx) > 0.5 or abs(sy) > 0.5:
        raise ValueError(f"|shift| components must be <= 0.5, got ({sx}, {sy})")
    h, w = image.shape[:2]
    m = np.array([[1.0, 0.0, sx * w], [0.0, 1.0, sy * h]], dtype=np.float64)
    moved = cv2.warpAffine(image, m, (w, h), flags=cv2.INTER_LINEAR,
                           borderMode=cv2.BORDER_CONSTANT, borderValue=(0, 0, 0))
    out: list[Annotation] = []
    for ann in annotations:
        x1, y1, x2, y2 = ann.corners()
        x1, y1, x2, y2 = x1 + sx, y1 + sy, x2 + sx, y2 + sy
        if x1 >= 0 and y1 >= 0 and x2 <= 1 and y2 <= 1:
            # pure translation: width and height carry over exactly
            out.append(Annotation(ann.class_id, ann.cx + sx, ann.cy + sy, ann.w, ann.h))
            continue
        cx1, cy1, cx2, cy2 = _clip_box_norm(x1, y1, x2, y2)
        if cx2 - cx1 <= 0 or cy2 - cy1 <= 0:
            continue
        if (cx2 - cx1) * (cy2 - cy1) < survival * ann.w * ann.h:
            continue
        out.append(_box_from_corners(ann.class_id, cx1, cy1, cx2, cy2))
    return moved, out


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps of length 2*ceil(3*sigma)+1."""
    radius = int(math.ceil(3.0 * sigma))
    ax = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (ax / sigma) ** 2)
    return kernel / kernel.sum()


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflected borders; sigma 0 is identity."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return image.copy()
    kernel = gaussian_kernel(sigma)
    radius = len(kernel) // 2
    acc = image.astype(np.float64)
    squeeze = acc.ndim == 2
    if squeeze:
        acc = acc[:, :, None]
    for axis in (1, 0):  # horizontal pass, then vertical
        padded = np.pad(acc, [(0, 0) if a != axis else (radius, radius)
                              for a in range(2)] + [(0, 0)], mode="reflect")
        out = np.zeros_like(acc)
        for t, k in enumerate(kernel):
            if axis == 1:
                out += k * padded[:, t:t + acc.shape[1], :]
            else:
                out += k * padded[t:t + acc.shape[0], :, :]
        acc = out
    if squeeze:
        acc = acc[:, :, 0]
    if np.issubdtype(image.dtype, np.integer):
        return np.clip(np.rint(acc), 0, 255).astype(image.dtype)
    return acc.astype(image.dtype)


def apply_spec(image: np.ndarray, annotations: list[Annotation], spec: AugmentSpec,
               survival: float = DEFAULT_SURVIVAL) -> tuple[np.ndarray, list[Annotation]]:
    """Apply one variant's transforms in rotate -> flip -> shift -> blur order."""
    img, anns = image, list(annotations)
    if spec.rotation_degrees:
        img, anns = rotate(img, anns, spec.rotation_degrees, survival)
    if spec.flip != "none":
        img, anns = flip(img, anns, spec.flip)
    if spec.shift != (0.0, 0.0):
        img, anns = shift(img, anns, spec.shift[0], spec.shift[1], survival)
    if spec.blur_sigma > 0:
        img = gaussian_blur(img, spec.blur_sigma)
    return img, anns


def sample_spec(rng: np.random.Generator, ranges: AugmentRanges, seed: int = 0
                ) -> AugmentSpec:
    """Draw one variant's parameters from the configured ranges."""
    rotation = float(rng.uniform(-ranges.max_rotation, ranges.max_rotation))
    flip_axis = "none"
    if rng.random() < ranges.flip_probability:
        flip_axis = "horizontal" if rng.random() < 0.5 else "vertical"
    sx = float(rng.uniform(-ranges.max_shift, ranges.max_shift))
    sy = float(rng.uniform(-ranges.max_shift, ranges.max_shift))
    sigma = 0.0
    if rng.random() < ranges.blur_probability:
        sigma = float(rng.uniform(*ranges.blur_sigma))
    return AugmentSpec(rotation_degrees=rotation, flip=flip_axis, shift=(sx, sy),
                       blur_sigma=sigma, seed=seed)


def augment_dataset(manifest: DatasetManifest, split: str, out_dir,
                    multiplier: int, ranges: AugmentRanges | None = None,
                    specs: list[AugmentSpec] | None = None, seed: int = 0,
                    survival: float = DEFAULT_SURVIVAL
                    ) -> tuple[DatasetManifest, AugmentStats]:
    """Write `multiplier` augmented variants of every image in the split.

    Parameters are sampled per output from a generator seeded with
    (seed, image index, variant index), so results are byte-identical
    for a fixed seed. Passing explicit `specs` pins the parameters
    instead (cycled per variant index). Returns the new manifest and
    counting stats.
    """
    if multiplier < 1:
        raise ValueError(f"multiplier must be >= 1, got {multiplier}")
    if split not in manifest.splits:
        raise DataError(f"manifest has no split {split!r}")
    records = manifest.splits[split]
    out_dir = Path(out_dir)
    try:
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
        (out_dir / "labels").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out_dir}: {exc}") from exc
    ranges = ranges or AugmentRanges()
    stats = AugmentStats(images_in=len(records))
    new_records: list[ImageRecord] = []
    entries: list[str] = []
    for img_idx, record in enumerate(records):
        image = load_image(record.image)
        stats.boxes_in += len(record.annotations) * multiplier
        for variant in range(multiplier):
            if specs is not None:
                spec = specs[variant % len(specs)]
            else:
                rng = np.random.default_rng([seed, img_idx, variant])
                spec = sample_spec(rng, ranges, seed=seed)
            aug_img, aug_anns = apply_spec(image, record.annotations, spec, survival)
            name = f"{record.image.stem}_aug{variant}{record.image.suffix}"
            img_path = out_dir / "images" / name
            label_path = out_dir / "labels" / f"{record.image.stem}_aug{variant}.txt"
            try:
                save_image(img_path, aug_img)
                save_labels(label_path, aug_anns)
            except OSError as exc:
                raise DataError(
                    f"write failed at {img_path} after {stats.images_out} outputs: {exc}"
                ) from exc
            stats.images_out += 1
            stats.boxes_out += len(aug_anns)
            stats.outputs.append(str(img_path))
            new_records.append(ImageRecord(img_path, label_path, aug_anns))
            entries.append(f"images/{name}")
    stats.boxes_dropped = stats.boxes_in - stats.boxes_out
    manifest_path = out_dir / "dataset.yaml"
    manifest_path.write_text(yaml.safe_dump({
        "classes": list(manifest.class_names),
        "splits": {split: entries},
    }), encoding="utf-8")
    return (
        DatasetManifest(path=manifest_path, root=out_dir.resolve(),
                        class_names=list(manifest.class_names),
                        splits={split: new_records}),
        stats,
    )
