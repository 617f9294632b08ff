"""Dataset ingestion and image preprocessing.

Label files are UTF-8 text, one object per line in normalized center
form: ``class cx cy w h``. A dataset manifest is a YAML file naming the
class list and per-split image paths (see README for the schema).
Preprocessing covers orientation correction, aspect-preserving resize
with black padding, and conversion to the network's input layout.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import cv2
import numpy as np
import yaml
from PIL import Image

log = logging.getLogger(__name__)

EXIF_ORIENTATION_TAG = 0x0112


class DataError(RuntimeError):
    """Dataset, label, or image input cannot be used."""


@dataclass(frozen=True)
class Annotation:
    """One ground-truth object in normalized center form."""

    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2,
                self.cx + self.w / 2, self.cy + self.h / 2)

    def is_valid(self) -> bool:
        x1, y1, x2, y2 = self.corners()
        eps = 1e-9
        return (self.w > 0 and self.h > 0
                and x1 >= -eps and y1 >= -eps and x2 <= 1 + eps and y2 <= 1 + eps)


@dataclass(frozen=True)
class LetterboxTransform:
    """Scale + pad record mapping original coords <-> network-input coords."""

    scale: float
    pad_left: float
    pad_top: float
    original: tuple[int, int]  # (w, h)
    target: tuple[int, int] = (640, 640)


@dataclass
class ImageRecord:
    image: Path
    label: Path
    annotations: list[Annotation] = field(default_factory=list)


@dataclass
class DatasetManifest:
    path: Path
    root: Path
    class_names: list[str]
    splits: dict[str, list[ImageRecord]]
    diagnostics: list[str] = field(default_factory=list)

    def summary(self) -> str:
        parts = [
            f"{name}: {len(recs)} images, {sum(len(r.annotations) for r in recs)} boxes"
            for name, recs in self.splits.items()
        ]
        parts.append(f"{len(self.diagnostics)} diagnostics")
        return "; ".join(parts)


def parse_label_line(line: str, num_classes: int) -> Annotation:
    """Parse one ``class cx cy w h`` line; raises ValueError on bad input."""
    parts = line.split()
    if len(parts) != 5:
        raise ValueError(f"expected 5 fields, got {len(parts)}")
    class_id = int(parts[0])
    cx, cy, w, h = (float(p) for p in parts[1:])
    if not 0 <= class_id < num_classes:
        raise ValueError(f"class id {class_id} out of range [0, {num_classes})")
    if not all(np.isfinite([cx, cy, w, h])):
        raise ValueError("non-finite coordinate")
    if w <= 0 or h <= 0:
        raise ValueError("box has no area inside the image")
    x1, y1, x2, y2 = cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2
    if x1 >= 0 and y1 >= 0 and x2 <= 1 and y2 <= 1:
        return Annotation(class_id, cx, cy, w, h)
    # clip to the unit square, then re-derive the center form
    x1, y1, x2, y2 = max(0.0, x1), max(0.0, y1), min(1.0, x2), min(1.0, y2)
    if x2 - x1 <= 0 or y2 - y1 <= 0:
        raise ValueError("box has no area inside the image")
    return Annotation(class_id, (x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)


def parse_label_file(path, num_classes: int) -> tuple[list[Annotation], list[str]]:
    """Read a label file; bad lines become diagnostics, parsing continues."""
    path = Path(path)
    annotations: list[Annotation] = []
    diagnostics: list[str] = []
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        return [], [f"{path}: unreadable label file ({exc})"]
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            annotations.append(parse_label_line(line, num_classes))
        except ValueError as exc:
            diagnostics.append(f"{path}:{lineno}: {exc}")
    return annotations, diagnostics


def label_path_for(image_path: Path) -> Path:
    """Twin label path: swap the last images/ directory for labels/, else sibling."""
    parts = list(image_path.parts)
    if "images" in parts:
        idx = len(parts) - 1 - parts[::-1].index("images")
        parts[idx] = "labels"
        return Path(*parts).with_suffix(".txt")
    return image_path.with_suffix(".txt")


def load_dataset(manifest_path) -> DatasetManifest:
    """Load and validate a dataset manifest, reading every label file.

    Per-file problems (missing image, missing label, malformed lines)
    are collected as diagnostics and the load continues; a malformed
    manifest itself is a hard error.
    """
    manifest_path = Path(manifest_path)
    try:
        raw = yaml.safe_load(manifest_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read manifest {manifest_path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise DataError(f"manifest {manifest_path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise DataError(f"manifest {manifest_path} must be a mapping")
    class_names = raw.get("classes")
    if not isinstance(class_names, list) or not class_names or not all(
        isinstance(c, str) for c in class_names
    ):
        raise DataError(f"manifest {manifest_path}: 'classes' must be a list of names")
    splits_raw = raw.get("splits")
    if not isinstance(splits_raw, dict) or not splits_raw:
        raise DataError(f"manifest {manifest_path}: 'splits' must map split names to lists")
    root = (manifest_path.parent / raw.get("root", ".")).resolve()

    diagnostics: list[str] = []
    splits: dict[str, list[ImageRecord]] = {}
    for split_name, entries in splits_raw.items():
        if not isinstance(entries, list):
            raise DataError(f"manifest {manifest_path}: split {split_name!r} must be a list")
        records: list[ImageRecord] = []
        for entry in entries:
            image_path = root / str(entry)
            if not image_path.exists():
                diagnostics.append(f"{image_path}: missing image file")
                continue
            label_path = label_path_for(image_path)
            if not label_path.exists():
                diagnostics.append(f"{label_path}: missing label file")
                continue
            annotations, diags = parse_label_file(label_path, len(class_names))
            diagnostics.extend(diags)
            records.append(ImageRecord(image_path, label_path, annotations))
        splits[split_name] = records
    if diagnostics:
        log.warning("dataset %s: %d diagnostics", manifest_path, len(diagnostics))
    return DatasetManifest(path=manifest_path, root=root, class_names=list(class_names),
                           splits=splits, diagnostics=diagnostics)


def save_labels(path, annotations: list[Annotation]) -> None:
    lines = [
        f"{a.class_id} {a.cx:.6f} {a.cy:.6f} {a.w:.6f} {a.h:.6f}"
        for a in annotations
    ]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def auto_orient(image: np.ndarray, orientation: int = 1) -> np.ndarray:
    """Apply the physical rotation/flip that makes an orientation tag 1.

    Tags follow the 1..8 camera-orientation convention; unknown values
    are treated as 1 with a warning.
    """
    if orientation == 1:
        return np.ascontiguousarray(image)
    if orientation == 2:
        out = image[:, ::-1]
    elif orientation == 3:
        out = image[::-1, ::-1]
    elif orientation == 4:
        out = image[::-1, :]
    elif orientation == 5:
        out = np.swapaxes(image, 0, 1)
    elif orientation == 6:
        out = np.rot90(image, k=-1)  # stored image needs a 90 deg clockwise turn
    elif orientation == 7:
        out = np.swapaxes(image[::-1, ::-1], 0, 1)
    elif orientation == 8:
        out = np.rot90(image, k=1)
    else:
        log.warning("unknown orientation tag %r, leaving image as-is", orientation)
        out = image
    return np.ascontiguousarray(out)


def load_image(path) -> np.ndarray:
    """Decode an 8-bit RGB image, correcting any EXIF orientation."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            orientation = int(im.getexif().get(EXIF_ORIENTATION_TAG, 1))
            rgb = np.asarray(im.convert("RGB"))
    except (OSError, SyntaxError, ValueError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    return auto_orient(rgb, orientation)


def save_image(path, rgb: np.ndarray) -> None:
    Image.fromarray(np.ascontiguousarray(rgb)).save(Path(path))


def letterbox(image: np.ndarray, target: int = 640) -> tuple[np.ndarray, LetterboxTransform]:
    """Aspect-preserving bilinear resize onto a black target x target canvas."""
    if image.ndim != 3 or image.shape[2] != 3 or image.size == 0:
        raise DataError(f"letterbox expects a non-empty HxWx3 image, got {image.shape}")
    h, w = image.shape[:2]
    scale = min(target / w, target / h)
    new_w, new_h = round(w * scale), round(h * scale)
    if (new_w, new_h) != (w, h):
        content = cv2.resize(image, (new_w, new_h), interpolation=cv2.INTER_LINEAR)
    else:
        content = image
    pad_left = (target - new_w) // 2
    pad_top = (target - new_h) // 2
    canvas = np.zeros((target, target, 3), dtype=np.uint8)
    canvas[pad_top:pad_top + new_h, pad_left:pad_left + new_w] = content
    return canvas, LetterboxTransform(scale=scale, pad_left=float(pad_left),
                                      pad_top=float(pad_top), original=(w, h),
                                      target=(target, target))


def to_network_input(image: np.ndarray) -> np.ndarray:
    """HxWx3 uint8 RGB -> (1, 3, H, W) float32 in [0, 1]."""
    x = image.astype(np.float32) / 255.0
    return np.ascontiguousarray(x.transpose(2, 0, 1)[None])


def annotation_to_pixels(ann: Annotation, width: int, height: int) -> tuple[float, float, float, float]:
    """Normalized center box -> corner-form pixels in the original image."""
    x1, y1, x2, y2 = ann.corners()
    return x1 * width, y1 * height, x2 * width, y2 * height


def scale_annotation(ann: Annotation, **changes) -> Annotation:
    return replace(ann, **changes)
