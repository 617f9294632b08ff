"""Detection-quality evaluation.

IoU, greedy confidence-ordered matching, 101-point interpolated average
precision, mAP at one or many IoU thresholds, precision/recall/F1 at a
confidence cutoff, PR curves, and a column-normalized confusion matrix
over the classes plus background. Report rendering mirrors the standard
per-class table (Class, Images, Instances, Box(P), R, mAP50, mAP50-95).
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

MAP_50_95_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))


@dataclass(frozen=True)
class GroundTruthBox:
    """One ground-truth object in corner-form pixels."""

    class_id: int
    x1: float
    y1: float
    x2: float
    y2: float

    def coords(self) -> tuple[float, float, float, float]:
        return self.x1, self.y1, self.x2, self.y2


def _coords(box) -> tuple[float, float, float, float]:
    if hasattr(box, "x1"):
        return box.x1, box.y1, box.x2, box.y2
    x1, y1, x2, y2 = box
    return x1, y1, x2, y2


def iou(a, b) -> float:
    """Intersection area over union area; 0 for disjoint or degenerate boxes."""
    ax1, ay1, ax2, ay2 = _coords(a)
    bx1, by1, bx2, by2 = _coords(b)
    area_a = (ax2 - ax1) * (ay2 - ay1)
    area_b = (bx2 - bx1) * (by2 - by1)
    if area_a <= 0 or area_b <= 0:
        log.warning("iou: degenerate zero-area box %s / %s, returning 0",
                    (ax1, ay1, ax2, ay2), (bx1, by1, bx2, by2))
        return 0.0
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (area_a + area_b - inter)


@dataclass
class MatchResult:
    """TP/FP flags and GT assignments for one image at one IoU threshold.

    All per-prediction lists are aligned with the *input* prediction
    order; matching itself always runs in descending-confidence order.
    """

    iou_threshold: float
    tp: list[bool]
    matched_gt: list[int | None]
    gt_matched: list[bool]

    @property
    def tp_count(self) -> int:
        return sum(self.tp)

    @property
    def fn_count(self) -> int:
        return len(self.gt_matched) - sum(self.gt_matched)


def match(preds, gts, iou_threshold: float) -> MatchResult:
    """Greedy matching: visit predictions by descending confidence; each
    claims its best-IoU unmatched same-class GT when that IoU reaches the
    threshold. Ties prefer larger IoU, then earlier GT input order."""
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].confidence, i))
    tp = [False] * len(preds)
    matched_gt: list[int | None] = [None] * len(preds)
    gt_matched = [False] * len(gts)
    for i in order:
        p = preds[i]
        best_iou = 0.0
        best_j = -1
        for j, g in enumerate(gts):
            if gt_matched[j] or g.class_id != p.class_id:
                continue
            v = iou(p, g)
            if v > best_iou:
                best_iou, best_j = v, j
        if best_j >= 0 and best_iou >= iou_threshold:
            tp[i] = True
            matched_gt[i] = best_j
            gt_matched[best_j] = True
    return MatchResult(iou_threshold, tp, matched_gt, gt_matched)


def average_precision(tp_flags, num_gt: int) -> float | None:
    """101-point interpolated AP from confidence-ranked TP/FP flags.

    Returns None when there is nothing to score (no GT and no
    predictions); callers exclude such classes from averaging. With GT
    but no hits the AP is 0, as is a prediction-only class.
    """
    flags = np.asarray(list(tp_flags), dtype=bool)
    if num_gt == 0:
        return None if flags.size == 0 else 0.0
    if flags.size == 0:
        return 0.0
    cum_tp = np.cumsum(flags)
    ranks = np.arange(1, flags.size + 1)
    precision = cum_tp / ranks
    recall = cum_tp / num_gt
    # max precision at recall >= r: suffix maximum in rank order
    suffix_max = np.maximum.accumulate(precision[::-1])[::-1]
    queries = np.arange(101) / 100.0
    idx = np.searchsorted(recall, queries, side="left")
    values = np.where(idx < flags.size, suffix_max[np.minimum(idx, flags.size - 1)], 0.0)
    return float(values.sum() / 101.0)


def _pooled_flags(preds, gts, class_id: int, iou_threshold: float):
    """Confidence-ranked TP flags for one class pooled over all images.

    The merge is deterministic: sort by descending confidence with
    (image index, prediction index) breaking ties.
    """
    pool = []
    for img_idx, (img_preds, img_gts) in enumerate(zip(preds, gts)):
        result = match(img_preds, img_gts, iou_threshold)
        for pred_idx, p in enumerate(img_preds):
            if p.class_id == class_id:
                pool.append((-p.confidence, img_idx, pred_idx, result.tp[pred_idx]))
    pool.sort()
    return [entry[3] for entry in pool]


def _class_ids(preds, gts) -> list[int]:
    ids = {g.class_id for img in gts for g in img}
    ids |= {p.class_id for img in preds for p in img}
    return sorted(ids)


@dataclass
class MapResult:
    thresholds: tuple[float, ...]
    per_class: dict[int, float | None]   # None: class had no GT and no preds
    mean: float


def map_at(preds, gts, thresholds) -> MapResult:
    """Per-class and mean AP averaged over the given IoU thresholds.

    `preds`/`gts` are per-image lists. The class mean counts only
    classes that are present (ground truth or predictions).
    """
    thresholds = tuple(thresholds)
    if not thresholds or any(not 0 < t < 1 for t in thresholds):
        raise ValueError(f"thresholds must be non-empty and within (0, 1): {thresholds}")
    per_class: dict[int, float | None] = {}
    for class_id in _class_ids(preds, gts):
        num_gt = sum(1 for img in gts for g in img if g.class_id == class_id)
        aps = [
            average_precision(_pooled_flags(preds, gts, class_id, t), num_gt)
            for t in thresholds
        ]
        if all(a is None for a in aps):
            per_class[class_id] = None
        else:
            per_class[class_id] = float(np.mean([a for a in aps if a is not None]))
    included = [v for v in per_class.values() if v is not None]
    mean = float(np.mean(included)) if included else 0.0
    return MapResult(thresholds=thresholds, per_class=per_class, mean=mean)


def precision_recall_f1(preds, gts, conf_threshold: float, iou_threshold: float
                        ) -> dict[int, tuple[float, float, float]]:
    """Per-class (P, R, F1) with predictions filtered at the confidence cutoff."""
    for name, t in (("conf_threshold", conf_threshold), ("iou_threshold", iou_threshold)):
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {t}")
    out: dict[int, tuple[float, float, float]] = {}
    filtered = [[p for p in img if p.confidence >= conf_threshold] for img in preds]
    stats: dict[int, list[int]] = {}
    for img_preds, img_gts in zip(filtered, gts):
        result = match(img_preds, img_gts, iou_threshold)
        for p, is_tp in zip(img_preds, result.tp):
            tp_fp = stats.setdefault(p.class_id, [0, 0, 0])
            tp_fp[0] += is_tp
            tp_fp[1] += not is_tp
        for g in img_gts:
            stats.setdefault(g.class_id, [0, 0, 0])
        for g, hit in zip(img_gts, result.gt_matched):
            if not hit:
                stats[g.class_id][2] += 1
    for class_id, (tp, fp, fn) in sorted(stats.items()):
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        out[class_id] = (precision, recall, f1)
    return out


def confusion_matrix(preds, gts, conf_threshold: float, iou_threshold: float,
                     num_classes: int, normalized: bool = True) -> np.ndarray:
    """(num_classes+1)^2 matrix over classes plus background.

    Rows are predicted classes, columns ground-truth classes. A
    prediction pairs with its best-IoU ground truth regardless of class
    (greedy by IoU); leftovers go to the background row/column. When
    normalized, each column is divided by its total where it has mass.
    """
    bg = num_classes
    counts = np.zeros((num_classes + 1, num_classes + 1), dtype=np.float64)
    for img_preds, img_gts in zip(preds, gts):
        kept = [p for p in img_preds if p.confidence >= conf_threshold]
        pairs = []
        for i, p in enumerate(kept):
            for j, g in enumerate(img_gts):
                v = iou(p, g)
                if v >= iou_threshold:
                    pairs.append((-v, i, j))
        pairs.sort()
        pred_used = [False] * len(kept)
        gt_used = [False] * len(img_gts)
        for _, i, j in pairs:
            if pred_used[i] or gt_used[j]:
                continue
            pred_used[i] = True
            gt_used[j] = True
            counts[kept[i].class_id, img_gts[j].class_id] += 1
        for i, p in enumerate(kept):
            if not pred_used[i]:
                counts[p.class_id, bg] += 1
        for j, g in enumerate(img_gts):
            if not gt_used[j]:
                counts[bg, g.class_id] += 1
    if not normalized:
        return counts
    sums = counts.sum(axis=0, keepdims=True)
    return np.divide(counts, sums, out=np.zeros_like(counts), where=sums > 0)


def pr_curve(preds, gts, iou_threshold: float) -> list[tuple[float, float, float]]:
    """(confidence, precision, recall) at every distinct confidence value.

    Pooled over images with per-class matching; recall is against all
    given ground truths and never decreases as confidence drops.
    """
    num_gt = sum(len(img) for img in gts)
    pool = []
    for img_idx, (img_preds, img_gts) in enumerate(zip(preds, gts)):
        result = match(img_preds, img_gts, iou_threshold)
        for pred_idx, p in enumerate(img_preds):
            pool.append((-p.confidence, img_idx, pred_idx, result.tp[pred_idx]))
    pool.sort()
    samples: list[tuple[float, float, float]] = []
    tp = 0
    for rank, (neg_conf, _, _, is_tp) in enumerate(pool, start=1):
        tp += bool(is_tp)
        is_last_of_conf = rank == len(pool) or pool[rank][0] != neg_conf
        if is_last_of_conf:
            precision = tp / rank
            recall = tp / num_gt if num_gt else 0.0
            samples.append((-neg_conf, precision, recall))
    return samples


# ------------------------------------------------------------------ report

@dataclass
class ReportRow:
    name: str
    images: int
    instances: int
    precision: float
    recall: float
    f1: float
    map50: float
    map50_95: float


@dataclass
class MetricsReport:
    class_names: list[str]
    rows: list[ReportRow]  # "all" first, then one row per class
    confusion: np.ndarray  # normalized, (num_classes+1)^2
    pr_curves: dict[str, list[tuple[float, float, float]]]
    conf_threshold: float
    iou_threshold: float
    images: int
    diagnostics: list[str] = field(default_factory=list)


def evaluate(preds, gts, class_names, conf_threshold: float = 0.5,
             iou_threshold: float = 0.5) -> MetricsReport:
    """Full evaluation over per-image prediction/ground-truth lists."""
    if len(preds) != len(gts):
        raise ValueError(f"got {len(preds)} prediction lists vs {len(gts)} GT lists")
    map50 = map_at(preds, gts, [iou_threshold])
    map5095 = map_at(preds, gts, MAP_50_95_THRESHOLDS)
    prf = precision_recall_f1(preds, gts, conf_threshold, iou_threshold)
    rows: list[ReportRow] = []
    class_rows: list[ReportRow] = []
    for class_id, name in enumerate(class_names):
        images = sum(1 for img in gts if any(g.class_id == class_id for g in img))
        instances = sum(1 for img in gts for g in img if g.class_id == class_id)
        p, r, f1 = prf.get(class_id, (0.0, 0.0, 0.0))
        has_preds = any(p2.class_id == class_id for img in preds for p2 in img)
        if instances == 0 and not has_preds:
            continue  # absent class: excluded from the report and the mean
        class_rows.append(ReportRow(
            name=name, images=images, instances=instances, precision=p, recall=r,
            f1=f1, map50=map50.per_class.get(class_id) or 0.0,
            map50_95=map5095.per_class.get(class_id) or 0.0,
        ))
    all_row = ReportRow(
        name="all",
        images=len(gts),
        instances=sum(len(img) for img in gts),
        precision=float(np.mean([r.precision for r in class_rows])) if class_rows else 0.0,
        recall=float(np.mean([r.recall for r in class_rows])) if class_rows else 0.0,
        f1=float(np.mean([r.f1 for r in class_rows])) if class_rows else 0.0,
        map50=map50.mean,
        map50_95=map5095.mean,
    )
    rows = [all_row] + class_rows
    curves = {"all": pr_curve(preds, gts, iou_threshold)}
    for class_id, name in enumerate(class_names):
        cls_preds = [[p for p in img if p.class_id == class_id] for img in preds]
        cls_gts = [[g for g in img if g.class_id == class_id] for img in gts]
        curves[name] = pr_curve(cls_preds, cls_gts, iou_threshold)
    confusion = confusion_matrix(preds, gts, conf_threshold, iou_threshold,
                                 num_classes=len(class_names))
    return MetricsReport(class_names=list(class_names), rows=rows, confusion=confusion,
                         pr_curves=curves, conf_threshold=conf_threshold,
                         iou_threshold=iou_threshold, images=len(gts))


def render_report_text(report: MetricsReport) -> str:
    header = f"{'Class':<12s} {'Images':>8s} {'Instances':>10s} {'Box(P)':>8s} " \
             f"{'R':>8s} {'mAP50':>8s} {'mAP50-95':>9s}"
    lines = [header]
    for row in report.rows:
        lines.append(
            f"{row.name:<12s} {row.images:>8d} {row.instances:>10d} "
            f"{row.precision:>8.3f} {row.recall:>8.3f} {row.map50:>8.3f} "
            f"{row.map50_95:>9.3f}"
        )
    return "\n".join(lines) + "\n"


def render_report_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["class", "images", "instances", "precision", "recall",
                     "f1", "map50", "map50_95"])
    for row in report.rows:
        writer.writerow([row.name, row.images, row.instances,
                         f"{row.precision:.6f}", f"{row.recall:.6f}", f"{row.f1:.6f}",
                         f"{row.map50:.6f}", f"{row.map50_95:.6f}"])
    return buf.getvalue()


def render_report_json(report: MetricsReport) -> str:
    payload = {
        "conf_threshold": report.conf_threshold,
        "iou_threshold": report.iou_threshold,
        "images": report.images,
        "classes": report.class_names,
        "rows": [
            {
                "class": row.name,
                "images": row.images,
                "instances": row.instances,
                "precision": row.precision,
                "recall": row.recall,
                "f1": row.f1,
                "map50": row.map50,
                "map50_95": row.map50_95,
            }
            for row in report.rows
        ],
        "confusion_matrix": {
            "labels": report.class_names + ["background"],
            "columns_normalized": True,
            "values": report.confusion.tolist(),
        },
    }
    return json.dumps(payload, indent=2) + "\n"


def render_pr_curve_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["class", "confidence", "precision", "recall"])
    for name, samples in report.pr_curves.items():
        for conf, precision, recall in samples:
            writer.writerow([name, f"{conf:.6f}", f"{precision:.6f}", f"{recall:.6f}"])
    return buf.getvalue()


def render_confusion_csv(report: MetricsReport) -> str:
    labels = report.class_names + ["background"]
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["predicted\\actual"] + labels)
    for i, label in enumerate(labels):
        writer.writerow([label] + [f"{v:.6f}" for v in report.confusion[i]])
    return buf.getvalue()
