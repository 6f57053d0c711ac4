"""Detection evaluation: IoU matching, 101-point interpolated AP, frequency
bucket aggregates, and per-domain breakdowns.

Protocol defaults follow LVIS conventions: IoU thresholds 0.50:0.05:0.95,
at most 300 detections per image, federated scoring honoring per-image
negative-category lists when present, and categories without ground truth
excluded from every mean.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import AnnotationSet, CategoryTable, DatasetManifest
from .errors import MalformedDetectionsError, ManifestError, ParameterError

log = logging.getLogger(__name__)

RECALL_GRID = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class DetectionRecord:
    image_id: int
    category_id: int
    bbox: tuple  # (x, y, w, h)
    score: float

    def __post_init__(self):
        x, y, w, h = (float(v) for v in self.bbox)
        if w <= 0 or h <= 0:
            raise MalformedDetectionsError(f"detection bbox must have positive extent, got {self.bbox}")
        if not 0.0 <= self.score <= 1.0:
            raise MalformedDetectionsError(f"detection score must lie in [0, 1], got {self.score}")
        object.__setattr__(self, "bbox", (x, y, w, h))


def load_detections(path) -> list[DetectionRecord]:
    """Read a COCO-results-style JSON array of
    {image_id, category_id, bbox [x,y,w,h], score}."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedDetectionsError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(doc, list):
        raise MalformedDetectionsError(f"{path}: expected a JSON array of detections")
    records = []
    for i, d in enumerate(doc):
        try:
            records.append(
                DetectionRecord(
                    image_id=int(d["image_id"]),
                    category_id=int(d["category_id"]),
                    bbox=tuple(d["bbox"]),
                    score=float(d["score"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedDetectionsError(f"{path}: bad detection entry #{i}: {exc}") from exc
    return records


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple = tuple(np.arange(0.5, 1.0, 0.05).round(2))
    max_detections: int = 300
    federated: bool = True

    def __post_init__(self):
        t = tuple(float(v) for v in self.iou_thresholds)
        if not t or any(b <= a for a, b in zip(t, t[1:])) or t[0] <= 0 or t[-1] > 1:
            raise ParameterError(f"IoU thresholds must be strictly increasing in (0, 1], got {t}")
        if self.max_detections < 1:
            raise ParameterError(f"max_detections must be >= 1, got {self.max_detections}")
        object.__setattr__(self, "iou_thresholds", t)


@dataclass
class MetricsReport:
    """APs as percentages; ``None`` marks a bucket with no scored category."""

    ap: float | None
    ap_f: float | None
    ap_c: float | None
    ap_r: float | None
    per_category: dict = field(default_factory=dict)
    n_ground_truths: int = 0
    n_detections: int = 0
    n_dropped_unknown_category: int = 0
    n_dropped_missing_image: int = 0
    per_domain: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "AP": self.ap,
            "AP_f": self.ap_f,
            "AP_c": self.ap_c,
            "AP_r": self.ap_r,
            "per_category": {str(k): v for k, v in sorted(self.per_category.items())},
            "n_ground_truths": self.n_ground_truths,
            "n_detections": self.n_detections,
            "n_dropped_unknown_category": self.n_dropped_unknown_category,
            "n_dropped_missing_image": self.n_dropped_missing_image,
        }
        if self.per_domain:
            d["per_domain"] = {tag: sub.to_dict() for tag, sub in self.per_domain.items()}
        return d

    def format_table(self) -> str:
        def fmt(v):
            return "   n/a" if v is None else f"{v:6.2f}"

        header = f"{'scope':<24} {'AP':>6} {'AP_f':>6} {'AP_c':>6} {'AP_r':>6} {'#gt':>7} {'#det':>7}"
        lines = [header, "-" * len(header)]
        rows = [("overall", self)] + sorted(self.per_domain.items())
        for name, r in rows:
            lines.append(
                f"{name:<24} {fmt(r.ap)} {fmt(r.ap_f)} {fmt(r.ap_c)} {fmt(r.ap_r)} "
                f"{r.n_ground_truths:>7d} {r.n_detections:>7d}"
            )
        return "\n".join(lines)


def iou(a, b) -> float:
    """Intersection over union of two (x, y, w, h) boxes."""
    ax, ay, aw, ah = (float(v) for v in a)
    bx, by, bw, bh = (float(v) for v in b)
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def match_detections(dets, gts, threshold: float):
    """Greedy one-to-one matching. ``dets`` must already be sorted by
    descending score (ties by ascending detection index); each detection
    claims the unmatched ground truth of its category with the highest
    IoU >= threshold.

    Returns (tp_flags per detection, matched flags per ground truth).
    """
    matched = [False] * len(gts)
    tp = [False] * len(dets)
    for i, det in enumerate(dets):
        best_j, best_v = -1, 0.0
        for j, gt in enumerate(gts):
            if matched[j] or gt.category_id != det.category_id:
                continue
            v = iou(det.bbox, gt.bbox)
            if v >= threshold and v > best_v:
                best_j, best_v = j, v
        if best_j >= 0:
            matched[best_j] = True
            tp[i] = True
    return tp, matched


def ap_from_matches(tp_flags, n_gt: int) -> float:
    """101-point interpolated AP from score-ordered TP/FP labels.
    Returns NaN for zero ground truths (excluded from averages upstream)."""
    if n_gt == 0:
        return float("nan")
    if not len(tp_flags):
        return 0.0
    tp = np.cumsum(np.asarray(tp_flags, dtype=np.float64))
    fp = np.cumsum(1.0 - np.asarray(tp_flags, dtype=np.float64))
    recall = tp / n_gt
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_GRID, side="left")
    sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(sampled.mean())


def _canonical_order(records) -> list:
    return sorted(records, key=lambda d: (d.image_id, d.category_id, -d.score, d.bbox))


def _scored_without_gt(category_id: int, info, federated: bool) -> bool:
    """Whether detections of a category count on an image that holds no
    ground truth for it. Federated scoring needs the image to verify the
    category absent (neg_category_ids); an image without a negative list
    carries no federated information and is scored for everything."""
    if not federated or info.neg_category_ids is None:
        return True
    return category_id in info.neg_category_ids


def evaluate(
    detections,
    anns: AnnotationSet,
    table: CategoryTable,
    cfg: EvalConfig | None = None,
) -> MetricsReport:
    """Score detections against ground truth.

    Detections are canonicalized (image, category, score, box) before
    index-based tie-breaking, so the report is invariant to input order.
    Records with unknown categories or image ids are dropped and counted.
    Per-image detections are truncated to ``cfg.max_detections`` by score.
    """
    cfg = cfg or EvalConfig()

    kept, n_unknown_cat, n_missing_img = [], 0, 0
    for det in detections:
        if det.category_id not in table:
            n_unknown_cat += 1
        elif not anns.has_image(det.image_id):
            n_missing_img += 1
        else:
            kept.append(det)
    if n_unknown_cat or n_missing_img:
        log.warning(
            "dropped %d detections with unknown categories and %d with missing images",
            n_unknown_cat,
            n_missing_img,
        )

    ordered = _canonical_order(kept)
    by_image: dict[int, list] = {}
    for idx, det in enumerate(ordered):
        by_image.setdefault(det.image_id, []).append((idx, det))
    truncated: dict[int, list] = {}
    for image_id, items in by_image.items():
        items.sort(key=lambda p: (-p[1].score, p[0]))
        truncated[image_id] = items[: cfg.max_detections]
    n_scored = sum(len(v) for v in truncated.values())

    gt_index: dict[int, dict[int, list]] = {}
    for image_id in anns.image_ids():
        by_cat: dict[int, list] = {}
        for a in anns.anns_for_image(image_id):
            by_cat.setdefault(a.category_id, []).append(a)
        gt_index[image_id] = by_cat
    det_index: dict[int, dict[int, list]] = {}
    for image_id, items in truncated.items():
        by_cat = {}
        for idx, d in items:
            by_cat.setdefault(d.category_id, []).append((idx, d))
        det_index[image_id] = by_cat

    per_category: dict[int, float | None] = {}
    for entry in table.entries:
        c = entry.id
        gts_by_image = {i: cats[c] for i, cats in gt_index.items() if c in cats}
        n_gt = sum(len(v) for v in gts_by_image.values())
        if n_gt == 0:
            per_category[c] = None
            continue

        dets_c: dict[int, list] = {}
        for image_id, by_cat in det_index.items():
            if c not in by_cat:
                continue
            if image_id not in gts_by_image and not _scored_without_gt(
                c, anns.image(image_id), cfg.federated
            ):
                continue
            dets_c[image_id] = by_cat[c]

        ap_per_threshold = []
        for t in cfg.iou_thresholds:
            pooled = []
            for image_id, items in dets_c.items():
                gts = gts_by_image.get(image_id, [])
                tp, _ = match_detections([d for _, d in items], gts, t)
                pooled.extend((items[i][1].score, items[i][0], tp[i]) for i in range(len(items)))
            pooled.sort(key=lambda p: (-p[0], p[1]))
            ap_per_threshold.append(ap_from_matches([p[2] for p in pooled], n_gt))
        per_category[c] = float(np.mean(ap_per_threshold)) * 100.0

    def bucket_mean(ids) -> float | None:
        vals = [per_category[c] for c in ids if per_category.get(c) is not None]
        return float(np.mean(vals)) if vals else None

    return MetricsReport(
        ap=bucket_mean([e.id for e in table.entries]),
        ap_f=bucket_mean(table.ids_in_bucket("frequent")),
        ap_c=bucket_mean(table.ids_in_bucket("common")),
        ap_r=bucket_mean(table.ids_in_bucket("rare")),
        per_category=per_category,
        n_ground_truths=len(anns.annotations),
        n_detections=n_scored,
        n_dropped_unknown_category=n_unknown_cat,
        n_dropped_missing_image=n_missing_img,
    )


def evaluate_per_domain(
    detections,
    manifest: DatasetManifest,
    anns: AnnotationSet,
    table: CategoryTable,
    cfg: EvalConfig | None = None,
) -> MetricsReport:
    """Pooled report plus one sub-report per manifest domain. Every detection
    image id must map to exactly one manifest domain."""
    detections = list(detections)
    mapping = manifest.domain_of_image()
    stray = sorted({d.image_id for d in detections} - set(mapping))
    if stray:
        raise ManifestError(f"detection image ids absent from the manifest: {stray[:20]}")

    report = evaluate(detections, anns, table, cfg)
    for record in manifest.domains:
        ids = {entry["id"] for entry in record.images}
        sub_anns = anns.subset(ids)
        sub_dets = [d for d in detections if d.image_id in ids]
        report.per_domain[record.tag] = evaluate(sub_dets, sub_anns, table, cfg)
    return report
