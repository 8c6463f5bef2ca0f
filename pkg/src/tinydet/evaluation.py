"""COCO-standard detection evaluation.

Matching is greedy per image and class: detections in descending score
order claim the unmatched ground truth of highest IoU at or above the
threshold, each ground truth at most once. AP integrates the interpolated
precision-recall curve at 101 recall points (0.00, 0.01, ..., 1.00) with
precision made non-increasing from the right. mAP averages per-class AP
over the IoU thresholds 0.50:0.05:0.95; classes without ground truth are
excluded from every average.

Size buckets follow the ground-truth area: small < 32^2, medium in
[32^2, 96^2), large >= 96^2. A bucket is evaluated by restricting ground
truths to the bucket and dropping detections that matched an out-of-bucket
ground truth; buckets with no ground truth report an undefined (absent)
AP. Detections are capped at 100 per image by score. Crowd regions are
not modelled.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .losses import iou

IOU_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
SMALL_MAX_AREA = 32.0 ** 2
MEDIUM_MAX_AREA = 96.0 ** 2
MAX_DETS_PER_IMAGE = 100
_RECALL_GRID = np.linspace(0.0, 1.0, 101)


@dataclass
class MatchResult:
    """Greedy matching outcome at one IoU threshold."""
    pairs: list          # (Detection, BoxAnnotation or None), all detections
    tp: int
    fp: int
    fn: int


@dataclass
class EvalResult:
    map_50_95: float
    map_50: float
    ap_small: Optional[float]
    ap_medium: Optional[float]
    ap_large: Optional[float]
    per_class: dict      # category_id -> AP averaged over IoU thresholds
    tp_50: int
    fp_50: int
    fn_50: int

    def to_dict(self):
        return {
            "map_50_95": self.map_50_95,
            "map_50": self.map_50,
            "ap_small": self.ap_small,
            "ap_medium": self.ap_medium,
            "ap_large": self.ap_large,
            "per_class": {str(k): v for k, v in sorted(self.per_class.items())},
            "tp_50": self.tp_50,
            "fp_50": self.fp_50,
            "fn_50": self.fn_50,
        }


def format_table(result: EvalResult, label: str = "model") -> str:
    """Aligned text table with the usual mAP / AP-small column layout."""
    def cell(v):
        return "  n/a" if v is None else f"{v:.3f}"

    header = f"{'Model':<16} {'mAP.5:.95':>10} {'mAP.5':>8} {'AP_small':>9}"
    row = f"{label:<16} {cell(result.map_50_95):>10} {cell(result.map_50):>8} {cell(result.ap_small):>9}"
    return header + "\n" + row


def _sorted_dets(dets):
    # descending score; stable tie-break by input order
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))


def _greedy_match(dets_in_order, gts, thr):
    """For detections already in rank order, return the matched GT index or None.

    Ties on IoU keep the lowest GT index (strict improvement required to switch).
    """
    taken = [False] * len(gts)
    out = []
    for det in dets_in_order:
        best, best_iou = None, -1.0
        for gi, gt in enumerate(gts):
            if taken[gi]:
                continue
            v = iou(det.xyxy, gt.xyxy)
            if v >= thr and v > best_iou:
                best, best_iou = gi, v
        if best is not None:
            taken[best] = True
        out.append(best)
    return out


def match_detections(dets, gts, iou_threshold: float) -> MatchResult:
    """Greedy matching over every (image, category) group at one threshold."""
    groups = {}
    for d in dets:
        groups.setdefault((d.image_id, d.category_id), ([], []))[0].append(d)
    for g in gts:
        groups.setdefault((g.image_id, g.category_id), ([], []))[1].append(g)

    pairs, tp = [], 0
    for key in sorted(groups):
        dlist, glist = groups[key]
        order = _sorted_dets(dlist)
        matched = _greedy_match([dlist[i] for i in order], glist, iou_threshold)
        for i, gi in zip(order, matched):
            pairs.append((dlist[i], glist[gi] if gi is not None else None))
            tp += gi is not None
    return MatchResult(pairs=pairs, tp=tp, fp=len(dets) - tp, fn=len(gts) - tp)


def average_precision(tp_flags, total_gt: int) -> Optional[float]:
    """AP from ranked match flags via 101-point interpolated precision.

    total_gt == 0 yields None (undefined rather than zero).
    """
    if total_gt == 0:
        return None
    flags = np.asarray(tp_flags, dtype=np.float64)
    if flags.size == 0:
        return 0.0
    cum_tp = np.cumsum(flags)
    cum_fp = np.cumsum(1.0 - flags)
    recall = cum_tp / total_gt
    precision = cum_tp / (cum_tp + cum_fp)
    # right-to-left maximum makes precision non-increasing in recall
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, _RECALL_GRID, side="left")
    interp = np.where(idx < flags.size, envelope[np.minimum(idx, flags.size - 1)], 0.0)
    return float(interp.mean())


def _cap_per_image(dets, cap):
    by_image = {}
    for i, d in enumerate(dets):
        by_image.setdefault(d.image_id, []).append(((-d.score, i), d))
    kept = []
    for img in sorted(by_image):
        ranked = sorted(by_image[img], key=lambda t: t[0])
        kept.extend(d for _, d in ranked[:cap])
    return kept


def _bucket_of(area):
    if area < SMALL_MAX_AREA:
        return "small"
    if area < MEDIUM_MAX_AREA:
        return "medium"
    return "large"


def _mean_or_none(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def evaluate(dets, gts, categories, iou_thresholds=IOU_THRESHOLDS,
             max_dets: int = MAX_DETS_PER_IMAGE) -> EvalResult:
    """Full metric suite over detections and ground truths."""
    dets = _cap_per_image(list(dets), max_dets)
    gts = list(gts)

    gt_by_class = {}
    for g in gts:
        gt_by_class.setdefault(g.category_id, []).append(g)
    det_by_class = {}
    for d in dets:
        det_by_class.setdefault(d.category_id, []).append(d)
    valid_classes = sorted(gt_by_class)

    # rank detections of one class across images, remembering their match
    def ranked_matches(cls, thr):
        records = []
        cls_dets = det_by_class.get(cls, [])
        by_image = {}
        for i, d in enumerate(cls_dets):
            by_image.setdefault(d.image_id, []).append((i, d))
        gt_by_image = {}
        for g in gt_by_class.get(cls, []):
            gt_by_image.setdefault(g.image_id, []).append(g)
        for img in sorted(by_image):
            entries = sorted(by_image[img], key=lambda t: (-t[1].score, t[0]))
            matched = _greedy_match([d for _, d in entries], gt_by_image.get(img, []), thr)
            for (i, d), gi in zip(entries, matched):
                gt = gt_by_image[img][gi] if gi is not None else None
                records.append(((-d.score, d.image_id, i), gt))
        records.sort(key=lambda r: r[0])
        return [gt for _, gt in records]

    ap_overall = {t: {} for t in iou_thresholds}
    ap_bucket = {b: {t: {} for t in iou_thresholds} for b in ("small", "medium", "large")}
    tp_50 = 0

    for cls in valid_classes:
        total = len(gt_by_class[cls])
        bucket_totals = {b: sum(_bucket_of(g.area) == b for g in gt_by_class[cls])
                         for b in ("small", "medium", "large")}
        for t in iou_thresholds:
            matches = ranked_matches(cls, t)
            ap_overall[t][cls] = average_precision([m is not None for m in matches], total)
            if t == 0.5:
                tp_50 += sum(m is not None for m in matches)
            for b in ("small", "medium", "large"):
                if bucket_totals[b] == 0:
                    continue
                # drop detections matched to ground truth outside the bucket
                flags = [m is not None and _bucket_of(m.area) == b
                         for m in matches if m is None or _bucket_of(m.area) == b]
                ap_bucket[b][t][cls] = average_precision(flags, bucket_totals[b])

    per_threshold = [_mean_or_none(ap_overall[t].values()) for t in iou_thresholds]
    map_50_95 = _mean_or_none(per_threshold)
    map_50 = _mean_or_none(ap_overall[0.5].values()) if 0.5 in ap_overall else None

    def bucket_ap(b):
        per_t = [_mean_or_none(ap_bucket[b][t].values()) for t in iou_thresholds]
        return _mean_or_none(per_t)

    per_class = {cls: _mean_or_none([ap_overall[t].get(cls) for t in iou_thresholds])
                 for cls in valid_classes}

    return EvalResult(
        map_50_95=map_50_95 if map_50_95 is not None else 0.0,
        map_50=map_50 if map_50 is not None else 0.0,
        ap_small=bucket_ap("small"),
        ap_medium=bucket_ap("medium"),
        ap_large=bucket_ap("large"),
        per_class=per_class,
        tp_50=tp_50,
        fp_50=len(dets) - tp_50,
        fn_50=len(gts) - tp_50,
    )
