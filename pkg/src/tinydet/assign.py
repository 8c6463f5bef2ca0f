"""Target assignment, box decoding, and non-maximum suppression.

Assignment is static and center-based: each ground truth belongs to the
pyramid level matching its size (max side at most 4x the finest stride for
the first level, 8x for the second, everything else to the third), and
claims exactly the grid cell containing its center. The claim becomes a
positive sample only when the cell's center point lies inside the box;
the positive's quality q is the IoU between the currently decoded
prediction at that point and the ground truth. Two ground truths claiming
one cell resolve to the smaller area, then the lower annotation index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coco import Detection
from .losses import ScoreTarget, iou


def softplus_np(x):
    return np.logaddexp(0.0, x)


def grid_centers(h: int, w: int, stride: int):
    """Pixel coordinates of every grid-point center: two (h, w) arrays (cx, cy)."""
    ys = (np.arange(h) + 0.5) * stride
    xs = (np.arange(w) + 0.5) * stride
    cy, cx = np.meshgrid(ys, xs, indexing="ij")
    return cx, cy


def decode_boxes(box_raw: np.ndarray, stride: int) -> np.ndarray:
    """Raw offsets [N,4,H,W] -> corner boxes [N,4,H,W] (x1, y1, x2, y2).

    Offsets pass through softplus and are scaled by the stride, so the four
    decoded distances are always positive.
    """
    n, _, h, w = box_raw.shape
    cx, cy = grid_centers(h, w, stride)
    dist = softplus_np(box_raw) * stride
    out = np.empty_like(box_raw)
    out[:, 0] = cx[None] - dist[:, 0]
    out[:, 1] = cy[None] - dist[:, 1]
    out[:, 2] = cx[None] + dist[:, 2]
    out[:, 3] = cy[None] + dist[:, 3]
    return out


@dataclass
class PositiveSample:
    level: int           # index into the level list
    image: int
    class_col: int       # zero-based class column
    iy: int
    ix: int
    gt_xyxy: tuple
    q: float


@dataclass
class Assignment:
    q_maps: list         # per level: [N, num_classes, H, W] target-quality arrays
    positives: list      # PositiveSample records

    def num_positives(self) -> int:
        return len(self.positives)


def _level_for(size: float, strides) -> int:
    if size <= 4 * strides[0]:
        return 0
    if size <= 8 * strides[0]:
        return 1
    return 2


def assign_targets(level_shapes, strides, gts_per_image, decoded_per_level,
                   num_classes: int, class_col=lambda cid: cid - 1) -> Assignment:
    """Produce per-level quality maps and the positive-sample list.

    level_shapes: per level (H, W). gts_per_image: per image, a list of
    BoxAnnotation. decoded_per_level: per level, decoded corner boxes
    [N,4,H,W] (constants; gradients never flow through q).
    """
    n_images = len(gts_per_image)
    q_maps = [np.zeros((n_images, num_classes, h, w)) for h, w in level_shapes]
    claims = {}  # (level, image, iy, ix) -> (area, order, class_col, gt_xyxy)

    for b, gts in enumerate(gts_per_image):
        for order, ann in enumerate(gts):
            x1, y1, x2, y2 = ann.xyxy
            lvl = _level_for(max(x2 - x1, y2 - y1), strides)
            h, w = level_shapes[lvl]
            stride = strides[lvl]
            ix = int(np.clip((x1 + x2) / 2.0 // stride, 0, w - 1))
            iy = int(np.clip((y1 + y2) / 2.0 // stride, 0, h - 1))
            px, py = (ix + 0.5) * stride, (iy + 0.5) * stride
            if not (x1 < px < x2 and y1 < py < y2):
                continue  # the cell center misses the box: no positive
            key = (lvl, b, iy, ix)
            entry = (ann.area, order, class_col(ann.category_id), (x1, y1, x2, y2))
            if key not in claims or entry[:2] < claims[key][:2]:
                claims[key] = entry

    positives = []
    for (lvl, b, iy, ix), (_, _, col, gt_xyxy) in sorted(claims.items()):
        pred = decoded_per_level[lvl][b, :, iy, ix]
        q = float(np.clip(iou(tuple(pred), gt_xyxy), 0.0, 1.0))
        q_maps[lvl][b, col, iy, ix] = q
        positives.append(PositiveSample(level=lvl, image=b, class_col=col,
                                        iy=iy, ix=ix, gt_xyxy=gt_xyxy, q=q))
    return Assignment(q_maps=q_maps, positives=positives)


def score_target_pairs(assignment: Assignment, prob_maps) -> list:
    """Flatten an assignment against predicted score maps into (p, q) pairs."""
    pairs = []
    for q_map, p_map in zip(assignment.q_maps, prob_maps):
        pairs.extend(ScoreTarget(float(p), float(q))
                     for p, q in zip(p_map.ravel(), q_map.ravel()))
    return pairs


def _nms_class(candidates, iou_threshold):
    """Greedy suppression; candidates are (score, flat_index, xyxy) tuples."""
    ranked = sorted(candidates, key=lambda c: (-c[0], c[1]))
    kept = []
    for cand in ranked:
        if all(iou(cand[2], k[2]) <= iou_threshold for k in kept):
            kept.append(cand)
    return kept


def decode_and_nms(level_outputs, strides, image_ids, score_threshold: float,
                   iou_threshold: float, max_dets: int = 100,
                   category_ids=None) -> list:
    """Turn raw head outputs into scored, suppressed detections.

    level_outputs: per level (cls_logits, box_raw) arrays of shape
    [N,K,H,W] and [N,4,H,W]. Candidate enumeration order (level, class,
    row, column) fixes the deterministic tie-break: equal scores keep the
    smaller enumeration index.
    """
    if not 0.0 <= score_threshold <= 1.0 or not 0.0 <= iou_threshold <= 1.0:
        raise ValueError("thresholds must lie in [0, 1]")
    n_images = len(image_ids)
    num_classes = level_outputs[0][0].shape[1]
    if category_ids is None:
        category_ids = list(range(1, num_classes + 1))

    decoded = [decode_boxes(box_raw, stride)
               for (_, box_raw), stride in zip(level_outputs, strides)]
    scores = [1.0 / (1.0 + np.exp(-logits)) for logits, _ in level_outputs]

    detections = []
    for b in range(n_images):
        per_class = {c: [] for c in range(num_classes)}
        flat = 0
        for lvl, (score_map, boxes) in enumerate(zip(scores, decoded)):
            _, k, h, w = score_map.shape
            for col in range(k):
                sc = score_map[b, col]
                keep = np.argwhere(sc >= score_threshold)
                for iy, ix in keep:
                    box = tuple(boxes[b, :, iy, ix])
                    per_class[col].append((float(sc[iy, ix]), flat + col * h * w + iy * w + ix, box))
            flat += k * h * w
        survivors = []
        for col in range(num_classes):
            survivors.extend((s, idx, box, col) for s, idx, box in
                             _nms_class(per_class[col], iou_threshold))
        survivors.sort(key=lambda c: (-c[0], c[1]))
        for s, _, (x1, y1, x2, y2), col in survivors[:max_dets]:
            detections.append(Detection(
                image_id=image_ids[b], category_id=category_ids[col],
                box=(float(x1), float(y1), float(x2 - x1), float(y2 - y1)),
                score=s))
    return detections
