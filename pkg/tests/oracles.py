"""Brute-force evaluation oracle, independent of the library's evaluator.

Everything here is re-derived from first principles with plain loops:
its own box overlap, its own greedy matching, and PR integration by
scanning the ranked list at every recall grid point. Kept deliberately
slow and obvious so it can arbitrate the fast implementation.
"""


def enumerate_instances(max_gts=4, max_dets=6, variants=6, seed=99):
    """Structured sweep over detection/GT counts and IoU shift patterns.

    GTs sit on a fixed grid; each detection copies some GT shifted to land
    in one of five IoU regimes (1.0, ~0.68, ~0.47, ~0.21, 0.0) or is pure
    background. Scores come from a seeded permutation so rank patterns
    vary. Yields (dets, gts) with dets = (image_id, class, score, xyxy)
    and gts = (image_id, class, xyxy, area).
    """
    import numpy as np

    rng = np.random.default_rng(seed)
    shifts = [(0.0, 0.0), (2.0, 0.0), (2.5, 2.5), (6.0, 3.0), (40.0, 40.0)]
    instances = []
    for n_gt in range(0, max_gts + 1):
        for n_det in range(0, max_dets + 1):
            for _ in range(variants):
                gts, dets = [], []
                for a in range(n_gt):
                    x, y = 20.0 * a, 15.0 * (a % 2)
                    size = 8.0 if a % 3 == 0 else 12.0   # mixes small/medium buckets
                    gts.append((0, 1 + (a % 2), (x, y, x + size, y + size), size * size))
                scores = rng.permutation(n_det + 1)[:n_det]
                for d in range(n_det):
                    if n_gt and rng.uniform() < 0.85:
                        target = int(rng.integers(0, n_gt))
                        dx, dy = shifts[int(rng.integers(0, len(shifts)))]
                        x1, y1, x2, y2 = gts[target][2]
                        box = (x1 + dx, y1 + dy, x2 + dx, y2 + dy)
                        cls = gts[target][1] if rng.uniform() < 0.9 else 3
                    else:
                        box = (70.0 + 5 * d, 70.0, 80.0 + 5 * d, 80.0)
                        cls = 1 + (d % 2)
                    dets.append((0, cls, 0.1 + 0.1 * float(scores[d]), box))
                instances.append((dets, gts))
    return instances


def box_overlap(a, b):
    # a, b are (x1, y1, x2, y2)
    w = min(a[2], b[2]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[1], b[1])
    if w <= 0 or h <= 0:
        return 0.0
    inter = w * h
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def oracle_match_one_group(dets, gts, thr):
    """Greedy matching for one image+class group.

    dets: list of (score, xyxy) already in input order. Returns the matched
    gt index (into gts) or None, aligned with dets sorted by descending
    score then input order.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][0], i))
    used = set()
    result = []
    for i in order:
        _, box = dets[i]
        candidates = []
        for gi, gt_box in enumerate(gts):
            if gi in used:
                continue
            v = box_overlap(box, gt_box)
            if v >= thr:
                candidates.append((v, gi))
        if candidates:
            best_v = max(v for v, _ in candidates)
            best_gi = min(gi for v, gi in candidates if v == best_v)
            used.add(best_gi)
            result.append((i, best_gi))
        else:
            result.append((i, None))
    return result


def oracle_ap(flags, total_gt):
    """101-point interpolated AP by direct scanning; None when no ground truth."""
    if total_gt == 0:
        return None
    if not flags:
        return 0.0
    points = []
    tp = fp = 0
    for f in flags:
        tp += 1 if f else 0
        fp += 0 if f else 1
        points.append((tp / total_gt, tp / (tp + fp)))
    acc = 0.0
    for k in range(101):
        r = k / 100.0
        best = 0.0
        for recall, precision in points:
            if recall >= r and precision > best:
                best = precision
        acc += best
    return acc / 101.0


def oracle_evaluate(dets, gts, class_ids, thresholds):
    """Full independent evaluation.

    dets: list of (image_id, class_id, score, xyxy)
    gts: list of (image_id, class_id, xyxy, area)
    Returns a dict with map_50_95, map_50, ap_small/medium/large, per_class,
    and tp/fp/fn at threshold 0.5, using the same bucket rule as the library:
    buckets restrict ground truths, and detections matched to out-of-bucket
    ground truths are dropped.
    """
    def bucket(area):
        if area < 32 ** 2:
            return "small"
        if area < 96 ** 2:
            return "medium"
        return "large"

    valid = [c for c in class_ids if any(g[1] == c for g in gts)]
    overall = {}
    buckets = {"small": {}, "medium": {}, "large": {}}
    tp_50 = 0

    for cls in valid:
        cls_gts = [g for g in gts if g[1] == cls]
        cls_dets = [(i, d) for i, d in enumerate(dets) if d[1] == cls]
        for thr in thresholds:
            ranked = []  # (sort_key, matched_gt or None)
            for image_id in sorted({g[0] for g in cls_gts} | {d[0] for _, d in cls_dets}):
                img_dets = [(i, d) for i, d in cls_dets if d[0] == image_id]
                img_gts = [g for g in cls_gts if g[0] == image_id]
                local = [(d[2], d[3]) for _, d in img_dets]
                for local_i, gi in oracle_match_one_group(local, [g[2] for g in img_gts], thr):
                    src_index, det = img_dets[local_i]
                    matched = img_gts[gi] if gi is not None else None
                    ranked.append(((-det[2], image_id, src_index), matched))
            ranked.sort(key=lambda r: r[0])
            matches = [m for _, m in ranked]

            overall.setdefault(thr, {})[cls] = oracle_ap(
                [m is not None for m in matches], len(cls_gts))
            if thr == 0.5:
                tp_50 += sum(m is not None for m in matches)
            for b in ("small", "medium", "large"):
                total_b = sum(bucket(g[3]) == b for g in cls_gts)
                if total_b == 0:
                    continue
                flags = [m is not None and bucket(m[3]) == b
                         for m in matches if m is None or bucket(m[3]) == b]
                buckets[b].setdefault(thr, {})[cls] = oracle_ap(flags, total_b)

    def mean(vals):
        vals = [v for v in vals if v is not None]
        return sum(vals) / len(vals) if vals else None

    per_threshold = [mean(overall[t].values()) for t in thresholds if t in overall]
    result = {
        "map_50_95": mean(per_threshold) if per_threshold else 0.0,
        "map_50": mean(overall[0.5].values()) if 0.5 in overall else 0.0,
        "per_class": {c: mean([overall[t].get(c) for t in thresholds if t in overall])
                      for c in valid},
        "tp_50": tp_50,
        "fp_50": len(dets) - tp_50,
        "fn_50": len(gts) - tp_50,
    }
    for b in ("small", "medium", "large"):
        per_t = [mean(buckets[b][t].values()) for t in thresholds if t in buckets[b]]
        result[f"ap_{b}"] = mean(per_t) if per_t else None
    if result["map_50_95"] is None:
        result["map_50_95"] = 0.0
    if result["map_50"] is None:
        result["map_50"] = 0.0
    return result
