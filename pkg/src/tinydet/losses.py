"""Classification and box-regression objectives.

The varifocal loss treats positives and negatives asymmetrically: a
positive sample (target quality q > 0) contributes q-weighted binary
cross-entropy against the soft target q, while a negative contributes a
focally down-weighted term alpha * p^gamma * log(1-p). Probabilities are
clamped to [eps, 1-eps] before any logarithm.

Boxes are (x_min, y_min, x_max, y_max). The CIoU loss keeps its
aspect-ratio tradeoff coefficient inside the differentiation graph so that
analytic gradients agree with central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError
from .tensor import (
    Tensor, add, arctan, clamp, div, log, maximum, minimum, mul, pow_const,
    relu, scale, sub, sum_all, take_flat,
)

_QUARTER_PI_SQ = 4.0 / math.pi ** 2


@dataclass
class VflParams:
    alpha: float = 0.75
    gamma: float = 2.0
    epsilon: float = 1e-7
    reduction: str = "mean_pos"   # "sum" or "mean_pos" (sum / max(1, positives))

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in (0, 1]; got {self.alpha}")
        if self.gamma < 0.0:
            raise ConfigError(f"gamma must be >= 0; got {self.gamma}")
        if not 0.0 < self.epsilon < 1e-3:
            raise ConfigError(f"epsilon must lie in (0, 1e-3); got {self.epsilon}")
        if self.reduction not in ("sum", "mean_pos"):
            raise ConfigError(f"unknown reduction '{self.reduction}'")


@dataclass
class ScoreTarget:
    """One predicted score p with its target quality q (q > 0 marks a positive)."""
    p: float
    q: float


def _check_unit_interval(arr, name):
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError(f"{name} values must lie in [0, 1]")


def varifocal_loss_map(p: Tensor, q, params: VflParams = VflParams()) -> Tensor:
    """Varifocal loss over a score tensor and a same-shape quality array.

    Differentiable w.r.t. p; q is a constant target. Returns a scalar
    tensor reduced per params.reduction.
    """
    q = np.asarray(q, dtype=np.float64)
    if q.shape != p.shape:
        raise DomainError(f"q shape {q.shape} must match p shape {p.shape}")
    _check_unit_interval(p.data, "p")
    _check_unit_interval(q, "q")

    pc = clamp(p, params.epsilon, 1.0 - params.epsilon)
    log_p = log(pc)
    log_1mp = log(sub(1.0, pc))
    pos = (q > 0.0).astype(np.float64)

    # positives: -q * (q log p + (1-q) log(1-p)); negatives: -alpha p^gamma log(1-p)
    pos_term = mul(add(mul(log_p, q), mul(log_1mp, 1.0 - q)), -q * pos)
    neg_term = mul(mul(pow_const(pc, params.gamma), log_1mp), -params.alpha * (1.0 - pos))
    total = sum_all(add(pos_term, neg_term))
    if params.reduction == "mean_pos":
        total = scale(total, 1.0 / max(1.0, pos.sum()))
    return total


def varifocal_loss(pairs, params: VflParams = VflParams(), tape=None) -> Tensor:
    """Varifocal loss over explicit (p, q) score/target pairs."""
    pairs = list(pairs)
    if not pairs:
        raise DomainError("varifocal_loss needs at least one pair")
    p = Tensor(np.array([st.p for st in pairs]).reshape(1, 1, 1, -1), tape)
    q = np.array([st.q for st in pairs]).reshape(1, 1, 1, -1)
    return varifocal_loss_map(p, q, params)


def focal_loss(p: float, y: int, alpha: float = 0.25, gamma: float = 2.0,
               alpha_on_negative: bool = False, epsilon: float = 1e-7) -> float:
    """Binary focal loss for one score.

    y=1: -alpha (1-p)^gamma log p. y=0: -(1-alpha) p^gamma log(1-p), or
    -alpha p^gamma log(1-p) with alpha_on_negative (the weighting used to
    cross-check the varifocal negative branch).
    """
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"p must lie in [0, 1]; got {p}")
    if y not in (0, 1):
        raise DomainError(f"y must be 0 or 1; got {y}")
    pc = min(max(p, epsilon), 1.0 - epsilon)
    if y == 1:
        return -alpha * (1.0 - pc) ** gamma * math.log(pc)
    neg_weight = alpha if alpha_on_negative else (1.0 - alpha)
    return -neg_weight * pc ** gamma * math.log(1.0 - pc)


def focal_loss_map(p: Tensor, y, alpha: float = 0.25, gamma: float = 2.0,
                   alpha_on_negative: bool = False, epsilon: float = 1e-7) -> Tensor:
    """Summed focal loss over a score tensor and a binary target array."""
    y = np.asarray(y, dtype=np.float64)
    _check_unit_interval(p.data, "p")
    pc = clamp(p, epsilon, 1.0 - epsilon)
    pos = (y > 0.0).astype(np.float64)
    neg_weight = alpha if alpha_on_negative else (1.0 - alpha)
    pos_term = mul(mul(pow_const(sub(1.0, pc), gamma), log(pc)), -alpha * pos)
    neg_term = mul(mul(pow_const(pc, gamma), log(sub(1.0, pc))), -neg_weight * (1.0 - pos))
    return sum_all(add(pos_term, neg_term))


def bce_loss_map(p: Tensor, y, epsilon: float = 1e-7) -> Tensor:
    """Summed binary cross-entropy over a score tensor and a binary target array."""
    y = np.asarray(y, dtype=np.float64)
    _check_unit_interval(p.data, "p")
    pc = clamp(p, epsilon, 1.0 - epsilon)
    return sum_all(mul(add(mul(log(pc), y), mul(log(sub(1.0, pc)), 1.0 - y)), -1.0))


# ---------------------------------------------------------------------------
# box geometry

def _check_box(box, name):
    x1, y1, x2, y2 = (float(v) for v in box)
    if x2 < x1 or y2 < y1:
        raise DomainError(f"{name} has inverted coordinates: {tuple(box)}")
    return x1, y1, x2, y2


def iou(a, b) -> float:
    """Intersection over union of two corner-form boxes; 0 when disjoint."""
    ax1, ay1, ax2, ay2 = _check_box(a, "box a")
    bx1, by1, bx2, by2 = _check_box(b, "box b")
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union if union > 0.0 else 0.0


def ciou_terms(px1, py1, px2, py2, gt_boxes) -> Tensor:
    """Elementwise CIoU loss for predicted corner tensors against constant GT boxes.

    gt_boxes is an array-like of shape (K, 4); the four predicted corner
    tensors have K elements each. Predicted extents must be positive.
    """
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    k = gt.shape[0]
    gx1, gy1, gx2, gy2 = (gt[:, i].reshape(1, 1, 1, k) for i in range(4))

    iw = relu(sub(minimum(px2, gx2), maximum(px1, gx1)))
    ih = relu(sub(minimum(py2, gy2), maximum(py1, gy1)))
    inter = mul(iw, ih)
    area_p = mul(sub(px2, px1), sub(py2, py1))
    area_g = (gx2 - gx1) * (gy2 - gy1)
    union = sub(add(area_p, area_g), inter)
    iou_t = div(inter, union)

    # center-distance penalty, normalised by the enclosing-box diagonal
    pcx = scale(add(px1, px2), 0.5)
    pcy = scale(add(py1, py2), 0.5)
    gcx, gcy = (gx1 + gx2) * 0.5, (gy1 + gy2) * 0.5
    rho2 = add(pow_const(sub(pcx, gcx), 2.0), pow_const(sub(pcy, gcy), 2.0))
    ew = sub(maximum(px2, gx2), minimum(px1, gx1))
    eh = sub(maximum(py2, gy2), minimum(py1, gy1))
    c2 = add(pow_const(ew, 2.0), pow_const(eh, 2.0))

    # aspect-ratio penalty; the tradeoff coefficient stays in the graph
    g_atan = np.arctan((gx2 - gx1) / (gy2 - gy1))
    p_atan = arctan(div(sub(px2, px1), sub(py2, py1)))
    v = scale(pow_const(sub(g_atan, p_atan), 2.0), _QUARTER_PI_SQ)
    alpha = div(v, add(add(sub(1.0, iou_t), v), 1e-9))

    return add(add(sub(1.0, iou_t), div(rho2, c2)), mul(alpha, v))


def ciou_loss(pred, gt, tape=None) -> Tensor:
    """CIoU loss between one predicted box and one ground-truth box.

    Differentiable w.r.t. the predicted coordinates; exactly zero when the
    boxes coincide.
    """
    _check_box(pred, "pred")
    _check_box(gt, "gt")
    t = Tensor(np.asarray(pred, dtype=np.float64).reshape(1, 1, 1, 4), tape)
    px1, py1, px2, py2 = (take_flat(t, [i]) for i in range(4))
    return sum_all(ciou_terms(px1, py1, px2, py2, [gt]))
