"""Loss assembly, the SGD training demo, and the four-arm ablation harness.

Training is deliberately plain: full-precision SGD (momentum 0.9, global
gradient-norm clipping) with a cosine-decayed step and no augmentation, so
a fixed seed fixes the dataset order, the initialisation, and the whole
trajectory bit-exactly. The classification loss runs over every grid point
with the assigned quality targets; the box loss runs over positive points
only; both are summed and divided by the positive count.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np

from .assign import assign_targets, decode_and_nms, decode_boxes
from .errors import TrainingDiverged
from .evaluation import EvalResult, evaluate
from .losses import VflParams, bce_loss_map, ciou_terms, focal_loss_map, varifocal_loss_map
from .model import Model, ModelConfig, build_model
from .tensor import Tape, add, backward, scale, sigmoid, softplus, sub, sum_all, take_flat


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    eval_result: EvalResult


def _prepare_images(dataset, max_stride):
    """uint8 HWC images -> float CHW in [0,1], padded to a stride multiple."""
    out = []
    for img in dataset.images:
        arr = img.astype(np.float64) / 255.0
        h, w = arr.shape[:2]
        ph = (-h) % max_stride
        pw = (-w) % max_stride
        if ph or pw:
            arr = np.pad(arr, ((0, ph), (0, pw), (0, 0)), mode="edge")
        out.append(arr.transpose(2, 0, 1))
    return out


def _gts_per_image(dataset):
    order = {im.id: i for i, im in enumerate(dataset.coco_images)}
    gts = [[] for _ in order]
    for ann in dataset.annotations:
        gts[order[ann.image_id]].append(ann)
    return gts


def training_loss(fw, gts_per_image, num_classes, cls_loss, class_col,
                  assignment=None):
    """Total classification + box loss for one forward pass.

    Returns (scalar loss tensor, assignment). q targets are recomputed
    from the current decoded boxes and enter the loss as constants; pass a
    precomputed assignment to freeze them (gradient checks need the frozen
    map, since the analytic gradient never flows through q).
    """
    if assignment is None:
        strides = [lo.stride for lo in fw.levels]
        shapes = [lo.cls_logits.shape[2:] for lo in fw.levels]
        decoded = [decode_boxes(lo.box_raw.data, lo.stride) for lo in fw.levels]
        assignment = assign_targets(shapes, strides, gts_per_image, decoded,
                                    num_classes, class_col=class_col)

    total = None
    for lo, q_map in zip(fw.levels, assignment.q_maps):
        p = sigmoid(lo.cls_logits)
        if cls_loss == "vfl":
            term = varifocal_loss_map(p, q_map, VflParams(reduction="sum"))
        elif cls_loss == "focal":
            term = focal_loss_map(p, q_map > 0)
        else:
            term = bce_loss_map(p, q_map > 0)
        total = term if total is None else add(total, term)

    by_level = {}
    for pos in assignment.positives:
        by_level.setdefault(pos.level, []).append(pos)
    for lvl, positives in sorted(by_level.items()):
        lo = fw.levels[lvl]
        _, _, h, w = lo.box_raw.shape
        stride = lo.stride
        cx = np.array([(p.ix + 0.5) * stride for p in positives]).reshape(1, 1, 1, -1)
        cy = np.array([(p.iy + 0.5) * stride for p in positives]).reshape(1, 1, 1, -1)

        def gather(ch):
            idx = [((p.image * 4 + ch) * h + p.iy) * w + p.ix for p in positives]
            return scale(softplus(take_flat(lo.box_raw, idx)), stride)

        px1 = sub(cx, gather(0))
        py1 = sub(cy, gather(1))
        px2 = add(cx, gather(2))
        py2 = add(cy, gather(3))
        gt_boxes = [p.gt_xyxy for p in positives]
        total = add(total, sum_all(ciou_terms(px1, py1, px2, py2, gt_boxes)))

    loss = scale(total, 1.0 / max(1, assignment.num_positives()))
    return loss, assignment


def _evaluate_split(model, images, gts_per_image, image_ids, idxs, categories,
                    score_threshold, nms_iou):
    if not idxs:
        return evaluate([], [], categories)
    batch = np.stack([images[i] for i in idxs])
    fw = model.forward(batch)
    level_arrays = [(lo.cls_logits.data, lo.box_raw.data) for lo in fw.levels]
    dets = decode_and_nms(level_arrays, [lo.stride for lo in fw.levels],
                          [image_ids[i] for i in idxs], score_threshold, nms_iou,
                          category_ids=[c.id for c in categories])
    gts = [g for i in idxs for g in gts_per_image[i]]
    return evaluate(dets, gts, categories)


def train_demo(config: ModelConfig, dataset, epochs: int, lr: float,
               batch_size: int = 8, momentum: float = 0.9, clip_norm: float = 10.0,
               score_threshold: float = 0.10, nms_iou: float = 0.5,
               model: Optional[Model] = None):
    """Train on the dataset and evaluate each epoch on the held-out split.

    SGD with momentum (set momentum=0 for the plain variant), global
    gradient-norm clipping, and a cosine-decayed step. The held-out split
    is every fifth image; datasets too small to yield one (fewer than five
    images) are evaluated on the training images. Returns a list of
    EpochRecord; zero epochs returns an empty history.
    """
    if not dataset.images:
        raise TrainingDiverged("dataset is empty")
    model = model if model is not None else build_model(config)
    max_stride = max(config.strides)
    images = _prepare_images(dataset, max_stride)
    gts = _gts_per_image(dataset)
    image_ids = [im.id for im in dataset.coco_images]
    categories = sorted(dataset.categories, key=lambda c: c.id)
    col_of = {c.id: i for i, c in enumerate(categories)}
    class_col = col_of.__getitem__
    num_classes = config.num_classes
    if len(categories) > num_classes:
        raise TrainingDiverged(
            f"dataset has {len(categories)} categories but the model predicts {num_classes}")

    val_idx = [i for i in range(len(images)) if i % 5 == 4]
    train_idx = [i for i in range(len(images)) if i % 5 != 4]
    if not val_idx:
        val_idx = list(train_idx)

    rng = np.random.default_rng([config.seed, 0x7EA1])
    steps_per_epoch = math.ceil(len(train_idx) / batch_size)
    total_steps = max(1, epochs * steps_per_epoch)
    velocity = {name: np.zeros_like(arr) for name, arr in model.params.items()}
    history, step = [], 0

    for epoch in range(epochs):
        order = rng.permutation(len(train_idx))
        losses = []
        for start in range(0, len(order), batch_size):
            chosen = [train_idx[i] for i in order[start:start + batch_size]]
            tape = Tape()
            fw = model.forward(np.stack([images[i] for i in chosen]), tape)
            loss, _ = training_loss(fw, [gts[i] for i in chosen], num_classes,
                                    config.cls_loss, class_col)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch} step {step}")
            backward(tape, loss)
            lr_t = lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))
            gnorm = math.sqrt(sum(float((leaf.grad ** 2).sum())
                                  for leaf in fw.leaves.values()))
            clip = min(1.0, clip_norm / gnorm) if clip_norm and gnorm > 0 else 1.0
            for name, leaf in fw.leaves.items():
                v = velocity[name]
                v *= momentum
                v += clip * leaf.grad
                model.params[name] -= lr_t * v
            losses.append(value)
            step += 1
        eval_result = _evaluate_split(model, images, gts, image_ids, val_idx,
                                      categories, score_threshold, nms_iou)
        history.append(EpochRecord(epoch=epoch, loss=float(np.mean(losses)),
                                   eval_result=eval_result))
    return history


def evaluate_untrained(config: ModelConfig, dataset, score_threshold=0.10, nms_iou=0.5):
    """Metrics of a freshly initialised model on the held-out split."""
    model = build_model(config)
    images = _prepare_images(dataset, max(config.strides))
    gts = _gts_per_image(dataset)
    image_ids = [im.id for im in dataset.coco_images]
    categories = sorted(dataset.categories, key=lambda c: c.id)
    val_idx = [i for i in range(len(images)) if i % 5 == 4] or list(range(len(images)))
    return _evaluate_split(model, images, gts, image_ids, val_idx, categories,
                           score_threshold, nms_iou)


ABLATION_ARMS = (
    ("baseline", False, False, "bce"),
    ("+spd", True, False, "bce"),
    ("+spd+cspok", True, True, "bce"),
    ("+spd+cspok+vfl", True, True, "vfl"),
)


def config_hash(config: ModelConfig) -> str:
    doc = asdict(config)
    doc.pop("seed")
    return hashlib.sha256(json.dumps(doc, sort_keys=True, default=list).encode()).hexdigest()[:16]


def ablate(dataset, seeds, base_config: Optional[ModelConfig] = None,
           epochs: int = 30, lr: float = 8e-3, batch_size: int = 4,
           score_threshold: float = 0.10, nms_iou: float = 0.5) -> dict:
    """Train the four incremental arms under shared seeds and budgets.

    Arms: baseline, +spd, +spd+cspok, +spd+cspok+vfl. Metrics are averaged
    over seeds; per-seed values are kept in the report.
    """
    from . import __version__

    if not seeds:
        raise TrainingDiverged("ablation needs at least one seed")
    base = base_config if base_config is not None else ModelConfig()

    def metrics_of(res: EvalResult):
        return {"map_50": res.map_50, "map_50_95": res.map_50_95, "ap_small": res.ap_small}

    arms = []
    for name, spd, cspok, cls_loss in ABLATION_ARMS:
        per_seed = []
        for seed in seeds:
            config = replace(base.with_arm(spd, cspok, cls_loss), seed=int(seed))
            if epochs == 0:
                final = evaluate_untrained(config, dataset, score_threshold, nms_iou)
            else:
                history = train_demo(config, dataset, epochs, lr, batch_size=batch_size,
                                     score_threshold=score_threshold, nms_iou=nms_iou)
                final = history[-1].eval_result
            per_seed.append({"seed": int(seed), **metrics_of(final)})

        def mean_of(key):
            vals = [r[key] for r in per_seed if r[key] is not None]
            return float(np.mean(vals)) if vals else None

        arms.append({
            "name": name, "spd": spd, "cspok": cspok, "cls_loss": cls_loss,
            "metrics": {k: mean_of(k) for k in ("map_50", "map_50_95", "ap_small")},
            "per_seed": per_seed,
        })

    return {
        "engine": {"name": "tinydet", "version": __version__},
        "optimizer": "sgd (momentum 0.9, grad-norm clip 10), cosine-decayed step",
        "seeds": [int(s) for s in seeds],
        "epochs": epochs,
        "lr": lr,
        "base_config_hash": config_hash(base),
        "arms": arms,
    }
