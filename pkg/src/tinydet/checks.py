"""Randomised finite-difference suites for every differentiable block.

Each suite draws seeded random instances of one block, runs grad_check on
the tensors that matter (inputs, then the weightiest parameters), and
aggregates the worst relative error. The end-to-end suite differentiates
the full 1-image training loss with respect to a rotating subset of model
parameters, with the target assignment frozen at the evaluation point
(gradients never flow through the quality targets by design).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .assign import assign_targets, decode_boxes
from .coco import BoxAnnotation
from .cspok import CspokConfig, OkmConfig, cspok_block, init_cspok_arrays, init_okm_arrays, okm
from .errors import ConfigError
from .gradcheck import grad_check
from .losses import VflParams, ciou_terms, varifocal_loss_map
from .model import ModelConfig, build_model
from .spd import SpdConfig, init_spd_params, spd_conv
from .tensor import Tensor, conv2d, mul, sum_all, take_flat, wrap_leaves
from .train import training_loss

BLOCKS = ("conv2d", "spd", "okm", "cspok", "vfl", "ciou", "e2e")
MAX_COORDS = 60


@dataclass
class BlockReport:
    block: str
    instances: int
    max_rel_err: float
    passed: bool

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return (f"gradcheck {self.block}: {self.instances} instances, "
                f"max_rel_err={self.max_rel_err:.3e}: {status}")


def _merge(reports):
    return max(r.max_rel_err for r in reports), all(r.passed for r in reports)


def _check_many(fn_of, tensors, eps, tol, rng):
    """grad_check several closures; tensors is a list of (array, fn) pairs."""
    reports = []
    for arr, fn in tensors:
        reports.append(grad_check(fn, arr, epsilon=eps, tolerance=tol,
                                  max_coords=MAX_COORDS, rng=rng))
    return reports


def _conv2d_instance(rng, eps, tol):
    n = int(rng.integers(1, 3))
    c_in, c_out = int(rng.integers(1, 4)), int(rng.integers(1, 5))
    k = int(rng.choice([1, 3]))
    stride = int(rng.choice([1, 2]))
    pad = int(rng.integers(0, 2))
    h, w = int(rng.integers(5, 9)), int(rng.integers(5, 9))
    x0 = rng.normal(size=(n, c_in, h, w))
    w0 = rng.normal(size=(c_out, c_in, k, k))
    b0 = rng.normal(size=(1, c_out, 1, 1))
    out_shape = conv2d(Tensor(x0), Tensor(w0), Tensor(b0), stride, pad).shape
    coeffs = rng.normal(size=out_shape)

    def loss(x, w, b):
        return sum_all(mul(conv2d(x, w, b, stride, pad), coeffs))

    return _check_many(None, [
        (x0, lambda t: loss(t, Tensor(w0), Tensor(b0))),
        (w0, lambda t: loss(Tensor(x0), t, Tensor(b0))),
        (b0, lambda t: loss(Tensor(x0), Tensor(w0), t)),
    ], eps, tol, rng)


def _spd_instance(rng, eps, tol):
    c1, c2 = int(rng.integers(1, 3)), int(rng.integers(1, 5))
    k = int(rng.choice([1, 3]))
    size = int(rng.choice([4, 6, 8]))
    cfg = SpdConfig(in_channels=c1, out_channels=c2, scale=2, kernel_size=k)
    w0, b0 = init_spd_params(cfg, rng)
    x0 = rng.normal(size=(1, c1, size, size))
    coeffs = rng.normal(size=(1, c2, size // 2, size // 2))

    def loss(x, w, b):
        return sum_all(mul(spd_conv(x, cfg, w, b), coeffs))

    return _check_many(None, [
        (x0, lambda t: loss(t, Tensor(w0), Tensor(b0))),
        (w0, lambda t: loss(Tensor(x0), t, Tensor(b0))),
    ], eps, tol, rng)


def _okm_instance(rng, eps, tol):
    cfg = OkmConfig(local_kernel=int(rng.choice([1, 3])),
                    strip_kernel=int(rng.choice([3, 5, 7])),
                    global_enabled=bool(rng.integers(0, 2)),
                    residual=bool(rng.integers(0, 2)))
    c = int(rng.integers(2, 5))
    arrays = init_okm_arrays(cfg, c, rng, zero_branches=False)
    x0 = rng.normal(size=(1, c, 8, 8))
    coeffs = rng.normal(size=x0.shape)

    def loss_of_input(t):
        return sum_all(mul(okm(t, cfg, wrap_leaves(arrays)), coeffs))

    def loss_of(name):
        def fn(t):
            leaves = wrap_leaves(arrays)
            leaves[name] = t
            return sum_all(mul(okm(Tensor(x0), cfg, leaves), coeffs))
        return fn

    probes = [(x0, loss_of_input), (arrays["local.w"], loss_of("local.w"))]
    if cfg.global_enabled:
        probes.append((arrays["gate.w"], loss_of("gate.w")))
    return _check_many(None, probes, eps, tol, rng)


def _cspok_instance(rng, eps, tol):
    c_in = int(rng.choice([4, 6, 8]))
    c_out = int(rng.choice([c_in, max(2, c_in // 2)]))
    cfg = CspokConfig(in_channels=c_in, out_channels=c_out)
    arrays = init_cspok_arrays(cfg, rng, zero_branches=False)
    x0 = rng.normal(size=(1, c_in, 8, 8))
    coeffs = rng.normal(size=(1, c_out, 8, 8))

    def loss_of_input(t):
        return sum_all(mul(cspok_block(t, cfg, wrap_leaves(arrays)), coeffs))

    def loss_of_merge(t):
        leaves = wrap_leaves(arrays)
        leaves["merge.w"] = t
        return sum_all(mul(cspok_block(Tensor(x0), cfg, leaves), coeffs))

    return _check_many(None, [(x0, loss_of_input), (arrays["merge.w"], loss_of_merge)],
                       eps, tol, rng)


def _vfl_instance(rng, eps, tol):
    k = int(rng.integers(20, 50))
    p0 = rng.uniform(0.03, 0.97, size=(1, 1, 1, k))
    q = np.where(rng.uniform(size=p0.shape) < 0.5, 0.0, rng.uniform(size=p0.shape))
    params = VflParams(alpha=float(rng.uniform(0.3, 1.0)),
                       gamma=float(rng.choice([0.0, 1.0, 2.0, 3.0])),
                       reduction=str(rng.choice(["sum", "mean_pos"])))
    return _check_many(None, [(p0, lambda t: varifocal_loss_map(t, q, params))],
                       eps, tol, rng)


def _ciou_instance(rng, eps, tol):
    gx1, gy1 = rng.uniform(0, 4, size=2)
    gw, gh = rng.uniform(1.5, 5, size=2)
    gt = (gx1, gy1, gx1 + gw, gy1 + gh)
    pred = np.array([gx1 + rng.uniform(-0.4, 0.4), gy1 + rng.uniform(-0.4, 0.4),
                     gx1 + gw + rng.uniform(-0.4, 0.4), gy1 + gh + rng.uniform(-0.4, 0.4)])
    pred = pred.reshape(1, 1, 1, 4)

    def fn(t):
        px1, py1, px2, py2 = (take_flat(t, [i]) for i in range(4))
        return sum_all(ciou_terms(px1, py1, px2, py2, [gt]))

    return _check_many(None, [(pred, fn)], eps, tol, rng)


def _e2e_instance(rng, eps, tol, instance_index):
    cfg = ModelConfig(input_size=64, stem_width=4, stage_widths=(5, 6, 8, 10),
                      neck_width=6, cls_loss=str(rng.choice(["bce", "vfl", "focal"])),
                      seed=int(rng.integers(0, 1000)))
    model = build_model(cfg)
    images = rng.uniform(size=(1, 3, 64, 64))
    x, y = rng.uniform(5, 25, size=2)
    w, h = rng.uniform(18, 34, size=2)
    gts = [[BoxAnnotation(id=1, image_id=1, category_id=int(rng.integers(1, 4)),
                          box=(float(x), float(y), float(w), float(h)))]]

    fw0 = model.forward(images)
    strides = [lo.stride for lo in fw0.levels]
    shapes = [lo.cls_logits.shape[2:] for lo in fw0.levels]
    decoded = [decode_boxes(lo.box_raw.data, lo.stride) for lo in fw0.levels]
    frozen = assign_targets(shapes, strides, gts, decoded, cfg.num_classes)

    # only parameters the frozen loss depends on: cls path always, box heads
    # of levels that actually carry a positive
    probes = ["head8.cls.b", "stem.w", "neck.fuse3.w", "head16.cls.w"]
    probes.extend(f"head{strides[p.level]}.box.w" for p in frozen.positives)
    name = probes[instance_index % len(probes)]

    def fn(t):
        fw = model.forward(images, leaf_overrides={name: t})
        loss, _ = training_loss(fw, gts, cfg.num_classes, cfg.cls_loss,
                                lambda cid: cid - 1, assignment=frozen)
        return loss

    report = grad_check(fn, model.params[name], epsilon=eps, tolerance=tol,
                        max_coords=8, rng=rng)
    return [report]


def run_block_suite(block: str, instances: int = 20, epsilon: float = 1e-4,
                    tolerance: float = 1e-3, seed: int = 0) -> BlockReport:
    """Run one block's randomised gradient suite and aggregate the result."""
    builders = {
        "conv2d": _conv2d_instance,
        "spd": _spd_instance,
        "okm": _okm_instance,
        "cspok": _cspok_instance,
        "vfl": _vfl_instance,
        "ciou": _ciou_instance,
    }
    if block not in BLOCKS:
        raise ConfigError(f"unknown block '{block}'; choose from {BLOCKS}")
    block_tag = int.from_bytes(hashlib.sha256(block.encode()).digest()[:4], "little")
    rng = np.random.default_rng([seed, block_tag])
    reports = []
    for i in range(instances):
        if block == "e2e":
            reports.extend(_e2e_instance(rng, epsilon, tolerance, i))
        else:
            reports.extend(builders[block](rng, epsilon, tolerance))
    worst, ok = _merge(reports)
    return BlockReport(block=block, instances=instances, max_rel_err=worst, passed=ok)


def run_all_blocks(instances: int = 20, epsilon: float = 1e-4,
                   tolerance: float = 1e-3, seed: int = 0):
    return [run_block_suite(b, instances, epsilon, tolerance, seed) for b in BLOCKS]
