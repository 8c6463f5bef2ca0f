"""Desk-scale anchor-free detector.

Backbone: a stride-2 stem then four stride-2 stages build the pyramid
levels P1..P5. One configurable downsample can be swapped from a strided
3x3 conv to the lossless space-to-depth block. Neck: top-down fusion over
the three head levels, each fusion unit either a plain 1x1 mixing conv or
the cross-stage omni-kernel block. Heads are decoupled: per level,
separate 3x3 trunks feed 1x1 convs for class logits and box offsets, so
the two objectives do not fight over one feature stack. All parameters are
plain arrays initialised per-name from the config seed, so two configs
that share a parameter name initialise it identically.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .cspok import CspokConfig, OkmConfig, cspok_block, init_cspok_arrays
from .errors import ConfigError, ShapeError
from .spd import SpdConfig, spd_conv
from .tensor import Tensor, concat_channels, conv2d, silu, upsample_nearest, wrap_leaves

CLS_PRIOR = 0.01  # initial positive-score prior for the classification bias

CLS_LOSSES = ("vfl", "focal", "bce")


@dataclass
class ModelConfig:
    """Everything that determines the network and its training objective."""
    input_size: int = 128
    num_classes: int = 3
    stem_width: int = 8
    stage_widths: tuple = (12, 16, 24, 32)   # P2, P3, P4, P5
    stage_depth: int = 1
    neck_width: int = 16
    strides: tuple = (8, 16, 32)
    spd_enabled: bool = False
    spd_stage: int = 2                       # downsample consuming P<spd_stage>
    cspok_enabled: bool = False
    cspok_split_ratio: float = 0.5
    okm_local_kernel: int = 3
    okm_strip_kernel: int = 7
    cls_loss: str = "bce"
    seed: int = 0

    def __post_init__(self):
        if len(self.stage_widths) != 4 or any(w < 1 for w in self.stage_widths):
            raise ConfigError(f"stage_widths must be four positive ints; got {self.stage_widths}")
        if len(self.strides) != 3 or any(b != 2 * a for a, b in zip(self.strides, self.strides[1:])):
            raise ConfigError(f"strides must be three octave-spaced values; got {self.strides}")
        for s in self.strides:
            if s & (s - 1) or s > 32 or s < 4:
                raise ConfigError(f"stride {s} must be a power of two in [4, 32]")
        if self.input_size % max(self.strides):
            raise ConfigError(
                f"input_size {self.input_size} must be divisible by the largest stride {max(self.strides)}")
        if self.spd_stage not in (1, 2, 3, 4):
            raise ConfigError(f"spd_stage must be one of 1..4; got {self.spd_stage}")
        if self.cls_loss not in CLS_LOSSES:
            raise ConfigError(f"cls_loss must be one of {CLS_LOSSES}; got '{self.cls_loss}'")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    def with_arm(self, spd: bool, cspok: bool, cls_loss: str) -> "ModelConfig":
        return replace(self, spd_enabled=spd, cspok_enabled=cspok, cls_loss=cls_loss)


@dataclass
class LevelOutput:
    stride: int
    cls_logits: Tensor   # [N, num_classes, H, W]
    box_raw: Tensor      # [N, 4, H, W] raw offsets, decoded via softplus * stride


@dataclass
class ForwardResult:
    levels: list
    leaves: dict         # parameter name -> leaf Tensor on the forward tape


def _param_rng(seed: int, name: str) -> np.random.Generator:
    digest = hashlib.sha256(name.encode("ascii")).digest()
    return np.random.default_rng([seed, int.from_bytes(digest[:8], "little")])


def _conv_arrays(seed, name, c_out, c_in, k):
    rng = _param_rng(seed, name)
    std = math.sqrt(2.0 / (c_in * k * k))
    return {f"{name}.w": rng.normal(0.0, std, size=(c_out, c_in, k, k)),
            f"{name}.b": np.zeros((1, c_out, 1, 1))}


class Model:
    """Parameter container plus the pure forward pass."""

    def __init__(self, config: ModelConfig, params: dict):
        self.config = config
        self.params = params
        c = config
        self._head_levels = [int(math.log2(s)) for s in c.strides]
        self._spd_cfgs = {}
        widths = {1: c.stem_width}
        for lvl, w in zip((2, 3, 4, 5), c.stage_widths):
            widths[lvl] = w
        self._widths = widths
        if c.spd_enabled:
            src = c.spd_stage
            self._spd_cfgs[src + 1] = SpdConfig(in_channels=widths[src],
                                                out_channels=widths[src + 1], scale=2)
        self._cspok_cfg = CspokConfig(
            in_channels=2 * c.neck_width, out_channels=c.neck_width,
            split_ratio=c.cspok_split_ratio,
            okm=OkmConfig(local_kernel=c.okm_local_kernel, strip_kernel=c.okm_strip_kernel),
        ) if c.cspok_enabled else None

    def num_params(self) -> int:
        return int(sum(a.size for a in self.params.values()))

    def forward(self, images: np.ndarray, tape=None, leaf_overrides=None) -> ForwardResult:
        """Map [N,3,H,W] pixels to per-level class logits and box offsets.

        leaf_overrides substitutes already-wrapped tensors for named
        parameters (gradient probes differentiate one parameter that way).
        """
        if images.ndim != 4 or images.shape[1] != 3:
            raise ShapeError(f"expected images of shape [N,3,H,W]; got {images.shape}")
        if images.shape[2] % max(self.config.strides) or images.shape[3] % max(self.config.strides):
            raise ShapeError(
                f"image extent {images.shape[2:]} must be a multiple of the largest stride")
        leaves = wrap_leaves(self.params, tape)
        if leaf_overrides:
            leaves.update(leaf_overrides)

        def cv(x, name, stride=1, act=True, groups=1):
            w = leaves[f"{name}.w"]
            pad = (w.shape[2] // 2, w.shape[3] // 2)
            y = conv2d(x, w, leaves[f"{name}.b"], stride=stride, padding=pad, groups=groups)
            return silu(y) if act else y

        x = cv(Tensor(images), "stem", stride=2)
        feats = {1: x}
        for lvl in (2, 3, 4, 5):
            if lvl in self._spd_cfgs:
                y = spd_conv(x, self._spd_cfgs[lvl],
                             leaves[f"p{lvl}.spd.w"], leaves[f"p{lvl}.spd.b"])
                y = silu(y)
            else:
                y = cv(x, f"p{lvl}.down", stride=2)
            for d in range(self.config.stage_depth):
                y = cv(y, f"p{lvl}.r{d}")
            feats[lvl] = y
            x = y

        lats = [cv(feats[lvl], f"neck.lat{lvl}", act=False) for lvl in self._head_levels]
        ups = [None, None, lats[2]]
        for i in (1, 0):
            merged = concat_channels([lats[i], upsample_nearest(ups[i + 1], 2)])
            name = f"neck.fuse{self._head_levels[i]}"
            if self._cspok_cfg is not None:
                prefix = name + "."
                block_params = {k[len(prefix):]: v for k, v in leaves.items()
                                if k.startswith(prefix)}
                ups[i] = silu(cspok_block(merged, self._cspok_cfg, block_params))
            else:
                ups[i] = cv(merged, name)

        outputs = []
        for stride, u in zip(self.config.strides, ups):
            outputs.append(LevelOutput(
                stride=stride,
                cls_logits=cv(cv(u, f"head{stride}.cls_trunk"), f"head{stride}.cls", act=False),
                box_raw=cv(cv(u, f"head{stride}.box_trunk"), f"head{stride}.box", act=False),
            ))
        return ForwardResult(levels=outputs, leaves=leaves)


def build_model(config: ModelConfig) -> Model:
    """Deterministically initialise every parameter named by the config."""
    c = config
    seed = c.seed
    params = {}
    params.update(_conv_arrays(seed, "stem", c.stem_width, 3, 3))

    widths = {1: c.stem_width, 2: c.stage_widths[0], 3: c.stage_widths[1],
              4: c.stage_widths[2], 5: c.stage_widths[3]}
    for lvl in (2, 3, 4, 5):
        w_in, w_out = widths[lvl - 1], widths[lvl]
        if c.spd_enabled and c.spd_stage == lvl - 1:
            rng = _param_rng(seed, f"p{lvl}.spd")
            std = math.sqrt(2.0 / (4 * w_in))
            params[f"p{lvl}.spd.w"] = rng.normal(0.0, std, size=(w_out, 4 * w_in, 1, 1))
            params[f"p{lvl}.spd.b"] = np.zeros((1, w_out, 1, 1))
        else:
            params.update(_conv_arrays(seed, f"p{lvl}.down", w_out, w_in, 3))
        for d in range(c.stage_depth):
            params.update(_conv_arrays(seed, f"p{lvl}.r{d}", w_out, w_out, 3))

    head_levels = [int(math.log2(s)) for s in c.strides]
    for lvl in head_levels:
        params.update(_conv_arrays(seed, f"neck.lat{lvl}", c.neck_width, widths[lvl], 1))
    for lvl in head_levels[:2]:
        name = f"neck.fuse{lvl}"
        if c.cspok_enabled:
            cfg = CspokConfig(in_channels=2 * c.neck_width, out_channels=c.neck_width,
                              split_ratio=c.cspok_split_ratio,
                              okm=OkmConfig(local_kernel=c.okm_local_kernel,
                                            strip_kernel=c.okm_strip_kernel))
            for k, v in init_cspok_arrays(cfg, _param_rng(seed, name)).items():
                params[f"{name}.{k}"] = v
        else:
            params.update(_conv_arrays(seed, name, c.neck_width, 2 * c.neck_width, 1))

    for stride in c.strides:
        params.update(_conv_arrays(seed, f"head{stride}.cls_trunk", c.neck_width, c.neck_width, 3))
        params.update(_conv_arrays(seed, f"head{stride}.box_trunk", c.neck_width, c.neck_width, 3))
        params.update(_conv_arrays(seed, f"head{stride}.cls", c.num_classes, c.neck_width, 1))
        params[f"head{stride}.cls.b"][:] = -math.log((1.0 - CLS_PRIOR) / CLS_PRIOR)
        params.update(_conv_arrays(seed, f"head{stride}.box", 4, c.neck_width, 1))

    return Model(config, params)
