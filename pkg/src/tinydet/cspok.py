"""Cross-stage fusion block with a multi-branch omni-kernel mixer.

The block splits its input channels into a bypass half that crosses the
stage untouched and a processed half that runs through a 1x1 conv and the
omni-kernel mixer (OKM); the two are re-concatenated and mixed by a final
1x1 conv. The OKM combines, additively and in a fixed order, a local
depthwise conv, a pair of depthwise strip convs (1xk and kx1) for a large
receptive field, a sigmoid-gated global channel scaling, and a residual
path. Every branch ends in a zero-initialized output (its conv weights or
the global branch's per-channel scale), so a freshly built block perturbs
nothing: with the residual on, the mixer is exactly the identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import (
    Tensor, add, concat_channels, conv2d, global_avg_pool, mul, sigmoid,
    split_channels,
)


@dataclass
class OkmConfig:
    local_kernel: int = 3
    strip_kernel: int = 7
    global_enabled: bool = True
    residual: bool = True

    def __post_init__(self):
        for name, k in (("local_kernel", self.local_kernel), ("strip_kernel", self.strip_kernel)):
            if k < 1 or k % 2 == 0:
                raise ConfigError(f"okm {name} must be odd and positive; got {k}")


@dataclass
class CspokConfig:
    in_channels: int
    out_channels: int
    split_ratio: float = 0.5
    okm: OkmConfig = field(default_factory=OkmConfig)

    def __post_init__(self):
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError(f"split_ratio must lie in (0, 1); got {self.split_ratio}")
        if self.processed_channels < 1 or self.bypass_channels < 1:
            raise ConfigError(
                f"split_ratio {self.split_ratio} of {self.in_channels} channels leaves an empty branch")

    @property
    def processed_channels(self) -> int:
        return int(round(self.in_channels * self.split_ratio))

    @property
    def bypass_channels(self) -> int:
        return self.in_channels - self.processed_channels


def init_okm_arrays(config: OkmConfig, channels: int, rng: np.random.Generator,
                    zero_branches: bool = True) -> dict:
    """Parameter arrays for one OKM over `channels` channels.

    zero_branches keeps the prescribed identity-at-insertion init; pass
    False to draw small random branch weights (used by gradient checks).
    """
    kl, ks = config.local_kernel, config.strip_kernel
    c = channels

    def branch(shape, fan):
        if zero_branches:
            return np.zeros(shape)
        return rng.normal(0.0, np.sqrt(2.0 / fan), size=shape)

    params = {
        "local.w": branch((c, 1, kl, kl), kl * kl),
        "local.b": np.zeros((1, c, 1, 1)),
        "strip_h.w": branch((c, 1, 1, ks), ks),
        "strip_h.b": np.zeros((1, c, 1, 1)),
        "strip_v.w": branch((c, 1, ks, 1), ks),
        "strip_v.b": np.zeros((1, c, 1, 1)),
    }
    if config.global_enabled:
        params["gate.w"] = rng.normal(0.0, np.sqrt(2.0 / c), size=(c, c, 1, 1))
        params["gate.b"] = np.zeros((1, c, 1, 1))
        params["out_scale"] = (np.zeros((1, c, 1, 1)) if zero_branches
                               else rng.normal(0.0, 0.1, size=(1, c, 1, 1)))
    return params


def okm(x: Tensor, config: OkmConfig, params) -> Tensor:
    """Shape-preserving omni-kernel mixer.

    Branch sum order is fixed (local, strips, global, residual) so results
    do not depend on evaluation scheduling.
    """
    c = x.shape[1]
    kl, ks = config.local_kernel, config.strip_kernel
    local = conv2d(x, params["local.w"], params["local.b"], padding=kl // 2, groups=c)
    strip_h = conv2d(x, params["strip_h.w"], params["strip_h.b"], padding=(0, ks // 2), groups=c)
    strip_v = conv2d(x, params["strip_v.w"], params["strip_v.b"], padding=(ks // 2, 0), groups=c)
    out = add(local, add(strip_h, strip_v))
    if config.global_enabled:
        gate = sigmoid(conv2d(global_avg_pool(x), params["gate.w"], params["gate.b"]))
        out = add(out, mul(mul(x, gate), params["out_scale"]))
    if config.residual:
        out = add(out, x)
    return out


def init_cspok_arrays(config: CspokConfig, rng: np.random.Generator,
                      identity: bool = False, zero_branches: bool = True) -> dict:
    """Parameter arrays for a full block, OKM keys prefixed with "okm.".

    identity=True sets the processed-path and merge convs to unit mappings
    (requires out_channels == in_channels), which together with the zero
    OKM branches makes the whole block the identity map.
    """
    c1, c2, c_out = config.bypass_channels, config.processed_channels, config.out_channels
    if identity and c_out != config.in_channels:
        raise ConfigError("identity init needs out_channels == in_channels")

    def conv_init(c_to, c_from):
        if identity:
            return np.eye(c_to, c_from).reshape(c_to, c_from, 1, 1)
        std = np.sqrt(2.0 / c_from)
        return rng.normal(0.0, std, size=(c_to, c_from, 1, 1))

    params = {
        "proc.w": conv_init(c2, c2),
        "proc.b": np.zeros((1, c2, 1, 1)),
        "merge.w": conv_init(c_out, config.in_channels),
        "merge.b": np.zeros((1, c_out, 1, 1)),
    }
    for k, v in init_okm_arrays(config.okm, c2, rng, zero_branches=zero_branches).items():
        params["okm." + k] = v
    return params


def cspok_block(x: Tensor, config: CspokConfig, params, return_premerge: bool = False):
    """Split -> (bypass | conv + OKM) -> concat -> 1x1 merge conv.

    The bypass channels reach the pre-merge concatenation bit-exactly
    unchanged for any parameter values. With return_premerge=True the
    pre-merge concatenation is returned alongside the output.
    """
    if x.shape[1] != config.in_channels:
        raise ShapeError(f"block expects {config.in_channels} channels; got {x.shape[1]}")
    f1, f2 = split_channels(x, [config.bypass_channels, config.processed_channels])
    y = conv2d(f2, params["proc.w"], params["proc.b"])
    y = okm(y, config.okm, {k[4:]: v for k, v in params.items() if k.startswith("okm.")})
    premerge = concat_channels([f1, y])
    out = conv2d(premerge, params["merge.w"], params["merge.b"])
    return (out, premerge) if return_premerge else out
