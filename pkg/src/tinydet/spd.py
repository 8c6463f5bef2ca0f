"""Lossless downsampling: space-to-depth rearrangement plus a non-strided conv.

space_to_depth folds each scale x scale spatial block into the channel axis,
so downsampling discards nothing; a stride-1 convolution then mixes the
stacked channels back down. The channel layout is frozen: sub-lattice blocks
come first in row-major (i, j) order over the block offsets, and source
channels keep their order inside each block. For scale=2 that is
(f00, f01, f10, f11) with f_ij = x[..., i::2, j::2].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, conv2d, _op_output


@dataclass
class SpdConfig:
    """Shape contract for one space-to-depth downsampling block."""
    in_channels: int
    out_channels: int
    scale: int = 2
    kernel_size: int = 1

    def __post_init__(self):
        if self.scale < 2:
            raise ConfigError(f"spd scale must be >= 2; got {self.scale}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("spd channel counts must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"spd kernel must be odd; got {self.kernel_size}")


def _s2d_data(x, s):
    n, c, h, w = x.shape
    expanded = x.reshape(n, c, h // s, s, w // s, s)
    return np.ascontiguousarray(
        expanded.transpose(0, 3, 5, 1, 2, 4).reshape(n, s * s * c, h // s, w // s))


def _d2s_data(x, s):
    n, c_full, h, w = x.shape
    c = c_full // (s * s)
    expanded = x.reshape(n, s, s, c, h, w)
    return np.ascontiguousarray(
        expanded.transpose(0, 3, 4, 1, 5, 2).reshape(n, c, h * s, w * s))


def space_to_depth(x: Tensor, scale: int) -> Tensor:
    """Fold scale x scale spatial blocks into channels: (N,C,H,W) -> (N,s^2*C,H/s,W/s)."""
    s = int(scale)
    if s < 1:
        raise ConfigError(f"scale must be >= 1; got {scale}")
    if s == 1:
        return _op_output(x.data.copy(), (x,), lambda g: (g,))
    n, c, h, w = x.shape
    if h % s:
        raise ShapeError(f"height {h} is not divisible by scale {s}")
    if w % s:
        raise ShapeError(f"width {w} is not divisible by scale {s}")
    return _op_output(_s2d_data(x.data, s), (x,), lambda g: (_d2s_data(g, s),))


def depth_to_space(x: Tensor, scale: int) -> Tensor:
    """Exact inverse of space_to_depth: (N,s^2*C,H,W) -> (N,C,H*s,W*s)."""
    s = int(scale)
    if s < 1:
        raise ConfigError(f"scale must be >= 1; got {scale}")
    if s == 1:
        return _op_output(x.data.copy(), (x,), lambda g: (g,))
    c_full = x.shape[1]
    if c_full % (s * s):
        raise ShapeError(f"channel count {c_full} is not divisible by scale^2 = {s * s}")
    return _op_output(_d2s_data(x.data, s), (x,), lambda g: (_s2d_data(g, s),))


def init_spd_params(config: SpdConfig, rng: np.random.Generator):
    """He-normal weight and zero bias for the post-rearrangement convolution."""
    c_in = config.scale ** 2 * config.in_channels
    k = config.kernel_size
    std = np.sqrt(2.0 / (c_in * k * k))
    weight = rng.normal(0.0, std, size=(config.out_channels, c_in, k, k))
    bias = np.zeros((1, config.out_channels, 1, 1))
    return weight, bias


def spd_conv(x: Tensor, config: SpdConfig, weight: Tensor, bias: Tensor) -> Tensor:
    """space_to_depth followed by a stride-1 convolution that remixes channels."""
    s = config.scale
    k = config.kernel_size
    expected = (config.out_channels, s * s * config.in_channels, k, k)
    if weight.shape != expected:
        raise ShapeError(f"spd_conv weight must have shape {expected}; got {weight.shape}")
    if x.shape[1] != config.in_channels:
        raise ShapeError(f"spd_conv expects {config.in_channels} input channels; got {x.shape[1]}")
    return conv2d(space_to_depth(x, s), weight, bias, stride=1, padding=k // 2)
