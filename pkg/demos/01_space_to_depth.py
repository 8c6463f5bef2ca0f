#!/usr/bin/env python3
"""Lossless downsampling: fold pixels into channels instead of discarding them.

A strided convolution throws away three quarters of the positions it
skips. Space-to-depth keeps every value: each 2x2 spatial block becomes
four channels, so a conv can then mix them at full information content.
"""
import numpy as np

from tinydet import Tensor, depth_to_space, space_to_depth, spd_conv
from tinydet.spd import SpdConfig, init_spd_params

# a tiny single-channel image with recognisable values
x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4))
print("input 4x4:")
print(x.data[0, 0])

# fold with scale 2: one channel becomes four, each a sub-lattice
folded = space_to_depth(x, 2)
print("\nfolded to", folded.shape, "- channel blocks are the four sub-lattices:")
for c in range(4):
    print(f"  channel {c} (offset {divmod(c, 2)}):", folded.data[0, c].ravel())

# nothing was lost: the inverse rearrangement restores the input bit for bit
restored = depth_to_space(folded, 2)
assert np.array_equal(restored.data, x.data)
print("\nround-trip restores the input bit-exactly:", np.array_equal(restored.data, x.data))

# the full block follows the fold with a stride-1 conv; an identity kernel
# makes the block output the raw fold, which is handy for inspecting it
cfg = SpdConfig(in_channels=1, out_channels=4, scale=2)
eye = Tensor(np.eye(4).reshape(4, 4, 1, 1))
zero_bias = Tensor(np.zeros((1, 4, 1, 1)))
block_out = spd_conv(x, cfg, eye, zero_bias)
print("identity-kernel block equals the raw fold:",
      np.array_equal(block_out.data, folded.data))

# with a trained-style random kernel the block halves H and W while keeping
# every input value in play
cfg = SpdConfig(in_channels=3, out_channels=8, scale=2)
w, b = init_spd_params(cfg, np.random.default_rng(0))
y = spd_conv(Tensor(np.random.default_rng(1).normal(size=(1, 3, 8, 8))),
             cfg, Tensor(w), Tensor(b))
print("random 1x8x8x3 image ->", y.shape)
