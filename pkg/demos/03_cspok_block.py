#!/usr/bin/env python3
"""The cross-stage omni-kernel fusion block, taken apart.

Half the channels bypass the block untouched; the other half run through a
1x1 conv and a multi-branch mixer (local depthwise, two depthwise strips,
a gated global channel scaling, residual). Every branch output starts at
zero, so a freshly inserted block changes nothing at all.
"""
import numpy as np

from tinydet import Tensor
from tinydet.cspok import CspokConfig, OkmConfig, cspok_block, init_cspok_arrays, init_okm_arrays, okm
from tinydet.tensor import wrap_leaves

rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(1, 8, 10, 10)))

# 1. the mixer alone: zero-initialised branches + residual = exact identity
okm_cfg = OkmConfig(local_kernel=3, strip_kernel=7)
mixer_params = wrap_leaves(init_okm_arrays(okm_cfg, 8, rng))
out = okm(x, okm_cfg, mixer_params)
print("zero-init mixer is the identity:", np.array_equal(out.data, x.data))

# 2. the full block with identity convs is the identity end to end
cfg = CspokConfig(in_channels=8, out_channels=8, split_ratio=0.5)
identity_params = wrap_leaves(init_cspok_arrays(cfg, rng, identity=True))
out = cspok_block(x, cfg, identity_params)
print("identity-configured block:", np.array_equal(out.data, x.data))

# 3. the bypass half survives ANY parameters bit-exactly
wild = wrap_leaves(init_cspok_arrays(cfg, rng, zero_branches=False))
_, premerge = cspok_block(x, cfg, wild, return_premerge=True)
print("bypass channels untouched under random parameters:",
      np.array_equal(premerge.data[:, :cfg.bypass_channels],
                     x.data[:, :cfg.bypass_channels]))

# 4. once the branches have real weights, the block reshapes its input
print("output stats before/after random block: std %.3f -> %.3f"
      % (x.data.std(), cspok_block(x, cfg, wild).data.std()))

# 5. the strips give a large receptive field at depthwise cost: a 1x7 and a
# 7x1 kernel together reach a 7x7 neighbourhood with 14 weights per channel
local = okm_cfg.local_kernel ** 2
strips = 2 * okm_cfg.strip_kernel
print(f"weights per channel: dense 7x7 = 49, local {okm_cfg.local_kernel}x"
      f"{okm_cfg.local_kernel} + strips = {local} + {strips} = {local + strips}")
