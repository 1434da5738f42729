#!/usr/bin/env python3
"""Walk through the LR degradation pipeline: Lanczos windows, resizing, QP set.

Builds a procedural texture, downsamples it x4 the way the benchmark does, and
shows how kernel choice and window width change the result.
"""

import numpy as np

from rtsr import DegradationSpec, ResampleKernel, degrade, psnr, resample_image
from rtsr.data import make_texture
from rtsr.resample import BASELINE_UP, CHALLENGE_DOWN, CHALLENGE_QPS, lanczos_weight

print("Lanczos kernel values (a=3):")
for x in (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0):
    print(f"  w({x:3.1f}) = {lanczos_weight(x, 3):+.4f}")

rng = np.random.default_rng(7)
hr = make_texture(rng, 64)
print(f"\nHR texture: {hr.shape}, range [{hr.min():.3f}, {hr.max():.3f}]")

lr = degrade(hr, DegradationSpec(scale_s=4, kernel=CHALLENGE_DOWN))
print(f"LR after x4 challenge downsample (lanczos a=5): {lr.shape}")
print(f"challenge QP set for the codec stage: {CHALLENGE_QPS}")

for kernel in (BASELINE_UP, ResampleKernel("bicubic_catmull_rom"), ResampleKernel("nearest")):
    sr = resample_image(lr, 64, 64, kernel)
    print(f"  upsample with {kernel.kind:>20s}: PSNR vs HR = {psnr(np.clip(sr, 0, 1), hr):6.3f} dB")

identity = resample_image(hr, 64, 64, BASELINE_UP)
print(f"\nidentity resize error (should be ~0): {np.abs(identity - hr).max():.2e}")
