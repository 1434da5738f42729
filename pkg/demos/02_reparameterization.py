#!/usr/bin/env python3
"""Collapse multi-branch training blocks into single convolutions, exactly.

Builds an edge-oriented block (3x3 + expand chain + Sobel/Laplacian branches),
lowers it to one 3x3 convolution, and certifies numerical equivalence; then
does the same for a nested block and a dual-stream block.
"""

import numpy as np

import rtsr.reparam as rp
from rtsr.tensor import ConvParams

rng = np.random.default_rng(0)


def conv(cin, cout, k):
    w = (rng.standard_normal((cout, cin, k, k)) * 0.2).astype(np.float32)
    b = (rng.standard_normal(cout) * 0.05).astype(np.float32)
    return ConvParams(weight=w, bias=b, padding=(k - 1) // 2)


ecb = rp.ParallelSum(
    [
        rp.Conv(conv(8, 8, 3)),
        rp.Sequential([rp.Conv(conv(8, 16, 1)), rp.Conv(conv(16, 8, 3))]),
        rp.Sequential([rp.Conv(conv(8, 8, 1)), rp.FixedFilter("sobel_x", rng.standard_normal(8) * 0.1)]),
        rp.Sequential([rp.Conv(conv(8, 8, 1)), rp.FixedFilter("sobel_y", rng.standard_normal(8) * 0.1)]),
        rp.Sequential([rp.Conv(conv(8, 8, 1)), rp.FixedFilter("laplacian", rng.standard_normal(8) * 0.1)]),
    ]
)

fused = rp.lower_branch(ecb)
print(f"edge-oriented block -> one conv: weight {fused.weight.shape}, padding {fused.padding}")
rep = rp.verify_equivalence(ecb, fused, trials=100, tol=1e-4)
print(f"  certified over {rep.trials} random inputs: max abs err {rep.max_abs_err:.2e} -> {'PASS' if rep.passed else 'FAIL'}")

nested = rp.ParallelSum([rp.Sequential([rp.Conv(conv(8, 8, 1)), ecb]), rp.Identity(8)])
rep = rp.verify_equivalence(nested, rp.lower_branch(nested), trials=100, tol=1e-4)
print(f"nested block (residual around 1x1 -> ECB): max abs err {rep.max_abs_err:.2e}")

ds = rp.DualStream(conv(6, 6, 3), conv(3, 6, 3), conv(6, 3, 3), conv(3, 3, 3))
rep = rp.verify_equivalence(ds, rp.fuse_dual_stream(ds), trials=100, tol=1e-4)
print(f"dual-stream block (2x2 kernel matrix): max abs err {rep.max_abs_err:.2e}")

stripped = rp.strip_bias(fused)
print(f"bias strip: before {fused.bias is not None}, after {stripped.bias is not None}")
