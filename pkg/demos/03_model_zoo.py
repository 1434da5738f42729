#!/usr/bin/env python3
"""Tour the model zoo: build every architecture, fuse it, count parameters.

Each model exists in two forms, a branched training graph and a plain-conv
deploy graph, that produce identical outputs.
"""

import numpy as np

from rtsr import zoo_catalog
from rtsr.zoo import build, forward, fuse_model, verify_deploy_equivalence

rng = np.random.default_rng(1)
x = rng.random((1, 3, 24, 24)).astype(np.float32)

print(f"{'model':<12}{'deploy params [M]':>18}{'train/deploy max err':>24}{'output':>16}")
for spec in zoo_catalog():
    train_graph = build(spec, "train", seed=0)
    deploy_graph = fuse_model(train_graph)
    rep = verify_deploy_equivalence(train_graph, deploy_graph, trials=5)
    y = forward(deploy_graph, x)
    print(
        f"{spec.name:<12}{deploy_graph.param_count() / 1e6:>18.4f}"
        f"{rep.max_abs_err:>24.2e}{str(y.shape):>16}"
    )

print("\nanchor trick: channel-repeat + pixel shuffle == nearest upsampling")
from rtsr import nearest_upsample, pixel_shuffle
from rtsr.zoo import anchor_residual

img = rng.random((1, 3, 5, 5)).astype(np.float32)
assert np.array_equal(pixel_shuffle(anchor_residual(img, 4), 4), nearest_upsample(img, 4))
print("  verified bit-exact")
