#!/usr/bin/env python3
"""Train a three-conv model at desk scale and watch it pass Lanczos upsampling.

A compressed version of the acceptance run: procedural textures, the internal
x4 degradation, a two-stage plan (branched training, then fuse mid-training and
keep going), and a held-out PSNR comparison against the Lanczos baseline.
Takes a couple of minutes on CPU.
"""

import numpy as np

from rtsr import psnr
from rtsr.data import SyntheticPairs
from rtsr.resample import BASELINE_UP, resample_image
from rtsr.training import LossConfig, Schedule, Stage, StagePlan, run_stage_plan
from rtsr.zoo import build, forward_padded, get_spec

train_src = SyntheticPairs(count=64, size=64, seed=100)
held = SyntheticPairs(count=16, size=64, seed=200)


def held_out_psnr(fn):
    vals = []
    for i in range(len(held)):
        lr, hr = held.pair(i)
        vals.append(psnr(np.clip(fn(lr), 0, 1), hr))
    return float(np.mean(vals))


baseline = held_out_psnr(lambda lr: resample_image(lr, 64, 64, BASELINE_UP))
print(f"lanczos baseline held-out PSNR: {baseline:.3f} dB")

graph = build(get_spec("reptcn"), "train", seed=0)
plan = StagePlan(
    stages=(
        Stage(
            iterations=800,
            batch_size=32,
            patch_size=64,
            loss=LossConfig(mse=1.0),
            schedule=Schedule(kind="cosine", lr_max=4e-3, lr_min=4e-4),
        ),
        Stage(
            iterations=1200,
            batch_size=32,
            patch_size=64,
            fuse_before=True,
            loss=LossConfig(mse=1.0),
            schedule=Schedule(kind="cosine", lr_max=1e-3, lr_min=1e-5),
        ),
    )
)
graph, logs = run_stage_plan(graph, plan, train_src, seed=0, log_every=400)
for rec in logs:
    print(f"  stage {rec['stage']} iter {rec['iter']:>5}: loss {rec['loss']:.5f}  lr {rec['lr']:.2e}")

trained = held_out_psnr(lambda lr: forward_padded(graph, lr, border=4))
print(f"trained model held-out PSNR:   {trained:.3f} dB  (margin {trained - baseline:+.3f} dB)")
