#!/usr/bin/env python3
"""End-to-end benchmark: prepare a dataset, evaluate a model, compute the score.

Uses a temporary directory with procedural HR images, the internal degradation,
and a freshly fused zoo model.  Also reproduces published leaderboard scores
from their (delta, runtime) pairs.
"""

import tempfile
from pathlib import Path

import numpy as np

from rtsr import ScoreInputs, challenge_score
from rtsr.data import make_texture
from rtsr.harness import RunConfig, emit_report, prepare_dataset, run_benchmark
from rtsr.images import save_image
from rtsr.resample import DegradationSpec
from rtsr.weights import save_weights
from rtsr.zoo import build, fuse_model, get_spec

print("published (delta, runtime) -> score:")
for name, delta, runtime in [("casr", 0.205, 0.468), ("reptcn", 0.355, 0.685), ("rvsr", 0.720, 7.542)]:
    print(f"  {name:8s}: {challenge_score(ScoreInputs(delta, runtime)):6.2f}")

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    hr_dir = tmp / "hr"
    hr_dir.mkdir()
    rng = np.random.default_rng(3)
    for i in range(3):
        save_image(make_texture(rng, 64), hr_dir / f"img{i}.png")

    specs = [DegradationSpec(scale_s=4, qp=qp) for qp in (31, 63)]
    manifest = prepare_dataset(hr_dir, tmp / "lr", specs, use_external_codec=False)
    print(f"\nprepared {len(manifest)} LR inputs (internal resampler, no codec)")

    weights = tmp / "model.rtsr"
    save_weights(fuse_model(build(get_spec("reptcn"), "train", seed=0)), weights)

    rows = run_benchmark(
        RunConfig(
            weights=str(weights),
            manifest=str(tmp / "lr" / "manifest.json"),
            warmup=2,
            runs=10,
            include_baseline=True,
        )
    )
    print(emit_report(rows, "table"), end="")
    print("\n(delta compares against the lanczos baseline computed in the same run;")
    print(" an untrained model generally loses to it)")
