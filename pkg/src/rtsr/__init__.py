"""rtsr: real-time super-resolution micro-framework and benchmark harness.

Submodules:

- ``tensor``    dense NCHW tensors and the primitive forward operators
- ``resample``  Lanczos/bicubic resampling and the LR degradation pipeline
- ``reparam``   multi-branch block fusion algebra with equivalence certification
- ``zoo``       declarative model specs and executable train/deploy graphs
- ``training``  reverse-mode gradients, losses, Adam, schedules, stage plans
- ``data``      procedural-texture and image-directory training pairs
- ``metrics``   PSNR/SSIM (RGB and luma), fidelity delta, challenge score
- ``weights``   binary weight-file format
- ``harness``   dataset preparation, timing protocol, report emission
- ``cli``       the ``rtsr`` command-line tool
"""

from .metrics import MetricsReport, QpMetrics, ScoreInputs, challenge_score, delta_psnr, psnr, ssim, to_luma
from .resample import CHALLENGE_QPS, DegradationSpec, ResampleKernel, degrade, nearest_upsample, resample_image
from .tensor import ActivationKind, ConvParams, Tensor, conv2d, pixel_shuffle, pixel_unshuffle
from .zoo import MANDATORY_MODELS, ModelSpec, build, forward, fuse_model, get_spec, zoo_catalog

__all__ = [
    "ActivationKind",
    "CHALLENGE_QPS",
    "ConvParams",
    "DegradationSpec",
    "MANDATORY_MODELS",
    "MetricsReport",
    "ModelSpec",
    "QpMetrics",
    "ResampleKernel",
    "ScoreInputs",
    "Tensor",
    "build",
    "challenge_score",
    "conv2d",
    "degrade",
    "delta_psnr",
    "forward",
    "fuse_model",
    "get_spec",
    "nearest_upsample",
    "pixel_shuffle",
    "pixel_unshuffle",
    "psnr",
    "resample_image",
    "ssim",
    "to_luma",
    "zoo_catalog",
]

__version__ = "0.1.0"
