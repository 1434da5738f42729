"""Windowed-sinc image resampling and the LR degradation pipeline.

Images are float tensors in [0, 1].  Resampling is separable (horizontal then
vertical) with pixel-center alignment: source coordinate of output pixel ``i``
is ``(i + 0.5) * scale - 0.5``.  When downsampling, the filter support is
stretched by the scale ratio; per-pixel weights are renormalized to sum to 1
and source indices are clamped at the borders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, _require_4d

CHALLENGE_QPS = (31, 39, 47, 55, 63)


class CodecUnavailableError(RuntimeError):
    """A compression stage was requested but no codec is available."""


def lanczos_weight(x: float, a: int) -> float:
    """Lanczos kernel sinc(x)*sinc(x/a) on |x| < a, zero outside."""
    if a < 1:
        raise ValueError(f"lanczos window parameter must be >= 1, got {a}")
    ax = abs(x)
    if ax >= a:
        return 0.0
    if ax < 1e-12:
        return 1.0
    px = math.pi * x
    return a * math.sin(px) * math.sin(px / a) / (px * px)


def catmull_rom_weight(x: float) -> float:
    """Keys bicubic kernel with a = -0.5 (Catmull-Rom), support 2."""
    ax = abs(x)
    if ax < 1:
        return (1.5 * ax - 2.5) * ax * ax + 1.0
    if ax < 2:
        return ((-0.5 * ax + 2.5) * ax - 4.0) * ax + 2.0
    return 0.0


@dataclass(frozen=True)
class ResampleKernel:
    """Resampling filter: ``lanczos`` (window ``a``), ``bicubic_catmull_rom`` or ``nearest``."""

    kind: str = "lanczos"
    a: int = 3

    def __post_init__(self):
        if self.kind not in ("lanczos", "bicubic_catmull_rom", "nearest"):
            raise ValueError(f"unknown resample kernel {self.kind!r}")
        if self.kind == "lanczos" and self.a < 1:
            raise ValueError(f"lanczos window parameter must be >= 1, got {self.a}")

    @property
    def support(self) -> float:
        if self.kind == "lanczos":
            return float(self.a)
        if self.kind == "bicubic_catmull_rom":
            return 2.0
        return 0.5

    def weight(self, x: float) -> float:
        if self.kind == "lanczos":
            return lanczos_weight(x, self.a)
        if self.kind == "bicubic_catmull_rom":
            return catmull_rom_weight(x)
        raise ValueError("nearest kernel has no continuous weight function")


# Downscaler used to produce challenge LR inputs (window matches the reference
# scaler invocation) and the wider-baseline upsampler used for comparison rows.
CHALLENGE_DOWN = ResampleKernel("lanczos", 5)
BASELINE_UP = ResampleKernel("lanczos", 3)


@dataclass(frozen=True)
class DegradationSpec:
    """How to manufacture one LR input: scale factor, filter, optional codec QP."""

    scale_s: int = 4
    kernel: ResampleKernel = field(default_factory=lambda: CHALLENGE_DOWN)
    qp: int | None = None

    def __post_init__(self):
        if self.scale_s < 1:
            raise ValueError(f"scale must be >= 1, got {self.scale_s}")
        if self.qp is not None and self.qp not in CHALLENGE_QPS:
            raise ValueError(f"qp {self.qp} not in challenge set {CHALLENGE_QPS}")


def _axis_matrix(in_size: int, out_size: int, kernel: ResampleKernel) -> np.ndarray:
    """Dense (out_size, in_size) row-normalized weight matrix for one axis."""
    m = np.zeros((out_size, in_size), dtype=np.float64)
    scale = in_size / out_size
    if kernel.kind == "nearest":
        for i in range(out_size):
            center = (i + 0.5) * scale - 0.5
            j = min(max(int(math.floor(center + 0.5)), 0), in_size - 1)
            m[i, j] = 1.0
        return m
    fscale = max(scale, 1.0)
    support = kernel.support * fscale
    for i in range(out_size):
        center = (i + 0.5) * scale - 0.5
        lo = int(math.ceil(center - support))
        hi = int(math.floor(center + support))
        for j in range(lo, hi + 1):
            w = kernel.weight((j - center) / fscale)
            if w:
                m[i, min(max(j, 0), in_size - 1)] += w
    m /= m.sum(axis=1, keepdims=True)
    return m


def resample_image(img: Tensor, out_h: int, out_w: int, kernel: ResampleKernel) -> Tensor:
    """Separable resize of an NCHW image tensor to (out_h, out_w)."""
    _require_4d(img, "resample_image")
    n, c, h, w = img.shape
    if h < 1 or w < 1:
        raise ValueError(f"resample_image: empty input {img.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"resample_image: output size {out_h}x{out_w} must be positive")
    mw = _axis_matrix(w, out_w, kernel)
    mh = _axis_matrix(h, out_h, kernel)
    tmp = np.tensordot(img.astype(np.float64, copy=False), mw, axes=([3], [1]))
    out = np.tensordot(tmp, mh, axes=([2], [1]))  # (n, c, out_w, out_h)
    return np.ascontiguousarray(out.transpose(0, 1, 3, 2).astype(img.dtype, copy=False))


def degrade(img: Tensor, spec: DegradationSpec, codec=None) -> Tensor:
    """Produce the LR input of an HR image per the challenge recipe.

    Downsamples by ``spec.scale_s`` (ceil division, matching the reference
    scaler), then optionally round-trips through ``codec``, a callable
    ``(lr_float01, qp) -> lr_float01``, at ``spec.qp``.  Output is clamped to
    [0, 1].
    """
    _require_4d(img, "degrade")
    h, w = img.shape[2], img.shape[3]
    lr = resample_image(
        img, -(-h // spec.scale_s), -(-w // spec.scale_s), spec.kernel
    )
    if spec.qp is not None:
        if codec is None:
            raise CodecUnavailableError(
                f"codec unavailable: qp={spec.qp} requested but no encoder handle given"
            )
        lr = codec(lr, spec.qp)
    return np.clip(lr, 0.0, 1.0)


def nearest_upsample(img: Tensor, r: int) -> Tensor:
    """Replicate every pixel into an r x r block."""
    _require_4d(img, "nearest_upsample")
    if r < 1:
        raise ValueError(f"upsample factor must be >= 1, got {r}")
    if r == 1:
        return img
    return np.repeat(np.repeat(img, r, axis=2), r, axis=3)


def to_uint8(img: Tensor) -> np.ndarray:
    """Quantize a [0, 1] float image to 8 bits via round(v * 255)."""
    return np.clip(np.rint(np.clip(img, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)


def from_uint8(img: np.ndarray) -> Tensor:
    """Map 8-bit samples to [0, 1] floats via v / 255."""
    return (img.astype(np.float32) / 255.0).astype(np.float32)
