"""Fidelity metrics (PSNR/SSIM, RGB and luma) and the challenge ranking arithmetic."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import ConvParams, Tensor, _require_4d, conv2d

#: BT.601 limited-range luma coefficients (the classic SR-benchmark convention).
_LUMA_RGB = (65.481, 128.553, 24.966)
_LUMA_OFFSET = 16.0

DELTA_QPS = (31, 63)


@dataclass(frozen=True)
class QpMetrics:
    """Fidelity numbers for one model at one compression level."""

    psnr_rgb: float
    psnr_y: float
    ssim_rgb: float
    ssim_y: float

    def __post_init__(self):
        for name in ("ssim_rgb", "ssim_y"):
            v = getattr(self, name)
            if not -1.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [-1, 1], got {v}")
        for name in ("psnr_rgb", "psnr_y"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class MetricsReport:
    """Per-QP fidelity map for one model."""

    per_qp: Mapping[int, QpMetrics] = field(default_factory=dict)


@dataclass(frozen=True)
class ScoreInputs:
    """Inputs of the challenge ranking function: fidelity gain and runtime."""

    delta_db: float
    runtime_ms: float
    c: float = 0.1

    def __post_init__(self):
        if self.runtime_ms <= 0:
            raise ValueError(f"runtime must be positive, got {self.runtime_ms}")
        if self.c <= 0:
            raise ValueError(f"scaling constant must be positive, got {self.c}")


def to_luma(img: Tensor) -> Tensor:
    """BT.601 limited-range luma of a 3-channel [0, 1] image, still in [0, 1] scale."""
    _require_4d(img, "to_luma")
    if img.shape[1] != 3:
        raise ValueError(f"to_luma expects 3 channels, got shape {img.shape}")
    r, g, b = img[:, 0:1], img[:, 1:2], img[:, 2:3]
    y = (_LUMA_OFFSET + _LUMA_RGB[0] * r + _LUMA_RGB[1] * g + _LUMA_RGB[2] * b) / 255.0
    return y.astype(img.dtype, copy=False)


def psnr(a: Tensor, b: Tensor, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE); returns +inf for identical inputs."""
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalized 2-D Gaussian window."""
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords * coords) / (2.0 * sigma * sigma))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a: Tensor, b: Tensor, peak: float = 1.0) -> float:
    """Gaussian-windowed SSIM, 11x11 window, sigma 1.5, valid positions only.

    Channels (and batch items) contribute equally to the mean.
    """
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    _require_4d(a, "ssim")
    size = 11
    if a.shape[2] < size or a.shape[3] < size:
        raise ValueError(f"ssim: image {a.shape} smaller than the {size}x{size} window")
    c = a.shape[1]
    win = gaussian_window(size, 1.5)
    kernel = ConvParams(
        weight=np.broadcast_to(win, (c, 1, size, size)).copy(), stride=1, padding=0, groups=c
    )
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    mu_a = conv2d(a64, kernel)
    mu_b = conv2d(b64, kernel)
    var_a = conv2d(a64 * a64, kernel) - mu_a * mu_a
    var_b = conv2d(b64 * b64, kernel) - mu_b * mu_b
    cov = conv2d(a64 * b64, kernel) - mu_a * mu_b
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def delta_psnr(
    model_psnr_y: Mapping[int, float],
    baseline_psnr_y: Mapping[int, float],
    qps: tuple[int, ...] = DELTA_QPS,
) -> float:
    """Mean PSNR-Y of the model over ``qps`` minus the baseline's mean."""
    model_mean = sum(model_psnr_y[q] for q in qps) / len(qps)
    base_mean = sum(baseline_psnr_y[q] for q in qps) / len(qps)
    return model_mean - base_mean


def challenge_score(inp: ScoreInputs) -> float:
    """Challenge ranking function: (2 * 2^delta) / (sqrt(T) * C)."""
    return (2.0 * 2.0**inp.delta_db) / (math.sqrt(inp.runtime_ms) * inp.c)
