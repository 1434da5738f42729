"""Desk-scale training data: procedural textures and image-directory ingestion.

Every source exposes ``sample(rng, batch_size, patch_hr, qp_filter)`` returning
an ``(lr, hr)`` float32 batch, with HR patches of ``patch_hr`` pixels and LR
patches ``patch_hr / scale``.  Crop offsets are aligned to the scale factor so
LR and HR crops cover the same content.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .resample import CHALLENGE_DOWN, DegradationSpec, degrade
from .tensor import Tensor


def make_texture(rng: np.random.Generator, size: int, grain_rms: float = 0.18) -> Tensor:
    """One procedural RGB texture: smooth fields plus fine stationary grain.

    The grain band sits just above the x4-downsampled Nyquist rate (its major
    frequency component spans 8.25-9.5 cycles per image at 64 px), the regime
    that makes generic interpolation measurably suboptimal on this content
    family while a distribution-trained upscaler can still recover it.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    luma = np.zeros((size, size))
    for _ in range(4):
        fx = rng.uniform(-5.5, 5.5)
        fy = rng.uniform(-5.5, 5.5)
        phase = rng.uniform(0, 2 * np.pi)
        luma += rng.uniform(0.1, 0.28) * np.cos(2 * np.pi * (fx * xx + fy * yy) + phase)
    noise = rng.standard_normal((size, size))
    spectrum = np.fft.fft2(noise)
    f = np.fft.fftfreq(size, d=1.0 / size)
    fx, fy = np.meshgrid(f, f, indexing="xy")
    lo, hi, minor = 8.25 * size / 64.0, 9.5 * size / 64.0, 3.0 * size / 64.0
    band = ((np.abs(fx) >= lo) & (np.abs(fx) <= hi) & (np.abs(fy) <= minor)) | (
        (np.abs(fy) >= lo) & (np.abs(fy) <= hi) & (np.abs(fx) <= minor)
    )
    grain = np.real(np.fft.ifft2(spectrum * band))
    luma += grain * (grain_rms / max(grain.std(), 1e-9))
    low, high = luma.min(), luma.max()
    luma = (luma - low) / max(high - low, 1e-9)
    tint = rng.uniform(0.75, 1.0, 3)
    offset = rng.uniform(0.0, 0.1, 3)
    img = offset[:, None, None] + tint[:, None, None] * luma * 0.88
    return np.clip(img, 0.0, 1.0)[None].astype(np.float32)


def _dct_matrix(n: int = 8) -> np.ndarray:
    k = np.arange(n)
    m = np.cos(np.pi * (2 * k[None, :] + 1) * k[:, None] / (2 * n))
    m[0] *= 1.0 / np.sqrt(2)
    return m * np.sqrt(2.0 / n)


_DCT8 = _dct_matrix(8)


def block_quantize(img: Tensor, qp: int) -> Tensor:
    """Rough stand-in for codec artifacts: 8x8 DCT coefficient quantization.

    Not a codec, just a deterministic, QP-monotone degradation used when
    training data needs compression-like artifacts without an external encoder.
    """
    step = 0.004 * float(np.exp((qp - 31) / 12.0))
    n, c, h, w = img.shape
    ph, pw = (-h) % 8, (-w) % 8
    x = np.pad(img.astype(np.float64), ((0, 0), (0, 0), (0, ph), (0, pw)), mode="reflect")
    hh, ww = x.shape[2], x.shape[3]
    blocks = x.reshape(n, c, hh // 8, 8, ww // 8, 8).transpose(0, 1, 2, 4, 3, 5)
    coeff = np.einsum("ij,ncabjk,lk->ncabil", _DCT8, blocks, _DCT8)
    coeff = np.round(coeff / step) * step
    back = np.einsum("ij,ncabik,kl->ncabjl", _DCT8, coeff, _DCT8)
    x = back.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, hh, ww)
    return np.clip(x[:, :, :h, :w], 0.0, 1.0).astype(np.float32)


class SyntheticPairs:
    """Fixed procedural corpus degraded by the internal pipeline.

    ``qp_artifacts`` switches on the block-quantization proxy so curriculum
    stages over QP subsets see QP-dependent inputs even without a codec.
    """

    def __init__(
        self,
        count: int = 64,
        size: int = 64,
        scale: int = 4,
        kernel=CHALLENGE_DOWN,
        seed: int = 0,
        qp_artifacts: bool = False,
    ):
        rng = np.random.default_rng(seed)
        self.scale = scale
        self.size = size
        self.qp_artifacts = qp_artifacts
        self.hr = [make_texture(rng, size) for _ in range(count)]
        spec = DegradationSpec(scale_s=scale, kernel=kernel)
        self.lr = [degrade(img, spec) for img in self.hr]
        self._qp_cache: dict[tuple[int, int], Tensor] = {}

    def __len__(self):
        return len(self.hr)

    def pair(self, idx: int, qp: int | None = None):
        lr = self.lr[idx]
        if qp is not None and self.qp_artifacts:
            key = (idx, qp)
            if key not in self._qp_cache:
                self._qp_cache[key] = block_quantize(lr, qp)
            lr = self._qp_cache[key]
        return lr, self.hr[idx]

    def sample(self, rng: np.random.Generator, batch_size: int, patch_hr: int, qp_filter=None):
        if patch_hr > self.size:
            raise ValueError(f"patch {patch_hr} larger than corpus images ({self.size})")
        if patch_hr % self.scale:
            raise ValueError(f"patch {patch_hr} not divisible by scale {self.scale}")
        lrs, hrs = [], []
        span = (self.size - patch_hr) // self.scale
        for _ in range(batch_size):
            idx = int(rng.integers(0, len(self.hr)))
            qp = int(rng.choice(qp_filter)) if qp_filter else None
            lr, hr = self.pair(idx, qp)
            y0 = int(rng.integers(0, span + 1)) * self.scale if span > 0 else 0
            x0 = int(rng.integers(0, span + 1)) * self.scale if span > 0 else 0
            hrs.append(hr[:, :, y0 : y0 + patch_hr, x0 : x0 + patch_hr])
            yl, xl, pl = y0 // self.scale, x0 // self.scale, patch_hr // self.scale
            lrs.append(lr[:, :, yl : yl + pl, xl : xl + pl])
        return np.concatenate(lrs, axis=0), np.concatenate(hrs, axis=0)


class DirectoryPairs:
    """(LR, HR) pairs manufactured from a directory of images via the internal pipeline."""

    def __init__(self, directory, scale: int = 4, kernel=CHALLENGE_DOWN, qp_artifacts: bool = False):
        from .images import load_image

        self.scale = scale
        self.qp_artifacts = qp_artifacts
        paths = sorted(
            p for p in Path(directory).iterdir() if p.suffix.lower() in (".png", ".ppm")
        )
        if not paths:
            raise ValueError(f"no PNG/PPM images found in {directory}")
        spec = DegradationSpec(scale_s=scale, kernel=kernel)
        self.hr = []
        self.lr = []
        for p in paths:
            img = load_image(p)
            h = img.shape[2] - img.shape[2] % scale
            w = img.shape[3] - img.shape[3] % scale
            img = img[:, :, :h, :w]
            self.hr.append(img)
            self.lr.append(degrade(img, spec))
        self._qp_cache: dict[tuple[int, int], Tensor] = {}

    def sample(self, rng: np.random.Generator, batch_size: int, patch_hr: int, qp_filter=None):
        if patch_hr % self.scale:
            raise ValueError(f"patch {patch_hr} not divisible by scale {self.scale}")
        lrs, hrs = [], []
        for _ in range(batch_size):
            idx = int(rng.integers(0, len(self.hr)))
            hr = self.hr[idx]
            lr = self.lr[idx]
            if qp_filter and self.qp_artifacts:
                qp = int(rng.choice(qp_filter))
                key = (idx, qp)
                if key not in self._qp_cache:
                    self._qp_cache[key] = block_quantize(lr, qp)
                lr = self._qp_cache[key]
            sy = (hr.shape[2] - patch_hr) // self.scale
            sx = (hr.shape[3] - patch_hr) // self.scale
            if sy < 0 or sx < 0:
                raise ValueError(f"image {idx} smaller than patch {patch_hr}")
            y0 = int(rng.integers(0, sy + 1)) * self.scale
            x0 = int(rng.integers(0, sx + 1)) * self.scale
            hrs.append(hr[:, :, y0 : y0 + patch_hr, x0 : x0 + patch_hr])
            yl, xl, pl = y0 // self.scale, x0 // self.scale, patch_hr // self.scale
            lrs.append(lr[:, :, yl : yl + pl, xl : xl + pl])
        return np.concatenate(lrs, axis=0), np.concatenate(hrs, axis=0)


class ManifestPairs:
    """Pairs listed by a dataset manifest (see the harness's prepare step)."""

    def __init__(self, manifest: list[dict], scale: int = 4):
        from .images import load_image

        self.scale = scale
        self.entries = []
        for item in manifest:
            if not item.get("hr"):
                continue
            self.entries.append(
                {
                    "lr": load_image(item["lr"]),
                    "hr": load_image(item["hr"]),
                    "qp": item.get("qp"),
                }
            )
        if not self.entries:
            raise ValueError("manifest has no usable (lr, hr) pairs")

    def sample(self, rng: np.random.Generator, batch_size: int, patch_hr: int, qp_filter=None):
        pool = [
            e for e in self.entries if qp_filter is None or e["qp"] in qp_filter
        ]
        if not pool:
            raise ValueError(f"no manifest entries match qp filter {qp_filter}")
        lrs, hrs = [], []
        s = self.scale
        pl = patch_hr // s
        for _ in range(batch_size):
            e = pool[int(rng.integers(0, len(pool)))]
            hr, lr = e["hr"], e["lr"]
            sy = min(hr.shape[2] // s, lr.shape[2]) - pl
            sx = min(hr.shape[3] // s, lr.shape[3]) - pl
            if sy < 0 or sx < 0:
                raise ValueError(f"pair smaller than patch {patch_hr}")
            yl = int(rng.integers(0, sy + 1))
            xl = int(rng.integers(0, sx + 1))
            lrs.append(lr[:, :, yl : yl + pl, xl : xl + pl])
            hrs.append(hr[:, :, yl * s : yl * s + patch_hr, xl * s : xl * s + patch_hr])
        return np.concatenate(lrs, axis=0), np.concatenate(hrs, axis=0)
