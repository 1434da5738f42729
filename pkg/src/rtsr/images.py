"""8-bit image file I/O (PNG, PPM) mapped to float NCHW tensors."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .resample import from_uint8, to_uint8
from .tensor import Tensor


def load_image(path) -> Tensor:
    """Load an RGB image file as a (1, 3, h, w) float32 tensor in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"))
    return from_uint8(arr.transpose(2, 0, 1)[None])


def save_image(img: Tensor, path) -> None:
    """Quantize a (1, 3, h, w) [0, 1] tensor to 8 bits and write it losslessly."""
    if img.ndim != 4 or img.shape[0] != 1 or img.shape[1] != 3:
        raise ValueError(f"expected a (1, 3, h, w) image, got shape {getattr(img, 'shape', None)}")
    arr = to_uint8(img)[0].transpose(1, 2, 0)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)
