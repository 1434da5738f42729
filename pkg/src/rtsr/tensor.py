"""Dense NCHW tensors and the handful of forward operators every model is built from.

A "tensor" throughout this package is a plain ``numpy.ndarray`` with layout
``(batch, channels, height, width)`` and dtype float32.  All operators are pure
functions: they never mutate their inputs and identical inputs produce
bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

Tensor = np.ndarray

# im2col buffers are processed in row blocks no larger than this (bytes).
_CONV_BUFFER_LIMIT = 1 << 26


class ActivationKind(Enum):
    RELU = "relu"
    GELU_TANH_APPROX = "gelu_tanh_approx"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"
    SIGMOID_CENTERED = "sigmoid_centered"


def as_tensor(data, dtype=np.float32) -> Tensor:
    """Coerce ``data`` to a contiguous 4-D NCHW array, validating the shape."""
    arr = np.ascontiguousarray(data, dtype=dtype)
    if arr.ndim != 4:
        raise ValueError(f"expected a 4-D (n, c, h, w) array, got shape {arr.shape}")
    if any(s == 0 for s in arr.shape) and any(s != 0 for s in arr.shape):
        raise ValueError(f"shape components may be zero only all together, got {arr.shape}")
    return arr


def _require_4d(x: Tensor, what: str) -> None:
    if not isinstance(x, np.ndarray) or x.ndim != 4:
        shape = getattr(x, "shape", None)
        raise ValueError(f"{what}: expected a 4-D (n, c, h, w) array, got shape {shape}")


@dataclass
class ConvParams:
    """Weights plus geometry of one 2-D convolution (cross-correlation).

    ``weight`` has shape ``(out_ch, in_ch // groups, kh, kw)``; ``bias`` is either
    ``None`` or a vector of ``out_ch`` floats.  Padding is symmetric zero-fill.
    """

    weight: np.ndarray
    bias: np.ndarray | None = None
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        self.weight = np.asarray(self.weight)
        if self.weight.ndim != 4:
            raise ValueError(f"conv weight must be 4-D, got shape {self.weight.shape}")
        if self.bias is not None:
            self.bias = np.asarray(self.bias).reshape(-1)
            if self.bias.shape[0] != self.out_ch:
                raise ValueError(
                    f"bias length {self.bias.shape[0]} does not match out_ch {self.out_ch}"
                )
        if self.stride < 1:
            raise ValueError(f"stride must be positive, got {self.stride}")
        if self.padding < 0:
            raise ValueError(f"padding must be non-negative, got {self.padding}")
        if self.groups < 1 or self.out_ch % self.groups:
            raise ValueError(f"out_ch {self.out_ch} not divisible by groups {self.groups}")

    @property
    def out_ch(self) -> int:
        return self.weight.shape[0]

    @property
    def in_ch(self) -> int:
        return self.weight.shape[1] * self.groups

    @property
    def kh(self) -> int:
        return self.weight.shape[2]

    @property
    def kw(self) -> int:
        return self.weight.shape[3]

    def copy(self) -> "ConvParams":
        return replace(
            self,
            weight=self.weight.copy(),
            bias=None if self.bias is None else self.bias.copy(),
        )

    def param_count(self) -> int:
        n = self.weight.size
        if self.bias is not None:
            n += self.bias.size
        return n


def same_padding(kernel: int) -> int:
    """Padding that keeps spatial size at stride 1 (odd kernels only)."""
    if kernel % 2 == 0:
        raise ValueError(f"same padding undefined for even kernel {kernel}")
    return (kernel - 1) // 2


def _conv_single_group(x, weight, stride, padding):
    n, c, h, w = x.shape
    out_ch, _, kh, kw = weight.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (x.shape[2] - kh) // stride + 1
    ow = (x.shape[3] - kw) // stride + 1
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    dtype = np.result_type(x, weight)
    wmat = weight.reshape(out_ch, -1).astype(dtype, copy=False)
    y = np.empty((n, out_ch, oh, ow), dtype=dtype)
    cols_per_row = n * ow * c * kh * kw * dtype.itemsize
    block = max(1, min(oh, _CONV_BUFFER_LIMIT // max(1, cols_per_row)))
    for r0 in range(0, oh, block):
        blk = win[:, :, r0 : r0 + block]
        rb = blk.shape[2]
        cols = blk.transpose(0, 2, 3, 1, 4, 5).reshape(n * rb * ow, c * kh * kw)
        yb = cols.astype(dtype, copy=False) @ wmat.T
        y[:, :, r0 : r0 + rb] = yb.reshape(n, rb, ow, out_ch).transpose(0, 3, 1, 2)
    return y


def conv2d(input: Tensor, params: ConvParams) -> Tensor:
    """Cross-correlate ``input`` with ``params`` (deep-learning convolution)."""
    _require_4d(input, "conv2d")
    n, c, h, w = input.shape
    if c != params.in_ch:
        raise ValueError(
            f"conv2d: input has {c} channels but weights expect {params.in_ch} "
            f"(input shape {input.shape}, weight shape {params.weight.shape})"
        )
    if h + 2 * params.padding < params.kh or w + 2 * params.padding < params.kw:
        raise ValueError(
            f"conv2d: padded spatial size {h + 2 * params.padding}x{w + 2 * params.padding} "
            f"is smaller than kernel {params.kh}x{params.kw}"
        )
    g = params.groups
    if g == 1:
        y = _conv_single_group(input, params.weight, params.stride, params.padding)
    else:
        cin_g = params.in_ch // g
        cout_g = params.out_ch // g
        parts = [
            _conv_single_group(
                input[:, gi * cin_g : (gi + 1) * cin_g],
                params.weight[gi * cout_g : (gi + 1) * cout_g],
                params.stride,
                params.padding,
            )
            for gi in range(g)
        ]
        y = np.concatenate(parts, axis=1)
    if params.bias is not None:
        y = y + params.bias.astype(y.dtype, copy=False)[:, None, None]
    return y


def pixel_shuffle(input: Tensor, r: int) -> Tensor:
    """Depth-to-space: ``(n, c, h, w) -> (n, c // r^2, h * r, w * r)``."""
    _require_4d(input, "pixel_shuffle")
    if r < 1:
        raise ValueError(f"shuffle factor must be positive, got {r}")
    n, c, h, w = input.shape
    if c % (r * r):
        raise ValueError(f"pixel_shuffle: {c} channels not divisible by r^2 = {r * r}")
    if r == 1:
        return input
    co = c // (r * r)
    y = input.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(y.reshape(n, co, h * r, w * r))


def pixel_unshuffle(input: Tensor, r: int) -> Tensor:
    """Space-to-depth, the exact inverse of :func:`pixel_shuffle`."""
    _require_4d(input, "pixel_unshuffle")
    if r < 1:
        raise ValueError(f"shuffle factor must be positive, got {r}")
    n, c, h, w = input.shape
    if h % r or w % r:
        raise ValueError(f"pixel_unshuffle: spatial dims {h}x{w} not divisible by r = {r}")
    if r == 1:
        return input
    y = input.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(y.reshape(n, c * r * r, h // r, w // r))


def activation_apply(input: Tensor, kind: ActivationKind) -> Tensor:
    """Apply an elementwise nonlinearity; shape and dtype are preserved."""
    if kind is ActivationKind.RELU:
        return np.maximum(input, 0)
    if kind is ActivationKind.GELU_TANH_APPROX:
        c = np.asarray(0.7978845608028654, dtype=input.dtype)  # sqrt(2/pi)
        k = np.asarray(0.044715, dtype=input.dtype)
        return 0.5 * input * (1 + np.tanh(c * (input + k * input * input * input)))
    if kind is ActivationKind.SIGMOID:
        return _sigmoid(input)
    if kind is ActivationKind.SIGMOID_CENTERED:
        return _sigmoid(input) - np.asarray(0.5, dtype=input.dtype)
    if kind is ActivationKind.IDENTITY:
        return input
    raise ValueError(f"unknown activation kind {kind!r}")


def _sigmoid(x):
    # Split by sign to stay overflow-free in float32.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1 / (1 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1 + ex)
    return out


def activation_grad(input: Tensor, kind: ActivationKind) -> Tensor:
    """Elementwise derivative of :func:`activation_apply` at ``input``."""
    if kind is ActivationKind.RELU:
        return (input > 0).astype(input.dtype)
    if kind is ActivationKind.GELU_TANH_APPROX:
        c = np.asarray(0.7978845608028654, dtype=input.dtype)
        k = np.asarray(0.044715, dtype=input.dtype)
        inner = c * (input + k * input**3)
        t = np.tanh(inner)
        dinner = c * (1 + 3 * k * input * input)
        return 0.5 * (1 + t) + 0.5 * input * (1 - t * t) * dinner
    if kind in (ActivationKind.SIGMOID, ActivationKind.SIGMOID_CENTERED):
        s = _sigmoid(input)
        return s * (1 - s)
    if kind is ActivationKind.IDENTITY:
        return np.ones_like(input)
    raise ValueError(f"unknown activation kind {kind!r}")


def elementwise(a: Tensor, b: Tensor, op: str) -> Tensor:
    """Elementwise ``add`` or ``mul`` of two identically shaped tensors."""
    _require_4d(a, "elementwise")
    _require_4d(b, "elementwise")
    if a.shape != b.shape:
        raise ValueError(f"elementwise: shape mismatch {a.shape} vs {b.shape}")
    if op == "add":
        return a + b
    if op == "mul":
        return a * b
    raise ValueError(f"elementwise: unknown op {op!r}")


def concat_channels(tensors: list[Tensor]) -> Tensor:
    """Stack tensors along the channel axis, in argument order."""
    if not tensors:
        raise ValueError("concat_channels: empty tensor list")
    first = tensors[0]
    for t in tensors:
        _require_4d(t, "concat_channels")
        if (t.shape[0], t.shape[2], t.shape[3]) != (first.shape[0], first.shape[2], first.shape[3]):
            raise ValueError(
                f"concat_channels: incompatible shapes {first.shape} vs {t.shape}"
            )
    return np.concatenate(tensors, axis=1)
