"""Fusion algebra: collapse training-time multi-branch blocks into single convolutions.

A :class:`BranchGraph` is a tree of linear stages (convolutions, identities,
per-channel scales, fixed edge filters, dual-stream block kernels) combined by
``Sequential`` chains and ``ParallelSum`` forks.  Because every stage is affine,
the whole tree equals one convolution; :func:`lower_branch` computes it and
:func:`verify_equivalence` certifies the collapse numerically.

Reference semantics ("what the training-time block computes"): the block input
is zero-padded once by the tree's composed receptive-field margin, then every
stage runs unpadded.  Intermediate feature maps therefore carry their producing
stage's bias on the border ring, the convention that makes exact fusion of
biased ``1x1 -> 3x3`` chains possible, and the one the forward path of
:mod:`rtsr.zoo` uses for rep blocks during training.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Union

import numpy as np

from .tensor import ConvParams, Tensor, conv2d, same_padding

#: Canonical 3x3 stencils for the fixed-filter branches.
FIXED_FILTERS = {
    "sobel_x": np.array([[1.0, 0.0, -1.0], [2.0, 0.0, -2.0], [1.0, 0.0, -1.0]]),
    "sobel_y": np.array([[1.0, 2.0, 1.0], [0.0, 0.0, 0.0], [-1.0, -2.0, -1.0]]),
    "laplacian": np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]]),
}


class FusionError(ValueError):
    """Raised when a branch structure cannot be lowered to one convolution."""


@dataclass
class Conv:
    params: ConvParams


@dataclass
class Sequential:
    parts: list["BranchGraph"]


@dataclass
class ParallelSum:
    branches: list["BranchGraph"]


@dataclass
class Identity:
    channels: int


@dataclass
class ChannelScale:
    scale: np.ndarray  # one factor per channel

    def __post_init__(self):
        self.scale = np.asarray(self.scale, dtype=np.float32).reshape(-1)


@dataclass
class FixedFilter:
    """Depthwise constant 3x3 stencil with a learnable per-channel scale."""

    kind: str
    scale: np.ndarray

    def __post_init__(self):
        if self.kind not in FIXED_FILTERS:
            raise ValueError(f"unknown fixed filter {self.kind!r}")
        self.scale = np.asarray(self.scale, dtype=np.float32).reshape(-1)


@dataclass
class DualStream:
    """Two-stream block kernels arranged as [[k_b, k_r2b], [k_b2r, k_r]].

    On input channels split as (backbone, residual), the block computes
    ``out_b = k_b * x_b + k_r2b * x_r`` and ``out_r = k_b2r * x_b + k_r * x_r``,
    concatenated back together.
    """

    k_b: ConvParams
    k_r2b: ConvParams
    k_b2r: ConvParams
    k_r: ConvParams


BranchGraph = Union[Conv, Sequential, ParallelSum, Identity, ChannelScale, FixedFilter, DualStream]


def _leaf_kernel(p: ConvParams, node) -> int:
    if p.kh != p.kw or p.kh % 2 == 0:
        raise FusionError(f"only odd square kernels are fusible, got {p.kh}x{p.kw} in {node!r}")
    if p.stride != 1:
        raise FusionError(f"only stride-1 stages are fusible, got stride {p.stride} in {node!r}")
    if p.groups != 1:
        raise FusionError(f"grouped convolutions are not fusible directly, got {node!r}")
    if p.padding != same_padding(p.kh):
        raise FusionError(
            f"branch convs must use same-size padding {same_padding(p.kh)}, got {p.padding}"
        )
    return p.kh


def margin_need(node: BranchGraph) -> int:
    """Border context (pixels) the node consumes; equals the fused kernel's padding."""
    if isinstance(node, Conv):
        return (_leaf_kernel(node.params, node) - 1) // 2
    if isinstance(node, (Identity, ChannelScale)):
        return 0
    if isinstance(node, FixedFilter):
        return 1
    if isinstance(node, Sequential):
        return sum(margin_need(p) for p in node.parts)
    if isinstance(node, ParallelSum):
        return max(margin_need(b) for b in node.branches)
    if isinstance(node, DualStream):
        return max((_leaf_kernel(p, node) - 1) // 2 for p in _dual_parts(node))
    raise FusionError(f"not a fusible branch node: {node!r}")


def branch_channels(node: BranchGraph) -> tuple[int, int]:
    """(in_channels, out_channels) of the node, validating interface consistency."""
    if isinstance(node, Conv):
        return node.params.in_ch, node.params.out_ch
    if isinstance(node, Identity):
        return node.channels, node.channels
    if isinstance(node, ChannelScale):
        return len(node.scale), len(node.scale)
    if isinstance(node, FixedFilter):
        return len(node.scale), len(node.scale)
    if isinstance(node, Sequential):
        if not node.parts:
            raise FusionError("empty Sequential")
        cin, cur = branch_channels(node.parts[0])
        for part in node.parts[1:]:
            pin, pout = branch_channels(part)
            if pin != cur:
                raise FusionError(
                    f"Sequential interface mismatch: {cur} channels feed a {pin}-channel stage"
                )
            cur = pout
        return cin, cur
    if isinstance(node, ParallelSum):
        if not node.branches:
            raise FusionError("empty ParallelSum")
        shapes = {branch_channels(b) for b in node.branches}
        if len(shapes) != 1:
            raise FusionError(f"ParallelSum branches disagree on channels: {sorted(shapes)}")
        return shapes.pop()
    if isinstance(node, DualStream):
        kb, kr2b, kb2r, kr = _dual_parts(node)
        if kb.out_ch != kr2b.out_ch or kb2r.out_ch != kr.out_ch:
            raise FusionError("DualStream output blocks disagree on channels")
        if kb.in_ch != kb2r.in_ch or kr2b.in_ch != kr.in_ch:
            raise FusionError("DualStream input blocks disagree on channels")
        return kb.in_ch + kr.in_ch, kb.out_ch + kr.out_ch
    raise FusionError(f"not a fusible branch node: {node!r}")


def _dual_parts(node: DualStream) -> tuple[ConvParams, ConvParams, ConvParams, ConvParams]:
    return node.k_b, node.k_r2b, node.k_b2r, node.k_r


def _crop(x: Tensor, m: int) -> Tensor:
    return x[:, :, m : x.shape[2] - m, m : x.shape[3] - m] if m else x


def _valid_conv(x: Tensor, p: ConvParams) -> Tensor:
    return conv2d(x, replace(p, padding=0))


def _consume(node: BranchGraph, x: Tensor) -> Tensor:
    """Evaluate ``node`` on a pre-padded input, shrinking it by margin_need(node)."""
    if isinstance(node, Conv):
        return _valid_conv(x, node.params)
    if isinstance(node, Identity):
        return x
    if isinstance(node, ChannelScale):
        return x * node.scale.astype(x.dtype)[:, None, None]
    if isinstance(node, FixedFilter):
        c = len(node.scale)
        stencil = FIXED_FILTERS[node.kind]
        weight = np.broadcast_to(stencil, (c, 1, 3, 3)).astype(x.dtype)
        y = conv2d(x, ConvParams(weight=weight, stride=1, padding=0, groups=c))
        return y * node.scale.astype(x.dtype)[:, None, None]
    if isinstance(node, Sequential):
        for part in node.parts:
            x = _consume(part, x)
        return x
    if isinstance(node, ParallelSum):
        m = margin_need(node)
        total = None
        for b in node.branches:
            y = _crop(_consume(b, x), m - margin_need(b))
            total = y if total is None else total + y
        return total
    if isinstance(node, DualStream):
        kb, kr2b, kb2r, kr = _dual_parts(node)
        m = margin_need(node)
        xb, xr = x[:, : kb.in_ch], x[:, kb.in_ch :]

        def run(p, xin):
            return _crop(_valid_conv(xin, p), m - (p.kh - 1) // 2)

        out_b = run(kb, xb) + run(kr2b, xr)
        out_r = run(kb2r, xb) + run(kr, xr)
        return np.concatenate([out_b, out_r], axis=1)
    raise FusionError(f"not a fusible branch node: {node!r}")


def branch_forward(node: BranchGraph, x: Tensor) -> Tensor:
    """Reference (unfused) same-size forward pass of a branch structure."""
    cin, _ = branch_channels(node)
    if x.shape[1] != cin:
        raise ValueError(f"branch_forward: input has {x.shape[1]} channels, graph expects {cin}")
    m = margin_need(node)
    if m:
        x = np.pad(x, ((0, 0), (0, 0), (m, m), (m, m)))
    return _consume(node, x)


# --- fusion -------------------------------------------------------------


def _pad_kernel(weight: np.ndarray, k: int) -> np.ndarray:
    """Center-embed a smaller odd kernel into a k x k one."""
    kh = weight.shape[2]
    if kh == k:
        return weight
    out = np.zeros(weight.shape[:2] + (k, k), dtype=weight.dtype)
    off = (k - kh) // 2
    out[:, :, off : off + kh, off : off + kh] = weight
    return out


def _sum_bias(*biases, size: int):
    present = [b for b in biases if b is not None]
    if not present:
        return None
    total = np.zeros(size, dtype=np.float64)
    for b in present:
        total += np.asarray(b, dtype=np.float64)
    return total


def fuse_sequential(first: ConvParams, second: ConvParams) -> ConvParams:
    """Fuse two chained convolutions into one (at most one 3x3 factor)."""
    k1 = _leaf_kernel(first, first)
    k2 = _leaf_kernel(second, second)
    if first.out_ch != second.in_ch:
        raise FusionError(
            f"channel mismatch: first outputs {first.out_ch}, second expects {second.in_ch}"
        )
    if k1 == 3 and k2 == 3:
        raise FusionError("3x3 o 3x3 fusion would widen the kernel past 3x3; rejected")
    w1 = first.weight.astype(np.float64)
    w2 = second.weight.astype(np.float64)
    if k1 == 1 and k2 == 1:
        weight = np.einsum("om,mi->oi", w2[:, :, 0, 0], w1[:, :, 0, 0])[:, :, None, None]
    elif k1 == 1:
        weight = np.einsum("omuv,mi->oiuv", w2, w1[:, :, 0, 0])
    else:
        weight = np.einsum("om,miuv->oiuv", w2[:, :, 0, 0], w1)
    bias = None
    if first.bias is not None:
        bias = np.einsum("omuv,m->o", w2, first.bias.astype(np.float64))
    bias = _sum_bias(bias, second.bias, size=second.out_ch)
    dtype = np.result_type(first.weight, second.weight)
    return ConvParams(
        weight=weight.astype(dtype),
        bias=None if bias is None else bias.astype(dtype),
        stride=1,
        padding=same_padding(max(k1, k2)),
        groups=1,
    )


def fuse_parallel_sum(branches: list[ConvParams]) -> ConvParams:
    """Fuse parallel summed convolutions; 1x1 kernels are center-padded to 3x3."""
    if not branches:
        raise FusionError("fuse_parallel_sum: no branches")
    if len(branches) == 1:
        return branches[0]
    sizes = [_leaf_kernel(p, p) for p in branches]
    shapes = {(p.in_ch, p.out_ch) for p in branches}
    if len(shapes) != 1:
        raise FusionError(f"parallel branches disagree on channels: {sorted(shapes)}")
    k = max(sizes)
    weight = np.zeros((branches[0].out_ch, branches[0].in_ch, k, k), dtype=np.float64)
    for p in branches:
        weight += _pad_kernel(p.weight.astype(np.float64), k)
    bias = _sum_bias(*(p.bias for p in branches), size=branches[0].out_ch)
    dtype = np.result_type(*(p.weight for p in branches))
    return ConvParams(
        weight=weight.astype(dtype),
        bias=None if bias is None else bias.astype(dtype),
        stride=1,
        padding=same_padding(k),
        groups=1,
    )


def fuse_dual_stream(ds: DualStream) -> ConvParams:
    """Fuse a two-stream block into one convolution over concatenated channels."""
    cin, cout = branch_channels(ds)
    kb, kr2b, kb2r, kr = _dual_parts(ds)
    k = max(_leaf_kernel(p, ds) for p in _dual_parts(ds))
    weight = np.zeros((cout, cin, k, k), dtype=np.float64)
    cb_out, cb_in = kb.out_ch, kb.in_ch
    weight[:cb_out, :cb_in] = _pad_kernel(kb.weight.astype(np.float64), k)
    weight[:cb_out, cb_in:] = _pad_kernel(kr2b.weight.astype(np.float64), k)
    weight[cb_out:, :cb_in] = _pad_kernel(kb2r.weight.astype(np.float64), k)
    weight[cb_out:, cb_in:] = _pad_kernel(kr.weight.astype(np.float64), k)
    top = _sum_bias(kb.bias, kr2b.bias, size=cb_out)
    bot = _sum_bias(kb2r.bias, kr.bias, size=kr.out_ch)
    if top is None and bot is None:
        bias = None
    else:
        bias = np.concatenate(
            [
                top if top is not None else np.zeros(cb_out),
                bot if bot is not None else np.zeros(kr.out_ch),
            ]
        )
    dtype = np.result_type(*(p.weight for p in _dual_parts(ds)))
    return ConvParams(
        weight=weight.astype(dtype),
        bias=None if bias is None else bias.astype(dtype),
        stride=1,
        padding=same_padding(k),
        groups=1,
    )


def _dirac(channels: int, dtype=np.float32) -> ConvParams:
    weight = np.zeros((channels, channels, 1, 1), dtype=dtype)
    weight[np.arange(channels), np.arange(channels), 0, 0] = 1.0
    return ConvParams(weight=weight, stride=1, padding=0, groups=1)


def lower_branch(node: BranchGraph) -> ConvParams:
    """Recursively collapse a branch structure to a single convolution."""
    if isinstance(node, Conv):
        _leaf_kernel(node.params, node)
        return node.params.copy()
    if isinstance(node, Identity):
        return _dirac(node.channels)
    if isinstance(node, ChannelScale):
        p = _dirac(len(node.scale))
        p.weight *= node.scale[:, None, None, None]
        return p
    if isinstance(node, FixedFilter):
        c = len(node.scale)
        stencil = FIXED_FILTERS[node.kind]
        weight = np.zeros((c, c, 3, 3), dtype=np.float32)
        weight[np.arange(c), np.arange(c)] = node.scale[:, None, None] * stencil.astype(np.float32)
        return ConvParams(weight=weight, stride=1, padding=1, groups=1)
    if isinstance(node, Sequential):
        if not node.parts:
            raise FusionError("empty Sequential")
        fused = lower_branch(node.parts[0])
        for part in node.parts[1:]:
            fused = fuse_sequential(fused, lower_branch(part))
        return fused
    if isinstance(node, ParallelSum):
        branch_channels(node)
        return fuse_parallel_sum([lower_branch(b) for b in node.branches])
    if isinstance(node, DualStream):
        return fuse_dual_stream(node)
    raise FusionError(f"not a fusible branch node: {node!r}")


def strip_bias(params: ConvParams) -> ConvParams:
    """Return the same convolution with its bias removed."""
    return replace(params, weight=params.weight, bias=None)


@dataclass(frozen=True)
class EquivalenceReport:
    max_abs_err: float
    tol: float
    trials: int

    @property
    def passed(self) -> bool:
        return self.max_abs_err <= self.tol


def verify_equivalence(
    graph: BranchGraph,
    fused: ConvParams,
    trials: int = 100,
    tol: float = 1e-4,
    seed: int = 0,
    size: int = 8,
) -> EquivalenceReport:
    """Compare unfused and fused forms on random unit-normal inputs."""
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    cin, cout = branch_channels(graph)
    if fused.in_ch != cin or fused.out_ch != cout:
        raise ValueError(
            f"fused conv is {fused.in_ch}->{fused.out_ch} channels, graph is {cin}->{cout}"
        )
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal((1, cin, size, size)).astype(np.float32)
        ya = branch_forward(graph, x)
        yb = conv2d(x, fused)
        worst = max(worst, float(np.max(np.abs(ya - yb))))
    return EquivalenceReport(max_abs_err=worst, tol=tol, trials=trials)
