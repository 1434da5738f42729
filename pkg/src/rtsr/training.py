"""Reverse-mode differentiation over the model op set, losses, Adam, and stage plans.

The tape is node-granular: ``forward_train`` records one cache entry per graph
node, ``backward`` walks the nodes in reverse and hands each one its upstream
gradient.  Rep blocks are differentiated through their unfused branch
structure, so the multi-stage recipes (train branched, fuse, strip biases,
keep training) all run on the same machinery.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import reparam, zoo
from .reparam import FIXED_FILTERS
from .resample import BASELINE_UP, CHALLENGE_QPS, resample_image
from .tensor import (
    ConvParams,
    Tensor,
    activation_apply,
    activation_grad,
    conv2d,
    pixel_shuffle,
    pixel_unshuffle,
)
from .tensor import _conv_single_group  # shared fast conv core
from numpy.lib.stride_tricks import sliding_window_view

# --- convolution adjoints -------------------------------------------------


def conv_input_grad(dout: Tensor, params: ConvParams, in_shape) -> Tensor:
    """Gradient of conv2d w.r.t. its input (transposed convolution)."""
    n, o, oh, ow = dout.shape
    kh, kw, s, p = params.kh, params.kw, params.stride, params.padding
    h, w = in_shape[2], in_shape[3]
    if p > kh - 1 or p > kw - 1:
        raise ValueError(f"padding {p} larger than kernel margin is unsupported")
    rem_h = (h + 2 * p - kh) % s
    rem_w = (w + 2 * p - kw) % s
    if s > 1:
        dil = np.zeros((n, o, (oh - 1) * s + 1, (ow - 1) * s + 1), dout.dtype)
        dil[:, :, ::s, ::s] = dout
    else:
        dil = dout
    dil = np.pad(dil, ((0, 0), (0, 0), (kh - 1 - p, kh - 1 - p + rem_h), (kw - 1 - p, kw - 1 - p + rem_w)))
    g = params.groups
    cin = in_shape[1]
    cin_g, cout_g = cin // g, o // g
    parts = []
    for gi in range(g):
        wg = params.weight[gi * cout_g : (gi + 1) * cout_g]
        wt = np.ascontiguousarray(wg[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        parts.append(_conv_single_group(dil[:, gi * cout_g : (gi + 1) * cout_g], wt, 1, 0))
    dx = parts[0] if g == 1 else np.concatenate(parts, axis=1)
    return dx.astype(dout.dtype, copy=False)


def conv_weight_grad(x: Tensor, dout: Tensor, params: ConvParams):
    """Gradients of conv2d w.r.t. weight and bias."""
    kh, kw, s, p, g = params.kh, params.kw, params.stride, params.padding, params.groups
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
    cin_g = x.shape[1] // g
    cout_g = dout.shape[1] // g
    if g == 1:
        dw = np.tensordot(dout, win, axes=([0, 2, 3], [0, 2, 3]))
    else:
        dw = np.concatenate(
            [
                np.tensordot(
                    dout[:, gi * cout_g : (gi + 1) * cout_g],
                    win[:, gi * cin_g : (gi + 1) * cin_g],
                    axes=([0, 2, 3], [0, 2, 3]),
                )
                for gi in range(g)
            ],
            axis=0,
        )
    db = dout.sum(axis=(0, 2, 3)) if params.bias is not None else None
    return dw.astype(dout.dtype, copy=False), db


# --- branch-structure autodiff ----------------------------------------------


def _crop(x, m):
    return x[:, :, m : x.shape[2] - m, m : x.shape[3] - m] if m else x


def _zeropad(x, m):
    return np.pad(x, ((0, 0), (0, 0), (m, m), (m, m))) if m else x


def _valid(p: ConvParams) -> ConvParams:
    return replace(p, padding=0)


def _depthwise_stencil(kind: str, channels: int, dtype) -> ConvParams:
    weight = np.broadcast_to(FIXED_FILTERS[kind], (channels, 1, 3, 3)).astype(dtype)
    return ConvParams(weight=weight, stride=1, padding=0, groups=channels)


def _branch_fwd(node, x):
    """Pre-padded branch evaluation mirroring reparam._consume, with caches."""
    if isinstance(node, reparam.Conv):
        y = conv2d(x, _valid(node.params))
        return y, x
    if isinstance(node, reparam.Identity):
        return x, None
    if isinstance(node, reparam.ChannelScale):
        return x * node.scale.astype(x.dtype)[:, None, None], x
    if isinstance(node, reparam.FixedFilter):
        dw = _depthwise_stencil(node.kind, len(node.scale), x.dtype)
        t = conv2d(x, dw)
        return t * node.scale.astype(x.dtype)[:, None, None], (x, t)
    if isinstance(node, reparam.Sequential):
        caches = []
        for part in node.parts:
            x, c = _branch_fwd(part, x)
            caches.append(c)
        return x, caches
    if isinstance(node, reparam.ParallelSum):
        m = reparam.margin_need(node)
        total = None
        caches = []
        for b in node.branches:
            yb, cb = _branch_fwd(b, x)
            crop = m - reparam.margin_need(b)
            caches.append((cb, crop))
            yb = _crop(yb, crop)
            total = yb if total is None else total + yb
        return total, caches
    if isinstance(node, reparam.DualStream):
        m = reparam.margin_need(node)
        kb, kr2b, kb2r, kr = node.k_b, node.k_r2b, node.k_b2r, node.k_r
        xb, xr = x[:, : kb.in_ch], x[:, kb.in_ch :]
        crops = tuple(m - (p.kh - 1) // 2 for p in (kb, kr2b, kb2r, kr))
        out_b = _crop(conv2d(xb, _valid(kb)), crops[0]) + _crop(conv2d(xr, _valid(kr2b)), crops[1])
        out_r = _crop(conv2d(xb, _valid(kb2r)), crops[2]) + _crop(conv2d(xr, _valid(kr)), crops[3])
        return np.concatenate([out_b, out_r], axis=1), (xb, xr, crops)
    raise TypeError(f"cannot differentiate branch node {node!r}")


def _branch_bwd(node, dy, cache, grads, prefix):
    if isinstance(node, reparam.Conv):
        x = cache
        p = _valid(node.params)
        dw, db = conv_weight_grad(x, dy, p)
        _acc(grads, f"{prefix}.weight", dw)
        if node.params.bias is not None:
            _acc(grads, f"{prefix}.bias", db)
        return conv_input_grad(dy, p, x.shape)
    if isinstance(node, reparam.Identity):
        return dy
    if isinstance(node, reparam.ChannelScale):
        x = cache
        _acc(grads, f"{prefix}.scale", (dy * x).sum(axis=(0, 2, 3)))
        return dy * node.scale.astype(dy.dtype)[:, None, None]
    if isinstance(node, reparam.FixedFilter):
        x, t = cache
        _acc(grads, f"{prefix}.scale", (dy * t).sum(axis=(0, 2, 3)))
        dt = dy * node.scale.astype(dy.dtype)[:, None, None]
        dwp = _depthwise_stencil(node.kind, len(node.scale), dy.dtype)
        return conv_input_grad(dt, dwp, x.shape)
    if isinstance(node, reparam.Sequential):
        for i in reversed(range(len(node.parts))):
            dy = _branch_bwd(node.parts[i], dy, cache[i], grads, f"{prefix}.seq{i}")
        return dy
    if isinstance(node, reparam.ParallelSum):
        dx = None
        for i, b in enumerate(node.branches):
            cb, crop = cache[i]
            dyb = _zeropad(dy, crop)
            part = _branch_bwd(b, dyb, cb, grads, f"{prefix}.branch{i}")
            dx = part if dx is None else dx + part
        return dx
    if isinstance(node, reparam.DualStream):
        xb, xr, crops = cache
        cb_out = node.k_b.out_ch
        dy_b, dy_r = dy[:, :cb_out], dy[:, cb_out:]

        def back(p, tag, xin, dyp, crop):
            dyp = _zeropad(dyp, crop)
            vp = _valid(p)
            dw, db = conv_weight_grad(xin, dyp, vp)
            _acc(grads, f"{prefix}.{tag}.weight", dw)
            if p.bias is not None:
                _acc(grads, f"{prefix}.{tag}.bias", db)
            return conv_input_grad(dyp, vp, xin.shape)

        dxb = back(node.k_b, "k_b", xb, dy_b, crops[0]) + back(node.k_b2r, "k_b2r", xb, dy_r, crops[2])
        dxr = back(node.k_r2b, "k_r2b", xr, dy_b, crops[1]) + back(node.k_r, "k_r", xr, dy_r, crops[3])
        return np.concatenate([dxb, dxr], axis=1)
    raise TypeError(f"cannot differentiate branch node {node!r}")


def _acc(grads: dict, name: str, value) -> None:
    if name in grads:
        grads[name] = grads[name] + value
    else:
        grads[name] = value


# --- graph tape -----------------------------------------------------------


@dataclass
class GradTape:
    """Recorded forward pass: per-node outputs and saved intermediates."""

    graph: zoo.ModelGraph
    net_input: Tensor
    outputs: list
    caches: list
    sr: Tensor
    aux_out: Tensor | None = None
    aux_cache: tuple | None = None


def forward_train(graph: zoo.ModelGraph, x: Tensor) -> GradTape:
    """Forward pass recording everything needed for :func:`backward`."""
    if x.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"model input must be (n, 3, h, w), got {getattr(x, 'shape', None)}")
    d = graph.input_divisor
    if x.shape[2] % d or x.shape[3] % d:
        raise ValueError(f"input spatial dims must be divisible by {d}")
    outputs = []
    caches = []
    cur = x
    for node in graph.nodes:
        if isinstance(node, zoo.ConvNode):
            caches.append(cur)
            cur = conv2d(cur, node.params)
        elif isinstance(node, zoo.RepNode):
            m = reparam.margin_need(node.branch)
            xp = _zeropad(cur, m)
            cur, cache = _branch_fwd(node.branch, xp)
            caches.append((m, xp.shape, cache))
        elif isinstance(node, zoo.ActNode):
            caches.append(cur)
            cur = activation_apply(cur, node.kind)
        elif isinstance(node, zoo.ShuffleNode):
            caches.append(None)
            cur = pixel_shuffle(cur, node.r)
        elif isinstance(node, zoo.UnshuffleNode):
            caches.append(None)
            cur = pixel_unshuffle(cur, node.r)
        elif isinstance(node, zoo.SpabNode):
            o = cur
            z1 = conv2d(o, node.w1)
            a1 = activation_apply(z1, node.sigma)
            z2 = conv2d(a1, node.w2)
            a2 = activation_apply(z2, node.sigma)
            h = conv2d(a2, node.w3)
            u = o + h
            v = activation_apply(h, node.sigma_attn)
            caches.append((o, z1, a1, z2, a2, h, u, v))
            cur = u * v
        elif isinstance(node, zoo.AnchorAddNode):
            caches.append(None)
            cur = cur + zoo.anchor_residual(x, node.r)
        elif isinstance(node, zoo.ConcatNode):
            caches.append(tuple(outputs[t].shape[1] for t in node.taps))
            cur = np.concatenate([outputs[t] for t in node.taps], axis=1)
        elif isinstance(node, zoo.GlobalResidualNode):
            r = cur.shape[2] // x.shape[2]
            caches.append(r)
            cur = cur + np.repeat(np.repeat(x, r, axis=2), r, axis=3)
        else:
            raise TypeError(f"unknown graph node {node!r}")
        outputs.append(cur)
    tape = GradTape(graph=graph, net_input=x, outputs=outputs, caches=caches, sr=cur)
    if graph.aux is not None:
        tap_out = x if graph.aux.tap < 0 else outputs[graph.aux.tap]
        z = conv2d(tap_out, graph.aux.conv.params)
        tape.aux_cache = (tap_out, z)
        tape.aux_out = pixel_shuffle(z, graph.aux.r)
    return tape


@dataclass
class Grads:
    params: dict[str, np.ndarray]
    input: np.ndarray


def backward(tape: GradTape, loss_grad: Tensor, aux_grad: Tensor | None = None) -> Grads:
    """Exact reverse-mode gradients for every parameter and the network input."""
    if tape is None or not tape.outputs:
        raise ValueError("backward called before a recorded forward pass")
    if loss_grad.shape != tape.sr.shape:
        raise ValueError(f"loss gradient shape {loss_grad.shape} != output shape {tape.sr.shape}")
    graph = tape.graph
    n_nodes = len(graph.nodes)
    out_grads: list = [None] * n_nodes
    out_grads[n_nodes - 1] = loss_grad
    input_grad = np.zeros_like(tape.net_input)
    grads: dict[str, np.ndarray] = {}

    def add_out(i, val):
        nonlocal input_grad
        if i < 0:
            input_grad = input_grad + val
        elif out_grads[i] is None:
            out_grads[i] = val
        else:
            out_grads[i] = out_grads[i] + val

    if aux_grad is not None:
        if graph.aux is None:
            raise ValueError("aux gradient supplied but the graph has no aux head")
        tap_out, z = tape.aux_cache
        dz = pixel_unshuffle(aux_grad, graph.aux.r)
        dw, db = conv_weight_grad(tap_out, dz, graph.aux.conv.params)
        _acc(grads, "aux.weight", dw)
        if graph.aux.conv.params.bias is not None:
            _acc(grads, "aux.bias", db)
        add_out(graph.aux.tap, conv_input_grad(dz, graph.aux.conv.params, tap_out.shape))

    for i in reversed(range(n_nodes)):
        g = out_grads[i]
        if g is None:
            continue
        node = graph.nodes[i]
        cache = tape.caches[i]
        if isinstance(node, zoo.ConvNode):
            x = cache
            dw, db = conv_weight_grad(x, g, node.params)
            _acc(grads, f"{node.name}.weight", dw)
            if node.params.bias is not None:
                _acc(grads, f"{node.name}.bias", db)
            add_out(i - 1, conv_input_grad(g, node.params, x.shape))
        elif isinstance(node, zoo.RepNode):
            m, xp_shape, bcache = cache
            dxp = _branch_bwd(node.branch, g, bcache, grads, node.name)
            add_out(i - 1, _crop(dxp, m))
        elif isinstance(node, zoo.ActNode):
            add_out(i - 1, g * activation_grad(cache, node.kind))
        elif isinstance(node, zoo.ShuffleNode):
            add_out(i - 1, pixel_unshuffle(g, node.r))
        elif isinstance(node, zoo.UnshuffleNode):
            add_out(i - 1, pixel_shuffle(g, node.r))
        elif isinstance(node, zoo.SpabNode):
            o, z1, a1, z2, a2, h, u, v = cache
            du = g * v
            dv = g * u
            dh = du + activation_grad(h, node.sigma_attn) * dv
            do = du
            da2 = conv_input_grad(dh, node.w3, a2.shape)
            dw3, db3 = conv_weight_grad(a2, dh, node.w3)
            dz2 = activation_grad(z2, node.sigma) * da2
            da1 = conv_input_grad(dz2, node.w2, a1.shape)
            dw2, db2 = conv_weight_grad(a1, dz2, node.w2)
            dz1 = activation_grad(z1, node.sigma) * da1
            do = do + conv_input_grad(dz1, node.w1, o.shape)
            dw1, db1 = conv_weight_grad(o, dz1, node.w1)
            for tag, dw, db, p in (
                ("conv1", dw1, db1, node.w1),
                ("conv2", dw2, db2, node.w2),
                ("conv3", dw3, db3, node.w3),
            ):
                _acc(grads, f"{node.name}.{tag}.weight", dw)
                if p.bias is not None:
                    _acc(grads, f"{node.name}.{tag}.bias", db)
            add_out(i - 1, do)
        elif isinstance(node, zoo.AnchorAddNode):
            r = node.r
            n, _, hh, ww = g.shape
            input_grad = input_grad + g.reshape(n, 3, r * r, hh, ww).sum(axis=2)
            add_out(i - 1, g)
        elif isinstance(node, zoo.ConcatNode):
            offset = 0
            for t, width in zip(node.taps, cache):
                add_out(t, g[:, offset : offset + width])
                offset += width
        elif isinstance(node, zoo.GlobalResidualNode):
            r = cache
            n, c, hh, ww = g.shape
            input_grad = input_grad + g.reshape(n, c, hh // r, r, ww // r, r).sum(axis=(3, 5))
            add_out(i - 1, g)
        else:
            raise TypeError(f"unknown graph node {node!r}")
    return Grads(params=grads, input=input_grad)


# --- losses -----------------------------------------------------------------


@dataclass(frozen=True)
class LossConfig:
    """Weighted loss mix: total = l1*L1 + mse*MSE + fft_l1*FFT + gradient_map*GM + ..."""

    l1: float = 0.0
    mse: float = 0.0
    fft_l1: float = 0.0
    gradient_map: float = 0.0
    distill_mse: float = 0.0
    aux_x2: float = 0.0

    def __post_init__(self):
        weights = (self.l1, self.mse, self.fft_l1, self.gradient_map, self.distill_mse, self.aux_x2)
        if any(w < 0 for w in weights):
            raise ValueError("loss weights must be non-negative")
        if not any(w > 0 for w in weights):
            raise ValueError("at least one loss term must have positive weight")


@lru_cache(maxsize=16)
def _dft_matrix(n: int) -> np.ndarray:
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n)


def _fft2(x: Tensor) -> np.ndarray:
    """Row-column 2-D DFT via explicit transform matrices (desk-scale patches)."""
    a = _dft_matrix(x.shape[2])
    b = _dft_matrix(x.shape[3])
    return np.matmul(np.matmul(a, x.astype(np.complex128)), b.T)


def _term_l1(a, b):
    d = a - b
    val = float(np.mean(np.abs(d)))
    return val, np.sign(d) / d.size


def _term_mse(a, b):
    d = a - b
    val = float(np.mean(d * d))
    return val, 2.0 * d / d.size


def _term_fft_l1(a, b):
    diff = _fft2(a) - _fft2(b)
    mag = np.abs(diff)
    val = float(mag.sum() / a.size)
    unit = np.where(mag > 0, np.conj(diff) / np.where(mag > 0, mag, 1.0), 0.0)
    ah = _dft_matrix(a.shape[2])
    aw = _dft_matrix(a.shape[3])
    grad = np.matmul(np.matmul(ah.T, unit), aw).real / a.size
    return val, grad.astype(a.dtype, copy=False)


_GM_EPS = 1e-8


def _gradient_magnitude(img: Tensor):
    c = img.shape[1]
    px = _depthwise_stencil("sobel_x", c, img.dtype)
    py = _depthwise_stencil("sobel_y", c, img.dtype)
    px = replace(px, padding=1)
    py = replace(py, padding=1)
    gx = conv2d(img, px)
    gy = conv2d(img, py)
    gm = np.sqrt(gx * gx + gy * gy + _GM_EPS)
    return gm, gx, gy, px, py


def _term_gradient_map(a, b):
    gm_a, gx, gy, px, py = _gradient_magnitude(a)
    gm_b = _gradient_magnitude(b)[0]
    d = gm_a - gm_b
    val = float(np.mean(np.abs(d)))
    dgm = np.sign(d) / d.size
    dgx = dgm * gx / gm_a
    dgy = dgm * gy / gm_a
    grad = conv_input_grad(dgx, px, a.shape) + conv_input_grad(dgy, py, a.shape)
    return val, grad


def loss_eval(
    sr: Tensor,
    hr: Tensor,
    cfg: LossConfig,
    teacher_sr: Tensor | None = None,
    aux_sr2: Tensor | None = None,
    hr2: Tensor | None = None,
):
    """Weighted loss and its gradients w.r.t. ``sr`` (and ``aux_sr2`` if used).

    Returns ``(value, grads)`` where ``grads["sr"]`` always exists and
    ``grads["aux_sr2"]`` exists iff the aux term is active.
    """
    if sr.shape != hr.shape:
        raise ValueError(f"loss_eval: sr shape {sr.shape} != hr shape {hr.shape}")
    if (cfg.distill_mse > 0) != (teacher_sr is not None):
        raise ValueError("teacher_sr must be given exactly when distill_mse > 0")
    if (cfg.aux_x2 > 0) != (aux_sr2 is not None and hr2 is not None):
        raise ValueError("aux_sr2 and hr2 must be given exactly when aux_x2 > 0")
    total = 0.0
    g_sr = np.zeros_like(sr)
    for weight, term, other in (
        (cfg.l1, _term_l1, hr),
        (cfg.mse, _term_mse, hr),
        (cfg.fft_l1, _term_fft_l1, hr),
        (cfg.gradient_map, _term_gradient_map, hr),
        (cfg.distill_mse, _term_mse, teacher_sr),
    ):
        if weight > 0:
            val, grad = term(sr, other)
            total += weight * val
            g_sr = g_sr + weight * grad
    grads = {"sr": g_sr.astype(sr.dtype, copy=False)}
    if cfg.aux_x2 > 0:
        if aux_sr2.shape != hr2.shape:
            raise ValueError(f"aux shapes differ: {aux_sr2.shape} vs {hr2.shape}")
        val, grad = _term_l1(aux_sr2, hr2)
        total += cfg.aux_x2 * val
        grads["aux_sr2"] = (cfg.aux_x2 * grad).astype(aux_sr2.dtype, copy=False)
    return total, grads


# --- optimizer -----------------------------------------------------------


@dataclass
class OptimizerState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class Adam:
    """Bias-corrected Adam over a named parameter dict; updates in place."""

    def __init__(self, params: dict[str, np.ndarray], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.state = OptimizerState(beta1=beta1, beta2=beta2, eps=eps)
        for name, arr in params.items():
            self.state.m[name] = np.zeros_like(arr)
            self.state.v[name] = np.zeros_like(arr)

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        st = self.state
        st.step_count += 1
        bc1 = 1.0 - st.beta1**st.step_count
        bc2 = 1.0 - st.beta2**st.step_count
        for name, g in grads.items():
            if name not in self.params:
                raise KeyError(f"gradient for unknown parameter {name!r}")
            p = self.params[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
            g = g.astype(p.dtype, copy=False)
            m, v = st.m[name], st.v[name]
            m *= st.beta1
            m += (1.0 - st.beta1) * g
            v *= st.beta2
            v += (1.0 - st.beta2) * (g * g)
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + st.eps)


def adam_step(opt: Adam, grads: dict[str, np.ndarray], lr: float) -> None:
    opt.step(grads, lr)


# --- learning-rate schedules -------------------------------------------------


@dataclass(frozen=True)
class Schedule:
    kind: str = "cosine"  # cosine | cosine_warmup | multistep
    lr_max: float = 1e-3
    lr_min: float = 0.0
    total: int = 1
    warmup_frac: float = 0.0
    milestones: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("cosine", "cosine_warmup", "multistep"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.lr_max <= 0 or self.lr_min < 0 or self.lr_min > self.lr_max:
            raise ValueError(f"need 0 <= lr_min <= lr_max, got {self.lr_min}, {self.lr_max}")
        if self.total < 1:
            raise ValueError(f"schedule length must be >= 1, got {self.total}")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ValueError(f"warmup fraction must be in [0, 1), got {self.warmup_frac}")


def lr_at(schedule: Schedule, step: int) -> float:
    """Learning rate at ``step`` (0-based, inclusive of ``schedule.total``)."""
    if not 0 <= step <= schedule.total:
        raise ValueError(f"step {step} out of range [0, {schedule.total}]")
    if schedule.kind == "multistep":
        halvings = sum(1 for m in schedule.milestones if m <= step)
        return schedule.lr_max * 0.5**halvings
    warm = round(schedule.warmup_frac * schedule.total) if schedule.kind == "cosine_warmup" else 0
    if warm and step < warm:
        return schedule.lr_max * step / warm
    span = schedule.total - warm
    t = (step - warm) / span if span else 1.0
    return schedule.lr_min + 0.5 * (schedule.lr_max - schedule.lr_min) * (1.0 + math.cos(math.pi * t))


# --- stage plans --------------------------------------------------------------


@dataclass(frozen=True)
class Stage:
    iterations: int
    loss: LossConfig = field(default_factory=lambda: LossConfig(l1=1.0))
    batch_size: int = 8
    patch_size: int = 64
    qp_filter: tuple[int, ...] | None = None
    schedule: Schedule = field(default_factory=Schedule)
    strip_bias_before: bool = False
    fuse_before: bool = False
    distill_teacher: str | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.qp_filter is not None:
            bad = set(self.qp_filter) - set(CHALLENGE_QPS)
            if bad:
                raise ValueError(f"qp_filter contains non-challenge values {sorted(bad)}")


@dataclass(frozen=True)
class StagePlan:
    stages: tuple[Stage, ...]

    def __post_init__(self):
        if not self.stages:
            raise ValueError("a stage plan needs at least one stage")


def _plan_from_dict(d: dict) -> StagePlan:
    stages = []
    for s in d["stages"]:
        sched = s.get("schedule", {})
        stages.append(
            Stage(
                iterations=s["iterations"],
                loss=LossConfig(**s.get("loss", {"l1": 1.0})),
                batch_size=s.get("batch_size", 8),
                patch_size=s.get("patch_size", 64),
                qp_filter=tuple(s["qp_filter"]) if s.get("qp_filter") else None,
                schedule=Schedule(
                    kind=sched.get("kind", "cosine"),
                    lr_max=sched.get("lr_max", 1e-3),
                    lr_min=sched.get("lr_min", 0.0),
                    total=sched.get("total", s["iterations"]),
                    warmup_frac=sched.get("warmup_frac", 0.0),
                    milestones=tuple(sched.get("milestones", ())),
                ),
                strip_bias_before=s.get("strip_bias_before", False),
                fuse_before=s.get("fuse_before", False),
                distill_teacher=s.get("distill_teacher"),
            )
        )
    return StagePlan(stages=tuple(stages))


def plan_from_json(text: str) -> StagePlan:
    return _plan_from_dict(json.loads(text))


def run_stage_plan(
    graph: zoo.ModelGraph,
    plan: StagePlan,
    source,
    teachers: dict[str, zoo.ModelGraph] | None = None,
    seed: int = 0,
    log_every: int = 100,
):
    """Execute the stages in order; returns ``(graph, logs)``.

    ``source.sample(rng, batch_size, patch_hr, qp_filter)`` must yield
    ``(lr, hr)`` float32 batches.  ``fuse_before`` replaces the graph with its
    fused deploy form (training then continues on the plain convolutions), so
    callers must keep using the returned graph.
    """
    rng = np.random.default_rng(seed)
    logs: list[dict] = []
    scale = graph.spec.scale
    for si, stage in enumerate(plan.stages):
        if stage.strip_bias_before:
            zoo.strip_model_bias(graph)
        if stage.fuse_before and graph.mode == "train":
            graph = zoo.fuse_model(graph)
        teacher = None
        if stage.distill_teacher is not None:
            if not teachers or stage.distill_teacher not in teachers:
                raise ValueError(f"unknown distillation teacher {stage.distill_teacher!r}")
            teacher = teachers[stage.distill_teacher]
        if stage.patch_size % scale:
            raise ValueError(f"stage {si}: patch {stage.patch_size} not divisible by scale {scale}")
        lr_patch = stage.patch_size // scale
        if lr_patch % graph.input_divisor:
            raise ValueError(
                f"stage {si}: LR patch {lr_patch} not divisible by model divisor {graph.input_divisor}"
            )
        needs_aux = stage.loss.aux_x2 > 0
        if needs_aux and graph.aux is None:
            raise ValueError(f"stage {si}: aux loss configured but the model has no aux head")
        sched = replace(stage.schedule, total=stage.iterations)
        params = zoo.named_params(graph)
        opt = Adam(params)
        for it in range(stage.iterations):
            lr_now = lr_at(sched, it)
            lr_b, hr_b = source.sample(rng, stage.batch_size, stage.patch_size, stage.qp_filter)
            tape = forward_train(graph, lr_b)
            extras = {}
            if teacher is not None:
                extras["teacher_sr"] = zoo.forward(teacher, lr_b)
            if needs_aux:
                extras["aux_sr2"] = tape.aux_out
                extras["hr2"] = resample_image(hr_b, hr_b.shape[2] // 2, hr_b.shape[3] // 2, BASELINE_UP)
            value, lgrads = loss_eval(tape.sr, hr_b, stage.loss, **extras)
            g = backward(tape, lgrads["sr"], lgrads.get("aux_sr2"))
            opt.step(g.params, lr_now)
            if it % log_every == 0 or it == stage.iterations - 1:
                logs.append({"stage": si, "iter": it, "loss": value, "lr": lr_now})
    return graph, logs


def write_log(logs: list[dict], path) -> None:
    """Line-delimited JSON records {stage, iter, loss, lr}."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in logs:
            fh.write(json.dumps(rec) + "\n")
