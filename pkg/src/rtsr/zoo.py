"""Declarative model specs and executable graphs for the challenge micro-architectures.

Every model is an ordered list of layer descriptors over the primitive op set.
``build`` turns a spec into a :class:`ModelGraph` in one of two modes: ``train``
(rep blocks instantiated as multi-branch structures) or ``deploy`` (plain
convolutions only).  ``fuse_model`` lowers a train graph to its deploy twin with
numerically identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Union

import numpy as np

from . import reparam
from .reparam import BranchGraph, lower_branch
from .resample import nearest_upsample
from .tensor import (
    ActivationKind,
    ConvParams,
    Tensor,
    activation_apply,
    concat_channels,
    conv2d,
    elementwise,
    pixel_shuffle,
    pixel_unshuffle,
    same_padding,
)

# --- layer descriptors ----------------------------------------------------


@dataclass(frozen=True)
class ConvL:
    out_ch: int
    k: int = 3
    stride: int = 1
    bias: bool = True


@dataclass(frozen=True)
class RepL:
    """A re-parameterizable block; ``template`` names the branch structure."""

    template: str
    out_ch: int


@dataclass(frozen=True)
class ActL:
    kind: ActivationKind = ActivationKind.RELU


@dataclass(frozen=True)
class ShuffleL:
    r: int


@dataclass(frozen=True)
class UnshuffleL:
    r: int


@dataclass(frozen=True)
class SpabL:
    """Swift parameter-free attention block (three convs, attention by odd gate)."""


@dataclass(frozen=True)
class AnchorAddL:
    """Add the channel-repeated input (the nearest-neighbor anchor) to the features."""

    r: int


@dataclass(frozen=True)
class ConcatTapsL:
    taps: tuple[int, ...]


@dataclass(frozen=True)
class GlobalResidualL:
    """Add the nearest-upsampled network input to the current 3-channel tensor."""


Layer = Union[ConvL, RepL, ActL, ShuffleL, UnshuffleL, SpabL, AnchorAddL, ConcatTapsL, GlobalResidualL]


@dataclass(frozen=True)
class ModelSpec:
    name: str
    layers: tuple[Layer, ...]
    scale: int = 4
    channels: int = 16
    aux_head: bool = False


class BuildError(ValueError):
    """A model spec violates its structural invariants."""


# --- weight init ----------------------------------------------------------


def _kaiming_conv(rng, cin: int, cout: int, k: int, bias: bool = True, stride: int = 1) -> ConvParams:
    bound = math.sqrt(6.0 / (cin * k * k))
    weight = rng.uniform(-bound, bound, size=(cout, cin, k, k)).astype(np.float32)
    b = np.zeros(cout, np.float32) if bias else None
    return ConvParams(weight=weight, bias=b, stride=stride, padding=same_padding(k))


# --- rep block templates ---------------------------------------------------


def _tpl_repvgg(rng, cin, cout):
    branches = [reparam.Conv(_kaiming_conv(rng, cin, cout, 3)), reparam.Conv(_kaiming_conv(rng, cin, cout, 1))]
    if cin == cout:
        branches.append(reparam.Identity(cin))
    return reparam.ParallelSum(branches)


def _tpl_ecb(rng, cin, cout):
    def edge(kind):
        return reparam.Sequential(
            [
                reparam.Conv(_kaiming_conv(rng, cin, cout, 1)),
                reparam.FixedFilter(kind, (rng.standard_normal(cout) * 0.02).astype(np.float32)),
            ]
        )

    return reparam.ParallelSum(
        [
            reparam.Conv(_kaiming_conv(rng, cin, cout, 3)),
            reparam.Sequential(
                [
                    reparam.Conv(_kaiming_conv(rng, cin, 2 * cout, 1)),
                    reparam.Conv(_kaiming_conv(rng, 2 * cout, cout, 3)),
                ]
            ),
            edge("sobel_x"),
            edge("sobel_y"),
            edge("laplacian"),
        ]
    )


def _tpl_rep_residual(rng, cin, cout):
    # 1x1 expand (4x input width) -> 3x3 -> 1x1, summed with a plain 1x1 branch
    mid = 4 * cin
    return reparam.ParallelSum(
        [
            reparam.Sequential(
                [
                    reparam.Conv(_kaiming_conv(rng, cin, mid, 1)),
                    reparam.Conv(_kaiming_conv(rng, mid, mid, 3)),
                    reparam.Conv(_kaiming_conv(rng, mid, cout, 1)),
                ]
            ),
            reparam.Conv(_kaiming_conv(rng, cin, cout, 1)),
        ]
    )


def _tpl_nrb(rng, cin, cout):
    # nested block: residual around a 1x1 -> edge-oriented inner block
    if cin != cout:
        raise BuildError(f"nested rep block requires matching channels, got {cin}->{cout}")
    return reparam.ParallelSum(
        [
            reparam.Sequential([reparam.Conv(_kaiming_conv(rng, cin, cout, 1)), _tpl_ecb(rng, cout, cout)]),
            reparam.Identity(cin),
        ]
    )


def _tpl_scaled_identity(rng, cin, cout):
    if cin != cout:
        raise BuildError(f"scaled-identity rep block requires matching channels, got {cin}->{cout}")
    scale = (1.0 + rng.standard_normal(cout) * 0.05).astype(np.float32)
    return reparam.ParallelSum([reparam.Conv(_kaiming_conv(rng, cin, cout, 3)), reparam.ChannelScale(scale)])


def _tpl_dual_stream(rng, cin, cout):
    # channels split into a wide backbone stream and a 3-channel residual stream
    if cin != cout or cin <= 3:
        raise BuildError(f"dual-stream block requires matching channels > 3, got {cin}->{cout}")
    cb, cr = cin - 3, 3
    return reparam.DualStream(
        k_b=_kaiming_conv(rng, cb, cb, 3),
        k_r2b=_kaiming_conv(rng, cr, cb, 3),
        k_b2r=_kaiming_conv(rng, cb, cr, 3),
        k_r=_kaiming_conv(rng, cr, cr, 3),
    )


REP_TEMPLATES = {
    "repvgg": _tpl_repvgg,
    "ecb": _tpl_ecb,
    "rep_residual": _tpl_rep_residual,
    "nrb": _tpl_nrb,
    "scaled_identity": _tpl_scaled_identity,
    "dual_stream": _tpl_dual_stream,
}


# --- executable graph nodes -------------------------------------------------


@dataclass
class ConvNode:
    name: str
    params: ConvParams

    def forward(self, x, ctx):
        return conv2d(x, self.params)


@dataclass
class RepNode:
    name: str
    template: str
    branch: BranchGraph

    def forward(self, x, ctx):
        return reparam.branch_forward(self.branch, x)


@dataclass
class ActNode:
    name: str
    kind: ActivationKind

    def forward(self, x, ctx):
        return activation_apply(x, self.kind)


@dataclass
class ShuffleNode:
    name: str
    r: int

    def forward(self, x, ctx):
        return pixel_shuffle(x, self.r)


@dataclass
class UnshuffleNode:
    name: str
    r: int

    def forward(self, x, ctx):
        return pixel_unshuffle(x, self.r)


@dataclass
class SpabNode:
    name: str
    w1: ConvParams
    w2: ConvParams
    w3: ConvParams
    sigma: ActivationKind = ActivationKind.RELU
    sigma_attn: ActivationKind = ActivationKind.SIGMOID_CENTERED

    def forward(self, x, ctx):
        return spab_forward(x, (self.w1, self.w2, self.w3), self.sigma, self.sigma_attn)


@dataclass
class AnchorAddNode:
    name: str
    r: int

    def forward(self, x, ctx):
        return elementwise(x, anchor_residual(ctx.net_input, self.r), "add")


@dataclass
class ConcatNode:
    name: str
    taps: tuple[int, ...]

    def forward(self, x, ctx):
        return concat_channels([ctx.outputs[t] for t in self.taps])


@dataclass
class GlobalResidualNode:
    name: str

    def forward(self, x, ctx):
        r = x.shape[2] // ctx.net_input.shape[2]
        return elementwise(x, nearest_upsample(ctx.net_input, r), "add")


Node = Union[
    ConvNode, RepNode, ActNode, ShuffleNode, UnshuffleNode, SpabNode, AnchorAddNode, ConcatNode, GlobalResidualNode
]


@dataclass
class AuxHead:
    """Train-only x2 reconstruction head tapped off the backbone features."""

    tap: int
    conv: ConvNode
    r: int = 2


@dataclass
class _Ctx:
    net_input: Tensor
    outputs: list


@dataclass
class ModelGraph:
    spec: ModelSpec
    mode: str
    nodes: list
    aux: AuxHead | None = None
    input_divisor: int = 1
    _keep: frozenset = field(default_factory=frozenset)

    def param_count(self) -> int:
        total = 0
        for _, arr in named_params(self).items():
            total += arr.size
        return total


# --- spec walking -----------------------------------------------------------


@dataclass(frozen=True)
class _LayerShape:
    layer: Layer
    in_ch: int
    out_ch: int
    scale: Fraction


def _walk_spec(spec: ModelSpec) -> tuple[list[_LayerShape], int]:
    """Validate the layer list; return per-layer shapes and the input divisor."""
    ch = 3
    scale = Fraction(1)
    divisor = 1
    down = Fraction(1)
    states: list[_LayerShape] = []
    for i, layer in enumerate(spec.layers):
        in_ch = ch
        if isinstance(layer, ConvL):
            if layer.k % 2 == 0:
                raise BuildError(f"layer {i}: even kernel {layer.k} unsupported")
            ch = layer.out_ch
            if layer.stride > 1:
                need = down * layer.stride
                if need.denominator != 1:
                    raise BuildError(f"layer {i}: stride after upsampling is unsupported")
                divisor = math.lcm(divisor, int(need))
                down *= layer.stride
                scale /= layer.stride
        elif isinstance(layer, RepL):
            if layer.template not in REP_TEMPLATES:
                raise BuildError(f"layer {i}: unknown rep template {layer.template!r}")
            ch = layer.out_ch
        elif isinstance(layer, ActL) or isinstance(layer, SpabL):
            pass
        elif isinstance(layer, ShuffleL):
            if layer.r < 1:
                raise BuildError(f"layer {i}: shuffle factor must be positive")
            if ch % (layer.r**2):
                raise BuildError(f"layer {i}: {ch} channels not divisible by r^2 = {layer.r ** 2}")
            ch //= layer.r**2
            scale *= layer.r
            down /= layer.r
        elif isinstance(layer, UnshuffleL):
            if layer.r < 1:
                raise BuildError(f"layer {i}: unshuffle factor must be positive")
            ch *= layer.r**2
            need = down * layer.r
            if need.denominator != 1:
                raise BuildError(f"layer {i}: unshuffle after upsampling is unsupported")
            divisor = math.lcm(divisor, int(need))
            down *= layer.r
            scale /= layer.r
        elif isinstance(layer, AnchorAddL):
            if scale != 1:
                raise BuildError(f"layer {i}: anchor add requires LR-resolution features")
            if ch != 3 * layer.r**2:
                raise BuildError(
                    f"layer {i}: anchor add needs 3*r^2 = {3 * layer.r ** 2} channels, found {ch}"
                )
        elif isinstance(layer, ConcatTapsL):
            for t in layer.taps:
                if not 0 <= t < i:
                    raise BuildError(f"layer {i}: tap {t} does not reference an earlier layer")
                if states[t].scale != scale:
                    raise BuildError(f"layer {i}: tap {t} has mismatched spatial scale")
            ch = sum(states[t].out_ch for t in layer.taps)
        elif isinstance(layer, GlobalResidualL):
            if ch != 3:
                raise BuildError(f"layer {i}: global residual requires 3 channels, found {ch}")
            if scale.denominator != 1 or scale < 1:
                raise BuildError(f"layer {i}: global residual requires an integer upscale")
        else:
            raise BuildError(f"layer {i}: unknown layer descriptor {layer!r}")
        states.append(_LayerShape(layer=layer, in_ch=in_ch, out_ch=ch, scale=scale))
    if ch != 3:
        raise BuildError(f"model must emit 3 channels, final layer leaves {ch}")
    if scale != spec.scale:
        raise BuildError(f"net spatial gain is x{scale}, spec declares x{spec.scale}")
    return states, divisor


def validate_spec(spec: ModelSpec) -> None:
    _walk_spec(spec)


def build(spec: ModelSpec, mode: str = "train", seed: int = 0) -> ModelGraph:
    """Instantiate a model graph with freshly initialized weights.

    ``train`` mode realizes rep blocks as multi-branch structures; ``deploy``
    mode realizes them as single convolutions (the form fused weights load
    into) and carries no auxiliary head.
    """
    if mode not in ("train", "deploy"):
        raise ValueError(f"mode must be 'train' or 'deploy', got {mode!r}")
    shapes, divisor = _walk_spec(spec)
    rng = np.random.default_rng(seed)
    nodes: list[Node] = []
    last_feature_conv = None
    for i, state in enumerate(shapes):
        layer, in_ch = state.layer, state.in_ch
        name = f"l{i:02d}"
        if isinstance(layer, ConvL):
            nodes.append(
                ConvNode(name, _kaiming_conv(rng, in_ch, layer.out_ch, layer.k, layer.bias, layer.stride))
            )
        elif isinstance(layer, RepL):
            branch = REP_TEMPLATES[layer.template](rng, in_ch, layer.out_ch)
            if mode == "train":
                nodes.append(RepNode(name, layer.template, branch))
            else:
                nodes.append(ConvNode(name, lower_branch(branch)))
        elif isinstance(layer, ActL):
            nodes.append(ActNode(name, layer.kind))
        elif isinstance(layer, ShuffleL):
            nodes.append(ShuffleNode(name, layer.r))
        elif isinstance(layer, UnshuffleL):
            nodes.append(UnshuffleNode(name, layer.r))
        elif isinstance(layer, SpabL):
            nodes.append(
                SpabNode(
                    name,
                    _kaiming_conv(rng, in_ch, in_ch, 3),
                    _kaiming_conv(rng, in_ch, in_ch, 3),
                    _kaiming_conv(rng, in_ch, in_ch, 3),
                )
            )
        elif isinstance(layer, AnchorAddL):
            nodes.append(AnchorAddNode(name, layer.r))
        elif isinstance(layer, ConcatTapsL):
            nodes.append(ConcatNode(name, tuple(layer.taps)))
        elif isinstance(layer, GlobalResidualL):
            nodes.append(GlobalResidualNode(name))
        if isinstance(layer, (ConvL, RepL)):
            last_feature_conv = i
    keep = frozenset(t for n in nodes if isinstance(n, ConcatNode) for t in n.taps)
    aux = None
    if spec.aux_head and mode == "train":
        if last_feature_conv is None:
            raise BuildError("aux head requires at least one conv layer")
        # tap right before the final reconstruction conv
        tap = last_feature_conv - 1
        tap_ch = 3 if tap < 0 else shapes[tap].out_ch
        aux = AuxHead(tap=tap, conv=ConvNode("aux", _kaiming_conv(rng, tap_ch, 12, 3)), r=2)
    return ModelGraph(spec=spec, mode=mode, nodes=nodes, aux=aux, input_divisor=divisor, _keep=keep)


def forward(graph: ModelGraph, lr_img: Tensor) -> Tensor:
    """Run the graph on an LR image; returns the (unclamped) SR image."""
    y, _ = _forward_impl(graph, lr_img, keep_all=False)
    return y


def forward_with_aux(graph: ModelGraph, lr_img: Tensor):
    """Forward pass returning ``(sr, aux_sr2)``; aux is None without a head."""
    y, outputs = _forward_impl(graph, lr_img, keep_all=graph.aux is not None)
    if graph.aux is None:
        return y, None
    tap = lr_img if graph.aux.tap < 0 else outputs[graph.aux.tap]
    aux = pixel_shuffle(conv2d(tap, graph.aux.conv.params), graph.aux.r)
    return y, aux


def _forward_impl(graph: ModelGraph, lr_img: Tensor, keep_all: bool):
    if lr_img.ndim != 4 or lr_img.shape[1] != 3:
        raise ValueError(f"model input must be (n, 3, h, w), got {getattr(lr_img, 'shape', None)}")
    d = graph.input_divisor
    if lr_img.shape[2] % d or lr_img.shape[3] % d:
        raise ValueError(
            f"input spatial dims {lr_img.shape[2]}x{lr_img.shape[3]} must be divisible by {d} "
            f"for model {graph.spec.name!r}"
        )
    ctx = _Ctx(net_input=lr_img, outputs=[None] * len(graph.nodes))
    x = lr_img
    for i, node in enumerate(graph.nodes):
        x = node.forward(x, ctx)
        if keep_all or i in graph._keep:
            ctx.outputs[i] = x
    return x, ctx.outputs


def forward_padded(graph: ModelGraph, lr_img: Tensor, border: int = 0) -> Tensor:
    """Forward with edge-replication padding, cropped back to scale * input size.

    Pads ``border`` context pixels on every side (so the receptive field sees
    replicated rather than zero borders, matching how resamplers clamp) and
    rounds the padded size up to the graph's input divisor.
    """
    d = graph.input_divisor
    h, w = lr_img.shape[2], lr_img.shape[3]
    top = left = border
    bottom = border + (-(h + 2 * border)) % d
    right = border + (-(w + 2 * border)) % d
    if top or bottom or left or right:
        lr_img = np.pad(lr_img, ((0, 0), (0, 0), (top, bottom), (left, right)), mode="edge")
    sr = forward(graph, lr_img)
    r = graph.spec.scale
    return sr[:, :, top * r : (top + h) * r, left * r : (left + w) * r]


def spab_forward(
    o_prev: Tensor,
    weights: tuple[ConvParams, ConvParams, ConvParams],
    sigma: ActivationKind = ActivationKind.RELU,
    sigma_attn: ActivationKind = ActivationKind.SIGMOID_CENTERED,
) -> Tensor:
    """Swift parameter-free attention block.

    Three chained convolutions produce features ``h``; the block output is
    ``(o_prev + h) * sigma_attn(h)`` where ``sigma_attn`` is odd so a zero
    feature map yields a zero attention map.
    """
    w1, w2, w3 = weights
    for w in weights:
        if w.in_ch != o_prev.shape[1] or w.out_ch != o_prev.shape[1]:
            raise ValueError(
                f"spab convs must preserve {o_prev.shape[1]} channels, got {w.in_ch}->{w.out_ch}"
            )
    h = conv2d(activation_apply(conv2d(activation_apply(conv2d(o_prev, w1), sigma), w2), sigma), w3)
    u = elementwise(o_prev, h, "add")
    v = activation_apply(h, sigma_attn)
    return elementwise(u, v, "mul")


def anchor_residual(lr_img: Tensor, r: int) -> Tensor:
    """Repeat each input channel r^2 times (channel-major), the anchor tensor.

    Pixel-shuffling the result by ``r`` reproduces nearest-neighbor upsampling.
    """
    if lr_img.ndim != 4 or lr_img.shape[1] != 3:
        raise ValueError(f"anchor expects a 3-channel image, got shape {getattr(lr_img, 'shape', None)}")
    if r < 1:
        raise ValueError(f"anchor repeat factor must be >= 1, got {r}")
    return np.repeat(lr_img, r * r, axis=1)


# --- fusion and bias handling -----------------------------------------------


def fuse_model(graph: ModelGraph) -> ModelGraph:
    """Lower every rep block of a train graph; returns the deploy twin."""
    nodes: list[Node] = []
    for node in graph.nodes:
        if isinstance(node, RepNode):
            nodes.append(ConvNode(node.name, lower_branch(node.branch)))
        elif isinstance(node, ConvNode):
            nodes.append(ConvNode(node.name, node.params.copy()))
        elif isinstance(node, SpabNode):
            nodes.append(
                SpabNode(node.name, node.w1.copy(), node.w2.copy(), node.w3.copy(), node.sigma, node.sigma_attn)
            )
        else:
            nodes.append(replace(node))
    return ModelGraph(
        spec=graph.spec,
        mode="deploy",
        nodes=nodes,
        aux=None,
        input_divisor=graph.input_divisor,
        _keep=graph._keep,
    )


def _branch_leaves(branch: BranchGraph):
    """Yield every ConvParams leaf inside a branch structure."""
    if isinstance(branch, reparam.Conv):
        yield branch.params
    elif isinstance(branch, reparam.Sequential):
        for p in branch.parts:
            yield from _branch_leaves(p)
    elif isinstance(branch, reparam.ParallelSum):
        for b in branch.branches:
            yield from _branch_leaves(b)
    elif isinstance(branch, reparam.DualStream):
        yield from (branch.k_b, branch.k_r2b, branch.k_b2r, branch.k_r)


def strip_model_bias(graph: ModelGraph) -> None:
    """Remove the bias from every convolution in the graph, in place."""
    for node in graph.nodes:
        if isinstance(node, ConvNode):
            node.params.bias = None
        elif isinstance(node, SpabNode):
            node.w1.bias = None
            node.w2.bias = None
            node.w3.bias = None
        elif isinstance(node, RepNode):
            for leaf in _branch_leaves(node.branch):
                leaf.bias = None
    if graph.aux is not None:
        graph.aux.conv.params.bias = None


def model_biases_absent(graph: ModelGraph) -> bool:
    return all(not name.endswith(".bias") for name in named_params(graph))


# --- parameter registry -------------------------------------------------


def _branch_owners(branch: BranchGraph, prefix: str, out: dict) -> None:
    if isinstance(branch, reparam.Conv):
        _conv_owners(prefix, branch.params, out)
    elif isinstance(branch, reparam.Sequential):
        for i, p in enumerate(branch.parts):
            _branch_owners(p, f"{prefix}.seq{i}", out)
    elif isinstance(branch, reparam.ParallelSum):
        for i, b in enumerate(branch.branches):
            _branch_owners(b, f"{prefix}.branch{i}", out)
    elif isinstance(branch, (reparam.ChannelScale, reparam.FixedFilter)):
        out[f"{prefix}.scale"] = (branch, "scale")
    elif isinstance(branch, reparam.DualStream):
        for tag, p in (("k_b", branch.k_b), ("k_r2b", branch.k_r2b), ("k_b2r", branch.k_b2r), ("k_r", branch.k_r)):
            _conv_owners(f"{prefix}.{tag}", p, out)
    elif isinstance(branch, reparam.Identity):
        pass
    else:
        raise TypeError(f"unknown branch node {branch!r}")


def _conv_owners(name: str, p: ConvParams, out: dict) -> None:
    out[f"{name}.weight"] = (p, "weight")
    if p.bias is not None:
        out[f"{name}.bias"] = (p, "bias")


def param_owners(graph: ModelGraph) -> dict[str, tuple[object, str]]:
    """Name -> (owning object, attribute) for every trainable tensor."""
    out: dict[str, tuple[object, str]] = {}
    for node in graph.nodes:
        if isinstance(node, ConvNode):
            _conv_owners(node.name, node.params, out)
        elif isinstance(node, RepNode):
            _branch_owners(node.branch, node.name, out)
        elif isinstance(node, SpabNode):
            _conv_owners(f"{node.name}.conv1", node.w1, out)
            _conv_owners(f"{node.name}.conv2", node.w2, out)
            _conv_owners(f"{node.name}.conv3", node.w3, out)
    if graph.aux is not None:
        _conv_owners("aux", graph.aux.conv.params, out)
    return out


def named_params(graph: ModelGraph) -> dict[str, np.ndarray]:
    """Stable name -> array mapping of every trainable tensor in the graph."""
    return {name: getattr(obj, attr) for name, (obj, attr) in param_owners(graph).items()}


# --- equivalence check -----------------------------------------------------


@dataclass(frozen=True)
class ModelEquivalenceReport:
    max_abs_err: float
    tol: float
    trials: int

    @property
    def passed(self) -> bool:
        return self.max_abs_err <= self.tol


def verify_deploy_equivalence(
    train_graph: ModelGraph,
    deploy_graph: ModelGraph | None = None,
    trials: int = 10,
    tol: float = 1e-4,
    seed: int = 0,
    size: int | None = None,
) -> ModelEquivalenceReport:
    """Whole-net extension of the block-level equivalence check."""
    if deploy_graph is None:
        deploy_graph = fuse_model(train_graph)
    d = train_graph.input_divisor
    side = size if size is not None else max(12, d * ((12 + d - 1) // d))
    if side % d:
        raise ValueError(f"probe size {side} not divisible by model divisor {d}")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x = rng.random((1, 3, side, side)).astype(np.float32)
        ya = forward(train_graph, x)
        yb = forward(deploy_graph, x)
        worst = max(worst, float(np.max(np.abs(ya - yb))))
    return ModelEquivalenceReport(max_abs_err=worst, tol=tol, trials=trials)


# --- spec serialization ------------------------------------------------------


def spec_to_dict(spec: ModelSpec) -> dict:
    layers = []
    for layer in spec.layers:
        if isinstance(layer, ConvL):
            layers.append({"kind": "conv", "out_ch": layer.out_ch, "k": layer.k, "stride": layer.stride, "bias": layer.bias})
        elif isinstance(layer, RepL):
            layers.append({"kind": "rep_block", "template": layer.template, "out_ch": layer.out_ch})
        elif isinstance(layer, ActL):
            layers.append({"kind": "activation", "fn": layer.kind.value})
        elif isinstance(layer, ShuffleL):
            layers.append({"kind": "pixel_shuffle", "r": layer.r})
        elif isinstance(layer, UnshuffleL):
            layers.append({"kind": "pixel_unshuffle", "r": layer.r})
        elif isinstance(layer, SpabL):
            layers.append({"kind": "spab"})
        elif isinstance(layer, AnchorAddL):
            layers.append({"kind": "anchor_residual", "r": layer.r})
        elif isinstance(layer, ConcatTapsL):
            layers.append({"kind": "concat_taps", "taps": list(layer.taps)})
        elif isinstance(layer, GlobalResidualL):
            layers.append({"kind": "global_residual"})
    return {
        "name": spec.name,
        "scale": spec.scale,
        "channels": spec.channels,
        "aux_head": spec.aux_head,
        "layers": layers,
    }


def spec_from_dict(d: dict) -> ModelSpec:
    layers: list[Layer] = []
    for item in d["layers"]:
        kind = item["kind"]
        if kind == "conv":
            layers.append(ConvL(item["out_ch"], item.get("k", 3), item.get("stride", 1), item.get("bias", True)))
        elif kind == "rep_block":
            layers.append(RepL(item["template"], item["out_ch"]))
        elif kind == "activation":
            layers.append(ActL(ActivationKind(item["fn"])))
        elif kind == "pixel_shuffle":
            layers.append(ShuffleL(item["r"]))
        elif kind == "pixel_unshuffle":
            layers.append(UnshuffleL(item["r"]))
        elif kind == "spab":
            layers.append(SpabL())
        elif kind == "anchor_residual":
            layers.append(AnchorAddL(item["r"]))
        elif kind == "concat_taps":
            layers.append(ConcatTapsL(tuple(item["taps"])))
        elif kind == "global_residual":
            layers.append(GlobalResidualL())
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
    return ModelSpec(
        name=d["name"],
        layers=tuple(layers),
        scale=d.get("scale", 4),
        channels=d.get("channels", 16),
        aux_head=d.get("aux_head", False),
    )


# --- the catalog ------------------------------------------------------------

RELU = ActL(ActivationKind.RELU)
GELU = ActL(ActivationKind.GELU_TANH_APPROX)


def _spec_reptcn(width: int = 16, aux_head: bool = False) -> ModelSpec:
    # three conv-equivalent layers; the middle one is a rep block while training
    return ModelSpec(
        name="reptcn",
        channels=width,
        aux_head=aux_head,
        layers=(
            ConvL(width),
            RELU,
            RepL("repvgg", width),
            RELU,
            ConvL(48),
            ShuffleL(4),
        ),
    )


def _spec_lanczospp(width: int = 32) -> ModelSpec:
    # x3 space-to-depth front, expand-residual rep block, 1x1 reconstruction, x12 shuffle
    return ModelSpec(
        name="lanczospp",
        channels=width,
        layers=(
            UnshuffleL(3),
            RepL("rep_residual", width),
            RELU,
            ConvL(432, k=1),
            ShuffleL(12),
        ),
    )


def _spec_span(width: int = 12, blocks: int = 2) -> ModelSpec:
    # attention net: hierarchical features concatenated from tapped block outputs
    layers: list[Layer] = [ConvL(width), RELU]
    layers += [SpabL() for _ in range(blocks)]
    layers.append(ConvL(width))
    # taps: first features, first and last block outputs, and the conv of the
    # final block output (node indices: O_i sits at i+1, the conv at blocks+2)
    taps = sorted({1, 2, blocks}) + [blocks + 2]
    layers.append(ConcatTapsL(tuple(taps)))
    layers.append(ConvL(48))
    layers.append(ShuffleL(4))
    return ModelSpec(name="span", channels=width, layers=tuple(layers))


def _spec_c3(width: int = 32) -> ModelSpec:
    return ModelSpec(
        name="c3",
        channels=width,
        layers=(ConvL(width), RELU, ConvL(width), RELU, ConvL(48), ShuffleL(4)),
    )


def _spec_anunet(width: int = 28) -> ModelSpec:
    # space-to-depth trunk with nested rep blocks and a nearest-anchor residual
    return ModelSpec(
        name="anunet",
        channels=width,
        layers=(
            UnshuffleL(2),
            RepL("ecb", width),
            GELU,
            RepL("nrb", width),
            GELU,
            RepL("nrb", width),
            GELU,
            RepL("ecb", 192),
            ShuffleL(2),
            AnchorAddL(4),
            ShuffleL(4),
        ),
    )


def _spec_resr(width: int = 20) -> ModelSpec:
    return ModelSpec(
        name="resr",
        channels=width,
        layers=(
            UnshuffleL(2),
            ConvL(width),
            RELU,
            RepL("ecb", width),
            RELU,
            RepL("ecb", width),
            RELU,
            ConvL(192),
            ShuffleL(8),
        ),
    )


def _spec_vpeg_r(width: int = 6) -> ModelSpec:
    layers: list[Layer] = [UnshuffleL(2), ConvL(width), RELU]
    for _ in range(3):
        layers += [RepL("repvgg", width), RELU]
    layers += [ConvL(192), ShuffleL(8)]
    return ModelSpec(name="vpeg_r", channels=width, layers=tuple(layers))


def _spec_etds(backbone: int = 16) -> ModelSpec:
    width = backbone + 3
    return ModelSpec(
        name="etds",
        channels=width,
        layers=(
            ConvL(width),
            RELU,
            RepL("dual_stream", width),
            RELU,
            RepL("dual_stream", width),
            RELU,
            ConvL(48),
            ShuffleL(4),
        ),
    )


def _spec_urpnet(width: int = 18) -> ModelSpec:
    return ModelSpec(
        name="urpnet",
        channels=width,
        layers=(
            UnshuffleL(2),
            ConvL(width),
            RELU,
            RepL("scaled_identity", width),
            RELU,
            ConvL(192, k=1),
            ShuffleL(8),
        ),
    )


def _spec_pixelart(width: int = 32) -> ModelSpec:
    return ModelSpec(
        name="pixelart",
        channels=width,
        layers=(
            ConvL(width, stride=2),
            RELU,
            RepL("ecb", width),
            RELU,
            RepL("ecb", width),
            RELU,
            ConvL(192),
            ShuffleL(8),
        ),
    )


MANDATORY_MODELS = ("reptcn", "lanczospp", "span", "c3", "anunet", "resr", "vpeg_r")

_CATALOG_BUILDERS = {
    "reptcn": _spec_reptcn,
    "lanczospp": _spec_lanczospp,
    "span": _spec_span,
    "c3": _spec_c3,
    "anunet": _spec_anunet,
    "resr": _spec_resr,
    "vpeg_r": _spec_vpeg_r,
    "etds": _spec_etds,
    "urpnet": _spec_urpnet,
    "pixelart": _spec_pixelart,
}


def zoo_catalog() -> list[ModelSpec]:
    """Deterministic catalog: the mandatory micro-architectures first, extras after."""
    return [_CATALOG_BUILDERS[name]() for name in _CATALOG_BUILDERS]


def get_spec(name: str, **overrides) -> ModelSpec:
    if name not in _CATALOG_BUILDERS:
        raise KeyError(f"unknown model {name!r}; catalog: {sorted(_CATALOG_BUILDERS)}")
    return _CATALOG_BUILDERS[name](**overrides)
