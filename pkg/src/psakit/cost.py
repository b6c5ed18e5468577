"""Closed-form parameter and FLOP accounting for attention blocks and models.

Counting conventions (applied uniformly):
  - 1 multiply-accumulate = 1 FLOP; a conv costs C_out*C_in*k^2 MACs per
    output pixel, a matmul [m,k]x[k,n] costs m*k*n
  - bias addition: 1 op per output element
  - softmax, sigmoid, relu, elementwise add/mul: 1 op per element
  - pooling: 1 op per element read (global pools: C*H*W; 3x3/s2 max pool:
    9 per output element)
  - batch norm (inference form): 2 ops per element, 2*C parameters
  - layer norm: 5 ops per element, 2*C parameters
  - transposed 4x4/s2 conv: counted as the equivalent dense stride-1 conv on
    the zero-dilated input, i.e. C_out*C_in*16 MACs per OUTPUT pixel.
    Counting on the input grid instead would skip the inserted zeros and
    report 4x fewer MACs.

Peak activation is the element count of the largest single logical tensor
materialized in a forward pass (scratch buffers of a particular kernel
implementation are not modeled).
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .attention import ATTENTION_KINDS


class ConfigError(ValueError):
    """Raised for malformed descriptors, unknown kinds, or bad grids."""


@dataclass(frozen=True)
class CostComponent:
    name: str
    flops: int = 0
    params: int = 0


@dataclass
class CostReport:
    flops: int
    params: int
    peak_activation: int
    breakdown: list[CostComponent] = field(default_factory=list)

    def component(self, name: str) -> CostComponent:
        for comp in self.breakdown:
            if comp.name == name:
                return comp
        raise KeyError(f"no cost component named {name!r}")

    def to_json(self) -> str:
        return json.dumps(
            {
                "flops": int(self.flops),
                "params": int(self.params),
                "peak_activation": int(self.peak_activation),
                "breakdown": [
                    {"name": c.name, "flops": int(c.flops), "params": int(c.params)}
                    for c in self.breakdown
                ],
            },
            indent=2,
        )


def _report(components: list[CostComponent], peak: int) -> CostReport:
    return CostReport(
        flops=sum(c.flops for c in components),
        params=sum(c.params for c in components),
        peak_activation=peak,
        breakdown=components,
    )


# ---------------------------------------------------------------------------
# attention block closed forms


def _half(c: int) -> int:
    return max(c // 2, 1)


def _channel_branch(c: int, p: int, b: int, normalize: bool) -> list[CostComponent]:
    mid = _half(c)
    comps = [
        CostComponent("ch_query_conv", flops=c * p + b * p, params=c + b),
        CostComponent("ch_value_conv", flops=mid * c * p + b * mid * p, params=mid * c + b * mid),
        CostComponent("ch_softmax", flops=p),
        CostComponent("ch_context", flops=mid * p),
        CostComponent("ch_excite_conv", flops=c * mid + b * c, params=c * mid + b * c),
    ]
    if normalize:
        comps.append(CostComponent("ch_norm", flops=5 * c, params=2 * c))
    comps.append(CostComponent("ch_sigmoid", flops=c))
    comps.append(CostComponent("ch_apply", flops=c * p))
    return comps


def _spatial_branch(c: int, p: int, b: int) -> list[CostComponent]:
    mid = _half(c)
    return [
        CostComponent("sp_query_conv", flops=mid * c * p + b * mid * p, params=mid * c + b * mid),
        CostComponent("sp_value_conv", flops=mid * c * p + b * mid * p, params=mid * c + b * mid),
        CostComponent("sp_pool", flops=mid * p),
        CostComponent("sp_softmax", flops=mid),
        CostComponent("sp_match", flops=mid * p),
        CostComponent("sp_sigmoid", flops=p),
        CostComponent("sp_apply", flops=c * p),
    ]


def cost_of_attention_block(kind: str, channels: int, h: int, w: int,
                            bias: bool = True, normalize: bool = False) -> CostReport:
    """Closed-form cost of one attention block on a [channels, h, w] input."""
    if kind not in ATTENTION_KINDS:
        raise ConfigError(f"unknown attention kind {kind!r}")
    c, p = int(channels), int(h) * int(w)
    if c < 1 or p < 1:
        raise ConfigError(f"bad block geometry c={channels}, h={h}, w={w}")
    b = 1 if bias else 0
    peak = c * p

    if kind == "psa-parallel":
        comps = _channel_branch(c, p, b, normalize) + _spatial_branch(c, p, b)
        comps.append(CostComponent("combine", flops=c * p))
        return _report(comps, peak)
    if kind == "psa-sequential":
        comps = _channel_branch(c, p, b, normalize) + _spatial_branch(c, p, b)
        return _report(comps, peak)
    if kind == "psa-channel":
        return _report(_channel_branch(c, p, b, normalize), peak)
    if kind == "psa-spatial":
        return _report(_spatial_branch(c, p, b), peak)

    if kind == "nl":
        comps = [
            CostComponent("qkv_convs", flops=3 * (c * c * p + b * c * p), params=3 * (c * c + b * c)),
            CostComponent("similarity", flops=c * p * p),
            CostComponent("softmax", flops=p * p),
            CostComponent("aggregate", flops=c * p * p),
            CostComponent("out_conv", flops=c * c * p + b * c * p, params=c * c + b * c),
            CostComponent("residual_add", flops=c * p),
        ]
        return _report(comps, max(peak, p * p))

    if kind == "se":
        r = max(c // 4, 1)
        comps = [
            CostComponent("pool", flops=c * p),
            CostComponent("fc", flops=2 * r * c + b * (r + c) + r, params=2 * r * c + b * (r + c)),
            CostComponent("sigmoid", flops=c),
            CostComponent("apply", flops=c * p),
        ]
        return _report(comps, peak)

    if kind == "gc":
        r = max(c // 4, 1)
        comps = [
            CostComponent("context_scores", flops=c * p + b * p, params=c + b),
            CostComponent("softmax", flops=p),
            CostComponent("context_pool", flops=c * p),
            CostComponent(
                "transform",
                flops=r * c + c * r + b * (r + c) + 5 * r + r,
                params=r * c + c * r + b * (r + c) + 2 * r,
            ),
            CostComponent("residual_add", flops=c * p),
        ]
        return _report(comps, peak)

    # cbam
    r = max(c // 16, 1)
    comps = [
        CostComponent("channel_pools", flops=2 * c * p),
        CostComponent("shared_mlp", flops=2 * (2 * r * c + b * (r + c) + r) + c,
                      params=2 * r * c + b * (r + c)),
        CostComponent("channel_sigmoid", flops=c),
        CostComponent("channel_apply", flops=c * p),
        CostComponent("spatial_maps", flops=2 * c * p),
        CostComponent("conv7x7", flops=2 * 49 * p + b * p, params=2 * 49 + b),
        CostComponent("spatial_sigmoid", flops=p),
        CostComponent("spatial_apply", flops=c * p),
    ]
    return _report(comps, peak)


# ---------------------------------------------------------------------------
# layer and model descriptors


_CONV_KERNEL = {"conv1x1": 1, "conv3x3": 3, "conv7x7": 7}


@dataclass(frozen=True)
class LayerSpec:
    """One primitive layer in a model descriptor.

    kind: conv1x1 | conv3x3 | conv7x7 | deconv4x4s2 | fc | maxpool3x3s2 |
          gap | bn | relu | softmax | sigmoid | add | attention
    """

    kind: str
    c_out: int | None = None
    stride: int = 1
    bias: bool = True
    attention_kind: str | None = None
    attention_bias: bool = True


@dataclass(frozen=True)
class ResidualBlockSpec:
    """A residual block: basic (two 3x3 convs, bias, no norm) or bottleneck
    (1x1 -> 3x3 -> 1x1, batch-normed, bias-free convs, projection shortcut
    when shape changes).  An attached attention block sits after the first
    3x3 convolution, at the block's mid width."""

    style: str  # "basic" | "bottleneck"
    mid: int
    out: int
    stride: int = 1
    attention: str | None = None
    attention_bias: bool = True

    def __post_init__(self):
        if self.style not in ("basic", "bottleneck"):
            raise ConfigError(f"unknown residual style {self.style!r}")
        if self.attention is not None and self.attention not in ATTENTION_KINDS:
            raise ConfigError(f"unknown attention kind {self.attention!r}")

    def with_attention(self, kind: str, bias: bool = True) -> "ResidualBlockSpec":
        if kind not in ATTENTION_KINDS:
            raise ConfigError(f"unknown attention kind {kind!r}")
        return dataclasses.replace(self, attention=kind, attention_bias=bias)


@dataclass(frozen=True)
class ModelDescriptor:
    name: str
    input_shape: tuple[int, int, int]
    layers: tuple = ()


def _conv_out(h: int, k: int, stride: int, pad: int) -> int:
    return (h + 2 * pad - k) // stride + 1


def _layer_cost(spec: LayerSpec, shape: tuple[int, int, int]):
    """Returns (flops, params, out_shape, peak_elements) for one layer."""
    c, h, w = shape
    kind = spec.kind
    if kind in _CONV_KERNEL:
        k = _CONV_KERNEL[kind]
        pad = k // 2
        ho, wo = _conv_out(h, k, spec.stride, pad), _conv_out(w, k, spec.stride, pad)
        co = spec.c_out
        flops = co * c * k * k * ho * wo + (co * ho * wo if spec.bias else 0)
        params = co * c * k * k + (co if spec.bias else 0)
        return flops, params, (co, ho, wo), max(c * h * w, co * ho * wo)
    if kind == "deconv4x4s2":
        co = spec.c_out
        ho, wo = 2 * h, 2 * w
        flops = co * c * 16 * ho * wo + (co * ho * wo if spec.bias else 0)
        params = co * c * 16 + (co if spec.bias else 0)
        return flops, params, (co, ho, wo), max(c * h * w, co * ho * wo)
    if kind == "fc":
        n_in = c * h * w
        flops = spec.c_out * n_in + (spec.c_out if spec.bias else 0)
        params = spec.c_out * n_in + (spec.c_out if spec.bias else 0)
        return flops, params, (spec.c_out, 1, 1), max(n_in, spec.c_out)
    if kind == "maxpool3x3s2":
        ho, wo = _conv_out(h, 3, 2, 1), _conv_out(w, 3, 2, 1)
        return 9 * c * ho * wo, 0, (c, ho, wo), c * h * w
    if kind == "gap":
        return c * h * w, 0, (c, 1, 1), c * h * w
    if kind == "bn":
        return 2 * c * h * w, 2 * c, shape, c * h * w
    if kind in ("relu", "softmax", "sigmoid", "add"):
        return c * h * w, 0, shape, c * h * w
    if kind == "attention":
        rep = cost_of_attention_block(spec.attention_kind, c, h, w, bias=spec.attention_bias)
        return rep.flops, rep.params, shape, rep.peak_activation
    raise ConfigError(f"unknown layer kind {kind!r}")


def _residual_cost(spec: ResidualBlockSpec, shape: tuple[int, int, int]):
    """Returns (flops_by_cat, params_by_cat, out_shape, peak) for one block."""
    c_in, h, w = shape
    fl: dict[str, int] = {}
    pa: dict[str, int] = {}

    def put(cat, flops, params=0):
        fl[cat] = fl.get(cat, 0) + flops
        pa[cat] = pa.get(cat, 0) + params

    peak = c_in * h * w

    if spec.style == "basic":
        if c_in != spec.out:
            raise ConfigError(
                f"basic residual block keeps width: in {c_in} != out {spec.out}"
            )
        co, p = spec.out, h * w
        put("conv", 2 * (co * co * 9 * p + co * p), 2 * (co * co * 9 + co))
        if spec.attention:
            rep = cost_of_attention_block(spec.attention, co, h, w, bias=spec.attention_bias)
            put("attention", rep.flops, rep.params)
            peak = max(peak, rep.peak_activation)
        put("relu", 2 * co * p)
        put("add", co * p)
        peak = max(peak, co * p)
        return fl, pa, (co, h, w), peak

    # bottleneck, stride applied on the first 1x1 (projection shortcut
    # follows the same stride)
    mid, out, s = spec.mid, spec.out, spec.stride
    ho, wo = _conv_out(h, 1, s, 0), _conv_out(w, 1, s, 0)
    p = ho * wo
    put("conv", mid * c_in * p, mid * c_in)
    put("bn", 2 * mid * p, 2 * mid)
    put("relu", mid * p)
    put("conv", mid * mid * 9 * p, mid * mid * 9)
    put("bn", 2 * mid * p, 2 * mid)
    if spec.attention:
        rep = cost_of_attention_block(spec.attention, mid, ho, wo, bias=spec.attention_bias)
        put("attention", rep.flops, rep.params)
        peak = max(peak, rep.peak_activation)
    put("relu", mid * p)
    put("conv", out * mid * p, out * mid)
    put("bn", 2 * out * p, 2 * out)
    if s != 1 or c_in != out:
        put("conv", out * c_in * p, out * c_in)
        put("bn", 2 * out * p, 2 * out)
    put("add", out * p)
    put("relu", out * p)
    peak = max(peak, out * p)
    return fl, pa, (out, ho, wo), peak


def shape_chain(desc: ModelDescriptor) -> list[tuple[str, tuple[int, int, int]]]:
    """Input shape plus the output shape of every top-level layer."""
    shape = desc.input_shape
    chain = [("input", shape)]
    for i, layer in enumerate(desc.layers):
        if isinstance(layer, ResidualBlockSpec):
            _, _, shape, _ = _residual_cost(layer, shape)
            label = f"{i}:{layer.style}" + (f"+{layer.attention}" if layer.attention else "")
        elif isinstance(layer, LayerSpec):
            _, _, shape, _ = _layer_cost(layer, shape)
            label = f"{i}:{layer.kind}"
        else:
            raise ConfigError(f"bad layer entry of type {type(layer).__name__}")
        chain.append((label, shape))
    return chain


def cost_of_model(desc: ModelDescriptor, input_shape: tuple[int, int, int] | None = None) -> CostReport:
    """Walk a model descriptor, propagating shapes and summing costs by
    layer category."""
    shape = tuple(input_shape) if input_shape is not None else tuple(desc.input_shape)
    if len(shape) != 3 or any(int(s) < 1 for s in shape):
        raise ConfigError(f"input shape must be [C,H,W] with positive dims, got {shape}")
    shape = tuple(int(s) for s in shape)
    fl: dict[str, int] = {}
    pa: dict[str, int] = {}
    peak = 0
    for layer in desc.layers:
        if isinstance(layer, ResidualBlockSpec):
            lf, lp, shape, lpeak = _residual_cost(layer, shape)
            for k in lf:
                fl[k] = fl.get(k, 0) + lf[k]
                pa[k] = pa.get(k, 0) + lp.get(k, 0)
        elif isinstance(layer, LayerSpec):
            f, prm, shape, lpeak = _layer_cost(layer, shape)
            cat = "attention" if layer.kind == "attention" else layer.kind
            fl[cat] = fl.get(cat, 0) + f
            pa[cat] = pa.get(cat, 0) + prm
        else:
            raise ConfigError(f"bad layer entry of type {type(layer).__name__}")
        peak = max(peak, lpeak)
    comps = [CostComponent(k, flops=fl[k], params=pa.get(k, 0)) for k in sorted(fl)]
    return _report(comps, peak)


def attach_attention(desc: ModelDescriptor, kind: str, bias: bool = True) -> ModelDescriptor:
    """Attach an attention block to every residual block of a descriptor."""
    if kind not in ATTENTION_KINDS:
        raise ConfigError(f"unknown attention kind {kind!r}")
    layers = tuple(
        layer.with_attention(kind, bias) if isinstance(layer, ResidualBlockSpec) else layer
        for layer in desc.layers
    )
    return dataclasses.replace(desc, name=f"{desc.name}+{kind}", layers=layers)


# ---------------------------------------------------------------------------
# builtin descriptors


def resnet50_simplebaseline(attention: str | None = None,
                            attention_bias: bool = True) -> ModelDescriptor:
    """Standard 50-layer residual trunk (16 bottlenecks: 3/4/6/3 at mid
    widths 64/128/256/512) plus three 256-channel 4x4/s2 transposed convs
    and a 1x1 head to 17 output maps."""
    layers: list = [
        LayerSpec("conv7x7", c_out=64, stride=2, bias=False),
        LayerSpec("bn"),
        LayerSpec("relu"),
        LayerSpec("maxpool3x3s2"),
    ]
    stages = [(3, 64, 256), (4, 128, 512), (6, 256, 1024), (3, 512, 2048)]
    for stage_idx, (n_blocks, mid, out) in enumerate(stages):
        for block_idx in range(n_blocks):
            stride = 2 if (stage_idx > 0 and block_idx == 0) else 1
            layers.append(
                ResidualBlockSpec("bottleneck", mid=mid, out=out, stride=stride,
                                  attention=attention, attention_bias=attention_bias)
            )
    for _ in range(3):
        layers.append(LayerSpec("deconv4x4s2", c_out=256, bias=False))
        layers.append(LayerSpec("bn"))
        layers.append(LayerSpec("relu"))
    layers.append(LayerSpec("conv1x1", c_out=17, bias=True))
    name = "resnet50-simplebaseline" + (f"+{attention}" if attention else "")
    return ModelDescriptor(name=name, input_shape=(3, 384, 288), layers=tuple(layers))


def toy_net_descriptor(width: int = 32, depth: int = 4, in_channels: int = 3,
                       out_channels: int = 4, image_size: int = 32,
                       attention: str | None = None,
                       attention_bias: bool = True) -> ModelDescriptor:
    """Descriptor of the toy benchmark net: 3x3 stem, `depth` basic residual
    blocks at constant width, 1x1 head.  Mirrors the live training net."""
    layers: list = [
        LayerSpec("conv3x3", c_out=width, bias=True),
        LayerSpec("relu"),
    ]
    for _ in range(depth):
        layers.append(
            ResidualBlockSpec("basic", mid=width, out=width, stride=1,
                              attention=attention, attention_bias=attention_bias)
        )
    layers.append(LayerSpec("conv1x1", c_out=out_channels, bias=True))
    name = "toy-heatmap-net" + (f"+{attention}" if attention else "")
    return ModelDescriptor(name=name, input_shape=(in_channels, image_size, image_size),
                           layers=tuple(layers))


_BUILTINS = {
    "resnet50-simplebaseline": lambda: resnet50_simplebaseline(),
    "resnet50-simplebaseline-psa": lambda: resnet50_simplebaseline(
        attention="psa-parallel", attention_bias=False
    ),
    "toy-heatmap-net": lambda: toy_net_descriptor(),
}


def builtin_descriptors(name: str | None = None):
    """List builtin descriptor names, or build one by name."""
    if name is None:
        return tuple(sorted(_BUILTINS))
    try:
        return _BUILTINS[name]()
    except KeyError:
        raise ConfigError(
            f"unknown descriptor {name!r}; builtins: {', '.join(sorted(_BUILTINS))}"
        ) from None


# ---------------------------------------------------------------------------
# scaling diagnostics


def _fit_exponent(xs: list[float], ys: list[float]) -> float:
    if len(set(xs)) < 2:
        raise ConfigError("degenerate grid: need at least 2 distinct sizes")
    if any(y <= 0 for y in ys):
        raise ConfigError("cost must be positive to fit a log-log slope")
    slope, _ = np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)
    return float(slope)


def scaling_check(kind: str, hw_grid=None, c_grid=None, c: int = 64,
                  hw: tuple[int, int] = (64, 64), component: str | None = None,
                  bias: bool = True) -> dict[str, float]:
    """Fit log-log scaling exponents of a block's FLOP cost.

    hw_grid: iterable of (H, W) pairs, fitted against H*W at fixed c.
    c_grid: iterable of channel counts, fitted at fixed hw.
    component: restrict the fit to one named breakdown component
    (e.g. "similarity" for the nl block) instead of the total.
    """
    if kind not in ATTENTION_KINDS:
        raise ConfigError(f"unknown attention kind {kind!r}")
    if hw_grid is None and c_grid is None:
        raise ConfigError("provide hw_grid and/or c_grid")

    def flops_at(cc: int, hh: int, ww: int) -> float:
        rep = cost_of_attention_block(kind, cc, hh, ww, bias=bias)
        return float(rep.component(component).flops if component else rep.flops)

    out: dict[str, float] = {}
    if hw_grid is not None:
        pairs = [(int(h), int(w)) for h, w in hw_grid]
        out["hw"] = _fit_exponent(
            [h * w for h, w in pairs], [flops_at(c, h, w) for h, w in pairs]
        )
    if c_grid is not None:
        cs = [int(x) for x in c_grid]
        out["c"] = _fit_exponent(
            [float(x) for x in cs], [flops_at(x, hw[0], hw[1]) for x in cs]
        )
    return out
