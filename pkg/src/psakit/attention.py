"""Attention blocks for pixel-wise regression heads.

The centerpiece is a dual-branch design that keeps full resolution along one
tensor axis while collapsing the other:

  - the channel gate squeezes space to a single softmax-weighted summary and
    emits one sigmoid weight per channel;
  - the spatial gate squeezes channels to a softmax-weighted vector and emits
    one sigmoid weight per pixel.

Both gates therefore stay "polarized": no joint C x HW map is ever formed,
so cost is linear in pixel count.  Four layouts compose the two gates
(parallel sum, sequential channel-then-spatial, or either branch alone).

Comparison blocks with the same call contract: a non-local block with a full
pairwise pixel-affinity matrix, squeeze-excite channel gating, a global-
context block, and stacked channel+spatial gating with pooled descriptors
(CBAM).  All blocks map [C,H,W] -> [C,H,W] (or [N,C,H,W] sample-wise) and
expose parameters() for training and checking.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import core
from .core import ParamInit, Parameter, Tensor

ATTENTION_KINDS = (
    "psa-parallel",
    "psa-sequential",
    "psa-channel",
    "psa-spatial",
    "nl",
    "se",
    "gc",
    "cbam",
)


def _half(c: int) -> int:
    return max(c // 2, 1)


@dataclass
class PsaConfig:
    """Options for the polarized block.

    bias: give every 1x1 convolution a bias term.
    normalize: layer-normalize the channel-branch excitation before the
    sigmoid (off by default).
    """

    bias: bool = True
    normalize: bool = False


class _Block:
    """Shared plumbing: parameter registry and batch mapping."""

    kind = "?"

    def __init__(self):
        self._params: list[Parameter] = []

    def _reg(self, p: Parameter) -> Parameter:
        self._params.append(p)
        return p

    def parameters(self) -> list[Parameter]:
        return list(self._params)

    def n_params(self) -> int:
        return sum(p.value.data.size for p in self._params)

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.ndim == 4:
            return core.stack0([self.forward(core.select0(x, i)) for i in range(x.shape[0])])
        if x.data.ndim == 3:
            return self.forward(x)
        raise core.ShapeError(f"{self.kind}: expected [C,H,W] or [N,C,H,W], got {x.shape}")

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def _check_channels(self, x: Tensor, channels: int) -> None:
        if x.shape[0] != channels:
            raise core.ShapeError(
                f"{self.kind}: built for {channels} channels, input has {x.shape[0]}"
            )


class ChannelGate(_Block):
    """Per-channel sigmoid weights from a softmax-pooled spatial summary.

    The query projection scores every pixel (C -> 1); a softmax over all
    pixels turns the scores into a spatial distribution; the value
    projection (C -> C/2) is averaged under that distribution; the
    excitation projection (C/2 -> C) maps the pooled vector back to one
    logit per channel.
    """

    kind = "psa-channel-gate"

    def __init__(self, channels: int, init: ParamInit, prefix: str,
                 bias: bool = True, normalize: bool = False):
        super().__init__()
        self.channels = channels
        self.normalize = normalize
        mid = _half(channels)
        self.mid = mid
        self.wq = self._reg(init.conv_weight(f"{prefix}.wq", (1, channels), fan_in=channels))
        self.wv = self._reg(init.conv_weight(f"{prefix}.wv", (mid, channels), fan_in=channels))
        self.wz = self._reg(init.conv_weight(f"{prefix}.wz", (channels, mid), fan_in=mid))
        self.bq = self._reg(init.zeros(f"{prefix}.bq", (1,))) if bias else None
        self.bv = self._reg(init.zeros(f"{prefix}.bv", (mid,))) if bias else None
        self.bz = self._reg(init.zeros(f"{prefix}.bz", (channels,))) if bias else None
        if normalize:
            self.ln_gamma = self._reg(init.ones(f"{prefix}.ln_gamma", (channels,)))
            self.ln_beta = self._reg(init.zeros(f"{prefix}.ln_beta", (channels,)))

    def gate(self, x: Tensor) -> Tensor:
        self._check_channels(x, self.channels)
        c, h, w = x.shape
        p = h * w
        q = core.conv1x1(x, self.wq.value, self.bq.value if self.bq else None)  # [1,H,W]
        v = core.conv1x1(x, self.wv.value, self.bv.value if self.bv else None)  # [mid,H,W]
        att = core.softmax(core.reshape(q, (p, 1)), axis=0)                      # [P,1]
        pooled = core.matmul(core.reshape(v, (self.mid, p)), att)                # [mid,1]
        z = core.conv1x1(core.reshape(pooled, (self.mid, 1, 1)),
                         self.wz.value, self.bz.value if self.bz else None)      # [C,1,1]
        if self.normalize:
            z = core.layer_norm(z, self.ln_gamma.value, self.ln_beta.value)
        return core.sigmoid(z)

    def forward(self, x: Tensor) -> Tensor:
        return core.mul(self.gate(x), x)


class SpatialGate(_Block):
    """Per-pixel sigmoid weights from a softmax-pooled channel summary.

    The query projection (C -> C/2) is globally average-pooled and
    softmax-normalized over its C/2 entries; matching it against the value
    projection (C -> C/2) scores every pixel with a single logit.
    """

    kind = "psa-spatial-gate"

    def __init__(self, channels: int, init: ParamInit, prefix: str, bias: bool = True):
        super().__init__()
        self.channels = channels
        mid = _half(channels)
        self.mid = mid
        self.wq = self._reg(init.conv_weight(f"{prefix}.wq", (mid, channels), fan_in=channels))
        self.wv = self._reg(init.conv_weight(f"{prefix}.wv", (mid, channels), fan_in=channels))
        self.bq = self._reg(init.zeros(f"{prefix}.bq", (mid,))) if bias else None
        self.bv = self._reg(init.zeros(f"{prefix}.bv", (mid,))) if bias else None

    def gate(self, x: Tensor) -> Tensor:
        self._check_channels(x, self.channels)
        c, h, w = x.shape
        p = h * w
        q = core.conv1x1(x, self.wq.value, self.bq.value if self.bq else None)  # [mid,H,W]
        v = core.conv1x1(x, self.wv.value, self.bv.value if self.bv else None)  # [mid,H,W]
        qp = core.global_avg_pool(q)                                             # [mid,1,1]
        att = core.softmax(core.reshape(qp, (1, self.mid)), axis=1)              # [1,mid]
        scores = core.matmul(att, core.reshape(v, (self.mid, p)))                # [1,P]
        return core.sigmoid(core.reshape(scores, (1, h, w)))

    def forward(self, x: Tensor) -> Tensor:
        return core.mul(self.gate(x), x)


class PolarizedAttention(_Block):
    """Dual-branch gating block; layout picks how the branches compose.

    parallel:   Z = gate_ch(X) * X + gate_sp(X) * X
    sequential: Z_ch = gate_ch(X) * X, then Z = gate_sp(Z_ch) * Z_ch
    channel / spatial: single branch only.
    """

    def __init__(self, channels: int, layout: str = "parallel",
                 init: ParamInit | None = None, prefix: str = "psa",
                 config: PsaConfig | None = None):
        super().__init__()
        if layout not in ("parallel", "sequential", "channel", "spatial"):
            raise ValueError(f"unknown layout {layout!r}")
        cfg = config or PsaConfig()
        init = init or ParamInit(0)
        self.channels = channels
        self.layout = layout
        self.kind = f"psa-{layout}"
        self.channel_gate: ChannelGate | None = None
        self.spatial_gate: SpatialGate | None = None
        if layout in ("parallel", "sequential", "channel"):
            self.channel_gate = ChannelGate(channels, init, f"{prefix}.ch",
                                            bias=cfg.bias, normalize=cfg.normalize)
            self._params.extend(self.channel_gate.parameters())
        if layout in ("parallel", "sequential", "spatial"):
            self.spatial_gate = SpatialGate(channels, init, f"{prefix}.sp", bias=cfg.bias)
            self._params.extend(self.spatial_gate.parameters())

    def forward(self, x: Tensor) -> Tensor:
        if self.layout == "parallel":
            zc = core.mul(self.channel_gate.gate(x), x)
            zs = core.mul(self.spatial_gate.gate(x), x)
            return core.add(zc, zs)
        if self.layout == "sequential":
            zc = core.mul(self.channel_gate.gate(x), x)
            return core.mul(self.spatial_gate.gate(zc), zc)
        if self.layout == "channel":
            return self.channel_gate.forward(x)
        return self.spatial_gate.forward(x)


class NonLocalBlock(_Block):
    """Residual block over the full pairwise pixel-affinity matrix.

    Query/key embeddings score every pixel pair; a softmax over keys weights
    the value embedding; a final projection re-enters the input as a
    residual.  Memory and time grow with (H*W)^2.
    """

    kind = "nl"

    def __init__(self, channels: int, init: ParamInit | None = None,
                 prefix: str = "nl", bias: bool = True):
        super().__init__()
        init = init or ParamInit(0)
        self.channels = channels
        c = channels
        self.wq = self._reg(init.conv_weight(f"{prefix}.wq", (c, c), fan_in=c))
        self.wk = self._reg(init.conv_weight(f"{prefix}.wk", (c, c), fan_in=c))
        self.wv = self._reg(init.conv_weight(f"{prefix}.wv", (c, c), fan_in=c))
        self.wz = self._reg(init.conv_weight(f"{prefix}.wz", (c, c), fan_in=c))
        self.bq = self._reg(init.zeros(f"{prefix}.bq", (c,))) if bias else None
        self.bk = self._reg(init.zeros(f"{prefix}.bk", (c,))) if bias else None
        self.bv = self._reg(init.zeros(f"{prefix}.bv", (c,))) if bias else None
        self.bz = self._reg(init.zeros(f"{prefix}.bz", (c,))) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        self._check_channels(x, self.channels)
        c, h, w = x.shape
        p = h * w
        q = core.conv1x1(x, self.wq.value, self.bq.value if self.bq else None)
        k = core.conv1x1(x, self.wk.value, self.bk.value if self.bk else None)
        v = core.conv1x1(x, self.wv.value, self.bv.value if self.bv else None)
        qm = core.reshape(q, (c, p))
        km = core.reshape(k, (c, p))
        vm = core.reshape(v, (c, p))
        sim = core.matmul(core.transpose2d(qm), km)       # [P,P]
        att = core.softmax(sim, axis=1)                   # rows: one per query pixel
        agg = core.matmul(vm, core.transpose2d(att))      # [C,P]
        z = core.conv1x1(core.reshape(agg, (c, h, w)),
                         self.wz.value, self.bz.value if self.bz else None)
        return core.add(x, z)


class SqueezeExcite(_Block):
    """Channel gating from the global average descriptor (reduction C/4)."""

    kind = "se"

    def __init__(self, channels: int, init: ParamInit | None = None,
                 prefix: str = "se", bias: bool = True):
        super().__init__()
        init = init or ParamInit(0)
        self.channels = channels
        r = max(channels // 4, 1)
        self.r = r
        self.w1 = self._reg(init.conv_weight(f"{prefix}.w1", (r, channels), fan_in=channels))
        self.w2 = self._reg(init.conv_weight(f"{prefix}.w2", (channels, r), fan_in=r))
        self.b1 = self._reg(init.zeros(f"{prefix}.b1", (r,))) if bias else None
        self.b2 = self._reg(init.zeros(f"{prefix}.b2", (channels,))) if bias else None

    def gate(self, x: Tensor) -> Tensor:
        self._check_channels(x, self.channels)
        s = core.global_avg_pool(x)
        hdn = core.relu(core.conv1x1(s, self.w1.value, self.b1.value if self.b1 else None))
        z = core.conv1x1(hdn, self.w2.value, self.b2.value if self.b2 else None)
        return core.sigmoid(z)

    def forward(self, x: Tensor) -> Tensor:
        return core.mul(self.gate(x), x)


class GlobalContextBlock(_Block):
    """Residual block: softmax-pooled global context through a bottleneck
    transform (reduction C/4, layer norm inside)."""

    kind = "gc"

    def __init__(self, channels: int, init: ParamInit | None = None,
                 prefix: str = "gc", bias: bool = True):
        super().__init__()
        init = init or ParamInit(0)
        self.channels = channels
        c = channels
        r = max(c // 4, 1)
        self.r = r
        self.wk = self._reg(init.conv_weight(f"{prefix}.wk", (1, c), fan_in=c))
        self.w1 = self._reg(init.conv_weight(f"{prefix}.w1", (r, c), fan_in=c))
        self.w2 = self._reg(init.conv_weight(f"{prefix}.w2", (c, r), fan_in=r))
        self.bk = self._reg(init.zeros(f"{prefix}.bk", (1,))) if bias else None
        self.b1 = self._reg(init.zeros(f"{prefix}.b1", (r,))) if bias else None
        self.b2 = self._reg(init.zeros(f"{prefix}.b2", (c,))) if bias else None
        self.ln_gamma = self._reg(init.ones(f"{prefix}.ln_gamma", (r,)))
        self.ln_beta = self._reg(init.zeros(f"{prefix}.ln_beta", (r,)))

    def forward(self, x: Tensor) -> Tensor:
        self._check_channels(x, self.channels)
        c, h, w = x.shape
        p = h * w
        scores = core.conv1x1(x, self.wk.value, self.bk.value if self.bk else None)  # [1,H,W]
        att = core.softmax(core.reshape(scores, (p, 1)), axis=0)                      # [P,1]
        ctx = core.matmul(core.reshape(x, (c, p)), att)                               # [C,1]
        ctx3 = core.reshape(ctx, (c, 1, 1))
        hdn = core.conv1x1(ctx3, self.w1.value, self.b1.value if self.b1 else None)   # [r,1,1]
        hdn = core.relu(core.layer_norm(hdn, self.ln_gamma.value, self.ln_beta.value))
        z = core.conv1x1(hdn, self.w2.value, self.b2.value if self.b2 else None)      # [C,1,1]
        return core.add(x, z)


class ConvBlockAttention(_Block):
    """Channel gate from avg+max descriptors through a shared bottleneck MLP
    (reduction C/16), then a spatial gate from a 7x7 convolution over the
    stacked channel-mean and channel-max maps."""

    kind = "cbam"

    def __init__(self, channels: int, init: ParamInit | None = None,
                 prefix: str = "cbam", bias: bool = True):
        super().__init__()
        init = init or ParamInit(0)
        self.channels = channels
        c = channels
        r = max(c // 16, 1)
        self.r = r
        self.w1 = self._reg(init.conv_weight(f"{prefix}.w1", (r, c), fan_in=c))
        self.w2 = self._reg(init.conv_weight(f"{prefix}.w2", (c, r), fan_in=r))
        self.b1 = self._reg(init.zeros(f"{prefix}.b1", (r,))) if bias else None
        self.b2 = self._reg(init.zeros(f"{prefix}.b2", (c,))) if bias else None
        self.wsp = self._reg(init.conv_weight(f"{prefix}.wsp", (1, 2, 7, 7), fan_in=2 * 49))
        self.bsp = self._reg(init.zeros(f"{prefix}.bsp", (1,))) if bias else None

    def _mlp(self, s: Tensor) -> Tensor:
        hdn = core.relu(core.conv1x1(s, self.w1.value, self.b1.value if self.b1 else None))
        return core.conv1x1(hdn, self.w2.value, self.b2.value if self.b2 else None)

    def channel_gate(self, x: Tensor) -> Tensor:
        avg = self._mlp(core.global_avg_pool(x))
        mx = self._mlp(core.global_max_pool(x))
        return core.sigmoid(core.add(avg, mx))

    def spatial_gate(self, x: Tensor) -> Tensor:
        maps = core.concat_channels(core.channel_mean(x), core.channel_max(x))  # [2,H,W]
        z = core.conv2d(maps, self.wsp.value, self.bsp.value if self.bsp else None,
                        stride=1, pad=3)
        return core.sigmoid(z)

    def forward(self, x: Tensor) -> Tensor:
        self._check_channels(x, self.channels)
        xc = core.mul(self.channel_gate(x), x)
        return core.mul(self.spatial_gate(xc), xc)


def make_attention(kind: str, channels: int, init: ParamInit | None = None,
                   prefix: str | None = None, bias: bool = True,
                   normalize: bool = False) -> _Block:
    """Build an attention block by kind string (see ATTENTION_KINDS)."""
    if kind not in ATTENTION_KINDS:
        raise ValueError(f"unknown attention kind {kind!r}; expected one of {ATTENTION_KINDS}")
    init = init or ParamInit(0)
    prefix = prefix if prefix is not None else kind
    if kind.startswith("psa-"):
        layout = kind.split("-", 1)[1]
        return PolarizedAttention(channels, layout=layout, init=init, prefix=prefix,
                                  config=PsaConfig(bias=bias, normalize=normalize))
    cls = {
        "nl": NonLocalBlock,
        "se": SqueezeExcite,
        "gc": GlobalContextBlock,
        "cbam": ConvBlockAttention,
    }[kind]
    return cls(channels, init=init, prefix=prefix, bias=bias)


def attach_to_residual_block(block_spec, attention_kind: str):
    """Return a copy of a residual-block description with an attention block
    attached after its first 3x3 convolution.

    block_spec must be a cost.ResidualBlockSpec (basic or bottleneck);
    anything else is a configuration error.
    """
    from . import cost

    if not isinstance(block_spec, cost.ResidualBlockSpec):
        raise cost.ConfigError(
            f"can only attach attention to a residual block spec, got {type(block_spec).__name__}"
        )
    if attention_kind not in ATTENTION_KINDS:
        raise cost.ConfigError(f"unknown attention kind {attention_kind!r}")
    return block_spec.with_attention(attention_kind)
