"""Small classifiers with pAdaIN inserted after every conv, plus a toy autoencoder.

A model is a flat list of :class:`LayerSpec` records interpreted by
:func:`forward`. Residual blocks are bracketed by ``res_start``/``res_end``
records; the optional projection shortcut lives in the ``res_end`` record.
"""
from __future__ import annotations

import copy
import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import ops
from .errors import DimensionError, InputError
from .norm import (
    BatchNormState, ChannelStats, Mode, PAdaINConfig, PermutationPolicy, adain, batch_norm,
    channel_stats, padain_forward, sample_permutation,
)
from .rng import StepStreams, Transcript
from .tensor import Tensor, no_grad, parameter


class Arch(str, enum.Enum):
    SMALL_VGG = "SmallVGG"
    SMALL_RESNET = "SmallResNet"
    AUTOENCODER = "Autoencoder"


@dataclass
class LayerSpec:
    kind: str
    name: str
    block: int = 0
    cfg: dict = field(default_factory=dict)


@dataclass
class Model:
    arch: Arch
    layers: list
    params: dict  # name -> Tensor, includes BN gamma/beta
    bn: dict  # layer name -> BatchNormState
    padain_cfg: PAdaINConfig
    meta: dict  # builder arguments, enough to rebuild the layer list

    def parameters(self):
        return list(self.params.items())

    def num_parameters(self) -> int:
        return int(sum(t.size for t in self.params.values()))

    def buffers(self) -> dict:
        out = {}
        for name, st in self.bn.items():
            out[f"{name}.running_mean"] = st.running_mean
            out[f"{name}.running_var"] = st.running_var
        return out

    def state_arrays(self) -> dict:
        arrays = {name: t.data for name, t in self.params.items()}
        arrays.update(self.buffers())
        return arrays

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def iter_layers(self):
        for spec in self.layers:
            yield spec
            if spec.kind == "res_end":
                yield from spec.cfg.get("shortcut", [])

    def padain_layers(self):
        return [s for s in self.iter_layers() if s.kind == "padain"]

    def clone(self) -> "Model":
        return copy.deepcopy(self)


class _Builder:
    def __init__(self, cfg: PAdaINConfig, init_seed: int, bn_momentum: float, with_padain: bool = True):
        self.cfg = cfg
        self.rng = np.random.default_rng(init_seed)
        self.bn_momentum = bn_momentum
        self.with_padain = with_padain
        self.params: dict = {}
        self.bn: dict = {}
        self.padain_count = 0

    def _kaiming(self, shape, fan_in, name):
        bound = np.sqrt(6.0 / fan_in)
        t = parameter(self.rng.uniform(-bound, bound, size=shape).astype(np.float32), name=name)
        self.params[name] = t
        return t

    def _zeros(self, shape, name):
        t = parameter(np.zeros(shape, dtype=np.float32), name=name)
        self.params[name] = t
        return t

    def conv(self, name, cin, cout, k, stride, padding, block):
        self._kaiming((cout, cin, k, k), cin * k * k, f"{name}.weight")
        self._zeros((cout,), f"{name}.bias")
        return LayerSpec("conv", name, block, {"stride": stride, "padding": padding})

    def conv_t(self, name, cin, cout, k, stride, padding, block):
        # each output pixel sees only (k / stride)^2 kernel taps per input channel
        self._kaiming((cin, cout, k, k), cin * max(1, k // stride) ** 2, f"{name}.weight")
        self._zeros((cout,), f"{name}.bias")
        return LayerSpec("convT", name, block, {"stride": stride, "padding": padding})

    def linear(self, name, din, dout, block):
        self._kaiming((dout, din), din, f"{name}.weight")
        self._zeros((dout,), f"{name}.bias")
        return LayerSpec("linear", name, block)

    def bn_layer(self, name, c, block):
        st = BatchNormState.create(c, momentum=self.bn_momentum, name=name)
        self.bn[name] = st
        self.params[f"{name}.gamma"] = st.gamma
        self.params[f"{name}.beta"] = st.beta
        return LayerSpec("bn", name, block)

    def conv_unit(self, name, cin, cout, k, stride, padding, block, shortcut=False):
        """conv -> pAdaIN (if the block is active) -> BN."""
        out = [self.conv(f"{name}.conv", cin, cout, k, stride, padding, block)]
        active = self.with_padain and self.cfg.active_in(block) and (not shortcut or self.cfg.on_shortcut)
        if active:
            out.append(LayerSpec("padain", f"{name}.padain", block, {"layer_id": self.padain_count}))
            self.padain_count += 1
        out.append(self.bn_layer(f"{name}.bn", cout, block))
        return out


def _scaled(channels, width):
    return [max(1, int(round(c * width))) for c in channels]


def build_classifier(arch, num_classes: int, cfg: Optional[PAdaINConfig] = None, init_seed: int = 0,
                     width: float = 1.0, in_channels: int = 3, bn_momentum: float = 0.1,
                     with_padain: bool = True) -> Model:
    """SmallVGG (3 blocks x 2 convs) or SmallResNet (stem + 4 residual blocks).

    Every conv is followed by pAdaIN (where ``cfg.block_mask`` allows it) and
    then BN. ``with_padain=False`` builds the same network with no pAdaIN
    layers at all; initialization is identical because pAdaIN has no weights.
    """
    arch = Arch(arch)
    if num_classes < 2:
        raise InputError(f"num_classes must be >= 2, got {num_classes}")
    cfg = cfg or PAdaINConfig()
    b = _Builder(cfg, init_seed, bn_momentum, with_padain)
    layers: list = []
    if arch is Arch.SMALL_VGG:
        chans = _scaled([32, 64, 128], width)
        cin = in_channels
        for blk, c in enumerate(chans):
            for j in range(2):
                layers += b.conv_unit(f"b{blk}.u{j}", cin, c, 3, 1, 1, blk)
                layers.append(LayerSpec("relu", f"b{blk}.u{j}.relu", blk))
                cin = c
            if blk < len(chans) - 1:
                layers.append(LayerSpec("maxpool", f"b{blk}.pool", blk, {"k": 2}))
        head_block = len(chans) - 1
    elif arch is Arch.SMALL_RESNET:
        chans = _scaled([32, 32, 64, 64], width)
        strides = [1, 2, 2, 1]
        stem = _scaled([32], width)[0]
        layers += b.conv_unit("stem", in_channels, stem, 3, 1, 1, 0)
        layers.append(LayerSpec("relu", "stem.relu", 0))
        cin = stem
        for i, (c, s) in enumerate(zip(chans, strides)):
            blk = i + 1
            layers.append(LayerSpec("res_start", f"b{blk}.start", blk))
            layers += b.conv_unit(f"b{blk}.u0", cin, c, 3, s, 1, blk)
            layers.append(LayerSpec("relu", f"b{blk}.u0.relu", blk))
            layers += b.conv_unit(f"b{blk}.u1", c, c, 3, 1, 1, blk)
            shortcut = []
            if s != 1 or c != cin:
                shortcut = b.conv_unit(f"b{blk}.proj", cin, c, 1, s, 0, blk, shortcut=True)
            layers.append(LayerSpec("res_end", f"b{blk}.end", blk, {"shortcut": shortcut}))
            layers.append(LayerSpec("relu", f"b{blk}.relu", blk))
            cin = c
        head_block = len(chans)
    else:
        raise InputError(f"{arch.value} is not a classifier architecture")
    layers.append(LayerSpec("gap", "head.pool", head_block))
    layers.append(b.linear("head.fc", cin, num_classes, head_block))
    meta = {
        "num_classes": num_classes, "init_seed": init_seed, "width": width,
        "in_channels": in_channels, "bn_momentum": bn_momentum, "with_padain": with_padain,
    }
    return Model(arch, layers, b.params, b.bn, cfg, meta)


def build_autoencoder(cfg: Optional[PAdaINConfig] = None, init_seed: int = 0,
                      channels=(16, 32, 64, 64, 64), in_channels: int = 3) -> Model:
    """Five stride-2 conv encoder layers (indices 0-4) and a mirrored transposed-conv decoder."""
    cfg = cfg or PAdaINConfig(p=0.0)
    b = _Builder(cfg, init_seed, 0.1, with_padain=False)
    layers: list = []
    cin = in_channels
    last = len(channels) - 1
    for i, c in enumerate(channels):
        layers.append(b.conv(f"enc{i}", cin, c, 3, 2, 1, i))
        if i < last:
            layers.append(LayerSpec("relu", f"enc{i}.relu", i))
        cin = c
    outs = list(reversed(channels[:-1])) + [in_channels]
    for j, c in enumerate(outs):
        layers.append(b.conv_t(f"dec{j}", cin, c, 4, 2, 1, len(channels) + j))
        kind = "sigmoid" if j == len(outs) - 1 else "relu"
        layers.append(LayerSpec(kind, f"dec{j}.{kind}", len(channels) + j))
        cin = c
    meta = {"init_seed": init_seed, "channels": list(channels), "in_channels": in_channels}
    return Model(Arch.AUTOENCODER, layers, b.params, b.bn, cfg, meta)


def rebuild(arch, meta: dict, cfg: PAdaINConfig) -> Model:
    arch = Arch(arch)
    if arch is Arch.AUTOENCODER:
        return build_autoencoder(cfg, meta["init_seed"], tuple(meta["channels"]), meta["in_channels"])
    return build_classifier(arch, cfg=cfg, **meta)


class _ForwardCtx:
    def __init__(self, model, mode, streams, transcript):
        self.model = model
        self.mode = Mode(mode)
        self.streams = streams
        self.transcript = transcript
        self.shared_perm = None

    def perm_for(self, n):
        if self.model.padain_cfg.permutation_policy is not PermutationPolicy.FIXED_ACROSS_LAYERS:
            return None
        if self.shared_perm is None or len(self.shared_perm) != n:
            self.shared_perm = sample_permutation(n, self.streams.shared())
        return self.shared_perm


def _apply(spec: LayerSpec, x: Tensor, ctx: _ForwardCtx, stack: list) -> Tensor:
    p = ctx.model.params
    k = spec.kind
    if k == "conv":
        return ops.conv2d(x, p[f"{spec.name}.weight"], p[f"{spec.name}.bias"], **spec.cfg)
    if k == "convT":
        return ops.conv_transpose2d(x, p[f"{spec.name}.weight"], p[f"{spec.name}.bias"], **spec.cfg)
    if k == "padain":
        if ctx.mode is Mode.EVAL:
            return x
        lid = spec.cfg["layer_id"]
        return padain_forward(x, ctx.model.padain_cfg, ctx.streams.layer(lid), ctx.mode, lid,
                              perm=ctx.perm_for(x.shape[0]), transcript=ctx.transcript)
    if k == "bn":
        return batch_norm(x, ctx.model.bn[spec.name], ctx.mode)
    if k == "relu":
        return ops.relu(x)
    if k == "sigmoid":
        return ops.sigmoid(x)
    if k == "maxpool":
        return ops.max_pool2d(x, spec.cfg["k"])
    if k == "avgpool":
        return ops.avg_pool2d(x, spec.cfg["k"])
    if k == "gap":
        return ops.global_avg_pool(x)
    if k == "linear":
        if x.ndim != 2:
            x = ops.flatten(x)
        return ops.linear(x, p[f"{spec.name}.weight"], p[f"{spec.name}.bias"])
    if k == "res_start":
        stack.append(x)
        return x
    if k == "res_end":
        sc = stack.pop()
        for sub in spec.cfg.get("shortcut", []):
            sc = _apply(sub, sc, ctx, stack)
        return ops.add(x, sc)
    raise InputError(f"unknown layer kind {k!r}")


def forward(model: Model, batch, mode=Mode.EVAL, rng: Optional[StepStreams] = None,
            transcript: Optional[Transcript] = None,
            hooks: Optional[dict[str, Callable[[Tensor], Tensor]]] = None,
            taps: Optional[dict] = None) -> Tensor:
    """Run the layer list. ``hooks[name]`` rewrites a layer's output; ``taps`` collects outputs."""
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if rng is None:
        rng = StepStreams(0, 0)
    ctx = _ForwardCtx(model, mode, rng, transcript)
    stack: list = []
    for i, spec in enumerate(model.layers):
        try:
            x = _apply(spec, x, ctx, stack)
        except DimensionError as e:
            raise DimensionError(f"layer {i} ({spec.name}, {spec.kind}): {e}") from e
        if hooks and spec.name in hooks:
            x = hooks[spec.name](x)
        if taps is not None:
            taps[spec.name] = x
    return x


def encoder_layer_names(model: Model) -> list:
    return [s.name for s in model.layers if s.kind == "conv" and s.name.startswith("enc")]


@dataclass
class SwapReport:
    layer: int
    mu_delta: float  # max |mu(swapped) - mu(b)|
    sigma_delta: float


def stats_swap_inference(model: Model, a, b, layer_set, eps: float = 1e-12):
    """Reconstruct ``a`` with AdaIN(act_a, act_b) at the listed encoder layers.

    ``b``'s activations come from a separate clean pass; the decoder is untouched.
    Runs in float64 so the reported stats deltas reflect the math, not rounding.
    The report measures raw (eps = 0) stats. A positive eps shrinks the donor
    std by sqrt(v / (v + eps)), so the default is tiny; it only has to keep
    the 1x1 bottleneck (zero spatial variance) finite.
    """
    if model.arch is not Arch.AUTOENCODER:
        raise InputError("stats_swap_inference needs an autoencoder")
    names = encoder_layer_names(model)
    layer_set = sorted(set(int(i) for i in layer_set))
    for i in layer_set:
        if not 0 <= i < len(names):
            raise InputError(f"encoder layer index {i} out of range [0, {len(names)})")
    a64 = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64)
    b64 = np.asarray(b.data if isinstance(b, Tensor) else b, dtype=np.float64)
    if a64.ndim == 3:
        a64, b64 = a64[None], b64[None]
    m64 = model.clone()
    for t in m64.params.values():
        t.data = t.data.astype(np.float64)
    with no_grad():
        taps_b: dict = {}
        forward(m64, b64, Mode.EVAL, taps=taps_b)
        swapped: dict = {}

        def make_hook(idx, name):
            def hook(x):
                out = adain(x, taps_b[name], eps)
                swapped[idx] = out
                return out
            return hook

        hooks = {names[i]: make_hook(i, names[i]) for i in layer_set}
        recon = forward(m64, a64, Mode.EVAL, hooks=hooks)
        report = []
        for i in layer_set:
            so = channel_stats(swapped[i], 0.0)
            sb = channel_stats(taps_b[names[i]], 0.0)
            report.append(SwapReport(
                i,
                float(np.abs(so.mu.data - sb.mu.data).max()),
                float(np.abs(so.sigma.data - sb.sigma.data).max()),
            ))
    return recon.data, report
