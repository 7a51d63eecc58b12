"""Feature-statistics normalization: instance norm, AdaIN, batch norm and pAdaIN."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ops
from .errors import ConfigError, DimensionError, InputError
from .rng import Transcript
from .tensor import Tensor, detach, make_result, no_grad, parameter

DEFAULT_EPS = 1e-5


class Mode(str, enum.Enum):
    TRAIN = "train"
    EVAL = "eval"


class BackpropScheme(str, enum.Enum):
    """Which statistics are treated as constants in the backward pass."""

    DETACH_PERMUTED = "detach-permuted"  # default: own stats live, donor stats constant
    DETACH_OWN = "detach-own"
    DETACH_NONE = "detach-none"
    DETACH_BOTH = "detach-both"


class StatsSource(str, enum.Enum):
    BATCH = "batch"
    RANDOM_NORMAL = "random-normal"


class PermutationPolicy(str, enum.Enum):
    PER_LAYER = "per-layer"
    FIXED_ACROSS_LAYERS = "fixed-across-layers"


@dataclass
class ChannelStats:
    """Per-(sample, channel) mean and std, each shaped (N, C, 1, 1)."""

    mu: Tensor
    sigma: Tensor

    def arrays(self):
        n, c = self.mu.shape[:2]
        return self.mu.data.reshape(n, c), self.sigma.data.reshape(n, c)


def channel_stats(x: Tensor, eps: float = DEFAULT_EPS) -> ChannelStats:
    """Spatial mean and sqrt(population variance + eps) for each (n, c) plane."""
    if x.ndim != 4:
        raise DimensionError(f"channel_stats expects NCHW, got {x.shape}")
    mu = ops.spatial_mean(x)
    var = ops.spatial_mean(ops.square(ops.sub(x, mu)))
    return ChannelStats(mu, ops.sqrt(ops.add(var, float(eps))))


def _as_affine(v, n, c, dtype):
    if isinstance(v, Tensor):
        t = v
    else:
        t = Tensor(np.asarray(v, dtype=dtype))
    if t.shape == (c,):
        return ops.reshape(t, (1, c, 1, 1))
    if t.shape == (n, c):
        return ops.reshape(t, (n, c, 1, 1))
    if t.size == 1:
        return ops.reshape(t, (1, 1, 1, 1)) if t.ndim else t
    raise DimensionError(f"affine parameter shape {t.shape} must be (C,)=({c},) or (N, C)=({n}, {c})")


def instance_norm(x: Tensor, gamma=1.0, beta=0.0, eps: float = DEFAULT_EPS) -> Tensor:
    n, c = x.shape[:2]
    st = channel_stats(x, eps)
    xhat = ops.div(ops.sub(x, st.mu), st.sigma)
    g = _as_affine(gamma, n, c, x.dtype)
    b = _as_affine(beta, n, c, x.dtype)
    return ops.add(ops.mul(xhat, g), b)


def renormalize(x: Tensor, own: ChannelStats, mu_to: Tensor, sigma_to: Tensor) -> Tensor:
    """Give each (n, c) plane of x the target mean/std.

    Written as x * s + t with s = sigma_to / sigma_own and
    t = mu_to - mu_own * s, so identical stats give back x bit-for-bit.
    """
    scale = ops.div(sigma_to, own.sigma)
    shift = ops.sub(mu_to, ops.mul(own.mu, scale))
    return ops.add(ops.mul(x, scale), shift)


def adain(a: Tensor, b: Tensor, eps: float = DEFAULT_EPS) -> Tensor:
    """AdaIN(a, b): a's content with b's per-channel mean and std.

    Accepts single samples (C, H, W) or batches (N, C, H, W); b's spatial
    size may differ from a's.
    """
    single = a.ndim == 3
    if single:
        a = ops.reshape(a, (1,) + a.shape)
        b = ops.reshape(b, (1,) + b.shape)
    if a.ndim != 4 or b.ndim != 4:
        raise DimensionError(f"adain expects (C, H, W) or (N, C, H, W), got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"adain: channel axis mismatch, a has {a.shape[1]} and b has {b.shape[1]}")
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"adain: batch axis mismatch, {a.shape[0]} vs {b.shape[0]}")
    sb = channel_stats(b, eps)
    out = renormalize(a, channel_stats(a, eps), sb.mu, sb.sigma)
    return ops.reshape(out, out.shape[1:]) if single else out


@dataclass(frozen=True)
class Permutation:
    map: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.map, dtype=np.intp)
        if m.ndim != 1 or not np.array_equal(np.sort(m), np.arange(m.size)):
            raise InputError(f"not a permutation of range({m.size}): {m.tolist()}")
        object.__setattr__(self, "map", m)

    def __len__(self):
        return self.map.size

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.map, np.arange(self.map.size)))

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(np.arange(n))


def sample_permutation(n: int, rng: np.random.Generator) -> Permutation:
    """Uniform draw over all n! permutations (Fisher-Yates); identity allowed."""
    if n < 1:
        raise InputError(f"cannot permute a batch of size {n}")
    perm = np.arange(n)
    if n > 1:
        js = rng.integers(0, np.arange(n, 1, -1))  # j_i uniform in [0, i] for i = n-1 .. 1
        for i, j in zip(range(n - 1, 0, -1), js):
            perm[i], perm[j] = perm[j], perm[i]
    return Permutation(perm)


@dataclass
class PAdaINConfig:
    p: float = 0.01
    eps: float = DEFAULT_EPS
    backprop_scheme: BackpropScheme = BackpropScheme.DETACH_PERMUTED
    stats_source: StatsSource = StatsSource.BATCH
    permutation_policy: PermutationPolicy = PermutationPolicy.PER_LAYER
    block_mask: Optional[frozenset] = None  # None means every block
    random_std_floor: Optional[float] = None  # defaults to sqrt(eps)
    on_shortcut: bool = True

    def __post_init__(self):
        self.backprop_scheme = BackpropScheme(self.backprop_scheme)
        self.stats_source = StatsSource(self.stats_source)
        self.permutation_policy = PermutationPolicy(self.permutation_policy)
        if self.block_mask is not None:
            self.block_mask = frozenset(int(b) for b in self.block_mask)
        if not (0.0 <= self.p <= 1.0) or math.isnan(self.p):
            raise ConfigError("padain.p", f"must lie in [0, 1], got {self.p}")
        if not self.eps > 0:
            raise ConfigError("padain.eps", f"must be > 0, got {self.eps}")

    def active_in(self, block: int) -> bool:
        return self.block_mask is None or block in self.block_mask


def padain_swap(x: Tensor, perm: Permutation, eps: float = DEFAULT_EPS,
                scheme: BackpropScheme = BackpropScheme.DETACH_PERMUTED) -> Tensor:
    """out_i = AdaIN(x_i, x_perm[i]) with the stop-gradient rule of ``scheme``."""
    if len(perm) != x.shape[0]:
        raise DimensionError(f"permutation of size {len(perm)} for batch axis of size {x.shape[0]}")
    scheme = BackpropScheme(scheme)
    live = channel_stats(x, eps)
    const = ChannelStats(detach(live.mu), detach(live.sigma))
    own = const if scheme in (BackpropScheme.DETACH_OWN, BackpropScheme.DETACH_BOTH) else live
    src = const if scheme in (BackpropScheme.DETACH_PERMUTED, BackpropScheme.DETACH_BOTH) else live
    return renormalize(x, own, ops.take(src.mu, perm.map), ops.take(src.sigma, perm.map))


def padain_random(x: Tensor, rng: np.random.Generator, eps: float = DEFAULT_EPS,
                  std_floor: Optional[float] = None,
                  scheme: BackpropScheme = BackpropScheme.DETACH_PERMUTED) -> Tensor:
    """Swap each plane's stats for N(0, 1) draws; std is |draw| clamped below."""
    n, c = x.shape[:2]
    floor = math.sqrt(eps) if std_floor is None else std_floor
    mu = rng.standard_normal((n, c, 1, 1)).astype(x.dtype)
    sigma = np.maximum(np.abs(rng.standard_normal((n, c, 1, 1))), floor).astype(x.dtype)
    live = channel_stats(x, eps)
    own = ChannelStats(detach(live.mu), detach(live.sigma)) if scheme in (
        BackpropScheme.DETACH_OWN, BackpropScheme.DETACH_BOTH) else live
    return renormalize(x, own, Tensor(mu), Tensor(sigma))


def padain_forward(x: Tensor, cfg: PAdaINConfig, rng: Optional[np.random.Generator], mode: Mode,
                   layer_id: int = 0, perm: Optional[Permutation] = None,
                   transcript: Optional[Transcript] = None) -> Tensor:
    """Apply pAdaIN: with probability p, swap stats across a random batch permutation.

    Identity in eval mode and for single-sample batches. ``perm`` overrides
    the per-layer draw (used for the fixed-across-layers policy).
    """
    if Mode(mode) is Mode.EVAL or x.shape[0] < 2 or cfg.p == 0.0:
        if transcript is not None and Mode(mode) is Mode.TRAIN:
            transcript.record("padain", layer_id, False)
        return x
    fire = cfg.p >= 1.0 or rng.random() < cfg.p
    if not fire:
        if transcript is not None:
            transcript.record("padain", layer_id, False)
        return x
    if cfg.stats_source is StatsSource.RANDOM_NORMAL:
        if transcript is not None:
            transcript.record("padain", layer_id, True, "random")
        return padain_random(x, rng, cfg.eps, cfg.random_std_floor, cfg.backprop_scheme)
    if perm is None:
        perm = sample_permutation(x.shape[0], rng)
    if transcript is not None:
        transcript.record("padain", layer_id, True, perm.map)
    return padain_swap(x, perm, cfg.eps, cfg.backprop_scheme)


@dataclass
class BatchNormState:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = DEFAULT_EPS

    @classmethod
    def create(cls, channels: int, momentum: float = 0.1, eps: float = DEFAULT_EPS,
               name: str = "bn", dtype=np.float32) -> "BatchNormState":
        return cls(
            gamma=parameter(np.ones(channels, dtype=dtype), name=f"{name}.gamma"),
            beta=parameter(np.zeros(channels, dtype=dtype), name=f"{name}.beta"),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            momentum=momentum,
            eps=eps,
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


def batch_norm(x: Tensor, state: BatchNormState, mode: Mode) -> Tensor:
    """Normalize each channel over (N, H, W); batch stats in train, running stats in eval."""
    if x.ndim != 4 or x.shape[1] != state.channels:
        raise DimensionError(f"batch_norm: input {x.shape} does not have {state.channels} channels on axis 1")
    c = state.channels
    g = state.gamma.data.reshape(1, c, 1, 1)
    b = state.beta.data.reshape(1, c, 1, 1)
    if Mode(mode) is Mode.TRAIN:
        m = x.shape[0] * x.shape[2] * x.shape[3]
        mu = x.data.mean(axis=(0, 2, 3), keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
        inv = 1 / np.sqrt(var + state.eps)
        xhat = xc * inv
        mom = state.momentum
        unbiased = var.reshape(c) * (m / max(m - 1, 1))
        state.running_mean[...] = (1 - mom) * state.running_mean + mom * mu.reshape(c)
        state.running_var[...] = (1 - mom) * state.running_var + mom * unbiased

        def backward(grad):
            gg = grad * g
            gx = (inv / m) * (m * gg - gg.sum(axis=(0, 2, 3), keepdims=True)
                              - xhat * (gg * xhat).sum(axis=(0, 2, 3), keepdims=True))
            return gx, (grad * xhat).sum(axis=(0, 2, 3)), grad.sum(axis=(0, 2, 3))
    else:
        inv = 1 / np.sqrt(state.running_var.reshape(1, c, 1, 1) + state.eps)
        xhat = (x.data - state.running_mean.reshape(1, c, 1, 1)) * inv

        def backward(grad):
            return grad * (g * inv), (grad * xhat).sum(axis=(0, 2, 3)), grad.sum(axis=(0, 2, 3))

    out = (xhat * g + b).astype(x.dtype, copy=False)
    return make_result("batch_norm", out, (x, state.gamma, state.beta), backward)


def verify_bn_interaction(x, pi: Permutation, gamma, beta, eps: float = DEFAULT_EPS) -> dict:
    """Residuals of BN(pAdaIN(x)) per-(n, c) stats against their closed forms.

    Mean: gamma / sigma_c * (mu_{pi(n)c} - mu_c) + beta.
    Std:  |gamma| * sigma_{pi(n)c} / sigma_c.
    """
    xt = x if isinstance(x, Tensor) else Tensor(x)
    if xt.shape[0] < 2:
        raise InputError("verify_bn_interaction needs a batch of at least 2")
    c = xt.shape[1]
    gamma = np.asarray(gamma, dtype=xt.dtype).reshape(c)
    beta = np.asarray(beta, dtype=xt.dtype).reshape(c)
    with no_grad():
        swapped = padain_swap(xt, pi, eps)
        state = BatchNormState.create(c, eps=eps, dtype=xt.dtype)
        state.gamma.data[...] = gamma
        state.beta.data[...] = beta
        out = batch_norm(swapped, state, Mode.TRAIN)
        mu_out, sigma_out = channel_stats(out, eps).arrays()

    x64 = xt.data.astype(np.float64)
    mu_nc = x64.mean(axis=(2, 3))
    sigma_nc = np.sqrt(x64.var(axis=(2, 3)) + eps)
    mu_c = mu_nc.mean(axis=0)
    sigma_c = np.sqrt(((x64 - mu_c.reshape(1, c, 1, 1)) ** 2).mean(axis=(0, 2, 3)) + eps)
    g64, b64 = gamma.astype(np.float64), beta.astype(np.float64)
    mu_expected = g64 / sigma_c * (mu_nc[pi.map] - mu_c) + b64
    sigma_expected = np.abs(g64) * sigma_nc[pi.map] / sigma_c
    return {
        "mu_residual": float(np.abs(mu_out - mu_expected).max()),
        "sigma_residual": float(np.abs(sigma_out - sigma_expected).max()),
    }
