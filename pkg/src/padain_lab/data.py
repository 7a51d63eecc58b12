"""CIFAR-10 binary I/O, a confounded synthetic dataset, and train-time augmentation."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, DatasetMissingError, IngestionError


@dataclass
class Dataset:
    images: np.ndarray  # (N, 3, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    num_classes: int
    split: str = "train"
    mean: Optional[np.ndarray] = None  # per-channel, from the train split
    std: Optional[np.ndarray] = None

    def __len__(self):
        return int(self.labels.shape[0])

    def normalize(self, batch: np.ndarray) -> np.ndarray:
        if self.mean is None:
            return batch
        return ((batch - self.mean.reshape(1, -1, 1, 1)) / self.std.reshape(1, -1, 1, 1)).astype(np.float32)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        idx = np.flatnonzero(idx) if idx.dtype == bool else idx.astype(np.intp)
        return Dataset(self.images[idx], self.labels[idx], self.num_classes, self.split, self.mean, self.std)


def channel_constants(images: np.ndarray):
    mean = images.mean(axis=(0, 2, 3), dtype=np.float64).astype(np.float32)
    std = images.std(axis=(0, 2, 3), dtype=np.float64).astype(np.float32)
    return mean, np.maximum(std, np.float32(1e-6))


def attach_constants(train: Dataset, test: Dataset):
    train.mean, train.std = channel_constants(train.images)
    test.mean, test.std = train.mean, train.std
    return train, test


# CIFAR binary layout: 1 label byte then 3 row-major planes of H*W bytes.

def record_size(image_size: int = 32) -> int:
    return 1 + 3 * image_size * image_size


def read_cifar_file(path, image_size: int = 32):
    path = Path(path)
    rec = record_size(image_size)
    if not path.exists():
        raise DatasetMissingError(f"{path}: file not found (expected a multiple of {rec} bytes)")
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % rec:
        raise IngestionError(f"{path}: {raw.size} bytes is not a positive multiple of the {rec}-byte record size")
    raw = raw.reshape(-1, rec)
    labels = raw[:, 0].astype(np.int64)
    images = raw[:, 1:].reshape(-1, 3, image_size, image_size).astype(np.float32) / np.float32(255)
    return images, labels


def encode_cifar(images: np.ndarray, labels: np.ndarray) -> bytes:
    n, c, h, w = images.shape
    if c != 3 or h != w:
        raise IngestionError(f"CIFAR layout needs (N, 3, S, S) images, got {images.shape}")
    px = np.clip(np.rint(images * 255), 0, 255).astype(np.uint8).reshape(n, -1)
    out = np.concatenate([np.asarray(labels, dtype=np.uint8).reshape(n, 1), px], axis=1)
    return out.tobytes()


def write_cifar_file(path, images: np.ndarray, labels: np.ndarray):
    Path(path).write_bytes(encode_cifar(images, labels))


def _cifar_root(d: Path) -> Path:
    for cand in (d, d / "cifar-10-batches-bin"):
        if (cand / "test_batch.bin").exists():
            return cand
    return d


def load_cifar10(directory, train_files=None):
    d = _cifar_root(Path(directory))
    if not d.is_dir():
        raise DatasetMissingError(f"{d}: CIFAR-10 directory not found")
    train_files = train_files or [f"data_batch_{i}.bin" for i in range(1, 6)]
    parts = [read_cifar_file(d / f) for f in train_files]
    train = Dataset(np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]), 10, "train")
    ti, tl = read_cifar_file(d / "test_batch.bin")
    return attach_constants(train, Dataset(ti, tl, 10, "test"))


@dataclass
class SynthConfig:
    num_classes: int = 4
    samples_per_class: int = 1000
    test_samples_per_class: int = 200
    image_size: int = 32
    shape_cue_strength: float = 0.15
    train_confound_correlation: float = 0.95
    test_confound_correlation: float = 0.05
    tint_strength: float = 0.18
    noise_std: float = 0.08
    seed: int = 0

    def __post_init__(self):
        for key in ("train_confound_correlation", "test_confound_correlation"):
            v = getattr(self, key)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"synth.{key}", f"must lie in [0, 1], got {v}")
        if self.image_size < 16:
            raise ConfigError("synth.image_size", f"must be >= 16, got {self.image_size}")
        if not 2 <= self.num_classes <= len(GLYPHS):
            raise ConfigError("synth.num_classes", f"must lie in [2, {len(GLYPHS)}]")


def _glyph(kind: str, s: int) -> np.ndarray:
    yy, xx = np.mgrid[0:s, 0:s]
    c = (s - 1) / 2
    t = max(1, s // 6)
    if kind == "hbars":
        return ((yy // t) % 3 == 0).astype(np.float32)
    if kind == "vbars":
        return ((xx // t) % 3 == 0).astype(np.float32)
    if kind == "cross":
        return ((np.abs(yy - c) < t) | (np.abs(xx - c) < t)).astype(np.float32)
    if kind == "ring":
        r = np.hypot(yy - c, xx - c)
        return ((r > c - t - 0.5) & (r < c + 0.5)).astype(np.float32)
    if kind == "checker":
        return (((yy // 2) + (xx // 2)) % 2).astype(np.float32)
    if kind == "diag":
        return (((yy + xx) // t) % 3 == 0).astype(np.float32)
    if kind == "square":
        edge = (yy < t) | (xx < t) | (yy >= s - t) | (xx >= s - t)
        return edge.astype(np.float32)
    if kind == "dots":
        return (((yy % 4) < 2) & ((xx % 4) < 2) & ((yy // 4 + xx // 4) % 2 == 0)).astype(np.float32)
    raise ValueError(kind)


GLYPHS = ("hbars", "cross", "ring", "checker", "vbars", "diag", "square", "dots")


def confound_palette(num_classes: int, strength: float):
    """Per-class (RGB tint offset, brightness offset)."""
    hues = 2 * np.pi * np.arange(num_classes) / num_classes
    basis = np.stack([np.cos(hues), np.cos(hues - 2 * np.pi / 3), np.cos(hues + 2 * np.pi / 3)], axis=1)
    bright = np.linspace(-0.5, 0.5, num_classes) * strength
    return (strength * basis).astype(np.float32), bright.astype(np.float32)


def _make_split(cfg: SynthConfig, per_class: int, corr: float, rng: np.random.Generator, split: str) -> Dataset:
    k, s = cfg.num_classes, cfg.image_size
    n = k * per_class
    labels = np.repeat(np.arange(k), per_class)
    tint, bright = confound_palette(k, cfg.tint_strength)
    images = np.empty((n, 3, s, s), dtype=np.float32)
    for i in range(n):
        y = labels[i]
        img = np.full((s, s), rng.uniform(0.35, 0.5), dtype=np.float32)
        for _ in range(rng.integers(1, 3)):
            g = int(rng.integers(s // 3, s // 2 + 1))
            oy, ox = rng.integers(0, s - g + 1, size=2)
            img[oy:oy + g, ox:ox + g] += cfg.shape_cue_strength * _glyph(GLYPHS[y], g)
        rgb = np.repeat(img[None], 3, axis=0)
        # the confound agrees with the label w.p. corr, else comes from a uniformly chosen other class
        src = y if rng.random() < corr else (y + rng.integers(1, k)) % k
        offset = tint[src] + bright[src] + rng.normal(0, 0.02, size=3).astype(np.float32)
        rgb += offset.reshape(3, 1, 1)
        rgb += rng.normal(0, cfg.noise_std, size=rgb.shape).astype(np.float32)
        images[i] = np.clip(rgb, 0, 1)
    order = rng.permutation(n)
    return Dataset(images[order], labels[order].astype(np.int64), k, split)


def generate_synthetic(cfg: SynthConfig):
    """Local glyph decides the class; a global tint/brightness agrees with it at a set rate."""
    rng = np.random.default_rng(cfg.seed)
    train = _make_split(cfg, cfg.samples_per_class, cfg.train_confound_correlation, rng, "train")
    test = _make_split(cfg, cfg.test_samples_per_class, cfg.test_confound_correlation, rng, "test")
    return attach_constants(train, test)


def export_synthetic(directory, cfg: SynthConfig, train: Dataset, test: Dataset):
    """CIFAR-layout train.bin/test.bin plus a key-value sidecar."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_cifar_file(d / "train.bin", train.images, train.labels)
    write_cifar_file(d / "test.bin", test.images, test.labels)
    lines = [f"synth.{k} = {v}" for k, v in asdict(cfg).items()]
    (d / "meta.txt").write_text("\n".join(lines) + "\n")
    return d


def load_exported(directory):
    d = Path(directory)
    meta = {}
    for line in (d / "meta.txt").read_text().splitlines():
        if "=" in line:
            k, v = (p.strip() for p in line.split("=", 1))
            meta[k] = v
    size = int(meta["synth.image_size"])
    k = int(meta["synth.num_classes"])
    tr = Dataset(*read_cifar_file(d / "train.bin", size), k, "train")
    te = Dataset(*read_cifar_file(d / "test.bin", size), k, "test")
    return attach_constants(tr, te)


@dataclass
class AugmentParams:
    shift_y: np.ndarray  # crop offset relative to the centered crop, in [-pad, pad]
    shift_x: np.ndarray
    angle_deg: np.ndarray
    flip: np.ndarray


def draw_augment(n: int, rng: np.random.Generator, pad: int = 4, max_angle: float = 15.0,
                 flip: bool = True) -> AugmentParams:
    sy = rng.integers(-pad, pad + 1, size=n)
    sx = rng.integers(-pad, pad + 1, size=n)
    ang = rng.uniform(-max_angle, max_angle, size=n)
    fl = rng.random(n) < 0.5 if flip else np.zeros(n, dtype=bool)
    return AugmentParams(sy, sx, ang, fl)


def apply_augment(batch: np.ndarray, params: AugmentParams, pad: int = 4) -> np.ndarray:
    """Reflect-pad, shifted crop, rotation about the center (bilinear), optional h-flip."""
    n, c, h, w = batch.shape
    if h != w:
        raise ValueError(f"augment expects square images, got {h}x{w}")
    padded = np.pad(batch, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="reflect")
    hp, wp = padded.shape[2:]
    ctr = (h - 1) / 2
    ii, jj = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    jj = np.where(params.flip[:, None, None], (w - 1) - jj, jj)
    th = np.deg2rad(params.angle_deg)[:, None, None]
    cos, sin = np.cos(th), np.sin(th)
    di, dj = ii - ctr, jj - ctr
    src_i = cos * di - sin * dj + ctr + pad + params.shift_y[:, None, None]
    src_j = sin * di + cos * dj + ctr + pad + params.shift_x[:, None, None]
    src_i = np.clip(src_i, 0, hp - 1)
    src_j = np.clip(src_j, 0, wp - 1)
    i0 = np.minimum(np.floor(src_i).astype(np.intp), hp - 2)
    j0 = np.minimum(np.floor(src_j).astype(np.intp), wp - 2)
    fi = (src_i - i0)[:, None]
    fj = (src_j - j0)[:, None]
    nn = np.arange(n)[:, None, None]

    def at(a, b):
        return padded[nn, :, a, b].transpose(0, 3, 1, 2)

    out = ((1 - fi) * ((1 - fj) * at(i0, j0) + fj * at(i0, j0 + 1))
           + fi * ((1 - fj) * at(i0 + 1, j0) + fj * at(i0 + 1, j0 + 1)))
    return np.clip(out, 0, 1).astype(batch.dtype)


def augment(batch: np.ndarray, rng: np.random.Generator, pad: int = 4, max_angle: float = 15.0,
            flip: bool = True) -> np.ndarray:
    return apply_augment(batch, draw_augment(batch.shape[0], rng, pad, max_angle, flip), pad)
