"""Flat dotted-key run configuration: ``key = value`` files plus ``--key value`` overrides."""
from __future__ import annotations

import hashlib
import os
from dataclasses import fields
from pathlib import Path

from .data import SynthConfig
from .errors import ConfigError
from .models import Arch
from .norm import PAdaINConfig
from .train import TrainConfig

DEFAULTS: dict = {
    "dataset": "synth",
    "data_dir": "",
    "out_dir": "runs",
    "jobs": 1,
    "model.arch": "SmallVGG",
    "model.width": 0.5,
    "model.strip_padain": False,
    "train.epochs": 40,
    "train.batch_size": 128,
    "train.lr0": 0.1,
    "train.lr_divisor": 5.0,
    "train.lr_milestones": "20,30",
    "train.momentum": 0.9,
    "train.weight_decay": 5e-4,
    "train.seed": 0,
    "train.eval_every": 1,
    "train.augment": True,
    "train.flip": True,
    "train.bn_momentum": 0.1,
    "train.subset": 0,
    "padain.p": 0.01,
    "padain.eps": 1e-5,
    "padain.backprop": "detach-permuted",
    "padain.stats_source": "batch",
    "padain.permutation": "per-layer",
    "padain.blocks": "all",
    "padain.random_std_floor": "",
    "padain.shortcut": True,
    "synth.num_classes": 4,
    "synth.samples_per_class": 1000,
    "synth.test_samples_per_class": 200,
    "synth.image_size": 32,
    "synth.shape_cue_strength": 0.15,
    "synth.train_confound_correlation": 0.95,
    "synth.test_confound_correlation": 0.05,
    "synth.tint_strength": 0.18,
    "synth.noise_std": 0.08,
    "synth.seed": 0,
    "sweep.values": "0,0.01,0.05,0.1",
    "sweep.seeds": "1,2,3",
    "ablate.seeds": "1,2,3",
    "ae.epochs": 30,
    "ae.lr": 1.0,
    "ae.batch_size": 16,
    "statswap.checkpoint": "",
    "statswap.image_a": "",
    "statswap.image_b": "",
    "statswap.layers": "0,1,2,3,4",
    "statswap.output": "statswap.ppm",
    "statswap.eps": 1e-12,
    "eval.checkpoint": "",
    "gen.output": "synth_data",
}


def _parse_bool(key, raw: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(key, f"expected a boolean, got {raw!r}")


def coerce(key: str, raw):
    if key not in DEFAULTS:
        raise ConfigError(key, "unknown config key")
    default = DEFAULTS[key]
    if not isinstance(raw, str):
        return raw
    try:
        if isinstance(default, bool):
            return _parse_bool(key, raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {type(default).__name__}") from None
    return raw.strip()


def parse_text(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}", f"expected 'key = value', got {line!r}")
        k, v = (p.strip() for p in line.split("=", 1))
        out[k] = coerce(k, v)
    return out


def resolve(config_path=None, overrides: dict | None = None) -> dict:
    """Defaults < config file < overrides (flags win)."""
    cfg = dict(DEFAULTS)
    cfg["data_dir"] = os.environ.get("PADAIN_DATA_DIR", "data")
    if config_path:
        if not Path(config_path).is_file():
            raise ConfigError("config", f"{config_path}: no such config file")
        cfg.update(parse_text(Path(config_path).read_text()))
    for k, v in (overrides or {}).items():
        cfg[k] = coerce(k, v)
    return cfg


def dump(cfg: dict) -> str:
    return "".join(f"{k} = {cfg[k]}\n" for k in sorted(cfg))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(dump(cfg).encode()).hexdigest()[:8]


def float_list(key, raw) -> list:
    if isinstance(raw, (list, tuple)):
        return [float(v) for v in raw]
    try:
        return [float(v) for v in str(raw).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(key, f"expected comma-separated numbers, got {raw!r}") from None


def int_list(key, raw) -> list:
    if isinstance(raw, (list, tuple)):
        return [int(v) for v in raw]
    try:
        return [int(v) for v in str(raw).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(key, f"expected comma-separated integers, got {raw!r}") from None


def padain_config(cfg: dict) -> PAdaINConfig:
    blocks = str(cfg["padain.blocks"]).strip()
    mask = None if blocks in ("all", "") else frozenset(int_list("padain.blocks", blocks))
    floor = str(cfg["padain.random_std_floor"]).strip()
    try:
        return PAdaINConfig(
            p=float(cfg["padain.p"]),
            eps=float(cfg["padain.eps"]),
            backprop_scheme=cfg["padain.backprop"],
            stats_source=cfg["padain.stats_source"],
            permutation_policy=cfg["padain.permutation"],
            block_mask=mask,
            random_std_floor=float(floor) if floor else None,
            on_shortcut=bool(cfg["padain.shortcut"]),
        )
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError("padain", str(e)) from None


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        epochs=int(cfg["train.epochs"]),
        batch_size=int(cfg["train.batch_size"]),
        lr0=float(cfg["train.lr0"]),
        lr_divisor=float(cfg["train.lr_divisor"]),
        lr_milestones=int_list("train.lr_milestones", cfg["train.lr_milestones"]),
        momentum=float(cfg["train.momentum"]),
        weight_decay=float(cfg["train.weight_decay"]),
        seed=int(cfg["train.seed"]),
        padain=padain_config(cfg),
        eval_every=int(cfg["train.eval_every"]),
        augment=bool(cfg["train.augment"]),
        flip=bool(cfg["train.flip"]),
    )


def synth_config(cfg: dict) -> SynthConfig:
    kwargs = {f.name: cfg[f"synth.{f.name}"] for f in fields(SynthConfig)}
    return SynthConfig(**kwargs)


def arch(cfg: dict) -> Arch:
    try:
        return Arch(cfg["model.arch"])
    except ValueError:
        names = ", ".join(a.value for a in Arch)
        raise ConfigError("model.arch", f"expected one of {names}, got {cfg['model.arch']!r}") from None
