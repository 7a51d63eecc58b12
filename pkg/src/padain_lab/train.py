"""SGD training with a step LR schedule, evaluation, metrics and checkpoints."""
from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import ops
from .checkpoint import save_model
from .data import Dataset, augment
from .errors import ConfigError, InputError, NonFiniteError
from .models import Model, forward
from .norm import Mode, PAdaINConfig
from .rng import StepStreams, Transcript, main_stream
from .tensor import backward, no_grad


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 128
    lr0: float = 0.1
    lr_divisor: float = 5.0
    lr_milestones: list = field(default_factory=lambda: [20, 30])
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    padain: PAdaINConfig = field(default_factory=PAdaINConfig)
    eval_every: int = 1
    augment: bool = True
    flip: bool = True

    def __post_init__(self):
        ms = list(self.lr_milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ConfigError("train.lr_milestones", f"must be strictly increasing, got {ms}")
        if ms and ms[-1] >= self.epochs:
            raise ConfigError("train.lr_milestones", f"must all be < epochs ({self.epochs}), got {ms}")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size", f"must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError("train.epochs", f"must be >= 1, got {self.epochs}")
        if self.eval_every < 1:
            raise ConfigError("train.eval_every", f"must be >= 1, got {self.eval_every}")


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    passed = sum(1 for m in cfg.lr_milestones if m <= epoch)
    return cfg.lr0 / cfg.lr_divisor ** passed


class SGD:
    """v <- m v + (g + wd p);  p <- p - lr v  (no dampening, no Nesterov)."""

    def __init__(self, params, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = list(params)  # (name, Tensor)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(t.data) for name, t in self.params}
        self.steps = 0

    def step(self, lr: float):
        self.steps += 1
        for name, t in self.params:
            if t.grad is not None and not np.all(np.isfinite(t.grad)):
                raise NonFiniteError(f"non-finite gradient in {name} at step {self.steps}")
        for name, t in self.params:
            if t.grad is None:
                continue
            sgd_step(t.data, t.grad, self.velocity[name], lr, self.momentum, self.weight_decay)


def sgd_step(param: np.ndarray, grad: np.ndarray, velocity: np.ndarray, lr: float, momentum: float,
             weight_decay: float):
    """In-place update of ``param`` and ``velocity``."""
    g = grad + weight_decay * param if weight_decay else grad
    velocity *= momentum
    velocity += g
    param -= lr * velocity


@dataclass
class MetricsRow:
    epoch: int
    split: str
    loss: float
    accuracy: float
    lr: float
    wall_time_s: float
    rng_hash: str


CSV_HEADER = ["epoch", "split", "loss", "accuracy", "lr", "wall_time_s", "rng_hash"]


@dataclass
class MetricsLog:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, row: MetricsRow):
        self.rows.append(row)

    def column(self, name, split="train"):
        return [getattr(r, name) for r in self.rows if r.split == split]

    def best_accuracy(self, split="test") -> float:
        accs = self.column("accuracy", split)
        return max(accs) if accs else float("nan")

    def final_accuracy(self, split="test") -> float:
        accs = self.column("accuracy", split)
        return accs[-1] if accs else float("nan")

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(CSV_HEADER)
            for r in self.rows:
                w.writerow([r.epoch, r.split, repr(r.loss), repr(r.accuracy), repr(r.lr),
                            f"{r.wall_time_s:.4f}", r.rng_hash])

    @staticmethod
    def read_csv(path) -> "MetricsLog":
        log = MetricsLog()
        with open(path, newline="") as f:
            for rec in csv.DictReader(f):
                log.add(MetricsRow(int(rec["epoch"]), rec["split"], float(rec["loss"]), float(rec["accuracy"]),
                                   float(rec["lr"]), float(rec["wall_time_s"]), rec["rng_hash"]))
        return log


def iterate_batches(n: int, batch_size: int, order: Optional[np.ndarray] = None):
    idx = np.arange(n) if order is None else order
    for s in range(0, n, batch_size):
        yield idx[s:s + batch_size]


def evaluate(model: Model, ds: Dataset, batch_size: int = 256, return_predictions: bool = False):
    """Eval-mode pass over the whole dataset: (mean loss, top-1 accuracy)."""
    if len(ds) == 0:
        raise InputError("cannot evaluate on an empty dataset")
    total, correct = 0.0, 0
    preds = np.empty(len(ds), dtype=np.int64)
    with no_grad():
        for idx in iterate_batches(len(ds), batch_size):
            logits = forward(model, ds.normalize(ds.images[idx]), Mode.EVAL)
            loss = ops.softmax_cross_entropy(logits, ds.labels[idx])
            total += float(loss.data) * len(idx)
            p = logits.data.argmax(axis=1)
            preds[idx] = p
            correct += int((p == ds.labels[idx]).sum())
    out = (total / len(ds), correct / len(ds))
    return out + (preds,) if return_predictions else out


def train_step(model: Model, opt: SGD, x: np.ndarray, y: np.ndarray, lr: float, streams: StepStreams,
               transcript: Optional[Transcript] = None):
    model.zero_grad()
    logits = forward(model, x, Mode.TRAIN, streams, transcript)
    loss = ops.softmax_cross_entropy(logits, y)
    lv = float(loss.data)
    if not math.isfinite(lv):
        raise NonFiniteError(f"non-finite loss {lv} at step {streams.step}")
    backward(loss)
    opt.step(lr)
    return lv, int((logits.data.argmax(axis=1) == y).sum())


def train(model: Model, train_ds: Dataset, test_ds: Optional[Dataset], cfg: TrainConfig,
          out_dir=None, log=print):
    """Train in place; returns (model, MetricsLog).

    Writes ``final.ckpt`` after every epoch and ``best.ckpt`` on test-accuracy
    improvement when ``out_dir`` is given, so an abort keeps the last good state.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    rng = main_stream(cfg.seed)
    transcript = Transcript()
    opt = SGD(model.parameters(), cfg.momentum, cfg.weight_decay)
    metrics = MetricsLog(metadata={"seed": cfg.seed, "arch": model.arch.value})
    best = -1.0
    step = 0
    n = len(train_ds)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = lr_at_epoch(cfg, epoch)
        order = rng.permutation(n)
        transcript.record("epoch", epoch, order)
        tot_loss, tot_correct = 0.0, 0
        for idx in iterate_batches(n, cfg.batch_size, order):
            x = train_ds.images[idx]
            if cfg.augment:
                x = augment(x, rng, flip=cfg.flip)
            x = train_ds.normalize(x)
            lv, corr = train_step(model, opt, x, train_ds.labels[idx], lr,
                                  StepStreams(cfg.seed, step, transcript), transcript)
            tot_loss += lv * len(idx)
            tot_correct += corr
            step += 1
        wall = time.perf_counter() - t0
        h = transcript.hexdigest()
        metrics.add(MetricsRow(epoch, "train", tot_loss / n, tot_correct / n, lr, wall, h))
        if test_ds is not None and ((epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1):
            tl, ta = evaluate(model, test_ds)
            metrics.add(MetricsRow(epoch, "test", tl, ta, lr, 0.0, h))
            if out is not None and ta > best:
                save_model(model, out / "best.ckpt")
            best = max(best, ta)
            if log:
                log(f"epoch {epoch} lr {lr:.4g} train_loss {tot_loss / n:.4f} train_acc {tot_correct / n:.3f} "
                    f"test_acc {ta:.3f} ({wall:.1f}s)")
        if out is not None:
            save_model(model, out / "final.ckpt")
    metrics.metadata["rng_hash"] = transcript.hexdigest()
    return model, metrics


@dataclass
class AETrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1.0
    momentum: float = 0.9
    seed: int = 0


def train_autoencoder(model: Model, ds: Dataset, cfg: AETrainConfig, log=None):
    """Plain MSE reconstruction training; returns per-epoch mean loss."""
    rng = main_stream(cfg.seed)
    opt = SGD(model.parameters(), cfg.momentum, 0.0)
    losses = []
    for epoch in range(cfg.epochs):
        tot = 0.0
        for idx in iterate_batches(len(ds), cfg.batch_size, rng.permutation(len(ds))):
            x = ds.images[idx]
            model.zero_grad()
            loss = ops.mse_loss(forward(model, x, Mode.TRAIN), x)
            backward(loss)
            opt.step(cfg.lr)
            tot += float(loss.data) * len(idx)
        losses.append(tot / len(ds))
        if log:
            log(f"ae epoch {epoch} mse {losses[-1]:.5f}")
    return losses
