"""Training runs, p-sweeps and ablation matrices on top of a resolved run config."""
from __future__ import annotations

import csv
import statistics
import time
from pathlib import Path

import numpy as np

from . import config as C
from .checkpoint import save_model
from .data import generate_synthetic, load_cifar10, load_exported
from .errors import ConfigError
from .models import Arch, build_autoencoder, build_classifier
from .norm import BackpropScheme, PermutationPolicy, StatsSource
from .train import AETrainConfig, train, train_autoencoder

# Block-mask columns for the per-block ablation, left to right.
BLOCK_MASKS = [("0", "0"), ("1", "1"), ("2", "2"), ("3", "3"), ("1-3", "1,2,3"), ("4", "4"), ("3-4", "3,4"),
               ("all", "all")]

# (own stats get gradient, donor stats get gradient) for each scheme; baseline last.
BACKPROP_COLUMNS = [
    ("own=yes donor=no", BackpropScheme.DETACH_PERMUTED),
    ("own=yes donor=yes", BackpropScheme.DETACH_NONE),
    ("own=no donor=yes", BackpropScheme.DETACH_OWN),
    ("own=no donor=no", BackpropScheme.DETACH_BOTH),
]

VARIANTS = ("blocks", "backprop", "random-stats", "fixed-perm")


def load_datasets(cfg: dict):
    if cfg["dataset"] == "synth":
        train_ds, test_ds = generate_synthetic(C.synth_config(cfg))
    elif cfg["dataset"] == "cifar10":
        train_ds, test_ds = load_cifar10(cfg["data_dir"])
    elif cfg["dataset"] == "exported":
        train_ds, test_ds = load_exported(cfg["data_dir"])
    else:
        raise ConfigError("dataset", f"expected 'synth', 'exported' or 'cifar10', got {cfg['dataset']!r}")
    n = int(cfg["train.subset"])
    if n and n < len(train_ds):
        idx = np.random.default_rng(int(cfg["train.seed"])).permutation(len(train_ds))[:n]
        train_ds = train_ds.subset(np.sort(idx))
    return train_ds, test_ds


def run_dir(root, cfg: dict) -> Path:
    d = Path(root) / f"{time.strftime('%Y%m%d-%H%M%S')}-{C.config_hash(cfg)}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def run_training(cfg: dict, out_dir, datasets=None, log=print) -> dict:
    """One training run; writes config, metrics CSV, summary and checkpoints into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(C.dump(cfg))
    tcfg = C.train_config(cfg)
    C.arch(cfg)
    train_ds, test_ds = datasets or load_datasets(cfg)
    if C.arch(cfg) is Arch.AUTOENCODER:
        return _run_autoencoder(cfg, out, train_ds, log)
    model = build_classifier(cfg["model.arch"], train_ds.num_classes, tcfg.padain, init_seed=tcfg.seed,
                             width=float(cfg["model.width"]), bn_momentum=float(cfg["train.bn_momentum"]),
                             with_padain=not cfg["model.strip_padain"])
    _, metrics = train(model, train_ds, test_ds, tcfg, out_dir=out, log=log)
    metrics.write_csv(out / "metrics.csv")
    train_times = metrics.column("wall_time_s")
    summary = {
        "final_test_accuracy": metrics.final_accuracy("test"),
        "best_test_accuracy": metrics.best_accuracy("test"),
        "final_train_loss": metrics.column("loss")[-1],
        "median_epoch_time_s": statistics.median(train_times),
        "rng_hash": metrics.metadata["rng_hash"],
        "config_hash": C.config_hash(cfg),
    }
    lines = [f"{k} = {v}" for k, v in summary.items()] + [f"config.{line}" for line in C.dump(cfg).splitlines()]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    summary["metrics"] = metrics
    return summary


def _run_autoencoder(cfg: dict, out: Path, train_ds, log) -> dict:
    model = build_autoencoder(init_seed=int(cfg["train.seed"]))
    acfg = AETrainConfig(epochs=int(cfg["ae.epochs"]), batch_size=int(cfg["ae.batch_size"]), lr=float(cfg["ae.lr"]),
                         seed=int(cfg["train.seed"]))
    losses = train_autoencoder(model, train_ds, acfg, log=log)
    save_model(model, out / "final.ckpt")
    with open(out / "metrics.csv", "w") as f:
        f.write("epoch,split,mse\n" + "".join(f"{i},train,{v!r}\n" for i, v in enumerate(losses)))
    summary = {"final_train_mse": losses[-1], "config_hash": C.config_hash(cfg)}
    (out / "summary.txt").write_text("".join(f"{k} = {v}\n" for k, v in summary.items()))
    return summary


def _run_member(args):
    cfg, out, label, seed = args
    s = run_training(cfg, out, log=None)
    return {"label": label, "seed": seed, "test_accuracy": s["final_test_accuracy"],
            "best_accuracy": s["best_test_accuracy"], "final_train_loss": s["final_train_loss"],
            "median_epoch_time_s": s["median_epoch_time_s"], "config_hash": s["config_hash"], "run_dir": str(out)}


def run_matrix(members, jobs: int = 1):
    """members: list of (cfg, out_dir, label, seed). Results come back in input order."""
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as pool:
            return list(pool.map(_run_member, members))
    return [_run_member(m) for m in members]


def sweep_members(cfg: dict, values, seeds, root: Path):
    if not values:
        raise ConfigError("sweep.values", "need at least one p value")
    if not seeds:
        raise ConfigError("sweep.seeds", "need at least one seed")
    out = []
    for p in values:
        for s in seeds:
            c = dict(cfg, **{"padain.p": p, "train.seed": s})
            C.padain_config(c)
            out.append((c, root / f"p{p}_seed{s}", f"p={p}", s))
    return out


def ablation_members(cfg: dict, variant: str, seeds, root: Path):
    if variant not in VARIANTS:
        raise ConfigError("ablate.variant", f"unknown variant {variant!r}; expected one of {', '.join(VARIANTS)}")
    if not seeds:
        raise ConfigError("ablate.seeds", "need at least one seed")
    settings = []
    if variant == "blocks":
        base = dict(cfg, **{"model.arch": "SmallResNet"})
        settings = [(label, dict(base, **{"padain.blocks": mask})) for label, mask in BLOCK_MASKS]
    elif variant == "backprop":
        settings = [(label, dict(cfg, **{"padain.backprop": s.value})) for label, s in BACKPROP_COLUMNS]
        settings.append(("baseline", dict(cfg, **{"padain.p": 0.0})))
    elif variant == "random-stats":
        settings = [("baseline", dict(cfg, **{"padain.p": 0.0})),
                    ("padain", dict(cfg)),
                    ("random-stats", dict(cfg, **{"padain.stats_source": StatsSource.RANDOM_NORMAL.value}))]
    elif variant == "fixed-perm":
        settings = [("baseline", dict(cfg, **{"padain.p": 0.0})),
                    ("per-layer", dict(cfg)),
                    ("fixed-across-layers",
                     dict(cfg, **{"padain.permutation": PermutationPolicy.FIXED_ACROSS_LAYERS.value}))]
    members = []
    for label, c in settings:
        for s in seeds:
            cs = dict(c, **{"train.seed": s})
            members.append((cs, root / f"{label.replace(' ', '_').replace('=', '')}_seed{s}", label, s))
    return members


def summarize(rows, key="test_accuracy"):
    """Per-label mean/std, labels in first-seen order."""
    labels = list(dict.fromkeys(r["label"] for r in rows))
    out = []
    for lab in labels:
        vals = [r[key] for r in rows if r["label"] == lab]
        out.append({"label": lab, "n": len(vals), "mean": float(np.mean(vals)),
                    "std": float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0})
    return out


def write_rows(path, rows, fieldnames=None):
    fieldnames = fieldnames or list(rows[0].keys())
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fieldnames)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in fieldnames})
