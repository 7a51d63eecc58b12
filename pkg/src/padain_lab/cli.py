"""padain-lab <train|eval|verify|sweep-p|ablate|statswap|gen-synth> [--config FILE] [--key value ...]

Exit codes: 0 ok, 1 verification failure, 2 usage/config error, 3 missing data.
"""
from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

from . import config as C
from . import experiments as X
from . import verify as V
from .checkpoint import load_model
from .data import export_synthetic, generate_synthetic
from .errors import ConfigError, DatasetMissingError, InputError, UsageError
from .models import Arch, stats_swap_inference
from .ppm import read_ppm, write_ppm
from .train import evaluate

COMMANDS = ("train", "eval", "verify", "sweep-p", "ablate", "statswap", "gen-synth")
EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3


def parse_overrides(tokens: list) -> dict:
    """``--key value`` and ``--key=value`` pairs, in order; later ones win."""
    out, i = {}, 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise UsageError(f"unexpected argument {tok!r}; overrides look like --key value")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise UsageError(f"--{key} needs a value")
            val = tokens[i + 1]
            i += 2
        out[key] = val
    return out


def cmd_train(cfg: dict) -> int:
    datasets = X.load_datasets(cfg)
    d = X.run_dir(cfg["out_dir"], cfg)
    summary = X.run_training(cfg, d, datasets)
    print(f"run directory: {d}")
    for k, v in summary.items():
        if k != "metrics":
            print(f"{k} = {v}")
    return EXIT_OK


def cmd_eval(cfg: dict) -> int:
    path = cfg["eval.checkpoint"]
    if not path:
        raise ConfigError("eval.checkpoint", "a checkpoint path is required")
    if not Path(path).is_file():
        raise DatasetMissingError(f"{path}: checkpoint not found")
    model = load_model(path)
    _, test_ds = X.load_datasets(cfg)
    loss, acc = evaluate(model, test_ds)
    print(f"test_loss = {loss!r}\ntest_accuracy = {acc!r}")
    return EXIT_OK


def cmd_verify(suite: str) -> int:
    if suite != "all" and suite not in V.SUITES:
        raise UsageError(f"unknown suite {suite!r}; expected one of all, {', '.join(V.SUITES)}")
    checks = V.run(suite)
    for c in checks:
        print(c.line())
    failed = [c for c in checks if not c.passed]
    if failed:
        print(f"{len(failed)} of {len(checks)} checks failed:")
        for c in failed:
            print(f"  {c.suite}/{c.name}")
        return EXIT_VERIFY
    print(f"all {len(checks)} checks passed")
    return EXIT_OK


def _report_table(d: Path, name: str, rows, label_field: str):
    X.write_rows(d / f"{name}.csv", rows)
    summary = X.summarize(rows)
    X.write_rows(d / f"{name}_summary.csv", summary)
    print(f"{label_field:<20} {'n':>3} {'mean':>8} {'std':>8}")
    for s in summary:
        print(f"{s['label']:<20} {s['n']:>3} {s['mean']:>8.4f} {s['std']:>8.4f}")
    print(f"tables written to {d}")


def cmd_sweep(cfg: dict) -> int:
    values = C.float_list("sweep.values", cfg["sweep.values"])
    seeds = C.int_list("sweep.seeds", cfg["sweep.seeds"])
    X.sweep_members(cfg, values, seeds, Path("."))  # validate before creating the run directory
    d = X.run_dir(cfg["out_dir"], cfg)
    (d / "config.txt").write_text(C.dump(cfg))
    members = X.sweep_members(cfg, values, seeds, d)
    rows = X.run_matrix(members, int(cfg["jobs"]))
    for r, (c, *_rest) in zip(rows, members):
        r["p"] = c["padain.p"]
    fields = ["p", "seed", "label", "test_accuracy", "best_accuracy", "final_train_loss", "median_epoch_time_s",
              "config_hash", "run_dir"]
    rows = [{k: r[k] for k in fields} for r in rows]
    _report_table(d, "sweep", rows, "p")
    return EXIT_OK


def cmd_ablate(cfg: dict, variant: str) -> int:
    seeds = C.int_list("ablate.seeds", cfg["ablate.seeds"])
    members = X.ablation_members(cfg, variant, seeds, Path("."))
    d = X.run_dir(cfg["out_dir"], cfg)
    (d / "config.txt").write_text(C.dump(cfg))
    members = [(c, d / out, label, s) for c, out, label, s in members]
    rows = X.run_matrix(members, int(cfg["jobs"]))
    _report_table(d, f"ablate_{variant}", rows, "setting")
    return EXIT_OK


def mean_color_distance(img, ref) -> float:
    """Euclidean distance between per-channel spatial means."""
    a = np.asarray(img, dtype=np.float64).reshape(3, -1).mean(axis=1)
    b = np.asarray(ref, dtype=np.float64).reshape(3, -1).mean(axis=1)
    return float(np.linalg.norm(a - b))


def cmd_statswap(cfg: dict) -> int:
    for key in ("statswap.checkpoint", "statswap.image_a", "statswap.image_b"):
        if not cfg[key]:
            raise ConfigError(key, "a path is required")
        if not Path(cfg[key]).is_file():
            raise DatasetMissingError(f"{cfg[key]}: file not found")
    model = load_model(cfg["statswap.checkpoint"])
    if model.arch is not Arch.AUTOENCODER:
        raise ConfigError("statswap.checkpoint", f"expected an Autoencoder checkpoint, got {model.arch.value}")
    a = read_ppm(cfg["statswap.image_a"])
    b = read_ppm(cfg["statswap.image_b"])
    if a.shape != b.shape:
        raise ConfigError("statswap.image_b", f"shape {b.shape} differs from image_a {a.shape}")
    layers = C.int_list("statswap.layers", cfg["statswap.layers"])
    try:
        recon, report = stats_swap_inference(model, a, b, layers, float(cfg["statswap.eps"]))
    except InputError as e:
        raise ConfigError("statswap.layers", str(e)) from None
    write_ppm(cfg["statswap.output"], recon[0])
    print("layer  mu_delta    sigma_delta")
    for r in report:
        print(f"{r.layer:>5}  {r.mu_delta:.3e}   {r.sigma_delta:.3e}")
    print(f"mean_color_distance_to_a = {mean_color_distance(recon[0], a):.6f}")
    print(f"output written to {cfg['statswap.output']}")
    return EXIT_OK


def cmd_gen_synth(cfg: dict) -> int:
    scfg = C.synth_config(cfg)
    train_ds, test_ds = generate_synthetic(scfg)
    d = export_synthetic(cfg["gen.output"], scfg, train_ds, test_ds)
    print(f"wrote {len(train_ds)} train / {len(test_ds)} test images to {d}")
    return EXIT_OK


def split_argv(argv: list):
    """-> (command, positional target or None, config path or None, overrides)."""
    if not argv or argv[0] in ("-h", "--help"):
        raise UsageError(__doc__.strip())
    command, rest = argv[0], list(argv[1:])
    if command not in COMMANDS:
        raise UsageError(f"unknown command {command!r}; expected one of {', '.join(COMMANDS)}")
    target = None
    if rest and not rest[0].startswith("--"):
        target = rest.pop(0)
    overrides = parse_overrides(rest)
    return command, target, overrides.pop("config", None), overrides


def run(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        command, target, config_path, overrides = split_argv(argv)
        if command == "verify":
            if overrides:
                raise UsageError(f"verify takes no overrides, got {sorted(overrides)}")
            return cmd_verify(target or "all")
        cfg = C.resolve(config_path, overrides)
        C.train_config(cfg)  # fail fast on bad training / pAdaIN settings
        if command == "ablate":
            if not target:
                raise UsageError(f"ablate needs a variant: {', '.join(X.VARIANTS)}")
            return cmd_ablate(cfg, target)
        if target:
            raise UsageError(f"{command} takes no positional argument, got {target!r}")
        handler = {"train": cmd_train, "eval": cmd_eval, "sweep-p": cmd_sweep, "statswap": cmd_statswap,
                   "gen-synth": cmd_gen_synth}[command]
        return handler(cfg)
    except (ConfigError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetMissingError, FileNotFoundError) as e:
        print(f"error: missing data: {e}", file=sys.stderr)
        return EXIT_DATA


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
