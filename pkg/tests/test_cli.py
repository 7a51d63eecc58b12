import csv

import numpy as np
import pytest

from padain_lab import cli, ops
from padain_lab.data import SynthConfig, generate_synthetic
from padain_lab.ppm import read_ppm, write_ppm
from padain_lab.train import MetricsLog

TINY = ["--synth.samples_per_class", "12", "--synth.test_samples_per_class", "4", "--train.epochs", "2",
        "--train.lr_milestones", "1", "--train.batch_size", "16", "--model.width", "0.25"]


def run_dirs(root):
    return sorted(p for p in root.iterdir() if p.is_dir())


def test_train_artifacts(tmp_path, capsys):
    assert cli.run(["train", "--dataset", "synth", "--padain.p", "0.01", "--out_dir", str(tmp_path)] + TINY) == 0
    (d,) = run_dirs(tmp_path)
    for name in ("config.txt", "metrics.csv", "summary.txt", "best.ckpt", "final.ckpt"):
        assert (d / name).is_file(), name
    with open(d / "metrics.csv") as f:
        assert next(csv.reader(f)) == ["epoch", "split", "loss", "accuracy", "lr", "wall_time_s", "rng_hash"]
    assert "padain.p = 0.01" in (d / "config.txt").read_text()


def test_replay_from_snapshot(tmp_path):
    assert cli.run(["train", "--padain.p", "0.5", "--out_dir", str(tmp_path / "a")] + TINY) == 0
    (a,) = run_dirs(tmp_path / "a")
    assert cli.run(["train", "--config", str(a / "config.txt"), "--out_dir", str(tmp_path / "b")]) == 0
    (b,) = run_dirs(tmp_path / "b")
    la, lb = MetricsLog.read_csv(a / "metrics.csv"), MetricsLog.read_csv(b / "metrics.csv")
    assert [(r.loss, r.accuracy, r.rng_hash) for r in la.rows] == [(r.loss, r.accuracy, r.rng_hash) for r in lb.rows]
    assert (a / "final.ckpt").read_bytes() == (b / "final.ckpt").read_bytes()


def test_p0_vs_stripped_loss_columns(tmp_path):
    assert cli.run(["train", "--padain.p", "0", "--out_dir", str(tmp_path / "a")] + TINY) == 0
    assert cli.run(["train", "--padain.p", "0", "--model.strip_padain", "true", "--out_dir", str(tmp_path / "b")]
                   + TINY) == 0
    la = MetricsLog.read_csv(run_dirs(tmp_path / "a")[0] / "metrics.csv")
    lb = MetricsLog.read_csv(run_dirs(tmp_path / "b")[0] / "metrics.csv")
    assert la.column("loss") == lb.column("loss")


def test_eval_command(tmp_path, capsys):
    cli.run(["train", "--out_dir", str(tmp_path)] + TINY)
    ck = run_dirs(tmp_path)[0] / "best.ckpt"
    capsys.readouterr()
    assert cli.run(["eval", "--eval.checkpoint", str(ck)] + TINY[:4]) == 0
    assert "test_accuracy" in capsys.readouterr().out
    assert cli.run(["eval", "--eval.checkpoint", str(tmp_path / "missing.ckpt")]) == 3


@pytest.mark.parametrize("argv,key", [
    (["train", "--padain.p", "1.5"], "padain.p"),
    (["train", "--padain.bogus", "1"], "padain.bogus"),
    (["train", "--train.epochs", "x"], "train.epochs"),
    (["sweep-p", "--sweep.values", ""], "sweep.values"),
    (["ablate", "nope"], "nope"),
    (["frobnicate"], "frobnicate"),
    (["verify", "nope"], "nope"),
])
def test_usage_errors_exit_2(argv, key, capsys):
    assert cli.run(argv) == 2
    assert key in capsys.readouterr().err


def test_missing_data_exit_3(tmp_path):
    assert cli.run(["train", "--dataset", "cifar10", "--data_dir", str(tmp_path / "none")]) == 3


def test_verify_passes_and_negative_control(monkeypatch, capsys):
    assert cli.run(["verify", "bn-interaction"]) == 0
    monkeypatch.setattr(ops, "_relu_backward", lambda g, x, out: g)  # drops the x > 0 mask
    assert cli.run(["verify", "grad"]) == 1
    out = capsys.readouterr().out
    assert "[FAIL] grad/relu" in out and "checks failed" in out


def test_sweep_two_seeds(tmp_path, capsys):
    assert cli.run(["sweep-p", "--sweep.values", "0", "--sweep.seeds", "1,2", "--out_dir", str(tmp_path)] + TINY) == 0
    (d,) = run_dirs(tmp_path)
    with open(d / "sweep.csv") as f:
        rows = list(csv.DictReader(f))
    assert [r["seed"] for r in rows] == ["1", "2"] and {r["p"] for r in rows} == {"0.0"}
    # identical config apart from the seed
    snaps = [(d / f"p0.0_seed{s}" / "config.txt").read_text().replace(f"train.seed = {s}", "") for s in (1, 2)]
    assert snaps[0] == snaps[1]
    with open(d / "sweep_summary.csv") as f:
        assert len(list(csv.DictReader(f))) == 1


def test_ablate_backprop_layout(tmp_path):
    argv = ["ablate", "backprop", "--ablate.seeds", "1", "--train.epochs", "1", "--train.lr_milestones", "",
            "--out_dir", str(tmp_path)] + TINY[:4] + ["--model.width", "0.25"]
    assert cli.run(argv) == 0
    (d,) = run_dirs(tmp_path)
    with open(d / "ablate_backprop.csv") as f:
        labels = [r["label"] for r in csv.DictReader(f)]
    assert labels == ["own=yes donor=no", "own=yes donor=yes", "own=no donor=yes", "own=no donor=no", "baseline"]


def test_ablate_blocks_members():
    from padain_lab import config as C
    from padain_lab import experiments as X
    from pathlib import Path

    members = X.ablation_members(C.resolve(), "blocks", [1, 2, 3], Path("."))
    assert len(members) == 24
    assert list(dict.fromkeys(m[2] for m in members)) == ["0", "1", "2", "3", "1-3", "4", "3-4", "all"]
    assert all(m[0]["model.arch"] == "SmallResNet" for m in members)


def test_gen_synth(tmp_path):
    out = tmp_path / "synth"
    assert cli.run(["gen-synth", "--gen.output", str(out)] + TINY[:4]) == 0
    assert (out / "train.bin").is_file() and "synth.seed = 0" in (out / "meta.txt").read_text()
    assert cli.run(["eval", "--dataset", "exported", "--data_dir", str(out), "--eval.checkpoint",
                    str(tmp_path / "x.ckpt")]) == 3


def test_ppm_round_trip(tmp_path, rng):
    img = np.rint(rng.uniform(0, 1, (3, 5, 7)) * 255) / 255
    write_ppm(tmp_path / "x.ppm", img)
    np.testing.assert_allclose(read_ppm(tmp_path / "x.ppm"), img, atol=1e-7)


def test_statswap_command(tmp_path, capsys):
    cli.run(["train", "--model.arch", "Autoencoder", "--ae.epochs", "1", "--out_dir", str(tmp_path)] + TINY)
    ck = run_dirs(tmp_path)[0] / "final.ckpt"
    tr, _ = generate_synthetic(SynthConfig(samples_per_class=2, test_samples_per_class=1))
    write_ppm(tmp_path / "a.ppm", tr.images[0])
    write_ppm(tmp_path / "b.ppm", tr.images[1])
    base = ["statswap", "--statswap.checkpoint", str(ck), "--statswap.image_a", str(tmp_path / "a.ppm"),
            "--statswap.image_b", str(tmp_path / "b.ppm")]
    assert cli.run(base + ["--statswap.layers", "", "--statswap.output", str(tmp_path / "plain.ppm")]) == 0
    assert cli.run(base + ["--statswap.layers", "0,1,2,3,4", "--statswap.image_b", str(tmp_path / "a.ppm"),
                           "--statswap.output", str(tmp_path / "self.ppm")]) == 0
    plain, same = read_ppm(tmp_path / "plain.ppm"), read_ppm(tmp_path / "self.ppm")
    assert np.abs(plain - same).max() <= 1 / 255 + 1e-6  # equal up to 8-bit rounding
    capsys.readouterr()
    assert cli.run(base + ["--statswap.layers", "0,7"]) == 2
    assert "statswap.layers" in capsys.readouterr().err
