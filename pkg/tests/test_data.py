import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from padain_lab.data import (
    AugmentParams, SynthConfig, apply_augment, augment, encode_cifar, export_synthetic, generate_synthetic,
    load_cifar10, load_exported, read_cifar_file, record_size, write_cifar_file,
)
from padain_lab.errors import ConfigError, DatasetMissingError, IngestionError

SMALL = dict(samples_per_class=30, test_samples_per_class=10)


def test_cifar_byte_mapping(tmp_path):
    rec = np.zeros(record_size(), dtype=np.uint8)
    rec[0] = 3
    full = np.full(record_size(), 255, dtype=np.uint8)
    full[0] = 9
    (tmp_path / "f.bin").write_bytes(rec.tobytes() + full.tobytes())
    images, labels = read_cifar_file(tmp_path / "f.bin")
    assert images.shape == (2, 3, 32, 32) and labels.tolist() == [3, 9]
    assert np.all(images[0] == 0) and np.all(images[1] == 1.0)


def test_cifar_round_trip_is_lossless(tmp_path, rng):
    u8 = rng.integers(0, 256, (5, 3, 32, 32), dtype=np.uint8)
    labels = rng.integers(0, 10, 5)
    write_cifar_file(tmp_path / "r.bin", u8.astype(np.float32) / 255, labels)
    images, back = read_cifar_file(tmp_path / "r.bin")
    assert np.array_equal(np.rint(images * 255).astype(np.uint8), u8) and np.array_equal(back, labels)


def test_cifar_errors(tmp_path):
    (tmp_path / "bad.bin").write_bytes(b"\x00" * (record_size() + 3))
    with pytest.raises(IngestionError):
        read_cifar_file(tmp_path / "bad.bin")
    with pytest.raises(DatasetMissingError):
        load_cifar10(tmp_path / "nope")


def test_cifar_directory_loader(tmp_path, rng):
    imgs = rng.integers(0, 256, (4, 3, 32, 32)).astype(np.float32) / 255
    for i in range(1, 6):
        write_cifar_file(tmp_path / f"data_batch_{i}.bin", imgs, [0, 1, 2, 3])
    write_cifar_file(tmp_path / "test_batch.bin", imgs[:2], [5, 6])
    train, test = load_cifar10(tmp_path)
    assert len(train) == 20 and len(test) == 2 and train.num_classes == 10
    np.testing.assert_array_equal(test.mean, train.mean)


def test_synthetic_determinism_and_balance():
    a_tr, a_te = generate_synthetic(SynthConfig(**SMALL))
    b_tr, _ = generate_synthetic(SynthConfig(**SMALL))
    assert np.array_equal(a_tr.images, b_tr.images) and np.array_equal(a_tr.labels, b_tr.labels)
    assert np.bincount(a_tr.labels).tolist() == [30] * 4 and np.bincount(a_te.labels).tolist() == [10] * 4
    assert a_tr.images.min() >= 0 and a_tr.images.max() <= 1 and np.isfinite(a_tr.images).all()
    other, _ = generate_synthetic(SynthConfig(seed=1, **SMALL))
    assert not np.array_equal(other.images, a_tr.images)


def test_synthetic_validation():
    with pytest.raises(ConfigError):
        SynthConfig(train_confound_correlation=1.2)
    with pytest.raises(ConfigError):
        SynthConfig(image_size=8)


def _probe_accuracy(ds, steps=800, lr=0.5):
    """Multinomial logistic regression on per-channel image means."""
    f = ds.images.mean(axis=(2, 3)).astype(np.float64)
    f = (f - f.mean(0)) / f.std(0)
    f = np.concatenate([f, np.ones((len(f), 1))], axis=1)
    w = np.zeros((f.shape[1], ds.num_classes))
    onehot = np.eye(ds.num_classes)[ds.labels]
    for _ in range(steps):
        z = f @ w
        p = np.exp(z - z.max(1, keepdims=True))
        p /= p.sum(1, keepdims=True)
        w -= lr * f.T @ (p - onehot) / len(f)
    return float(((f @ w).argmax(1) == ds.labels).mean())


def test_confound_probe():
    tr, _ = generate_synthetic(SynthConfig(train_confound_correlation=1.0, samples_per_class=100,
                                           test_samples_per_class=10))
    assert _probe_accuracy(tr) > 0.9
    flat, _ = generate_synthetic(SynthConfig(train_confound_correlation=0.25, samples_per_class=100,
                                             test_samples_per_class=10))
    assert _probe_accuracy(flat) < 0.5


def test_export_round_trip(tmp_path):
    cfg = SynthConfig(**SMALL)
    tr, te = generate_synthetic(cfg)
    export_synthetic(tmp_path, cfg, tr, te)
    tr2, te2 = load_exported(tmp_path)
    assert np.abs(tr2.images - tr.images).max() <= 0.5 / 255 + 1e-7
    assert np.array_equal(te2.labels, te.labels) and tr2.num_classes == 4


def test_augment_identity(rng):
    x = rng.uniform(0, 1, (3, 3, 32, 32)).astype(np.float32)
    z = np.zeros(3)
    out = apply_augment(x, AugmentParams(z.astype(int), z.astype(int), z, np.zeros(3, dtype=bool)))
    assert np.array_equal(out, x)


def test_augment_flip_only(rng):
    x = rng.uniform(0, 1, (2, 3, 32, 32)).astype(np.float32)
    z = np.zeros(2)
    out = apply_augment(x, AugmentParams(z.astype(int), z.astype(int), z, np.ones(2, dtype=bool)))
    np.testing.assert_allclose(out, x[..., ::-1], atol=1e-6)


@given(st.integers(0, 2**32 - 1))
def test_augment_shape_and_range(seed):
    r = np.random.default_rng(seed)
    x = r.uniform(0, 1, (4, 3, 32, 32)).astype(np.float32)
    out = augment(x, r)
    assert out.shape == x.shape and out.dtype == x.dtype and out.min() >= 0 and out.max() <= 1


def test_augment_constant_image_invariant(rng):
    x = np.full((8, 3, 32, 32), 0.37, dtype=np.float32)
    assert np.abs(augment(x, rng) - x).max() < 1e-3


def test_encode_rejects_bad_layout():
    with pytest.raises(IngestionError):
        encode_cifar(np.zeros((1, 1, 32, 32)), [0])
