import struct

import numpy as np
import pytest

from splitlab.datakit import (
    Dataset,
    concentric_shells,
    gaussian_blobs,
    linear_probe_accuracy,
    load_csv,
    load_idx,
    read_idx_images,
    sample_leak,
    save_csv,
    stratified_split,
    write_idx,
    write_sidecar,
)
from splitlab.errors import ContractError, ParseError, SchemaError
from splitlab.losses import LossConfig
from splitlab.nn import build_mlp, mlp_specs
from splitlab.protocol import TrainConfig, split_train


def test_blobs_deterministic_and_partitions():
    a, b = gaussian_blobs(3, 5, 40, seed=7), gaussian_blobs(3, 5, 40, seed=7)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.Y, b.Y)
    parts = [a.partitions[k] for k in ("train", "validation", "test")]
    assert sum(len(p) for p in parts) == len(a.Y)
    assert len(np.unique(np.concatenate(parts))) == len(a.Y)
    assert [len(p) for p in parts] == [84, 12, 24]


def test_blobs_zero_noise():
    data = gaussian_blobs(3, 4, 10, noise=0.0, seed=1)
    for c in range(3):
        rows = data.X[data.Y == c]
        assert np.all(rows == rows[0])
    assert linear_probe_accuracy(data) == 1.0


def test_blobs_linear_probe_oracle():
    data = gaussian_blobs(4, 16, 725, center_scale=4.0, noise=1.0, seed=0, sizes=(2000, 300, 600), min_probe=0.95)
    assert data.meta["linear_probe_accuracy"] >= 0.95
    assert [len(data.partitions[k]) for k in ("train", "validation", "test")] == [2000, 300, 600]


def test_split_idempotent():
    y = np.repeat(np.arange(3), 50)
    a, b = stratified_split(y, 3), stratified_split(y, 3)
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_dataset_validation():
    with pytest.raises(SchemaError):
        Dataset(np.zeros((3, 2)), np.array([0, 1, 5]), 2, {"train": np.arange(3), "validation": [], "test": []})


def test_shells_probe_and_mlp():
    data = concentric_shells(2, 4, 200, seed=0, radius_gap=2.0)
    assert linear_probe_accuracy(data) <= 0.6
    b = concentric_shells(2, 4, 200, seed=0, radius_gap=2.0)
    assert np.array_equal(data.X, b.X)
    specs, split = mlp_specs([4, 32, 16, 2])
    res = split_train(build_mlp(specs, split, 0), data, LossConfig(), TrainConfig(epochs=100), seed=0)
    x, y = data.test
    assert np.mean(np.argmax(res.model.predict_logits(x), axis=1) == y) >= 0.9


def test_sample_leak():
    data = gaussian_blobs(4, 3, 30, seed=0)
    x, y = sample_leak(*data.train, 4, 1, seed=2)
    assert sorted(y.tolist()) == [0, 1, 2, 3] and x.shape == (4, 3)
    x2, y2 = sample_leak(*data.train, 4, 1, seed=2)
    assert np.array_equal(x, x2) and np.array_equal(y, y2)
    with pytest.raises(ContractError):
        sample_leak(*data.train, 4, 1000, seed=0)
    train_rows = {tuple(r) for r in data.train[0]}
    test_rows = {tuple(r) for r in data.test[0]}
    assert {tuple(r) for r in sample_leak(*data.train, 4, 5, seed=1)[0]} <= train_rows
    assert not train_rows & test_rows


def test_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((3, 4)) * 1e3
    data = Dataset(X, np.array([0, 1, 0]), 2, {"train": np.arange(3), "validation": np.array([], int),
                                                 "test": np.array([], int)})
    save_csv(data, tmp_path / "d.csv")
    back = load_csv(tmp_path / "d.csv", sizes=(3, 0, 0))
    assert np.array_equal(back.X, X) and back.Y.tolist() == [0, 1, 0]
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "f0,f1,f2,f3,label"


def test_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ParseError, match="offset"):
        load_csv(p)
    p.write_text("f0,label\n1.0,cat\n")
    with pytest.raises(SchemaError):
        load_csv(p)
    p.write_text("f0,label\n1.0,0.5\n")
    with pytest.raises(SchemaError):
        load_csv(p)


def test_idx_roundtrip_and_range(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(500, 28, 28), dtype=np.uint8)
    labels = np.repeat(np.arange(10), 50).astype(np.uint8)
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    write_idx(images, labels, ip, lp)
    assert struct.unpack(">I", ip.read_bytes()[:4])[0] == 0x00000803
    assert np.array_equal(read_idx_images(ip), images)
    data = load_idx(ip, lp)
    assert data.X.shape == (500, 784) and data.X.min() >= 0.0 and data.X.max() <= 1.0


def test_idx_bad_magic_and_truncation(tmp_path):
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    write_idx(np.zeros((2, 3, 3), np.uint8), np.zeros(2, np.uint8), ip, lp)
    blob = ip.read_bytes()
    (tmp_path / "m.idx").write_bytes(struct.pack(">I", 0x00000801) + blob[4:])
    with pytest.raises(ParseError, match="offset 0"):
        read_idx_images(tmp_path / "m.idx")
    (tmp_path / "t.idx").write_bytes(blob[:-3])
    with pytest.raises(ParseError, match="offset 16"):
        read_idx_images(tmp_path / "t.idx")


def test_sidecar(tmp_path):
    write_sidecar(gaussian_blobs(2, 2, 5, seed=4), tmp_path / "meta.txt")
    text = (tmp_path / "meta.txt").read_text()
    assert "generator = \"gaussian_blobs\"" in text and "seed = 4" in text
