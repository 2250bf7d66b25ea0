"""Datasets: synthetic generators, CSV/IDX loaders, partitions, leak sampling."""

import csv
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from splitlab.errors import ContractError, ParseError, SchemaError

SPLIT_RATIOS = (0.7, 0.1, 0.2)
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Features, integer labels and disjoint train/validation/test index sets."""

    X: np.ndarray
    Y: np.ndarray
    n_classes: int
    partitions: dict
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.Y = np.asarray(self.Y, dtype=np.int64)
        if self.X.ndim != 2 or len(self.X) != len(self.Y):
            raise SchemaError(f"X shape {self.X.shape} does not match {len(self.Y)} labels")
        if len(self.Y) and (self.Y.min() < 0 or self.Y.max() >= self.n_classes):
            raise SchemaError(f"labels must lie in [0, {self.n_classes})")
        idx = np.concatenate([np.asarray(v, dtype=np.int64) for v in self.partitions.values()])
        if len(idx) != len(self.Y) or len(np.unique(idx)) != len(idx):
            raise ContractError("partitions must be disjoint and cover every sample")
        if "train" in self.partitions:
            present = np.unique(self.Y[self.partitions["train"]])
            if len(present) != self.n_classes:
                raise ContractError("every class must be present in the train partition")

    @property
    def n_features(self):
        return self.X.shape[1]

    def part(self, name):
        idx = self.partitions[name]
        return self.X[idx], self.Y[idx]

    @property
    def train(self):
        return self.part("train")

    @property
    def validation(self):
        return self.part("validation")

    @property
    def test(self):
        return self.part("test")


def stratified_split(labels, seed, ratios=SPLIT_RATIOS, sizes=None):
    """Partition indices per class into train/validation/test.

    ``sizes`` (total counts per partition) overrides ``ratios``; either way
    each class is divided in the same proportions.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if sizes is not None:
        if sum(sizes) != n:
            raise ContractError(f"partition sizes {sizes} do not sum to {n}")
        ratios = tuple(s / n for s in sizes)
    rng = np.random.default_rng(seed)
    parts = {"train": [], "validation": [], "test": []}
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_tr = int(round(ratios[0] * len(idx)))
        n_va = int(round(ratios[1] * len(idx)))
        parts["train"].append(idx[:n_tr])
        parts["validation"].append(idx[n_tr : n_tr + n_va])
        parts["test"].append(idx[n_tr + n_va :])
    return {k: np.sort(np.concatenate(v)) for k, v in parts.items()}


def linear_probe_accuracy(data, seed=0):
    """Test accuracy of a multinomial logistic regression fit on train."""
    from sklearn.linear_model import LogisticRegression

    xtr, ytr = data.train
    xte, yte = data.test
    clf = LogisticRegression(max_iter=2000, random_state=seed)
    clf.fit(xtr, ytr)
    return float(np.mean(clf.predict(xte) == yte))


def gaussian_blobs(n_classes, n_features, n_per_class, center_scale=4.0, noise=1.0, seed=0,
                   sizes=None, min_probe=None):
    """Isotropic Gaussian classes around centers uniform in [-scale, scale]^d."""
    if n_classes < 2:
        raise ContractError("gaussian_blobs needs at least 2 classes")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-center_scale, center_scale, size=(n_classes, n_features))
    Y = np.repeat(np.arange(n_classes), n_per_class)
    X = centers[Y] + noise * rng.standard_normal((len(Y), n_features))
    meta = {
        "generator": "gaussian_blobs",
        "n_classes": n_classes,
        "n_features": n_features,
        "n_per_class": n_per_class,
        "center_scale": center_scale,
        "noise": noise,
        "seed": seed,
        "sizes": list(sizes) if sizes else None,
        "split_ratios": list(SPLIT_RATIOS),
    }
    data = Dataset(X, Y, n_classes, stratified_split(Y, seed + 1, sizes=sizes), meta)
    if min_probe is not None:
        acc = linear_probe_accuracy(data, seed)
        data.meta["linear_probe_accuracy"] = acc
        if acc < min_probe:
            raise ContractError(f"linear probe reached {acc:.3f} < required {min_probe}")
    return data


def concentric_shells(n_classes, n_features, n_per_class, seed=0, radius_gap=2.0, noise=0.1,
                      max_probe=0.6):
    """Class c lies on a noisy sphere of radius ``1 + c * radius_gap``."""
    if n_classes < 2:
        raise ContractError("concentric_shells needs at least 2 classes")
    rng = np.random.default_rng(seed)
    Y = np.repeat(np.arange(n_classes), n_per_class)
    directions = rng.standard_normal((len(Y), n_features))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = 1.0 + radius_gap * Y + noise * rng.standard_normal(len(Y))
    X = directions * radii[:, None]
    meta = {
        "generator": "concentric_shells",
        "n_classes": n_classes,
        "n_features": n_features,
        "n_per_class": n_per_class,
        "radius_gap": radius_gap,
        "noise": noise,
        "seed": seed,
        "split_ratios": list(SPLIT_RATIOS),
    }
    data = Dataset(X, Y, n_classes, stratified_split(Y, seed + 1), meta)
    if max_probe is not None:
        acc = linear_probe_accuracy(data, seed)
        data.meta["linear_probe_accuracy"] = acc
        if acc > max_probe:
            raise ContractError(f"linear probe reached {acc:.3f} > allowed {max_probe}")
    return data


def sample_leak(X, Y, n_classes, k, seed):
    """Exactly ``k`` samples per class without replacement."""
    Y = np.asarray(Y)
    rng = np.random.default_rng(seed)
    picks = []
    for c in range(n_classes):
        idx = np.flatnonzero(Y == c)
        if k < 1 or k > len(idx):
            raise ContractError(f"cannot leak k={k} samples of class {c} (have {len(idx)})")
        picks.append(rng.choice(idx, size=k, replace=False))
    sel = np.concatenate(picks)
    return np.asarray(X)[sel], Y[sel]


def write_sidecar(data, path):
    with open(path, "w") as fh:
        for key, value in sorted(data.meta.items()):
            fh.write(f"{key} = {json.dumps(value)}\n")


# --- CSV --------------------------------------------------------------------


def save_csv(data, path):
    """Header ``f0,...,f{d-1},label``; floats in round-trip repr."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{i}" for i in range(data.n_features)] + ["label"])
        for x, y in zip(data.X, data.Y):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


def load_csv(path, label_column="label", n_classes=None, seed=0, sizes=None):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file (at byte offset 0)")
    header = rows[0]
    if label_column not in header:
        raise ParseError(f"{path}: header lacks label column {label_column!r} (at byte offset 0)")
    li = header.index(label_column)
    X, Y = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            label = int(row[li])
        except ValueError:
            raise SchemaError(f"{path}:{lineno}: label {row[li]!r} is not an integer") from None
        try:
            X.append([float(v) for i, v in enumerate(row) if i != li])
        except ValueError as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from None
        Y.append(label)
    X = np.array(X, dtype=np.float64).reshape(len(Y), len(header) - 1)
    Y = np.array(Y, dtype=np.int64)
    c = int(Y.max()) + 1 if n_classes is None else n_classes
    return Dataset(X, Y, c, stratified_split(Y, seed, sizes=sizes), {"source": str(path)})


# --- IDX ----------------------------------------------------------------------


def _read_idx(path, magic, ndim):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4:
        raise ParseError(f"{path}: truncated magic (at byte offset 0)")
    (got,) = struct.unpack_from(">I", data, 0)
    if got != magic:
        raise ParseError(f"{path}: bad IDX magic 0x{got:08x}, expected 0x{magic:08x} (at byte offset 0)")
    if len(data) < 4 + 4 * ndim:
        raise ParseError(f"{path}: truncated dimension header (at byte offset 4)")
    dims = struct.unpack_from(f">{ndim}I", data, 4)
    off = 4 + 4 * ndim
    count = int(np.prod(dims))
    if len(data) - off != count:
        raise ParseError(
            f"{path}: payload has {len(data) - off} bytes, header promises {count} (at byte offset {off})"
        )
    return np.frombuffer(data, dtype=np.uint8, offset=off).reshape(dims)


def read_idx_images(path):
    return _read_idx(path, IDX_IMAGES_MAGIC, 3)


def read_idx_labels(path):
    return _read_idx(path, IDX_LABELS_MAGIC, 1)


def write_idx(images, labels, images_path, labels_path):
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">I", IDX_IMAGES_MAGIC) + struct.pack(">3I", *images.shape) + images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">I", IDX_LABELS_MAGIC) + struct.pack(">I", len(labels)) + labels.tobytes())


def load_idx(images_path, labels_path, n_classes=10, seed=0, sizes=None):
    """IDX image/label pair; pixels rescaled to [0, 1] and flattened."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise SchemaError(f"{len(images)} images but {len(labels)} labels")
    X = images.reshape(len(images), -1).astype(np.float64) / 255.0
    Y = labels.astype(np.int64)
    return Dataset(X, Y, n_classes, stratified_split(Y, seed, sizes=sizes),
                   {"source": [str(images_path), str(labels_path)]})


def concat_partitions(train, test, n_classes, val_fraction=0.1, seed=0):
    """Build one Dataset from separate train/test arrays, carving validation from train."""
    (xtr, ytr), (xte, yte) = train, test
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ytr))
    n_val = int(round(val_fraction * len(ytr)))
    X = np.concatenate([xtr, xte])
    Y = np.concatenate([ytr, yte])
    parts = {
        "train": np.sort(perm[n_val:]),
        "validation": np.sort(perm[:n_val]),
        "test": np.arange(len(ytr), len(Y)),
    }
    return Dataset(X, Y, n_classes, parts)
