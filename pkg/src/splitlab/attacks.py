"""Model-completion attacks on a trained bottom model, and their baselines."""

import itertools
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from splitlab import autograd as ag
from splitlab import kernels
from splitlab.autograd import Tape, Tensor
from splitlab.errors import ContractError
from splitlab.nn import AdamState, adam_step, build_mlp, build_top, run_layers


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "fine_tune"  # "fine_tune" | "cluster"
    leaked_k: int = 1
    max_epochs: int = 1000
    stop_error: float = 0.01
    restarts: int = 1
    seed: int = 0
    lr: float = 1e-3
    n_init: int = 10
    max_iter: int = 100

    def __post_init__(self):
        if self.kind not in ("fine_tune", "cluster", "scratch"):
            raise ContractError(f"unknown attack kind {self.kind!r}")
        if self.kind != "cluster" and self.leaked_k < 1:
            raise ContractError("leaked_k must be >= 1")
        if self.restarts < 1:
            raise ContractError("restarts must be >= 1")


@dataclass
class AttackReport:
    kind: str
    k: int
    accuracies: list
    config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def accuracy(self):
        return float(np.mean(self.accuracies))

    @property
    def error(self):
        return 1.0 - self.accuracy


def _restart_seeds(seed, restarts):
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(restarts)]


def _check_leak(y, n_classes):
    counts = np.bincount(np.asarray(y, dtype=np.int64), minlength=n_classes)
    if counts.min() == 0:
        raise ContractError(f"leaked set lacks class(es) {np.flatnonzero(counts == 0).tolist()}")
    if len(set(counts.tolist())) != 1:
        raise ContractError(f"leaked set must hold the same k per class, got counts {counts.tolist()}")
    return int(counts[0])


def _fit(params, forward, y, config):
    """Full-batch Adam until train error < stop_error or max_epochs."""
    adam = AdamState(params, lr=config.lr)
    epochs = 0
    for epochs in range(config.max_epochs + 1):
        with Tape() as tape:
            logits = forward()
            loss = ag.softmax_cross_entropy(logits, y)
        err = float(np.mean(np.argmax(logits.values, axis=1) != y))
        if err < config.stop_error or epochs == config.max_epochs:
            break
        tape.backward(loss)
        adam_step(adam)
        for p in params:
            p.grad = None
    return epochs


def fine_tuning_attack(model, top_specs, leaked, test, config, n_classes, split_index=None):
    """Train a fresh top model on frozen bottom embeddings of the leaked set.

    ``split_index`` selects the attacked layer (default: the model's split).
    A single dense top layer is initialized with per-class embedding means.
    """
    xk, yk = leaked
    yk = np.asarray(yk, dtype=np.int64)
    k = _check_leak(yk, n_classes)
    xt, yt = test
    emb_leak = model.embed(xk, split_index)
    emb_test = model.embed(xt, split_index)
    accs, epochs = [], []
    for s in _restart_seeds(config.seed, config.restarts):
        layers = build_top(top_specs, s)
        if len(layers) == 1 and layers[0].spec.kind == "dense":
            means = np.stack([emb_leak[yk == c].mean(axis=0) for c in range(n_classes)])
            layers[0].weight.values = means.T.copy()
            layers[0].bias.values = np.zeros(n_classes)
        params = [p for l in layers for p in l.params()]
        epochs.append(_fit(params, lambda: run_layers(layers, Tensor(emb_leak)), yk, config))
        pred = np.argmax(run_layers(layers, Tensor(emb_test)).values, axis=1)
        accs.append(float(np.mean(pred == yt)))
    return AttackReport("fine_tune", k, accs, asdict(config), {"epochs": epochs})


def scratch_baseline(full_specs, split_index, leaked, test, config, n_classes):
    """Train the complete model from random init on the leaked set only."""
    xk, yk = leaked
    yk = np.asarray(yk, dtype=np.int64)
    k = _check_leak(yk, n_classes)
    xt, yt = test
    accs, epochs = [], []
    for s in _restart_seeds(config.seed, config.restarts):
        model = build_mlp(full_specs, split_index, s)
        epochs.append(_fit(model.params(), lambda: model.forward(Tensor(xk)), yk, config))
        accs.append(float(np.mean(np.argmax(model.predict_logits(xt), axis=1) == yt)))
    return AttackReport("scratch", k, accs, asdict(config), {"epochs": epochs})


# --- clustering -------------------------------------------------------------


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    trace: np.ndarray


def kmeans_plus_plus(x, k, rng):
    n = len(x)
    centers = [x[rng.integers(n)]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def kmeans(x, k, seed=0, n_init=10, max_iter=100):
    """Lloyd's algorithm from k-means++ seeds; keeps the lowest-inertia run."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) < k:
        raise ContractError(f"need at least {k} samples to form {k} clusters, got {len(x)}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        labels, centers, trace = kernels.lloyd(x, kmeans_plus_plus(x, k, rng), max_iter)
        if best is None or trace[-1] < best.inertia:
            best = KMeansResult(np.asarray(labels), centers, float(trace[-1]), trace)
    return best


def confusion_counts(cluster_labels, true_labels, n_classes):
    """``c[i, j]`` = samples in cluster i with true label j."""
    c = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(c, (np.asarray(cluster_labels), np.asarray(true_labels)), 1)
    return c


def permutation_accuracy(counts):
    """Best accuracy over one-to-one cluster-to-label assignments."""
    counts = np.asarray(counts)
    if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
        raise ContractError(f"confusion counts must be square, got shape {counts.shape}")
    total = counts.sum()
    if total == 0:
        return 0.0
    rows, cols = linear_sum_assignment(counts, maximize=True)
    return float(counts[rows, cols].sum() / total)


def permutation_accuracy_brute(counts):
    """Exhaustive-permutation reference for small C."""
    counts = np.asarray(counts)
    if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
        raise ContractError(f"confusion counts must be square, got shape {counts.shape}")
    c = counts.shape[0]
    total = counts.sum()
    if total == 0:
        return 0.0
    rows = np.arange(c)
    best = max(counts[rows, list(p)].sum() for p in itertools.permutations(range(c)))
    return float(best / total)


def clustering_attack(model, X, y_true, n_classes, seed=0, n_init=10, max_iter=100, split_index=None):
    """k-means on bottom embeddings of unlabeled ``X``, scored by permutation accuracy.

    ``model=None`` clusters the raw inputs (the no-bottom-model baseline).
    """
    feats = np.asarray(X, dtype=np.float64) if model is None else model.embed(X, split_index)
    res = kmeans(feats, n_classes, seed, n_init, max_iter)
    acc = permutation_accuracy(confusion_counts(res.labels, y_true, n_classes))
    kind = "cluster_raw" if model is None else "cluster"
    cfg = {"seed": seed, "n_init": n_init, "max_iter": max_iter}
    return AttackReport(kind, 0, [acc], cfg, {"inertia": res.inertia})
