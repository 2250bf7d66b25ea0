import numpy as np
import pytest

from splitlab.attacks import (
    AttackConfig,
    clustering_attack,
    confusion_counts,
    fine_tuning_attack,
    kmeans,
    permutation_accuracy,
    permutation_accuracy_brute,
    scratch_baseline,
)
from splitlab.datakit import gaussian_blobs, sample_leak
from splitlab.errors import ContractError
from splitlab.losses import LossConfig
from splitlab.nn import LayerSpec, build_mlp, mlp_specs
from splitlab.protocol import TrainConfig, split_train


def test_permutation_example():
    assert permutation_accuracy([[5, 1], [2, 4]]) == 0.75
    assert permutation_accuracy_brute([[5, 1], [2, 4]]) == 0.75


def test_permutation_diagonal():
    assert permutation_accuracy(np.diag([3, 7, 1])) == 1.0


def test_permutation_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        c = int(rng.integers(1, 7))
        counts = rng.integers(0, 20, size=(c, c))
        fast = permutation_accuracy(counts)
        assert fast == permutation_accuracy_brute(counts)
        if counts.sum():
            assert fast >= 1.0 / c - 1e-12


def test_permutation_non_square():
    with pytest.raises(ContractError):
        permutation_accuracy(np.ones((2, 3)))


def test_confusion_counts():
    c = confusion_counts([0, 0, 1, 1, 1], [1, 1, 0, 1, 0], 2)
    assert c.tolist() == [[0, 2], [2, 1]] and c.sum() == 5


def test_kmeans_separated_clusters():
    rng = np.random.default_rng(1)
    centers = np.array([[0, 0], [10, 0], [0, 10], [10, 10]], dtype=float)
    y = np.repeat(np.arange(4), 25)
    x = centers[y] + 0.1 * rng.standard_normal((100, 2))
    res = kmeans(x, 4, seed=0)
    assert permutation_accuracy(confusion_counts(res.labels, y, 4)) == 1.0


def test_kmeans_monotone_inertia():
    x = np.random.default_rng(2).standard_normal((300, 3))
    for seed in range(5):
        trace = kmeans(x, 5, seed=seed, n_init=1).trace
        assert np.all(np.diff(trace) <= 1e-9)


def test_kmeans_too_few_samples():
    with pytest.raises(ContractError):
        kmeans(np.zeros((2, 2)), 3)


def test_clustering_relabel_invariance():
    data = gaussian_blobs(3, 4, 40, seed=0)
    x, y = data.test
    a = clustering_attack(None, x, y, 3, seed=1).accuracy
    b = clustering_attack(None, x, (y + 1) % 3, 3, seed=1).accuracy
    assert a == b


def _fixed_bottom(weight, bias, n_classes):
    d_in, d = weight.shape
    model = build_mlp([LayerSpec.dense(d_in, d), LayerSpec.dense(d, n_classes)], 1, 0)
    model.layers[0].weight.values = weight.copy()
    model.layers[0].bias.values = bias.copy()
    return model


def test_constant_bottom_gives_majority_rate():
    data = gaussian_blobs(4, 5, 50, seed=2, sizes=(80, 40, 80))
    model = _fixed_bottom(np.zeros((5, 3)), np.array([1.0, -2.0, 0.5]), 4)
    leak = sample_leak(*data.train, 4, 3, seed=0)
    rep = fine_tuning_attack(model, model.specs[1:], leak, data.test, AttackConfig(leaked_k=3, max_epochs=200), 4)
    majority = np.bincount(data.test[1]).max() / len(data.test[1])
    assert rep.accuracy == pytest.approx(majority)


def test_identity_bottom_separable():
    data = gaussian_blobs(2, 2, 200, center_scale=4.0, noise=0.5, seed=1)
    model = _fixed_bottom(np.eye(2), np.zeros(2), 2)
    leak = sample_leak(*data.train, 2, 2, seed=3)
    rep = fine_tuning_attack(model, model.specs[1:], leak, data.test, AttackConfig(leaked_k=2), 2)
    assert rep.accuracy >= 0.95


def test_missing_class_in_leak():
    model = _fixed_bottom(np.eye(2), np.zeros(2), 3)
    x = np.zeros((4, 2))
    with pytest.raises(ContractError):
        fine_tuning_attack(model, model.specs[1:], (x, [0, 0, 1, 1]), (x, [0, 1, 2, 0]), AttackConfig(), 3)
    with pytest.raises(ContractError):
        fine_tuning_attack(model, model.specs[1:], (x, [0, 1, 2, 2]), (x, [0, 1, 2, 0]), AttackConfig(), 3)


def test_attack_config_validation():
    with pytest.raises(ContractError):
        AttackConfig(leaked_k=0)
    with pytest.raises(ContractError):
        AttackConfig(restarts=0)


@pytest.fixture(scope="module")
def vanilla_blobs():
    data = gaussian_blobs(4, 16, 725, seed=0, sizes=(2000, 300, 600))
    specs, split = mlp_specs([16, 32, 16, 4])
    res = split_train(build_mlp(specs, split, 0), data, LossConfig(), TrainConfig(), seed=0)
    return data, specs, split, res.model


def test_scratch_deterministic_and_below_fine_tune(vanilla_blobs):
    data, specs, split, model = vanilla_blobs
    leak = sample_leak(*data.train, 4, 1, seed=5)
    cfg = AttackConfig(leaked_k=1, seed=5)
    a = scratch_baseline(specs, split, leak, data.test, cfg, 4)
    b = scratch_baseline(specs, split, leak, data.test, cfg, 4)
    assert a.accuracies == b.accuracies
    ft = fine_tuning_attack(model, model.specs[split:], leak, data.test, cfg, 4)
    assert ft.accuracy > a.accuracy


def test_fine_tune_non_decreasing_in_k(vanilla_blobs):
    data, _, split, model = vanilla_blobs
    means = []
    for k in (1, 2, 4, 8):
        accs = []
        for seed in range(5):
            leak = sample_leak(*data.train, 4, k, seed=seed)
            rep = fine_tuning_attack(model, model.specs[split:], leak, data.test,
                                     AttackConfig(leaked_k=k, seed=seed), 4)
            accs.append(rep.accuracy)
        means.append(np.mean(accs))
    assert all(b >= a - 0.02 for a, b in zip(means, means[1:]))


def test_scratch_with_full_train_set_approaches_vanilla(vanilla_blobs):
    data, specs, split, model = vanilla_blobs
    x, y = data.train
    k = int(np.bincount(y).min())
    leak = sample_leak(x, y, 4, k, seed=0)
    rep = scratch_baseline(specs, split, leak, data.test, AttackConfig(leaked_k=k, max_epochs=300), 4)
    vanilla = np.mean(np.argmax(model.predict_logits(data.test[0]), axis=1) == data.test[1])
    assert rep.accuracy >= vanilla - 0.05
