import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from splitlab import autograd as ag
from splitlab.autograd import Tape, Tensor
from splitlab.errors import ContractError
from splitlab.gradcheck import check_gradients
from splitlab.losses import (
    LossConfig,
    combined_loss,
    dcor_loss,
    flip_labels,
    one_hot,
    pe_loss_angular,
    pe_loss_euclidean,
    same_class_pairs,
)


def test_angular_antipodal_pair():
    v = pe_loss_angular(Tensor([[1.0, 1.0], [-1.0, -1.0]]), [0, 0]).item()
    # arccos is ill-conditioned at -1: one ulp in the cosine moves the angle ~1e-8
    assert abs(v - 2 / math.pi) < 1e-7
    assert abs(v - 0.63662) < 1e-5


def test_angular_orthogonal_pair():
    v = pe_loss_angular(Tensor([[1.0, 1.0], [1.0, -1.0]]), [1, 1]).item()
    assert abs(v - 4 / math.pi) < 1e-12


def test_angular_near_duplicate_clamped():
    v = pe_loss_angular(Tensor([[1.0, -1.0], [1.0, -1.0]]), [0, 0], delta=1e-7).item()
    assert abs(v - 2 / math.acos(1 - 1e-7)) < 1e-6 * v
    assert abs(v - 4472.1) < 1.0


def test_angular_no_pairs():
    assert pe_loss_angular(Tensor([[1.0, 0.0], [0.0, 1.0]]), [0, 1]).item() == 0.0


def test_euclidean_examples():
    assert abs(pe_loss_euclidean(Tensor([[0.0, 0.0], [2.0, 0.0]]), [3, 3]).item() - 1.0) < 1e-12
    assert pe_loss_euclidean(Tensor([[0.0], [1.0], [2.0]]), [0, 1, 2]).item() == 0.0
    v = pe_loss_euclidean(Tensor([[0.0], [1.0], [2.0]]), [0, 0, 0]).item()
    assert abs(v - 5.0) < 1e-10


def test_euclidean_coincident_points_finite():
    assert np.isfinite(pe_loss_euclidean(Tensor([[1.0, 2.0], [1.0, 2.0]]), [0, 0]).item())


def test_mean_reduction():
    z, y = np.random.default_rng(0).standard_normal((9, 4)), np.array([0, 0, 1, 1, 1, 2, 0, 2, 1])
    total = pe_loss_angular(Tensor(z), y, reduction="sum").item()
    mean = pe_loss_angular(Tensor(z), y, reduction="mean").item()
    assert same_class_pairs(y) == 3 * 2 + 4 * 3 + 2 * 1
    assert abs(mean - total / same_class_pairs(y)) < 1e-12


def _sphere(rng, n, d):
    z = rng.standard_normal((n, d))
    return z * np.sqrt(d) / np.linalg.norm(z, axis=1, keepdims=True)


@pytest.mark.parametrize("loss", ["angular", "euclidean", "dcor"])
def test_loss_gradients(loss):
    rng = np.random.default_rng(7)
    z, y = _sphere(rng, 8, 5), rng.integers(0, 3, 8)
    fn = {
        "angular": lambda t: pe_loss_angular(t, y),
        "euclidean": lambda t: pe_loss_euclidean(t, y),
        "dcor": lambda t: dcor_loss(t, y, 3),
    }[loss]
    assert check_gradients(fn, [z]) < 1e-4


def test_dcor_constant_is_zero():
    assert dcor_loss(Tensor(np.ones((6, 3))), [0, 1, 0, 1, 2, 2]).item() == 0.0


def test_dcor_of_one_hot_is_one():
    y = np.array([0, 1, 2, 1, 0, 2, 2])
    assert abs(dcor_loss(Tensor(one_hot(y)), y).item() - 1.0) < 1e-12


def test_dcor_small_batch():
    with pytest.raises(ContractError):
        dcor_loss(Tensor(np.ones((1, 3))), [0])


def test_dcor_permutation_null():
    rng = np.random.default_rng(2024)
    z = rng.uniform(size=(256, 4))
    y = np.repeat([0, 1], 128)
    observed = dcor_loss(Tensor(z), y, 2).item()
    null = [dcor_loss(Tensor(z), rng.permutation(y), 2).item() for _ in range(1000)]
    assert observed < np.quantile(null, 0.95)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_invariances(seed):
    rng = np.random.default_rng(seed)
    z, y = _sphere(rng, 10, 4), rng.integers(0, 3, 10)
    perm = rng.permutation(10)
    q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    a = pe_loss_angular(Tensor(z), y).item()
    e = pe_loss_euclidean(Tensor(z), y).item()
    d = dcor_loss(Tensor(z), y, 3).item()
    assert abs(pe_loss_angular(Tensor(z[perm]), y[perm]).item() - a) < 1e-9 * max(1, a)
    assert abs(pe_loss_euclidean(Tensor(z[perm]), y[perm]).item() - e) < 1e-9 * max(1, e)
    assert abs(dcor_loss(Tensor(z[perm]), y[perm], 3).item() - d) < 1e-9
    assert abs(pe_loss_angular(Tensor(z @ q), y).item() - a) < 1e-7 * max(1, a)
    assert 0.0 <= d <= 1.0 + 1e-12
    assert abs(dcor_loss(Tensor(3.5 * z + 2.0), y, 3).item() - d) < 1e-9


def test_euclidean_decreases_when_pair_moves_apart():
    z = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 3.0]])
    y = [0, 0, 0]
    before = pe_loss_euclidean(Tensor(z), y).item()
    z2 = z.copy()
    z2[1] = [1.5, 0.0]
    assert pe_loss_euclidean(Tensor(z2), y).item() < before


def test_angular_descent_two_points_on_circle():
    theta = np.array([0.3, 0.5])
    for it in range(4000):
        with Tape() as tape:
            pts = np.stack([np.cos(theta), np.sin(theta)], axis=1)
            z = Tensor(pts, requires_grad=True)
            loss = pe_loss_angular(z, [0, 0])
        tape.backward(loss)
        # chain rule to the angles: d(cos, sin)/d theta = (-sin, cos)
        g = -z.grad[:, 0] * np.sin(theta) + z.grad[:, 1] * np.cos(theta)
        theta = theta - (0.05 if it < 2000 else 1e-3) * g
    gap = abs((theta[1] - theta[0] + np.pi) % (2 * np.pi) - np.pi)
    assert abs(gap - np.pi) < 1e-3


def test_flip_labels():
    y = np.random.default_rng(0).integers(0, 5, 10000)
    assert np.array_equal(flip_labels(y, 0.0, 5, 1), y)
    assert np.all(flip_labels(y, 1.0, 5, 1) != y)
    lo, hi = stats.binom.ppf([0.005, 0.995], 10000, 0.1)
    flipped = int(np.sum(flip_labels(y, 0.1, 5, 0) != y))
    assert lo <= flipped <= hi
    # across seeds the count should land inside the central 99% about 99% of the time
    inside = [lo <= np.sum(flip_labels(y, 0.1, 5, s) != y) <= hi for s in range(300)]
    assert np.mean(inside) >= 0.97
    assert np.array_equal(flip_labels(y, 0.3, 5, 9), flip_labels(y, 0.3, 5, 9))


def test_flip_to_uniform_other_class():
    y = np.zeros(30000, dtype=int)
    out = flip_labels(y, 1.0, 4, 0)
    counts = np.bincount(out, minlength=4)
    assert counts[0] == 0
    assert stats.chisquare(counts[1:]).pvalue > 0.001


def test_flip_needs_two_classes():
    with pytest.raises(ContractError):
        flip_labels([0, 0], 0.5, 1, 0)


def test_loss_config_validation():
    with pytest.raises(ContractError):
        LossConfig("pe", alpha=-1)
    with pytest.raises(ContractError):
        LossConfig("label_dp", flip_ratio=1.5)
    with pytest.raises(ContractError):
        LossConfig("pe", alpha=1, delta=0.01)
    with pytest.raises(ContractError):
        LossConfig("mystery")
    assert LossConfig("label_dp", flip_ratio=0.04).strength == 0.04


def test_combined_loss():
    rng = np.random.default_rng(5)
    logits, z, y = rng.standard_normal((6, 3)), _sphere(rng, 6, 4), np.array([0, 1, 2, 0, 1, 2])
    ce = ag.softmax_cross_entropy(Tensor(logits), y).item()
    assert combined_loss(Tensor(logits), y, Tensor(z), LossConfig("pe", alpha=0.0)).item() == ce
    assert combined_loss(Tensor(logits), y, Tensor(z), LossConfig("label_dp", flip_ratio=0.1)).item() == ce
    cfg = LossConfig("pe", alpha=2.5, reduction="sum")
    expected = ce + 2.5 * pe_loss_angular(Tensor(z), y).item()
    assert combined_loss(Tensor(logits), y, Tensor(z), cfg).item() == expected


@pytest.mark.parametrize("defense", ["pe", "dcor"])
def test_combined_gradient_wrt_z(defense):
    rng = np.random.default_rng(8)
    z, y = _sphere(rng, 7, 4), rng.integers(0, 3, 7)
    w = rng.standard_normal((4, 3))
    cfg = LossConfig(defense, alpha=1.5)
    err = check_gradients(lambda t: combined_loss(ag.matmul(t, Tensor(w)), y, t, cfg, 3), [z])
    assert err < 1e-4
