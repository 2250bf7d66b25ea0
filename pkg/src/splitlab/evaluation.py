"""Accuracy, bottom-model advantage, and pairwise angular-distance analysis."""

import csv
from dataclasses import dataclass

import numpy as np

from splitlab.errors import ContractError, ShapeError


def accuracy(pred, labels_true):
    """Fraction correct; 2-D input is treated as logits (argmax, ties to lower index)."""
    pred = np.asarray(pred)
    labels_true = np.asarray(labels_true)
    if pred.ndim == 2:
        pred = np.argmax(pred, axis=1)
    if len(pred) != len(labels_true):
        raise ShapeError(f"{len(pred)} predictions for {len(labels_true)} labels")
    if len(pred) == 0:
        return float("nan")
    return float(np.mean(pred == labels_true))


@dataclass(frozen=True)
class AdvantageRecord:
    r_null: float
    r_with: float
    advantage: float
    perfect: bool


def bottom_model_advantage(null_reports, with_reports):
    """Mean error without the bottom model minus mean error with it.

    Protection is perfect when the advantage is <= 0.
    """
    if not null_reports or not with_reports:
        raise ContractError("both report lists must be non-empty")
    ks = {r.k for r in null_reports} | {r.k for r in with_reports}
    if len(ks) != 1:
        raise ContractError(f"reports mix leaked k values {sorted(ks)}")
    family = {_family(r.kind) for r in null_reports} | {_family(r.kind) for r in with_reports}
    if len(family) != 1:
        raise ContractError(f"reports mix attack kinds {sorted(family)}")
    r_null = float(np.mean([r.error for r in null_reports]))
    r_with = float(np.mean([r.error for r in with_reports]))
    adv = r_null - r_with
    return AdvantageRecord(r_null, r_with, adv, adv <= 0)


def _family(kind):
    # a scratch baseline pairs with fine-tuning, raw clustering with clustering
    return {"scratch": "fine_tune", "cluster_raw": "cluster"}.get(kind, kind)


def pairwise_angles(z):
    """Angles between all unordered row pairs, with the (i, j) index arrays."""
    z = np.asarray(z, dtype=np.float64)
    norms = np.linalg.norm(z, axis=1)
    u = z / np.where(norms > 0, norms, 1.0)[:, None]
    i, j = np.triu_indices(len(z), k=1)
    cos = np.clip((u[i] * u[j]).sum(axis=1), -1.0, 1.0)
    return np.arccos(cos), i, j


@dataclass
class AngularHistogram:
    edges: np.ndarray
    same: np.ndarray
    diff: np.ndarray
    median_same: float
    median_diff: float
    mean_same: float
    mean_diff: float

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_left", "bin_right", "same_count", "diff_count"])
            for a, b, s, d in zip(self.edges[:-1], self.edges[1:], self.same, self.diff):
                w.writerow([repr(float(a)), repr(float(b)), int(s), int(d)])


def angular_distance_histogram(z, labels, bins=36):
    """Histogram pairwise angles in [0, pi], split by same/different class."""
    labels = np.asarray(labels)
    theta, i, j = pairwise_angles(z)
    same = labels[i] == labels[j]
    edges = np.linspace(0.0, np.pi, bins + 1)
    hs, _ = np.histogram(theta[same], bins=edges)
    hd, _ = np.histogram(theta[~same], bins=edges)

    def stat(f, a):
        return float(f(a)) if len(a) else float("nan")

    return AngularHistogram(
        edges, hs, hd,
        stat(np.median, theta[same]), stat(np.median, theta[~same]),
        stat(np.mean, theta[same]), stat(np.mean, theta[~same]),
    )
