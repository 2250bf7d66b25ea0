"""Label-protection losses on the forward embedding, and LabelDP flipping."""

from dataclasses import dataclass

import numpy as np

from splitlab import autograd as ag
from splitlab import kernels
from splitlab.errors import ContractError

DEFENSES = ("vanilla", "pe", "dcor", "label_dp")
EUCLIDEAN_GUARD = 1e-12


@dataclass(frozen=True)
class LossConfig:
    defense: str = "vanilla"
    alpha: float = 0.0
    flip_ratio: float = 0.0
    delta: float = 1e-7  # arccos clamp
    metric: str = "angular"  # pe only: "angular" | "euclidean"
    reduction: str = "mean"  # pe only: "sum" over ordered pairs or "mean" per pair

    def __post_init__(self):
        if self.defense not in DEFENSES:
            raise ContractError(f"unknown defense {self.defense!r}; expected one of {DEFENSES}")
        if self.alpha < 0:
            raise ContractError("alpha must be >= 0")
        if not 0.0 <= self.flip_ratio <= 1.0:
            raise ContractError("flip_ratio must lie in [0, 1]")
        if not 0.0 < self.delta < 1e-3:
            raise ContractError("delta must lie in (0, 1e-3)")
        if self.metric not in ("angular", "euclidean"):
            raise ContractError(f"unknown pe metric {self.metric!r}")
        if self.reduction not in ("sum", "mean"):
            raise ContractError(f"unknown pe reduction {self.reduction!r}")

    @property
    def strength(self):
        """The swept quantity: alpha for pe/dcor, flip ratio for label_dp."""
        return self.flip_ratio if self.defense == "label_dp" else self.alpha

    @property
    def needs_norm(self):
        return self.defense in ("pe", "dcor")


def same_class_pairs(labels):
    """Number of ordered same-class pairs (i, j), i != j."""
    counts = np.bincount(np.asarray(labels, dtype=np.int64))
    return int((counts * (counts - 1)).sum())


def _reduce(loss, grad, labels, reduction):
    if reduction == "sum":
        return loss, grad
    if reduction != "mean":
        raise ContractError(f"unknown reduction {reduction!r}")
    pairs = same_class_pairs(labels) if len(labels) else 0
    if pairs == 0:
        return loss, grad
    return loss / pairs, grad / pairs


def pe_loss_angular(z, labels, delta=1e-7, reduction="sum"):
    """Sum of 1/angle over ordered same-class pairs of embedding rows.

    The cosine is capped at 1 - delta before arccos, which bounds the loss
    for near-duplicate rows; the gradient is zero for pairs within delta of
    either end of [-1, 1], where the arccos derivative is unbounded.  ``reduction="mean"`` divides by
    the number of ordered same-class pairs.
    """
    z = ag.as_tensor(z)
    labels = np.asarray(labels, dtype=np.int64)
    loss, grad = _reduce(*kernels.pe_angular(z.values, labels, delta), labels, reduction)
    return ag.custom_op([z], np.array(loss), lambda g: (g * grad,))


def pe_loss_euclidean(z, labels, guard=EUCLIDEAN_GUARD, reduction="sum"):
    """Sum of 1/||z - z'|| over ordered same-class pairs."""
    z = ag.as_tensor(z)
    labels = np.asarray(labels, dtype=np.int64)
    loss, grad = _reduce(*kernels.pe_euclidean(z.values, labels, guard), labels, reduction)
    return ag.custom_op([z], np.array(loss), lambda g: (g * grad,))


def pairwise_distances(z):
    """Euclidean distance matrix of the rows of ``z`` (zero subgradient at 0)."""
    z = ag.as_tensor(z)
    v = z.values
    diff = v[:, None, :] - v[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(dist > 0, (g + g.T) / dist, 0.0)
        return (w.sum(axis=1)[:, None] * v - w @ v,)

    return ag.custom_op([z], dist, backward)


def _double_center(d):
    return d - d.mean(axis=0, keepdims=True) - d.mean(axis=1, keepdims=True) + d.mean()


def one_hot(labels, n_classes=None):
    labels = np.asarray(labels, dtype=np.int64)
    c = int(labels.max()) + 1 if n_classes is None else n_classes
    out = np.zeros((len(labels), c))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def dcor_loss(z, labels, n_classes=None):
    """Batch distance correlation between embeddings and one-hot labels.

    ``sum(A * B) / sqrt(sum(A^2) * sum(B^2))`` over doubly-centered distance
    matrices A (embeddings) and B (labels).  Returns exact 0 when either
    centered sum of squares is below 1e-12.
    """
    z = ag.as_tensor(z)
    if z.shape[0] < 2:
        raise ContractError("dcor_loss needs a batch of at least 2")
    y = one_hot(labels, n_classes)
    dy = np.sqrt(((y[:, None, :] - y[None, :, :]) ** 2).sum(axis=2))
    b = _double_center(dy)
    sbb = float((b * b).sum())
    a = _double_center(pairwise_distances(z))
    saa = (a * a).sum()
    if sbb < 1e-12 or saa.item() < 1e-12:
        return ag.Tensor(0.0)
    return (a * b).sum() / ag.sqrt(saa * sbb)


def flip_labels(labels, flip_ratio, n_classes, seed):
    """Flip each label with probability ``flip_ratio`` to a different class."""
    if n_classes < 2:
        raise ContractError("flip_labels needs at least 2 classes")
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    flip = rng.random(len(labels)) < flip_ratio
    offset = rng.integers(1, n_classes, size=len(labels))
    return np.where(flip, (labels + offset) % n_classes, labels)


def auxiliary_loss(z, labels, config, n_classes=None):
    if config.defense == "pe":
        if config.metric == "euclidean":
            return pe_loss_euclidean(z, labels, reduction=config.reduction)
        return pe_loss_angular(z, labels, config.delta, config.reduction)
    if config.defense == "dcor":
        return dcor_loss(z, labels, n_classes)
    return None


def combined_loss(logits, labels, z, config, n_classes=None):
    """Cross-entropy plus ``alpha`` times the configured embedding loss."""
    ce = ag.softmax_cross_entropy(logits, labels)
    if config.defense not in ("pe", "dcor") or config.alpha == 0:
        return ce
    aux = auxiliary_loss(z, labels, config, n_classes or logits.shape[1])
    return ce + config.alpha * aux
