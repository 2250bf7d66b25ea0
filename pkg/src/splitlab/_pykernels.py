"""Pure-numpy implementations of the pairwise kernels.

Same signatures and semantics as the compiled ``_ckernels`` module; used
when the extension is not built or ``SPLITLAB_PURE_PYTHON=1`` is set.
"""

import numpy as np


def pe_angular(z, labels, delta):
    """Angular potential energy over ordered same-class pairs.

    Returns ``(loss, grad)`` with ``grad`` the derivative w.r.t. ``z``.
    """
    z = np.ascontiguousarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    n = z.shape[0]
    if n < 2:
        return 0.0, np.zeros_like(z)
    norms = np.sqrt((z * z).sum(axis=1))
    norms = np.where(norms > 0.0, norms, 1.0)
    u = z / norms[:, None]
    cos = u @ u.T
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    if not same.any():
        return 0.0, np.zeros_like(z)
    # the value is clamped only near 1 (where 1/arccos blows up); the gradient
    # is zeroed within delta of either end, where arccos' is unbounded
    lo, hi = -1.0 + delta, 1.0 - delta
    c = np.clip(cos, -1.0, hi)
    theta = np.arccos(c)
    loss = float(np.sum(1.0 / theta[same]))
    active = same & (cos > lo) & (cos < hi)
    dl_dc = np.zeros_like(cos)
    dl_dc[active] = 1.0 / (theta[active] ** 2 * np.sqrt(1.0 - c[active] ** 2))
    gu = 2.0 * (dl_dc @ u)
    radial = (gu * u).sum(axis=1)
    grad = (gu - radial[:, None] * u) / norms[:, None]
    return loss, grad


def pe_euclidean(z, labels, guard):
    """Euclidean potential energy over ordered same-class pairs."""
    z = np.ascontiguousarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    n = z.shape[0]
    if n < 2:
        return 0.0, np.zeros_like(z)
    diff = z[:, None, :] - z[None, :, :]
    r2 = (diff * diff).sum(axis=2)
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    if not same.any():
        return 0.0, np.zeros_like(z)
    r = np.sqrt(r2 + guard)
    inv = np.where(same, 1.0 / r, 0.0)
    loss = float(inv.sum())
    w = inv**3
    # summing w_ij * (z_i - z_j) avoids cancellation when a pair nearly coincides
    grad = -2.0 * np.einsum("ij,ijk->ik", w, diff)
    return loss, grad


def riesz_energy_grad(x, s):
    """Riesz s-energy over ordered pairs i != j and its gradient."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        return 0.0, np.zeros_like(x)
    diff = x[:, None, :] - x[None, :, :]
    r2 = (diff * diff).sum(axis=2)
    np.fill_diagonal(r2, 1.0)
    r2 = r2 + 1e-18
    rs = r2 ** (-0.5 * s)
    np.fill_diagonal(rs, 0.0)
    energy = float(rs.sum())
    w = rs / r2
    grad = -2.0 * s * (w.sum(axis=1)[:, None] * x - w @ x)
    return energy, grad


def assign(x, centers):
    """Nearest-center labels (ties to the lower index) and squared distances."""
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(len(x)), labels]


def lloyd(x, centers, max_iter):
    """Lloyd iterations from ``centers``.

    Returns ``(labels, centers, inertia_trace)``.  The trace holds the
    inertia after every assignment step, the final one included.  An
    emptied cluster takes the point farthest from its center among points
    whose cluster has more than one member.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    centers = np.array(centers, dtype=np.float64, copy=True)
    k = centers.shape[0]
    labels, mind = assign(x, centers)
    trace = [float(mind.sum())]
    for _ in range(max_iter):
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        for j in range(k):
            if counts[j] == 0:
                eligible = np.where(counts[labels] > 1, mind, -1.0)
                far = int(np.argmax(eligible))
                old = labels[far]
                sums[old] -= x[far]
                counts[old] -= 1
                sums[j] = x[far]
                counts[j] = 1
                labels[far] = j
                mind[far] = 0.0
        centers = sums / counts[:, None]
        new_labels, mind = assign(x, centers)
        trace.append(float(mind.sum()))
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return labels, centers, np.array(trace)
