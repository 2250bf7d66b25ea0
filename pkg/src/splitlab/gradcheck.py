"""Central finite-difference checks for taped functions."""

import numpy as np

from splitlab.autograd import Tape, Tensor


def analytic_grads(fn, arrays):
    """Gradients of scalar ``fn(*tensors)`` w.r.t. each input array."""
    ts = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = fn(*ts)
    tape.backward(out)
    return [t.grad if t.grad is not None else np.zeros_like(t.values) for t in ts]


def numeric_grads(fn, arrays, h=1e-5):
    out = []
    for i, a in enumerate(arrays):
        g = np.zeros_like(a, dtype=np.float64)
        for idx in np.ndindex(a.shape):
            plus = [x.copy() for x in arrays]
            minus = [x.copy() for x in arrays]
            plus[i][idx] += h
            minus[i][idx] -= h
            g[idx] = (fn(*[Tensor(x) for x in plus]).item() - fn(*[Tensor(x) for x in minus]).item()) / (2 * h)
        out.append(g)
    return out


def max_relative_error(a, b, floor=1e-6):
    """max |a - b| / max(|a|, |b|, floor), elementwise over all entries."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def check_gradients(fn, arrays, h=1e-5, floor=1e-6):
    """Worst relative error between analytic and numeric gradients."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    ana = analytic_grads(fn, arrays)
    num = numeric_grads(fn, arrays, h)
    return max(max_relative_error(x, y, floor) for x, y in zip(ana, num))
