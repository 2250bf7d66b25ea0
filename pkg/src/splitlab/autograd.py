"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Operations executed while a :class:`Tape` is active are recorded on it when
at least one input requires a gradient.  ``tape.backward(root)`` walks the
record in reverse and accumulates ``d root / d leaf`` into the ``grad`` of
every leaf tensor that requires one.  Outside a tape, operations are plain
numpy computations.

Example::

    w = Tensor(np.ones((3, 2)), requires_grad=True)
    with Tape() as tape:
        loss = (x @ w).sum()
    tape.backward(loss)
    w.grad  # d loss / d w
"""

import itertools

import numpy as np

from splitlab.errors import ContractError, NonFiniteError, ShapeError

LAYER_NORM_EPS = 1e-12

_tape_stack = []
_tensor_ids = itertools.count()


def active_tape():
    """Return the innermost active tape, or None."""
    return _tape_stack[-1] if _tape_stack else None


class Tensor:
    """A float64 array that can participate in a differentiation tape."""

    __slots__ = ("values", "grad", "requires_grad", "node", "name", "_id")

    def __init__(self, values, requires_grad=False, name=None):
        self.values = np.array(values, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.node = None  # (tape, op index) when produced by a recorded op
        self.name = name
        self._id = next(_tensor_ids)

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    def item(self):
        return float(self.values)

    def numpy(self):
        return self.values

    def detach(self):
        return Tensor(self.values.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        extra = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{extra})"

    def __len__(self):
        return len(self.values)

    __add__ = lambda self, other: add(self, other)  # noqa: E731
    __radd__ = lambda self, other: add(other, self)  # noqa: E731
    __sub__ = lambda self, other: sub(self, other)  # noqa: E731
    __rsub__ = lambda self, other: sub(other, self)  # noqa: E731
    __mul__ = lambda self, other: mul(self, other)  # noqa: E731
    __rmul__ = lambda self, other: mul(other, self)  # noqa: E731
    __truediv__ = lambda self, other: div(self, other)  # noqa: E731
    __rtruediv__ = lambda self, other: div(other, self)  # noqa: E731
    __matmul__ = lambda self, other: matmul(self, other)  # noqa: E731
    __neg__ = lambda self: neg(self)  # noqa: E731
    __pow__ = lambda self, p: power(self, p)  # noqa: E731

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of differentiable operations (one forward pass)."""

    def __init__(self):
        self.ops = []  # (inputs, output, backward_fn)

    def __enter__(self):
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc):
        popped = _tape_stack.pop()
        assert popped is self

    def __len__(self):
        return len(self.ops)

    def record(self, inputs, output, backward_fn):
        output.node = (self, len(self.ops))
        self.ops.append((inputs, output, backward_fn))

    def _owns(self, t):
        return t.node is not None and t.node[0] is self

    def backward(self, root):
        """Accumulate d(root)/d(leaf) into every reachable leaf's ``grad``."""
        if root.size != 1:
            raise ContractError(f"backward root must be a scalar, got shape {root.shape}")
        self.backward_from(root, np.ones_like(root.values))

    def backward_from(self, output, grad):
        """Backpropagate an explicit upstream gradient of ``output``.

        Used by a party that received ``grad`` for a tensor it produced.
        """
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != output.shape:
            raise ShapeError(f"seed gradient shape {grad.shape} != output shape {output.shape}")
        if not self._owns(output):
            if output.requires_grad:
                _accumulate_leaf(output, grad)
            return
        grads = {output._id: grad}
        stop = output.node[1]
        for inputs, out, fn in reversed(self.ops[: stop + 1]):
            g = grads.pop(out._id, None)
            if g is None:
                continue
            input_grads = fn(g)
            for inp, gi in zip(inputs, input_grads):
                if gi is None or not inp.requires_grad:
                    continue
                if self._owns(inp):
                    prev = grads.get(inp._id)
                    grads[inp._id] = gi if prev is None else prev + gi
                else:
                    _accumulate_leaf(inp, gi)


def _accumulate_leaf(t, g):
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _make(values, inputs, backward_fn):
    """Wrap an op result, recording it on the active tape when needed."""
    if not np.all(np.isfinite(values)):
        if all(np.all(np.isfinite(t.values)) for t in inputs):
            raise NonFiniteError("operation produced NaN/Inf from finite inputs")
    out = Tensor(values)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(tuple(inputs), out, backward_fn)
    return out


def custom_op(inputs, values, backward_fn):
    """Record a fused operation given its forward values and backward rule.

    ``backward_fn(grad_out)`` returns one gradient (or None) per input.
    """
    inputs = [as_tensor(t) for t in inputs]
    return _make(np.asarray(values, dtype=np.float64), inputs, backward_fn)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from exc


# --- elementwise binary ---------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _make(
        a.values + b.values,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _make(
        a.values - b.values,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _make(
        a.values * b.values,
        (a, b),
        lambda g: (_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)),
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    out = a.values / b.values
    return _make(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.values, a.shape),
            _unbroadcast(-g * out / b.values, b.shape),
        ),
    )


def neg(a):
    a = as_tensor(a)
    return _make(-a.values, (a,), lambda g: (-g,))


def power(a, p):
    a = as_tensor(a)
    p = float(p)
    return _make(a.values**p, (a,), lambda g: (g * p * a.values ** (p - 1),))


# --- elementwise unary ----------------------------------------------------


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.values)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.values), (a,), lambda g: (g / a.values,))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.values)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.values)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def leaky_relu(a, slope=0.01):
    # derivative at exactly 0 takes the leak slope
    a = as_tensor(a)
    pos = a.values > 0
    out = np.where(pos, a.values, slope * a.values)
    return _make(out, (a,), lambda g: (np.where(pos, g, slope * g),))


def activation(a, kind="leaky_relu", slope=0.01):
    if kind == "leaky_relu":
        return leaky_relu(a, slope)
    if kind == "tanh":
        return tanh(a)
    raise ContractError(f"unknown activation {kind!r}")


# --- reductions and shape -------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.values.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)
    return _make(a.values.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a):
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("transpose expects a 2-D tensor")
    return _make(a.values.T.copy(), (a,), lambda g: (g.T,))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    return _make(
        a.values @ b.values,
        (a, b),
        lambda g: (g @ b.values.T, a.values.T @ g),
    )


# --- fused layers ---------------------------------------------------------


def layer_norm(z, eps=LAYER_NORM_EPS):
    """Per-row standardization without affine parameters.

    Rows with non-trivial variance land on the sphere of radius sqrt(d)
    with zero mean.  The biased variance is floored at ``eps`` (rather
    than shifted by it) so that the sphere identity holds to rounding for
    every row whose variance exceeds the guard.
    """
    z = as_tensor(z)
    if z.ndim != 2 or z.shape[1] < 2:
        raise ShapeError(f"layer_norm expects batch x d with d >= 2, got {z.shape}")
    mu = z.values.mean(axis=1, keepdims=True)
    xc = z.values - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    live = var > eps
    inv = 1.0 / np.sqrt(np.maximum(var, eps))
    out = xc * inv

    def backward(g):
        gm = g.mean(axis=1, keepdims=True)
        gom = np.where(live, (g * out).mean(axis=1, keepdims=True), 0.0)
        return (inv * (g - gm - out * gom),)

    return _make(out, (z,), backward)


def degenerate_rows(z, threshold=1e-6):
    """Indices of rows whose variance is too small for the sphere invariant."""
    v = np.asarray(z.values if isinstance(z, Tensor) else z)
    return np.flatnonzero(v.var(axis=1) <= threshold)


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be batch x C, got {logits.shape}")
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {n}")
    if n and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"labels must lie in [0, {c})")
    if n == 0:
        return _make(np.array(0.0), (logits,), lambda g: (np.zeros(logits.shape),))
    shifted = logits.values - logits.values.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = np.mean(logsumexp - shifted[rows, labels])

    def backward(g):
        p = np.exp(shifted - logsumexp[:, None])
        p[rows, labels] -= 1.0
        return (p * (g / n),)

    return _make(np.array(loss), (logits,), backward)


def softmax(logits):
    v = np.asarray(logits.values if isinstance(logits, Tensor) else logits)
    e = np.exp(v - v.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)
