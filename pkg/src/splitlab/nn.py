"""MLP layers, the split model, Adam, and checkpoint files."""

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from splitlab import autograd as ag
from splitlab.autograd import Tensor
from splitlab.errors import ContractError, FramingError, ShapeError

CHECKPOINT_MAGIC = b"SPLTCKPT1"


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "dense" | "activation" | "layer_norm"
    in_dim: int
    out_dim: int
    activation: str | None = None
    slope: float = 0.01

    @classmethod
    def dense(cls, in_dim, out_dim):
        return cls("dense", in_dim, out_dim)

    @classmethod
    def act(cls, dim, kind="leaky_relu", slope=0.01):
        return cls("activation", dim, dim, kind, slope)

    @classmethod
    def norm(cls, dim):
        return cls("layer_norm", dim, dim)


def mlp_specs(dims, activation="leaky_relu", split_norm=False):
    """Dense stack ``dims[0] -> ... -> dims[-1]`` with activations between.

    With ``split_norm`` a layer_norm is inserted right before the last dense
    layer, i.e. at the default split position.  Returns ``(specs, split_index)``
    where the split index points at the last dense layer.
    """
    if len(dims) < 3:
        raise ContractError("an MLP needs at least one hidden layer to split")
    specs = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        if i == len(dims) - 2:
            if split_norm:
                specs.append(LayerSpec.norm(a))
            split_index = len(specs)
        specs.append(LayerSpec.dense(a, b))
        if i < len(dims) - 2:
            specs.append(LayerSpec.act(b, activation))
    return specs, split_index


def _check_specs(specs):
    for prev, cur in zip(specs[:-1], specs[1:]):
        if prev.out_dim != cur.in_dim:
            raise ShapeError(f"layer dims do not chain: {prev} -> {cur}")
    for s in specs:
        if s.kind not in ("dense", "activation", "layer_norm"):
            raise ContractError(f"unknown layer kind {s.kind!r}")
        if s.kind != "dense" and s.in_dim != s.out_dim:
            raise ShapeError(f"{s.kind} layer must preserve width: {s}")


class Layer:
    def __init__(self, spec, weight=None, bias=None):
        self.spec = spec
        self.weight = weight
        self.bias = bias

    def params(self):
        return [self.weight, self.bias] if self.spec.kind == "dense" else []

    def __call__(self, x):
        s = self.spec
        if s.kind == "dense":
            return x @ self.weight + self.bias
        if s.kind == "activation":
            return ag.activation(x, s.activation, s.slope)
        return ag.layer_norm(x)


def init_dense(spec, rng):
    bound = np.sqrt(1.0 / spec.in_dim)
    w = rng.uniform(-bound, bound, size=(spec.in_dim, spec.out_dim))
    return Layer(spec, Tensor(w, requires_grad=True), Tensor(np.zeros(spec.out_dim), requires_grad=True))


class SplitModel:
    """An MLP whose layers ``[0, split_index)`` form the bottom model."""

    def __init__(self, layers, split_index, seed=None):
        specs = [l.spec for l in layers]
        _check_specs(specs)
        if not 0 < split_index < len(layers):
            raise ContractError(f"split_index must lie in (0, {len(layers)}), got {split_index}")
        self.layers = layers
        self.split_index = split_index
        self.seed = seed

    @property
    def specs(self):
        return [l.spec for l in self.layers]

    @property
    def in_dim(self):
        return self.layers[0].spec.in_dim

    @property
    def out_dim(self):
        return self.layers[-1].spec.out_dim

    @property
    def embedding_dim(self):
        return self.layers[self.split_index].spec.in_dim

    @property
    def split_has_norm(self):
        return self.layers[self.split_index - 1].spec.kind == "layer_norm"

    def bottom_params(self):
        return [p for l in self.layers[: self.split_index] for p in l.params()]

    def top_params(self):
        return [p for l in self.layers[self.split_index :] for p in l.params()]

    def params(self):
        return [p for l in self.layers for p in l.params()]

    def run(self, x, start=0, stop=None):
        x = ag.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.layers[start].spec.in_dim:
            raise ShapeError(
                f"input shape {x.shape} does not match layer {start} width {self.layers[start].spec.in_dim}"
            )
        for layer in self.layers[start:stop]:
            x = layer(x)
        return x

    def forward(self, x):
        return self.run(x)

    def forward_bottom(self, x, split_index=None):
        return self.run(x, 0, self.split_index if split_index is None else split_index)

    def forward_top(self, z, split_index=None):
        return self.run(z, self.split_index if split_index is None else split_index)

    def embed(self, x, split_index=None):
        """Bottom-model output as a plain array (no tape)."""
        return self.forward_bottom(Tensor(x), split_index).values

    def predict_logits(self, x):
        return self.forward(Tensor(x)).values

    def state(self):
        return [p.values.copy() for p in self.params()]

    def load_state(self, arrays):
        params = self.params()
        if len(arrays) != len(params):
            raise ContractError("state length does not match parameter count")
        for p, a in zip(params, arrays):
            if p.shape != np.shape(a):
                raise ShapeError(f"state shape {np.shape(a)} != parameter shape {p.shape}")
            p.values = np.array(a, dtype=np.float64, copy=True)
            p.grad = None

    def zero_grad(self):
        for p in self.params():
            p.grad = None

    def clone(self):
        return SplitModel(
            [
                Layer(
                    l.spec,
                    None if l.weight is None else Tensor(l.weight.values.copy(), requires_grad=True),
                    None if l.bias is None else Tensor(l.bias.values.copy(), requires_grad=True),
                )
                for l in self.layers
            ],
            self.split_index,
            self.seed,
        )


def build_mlp(specs, split_index, seed):
    """Initialize a split model: uniform(+-sqrt(1/fan_in)) weights, zero biases."""
    _check_specs(specs)
    rng = np.random.default_rng(seed)
    layers = [init_dense(s, rng) if s.kind == "dense" else Layer(s) for s in specs]
    return SplitModel(layers, split_index, seed)


def build_top(specs, seed):
    """Stand-alone layer stack (used for attacker top models)."""
    _check_specs(specs)
    rng = np.random.default_rng(seed)
    return [init_dense(s, rng) if s.kind == "dense" else Layer(s) for s in specs]


def run_layers(layers, x):
    x = ag.as_tensor(x)
    for layer in layers:
        x = layer(x)
    return x


@dataclass
class AdamState:
    params: list
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros(p.shape) for p in self.params]
            self.v = [np.zeros(p.shape) for p in self.params]

    def hyper(self):
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


def adam_step(state, params=None, grads=None):
    """One bias-corrected Adam update, in place.

    ``grads`` defaults to each parameter's accumulated ``.grad``.
    """
    params = state.params if params is None else params
    if grads is None:
        grads = [p.grad for p in params]
    if any(g is None for g in grads):
        raise ContractError("adam_step called with missing gradients")
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.values = p.values - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# --- checkpoints ----------------------------------------------------------


def save_checkpoint(model, path, meta=None):
    """Write ``SPLTCKPT1``, a JSON header line, then little-endian f64 blocks."""
    header = {
        "architecture": [asdict(s) for s in model.specs],
        "split_index": model.split_index,
        "seed": model.seed,
        "shapes": [list(p.shape) for p in model.params()],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + b"\n")
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in model.params():
            fh.write(np.ascontiguousarray(p.values, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(model, meta)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic = CHECKPOINT_MAGIC + b"\n"
    if not data.startswith(magic):
        raise FramingError("bad checkpoint magic", 0)
    off = len(magic)
    if len(data) < off + 4:
        raise FramingError("truncated checkpoint header length", off)
    (hlen,) = struct.unpack_from("<I", data, off)
    off += 4
    if len(data) < off + hlen:
        raise FramingError("truncated checkpoint header", off)
    header = json.loads(data[off : off + hlen].decode("utf-8"))
    off += hlen
    specs = [LayerSpec(**s) for s in header["architecture"]]
    model = build_mlp(specs, header["split_index"], header["seed"] or 0)
    model.seed = header["seed"]
    arrays = []
    for shape in header["shapes"]:
        n = int(np.prod(shape))
        if len(data) < off + 8 * n:
            raise FramingError("truncated parameter block", off)
        arrays.append(np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64))
        off += 8 * n
    if off != len(data):
        raise FramingError("trailing bytes after parameter blocks", off)
    model.load_state(arrays)
    return model, header["meta"]
