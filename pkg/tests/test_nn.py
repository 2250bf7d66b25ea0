import numpy as np
import pytest

from splitlab import autograd as ag
from splitlab.autograd import Tape, Tensor
from splitlab.datakit import gaussian_blobs
from splitlab.errors import ContractError, FramingError, ShapeError
from splitlab.nn import (
    AdamState,
    LayerSpec,
    adam_step,
    build_mlp,
    load_checkpoint,
    mlp_specs,
    save_checkpoint,
)


def test_mlp_specs_split_at_last_dense():
    specs, split = mlp_specs([8, 6, 5, 3], "leaky_relu")
    assert [s.kind for s in specs] == ["dense", "activation", "dense", "activation", "dense"]
    assert split == 4
    model = build_mlp(specs, split, 0)
    top = model.specs[split:]
    assert len(top) == 1 and top[0].kind == "dense"


def test_mlp_specs_norm_at_split():
    specs, split = mlp_specs([8, 6, 5, 3], "tanh", split_norm=True)
    assert specs[split - 1].kind == "layer_norm"
    assert specs[split].kind == "dense"
    assert build_mlp(specs, split, 0).split_has_norm


def test_same_seed_bit_identical():
    specs, split = mlp_specs([5, 7, 3])
    a, b = build_mlp(specs, split, 11), build_mlp(specs, split, 11)
    assert all(np.array_equal(x, y) for x, y in zip(a.state(), b.state()))
    c = build_mlp(specs, split, 12)
    assert not np.array_equal(a.state()[0], c.state()[0])


def test_init_scale():
    model = build_mlp([LayerSpec.dense(100, 50), LayerSpec.act(50), LayerSpec.dense(50, 2)], 2, 0)
    w = model.layers[0].weight.values
    assert abs(w.std() - np.sqrt(1 / 300)) < 0.2 * np.sqrt(1 / 300)
    assert np.all(np.abs(w) <= 0.1)
    assert np.all(model.layers[0].bias.values == 0)


@pytest.mark.parametrize("split", [0, 5, -1])
def test_invalid_split(split):
    specs, _ = mlp_specs([4, 3, 2])
    with pytest.raises(ContractError):
        build_mlp(specs, split, 0)


def test_dims_must_chain():
    with pytest.raises(ShapeError):
        build_mlp([LayerSpec.dense(3, 4), LayerSpec.dense(5, 2)], 1, 0)


def test_split_composition_exact():
    rng = np.random.default_rng(0)
    for seed in range(5):
        specs, split = mlp_specs([6, 9, 7, 4], "leaky_relu", split_norm=bool(seed % 2))
        model = build_mlp(specs, split, seed)
        x = rng.standard_normal((13, 6))
        whole = model.forward(Tensor(x)).values
        parts = model.forward_top(model.forward_bottom(Tensor(x))).values
        assert np.array_equal(whole, parts)


def test_empty_batch():
    specs, split = mlp_specs([4, 5, 3])
    model = build_mlp(specs, split, 0)
    assert model.forward_bottom(Tensor(np.zeros((0, 4)))).shape == (0, 5)
    assert model.forward(Tensor(np.zeros((0, 4)))).shape == (0, 3)


def test_input_width_mismatch():
    specs, split = mlp_specs([4, 5, 3])
    with pytest.raises(ShapeError):
        build_mlp(specs, split, 0).forward(Tensor(np.zeros((2, 5))))


def test_norm_at_split_sphere():
    specs, split = mlp_specs([10, 16, 8, 3], split_norm=True)
    model = build_mlp(specs, split, 1)
    z = model.embed(np.random.default_rng(1).standard_normal((50, 10)))
    assert np.all(np.abs((z ** 2).sum(axis=1) - 8) < 1e-9)


def test_adam_first_step():
    p = Tensor([0.0], requires_grad=True)
    p.grad = np.array([1.0])
    adam_step(AdamState([p]))
    assert abs(p.values[0] - (-9.99999990e-4)) < 1e-15


def test_adam_zero_grad():
    p = Tensor([0.3, -2.0], requires_grad=True)
    st = AdamState([p])
    adam_step(st, grads=[np.zeros(2)])
    assert p.values.tolist() == [0.3, -2.0] and st.t == 1


def test_adam_missing_grad():
    with pytest.raises(ContractError):
        adam_step(AdamState([Tensor([1.0], requires_grad=True)]))


def test_adam_quadratic_descent():
    w = Tensor([1.0], requires_grad=True)
    st = AdamState([w], lr=0.01)
    trace = []
    for _ in range(100):
        with Tape() as tape:
            f = (w * w).sum()
        tape.backward(f)
        adam_step(st)
        w.grad = None
        trace.append(abs(w.values[0]))
    assert all(b < a for a, b in zip(trace[5:], trace[6:]))


def test_training_sanity_separable():
    data = gaussian_blobs(2, 4, 100, center_scale=4.0, noise=0.5, seed=0)
    specs, split = mlp_specs([4, 8, 2])
    model = build_mlp(specs, split, 0)
    st = AdamState(model.params(), lr=1e-2)
    x, y = data.train
    for _ in range(200):
        with Tape() as tape:
            loss = ag.softmax_cross_entropy(model.forward(Tensor(x)), y)
        tape.backward(loss)
        adam_step(st)
        model.zero_grad()
    assert loss.item() < 0.1


def test_checkpoint_roundtrip(tmp_path):
    specs, split = mlp_specs([5, 6, 4, 3], split_norm=True)
    model = build_mlp(specs, split, 42)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path, {"defense": "pe", "alpha": 4.0})
    loaded, meta = load_checkpoint(path)
    assert meta == {"defense": "pe", "alpha": 4.0}
    assert loaded.specs == model.specs and loaded.split_index == split and loaded.seed == 42
    assert all(np.array_equal(a, b) for a, b in zip(model.state(), loaded.state()))
    assert path.read_bytes().startswith(b"SPLTCKPT1")


def test_checkpoint_truncated(tmp_path):
    specs, split = mlp_specs([5, 6, 3])
    path = tmp_path / "m.ckpt"
    save_checkpoint(build_mlp(specs, split, 0), path)
    blob = path.read_bytes()
    (tmp_path / "t.ckpt").write_bytes(blob[:-8])
    with pytest.raises(FramingError, match="offset"):
        load_checkpoint(tmp_path / "t.ckpt")
    (tmp_path / "bad.ckpt").write_bytes(b"NOTACKPT" + blob[8:])
    with pytest.raises(FramingError):
        load_checkpoint(tmp_path / "bad.ckpt")


def test_clone_independent():
    specs, split = mlp_specs([3, 4, 2])
    m = build_mlp(specs, split, 0)
    c = m.clone()
    c.params()[0].values += 1.0
    assert not np.array_equal(m.state()[0], c.state()[0])
