import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from stancegraph import nn
from stancegraph.errors import NoForwardRecorded, ShapeMismatch


def leaf(arr):
    return nn.Tensor(np.array(arr, dtype=float), requires_grad=True)


def test_matmul_examples():
    a = np.arange(12.0).reshape(3, 4)
    assert np.array_equal(nn.matmul(np.eye(3), a).data, a)
    assert nn.matmul([[2.0]], [[3.0]]).data.tolist() == [[6.0]]
    with pytest.raises(ShapeMismatch):
        nn.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
    ref = np.zeros((4, 3))
    for i in range(4):
        for j in range(3):
            for k in range(5):
                ref[i, j] += a[i, k] * b[k, j]
    assert np.max(np.abs(nn.matmul(a, b).data - ref)) < 1e-12


def test_activations():
    assert nn.sigmoid([0.0]).data.tolist() == [0.5]
    assert nn.relu([-1.0, 2.0]).data.tolist() == [0.0, 2.0]
    assert np.allclose(nn.softmax(np.zeros(5)).data, 0.2, atol=0, rtol=0)
    big = nn.sigmoid([-1000.0, 1000.0]).data
    assert np.all(np.isfinite(big)) and 0 < big[0] < 1e-12 and 1 - big[1] < 1e-12
    s = nn.softmax([1000.0, 0.0, -1000.0]).data
    assert abs(s.sum() - 1) < 1e-12


def test_bce_examples():
    assert float(nn.bce_loss([1 - 1e-7], [1]).data) < 1e-6
    assert abs(float(nn.bce_loss([0.5], [1]).data) - np.log(2)) < 1e-12
    rng = np.random.default_rng(1)
    p = rng.uniform(0.01, 0.99, 50)
    y = rng.integers(0, 2, 50)
    ref = np.mean([-(yi * np.log(pi) + (1 - yi) * np.log(1 - pi)) for pi, yi in zip(p, y)])
    assert abs(float(nn.bce_loss(p, y).data) - ref) < 1e-12
    assert np.isfinite(float(nn.bce_loss([0.0, 1.0], [1, 0]).data))


def test_backward_basics():
    x = leaf([0.0])
    nn.sigmoid(x).backward()
    assert abs(x.grad[0] - 0.25) < 1e-15
    with pytest.raises(NoForwardRecorded):
        leaf([1.0]).backward()
    with pytest.raises(ShapeMismatch):
        nn.relu(leaf([1.0, 2.0])).backward()


def test_unused_parameter_gets_zero_gradient():
    store = nn.ParamStore()
    w = store.add("w", np.ones(3))
    store.add("unused", np.ones(2))
    nn.bce_loss(nn.sigmoid(w), [1, 0, 1]).backward()
    assert np.all(store.grads()["unused"] == 0)
    assert np.any(store.grads()["w"] != 0)


def _check(f, arrays, tol=1e-6):
    leaves = [leaf(a) for a in arrays]
    out = f(*leaves)
    out.backward()
    for t in leaves:
        num = nn.numeric_grad(lambda: float(f(*[nn.Tensor(l.data) for l in leaves]).data), t.data, 1e-6)
        assert np.max(np.abs(num - t.grad)) < tol


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_composite_ops_gradcheck(seed):
    rng = np.random.default_rng(seed)
    adj = sp.random(5, 5, density=0.4, random_state=seed, format="csr")
    x, w, b = rng.normal(size=(5, 3)), rng.normal(size=(4, 3)), rng.normal(size=4)
    logits = rng.normal(size=3)
    y = rng.integers(0, 2, size=(5, 1))

    def f(x, w, b, logits):
        h = nn.relu(nn.add(nn.linear(nn.spmm(adj, x), w), b))
        parts = [h, nn.mul(h, h), nn.sigmoid(h)]
        mixed = nn.weighted_sum(parts, nn.softmax(logits))
        z = nn.concat([mixed, nn.take_rows(mixed, [4, 3, 2, 1, 0])], axis=1)
        out = nn.matmul(z, np.ones((8, 1)) / 8)
        return nn.bce_loss(nn.sigmoid(out), y)

    _check(f, [x, w, b, logits])


def test_adam_examples():
    store = nn.ParamStore()
    w = store.add("w", np.array([1.0, -2.0, 3.0]))
    w.grad = np.zeros(3)
    nn.adam_step(store, lr=0.1)
    assert np.array_equal(w.data, [1.0, -2.0, 3.0])
    assert store.step == 1

    store = nn.ParamStore()
    w = store.add("w", np.array([1.0, 1.0]))
    w.grad = np.array([5.0, -0.3])
    nn.adam_step(store, lr=0.01)
    assert np.allclose(w.data, [0.99, 1.01], atol=1e-8)
    assert w.grad is None

    store = nn.ParamStore()
    w = store.add("w", np.array([1.0]))
    for _ in range(100):
        loss = nn.mul(w, w)
        loss.backward()
        nn.adam_step(store, lr=0.05)
    assert abs(w.data[0]) < 0.1


def test_glorot_is_deterministic_and_bounded():
    a = nn.glorot_uniform((8, 5), 3, "layer0.self")
    b = nn.glorot_uniform((8, 5), 3, "layer0.self")
    c = nn.glorot_uniform((8, 5), 3, "layer1.self")
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    assert np.max(np.abs(a)) <= np.sqrt(6 / 13)
    u = nn.splitmix64_uniform(42, 10_000)
    assert 0 <= u.min() and u.max() < 1 and abs(u.mean() - 0.5) < 0.02


def test_checkpoint_round_trip(tmp_path):
    store = nn.ParamStore()
    store.add("a", np.arange(6.0).reshape(2, 3) / 7)
    store.add("b", np.array([np.pi]))
    nn.save_checkpoint(store, tmp_path / "c.json", "abc", {"note": 1})
    doc = nn.read_checkpoint(tmp_path / "c.json")
    assert doc["config_hash"] == "abc" and doc["note"] == 1
    back = nn.checkpoint_arrays(doc)
    for k, t in store.params.items():
        assert np.array_equal(back[k], t.data)
