"""Small reverse-mode autodiff over float64 numpy arrays, plus Adam.

Only the operations the GNN needs are provided. Every op records its inputs
and a closure that pushes the output gradient back to them; ``backward``
walks that tape in reverse topological order.
"""
from __future__ import annotations

import json
import zlib
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import CheckpointMismatch, NoForwardRecorded, ShapeMismatch

EPS_BCE = 1e-7
SIGMOID_CLAMP = 30.0


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, data, parents: Sequence["Tensor"] = (), backward_fn=None,
                 requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents = tuple(parents)
        self.backward_fn: Callable[[np.ndarray], None] | None = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape})"

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, seed: np.ndarray | None = None) -> None:
        if self.backward_fn is None:
            raise NoForwardRecorded("tensor was not produced by a recorded operation")
        if seed is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward without a seed needs a scalar output")
            seed = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(seed, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.backward_fn is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --- ops -----------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} x {b.shape}")
    A, B = a.data, b.data
    return Tensor(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def linear(x, w) -> Tensor:
    """``x @ w.T`` with ``w`` stored as (out, in)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"linear {x.shape} with weight {w.shape}")
    X, W = x.data, w.data
    return Tensor(X @ W.T, (x, w), lambda g: (g @ W, g.T @ X))


def spmm(adj: sp.spmatrix, x) -> Tensor:
    """Constant sparse matrix times tensor."""
    x = as_tensor(x)
    if adj.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"spmm {adj.shape} x {x.shape}")
    adj_t = adj.T.tocsr()
    return Tensor(np.asarray(adj @ x.data), (x,), lambda g: (np.asarray(adj_t @ g),))


def add(*terms) -> Tensor:
    ts = [as_tensor(t) for t in terms]
    try:
        out = ts[0].data.copy()
        for t in ts[1:]:
            out = out + t.data
    except ValueError:
        raise ShapeMismatch(f"add {[t.shape for t in ts]}") from None
    shapes = [t.shape for t in ts]
    return Tensor(out, ts, lambda g: tuple(_unbroadcast(g, s) for s in shapes))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    A, B = a.data, b.data
    try:
        out = A * B
    except ValueError:
        raise ShapeMismatch(f"mul {a.shape} x {b.shape}") from None
    return Tensor(out, (a, b), lambda g: (_unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.clip(z, -SIGMOID_CLAMP, SIGMOID_CLAMP)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    inside = np.abs(x.data) < SIGMOID_CLAMP
    return Tensor(s, (x,), lambda g: (g * s * (1.0 - s) * inside,))


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax(x) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 1 or x.data.size < 1:
        raise ShapeMismatch("softmax needs a non-empty vector")
    s = _softmax(x.data)
    return Tensor(s, (x,), lambda g: (s * (g - np.dot(g, s)),))


def weighted_sum(items: Sequence[Tensor], weights) -> Tensor:
    """``sum_k weights[k] * items[k]`` with a differentiable weight vector."""
    weights = as_tensor(weights)
    items = [as_tensor(t) for t in items]
    if weights.shape != (len(items),):
        raise ShapeMismatch(f"{len(items)} items with weights {weights.shape}")
    w = weights.data
    out = sum(w[k] * t.data for k, t in enumerate(items))

    def back(g):
        gw = np.array([np.sum(g * t.data) for t in items])
        return (gw, *[w[k] * g for k in range(len(items))])

    return Tensor(out, (weights, *items), back)


def concat(parts: Sequence, axis: int = 1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise ShapeMismatch(f"concat {[p.shape for p in parts]}") from None
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return Tensor(out, parts, lambda g: tuple(np.split(g, bounds, axis=axis)))


def take_rows(x, idx) -> Tensor:
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    n = x.shape[0]

    def back(g):
        full = np.zeros((n,) + g.shape[1:])
        np.add.at(full, idx, g)
        return (full,)

    return Tensor(x.data[idx], (x,), back)


def bce_loss(p, y) -> Tensor:
    """Mean binary cross-entropy with ``p`` clamped to [eps, 1 - eps]."""
    p = as_tensor(p)
    y = np.asarray(y, dtype=np.float64).reshape(p.shape)
    pc = np.clip(p.data, EPS_BCE, 1.0 - EPS_BCE)
    n = max(p.data.size, 1)
    loss = -np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    inside = (p.data >= EPS_BCE) & (p.data <= 1.0 - EPS_BCE)

    def back(g):
        return (g * inside * (-(y / pc) + (1.0 - y) / (1.0 - pc)) / n,)

    return Tensor(loss, (p,), back)


# --- parameters ----------------------------------------------------------

def splitmix64_uniform(seed: int, n: int) -> np.ndarray:
    """``n`` floats in [0, 1) from a counter-mode splitmix64 stream."""
    with np.errstate(over="ignore"):
        z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + (
            np.arange(1, n + 1, dtype=np.uint64) * np.uint64(0x9E3779B97F4A7C15)
        )
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)


def glorot_uniform(shape: tuple[int, int], seed: int, name: str) -> np.ndarray:
    fan_out, fan_in = shape
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    stream_seed = (seed * 0x100000001B3) ^ zlib.crc32(name.encode())
    u = splitmix64_uniform(stream_seed, fan_out * fan_in)
    return ((2.0 * u - 1.0) * bound).reshape(shape)


class ParamStore:
    """Named parameters with Adam moments and a step counter."""

    def __init__(self) -> None:
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def add(self, name: str, value: np.ndarray) -> Tensor:
        value = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise ValueError(f"parameter {name} has non-finite values")
        t = Tensor(value, requires_grad=True, name=name)
        self.params[name] = t
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)
        return t

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {
            k: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for k, t in self.params.items()
        }

    def values(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for k, arr in values.items():
            if k not in self.params:
                raise KeyError(f"unknown parameter {k}")
            if self.params[k].shape != np.shape(arr):
                raise ShapeMismatch(f"{k}: {self.params[k].shape} vs {np.shape(arr)}")
            self.params[k].data = np.array(arr, dtype=np.float64)

    def num_params(self) -> int:
        return sum(t.data.size for t in self.params.values())


def adam_step(store: ParamStore, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    store.step += 1
    bc1 = 1.0 - beta1 ** store.step
    bc2 = 1.0 - beta2 ** store.step
    for name, p in store.params.items():
        g = p.grad if p.grad is not None else 0.0
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    store.zero_grad()


# --- checkpoints ---------------------------------------------------------

def checkpoint_dict(store: ParamStore, config_hash: str, extra: dict | None = None) -> dict:
    doc = {
        "version": 1,
        "params": {
            k: {"shape": list(t.shape), "data": t.data.ravel().tolist()}
            for k, t in store.params.items()
        },
        "step": store.step,
        "config_hash": config_hash,
    }
    if extra:
        doc.update(extra)
    return doc


def save_checkpoint(store: ParamStore, path, config_hash: str, extra: dict | None = None) -> None:
    Path(path).write_text(
        json.dumps(checkpoint_dict(store, config_hash, extra), sort_keys=True), encoding="utf-8"
    )


def read_checkpoint(path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("version") != 1:
        raise CheckpointMismatch(f"unsupported checkpoint version {doc.get('version')}")
    return doc


def checkpoint_arrays(doc: dict) -> dict[str, np.ndarray]:
    out = {}
    for k, entry in doc["params"].items():
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"checkpoint parameter {k} has non-finite values")
        out[k] = arr
    return out


def numeric_grad(f: Callable[[], float], arr: np.ndarray, h: float = 1e-4,
                 indices: Iterable[tuple] | None = None) -> np.ndarray:
    """Central finite differences of scalar ``f`` w.r.t. ``arr`` (mutated in place)."""
    g = np.zeros_like(arr)
    for idx in (np.ndindex(arr.shape) if indices is None else indices):
        old = arr[idx]
        arr[idx] = old + h
        hi = f()
        arr[idx] = old - h
        lo = f()
        arr[idx] = old
        g[idx] = (hi - lo) / (2 * h)
    return g
