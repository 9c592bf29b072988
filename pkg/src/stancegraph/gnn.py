"""Stance-aware GNN: per-path relational message passing, attention over the
five path embeddings, and a sigmoid MLP link scorer for (user, post) pairs."""
from __future__ import annotations

import hashlib
import json
import math
import re
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from . import nn
from .errors import ShapeMismatch, UnknownNode
from .graph import (
    INTERACTION_KINDS,
    SYMMETRIC_KINDS,
    EdgeKind,
    HeteroGraph,
    NodeKind,
    Stance,
)
from .paths import DERIVED_KINDS, PATH_ORDER, PathGraphs, PathKind

_TOKEN = re.compile(r"\w+")


@dataclass
class FeatureEncoder:
    """Fixed-width node features.

    Layout: ``[hashed bag of words (d_hash) | log1p(post_count),
    log1p(account_age_days), verified | is_misinfo, scaled created_ts]``.
    Users leave the post slots at zero and vice versa. The two log counts
    are divided by their largest value in the fitting graph so every
    column stays near unit scale.
    """

    d_hash: int = 256
    ts_origin: int = 0
    ts_scale: int = 1
    count_scale: float = 1.0
    age_scale: float = 1.0

    @classmethod
    def fit(cls, g: HeteroGraph, d_hash: int = 256) -> "FeatureEncoder":
        recs = list(g.nodes.values())
        ts = [r.attrs.created_ts for r in recs if r.kind is NodeKind.POST]
        counts = [math.log1p(r.attrs.post_count) for r in recs if r.kind is NodeKind.USER]
        ages = [math.log1p(r.attrs.account_age_days) for r in recs if r.kind is NodeKind.USER]
        lo, hi = (min(ts), max(ts)) if ts else (0, 1)
        return cls(d_hash, lo, max(hi - lo, 1), max(counts + [1.0]), max(ages + [1.0]))

    @property
    def width(self) -> int:
        return self.d_hash + 5

    def bag_of_words(self, text: str) -> np.ndarray:
        vec = np.zeros(self.d_hash)
        toks = _TOKEN.findall(text.lower())
        for tok in toks:
            vec[zlib.crc32(tok.encode()) % self.d_hash] += 1.0
        if toks:
            vec /= len(toks)
        return vec

    def encode(self, rec) -> np.ndarray:
        out = np.zeros(self.width)
        a = rec.attrs
        if rec.kind is NodeKind.USER:
            out[: self.d_hash] = self.bag_of_words(a.description)
            out[self.d_hash] = math.log1p(a.post_count) / self.count_scale
            out[self.d_hash + 1] = math.log1p(a.account_age_days) / self.age_scale
            out[self.d_hash + 2] = float(a.verified)
        else:
            out[: self.d_hash] = self.bag_of_words(a.text)
            out[self.d_hash + 3] = float(a.is_misinfo)
            out[self.d_hash + 4] = (a.created_ts - self.ts_origin) / self.ts_scale
        return out

    def matrix(self, g: HeteroGraph, ids: list[str]) -> np.ndarray:
        if not ids:
            return np.zeros((0, self.width))
        return np.stack([self.encode(g.nodes[n]) for n in ids])


def relation_names(stance_typed: bool = False) -> list[str]:
    names = []
    for kind in EdgeKind:
        if kind in SYMMETRIC_KINDS:
            names.append(kind.value)
            continue
        variants = [kind.value]
        if stance_typed and kind in INTERACTION_KINDS:
            variants = [f"{kind.value}.{s.value}" for s in Stance] + [f"{kind.value}.none"]
        for v in variants:
            names += [f"{v}:out", f"{v}:in"]
    return names


def _mean_adjacency(rows, cols, n: int) -> sp.csr_matrix:
    """Row-normalised adjacency over de-duplicated (row, col) pairs."""
    if len(rows) == 0:
        return sp.csr_matrix((n, n))
    pairs = np.unique(np.stack([np.asarray(rows), np.asarray(cols)], axis=1), axis=0)
    a = sp.csr_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return (sp.diags(inv) @ a).tocsr()


@dataclass
class ModelConfig:
    d_hash: int = 256
    d_emb: int = 64
    n_layers: int = 2
    hidden: int = 64
    enabled_paths: tuple[str, ...] = tuple(k.value for k in PATH_ORDER)
    stance_typed_relations: bool = False
    seed: int = 0


class StanceGnnModel:
    def __init__(self, encoder: FeatureEncoder, config: ModelConfig = ModelConfig()):
        if encoder.d_hash != config.d_hash:
            raise ShapeMismatch("encoder and model disagree on d_hash")
        self.encoder = encoder
        self.config = config
        self.enabled_paths = tuple(k for k in PATH_ORDER if k.value in config.enabled_paths)
        if PathKind.MAIN not in self.enabled_paths:
            raise ValueError("the main path must stay enabled")
        self.relations = relation_names(config.stance_typed_relations)
        self.store = nn.ParamStore()
        s = self.store
        for layer in range(config.n_layers):
            d_in = encoder.width if layer == 0 else config.d_emb
            shape = (config.d_emb, d_in)
            s.add(f"layer{layer}.self", nn.glorot_uniform(shape, config.seed, f"layer{layer}.self"))
            for r in self.relations + [f"path.{k.value}" for k in DERIVED_KINDS]:
                name = f"layer{layer}.rel.{r}"
                s.add(name, nn.glorot_uniform(shape, config.seed, name))
            s.add(f"layer{layer}.bias", np.zeros(config.d_emb))
        s.add("attention.logits", np.zeros(len(PATH_ORDER)))
        s.add("mlp.w1", nn.glorot_uniform((config.hidden, 2 * config.d_emb), config.seed, "mlp.w1"))
        s.add("mlp.b1", np.zeros(config.hidden))
        s.add("mlp.w2", nn.glorot_uniform((1, config.hidden), config.seed, "mlp.w2"))
        s.add("mlp.b2", np.zeros(1))

    def describe(self) -> dict:
        return {"encoder": asdict(self.encoder), "model": asdict(self.config)}

    def config_hash(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def attention_logits(self) -> np.ndarray:
        return self.store["attention.logits"].data.copy()


def attention_weights(model: StanceGnnModel) -> list[float]:
    """Softmax of all five logits, ordered main, fsp, fop, esp, eop."""
    return [float(w) for w in nn._softmax(model.store["attention.logits"].data)]


@dataclass
class PreparedGraph:
    """Everything a forward pass needs from one snapshot, index-aligned."""

    ids: list[str]
    index: dict[str, int]
    x: np.ndarray
    base: dict[str, sp.csr_matrix]
    derived: dict[PathKind, sp.csr_matrix]
    layer0_inputs: np.ndarray = field(repr=False, default=None)
    layer0_rels: list[str] = field(default_factory=list)
    derived_x: dict[PathKind, np.ndarray] = field(repr=False, default_factory=dict)

    def rows(self, node_ids) -> np.ndarray:
        try:
            return np.array([self.index[n] for n in node_ids], dtype=np.int64)
        except KeyError as exc:
            raise UnknownNode(f"unknown node {exc.args[0]!r}") from None


def prepare(g: HeteroGraph, pg: PathGraphs, model: StanceGnnModel) -> PreparedGraph:
    ids = sorted(g.nodes)
    index = {n: i for i, n in enumerate(ids)}
    n = len(ids)
    stance_typed = model.config.stance_typed_relations
    coo: dict[str, tuple[list[int], list[int]]] = {r: ([], []) for r in model.relations}
    for e in pg.main:
        s, d = index[e.src], index[e.dst]
        if e.kind in SYMMETRIC_KINDS:
            rows, cols = coo[e.kind.value]
            rows += [s, d]
            cols += [d, s]
            continue
        name = e.kind.value
        if stance_typed and e.kind in INTERACTION_KINDS:
            name = f"{name}.{e.stance.value if e.stance else 'none'}"
        coo[f"{name}:out"][0].append(s)
        coo[f"{name}:out"][1].append(d)
        coo[f"{name}:in"][0].append(d)
        coo[f"{name}:in"][1].append(s)
    base = {r: _mean_adjacency(rows, cols, n) for r, (rows, cols) in coo.items()}
    derived = {}
    for kind in DERIVED_KINDS:
        rows, cols = [], []
        for d_edge in pg.derived.get(kind, ()):
            u, p = index[d_edge.user], index[d_edge.post]
            rows += [u, p]
            cols += [p, u]
        derived[kind] = _mean_adjacency(rows, cols, n)
    x = model.encoder.matrix(g, ids)
    used = [r for r in model.relations if base[r].nnz]
    layer0 = np.hstack([x] + [base[r] @ x for r in used])
    derived_x = {k: derived[k] @ x for k in DERIVED_KINDS if derived[k].nnz}
    return PreparedGraph(ids, index, x, base, derived, layer0, used, derived_x)


def message_pass_layer(
    view: dict[str, sp.csr_matrix],
    h: nn.Tensor,
    params: dict[str, nn.Tensor],
) -> nn.Tensor:
    """One relational layer: ReLU(W_self h + sum_r W_r mean_r(h) + b).

    ``view`` maps relation name -> row-normalised adjacency; ``params`` holds
    ``self``, ``bias`` and one weight per relation in ``view``.
    """
    h = nn.as_tensor(h)
    if h.shape[1] != params["self"].shape[1]:
        raise ShapeMismatch(f"layer input width {h.shape[1]} vs weight {params['self'].shape}")
    names = [r for r in view if view[r].nnz]
    inputs = [h] + [nn.spmm(view[r], h) for r in names]
    weights = [params["self"]] + [params[r] for r in names]
    pre = nn.linear(nn.concat(inputs, axis=1), nn.concat(weights, axis=1))
    return nn.relu(nn.add(pre, params["bias"]))


def _layer_params(model: StanceGnnModel, layer: int, rels) -> dict[str, nn.Tensor]:
    s = model.store
    out = {"self": s[f"layer{layer}.self"], "bias": s[f"layer{layer}.bias"]}
    for r in rels:
        out[r] = s[f"layer{layer}.rel.{r}"]
    return out


def encode_paths(prep: PreparedGraph, model: StanceGnnModel) -> dict[PathKind, nn.Tensor]:
    """Node embeddings per enabled path view.

    The derived-path views add that path's edges as one extra bidirectional
    relation on top of the main relations. Views without derived edges are
    identical to the main view and share its tensors.
    """
    s = model.store
    rels = model.relations
    # layer 0 inputs are constant, so neighbour means are precomputed
    w0 = nn.concat([s["layer0.self"]] + [s[f"layer0.rel.{r}"] for r in prep.layer0_rels], axis=1)
    shared = nn.add(nn.linear(prep.layer0_inputs, w0), s["layer0.bias"])
    main_h = nn.relu(shared)
    out: dict[PathKind, nn.Tensor] = {}
    hs: dict[PathKind, nn.Tensor] = {}
    for kind in model.enabled_paths:
        if kind is PathKind.MAIN or not prep.derived[kind].nnz:
            hs[kind] = main_h
        else:
            extra = nn.linear(prep.derived_x[kind], s[f"layer0.rel.path.{kind.value}"])
            hs[kind] = nn.relu(nn.add(shared, extra))
    for layer in range(1, model.config.n_layers):
        main_view = {r: prep.base[r] for r in rels}
        main_next = message_pass_layer(main_view, hs[PathKind.MAIN], _layer_params(model, layer, rels))
        nxt = {}
        for kind in model.enabled_paths:
            if kind is PathKind.MAIN or not prep.derived[kind].nnz:
                nxt[kind] = main_next
                continue
            key = f"path.{kind.value}"
            view = dict(main_view)
            view[key] = prep.derived[kind]
            nxt[kind] = message_pass_layer(view, hs[kind], _layer_params(model, layer, rels + [key]))
        hs = nxt
    for kind in model.enabled_paths:
        out[kind] = hs[kind]
    return out


def _enabled_weights(model: StanceGnnModel) -> nn.Tensor:
    logits = model.store["attention.logits"]
    idx = [PATH_ORDER.index(k) for k in model.enabled_paths]
    if len(idx) == len(PATH_ORDER):
        return nn.softmax(logits)
    return nn.softmax(nn.take_rows(logits, idx))


def aggregate_all(pe: dict[PathKind, nn.Tensor], model: StanceGnnModel) -> nn.Tensor:
    """Attention-weighted sum of the path embeddings for every node."""
    kinds = [k for k in model.enabled_paths]
    if len(kinds) == 1:
        return pe[kinds[0]]
    return nn.weighted_sum([pe[k] for k in kinds], _enabled_weights(model))


def attention_aggregate(pe: dict[PathKind, nn.Tensor], model: StanceGnnModel,
                        prep: PreparedGraph, node: str) -> np.ndarray:
    row = prep.rows([node])[0]
    w = _enabled_weights(model).data if len(model.enabled_paths) > 1 else np.ones(1)
    return sum(w[i] * pe[k].data[row] for i, k in enumerate(model.enabled_paths))


def predict_link(h_user, h_post, model: StanceGnnModel) -> nn.Tensor:
    """Sigmoid(MLP([h_user ; h_post])) for row-aligned batches of embeddings."""
    h_user, h_post = nn.as_tensor(h_user), nn.as_tensor(h_post)
    if h_user.data.ndim == 1:
        h_user, h_post = nn.Tensor(h_user.data[None, :]), nn.Tensor(h_post.data[None, :])
    s = model.store
    z = nn.concat([h_user, h_post], axis=1)
    if z.shape[1] != s["mlp.w1"].shape[1]:
        raise ShapeMismatch(f"classifier expects width {s['mlp.w1'].shape[1]}, got {z.shape[1]}")
    hidden = nn.relu(nn.add(nn.linear(z, s["mlp.w1"]), s["mlp.b1"]))
    logit = nn.add(nn.linear(hidden, s["mlp.w2"]), s["mlp.b2"])
    return nn.sigmoid(logit)


def forward_batch(prep: PreparedGraph, model: StanceGnnModel,
                  pairs: list[tuple[str, str]],
                  pe: dict[PathKind, nn.Tensor] | None = None) -> nn.Tensor:
    """Probabilities, shape (len(pairs), 1), with the full tape recorded."""
    if not pairs:
        return nn.Tensor(np.zeros((0, 1)))
    u_rows = prep.rows([u for u, _ in pairs])
    p_rows = prep.rows([p for _, p in pairs])
    if pe is None:
        pe = encode_paths(prep, model)
    h = aggregate_all(pe, model)
    return predict_link(nn.take_rows(h, u_rows), nn.take_rows(h, p_rows), model)


def predict(prep: PreparedGraph, model: StanceGnnModel,
            pairs: list[tuple[str, str]]) -> np.ndarray:
    return forward_batch(prep, model, pairs).data.ravel()
