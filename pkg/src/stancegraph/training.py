"""Temporal splitting, example construction, the training loop, and AUC."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path

import numpy as np

from . import nn
from .errors import ConfigInvalid, DegenerateTimestamps, NotEnoughNegatives, SingleClass, TooFewEdges
from .gnn import (
    FeatureEncoder,
    ModelConfig,
    PreparedGraph,
    StanceGnnModel,
    attention_weights,
    forward_batch,
    predict,
    prepare,
)
from .graph import INTERACTION_KINDS, EdgeKind, HeteroGraph, snapshot_before
from .paths import PATH_ORDER, PathOptions, materialize

log = logging.getLogger(__name__)


class Window(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


@dataclass(frozen=True)
class SplitSpec:
    """Window boundaries. Each window is the half-open span (start, end].

    ``t_train_start`` is the time-t snapshot the model trains on; training
    labels are the links that emerge after it, up to ``t_train_end``.
    """

    t_train_start: int
    t_train_end: int
    t_val_end: int
    t_test_end: int

    def bounds(self, window: Window | str) -> tuple[int, int]:
        window = Window(window)
        if window is Window.TRAIN:
            return self.t_train_start, self.t_train_end
        if window is Window.VAL:
            return self.t_train_end, self.t_val_end
        return self.t_val_end, self.t_test_end


def _quantile_ts(ts: list[int], frac: float) -> int:
    """Timestamp of the edge closing the first ``frac`` of the sorted list."""
    i = max(math.ceil(len(ts) * frac) - 1, 0)
    return ts[i]


def temporal_split(
    g: HeteroGraph,
    ratios: tuple[float, float, float] = (8, 1, 1),
    context_ts: int | None = None,
    context_frac: float = 0.5,
) -> SplitSpec:
    """Boundaries at the 80th/90th percentile interaction timestamps (by count).

    Ties at a boundary stay in the earlier window. ``context_ts`` fixes the
    training snapshot time, and the quantiles are then taken over the edges
    after it; otherwise the snapshot is the ``context_frac`` quantile of the
    edges inside the training window.
    """
    ts = sorted(e.ts for e in g.edges if e.kind in INTERACTION_KINDS)
    if context_ts is not None:
        ts = [t for t in ts if t > context_ts]
    if len(ts) < 10:
        raise TooFewEdges(f"need at least 10 timestamped interaction edges, have {len(ts)}")
    total = float(sum(ratios))
    t_train = _quantile_ts(ts, ratios[0] / total)
    t_val = _quantile_ts(ts, (ratios[0] + ratios[1]) / total)
    t_test = ts[-1]
    if not (t_train < t_val < t_test):
        raise DegenerateTimestamps(
            f"window boundaries collapse: train {t_train}, val {t_val}, test {t_test}"
        )
    if context_ts is None:
        t_ctx = _quantile_ts([t for t in ts if t <= t_train], context_frac)
    else:
        t_ctx = int(context_ts)
    if t_ctx >= t_train:
        raise DegenerateTimestamps(f"training snapshot time {t_ctx} is not before {t_train}")
    return SplitSpec(t_ctx, t_train, t_val, t_test)


@dataclass(frozen=True)
class Example:
    user: str
    post: str
    label: int
    window: Window


def first_propagation(g: HeteroGraph, count_mentions: bool = False) -> dict[tuple[str, str], int]:
    """Earliest propagation timestamp per (user, misinformation post)."""
    first: dict[tuple[str, str], int] = {}

    def note(u, p, t):
        if t is not None and (first.get((u, p)) is None or t < first[(u, p)]):
            first[(u, p)] = t

    misinfo = set(g.posts(misinfo_only=True))
    for e in g.edges:
        if e.kind in INTERACTION_KINDS and e.dst in misinfo:
            note(e.src, e.dst, e.ts)
    if count_mentions:
        for e in g.edges:
            if e.kind is not EdgeKind.MENTIONS or e.ts is None:
                continue
            for authored in g.out_edges(e.dst, EdgeKind.POSTS):
                if authored.dst in misinfo and authored.ts <= e.ts:
                    note(e.src, authored.dst, e.ts)
    return first


_WINDOW_CODE = {Window.TRAIN: 0, Window.VAL: 1, Window.TEST: 2}
_ENUMERATE_LIMIT = 4_000_000


def build_examples(
    g: HeteroGraph,
    spec: SplitSpec,
    window: Window | str,
    neg_ratio: int = 1,
    rng_seed: int = 0,
    count_mentions: bool = False,
) -> list[Example]:
    """Positives: first propagation inside the window. Negatives: uniform over
    (user, misinfo post) pairs with no propagation at or before the window end."""
    window = Window(window)
    start, end = spec.bounds(window)
    first = first_propagation(g, count_mentions)
    users = g.users()
    posts = g.posts(misinfo_only=True)
    positives = sorted(pair for pair, t in first.items() if start < t <= end)
    if not positives:
        return []
    need = neg_ratio * len(positives)
    rng = np.random.default_rng([rng_seed, _WINDOW_CODE[window]])
    u_index = {u: i for i, u in enumerate(users)}
    p_index = {p: i for i, p in enumerate(posts)}
    n_posts = len(posts)
    taken = {u_index[u] * n_posts + p_index[p] for (u, p), t in first.items() if t <= end}
    total = len(users) * n_posts
    if total - len(taken) < need:
        raise NotEnoughNegatives(f"need {need} negatives, only {total - len(taken)} available")
    if total <= _ENUMERATE_LIMIT:
        mask = np.ones(total, dtype=bool)
        if taken:
            mask[np.fromiter(taken, dtype=np.int64)] = False
        chosen = rng.choice(np.flatnonzero(mask), size=need, replace=False)
    else:
        picked: list[int] = []
        seen = set(taken)
        while len(picked) < need:
            for c in rng.integers(0, total, size=2 * (need - len(picked))):
                c = int(c)
                if c not in seen:
                    seen.add(c)
                    picked.append(c)
                    if len(picked) == need:
                        break
        chosen = np.array(picked, dtype=np.int64)
    examples = [Example(u, p, 1, window) for u, p in positives]
    examples += [
        Example(users[int(c) // n_posts], posts[int(c) % n_posts], 0, window) for c in chosen
    ]
    order = rng.permutation(len(examples))
    return [examples[i] for i in order]


def compute_auc(scores, labels) -> float:
    """Mann-Whitney AUC with mid-ranks for ties."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both positive and negative labels")
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    ranks = np.empty(len(s))
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class TrainConfig:
    seed: int = 0
    lr: float = 1e-3
    epochs: int = 100
    patience: int = 10
    neg_ratio: int = 1
    batch_size: int = 128
    d_emb: int = 64
    n_layers: int = 2
    hidden: int = 64
    d_hash: int = 256
    enabled_paths: tuple[str, ...] = tuple(k.value for k in PATH_ORDER)
    bare_reshare_stance: str = "support"
    stance_typed_relations: bool = False
    count_mentions: bool = False
    paths_all_posts: bool = False
    co_engage_window_secs: int | None = None
    context_ts: int | None = None
    context_frac: float = 0.5

    def __post_init__(self):
        self.enabled_paths = tuple(self.enabled_paths)
        if not isinstance(self.neg_ratio, int) or self.neg_ratio < 1:
            raise ConfigInvalid("neg_ratio must be an integer >= 1")
        if not isinstance(self.epochs, int) or self.epochs < 1:
            raise ConfigInvalid("epochs must be an integer >= 1")
        if self.batch_size < 1 or self.patience < 1:
            raise ConfigInvalid("batch_size and patience must be >= 1")
        valid = {k.value for k in PATH_ORDER}
        if "main" not in self.enabled_paths or set(self.enabled_paths) - valid:
            raise ConfigInvalid(f"enabled_paths must include main and be drawn from {sorted(valid)}")
        if self.bare_reshare_stance not in ("support", "neutral"):
            raise ConfigInvalid("bare_reshare_stance must be support or neutral")
        if not 0.0 < self.context_frac < 1.0:
            raise ConfigInvalid("context_frac must lie in (0, 1)")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(raw) - names
        if unknown:
            raise ConfigInvalid(f"unknown training config keys {sorted(unknown)}")
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigInvalid(str(exc)) from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["enabled_paths"] = list(self.enabled_paths)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            d_hash=self.d_hash, d_emb=self.d_emb, n_layers=self.n_layers, hidden=self.hidden,
            enabled_paths=tuple(self.enabled_paths),
            stance_typed_relations=self.stance_typed_relations, seed=self.seed,
        )

    def path_options(self) -> PathOptions:
        return PathOptions(self.paths_all_posts, self.co_engage_window_secs)


@dataclass
class MetricsReport:
    auc: dict[str, float | None]
    loss_curve: list[float]
    val_auc_curve: list[float | None]
    attention_trajectory: list[list[float]]
    initial_attention: list[float]
    final_attention: list[float]
    best_epoch: int
    config_hash: str
    model_hash: str
    seed: int
    enabled_paths: list[str]
    split: dict[str, int]
    n_examples: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class WindowData:
    window: Window
    snapshot: HeteroGraph
    prep: PreparedGraph
    examples: list[Example]

    @property
    def pairs(self) -> list[tuple[str, str]]:
        return [(e.user, e.post) for e in self.examples]

    @property
    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.examples], dtype=np.float64)


def window_data(g: HeteroGraph, spec: SplitSpec, window: Window | str,
                model: StanceGnnModel, config: TrainConfig) -> WindowData:
    """Examples for ``window`` plus the prepared snapshot at the window start."""
    window = Window(window)
    start, _ = spec.bounds(window)
    snap = snapshot_before(g, start)
    pg = materialize(snap, config.path_options())
    examples = build_examples(g, spec, window, config.neg_ratio, config.seed, config.count_mentions)
    return WindowData(window, snap, prepare(snap, pg, model), examples)


def score_auc(model: StanceGnnModel, data: WindowData) -> float | None:
    labels = data.labels
    if len(labels) == 0 or labels.min() == labels.max():
        return None
    return compute_auc(predict(data.prep, model, data.pairs), labels)


def _clean(x: float | None) -> float | None:
    return None if x is None else float(x)


def train(g: HeteroGraph, config: TrainConfig, spec: SplitSpec | None = None
          ) -> tuple[StanceGnnModel, MetricsReport]:
    """Mini-batch Adam on BCE with validation-AUC early stopping.

    The model trains on the snapshot at ``spec.t_train_start``. Returns the
    best-validation model (the last one if validation is single-class).
    """
    if spec is None:
        spec = temporal_split(g, context_ts=config.context_ts, context_frac=config.context_frac)
    encoder = FeatureEncoder.fit(g, config.d_hash)
    model = StanceGnnModel(encoder, config.model_config())
    tr = window_data(g, spec, Window.TRAIN, model, config)
    va = window_data(g, spec, Window.VAL, model, config)
    log.info("train examples %d, val examples %d", len(tr.examples), len(va.examples))
    if not tr.examples:
        raise ConfigInvalid("training window has no positive examples")
    rng = np.random.default_rng([config.seed, 17])
    initial = attention_weights(model)
    losses: list[float] = []
    val_curve: list[float | None] = []
    trajectory: list[list[float]] = []
    best_auc, best_epoch, best_params, stale = -1.0, 0, model.store.values(), 0
    labels = tr.labels
    pairs = tr.pairs
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(pairs))
        total = 0.0
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo : lo + config.batch_size]
            probs = forward_batch(tr.prep, model, [pairs[i] for i in idx])
            loss = nn.bce_loss(probs, labels[idx])
            loss.backward()
            nn.adam_step(model.store, lr=config.lr)
            total += float(loss.data) * len(idx)
        losses.append(total / len(pairs))
        trajectory.append(attention_weights(model))
        val_auc = score_auc(model, va)
        val_curve.append(val_auc)
        log.info("epoch %d loss %.5f val_auc %s", epoch, losses[-1], val_auc)
        if val_auc is None:
            best_epoch, best_params = epoch, model.store.values()
            continue
        if val_auc > best_auc:
            best_auc, best_epoch, best_params, stale = val_auc, epoch, model.store.values(), 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.store.load_values(best_params)
    te = window_data(g, spec, Window.TEST, model, config)
    report = MetricsReport(
        auc={
            "train": _clean(score_auc(model, tr)),
            "val": _clean(score_auc(model, va)),
            "test": _clean(score_auc(model, te)),
        },
        loss_curve=losses,
        val_auc_curve=val_curve,
        attention_trajectory=trajectory,
        initial_attention=initial,
        final_attention=attention_weights(model),
        best_epoch=best_epoch,
        config_hash=config.config_hash(),
        model_hash=model.config_hash(),
        seed=config.seed,
        enabled_paths=list(config.enabled_paths),
        split=asdict(spec),
        n_examples={"train": len(tr.examples), "val": len(va.examples), "test": len(te.examples)},
    )
    return model, report


def evaluate(model: StanceGnnModel, g: HeteroGraph, spec: SplitSpec,
             window: Window | str, config: TrainConfig) -> float:
    """AUC on ``window`` scored from the snapshot at the window start only."""
    data = window_data(g, spec, window, model, config)
    if not data.examples:
        raise SingleClass(f"{Window(window).value} window has no positive examples")
    return compute_auc(predict(data.prep, model, data.pairs), data.labels)


def write_metrics(report: MetricsReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")


def write_trajectory(report: MetricsReport, path) -> None:
    """Row 0 is the initial weights; row ``e`` the weights after epoch ``e``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch"] + [k.value for k in PATH_ORDER])
        for epoch, row in enumerate([report.initial_attention] + report.attention_trajectory):
            w.writerow([epoch] + [repr(float(x)) for x in row])
