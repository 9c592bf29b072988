import random
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import auc_pairs, random_graph
from stancegraph.errors import DegenerateTimestamps, NotEnoughNegatives, SingleClass, TooFewEdges
from stancegraph.graph import INTERACTION_KINDS, EdgeKind, HeteroGraph, Stance, snapshot_before
from stancegraph.paths import DERIVED_KINDS, materialize
from stancegraph.synthgen import SynthConfig, generate
from stancegraph.training import (
    SplitSpec,
    TrainConfig,
    Window,
    build_examples,
    compute_auc,
    evaluate,
    first_propagation,
    temporal_split,
    train,
)


def chain_graph(stamps):
    g = HeteroGraph()
    g.add_user("u")
    for i, t in enumerate(stamps):
        g.add_post(f"p{i}")
        g.add("u", f"p{i}", EdgeKind.REPLIES, Stance.NEUTRAL, t)
    return g


def test_split_percentiles():
    spec = temporal_split(chain_graph(range(1, 11)))
    assert (spec.t_train_end, spec.t_val_end, spec.t_test_end) == (8, 9, 10)
    assert spec.t_train_start < spec.t_train_end
    with pytest.raises(DegenerateTimestamps):
        temporal_split(chain_graph([5] * 12))
    with pytest.raises(TooFewEdges):
        temporal_split(chain_graph(range(9)))


def test_split_after_context():
    g = chain_graph(list(range(1, 6)) + list(range(101, 111)))
    spec = temporal_split(g, context_ts=5)
    assert spec == SplitSpec(5, 108, 109, 110)
    with pytest.raises(TooFewEdges):
        temporal_split(chain_graph(range(1, 21)), context_ts=19)
    with pytest.raises(DegenerateTimestamps):
        temporal_split(chain_graph(list(range(1, 11)) + [50] * 10), context_ts=10)


@settings(max_examples=40, deadline=None)
@given(st.sets(st.integers(0, 10_000), min_size=10, max_size=200))
def test_split_counts_near_8_1_1(stamps):
    spec = temporal_split(chain_graph(sorted(stamps)))
    ts = sorted(stamps)
    n = len(ts)
    counts = [sum(t <= spec.t_train_end for t in ts),
              sum(spec.t_train_end < t <= spec.t_val_end for t in ts),
              sum(t > spec.t_val_end for t in ts)]
    for got, share in zip(counts, (0.8, 0.1, 0.1)):
        assert abs(got - share * n) <= 1


def propagation_graph():
    g = HeteroGraph()
    for i in range(10):
        g.add_user(f"u{i}")
    for j in range(10):
        g.add_post(f"p{j}", is_misinfo=j < 6)
    # history, then three positives in the test window
    g.add("u0", "p0", EdgeKind.RETWEETS, Stance.SUPPORT, 1)
    g.add("u1", "p1", EdgeKind.REPLIES, Stance.OPPOSE, 2)
    g.add("u2", "p0", EdgeKind.QUOTES, Stance.NEUTRAL, 3)
    g.add("u3", "p7", EdgeKind.REPLIES, Stance.NEUTRAL, 4)
    g.add("u0", "p0", EdgeKind.REPLIES, Stance.SUPPORT, 25)  # not first, not a positive
    g.add("u4", "p2", EdgeKind.RETWEETS, Stance.SUPPORT, 21)
    g.add("u5", "p3", EdgeKind.RETWEETS, Stance.SUPPORT, 22)
    g.add("u6", "p4", EdgeKind.QUOTES, Stance.OPPOSE, 23)
    g.add("u7", "p8", EdgeKind.QUOTES, Stance.OPPOSE, 24)  # not misinformation
    return g.freeze()


SPEC = SplitSpec(0, 10, 20, 30)


def test_build_examples_counts_and_determinism():
    g = propagation_graph()
    assert build_examples(g, SPEC, Window.VAL) == []
    ex = build_examples(g, SPEC, Window.TEST, 1, rng_seed=4)
    assert len(ex) == 6 and sum(e.label for e in ex) == 3
    assert {(e.user, e.post) for e in ex if e.label} == {("u4", "p2"), ("u5", "p3"), ("u6", "p4")}
    assert ex == build_examples(g, SPEC, Window.TEST, 1, rng_seed=4)
    assert len(build_examples(g, SPEC, Window.TEST, 3, rng_seed=4)) == 12
    with pytest.raises(NotEnoughNegatives):
        build_examples(g, SPEC, Window.TEST, 40)


def test_negatives_against_exhaustive_scan():
    g = propagation_graph()
    linked = set()
    for e in g.edges:
        if e.kind in INTERACTION_KINDS and g.nodes[e.dst].attrs.is_misinfo and e.ts <= SPEC.t_test_end:
            linked.add((e.src, e.dst))
    allowed = {(u, p) for u in g.users() for p in g.posts(misinfo_only=True)} - linked
    for seed in range(20):
        neg = [(e.user, e.post) for e in build_examples(g, SPEC, Window.TEST, 2, seed) if not e.label]
        assert len(neg) == len(set(neg)) == 6
        assert set(neg) <= allowed


def test_first_propagation_oracle():
    for seed in range(10):
        g = random_graph(seed)
        want = {}
        for e in g.edges:
            if e.kind in INTERACTION_KINDS and g.nodes[e.dst].attrs.is_misinfo:
                key = (e.src, e.dst)
                want[key] = min(want.get(key, e.ts), e.ts)
        assert first_propagation(g) == want


def test_mentions_of_author_count_only_when_asked():
    g = HeteroGraph()
    for u in ("a", "b"):
        g.add_user(u)
    g.add_post("p", is_misinfo=True)
    g.add("a", "p", EdgeKind.POSTS, Stance.SUPPORT, 1)
    g.add("b", "a", EdgeKind.MENTIONS, None, 5)
    assert first_propagation(g) == {("a", "p"): 1}
    assert first_propagation(g, count_mentions=True) == {("a", "p"): 1, ("b", "p"): 5}


def test_auc_examples():
    assert compute_auc([0.9, 0.1], [1, 0]) == 1.0
    assert compute_auc([0.3] * 6, [1, 0, 1, 0, 0, 1]) == 0.5
    with pytest.raises(SingleClass):
        compute_auc([0.1, 0.2], [1, 1])


def test_auc_matches_pair_counting():
    rng = random.Random(0)
    for _ in range(100):
        n = rng.randint(2, 200)
        labels = [0, 1] + [rng.randint(0, 1) for _ in range(n - 2)]
        scores = [rng.choice([0.1, 0.2, 0.5, rng.random()]) for _ in range(n)]
        assert abs(compute_auc(scores, labels) - auc_pairs(scores, labels)) <= 1e-12


@given(st.lists(st.tuples(st.integers(-50, 50), st.integers(0, 1)), min_size=2, max_size=60))
def test_auc_monotone_invariance(rows):
    scores = [s for s, _ in rows]
    labels = [y for _, y in rows]
    if len(set(labels)) < 2:
        return
    a = compute_auc(scores, labels)
    # strictly increasing and exact on small integers
    assert compute_auc([s ** 3 + 2 * s - 7 for s in scores], labels) == a


@pytest.fixture(scope="module")
def seven():
    return generate(SynthConfig(seed=7)).graph


FAST = dict(epochs=3, d_hash=16, d_emb=8, hidden=8, batch_size=64)


def test_seed7_loss_strictly_decreases(seven):
    _, rep = train(seven, TrainConfig(seed=7, epochs=3))
    a, b, c = rep.loss_curve
    assert a > b > c


def test_single_epoch_trajectory(seven):
    _, rep = train(seven, TrainConfig(seed=1, **{**FAST, "epochs": 1}))
    assert rep.initial_attention == [0.2] * 5
    assert len(rep.attention_trajectory) == 1
    assert len(rep.loss_curve) == len(rep.val_auc_curve) == 1


def test_training_is_deterministic(seven):
    _, a = train(seven, TrainConfig(seed=3, **FAST))
    _, b = train(seven, TrainConfig(seed=3, **FAST))
    assert a.to_dict() == b.to_dict()
    for row in a.attention_trajectory:
        assert abs(sum(row) - 1) < 1e-9
    for v in a.auc.values():
        assert v is None or 0 <= v <= 1


def test_main_only_ignores_stance_labels(seven):
    rng = random.Random(5)
    shuffled = seven.copy([e.with_stance(rng.choice(list(Stance))) if e.kind in INTERACTION_KINDS else e
                           for e in seven.edges]).freeze()
    cfg = TrainConfig(seed=2, enabled_paths=("main",), **FAST)
    _, a = train(seven, cfg)
    _, b = train(shuffled, cfg)
    assert a.to_dict() == b.to_dict()


def test_evaluate_zero_classifier_and_repeatability(seven):
    cfg = TrainConfig(seed=4, **FAST)
    model, _ = train(seven, cfg)
    spec = temporal_split(seven, context_frac=cfg.context_frac)
    first = evaluate(model, seven, spec, Window.TEST, cfg)
    assert first == evaluate(model, seven, spec, Window.TEST, cfg)
    for k in ("mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2"):
        model.store[k].data = np.zeros_like(model.store[k].data)
    assert evaluate(model, seven, spec, Window.TEST, cfg) == 0.5


def test_injected_future_edges_change_nothing(seven):
    cfg = TrainConfig(seed=6, **FAST)
    spec = temporal_split(seven, context_frac=cfg.context_frac)
    users = seven.users()
    plain = [p for p in seven.posts() if not seven.nodes[p].attrs.is_misinfo]
    misinfo = seven.posts(misinfo_only=True)
    probe = seven.copy()
    # one edge inside the test window on a non-misinformation post, one past every window
    probe.add(users[0], plain[0], EdgeKind.REPLIES, Stance.OPPOSE, spec.t_test_end)
    probe.add(users[1], misinfo[0], EdgeKind.RETWEETS, Stance.OPPOSE, spec.t_test_end + 50)
    probe.freeze()
    snap_a = materialize(snapshot_before(seven, spec.t_train_start))
    snap_b = materialize(snapshot_before(probe, spec.t_train_start))
    assert all(snap_a[k] == snap_b[k] for k in DERIVED_KINDS)
    model_a, rep_a = train(seven, cfg, spec)
    model_b, rep_b = train(probe, cfg, spec)
    assert rep_a.to_dict() == rep_b.to_dict()
    for w in Window:
        try:
            got = evaluate(model_a, seven, spec, w, cfg)
        except SingleClass:
            continue
        assert got == evaluate(model_b, probe, spec, w, cfg)


def test_config_validation():
    from stancegraph.errors import ConfigInvalid

    for bad in ({"neg_ratio": 0}, {"epochs": 0}, {"enabled_paths": ("fsp",)},
                {"bare_reshare_stance": "maybe"}, {"context_frac": 1.0}):
        with pytest.raises(ConfigInvalid):
            TrainConfig(**bad)
    with pytest.raises(ConfigInvalid):
        TrainConfig.from_dict({"nope": 1})
    cfg = TrainConfig(seed=9)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    assert replace(cfg, lr=0.5).config_hash() != cfg.config_hash()
