import pytest
from hypothesis import given, settings, strategies as st

from oracles import four_scenario_graph, path_oracle, random_graph
from stancegraph.errors import UnlabeledStance
from stancegraph.graph import EdgeKind, HeteroGraph, Stance
from stancegraph.paths import (
    DERIVED_KINDS,
    DerivedEdge,
    PathKind,
    PathOptions,
    build_eop,
    build_esp,
    build_fop,
    build_fsp,
    load_paths_jsonl,
    materialize,
    path_multiplicities,
    save_paths_jsonl,
)

BUILDERS = {PathKind.FSP: build_fsp, PathKind.FOP: build_fop,
            PathKind.ESP: build_esp, PathKind.EOP: build_eop}


def pair(stance, follow=True):
    g = HeteroGraph()
    g.add_user("u1")
    g.add_user("u2")
    g.add_post("p", is_misinfo=True)
    if follow:
        g.add("u2", "u1", EdgeKind.FOLLOWS)
    g.add("u1", "p", EdgeKind.RETWEETS, stance, 3)
    return g


def test_follower_paths():
    assert build_fsp(pair(Stance.SUPPORT)) == {DerivedEdge("u2", "p", PathKind.FSP)}
    assert build_fop(pair(Stance.OPPOSE)) == {DerivedEdge("u2", "p", PathKind.FOP)}
    assert build_fsp(pair(Stance.SUPPORT, follow=False)) == frozenset()
    assert build_fop(pair(Stance.OPPOSE, follow=False)) == frozenset()
    assert build_fop(pair(Stance.SUPPORT)) == frozenset()


def co_engaged(stance, t_first=5, t_second=6, t_target=10):
    g = HeteroGraph()
    g.add_user("u1")
    g.add_user("u2")
    g.add_post("p", is_misinfo=True)
    g.add_post("q")
    g.add("u1", "q", EdgeKind.REPLIES, Stance.NEUTRAL, t_first)
    g.add("u2", "q", EdgeKind.REPLIES, Stance.NEUTRAL, t_second)
    g.add("u1", "p", EdgeKind.QUOTES, stance, t_target)
    return g


def test_engagement_paths():
    assert build_esp(co_engaged(Stance.SUPPORT)) == {DerivedEdge("u2", "p", PathKind.ESP)}
    assert build_eop(co_engaged(Stance.OPPOSE)) == {DerivedEdge("u2", "p", PathKind.EOP)}
    # co-engagement after (or at) the target time does not count
    assert build_esp(co_engaged(Stance.SUPPORT, 11, 12)) == frozenset()
    assert build_esp(co_engaged(Stance.SUPPORT, 5, 10)) == frozenset()


def test_engagement_excludes_self_and_same_post():
    g = HeteroGraph()
    g.add_user("u1")
    g.add_user("u2")
    g.add_post("p", is_misinfo=True)
    g.add("u1", "p", EdgeKind.REPLIES, Stance.NEUTRAL, 1)
    g.add("u2", "p", EdgeKind.REPLIES, Stance.NEUTRAL, 2)
    g.add("u1", "p", EdgeKind.QUOTES, Stance.OPPOSE, 5)
    assert build_eop(g) == frozenset()


def test_co_engagement_window():
    g = co_engaged(Stance.SUPPORT, 5, 6, 10)
    assert build_esp(g, PathOptions(co_engage_window_secs=5)) == {DerivedEdge("u2", "p", PathKind.ESP)}
    assert build_esp(g, PathOptions(co_engage_window_secs=4)) == frozenset()


def test_unlabeled_misinfo_edge_raises():
    g = pair(None)
    with pytest.raises(UnlabeledStance):
        build_fsp(g)


def test_non_misinfo_posts_ignored_unless_asked():
    g = HeteroGraph()
    g.add_user("u1")
    g.add_user("u2")
    g.add_post("p")
    g.add("u2", "u1", EdgeKind.FOLLOWS)
    g.add("u1", "p", EdgeKind.RETWEETS, Stance.SUPPORT, 3)
    assert build_fsp(g) == frozenset()
    assert build_fsp(g, PathOptions(paths_all_posts=True)) == {DerivedEdge("u2", "p", PathKind.FSP)}


def test_neutral_only_graph():
    g = random_graph(11, stances=(Stance.NEUTRAL,))
    pg = materialize(g)
    assert pg.main == list(g.edges)
    assert all(not pg[k] for k in DERIVED_KINDS)


def test_four_scenario_fixture():
    g, expected = four_scenario_graph()
    pg = materialize(g)
    for kind in DERIVED_KINDS:
        assert {(d.user, d.post) for d in pg[kind]} == expected[kind]


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 100_000), kind=st.sampled_from(DERIVED_KINDS), all_posts=st.booleans())
def test_builders_match_oracle(seed, kind, all_posts):
    g = random_graph(seed, n_users=15, n_posts=10, n_follows=35, n_inter=45, max_ts=15)
    opts = PathOptions(paths_all_posts=all_posts)
    want = path_oracle(g, kind, all_posts)
    assert dict(path_multiplicities(g, kind, opts)) == want
    assert {(d.user, d.post) for d in BUILDERS[kind](g, opts)} == set(want)


def test_paths_jsonl_round_trip(tmp_path):
    g = random_graph(5)
    pg = materialize(g)
    save_paths_jsonl(pg, tmp_path / "paths.jsonl")
    assert load_paths_jsonl(tmp_path / "paths.jsonl") == pg.derived
