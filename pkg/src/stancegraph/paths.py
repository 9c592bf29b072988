"""Stance-conditioned echo-chamber paths derived from a snapshot graph.

Four derived user->post edge sets sit next to the original (main) edges:

* FSP / FOP: u2 follows u1 and u1 supported / opposed misinformation post p.
* ESP / EOP: u1 and u2 both engaged some other post p' strictly before u1
  supported / opposed p.

Each derived pair (u2, p) also carries a multiplicity: the number of distinct
intermediaries u1 that produce it.
"""
from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import NamedTuple

from .errors import UnlabeledStance
from .graph import INTERACTION_KINDS, Edge, EdgeKind, HeteroGraph, Stance


class PathKind(str, Enum):
    MAIN = "main"
    FSP = "fsp"
    FOP = "fop"
    ESP = "esp"
    EOP = "eop"


PATH_ORDER = (PathKind.MAIN, PathKind.FSP, PathKind.FOP, PathKind.ESP, PathKind.EOP)
DERIVED_KINDS = PATH_ORDER[1:]


class DerivedEdge(NamedTuple):
    user: str
    post: str
    kind: PathKind


@dataclass(frozen=True)
class PathOptions:
    paths_all_posts: bool = False
    co_engage_window_secs: int | None = None


@dataclass
class PathGraphs:
    main: list[Edge]
    derived: dict[PathKind, frozenset[DerivedEdge]] = field(default_factory=dict)

    def __getitem__(self, kind: PathKind):
        kind = PathKind(kind)
        return self.main if kind is PathKind.MAIN else self.derived[kind]


def _target_edges(g: HeteroGraph, opts: PathOptions) -> list[Edge]:
    """Interaction edges on eligible posts; all of them must be labeled."""
    out = []
    for e in g.edges:
        if e.kind not in INTERACTION_KINDS:
            continue
        if not (opts.paths_all_posts or g.nodes[e.dst].attrs.is_misinfo):
            continue
        if e.stance is None:
            raise UnlabeledStance(f"unlabeled {e.kind.value} edge {e.src}->{e.dst} at ts {e.ts}")
        out.append(e)
    return out


def _follower_counts(g: HeteroGraph, stance: Stance, opts: PathOptions) -> Counter:
    witnesses: dict[tuple[str, str], set[str]] = defaultdict(set)
    for e in _target_edges(g, opts):
        if e.stance is not stance:
            continue
        for f in g.in_edges(e.src, EdgeKind.FOLLOWS):
            witnesses[(f.src, e.dst)].add(e.src)
    return Counter({k: len(v) for k, v in witnesses.items()})


def _engagement_counts(g: HeteroGraph, stance: Stance, opts: PathOptions) -> Counter:
    by_user: dict[str, list[tuple[int, str]]] = defaultdict(list)
    by_post: dict[str, list[tuple[int, str]]] = defaultdict(list)
    for e in g.edges:
        if e.kind in INTERACTION_KINDS:
            by_user[e.src].append((e.ts, e.dst))
            by_post[e.dst].append((e.ts, e.src))
    window = opts.co_engage_window_secs
    witnesses: dict[tuple[str, str], set[str]] = defaultdict(set)
    for e in _target_edges(g, opts):
        if e.stance is not stance:
            continue
        t_hi = e.ts
        t_lo = None if window is None else t_hi - window
        for ts1, other in by_user[e.src]:
            if other == e.dst or ts1 >= t_hi or (t_lo is not None and ts1 < t_lo):
                continue
            for ts2, u2 in by_post[other]:
                if u2 == e.src or ts2 >= t_hi or (t_lo is not None and ts2 < t_lo):
                    continue
                witnesses[(u2, e.dst)].add(e.src)
    return Counter({k: len(v) for k, v in witnesses.items()})


_BUILDERS = {
    PathKind.FSP: (_follower_counts, Stance.SUPPORT),
    PathKind.FOP: (_follower_counts, Stance.OPPOSE),
    PathKind.ESP: (_engagement_counts, Stance.SUPPORT),
    PathKind.EOP: (_engagement_counts, Stance.OPPOSE),
}


def path_multiplicities(g: HeteroGraph, kind: PathKind, opts: PathOptions = PathOptions()) -> Counter:
    """(user, post) -> number of distinct intermediaries for one derived path kind."""
    fn, stance = _BUILDERS[PathKind(kind)]
    return fn(g, stance, opts)


def _as_edges(counts: Counter, kind: PathKind) -> frozenset[DerivedEdge]:
    return frozenset(DerivedEdge(u, p, kind) for (u, p) in counts)


def build_fsp(g: HeteroGraph, opts: PathOptions = PathOptions()) -> frozenset[DerivedEdge]:
    return _as_edges(path_multiplicities(g, PathKind.FSP, opts), PathKind.FSP)


def build_fop(g: HeteroGraph, opts: PathOptions = PathOptions()) -> frozenset[DerivedEdge]:
    return _as_edges(path_multiplicities(g, PathKind.FOP, opts), PathKind.FOP)


def build_esp(g: HeteroGraph, opts: PathOptions = PathOptions()) -> frozenset[DerivedEdge]:
    return _as_edges(path_multiplicities(g, PathKind.ESP, opts), PathKind.ESP)


def build_eop(g: HeteroGraph, opts: PathOptions = PathOptions()) -> frozenset[DerivedEdge]:
    return _as_edges(path_multiplicities(g, PathKind.EOP, opts), PathKind.EOP)


def materialize(g: HeteroGraph, opts: PathOptions = PathOptions()) -> PathGraphs:
    return PathGraphs(
        main=list(g.edges),
        derived={
            PathKind.FSP: build_fsp(g, opts),
            PathKind.FOP: build_fop(g, opts),
            PathKind.ESP: build_esp(g, opts),
            PathKind.EOP: build_eop(g, opts),
        },
    )


def save_paths_jsonl(pg: PathGraphs, path) -> None:
    rows = sorted(
        (d.user, d.post, d.kind.value) for kind in DERIVED_KINDS for d in pg.derived[kind]
    )
    Path(path).write_text(
        "".join(
            json.dumps({"user": u, "post": p, "path": k}, sort_keys=True, separators=(",", ":")) + "\n"
            for u, p, k in rows
        ),
        encoding="utf-8",
    )


def load_paths_jsonl(path) -> dict[PathKind, frozenset[DerivedEdge]]:
    sets: dict[PathKind, set] = {k: set() for k in DERIVED_KINDS}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                kind = PathKind(obj["path"])
                sets[kind].add(DerivedEdge(obj["user"], obj["post"], kind))
    return {k: frozenset(v) for k, v in sets.items()}
