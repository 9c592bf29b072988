"""Typed heterogeneous user/post graph with timestamped, stance-labeled edges.

Nodes are users or posts. Edges carry an :class:`EdgeKind` whose endpoint
typing is enforced at insertion. User->Post interaction edges must carry a
timestamp and may carry a :class:`Stance`; structural edges (follows,
mentions, same-claim, shared-keyword) may omit the timestamp, in which case
they exist at all times.
"""
from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, fields
from enum import Enum
from pathlib import Path
from typing import Iterable

from .errors import (
    DuplicateEdge,
    DuplicateId,
    GraphFrozen,
    IllegalStance,
    KindTypingViolation,
    MissingTimestamp,
    ParseError,
    SchemaMismatch,
    StanceGraphError,
    UnknownEndpoint,
    UnknownNode,
    at_line,
)


class NodeKind(str, Enum):
    USER = "user"
    POST = "post"


class EdgeKind(str, Enum):
    FOLLOWS = "follows"
    MENTIONS = "mentions"
    SAME_CLAIM = "same_claim"
    SHARED_KEYWORD = "shared_keyword"
    POSTS = "posts"
    RETWEETS = "retweets"
    REPLIES = "replies"
    QUOTES = "quotes"


class Stance(str, Enum):
    SUPPORT = "support"
    OPPOSE = "oppose"
    NEUTRAL = "neutral"


class Direction(str, Enum):
    OUT = "out"
    IN = "in"
    BOTH = "both"


ENDPOINTS: dict[EdgeKind, tuple[NodeKind, NodeKind]] = {
    EdgeKind.FOLLOWS: (NodeKind.USER, NodeKind.USER),
    EdgeKind.MENTIONS: (NodeKind.USER, NodeKind.USER),
    EdgeKind.SAME_CLAIM: (NodeKind.POST, NodeKind.POST),
    EdgeKind.SHARED_KEYWORD: (NodeKind.POST, NodeKind.POST),
    EdgeKind.POSTS: (NodeKind.USER, NodeKind.POST),
    EdgeKind.RETWEETS: (NodeKind.USER, NodeKind.POST),
    EdgeKind.REPLIES: (NodeKind.USER, NodeKind.POST),
    EdgeKind.QUOTES: (NodeKind.USER, NodeKind.POST),
}

INTERACTION_KINDS = frozenset(
    {EdgeKind.POSTS, EdgeKind.RETWEETS, EdgeKind.REPLIES, EdgeKind.QUOTES}
)
STRUCTURAL_KINDS = frozenset(EdgeKind) - INTERACTION_KINDS
# stored once per unordered pair, lower id first
SYMMETRIC_KINDS = frozenset({EdgeKind.SAME_CLAIM, EdgeKind.SHARED_KEYWORD})


@dataclass(frozen=True)
class UserAttrs:
    description: str = ""
    post_count: int = 0
    account_age_days: int = 0
    verified: bool = False


@dataclass(frozen=True)
class PostAttrs:
    text: str = ""
    is_misinfo: bool = False
    created_ts: int = 0
    claim_id: str | None = None


ATTRS_FOR_KIND = {NodeKind.USER: UserAttrs, NodeKind.POST: PostAttrs}


@dataclass(frozen=True)
class NodeRecord:
    id: str
    kind: NodeKind
    attrs: UserAttrs | PostAttrs

    @property
    def is_user(self) -> bool:
        return self.kind is NodeKind.USER


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    kind: EdgeKind
    stance: Stance | None = None
    ts: int | None = None

    @property
    def key(self) -> tuple:
        return (self.src, self.dst, self.kind, self.ts)

    def with_stance(self, stance: Stance | None) -> "Edge":
        return Edge(self.src, self.dst, self.kind, stance, self.ts)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _check_attrs(kind: NodeKind, attrs) -> None:
    expected = ATTRS_FOR_KIND[kind]
    if not isinstance(attrs, expected):
        raise SchemaMismatch(
            f"{kind.value} node needs {expected.__name__}, got {type(attrs).__name__}"
        )
    if isinstance(attrs, UserAttrs):
        if not isinstance(attrs.description, str):
            raise SchemaMismatch("description must be text")
        if not _is_int(attrs.post_count) or attrs.post_count < 0:
            raise SchemaMismatch("post_count must be a non-negative integer")
        if not _is_int(attrs.account_age_days) or attrs.account_age_days < 0:
            raise SchemaMismatch("account_age_days must be a non-negative integer")
        if not isinstance(attrs.verified, bool):
            raise SchemaMismatch("verified must be boolean")
    else:
        if not isinstance(attrs.text, str):
            raise SchemaMismatch("text must be text")
        if not isinstance(attrs.is_misinfo, bool):
            raise SchemaMismatch("is_misinfo must be boolean")
        if not _is_int(attrs.created_ts) or attrs.created_ts < 0:
            raise SchemaMismatch("created_ts must be a non-negative integer")
        if attrs.claim_id is not None and not isinstance(attrs.claim_id, str):
            raise SchemaMismatch("claim_id must be a string or null")


class HeteroGraph:
    """Mutable until :meth:`freeze`; read-only afterwards."""

    def __init__(self) -> None:
        self.nodes: dict[str, NodeRecord] = {}
        self.edges: list[Edge] = []
        self._keys: set[tuple] = set()
        self._out: dict[tuple[str, EdgeKind], list[int]] = defaultdict(list)
        self._in: dict[tuple[str, EdgeKind], list[int]] = defaultdict(list)
        self.frozen = False

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self.nodes

    def __eq__(self, other) -> bool:
        if not isinstance(other, HeteroGraph):
            return NotImplemented
        return self.nodes == other.nodes and Counter(self.edges) == Counter(other.edges)

    def __repr__(self) -> str:
        return f"HeteroGraph(nodes={len(self.nodes)}, edges={len(self.edges)})"

    def _check_mutable(self) -> None:
        if self.frozen:
            raise GraphFrozen("graph is frozen")

    def freeze(self) -> "HeteroGraph":
        self.frozen = True
        return self

    def add_node(self, record: NodeRecord) -> None:
        self._check_mutable()
        if not isinstance(record.id, str) or not record.id:
            raise SchemaMismatch("node id must be a non-empty string")
        if record.id in self.nodes:
            raise DuplicateId(f"duplicate node id {record.id!r}")
        _check_attrs(NodeKind(record.kind), record.attrs)
        self.nodes[record.id] = record

    def add_user(self, node_id: str, **attrs) -> None:
        self.add_node(NodeRecord(node_id, NodeKind.USER, UserAttrs(**attrs)))

    def add_post(self, node_id: str, **attrs) -> None:
        self.add_node(NodeRecord(node_id, NodeKind.POST, PostAttrs(**attrs)))

    def add_edge(self, edge: Edge) -> None:
        self._check_mutable()
        kind = EdgeKind(edge.kind)
        for end in (edge.src, edge.dst):
            if end not in self.nodes:
                raise UnknownEndpoint(f"unknown endpoint {end!r}")
        want = ENDPOINTS[kind]
        got = (self.nodes[edge.src].kind, self.nodes[edge.dst].kind)
        if got != want:
            raise KindTypingViolation(
                f"{kind.value} needs {want[0].value}->{want[1].value}, "
                f"got {got[0].value}->{got[1].value}"
            )
        if edge.ts is not None and (not _is_int(edge.ts) or edge.ts < 0):
            raise SchemaMismatch("ts must be a non-negative integer")
        if kind in INTERACTION_KINDS:
            if edge.ts is None:
                raise MissingTimestamp(f"{kind.value} edge needs a timestamp")
        elif edge.stance is not None:
            raise IllegalStance(f"stance not allowed on {kind.value} edges")
        stance = None if edge.stance is None else Stance(edge.stance)
        src, dst = edge.src, edge.dst
        if kind in SYMMETRIC_KINDS and dst < src:
            src, dst = dst, src
        edge = Edge(src, dst, kind, stance, edge.ts)
        if edge.key in self._keys:
            raise DuplicateEdge(f"duplicate edge {edge.key}")
        self._keys.add(edge.key)
        idx = len(self.edges)
        self.edges.append(edge)
        self._out[(src, kind)].append(idx)
        self._in[(dst, kind)].append(idx)

    def add(self, src: str, dst: str, kind: EdgeKind | str, stance=None, ts=None) -> None:
        self.add_edge(Edge(src, dst, EdgeKind(kind), None if stance is None else Stance(stance), ts))

    def node(self, node_id: str) -> NodeRecord:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(f"unknown node {node_id!r}") from None

    def users(self) -> list[str]:
        return sorted(n for n, r in self.nodes.items() if r.kind is NodeKind.USER)

    def posts(self, misinfo_only: bool = False) -> list[str]:
        return sorted(
            n
            for n, r in self.nodes.items()
            if r.kind is NodeKind.POST and (r.attrs.is_misinfo or not misinfo_only)
        )

    def out_edges(self, node_id: str, kind: EdgeKind) -> list[Edge]:
        return [self.edges[i] for i in self._out.get((node_id, kind), ())]

    def in_edges(self, node_id: str, kind: EdgeKind) -> list[Edge]:
        return [self.edges[i] for i in self._in.get((node_id, kind), ())]

    def interaction_edges(self) -> list[Edge]:
        return [e for e in self.edges if e.kind in INTERACTION_KINDS]

    def copy(self, edges: Iterable[Edge] | None = None) -> "HeteroGraph":
        """Same nodes; ``edges`` (already validated) or all current edges. Unfrozen."""
        g = HeteroGraph()
        g.nodes = dict(self.nodes)
        for e in self.edges if edges is None else edges:
            idx = len(g.edges)
            g.edges.append(e)
            g._keys.add(e.key)
            g._out[(e.src, e.kind)].append(idx)
            g._in[(e.dst, e.kind)].append(idx)
        return g


def snapshot_before(g: HeteroGraph, t: int) -> HeteroGraph:
    """All nodes, untimestamped edges, and timestamped edges with ``ts <= t``."""
    kept = [e for e in g.edges if e.ts is None or e.ts <= t]
    return g.copy(kept).freeze()


def neighbors(
    g: HeteroGraph,
    node: str,
    kinds: Iterable[EdgeKind],
    direction: Direction | str = Direction.OUT,
) -> list[str]:
    """Sorted, de-duplicated neighbor ids. Symmetric kinds ignore direction."""
    g.node(node)
    direction = Direction(direction)
    found: set[str] = set()
    for kind in kinds:
        kind = EdgeKind(kind)
        both = direction is Direction.BOTH or kind in SYMMETRIC_KINDS
        if direction is Direction.OUT or both:
            found.update(e.dst for e in g.out_edges(node, kind))
        if direction is Direction.IN or both:
            found.update(e.src for e in g.in_edges(node, kind))
    return sorted(found)


# --- JSONL ---------------------------------------------------------------

_NODE_KEYS = {"id", "kind", "attrs"}
_EDGE_KEYS = {"src", "dst", "kind", "stance", "ts"}


def _attrs_from_json(kind: NodeKind, raw: dict, lenient: bool):
    cls = ATTRS_FOR_KIND[kind]
    names = {f.name for f in fields(cls)}
    if not isinstance(raw, dict):
        raise SchemaMismatch("attrs must be an object")
    extra = set(raw) - names
    if extra and not lenient:
        raise SchemaMismatch(f"unknown {kind.value} attrs {sorted(extra)}")
    try:
        return cls(**{k: v for k, v in raw.items() if k in names})
    except TypeError as exc:
        raise SchemaMismatch(str(exc)) from None


def node_to_json(rec: NodeRecord) -> dict:
    attrs = {f.name: getattr(rec.attrs, f.name) for f in fields(rec.attrs)}
    return {"id": rec.id, "kind": rec.kind.value, "attrs": attrs}


def edge_to_json(e: Edge) -> dict:
    return {
        "src": e.src,
        "dst": e.dst,
        "kind": e.kind.value,
        "stance": None if e.stance is None else e.stance.value,
        "ts": e.ts,
    }


def node_from_json(obj, lenient: bool = False) -> NodeRecord:
    if not isinstance(obj, dict):
        raise ParseError("expected a JSON object")
    if not lenient and set(obj) - _NODE_KEYS:
        raise ParseError(f"unknown keys {sorted(set(obj) - _NODE_KEYS)}")
    try:
        kind = NodeKind(obj["kind"])
        node_id = obj["id"]
    except (KeyError, ValueError) as exc:
        raise ParseError(f"bad node record: {exc}") from None
    return NodeRecord(node_id, kind, _attrs_from_json(kind, obj.get("attrs", {}), lenient))


def edge_from_json(obj, lenient: bool = False) -> Edge:
    if not isinstance(obj, dict):
        raise ParseError("expected a JSON object")
    if not lenient and set(obj) - _EDGE_KEYS:
        raise ParseError(f"unknown keys {sorted(set(obj) - _EDGE_KEYS)}")
    try:
        kind = EdgeKind(obj["kind"])
        stance = obj.get("stance")
        stance = None if stance is None else Stance(stance)
        return Edge(obj["src"], obj["dst"], kind, stance, obj.get("ts"))
    except (KeyError, ValueError) as exc:
        raise ParseError(f"bad edge record: {exc}") from None


def _read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from None


def load_jsonl(nodes_path, edges_path, lenient: bool = False) -> HeteroGraph:
    g = HeteroGraph()
    for lineno, obj in _read_jsonl(nodes_path):
        try:
            g.add_node(node_from_json(obj, lenient))
        except StanceGraphError as exc:
            raise at_line(exc, lineno) from None
    for lineno, obj in _read_jsonl(edges_path):
        try:
            g.add_edge(edge_from_json(obj, lenient))
        except StanceGraphError as exc:
            raise at_line(exc, lineno) from None
    return g


def dump_line(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_jsonl(g: HeteroGraph, nodes_path, edges_path) -> None:
    Path(nodes_path).write_text(
        "".join(dump_line(node_to_json(g.nodes[n])) + "\n" for n in sorted(g.nodes)),
        encoding="utf-8",
    )
    Path(edges_path).write_text(
        "".join(dump_line(edge_to_json(e)) + "\n" for e in g.edges), encoding="utf-8"
    )
