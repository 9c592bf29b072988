"""Synthetic stance-labeled social graphs with a known diffusion process.

Users belong to communities that drive both who follows whom (homophily)
and how a community leans on each claim (support / oppose / indifferent).
History interactions are sampled from those leanings. Each candidate
(user, misinformation post) pair then gets exposure counts along the four
stance paths of the history snapshot, and a future propagation edge is
drawn with probability

    sigmoid(b0 + b_fsp*x_fsp - b_fop*x_fop + b_esp*x_esp - b_eop*x_eop)

so opposition suppresses spread by construction.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import ConfigInvalid
from .graph import EdgeKind, HeteroGraph, Stance, dump_line, save_jsonl, snapshot_before
from .paths import DERIVED_KINDS, path_multiplicities

REPLY_KINDS = (EdgeKind.RETWEETS, EdgeKind.REPLIES, EdgeKind.QUOTES)

# (n_users, n_posts, expected in-community follows per user)
PRESETS = {
    "small": (100, 20, 40.0),
    "medium": (1000, 40, 40.0),
    "large": (10000, 400, 40.0),
}


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 100
    n_posts: int = 20
    misinfo_frac: float = 0.5
    n_communities: int = 10
    p_follow_in: float = 1.0
    p_follow_out: float = 0.0055
    p_support: float = 0.35
    p_oppose: float = 0.35
    beta_fsp: float = 0.5
    beta_fop: float = 2.0
    beta_esp: float = 0.5
    beta_eop: float = 2.0
    b0: float = -2.0
    horizon_steps: int = 1000
    seed: int = 0
    size_preset: str = "small"
    engagements_per_user: float = 2.0
    engagement_bias: float = 10.0
    stance_fidelity: float = 0.9
    posts_per_claim: int = 4
    mentions_per_user: float = 0.5
    attitude_consistency: float = 1.0

    @classmethod
    def preset(cls, name: str = "small", **overrides) -> "SynthConfig":
        """Preset sizes with follow probabilities scaled to keep degrees fixed."""
        if name not in PRESETS:
            raise ConfigInvalid(f"unknown size preset {name!r}")
        n_users, n_posts, k_in = PRESETS[name]
        n_comm = overrides.get("n_communities", cls.n_communities)
        per_comm = max(n_users // n_comm - 1, 1)
        base = cls(
            n_users=n_users, n_posts=n_posts, size_preset=name,
            p_follow_in=min(1.0, k_in / per_comm),
            p_follow_out=min(1.0, 0.5 / max(n_users - per_comm, 1)),
        )
        return replace(base, **overrides)

    @classmethod
    def from_dict(cls, raw: dict) -> "SynthConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(raw) - names
        if unknown:
            raise ConfigInvalid(f"unknown synth config keys {sorted(unknown)}")
        raw = dict(raw)
        preset = raw.pop("size_preset", "small")
        cfg = cls.preset(preset, **raw)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for name in ("misinfo_frac", "p_follow_in", "p_follow_out", "p_support",
                     "p_oppose", "stance_fidelity", "attitude_consistency"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not 0.0 <= v <= 1.0:
                raise ConfigInvalid(f"{name} must be a probability, got {v!r}")
        if self.p_support + self.p_oppose > 1.0:
            raise ConfigInvalid("p_support + p_oppose must not exceed 1")
        for name in ("n_users", "n_posts", "n_communities", "posts_per_claim"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigInvalid(f"{name} must be a positive integer, got {v!r}")
        if self.horizon_steps < 1:
            raise ConfigInvalid("horizon_steps must be >= 1")
        if self.engagements_per_user < 0 or self.mentions_per_user < 0 or self.engagement_bias <= 0:
            raise ConfigInvalid("engagement and mention rates must be non-negative")
        for name in ("beta_fsp", "beta_fop", "beta_esp", "beta_eop", "b0"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigInvalid(f"{name} must be finite")


@dataclass(frozen=True)
class Exposure:
    fsp: int = 0
    fop: int = 0
    esp: int = 0
    eop: int = 0


def ground_truth_probability(x: Exposure, config: SynthConfig) -> float:
    if min(x.fsp, x.fop, x.esp, x.eop) < 0:
        raise ValueError("exposure counts must be non-negative")
    z = (config.b0 + config.beta_fsp * x.fsp - config.beta_fop * x.fop
         + config.beta_esp * x.esp - config.beta_eop * x.eop)
    return float(expit(z))


@dataclass
class GroundTruthRow:
    user: str
    post: str
    x_fsp: int
    x_fop: int
    x_esp: int
    x_eop: int
    p_star: float
    realized: bool


@dataclass
class SynthResult:
    graph: HeteroGraph
    ground_truth: list[GroundTruthRow]
    history_end: int
    communities: dict[str, int]
    config: SynthConfig

    def history_snapshot(self) -> HeteroGraph:
        return snapshot_before(self.graph, self.history_end)


_VOCAB = [f"w{i}" for i in range(400)]


def _stance_draw(rng, disposition: int, fidelity: float) -> Stance:
    """disposition: +1 support, -1 oppose, 0 indifferent."""
    if disposition == 0 or rng.random() >= fidelity:
        return Stance.NEUTRAL
    return Stance.SUPPORT if disposition > 0 else Stance.OPPOSE


def generate(config: SynthConfig) -> SynthResult:
    config.validate()
    streams = np.random.SeedSequence(config.seed).spawn(8)
    r_comm, r_follow, r_post, r_engage, r_future, r_attr, r_text, r_mention = (
        np.random.default_rng(s) for s in streams
    )
    n_u, n_p, n_c = config.n_users, config.n_posts, config.n_communities
    width_u, width_p = len(str(n_u - 1)), len(str(n_p - 1))
    users = [f"u{i:0{width_u}d}" for i in range(n_u)]
    posts = [f"p{j:0{width_p}d}" for j in range(n_p)]

    # communities and follows
    comm = r_comm.integers(0, n_c, size=n_u)
    members = [np.flatnonzero(comm == c) for c in range(n_c)]
    follows: list[tuple[int, int]] = []
    for i in range(n_u):
        same = members[comm[i]]
        same = same[same != i]
        other = np.flatnonzero(comm != comm[i])
        k_in = r_follow.binomial(len(same), config.p_follow_in) if len(same) else 0
        k_out = r_follow.binomial(len(other), config.p_follow_out) if len(other) else 0
        targets = list(r_follow.choice(same, size=k_in, replace=False)) if k_in else []
        targets += list(r_follow.choice(other, size=k_out, replace=False)) if k_out else []
        follows += [(i, int(t)) for t in sorted(targets)]

    # claims, dispositions, posts
    n_claims = max(1, math.ceil(n_p / config.posts_per_claim))
    claim_of = r_post.integers(0, n_claims, size=n_p)
    claim_misinfo = r_post.random(n_claims) < config.misinfo_frac
    def lean(shape):
        u = r_post.random(shape)
        return np.where(u < config.p_support, 1, np.where(u < config.p_support + config.p_oppose, -1, 0))

    attitude = lean(n_c)
    inherit = r_post.random((n_c, n_claims)) < config.attitude_consistency
    disposition = np.where(inherit, attitude[:, None], lean((n_c, n_claims)))
    created = r_post.permutation(n_p) + 1
    author = r_post.integers(0, n_u, size=n_p)

    g = HeteroGraph()
    for i, u in enumerate(users):
        g.add_user(
            u, description=" ".join(r_text.choice(_VOCAB, size=6)),
            post_count=int(r_attr.integers(0, 500)),
            account_age_days=int(r_attr.integers(1, 3000)),
            verified=bool(r_attr.random() < 0.05),
        )
    for j, p in enumerate(posts):
        words = [f"claim{claim_of[j]}"] + list(r_text.choice(_VOCAB, size=2))
        g.add_post(
            p, text=" ".join(words), is_misinfo=bool(claim_misinfo[claim_of[j]]),
            created_ts=int(created[j]), claim_id=f"c{claim_of[j]}",
        )
    for i, t in follows:
        g.add(users[i], users[t], EdgeKind.FOLLOWS)
    for i in range(n_u):
        k = r_mention.poisson(config.mentions_per_user)
        if k:
            for t in r_mention.choice(n_u, size=min(k, n_u), replace=False):
                if int(t) != i:
                    g.add(users[i], users[int(t)], EdgeKind.MENTIONS)
    by_claim: dict[int, list[int]] = {}
    for j in range(n_p):
        by_claim.setdefault(int(claim_of[j]), []).append(j)
    for js in by_claim.values():
        for a in range(len(js)):
            for b in range(a + 1, len(js)):
                g.add(posts[js[a]], posts[js[b]], EdgeKind.SAME_CLAIM)
    for j in range(n_p):
        g.add(users[author[j]], posts[j], EdgeKind.POSTS, Stance.SUPPORT, int(created[j]))

    # history engagement
    events: list[tuple[int, int]] = []
    engaged = set((int(author[j]), j) for j in range(n_p))
    for i in range(n_u):
        k = min(int(r_engage.poisson(config.engagements_per_user)), n_p)
        if not k:
            continue
        w = np.where(disposition[comm[i], claim_of] != 0, config.engagement_bias, 1.0)
        for j in r_engage.choice(n_p, size=k, replace=False, p=w / w.sum()):
            if (i, int(j)) not in engaged:
                engaged.add((i, int(j)))
                events.append((i, int(j)))
    order = r_engage.permutation(len(events))
    t0 = n_p
    for rank, e_idx in enumerate(order):
        i, j = events[e_idx]
        kind = REPLY_KINDS[int(r_engage.integers(0, 3))]
        stance = _stance_draw(r_engage, disposition[comm[i], claim_of[j]], config.stance_fidelity)
        g.add(users[i], posts[j], kind, stance, t0 + rank + 1)
    history_end = t0 + len(events)

    # exposures on the history snapshot, then the future period
    hist = snapshot_before(g, history_end)
    mult = {k: path_multiplicities(hist, k) for k in DERIVED_KINDS}
    misinfo = [j for j in range(n_p) if claim_misinfo[claim_of[j]]]
    truth: list[GroundTruthRow] = []
    u_draw = r_future.random((n_u, len(misinfo)))
    future: list[tuple[int, int]] = []
    for i in range(n_u):
        for col, j in enumerate(misinfo):
            if (i, j) in engaged:
                continue
            key = (users[i], posts[j])
            x = Exposure(*(mult[k].get(key, 0) for k in DERIVED_KINDS))
            p_star = ground_truth_probability(x, config)
            realized = bool(u_draw[i, col] < p_star)
            truth.append(GroundTruthRow(users[i], posts[j], x.fsp, x.fop, x.esp, x.eop, p_star, realized))
            if realized:
                future.append((i, j))
    order = r_future.permutation(len(future))
    t1 = history_end + config.horizon_steps
    for rank, f_idx in enumerate(order):
        i, j = future[f_idx]
        kind = REPLY_KINDS[int(r_future.integers(0, 3))]
        stance = _stance_draw(r_future, disposition[comm[i], claim_of[j]], config.stance_fidelity)
        g.add(users[i], posts[j], kind, stance, t1 + rank)
    g.freeze()
    return SynthResult(g, truth, history_end, {u: int(comm[i]) for i, u in enumerate(users)}, config)


def write_ground_truth(rows: list[GroundTruthRow], path) -> None:
    Path(path).write_text("".join(dump_line(asdict(r)) + "\n" for r in rows), encoding="utf-8")


def read_ground_truth(path) -> list[GroundTruthRow]:
    with open(path, encoding="utf-8") as fh:
        return [GroundTruthRow(**json.loads(ln)) for ln in fh if ln.strip()]


def write_synth(result: SynthResult, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "nodes": out / "nodes.jsonl",
        "edges": out / "edges.jsonl",
        "ground_truth": out / "ground_truth.jsonl",
    }
    save_jsonl(result.graph, paths["nodes"], paths["edges"])
    write_ground_truth(result.ground_truth, paths["ground_truth"])
    return paths
