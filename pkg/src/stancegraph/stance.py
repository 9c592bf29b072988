"""Stance assignment for user->post interaction edges.

Classification goes through a :class:`StanceProvider`. The shipped
:class:`LexiconProvider` is a deterministic marker counter; anything better
(a fine-tuned sentence-pair model, say) plugs in through the same interface
or through the JSON-lines subprocess protocol of :class:`ExecProvider`.
"""
from __future__ import annotations

import json
import re
import shlex
import subprocess
from dataclasses import dataclass
from typing import Protocol, Sequence

from .errors import EmptyTopic, ProviderError
from .graph import EdgeKind, HeteroGraph, INTERACTION_KINDS, Stance

OPPOSE_MARKERS = ("false", "fake", "debunked", "hoax", "misleading", "not true", "lie", "wrong")
SUPPORT_MARKERS = ("agree", "true", "exactly", "correct", "support", "well said", "right")

_TOKEN = re.compile(r"[a-z0-9']+")


def _norm_space(text: str) -> str:
    return " ".join(text.split())


def rephrase_topic(topic: str, context: str = "") -> str:
    """Turn a bare stance target into a sentence usable as the source half of a pair."""
    topic = _norm_space(topic)
    if not topic:
        raise EmptyTopic("topic must be non-empty")
    context = _norm_space(context)
    body = f"{topic} {context}" if context else topic
    return f"The topic of this sentence is about {body}."


@dataclass(frozen=True)
class StanceScore:
    support: float
    oppose: float
    neutral: float

    def __post_init__(self):
        vals = (self.support, self.oppose, self.neutral)
        if any(not (0.0 <= v <= 1.0) for v in vals):
            raise ValueError(f"stance scores must lie in [0, 1]: {vals}")
        if abs(sum(vals) - 1.0) > 1e-9:
            raise ValueError(f"stance scores must sum to 1: {vals}")

    @classmethod
    def one_hot(cls, stance: Stance) -> "StanceScore":
        return cls(
            float(stance is Stance.SUPPORT),
            float(stance is Stance.OPPOSE),
            float(stance is Stance.NEUTRAL),
        )

    def argmax(self) -> Stance:
        # ties resolve Support > Oppose > Neutral
        best = max(self.support, self.oppose, self.neutral)
        if self.support == best:
            return Stance.SUPPORT
        if self.oppose == best:
            return Stance.OPPOSE
        return Stance.NEUTRAL


class StanceProvider(Protocol):
    def classify(self, source_text: str, response_text: str) -> StanceScore: ...


def _count_markers(text: str, markers: Sequence[str]) -> tuple[int, str]:
    """Count phrase markers first (removing them), then single-token markers."""
    count = 0
    for phrase in (m for m in markers if " " in m):
        pattern = r"\b" + r"\s+".join(map(re.escape, phrase.split())) + r"\b"
        text, n = re.subn(pattern, " ", text)
        count += n
    words = {m for m in markers if " " not in m}
    count += sum(1 for tok in _TOKEN.findall(text) if tok in words)
    return count, text


def lexicon_classify(source_text: str, response_text: str) -> StanceScore:
    text = response_text.lower()
    # phrases from both lists are stripped before any single-word counting
    o_phr, text = _count_markers(text, [m for m in OPPOSE_MARKERS if " " in m])
    s_phr, text = _count_markers(text, [m for m in SUPPORT_MARKERS if " " in m])
    o_tok, _ = _count_markers(text, [m for m in OPPOSE_MARKERS if " " not in m])
    s_tok, _ = _count_markers(text, [m for m in SUPPORT_MARKERS if " " not in m])
    s, o = s_phr + s_tok, o_phr + o_tok
    if s > o:
        return StanceScore.one_hot(Stance.SUPPORT)
    if o > s:
        return StanceScore.one_hot(Stance.OPPOSE)
    return StanceScore.one_hot(Stance.NEUTRAL)


class LexiconProvider:
    def classify(self, source_text: str, response_text: str) -> StanceScore:
        return lexicon_classify(source_text, response_text)


class ExecProvider:
    """Runs an external command speaking JSON lines on stdin/stdout.

    Input per line: ``{"source": str, "response": str}``; output per line:
    ``{"support": f, "oppose": f, "neutral": f}``. One process per batch.
    """

    def __init__(self, command: str | Sequence[str], timeout: float | None = 600):
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout

    def classify(self, source_text: str, response_text: str) -> StanceScore:
        return self.classify_batch([(source_text, response_text)])[0]

    def classify_batch(self, pairs: Sequence[tuple[str, str]]) -> list[StanceScore]:
        if not pairs:
            return []
        payload = "".join(
            json.dumps({"source": s, "response": r}) + "\n" for s, r in pairs
        )
        try:
            proc = subprocess.run(
                self.argv, input=payload, capture_output=True, text=True,
                timeout=self.timeout, check=False,
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise ProviderError(f"stance provider failed to run: {exc}") from None
        if proc.returncode != 0:
            raise ProviderError(
                f"stance provider exited {proc.returncode}: {proc.stderr.strip()[:200]}"
            )
        lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
        if len(lines) != len(pairs):
            raise ProviderError(f"provider returned {len(lines)} lines for {len(pairs)} inputs")
        try:
            out = []
            for ln in lines:
                obj = json.loads(ln)
                out.append(StanceScore(float(obj["support"]), float(obj["oppose"]), float(obj["neutral"])))
        except (ValueError, KeyError, TypeError) as exc:
            raise ProviderError(f"bad provider output: {exc}") from None
        return out


def edge_texts(g: HeteroGraph, edge) -> tuple[str, str]:
    """(source, response) pair fed to the provider for one interaction edge.

    The schema stores no per-interaction text, so the interacted post's text
    is the response and its claim id (if any) the source.
    """
    post = g.nodes[edge.dst].attrs
    return post.claim_id or "", post.text


def label_graph_stances(
    g: HeteroGraph,
    provider: StanceProvider,
    bare_reshare_stance: Stance | str = Stance.SUPPORT,
) -> HeteroGraph:
    """Copy of ``g`` with every unlabeled interaction edge given a stance.

    Already-labeled edges keep their stance. A retweet whose response text is
    empty is a bare reshare and takes ``bare_reshare_stance`` directly.
    """
    bare = Stance(bare_reshare_stance)
    if bare not in (Stance.SUPPORT, Stance.NEUTRAL):
        raise ValueError("bare_reshare_stance must be support or neutral")
    todo: list[int] = []
    pairs: list[tuple[str, str]] = []
    new_stance: dict[int, Stance] = {}
    for i, e in enumerate(g.edges):
        if e.kind not in INTERACTION_KINDS or e.stance is not None:
            continue
        src, resp = edge_texts(g, e)
        if e.kind is EdgeKind.RETWEETS and not resp.strip():
            new_stance[i] = bare
            continue
        todo.append(i)
        pairs.append((src, resp))
    batch = getattr(provider, "classify_batch", None)
    scores = batch(pairs) if batch else [provider.classify(s, r) for s, r in pairs]
    for i, score in zip(todo, scores):
        new_stance[i] = score.argmax()
    edges = [e.with_stance(new_stance[i]) if i in new_stance else e for i, e in enumerate(g.edges)]
    return g.copy(edges).freeze()
