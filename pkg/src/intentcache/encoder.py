"""Entity recognition encoder: embeddings, spectral-norm initialization,
scaled dot-product self-attention, a pooled BIO tagging head and gloss-overlap
entity disambiguation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ParseError, TrainingError
from .lexicon import ExpandedQuery, LexicalGraph
from .parser import normalize, porter_stem, remove_stopwords, tokenize

TAGS = ("B-ENT", "I-ENT", "O")
# argmax tie preference: O, then B-ENT, then I-ENT
_TIE_ORDER = (2, 0, 1)


# ---------------------------------------------------------------------------
# spectral normalization
# ---------------------------------------------------------------------------

def spectral_norm(w: np.ndarray, tol: float = 1e-8, max_iter: int = 20_000) -> float:
    """Largest singular value of ``w`` by power iteration on the Gram matrix.

    The Rayleigh quotient error is quadratic in the eigen-residual, so
    stopping at ``||G v - lambda v|| <= 0.1 * sqrt(tol) * lambda`` keeps the
    relative error of ``lambda`` near ``tol`` without chasing a residual
    that float64 cannot reach.
    """
    w = np.asarray(w, dtype=np.float64)
    gram = w.T @ w if w.shape[1] <= w.shape[0] else w @ w.T
    if not np.any(gram):
        return 0.0
    v = np.random.default_rng(0).standard_normal(gram.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        gv = gram @ v
        lam = float(v @ gv)
        if np.linalg.norm(gv - lam * v) <= 0.1 * math.sqrt(tol) * abs(lam):
            break
        norm = np.linalg.norm(gv)
        if norm == 0.0:
            return 0.0
        v = gv / norm
    return math.sqrt(max(lam, 0.0))


def spectral_normalize(w: np.ndarray) -> np.ndarray:
    sigma = spectral_norm(w)
    if sigma == 0.0:
        raise ValueError("cannot spectrally normalize a matrix whose largest singular value is 0")
    return np.asarray(w, dtype=np.float64) / sigma


def unispec_init(rows: int, cols: int, a: float = -0.5, b: float = 0.5, seed: int = 0) -> np.ndarray:
    """Uniform(a, b) draw scaled to unit spectral norm."""
    if rows < 1 or cols < 1:
        raise ValueError(f"shape must be positive, got {rows}x{cols}")
    if not a < b:
        raise ValueError(f"need a < b, got a={a}, b={b}")
    w = np.random.default_rng(seed).uniform(a, b, size=(rows, cols))
    return spectral_normalize(w)


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------

OOV_ROW = 0


@dataclass
class EmbeddingTable:
    vocab: dict[str, int]
    matrix: np.ndarray

    @property
    def d(self) -> int:
        return self.matrix.shape[1]

    def row(self, term: str) -> int:
        return self.vocab.get(porter_stem(term), OOV_ROW)

    def lookup(self, terms: list[str]) -> np.ndarray:
        if not terms:
            return np.zeros((0, self.d))
        return self.matrix[[self.row(t) for t in terms]]


def build_embedding_table(terms, d: int = 32, seed: int = 0, a: float = -0.5, b: float = 0.5) -> EmbeddingTable:
    """Rows keyed by Porter stem; row 0 is reserved for out-of-vocabulary terms."""
    stems = sorted({porter_stem(t) for t in terms if t})
    vocab = {s: i + 1 for i, s in enumerate(stems)}
    return EmbeddingTable(vocab=vocab, matrix=unispec_init(len(stems) + 1, d, a, b, seed))


def embed(table: EmbeddingTable, q: ExpandedQuery) -> np.ndarray:
    return table.lookup(q.base.filtered)


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------

@dataclass
class AttentionParams:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    init: tuple[float, float, int] = (-0.5, 0.5, 0)

    @property
    def d_k(self) -> int:
        return self.w_q.shape[1]


def init_attention(d: int = 32, d_k: int = 32, seed: int = 0, a: float = -0.5, b: float = 0.5) -> AttentionParams:
    return AttentionParams(
        w_q=unispec_init(d, d_k, a, b, seed + 1),
        w_k=unispec_init(d, d_k, a, b, seed + 2),
        w_v=unispec_init(d, d_k, a, b, seed + 3),
        init=(a, b, seed),
    )


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def attention_weights(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    return softmax_rows(q @ k.T / math.sqrt(q.shape[-1]))


def self_attention(params: AttentionParams, x: np.ndarray, literal: bool = False) -> np.ndarray:
    """rowsoftmax(Q K^T / sqrt(d_k)) V with Q, K, V the projections of ``x``.

    ``literal=True`` evaluates softmax(Q K^T V / sqrt(d_k)) instead, the
    ordering of operations as sometimes printed; its rows are not convex
    combinations of V.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("self_attention needs a non-empty (n, d) sequence")
    if not np.all(np.isfinite(x)):
        raise ValueError("self_attention input contains non-finite values")
    q, k, v = x @ params.w_q, x @ params.w_k, x @ params.w_v
    if literal:
        return softmax_rows(q @ k.T @ v / math.sqrt(params.d_k))
    return attention_weights(q, k) @ v


def encode(params: AttentionParams, x: np.ndarray) -> np.ndarray:
    """Token representations: attention output plus a residual of the input
    when the widths agree."""
    h = self_attention(params, x)
    if h.shape == x.shape:
        h = h + x
    return h


# ---------------------------------------------------------------------------
# tagging head
# ---------------------------------------------------------------------------

@dataclass
class TaggingHead:
    weight: np.ndarray  # (2 * d_k, 3)
    bias: np.ndarray  # (3,)

    @classmethod
    def zeros(cls, d_k: int) -> "TaggingHead":
        return cls(weight=np.zeros((2 * d_k, len(TAGS))), bias=np.zeros(len(TAGS)))

    def copy(self) -> "TaggingHead":
        return TaggingHead(self.weight.copy(), self.bias.copy())


@dataclass
class TagSequence:
    tokens: list[str]
    tags: list[str]
    scores: np.ndarray = field(default_factory=lambda: np.zeros((0, len(TAGS))))


def pool(h: np.ndarray) -> np.ndarray:
    """Concatenate each token vector with the sequence mean."""
    mean = np.broadcast_to(h.mean(axis=0), h.shape)
    return np.concatenate([h, mean], axis=1)


def _argmax_tags(probs: np.ndarray) -> list[int]:
    out = []
    for row in probs:
        top = row.max()
        out.append(next(c for c in _TIE_ORDER if row[c] == top))
    return out


def repair_bio(tags: list[str]) -> list[str]:
    fixed = []
    for i, tag in enumerate(tags):
        if tag == "I-ENT" and (i == 0 or fixed[i - 1] == "O"):
            tag = "B-ENT"
        fixed.append(tag)
    return fixed


def pool_and_tag(head: TaggingHead, h: np.ndarray, tokens: list[str] | None = None) -> TagSequence:
    if h.shape[0] == 0:
        raise ValueError("pool_and_tag needs at least one token")
    probs = softmax_rows(pool(h) @ head.weight + head.bias)
    tags = repair_bio([TAGS[c] for c in _argmax_tags(probs)])
    return TagSequence(tokens=list(tokens) if tokens is not None else [""] * h.shape[0], tags=tags, scores=probs)


def head_loss_and_grad(head: TaggingHead, feats: np.ndarray, labels: np.ndarray) -> tuple[float, TaggingHead]:
    """Mean token cross-entropy and its gradient for pooled features ``feats``."""
    logits = feats @ head.weight + head.bias
    probs = softmax_rows(logits)
    n = feats.shape[0]
    loss = -float(np.mean(np.log(probs[np.arange(n), labels])))
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, TaggingHead(weight=feats.T @ dlogits, bias=dlogits.sum(axis=0))


def fixture_features(
    table: EmbeddingTable, attention: AttentionParams, fixture: list[tuple[list[str], list[str]]]
) -> tuple[np.ndarray, np.ndarray]:
    feats, labels = [], []
    for tokens, tags in fixture:
        feats.append(pool(encode(attention, table.lookup(tokens))))
        labels.extend(TAGS.index(t) for t in tags)
    return np.vstack(feats), np.asarray(labels, dtype=np.int64)


def fine_tune(
    head: TaggingHead,
    fixture: list[tuple[list[str], list[str]]],
    epochs: int,
    lr: float,
    table: EmbeddingTable,
    attention: AttentionParams,
) -> TaggingHead:
    """Full-batch gradient descent on the head; attention stays frozen."""
    if not fixture:
        raise ValueError("fine_tune needs a non-empty fixture")
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    head = head.copy()
    if epochs <= 0:
        return head
    feats, labels = fixture_features(table, attention, fixture)
    for epoch in range(epochs):
        loss, grad = head_loss_and_grad(head, feats, labels)
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite tagging loss at epoch {epoch}: {loss}")
        head.weight -= lr * grad.weight
        head.bias -= lr * grad.bias
    return head


def parse_ner_fixture(text: str) -> list[tuple[list[str], list[str]]]:
    out = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tokens, tags = [], []
        for pair in line.split():
            word, sep, tag = pair.rpartition("/")
            if not sep or tag not in TAGS:
                raise ParseError(f"expected word/TAG with TAG in {TAGS}, got {pair!r}", line_no)
            tokens.append(word)
            tags.append(tag)
        if repair_bio(tags) != tags:
            raise ParseError("I-ENT must follow B-ENT or I-ENT", line_no)
        out.append((tokens, tags))
    return out


def load_ner_fixture(path: str | Path | None = None) -> list[tuple[list[str], list[str]]]:
    if path is None:
        text = resources.files("intentcache").joinpath("data", "ner_fixture.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_ner_fixture(text)


# ---------------------------------------------------------------------------
# disambiguation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Entity:
    start: int
    end: int  # exclusive
    text: str
    synset: str | None
    score: int


@dataclass
class EntityResolvedQuery:
    expanded: ExpandedQuery
    entities: list[Entity]
    tags: TagSequence | None = None


def spans(tags: list[str]) -> list[tuple[int, int]]:
    out = []
    start = None
    for i, tag in enumerate(repair_bio(tags)):
        if tag == "B-ENT":
            if start is not None:
                out.append((start, i))
            start = i
        elif tag == "O" and start is not None:
            out.append((start, i))
            start = None
    if start is not None:
        out.append((start, len(tags)))
    return out


def _content_stems(text: str) -> set[str]:
    return {porter_stem(t) for t in remove_stopwords(normalize(tokenize(text)))}


def disambiguate(g: LexicalGraph, q: ExpandedQuery, tags: TagSequence) -> EntityResolvedQuery:
    """Pick, for each entity span, the sense whose gloss shares the most
    content words with the rest of the query."""
    tokens = q.base.filtered
    if len(tags.tags) != len(tokens):
        raise ValueError(f"{len(tags.tags)} tags for {len(tokens)} tokens")
    entities = []
    for start, end in spans(tags.tags):
        text = " ".join(tokens[start:end])
        candidates = g.senses(text) or g.senses("_".join(tokens[start:end]))
        context = [t for i, t in enumerate(tokens) if not start <= i < end] + [a[0] for a in q.additions]
        context_stems = {porter_stem(t) for t in context}
        best = None
        for sid in candidates:
            overlap = len(_content_stems(g.synsets[sid].gloss) & context_stems)
            key = (-overlap, -g.cumulative_counts[sid], sid)
            if best is None or key < best[0]:
                best = (key, sid, overlap)
        if best is None:
            entities.append(Entity(start, end, text, None, 0))
        else:
            entities.append(Entity(start, end, text, best[1], best[2]))
    return EntityResolvedQuery(expanded=q, entities=entities, tags=tags)


@dataclass
class Encoder:
    """Frozen embedding + attention with a trainable tagging head."""

    table: EmbeddingTable
    attention: AttentionParams
    head: TaggingHead

    def tag(self, q: ExpandedQuery) -> TagSequence:
        tokens = q.base.filtered
        if not tokens:
            return TagSequence(tokens=[], tags=[])
        return pool_and_tag(self.head, encode(self.attention, embed(self.table, q)), tokens)

    def tag_tokens(self, tokens: list[str]) -> TagSequence:
        return pool_and_tag(self.head, encode(self.attention, self.table.lookup(tokens)), tokens)

    def recognize(self, g: LexicalGraph, q: ExpandedQuery) -> EntityResolvedQuery:
        return disambiguate(g, q, self.tag(q))
