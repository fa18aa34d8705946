"""Feature extraction over structured records: TF-IDF, numeric counts,
categorical attributes, years and entity relations."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import EmbeddingTable, EntityResolvedQuery
from .errors import ParseError, UndefinedMetricError
from .lexicon import LexicalGraph, relation_score
from .optics import NOISE, StructuredRecord
from .parser import TAGSET, ParsedQuery

_YEAR_RE = re.compile(r"^\d{4}$")
YEAR_MIN, YEAR_MAX = 1400, 2100


def tf_idf(corpus: list[list[str]], doc: int) -> dict[str, float]:
    """Raw count times ln(N / df); zero weights are dropped."""
    if not corpus:
        raise ValueError("tf_idf needs a non-empty corpus")
    n = len(corpus)
    df = Counter(t for tokens in corpus for t in set(tokens))
    out = {}
    for term, tf in Counter(corpus[doc]).items():
        w = tf * math.log(n / df[term])
        if w > 0.0:
            out[term] = w
    return out


def extract_years(tokens: list[str]) -> list[int]:
    return [int(t) for t in tokens if _YEAR_RE.match(t) and YEAR_MIN <= int(t) <= YEAR_MAX]


@dataclass
class TextProfile:
    """Everything feature extraction needs to know about one text."""

    parsed: ParsedQuery
    entities: list[tuple[str, str]] = field(default_factory=list)  # (surface, synset id)


@dataclass
class CorpusStats:
    n_docs: int
    df: Counter
    table: EmbeddingTable
    labels: list[int]
    profiles: dict[int, TextProfile]

    @property
    def n_clusters(self) -> int:
        return len({label for label in self.labels if label != NOISE})

    @property
    def has_noise(self) -> bool:
        return any(label == NOISE for label in self.labels)

    @property
    def onehot_width(self) -> int:
        return self.n_clusters + (1 if self.has_noise else 0)

    def idf(self, term: str) -> float:
        # terms never seen in the corpus count as occurring once
        return math.log(self.n_docs / max(self.df.get(term, 0), 1))

    def tfidf(self, stems: list[str]) -> dict[str, float]:
        out = {}
        for term, tf in Counter(stems).items():
            w = tf * self.idf(term)
            if w > 0.0:
                out[term] = w
        return out

    def dense_width(self) -> int:
        return self.table.d + 4 + self.onehot_width + len(TAGSET) + 2 + 1


def build_corpus_stats(table: EmbeddingTable, profiles: dict[int, TextProfile], labels: list[int]) -> CorpusStats:
    df = Counter(t for p in profiles.values() for t in set(p.parsed.stems))
    return CorpusStats(n_docs=len(profiles), df=df, table=table, labels=list(labels), profiles=profiles)


def weighted_embedding(table: EmbeddingTable, tfidf: dict[str, float], terms: list[str]) -> np.ndarray:
    """TF-IDF-weighted mean of term rows; plain mean when every weight is 0."""
    if not terms:
        return np.zeros(table.d)
    total = sum(tfidf.values())
    if total <= 0.0:
        return table.lookup(terms).mean(axis=0)
    keys = sorted(tfidf)
    rows = table.lookup(keys)
    weights = np.array([tfidf[k] for k in keys])
    return weights @ rows / total


@dataclass
class FeatureVector:
    tfidf: dict[str, float]
    numeric: list[float]
    categorical: list[float]  # cluster one-hot followed by the POS histogram
    temporal: list[int]
    entity_links: list[tuple[str, float]]
    semantic: np.ndarray

    def dense(self) -> np.ndarray:
        years = self.temporal
        temporal = [float(len(years)), (np.mean(years) - YEAR_MIN) / (YEAR_MAX - YEAR_MIN) if years else 0.0]
        link = float(np.mean([s for _, s in self.entity_links])) if self.entity_links else 0.0
        numeric = [math.log1p(v) for v in self.numeric]
        return np.concatenate([self.semantic, numeric, self.categorical, temporal, [link]]).astype(np.float64)


def entity_links(g: LexicalGraph, entity_synsets: list[str], term_synsets: list[str]) -> list[tuple[str, float]]:
    """Mean relation score between each entity synset and the other synsets."""
    links = []
    for sid in entity_synsets:
        others = [t for t in term_synsets if t != sid]
        scores = []
        for other in others:
            try:
                scores.append(relation_score(g, sid, other))
            except UndefinedMetricError:
                continue
        links.append((sid, float(np.mean(scores)) if scores else 0.0))
    return links


def extract_profile_features(
    profile: TextProfile, label: int, g: LexicalGraph, stats: CorpusStats
) -> FeatureVector:
    parsed = profile.parsed
    tfidf = stats.tfidf(parsed.stems)
    numeric = [
        float(len(parsed.tokens)),
        float(len(parsed.filtered)),
        float(len(set(parsed.stems))),
        float(np.mean([len(t) for t in parsed.filtered])) if parsed.filtered else 0.0,
    ]
    onehot = [0.0] * stats.onehot_width
    if label == NOISE:
        if stats.has_noise:
            onehot[-1] = 1.0
    elif 0 <= label < stats.n_clusters:
        onehot[label] = 1.0
    tags = Counter(tag for _, _, tag in parsed.tagged)
    n_tags = max(len(parsed.tagged), 1)
    pos_hist = [tags.get(t, 0) / n_tags for t in TAGSET]
    term_synsets = []
    for term in parsed.filtered:
        sid = g.primary_sense(term)
        if sid is not None and sid not in term_synsets:
            term_synsets.append(sid)
    links = entity_links(g, [sid for _, sid in profile.entities], term_synsets)
    return FeatureVector(
        tfidf=tfidf,
        numeric=numeric,
        categorical=onehot + pos_hist,
        temporal=extract_years(parsed.tokens),
        entity_links=links,
        semantic=weighted_embedding(stats.table, tfidf, parsed.stems),
    )


def extract_features(record: StructuredRecord, g: LexicalGraph, stats: CorpusStats) -> FeatureVector:
    if record.point_id not in stats.profiles:
        raise KeyError(f"no text profile for record {record.point_id}")
    return extract_profile_features(stats.profiles[record.point_id], record.label, g, stats)


def profile_from_resolved(parsed: ParsedQuery, resolved: EntityResolvedQuery | None) -> TextProfile:
    ents = []
    if resolved is not None:
        ents = [(e.text, e.synset) for e in resolved.entities if e.synset is not None]
    return TextProfile(parsed=parsed, entities=ents)


# ---------------------------------------------------------------------------
# golden feature files
# ---------------------------------------------------------------------------

FEATURE_HEADER = "# point_id\ttfidf(term:weight;...)\tnumeric(,)\tcategorical(,)\ttemporal(,)\tentity_links(synset:score;...)"


def format_features(rows: list[tuple[int, FeatureVector]]) -> str:
    lines = [FEATURE_HEADER]
    for pid, fv in rows:
        lines.append(
            "\t".join(
                [
                    str(pid),
                    ";".join(f"{t}:{w!r}" for t, w in sorted(fv.tfidf.items())),
                    ",".join(repr(v) for v in fv.numeric),
                    ",".join(repr(v) for v in fv.categorical),
                    ",".join(str(y) for y in fv.temporal),
                    ";".join(f"{s}:{v!r}" for s, v in fv.entity_links),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def parse_features(text: str) -> list[tuple[int, dict]]:
    """Read a golden feature file back into plain dictionaries."""
    out = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 6:
            raise ParseError(f"expected 6 columns, got {len(cols)}", line_no)
        try:
            pid = int(cols[0])

            def pairs(col):
                return [(k, float(v)) for k, v in (item.rsplit(":", 1) for item in col.split(";") if item)]

            out.append(
                (
                    pid,
                    {
                        "tfidf": dict(pairs(cols[1])),
                        "numeric": [float(v) for v in cols[2].split(",") if v],
                        "categorical": [float(v) for v in cols[3].split(",") if v],
                        "temporal": [int(v) for v in cols[4].split(",") if v],
                        "entity_links": pairs(cols[5]),
                    },
                )
            )
        except ValueError as exc:
            raise ParseError(f"malformed feature row: {exc}", line_no) from None
    return out


def write_features(path: str | Path, rows: list[tuple[int, FeatureVector]]) -> None:
    Path(path).write_text(format_features(rows), encoding="utf-8")
