"""Synset taxonomy with information-content similarity and query expansion."""

from __future__ import annotations

import math
import shlex
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .errors import ParseError, UndefinedMetricError
from .parser import ParsedQuery, porter_stem


@dataclass(frozen=True)
class Synset:
    id: str
    words: tuple[str, ...]
    parents: tuple[str, ...]
    gloss: str
    count: int


class LexicalGraph:
    """Immutable synset taxonomy with cumulative counts.

    ``cumulative_counts[s]`` is the own count of ``s`` plus the own counts of
    all its distinct descendants.
    """

    def __init__(self, synsets: list[Synset]):
        self.synsets: dict[str, Synset] = {}
        for s in synsets:
            if s.id in self.synsets:
                raise ParseError(f"duplicate synset id {s.id!r}")
            self.synsets[s.id] = s
        for s in synsets:
            for p in s.parents:
                if p not in self.synsets:
                    raise ParseError(f"synset {s.id!r} names unknown parent {p!r}")
        self.children: dict[str, list[str]] = {sid: [] for sid in self.synsets}
        for s in synsets:
            for p in s.parents:
                self.children[p].append(s.id)
        self._ancestors: dict[str, frozenset[str]] = {}
        for sid in self.synsets:
            self._ancestor_set(sid, ())
        roots = {sid for sid, s in self.synsets.items() if not s.parents}
        for sid in self.synsets:
            reachable = self._ancestors[sid] & roots
            if len(reachable) != 1:
                raise ParseError(f"synset {sid!r} reaches {len(reachable)} roots, expected exactly one")
        if len(roots) != 1:
            raise ParseError(f"taxonomy has {len(roots)} roots, expected exactly one")
        self.root = next(iter(roots))
        self.cumulative_counts = {
            sid: self.synsets[sid].count + sum(self.synsets[d].count for d in self._descendants(sid))
            for sid in self.synsets
        }
        self.total = self.cumulative_counts[self.root]
        if self.total <= 0:
            raise ParseError("root cumulative count must be positive")

        self._by_word: dict[str, list[str]] = {}
        self._by_stem: dict[str, list[str]] = {}
        for s in synsets:
            for w in s.words:
                self._by_word.setdefault(w, []).append(s.id)
                self._by_stem.setdefault(porter_stem(w), []).append(s.id)
        # number of synset pairs compared by relation_score (reported as metadata)
        self.pairs_compared = 0

    def _ancestor_set(self, sid: str, stack: tuple[str, ...]) -> frozenset[str]:
        if sid in self._ancestors:
            return self._ancestors[sid]
        if sid in stack:
            raise ParseError(f"cycle in parent links through {sid!r}")
        acc = {sid}
        for p in self.synsets[sid].parents:
            acc |= self._ancestor_set(p, stack + (sid,))
        self._ancestors[sid] = frozenset(acc)
        return self._ancestors[sid]

    def _descendants(self, sid: str) -> set[str]:
        seen: set[str] = set()
        todo = list(self.children[sid])
        while todo:
            c = todo.pop()
            if c not in seen:
                seen.add(c)
                todo.extend(self.children[c])
        return seen

    def ancestors(self, sid: str) -> frozenset[str]:
        """All ancestors of ``sid``, including ``sid`` itself."""
        return self._ancestors[sid]

    def senses(self, term: str) -> list[str]:
        """Candidate synsets for a term, in file order; exact lemma first, then by stem."""
        term = term.lower()
        if term in self._by_word:
            return list(self._by_word[term])
        return list(self._by_stem.get(porter_stem(term), []))

    def primary_sense(self, term: str) -> str | None:
        senses = self.senses(term)
        return senses[0] if senses else None


def _parse_synset_line(line: str, line_no: int) -> Synset:
    try:
        parts = shlex.split(line)
    except ValueError as exc:
        raise ParseError(f"bad quoting: {exc}", line_no) from None
    if len(parts) < 2 or parts[0] != "SYNSET":
        raise ParseError(f"expected 'SYNSET <id> ...', got {line!r}", line_no)
    attrs = {}
    for part in parts[2:]:
        key, sep, value = part.partition("=")
        if not sep:
            raise ParseError(f"expected key=value, got {part!r}", line_no)
        attrs[key] = value
    missing = {"words", "parents", "count", "gloss"} - attrs.keys()
    if missing:
        raise ParseError(f"synset line missing {sorted(missing)}", line_no)
    try:
        count = int(attrs["count"])
    except ValueError:
        raise ParseError(f"non-integer count {attrs['count']!r}", line_no) from None
    if count < 0:
        raise ParseError("count must be non-negative", line_no)
    return Synset(
        id=parts[1],
        words=tuple(w.strip().lower() for w in attrs["words"].split(",") if w.strip()),
        parents=tuple(p.strip() for p in attrs["parents"].split(",") if p.strip()),
        gloss=attrs["gloss"],
        count=count,
    )


def parse_lexical_graph(text: str) -> LexicalGraph:
    synsets = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        synsets.append(_parse_synset_line(line, line_no))
    return LexicalGraph(synsets)


def load_lexical_graph(path: str | Path | None = None) -> LexicalGraph:
    if path is None:
        return _bundled_graph()
    return parse_lexical_graph(Path(path).read_text(encoding="utf-8"))


@lru_cache(maxsize=1)
def _bundled_graph() -> LexicalGraph:
    text = resources.files("intentcache").joinpath("data", "taxonomy.txt").read_text(encoding="utf-8")
    return parse_lexical_graph(text)


def information_content(g: LexicalGraph, s: str) -> float:
    cum = g.cumulative_counts[s]
    if cum <= 0:
        raise UndefinedMetricError(f"information content undefined for {s!r}: zero cumulative count")
    return -math.log(cum / g.total)


def least_common_subsumer(g: LexicalGraph, s1: str, s2: str) -> str:
    common = g.ancestors(s1) & g.ancestors(s2)
    # max IC == min cumulative count; ties by smallest id
    return min(common, key=lambda sid: (g.cumulative_counts[sid], sid)) if common else g.root


def relation_score(g: LexicalGraph, s1: str, s2: str) -> float:
    """Lin similarity: 2 IC(lcs) / (IC(s1) + IC(s2))."""
    g.pairs_compared += 1
    denom = information_content(g, s1) + information_content(g, s2)
    if denom == 0.0:
        if s1 == s2:
            return 1.0
        raise UndefinedMetricError(f"relation score undefined for {s1!r} and {s2!r}: zero information content")
    return 2.0 * information_content(g, least_common_subsumer(g, s1, s2)) / denom


@dataclass(frozen=True)
class ExpandedQuery:
    base: ParsedQuery
    additions: list[tuple[str, str, float]] = field(default_factory=list)

    @property
    def terms(self) -> list[str]:
        return list(self.base.filtered) + [a[0] for a in self.additions]


def expand_query(g: LexicalGraph, p: ParsedQuery, threshold: float = 0.3) -> ExpandedQuery:
    """Add synonyms and sibling lemmas whose relation score clears ``threshold``."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"expansion threshold must lie in (0, 1], got {threshold}")
    base_terms = set(p.filtered) | set(p.stems)
    best: dict[str, tuple[str, float]] = {}
    for term in p.filtered:
        sid = g.primary_sense(term)
        if sid is None:
            continue
        candidates = [sid]
        for parent in g.synsets[sid].parents:
            candidates.extend(c for c in g.children[parent] if c != sid)
        for cand in candidates:
            try:
                score = relation_score(g, sid, cand)
            except UndefinedMetricError:
                continue
            if score < threshold:
                continue
            for word in g.synsets[cand].words:
                if word in base_terms or porter_stem(word) in base_terms:
                    continue
                if word not in best or score > best[word][1]:
                    best[word] = (term, score)
    additions = sorted(((w, src, sc) for w, (src, sc) in best.items()), key=lambda a: (-a[2], a[0]))
    return ExpandedQuery(base=p, additions=additions)
