"""Contextual fuzzy linguistic inference for query intent.

Keyword hits and the sentence type feed three if-then rules (interrogative
informational, statement navigational, imperative transactional) plus
half-weight shadow rules for mismatched sentence types.  Rule activations are
mapped through a context-scaled Gaussian membership, fuzzified and
defuzzified into a crisp score and a final class.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, UndefinedMetricError
from .parser import ParsedQuery, ParserResources, porter_stem, tag_word

INTENTS = ("I", "N", "T")  # informational, navigational, transactional; also the tie order
INTERROGATIVE, STATEMENT, IMPERATIVE, OTHER = "INTERROGATIVE", "STATEMENT", "IMPERATIVE", "OTHER"
PRIMARY_TYPE = {"I": INTERROGATIVE, "N": STATEMENT, "T": IMPERATIVE}
LM_FLOOR = 1e-6
SIGMA_FLOOR = 0.1

_TABLE_FILES = {"I": "keywords_informational.tsv", "N": "keywords_navigational.tsv", "T": "keywords_transactional.tsv"}


@dataclass(frozen=True)
class KeywordTables:
    patterns: dict[str, dict[tuple[str, ...], float]]  # class -> pattern tokens -> strength

    @property
    def max_len(self) -> int:
        return max((len(p) for table in self.patterns.values() for p in table), default=0)


def parse_keyword_table(text: str) -> dict[tuple[str, ...], float]:
    table = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        pattern, _, strength = line.partition("\t")
        value = float(strength) if strength.strip() else 1.0
        if not 0.0 < value <= 1.0:
            raise ConfigurationError(f"keyword strength must lie in (0, 1], got {value} for {pattern!r}")
        table[tuple(pattern.lower().split())] = value
    return table


def load_keyword_tables(
    informational: str | Path | None = None,
    navigational: str | Path | None = None,
    transactional: str | Path | None = None,
) -> KeywordTables:
    paths = {"I": informational, "N": navigational, "T": transactional}
    patterns = {}
    for cls, path in paths.items():
        if path is None:
            text = resources.files("intentcache").joinpath("data", _TABLE_FILES[cls]).read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        patterns[cls] = parse_keyword_table(text)
    seen: dict[tuple[str, ...], str] = {}
    for cls, table in patterns.items():
        for p in table:
            if p in seen:
                raise ConfigurationError(f"pattern {' '.join(p)!r} listed for both {seen[p]} and {cls}")
            seen[p] = cls
    return KeywordTables(patterns)


@dataclass
class IntentKeywordHits:
    hits: dict[str, list[tuple[str, float]]] = field(default_factory=lambda: {c: [] for c in INTENTS})

    def strength(self, cls: str) -> float:
        return sum(s for _, s in self.hits[cls])


def _token_matches(token: str, pattern_token: str) -> bool:
    return token == pattern_token or porter_stem(token) == porter_stem(pattern_token)


def extract_intent_keywords(p: ParsedQuery, tables: KeywordTables) -> IntentKeywordHits:
    """Greedy left-to-right scan of the normalized tokens, longest pattern first."""
    out = IntentKeywordHits()
    tokens = p.normalized
    i = 0
    while i < len(tokens):
        matched = None
        for length in range(min(tables.max_len, len(tokens) - i), 0, -1):
            window = tokens[i : i + length]
            for cls in INTENTS:
                for pattern, strength in tables.patterns[cls].items():
                    if len(pattern) == length and all(_token_matches(t, q) for t, q in zip(window, pattern)):
                        matched = (cls, " ".join(pattern), strength, length)
                        break
                if matched:
                    break
            if matched:
                break
        if matched:
            cls, pattern, strength, length = matched
            out.hits[cls].append((pattern, strength))
            i += length
        else:
            i += 1
    return out


def identify_sentence_type(p: ParsedQuery, res: ParserResources | None = None) -> str:
    if not p.normalized:
        return OTHER
    first = tag_word(p.normalized[0], res)
    if p.original.rstrip().endswith("?") or first == "WH":
        return INTERROGATIVE
    if first == "VERB":
        return IMPERATIVE
    return STATEMENT


@dataclass(frozen=True)
class FuzzyRule:
    keyword_class: str
    sentence_type: str
    intent: str
    weight: float
    shadow: bool = False

    def compatible(self, sentence_type: str) -> bool:
        return (sentence_type != self.sentence_type) if self.shadow else (sentence_type == self.sentence_type)


@dataclass(frozen=True)
class FuzzyRulebook:
    rules: tuple[FuzzyRule, ...]
    context: dict[tuple[str, str], float] = field(default_factory=dict)
    mu: float = 1.0
    sigma: float = 1.0
    rgt_ms: float = 0.0

    def rules_for(self, intent: str) -> list[FuzzyRule]:
        return [r for r in self.rules if r.intent == intent]


@dataclass(frozen=True)
class RuleConfig:
    primary_weight: float = 1.0
    shadow_weight: float = 0.5
    context: dict[tuple[str, str], float] = field(default_factory=dict)


def generate_rules(config: RuleConfig | None = None) -> FuzzyRulebook:
    config = config or RuleConfig()
    t0 = time.perf_counter()
    for w in (config.primary_weight, config.shadow_weight):
        if not 0.0 < w <= 1.0:
            raise ConfigurationError(f"rule weights must lie in (0, 1], got {w}")
    rules = []
    for cls in INTENTS:
        rules.append(FuzzyRule(cls, PRIMARY_TYPE[cls], cls, config.primary_weight))
    for cls in INTENTS:
        rules.append(FuzzyRule(cls, PRIMARY_TYPE[cls], cls, config.shadow_weight, shadow=True))
    rgt = (time.perf_counter() - t0) * 1000.0
    return FuzzyRulebook(rules=tuple(rules), context=dict(config.context), rgt_ms=rgt)


def rule_activations(rb: FuzzyRulebook, hits: IntentKeywordHits, sentence_type: str) -> list[float]:
    return [
        hits.strength(r.keyword_class) * (1.0 if r.compatible(sentence_type) else 0.0) * r.weight for r in rb.rules
    ]


def context_factor(rb: FuzzyRulebook, intent: str | None, context_tokens) -> float:
    f = 1.0
    for token in set(context_tokens):
        for (ctx_intent, ctx_token), mult in rb.context.items():
            if ctx_token == token and (intent is None or ctx_intent == intent):
                f *= mult
    return f


def clmf(rb: FuzzyRulebook, activation: float, context_tokens=(), intent: str | None = None) -> float:
    """Context-scaled Gaussian membership of a rule activation."""
    if rb.sigma <= 0.0:
        raise ValueError("membership sigma is 0; calibrate the rulebook on training queries first")
    f = context_factor(rb, intent, context_tokens)
    z = (activation - rb.mu) / rb.sigma
    return f * math.exp(-0.5 * z * z) / (rb.sigma * math.sqrt(2.0 * math.pi))


@dataclass
class Fuzzified:
    activations: list[float]
    memberships: dict[str, float]  # per intent, from its dominant rule, floored
    db: dict[str, float]
    ft_ms: float


def fuzzify(
    hits: IntentKeywordHits, st: str, rb: FuzzyRulebook, context_tokens=()
) -> Fuzzified:
    t0 = time.perf_counter()
    acts = rule_activations(rb, hits, st)
    memberships, db = {}, {}
    for intent in INTENTS:
        idx = [i for i, r in enumerate(rb.rules) if r.intent == intent]
        numerator = sum(acts[i] for i in idx)
        dominant = max(idx, key=lambda i: acts[i])
        lm = max(clmf(rb, acts[dominant], context_tokens, intent), LM_FLOOR)
        memberships[intent] = lm
        db[intent] = numerator / lm
    return Fuzzified(acts, memberships, db, (time.perf_counter() - t0) * 1000.0)


def defuzzify(db: dict[str, float], lm: dict[str, float]) -> tuple[float, str]:
    """Membership-weighted crisp score and the argmax intent (ties: I, N, T)."""
    total = sum(lm[i] for i in INTENTS)
    if total <= 0.0:
        raise UndefinedMetricError("UNDECIDED: every membership is zero")
    weighted = {i: db[i] * lm[i] for i in INTENTS}
    crisp = sum(weighted.values()) / total
    best = INTENTS[0]
    for i in INTENTS[1:]:
        if weighted[i] > weighted[best]:
            best = i
    return crisp, best


@dataclass
class IntentDecision:
    activations: list[float]
    memberships: dict[str, float]
    db: dict[str, float]
    crisp: float
    intent: str
    iterations: int
    t_max: int
    sentence_type: str
    hits: IntentKeywordHits
    rgt_ms: float = 0.0
    ft_ms: float = 0.0
    dft_ms: float = 0.0


def detect_intent(
    p: ParsedQuery,
    rb: FuzzyRulebook,
    t_max: int = 10,
    tables: KeywordTables | None = None,
    res: ParserResources | None = None,
) -> IntentDecision:
    """Iterate rules -> membership -> fuzzify -> crisp until the class is
    stable between consecutive iterations or ``t_max`` is reached."""
    if t_max < 1:
        raise ValueError(f"t_max must be at least 1, got {t_max}")
    tables = tables or default_keyword_tables()
    hits = extract_intent_keywords(p, tables)
    st = identify_sentence_type(p, res)
    rgt = ft = dft = 0.0
    previous = None
    t = 0
    fz = None
    crisp, intent = 0.0, INTENTS[0]
    while t < t_max:
        t0 = time.perf_counter()
        rule_activations(rb, hits, st)
        rgt += (time.perf_counter() - t0) * 1000.0
        fz = fuzzify(hits, st, rb, p.normalized)
        ft += fz.ft_ms
        t0 = time.perf_counter()
        try:
            crisp, intent = defuzzify(fz.db, fz.memberships)
        except UndefinedMetricError:
            crisp, intent = 0.0, INTENTS[0]
        dft += (time.perf_counter() - t0) * 1000.0
        t += 1
        if intent == previous:
            break
        previous = intent
    return IntentDecision(
        activations=fz.activations,
        memberships=fz.memberships,
        db=fz.db,
        crisp=crisp,
        intent=intent,
        iterations=t,
        t_max=t_max,
        sentence_type=st,
        hits=hits,
        rgt_ms=rgt,
        ft_ms=ft,
        dft_ms=dft,
    )


def calibrate(rb: FuzzyRulebook, queries: list[ParsedQuery], tables: KeywordTables | None = None) -> FuzzyRulebook:
    """Set the membership mean and spread from the non-zero rule activations
    observed on ``queries``; sigma is floored at 0.1."""
    tables = tables or default_keyword_tables()
    acts = []
    for p in queries:
        hits = extract_intent_keywords(p, tables)
        st = identify_sentence_type(p)
        acts.extend(a for a in rule_activations(rb, hits, st) if a > 0.0)
    if len(acts) < 2:
        return rb
    return replace(rb, mu=float(np.mean(acts)), sigma=max(float(np.std(acts)), SIGMA_FLOOR))


_DEFAULT_TABLES: KeywordTables | None = None


def default_keyword_tables() -> KeywordTables:
    global _DEFAULT_TABLES
    if _DEFAULT_TABLES is None:
        _DEFAULT_TABLES = load_keyword_tables()
    return _DEFAULT_TABLES
