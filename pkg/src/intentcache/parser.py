"""Query parsing: tokenization, normalization, stop-word removal, Porter
stemming and lexicon-driven POS tagging.

The stage tables (stop words, contractions, abbreviations, POS lexicon) are
plain data files; :class:`ParserResources` loads them once and is shared
read-only afterwards.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .errors import ConfigurationError

TAGSET = ("NOUN", "VERB", "ADJ", "ADV", "PRON", "DET", "ADP", "NUM", "WH", "X")

# abbreviation with dots ("u.s."), word with intra-word - ' . joins, lone symbol
_TOKEN_RE = re.compile(
    r"(?:[^\W\d_]\.){2,}"
    r"|[^\W_]+(?:[-'.][^\W_]+)*"
    r"|[^\w\s]|_"
)
_NUMBER_RE = re.compile(r"^\d+(?:[.,]\d+)*$")

_SUFFIX_RULES = (
    ("ly", "ADV"),
    ("ness", "NOUN"),
    ("ment", "NOUN"),
    ("tion", "NOUN"),
    ("sion", "NOUN"),
    ("ity", "NOUN"),
    ("ous", "ADJ"),
    ("ful", "ADJ"),
    ("ive", "ADJ"),
    ("able", "ADJ"),
    ("ible", "ADJ"),
    ("less", "ADJ"),
    ("ize", "VERB"),
    ("ise", "VERB"),
    ("ify", "VERB"),
)


def _read_data_text(name: str) -> str:
    return resources.files("intentcache").joinpath("data", name).read_text(encoding="utf-8")


def _table_lines(text: str):
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            yield line


def load_word_list(text: str) -> frozenset[str]:
    return frozenset(line.lower() for line in _table_lines(text))


def load_two_column(text: str) -> dict[str, str]:
    table = {}
    for line in _table_lines(text):
        key, sep, value = line.partition("\t")
        if not sep:
            raise ConfigurationError(f"expected two tab-separated columns: {line!r}")
        table[key.strip().lower()] = value.strip()
    return table


@dataclass(frozen=True)
class ParserResources:
    stopwords: frozenset[str]
    contractions: dict[str, list[str]]
    abbreviations: dict[str, list[str]]
    lexicon: dict[str, str]

    @classmethod
    def from_files(
        cls,
        stopwords: str | Path | None = None,
        contractions: str | Path | None = None,
        abbreviations: str | Path | None = None,
        lexicon: str | Path | None = None,
    ) -> "ParserResources":
        """Load tables from paths; ``None`` selects the bundled file."""

        def read(path, default_name):
            if path is None:
                return _read_data_text(default_name)
            try:
                return Path(path).read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigurationError(f"cannot read {default_name} table at {path}: {exc}") from exc

        pos = load_two_column(read(lexicon, "pos_lexicon.tsv"))
        bad = {tag for tag in pos.values() if tag not in TAGSET}
        if bad:
            raise ConfigurationError(f"POS lexicon uses tags outside the tagset: {sorted(bad)}")
        return cls(
            stopwords=load_word_list(read(stopwords, "stopwords.txt")),
            contractions={k: v.lower().split() for k, v in load_two_column(read(contractions, "contractions.tsv")).items()},
            abbreviations={k: v.lower().split() for k, v in load_two_column(read(abbreviations, "abbreviations.tsv")).items()},
            lexicon=pos,
        )


@lru_cache(maxsize=1)
def default_resources() -> ParserResources:
    return ParserResources.from_files()


@dataclass(frozen=True)
class ParsedQuery:
    original: str
    tokens: list[str] = field(default_factory=list)
    normalized: list[str] = field(default_factory=list)
    filtered: list[str] = field(default_factory=list)
    stems: list[str] = field(default_factory=list)
    tagged: list[tuple[str, str, str]] = field(default_factory=list)


def tokenize(query: str) -> list[str]:
    return _TOKEN_RE.findall(query)


def _is_punctuation(token: str) -> bool:
    return not any(ch.isalnum() for ch in token)


def normalize(tokens: list[str], res: ParserResources | None = None) -> list[str]:
    """Lowercase, drop punctuation-only tokens, expand contractions and
    abbreviations, strip possessive ``'s``."""
    res = res or default_resources()
    out: list[str] = []
    for token in tokens:
        low = token.lower()
        if _is_punctuation(low):
            continue
        if low in res.contractions:
            out.extend(res.contractions[low])
        elif low in res.abbreviations:
            out.extend(res.abbreviations[low])
        elif low.endswith("'s") and len(low) > 2:
            out.append(low[:-2])
        else:
            out.append(low)
    return out


def remove_stopwords(tokens: list[str], res: ParserResources | None = None) -> list[str]:
    res = res or default_resources()
    return [t for t in tokens if t not in res.stopwords]


# ---------------------------------------------------------------------------
# Porter stemmer (the 1980 algorithm, without later extensions)
# ---------------------------------------------------------------------------

def _is_consonant(word: str, i: int) -> bool:
    ch = word[i]
    if ch in "aeiou":
        return False
    if ch == "y":
        return i == 0 or not _is_consonant(word, i - 1)
    return True


def _measure(stem: str) -> int:
    # count VC sequences in [C](VC)^m[V]
    m = 0
    prev_vowel = False
    for i in range(len(stem)):
        cons = _is_consonant(stem, i)
        if cons and prev_vowel:
            m += 1
        prev_vowel = not cons
    return m


def _has_vowel(stem: str) -> bool:
    return any(not _is_consonant(stem, i) for i in range(len(stem)))


def _ends_double_consonant(word: str) -> bool:
    return len(word) >= 2 and word[-1] == word[-2] and _is_consonant(word, len(word) - 1)


def _ends_cvc(word: str) -> bool:
    if len(word) < 3:
        return False
    return (
        _is_consonant(word, len(word) - 3)
        and not _is_consonant(word, len(word) - 2)
        and _is_consonant(word, len(word) - 1)
        and word[-1] not in "wxy"
    )


def _apply_longest(word: str, rules, condition) -> tuple[str, bool]:
    """Apply the rule with the longest matching suffix if its condition holds.

    Returns the new word and whether a rule fired.  A matching rule whose
    condition fails still blocks shorter rules.
    """
    best = None
    for suffix, repl in rules:
        if word.endswith(suffix) and (best is None or len(suffix) > len(best[0])):
            best = (suffix, repl)
    if best is None:
        return word, False
    suffix, repl = best
    stem = word[: len(word) - len(suffix)]
    if condition(stem, suffix):
        return stem + repl, True
    return word, False


_STEP2 = (
    ("ational", "ate"), ("tional", "tion"), ("enci", "ence"), ("anci", "ance"),
    ("izer", "ize"), ("abli", "able"), ("alli", "al"), ("entli", "ent"),
    ("eli", "e"), ("ousli", "ous"), ("ization", "ize"), ("ation", "ate"),
    ("ator", "ate"), ("alism", "al"), ("iveness", "ive"), ("fulness", "ful"),
    ("ousness", "ous"), ("aliti", "al"), ("iviti", "ive"), ("biliti", "ble"),
)
_STEP3 = (
    ("icate", "ic"), ("ative", ""), ("alize", "al"), ("iciti", "ic"),
    ("ical", "ic"), ("ful", ""), ("ness", ""),
)
_STEP4 = tuple(
    (s, "")
    for s in (
        "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement",
        "ment", "ent", "ion", "ou", "ism", "ate", "iti", "ous", "ive", "ize",
    )
)


def porter_stem(word: str) -> str:
    word = word.lower()
    if len(word) <= 2:
        return word

    # step 1a
    word, _ = _apply_longest(
        word, (("sses", "ss"), ("ies", "i"), ("ss", "ss"), ("s", "")), lambda s, x: True
    )

    # step 1b
    if word.endswith("eed"):
        if _measure(word[:-3]) > 0:
            word = word[:-1]
    else:
        fired = False
        for suffix in ("ed", "ing"):
            if word.endswith(suffix) and _has_vowel(word[: -len(suffix)]):
                word = word[: -len(suffix)]
                fired = True
                break
        if fired:
            if word.endswith(("at", "bl", "iz")):
                word += "e"
            elif _ends_double_consonant(word) and word[-1] not in "lsz":
                word = word[:-1]
            elif _measure(word) == 1 and _ends_cvc(word):
                word += "e"

    # step 1c
    if word.endswith("y") and _has_vowel(word[:-1]):
        word = word[:-1] + "i"

    word, _ = _apply_longest(word, _STEP2, lambda s, x: _measure(s) > 0)
    word, _ = _apply_longest(word, _STEP3, lambda s, x: _measure(s) > 0)
    word, _ = _apply_longest(
        word,
        _STEP4,
        lambda s, x: _measure(s) > 1 and (x != "ion" or s.endswith(("s", "t"))),
    )

    # step 5a
    if word.endswith("e"):
        stem = word[:-1]
        m = _measure(stem)
        if m > 1 or (m == 1 and not _ends_cvc(stem)):
            word = stem

    # step 5b
    if _measure(word) > 1 and _ends_double_consonant(word) and word.endswith("l"):
        word = word[:-1]
    return word


def stem(tokens: list[str]) -> list[str]:
    return [porter_stem(t) for t in tokens]


def tag_word(surface: str, res: ParserResources | None = None) -> str:
    res = res or default_resources()
    low = surface.lower()
    if low in res.lexicon:
        return res.lexicon[low]
    if _NUMBER_RE.match(low):
        return "NUM"
    if not any(ch.isalpha() for ch in low):
        return "X"
    for suffix, tag in _SUFFIX_RULES:
        if low.endswith(suffix) and len(low) > len(suffix) + 2:
            return tag
    return "NOUN"


def pos_tag(stems: list[str], surfaces: list[str], res: ParserResources | None = None) -> list[tuple[str, str, str]]:
    if len(stems) != len(surfaces):
        raise ValueError(f"stems and surfaces differ in length ({len(stems)} != {len(surfaces)})")
    return [(s, w, tag_word(w, res)) for s, w in zip(stems, surfaces)]


def parse(query: str, res: ParserResources | None = None) -> ParsedQuery:
    res = res or default_resources()
    tokens = tokenize(query)
    normalized = normalize(tokens, res)
    filtered = remove_stopwords(normalized, res)
    stems = stem(filtered)
    return ParsedQuery(
        original=query,
        tokens=tokens,
        normalized=normalized,
        filtered=filtered,
        stems=stems,
        tagged=pos_tag(stems, filtered, res),
    )
