import itertools
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intentcache.errors import ParseError, UndefinedMetricError
from intentcache.lexicon import (
    expand_query,
    information_content,
    least_common_subsumer,
    parse_lexical_graph,
    relation_score,
)
from intentcache.parser import parse


def test_information_content(graph):
    assert graph.total == 100
    assert information_content(graph, "entity.n.01") == 0.0
    assert information_content(graph, "animal.n.01") == pytest.approx(-math.log(0.6), abs=1e-12)
    assert information_content(graph, "animal.n.01") == pytest.approx(0.5108, abs=1e-4)
    assert information_content(graph, "dog.n.01") == pytest.approx(1.2040, abs=1e-4)


def test_information_content_undefined_for_zero_count():
    g = parse_lexical_graph(
        'SYNSET r words=r parents= count=1 gloss="root"\nSYNSET z words=z parents=r count=0 gloss="empty"\n'
    )
    with pytest.raises(UndefinedMetricError):
        information_content(g, "z")


def test_lcs(graph):
    assert least_common_subsumer(graph, "dog.n.01", "cat.n.01") == "animal.n.01"
    assert least_common_subsumer(graph, "dog.n.01", "dog.n.01") == "dog.n.01"
    assert least_common_subsumer(graph, "dog.n.01", "entity.n.01") == "entity.n.01"


def test_relation_score_examples(graph):
    assert relation_score(graph, "dog.n.01", "dog.n.01") == 1.0
    ic = lambda c: -math.log(c / 100)  # noqa: E731
    expected = 2 * ic(60) / (ic(30) + ic(20))
    assert relation_score(graph, "dog.n.01", "cat.n.01") == pytest.approx(expected, abs=1e-12)
    assert relation_score(graph, "dog.n.01", "cat.n.01") == pytest.approx(0.3632, abs=1e-3)
    assert relation_score(graph, "dog.n.01", "apple.n.01") == 0.0
    assert relation_score(graph, "entity.n.01", "entity.n.01") == 1.0


def test_relation_score_counts_compared_pairs(graph):
    before = graph.pairs_compared
    relation_score(graph, "dog.n.01", "cat.n.01")
    assert graph.pairs_compared == before + 1


def test_relation_score_properties_exhaustive(graph):
    ids = sorted(graph.synsets)
    for a, b in itertools.combinations_with_replacement(ids, 2):
        try:
            s_ab = relation_score(graph, a, b)
        except UndefinedMetricError:
            continue
        s_ba = relation_score(graph, b, a)
        assert abs(s_ab - s_ba) <= 1e-12
        assert 0.0 <= s_ab <= 1.0
        if a == b:
            assert s_ab == 1.0


def test_ic_antitone_along_ancestors(graph):
    for sid, syn in graph.synsets.items():
        for parent in syn.parents:
            assert information_content(graph, parent) <= information_content(graph, sid)


def test_expand_query(graph):
    ex = expand_query(graph, parse("dog training"), 0.3)
    cat = [a for a in ex.additions if a[0] == "cat"]
    assert cat and cat[0][1] == "dog" and cat[0][2] == pytest.approx(0.3632, abs=1e-3)
    assert "dog" not in [a[0] for a in ex.additions]
    assert all(score >= 0.3 for _, _, score in ex.additions)
    exact = expand_query(graph, parse("dog"), 1.0)
    assert [a[0] for a in exact.additions] == ["hound"]
    assert expand_query(graph, parse("zzzz qqqq"), 0.3).additions == []


def test_expand_query_rejects_bad_threshold(graph):
    with pytest.raises(ValueError):
        expand_query(graph, parse("dog"), 0.0)


@given(t1=st.floats(0.01, 1.0), t2=st.floats(0.01, 1.0), words=st.lists(st.sampled_from(
    ["dog", "cat", "apple", "library", "bird", "fish", "puppy", "company", "catalog", "journal"]), min_size=1, max_size=4))
@settings(max_examples=80, deadline=None)
def test_raising_threshold_never_adds(graph, t1, t2, words):
    lo, hi = sorted((t1, t2))
    p = parse(" ".join(words))
    low = {a[0] for a in expand_query(graph, p, lo).additions}
    high = {a[0] for a in expand_query(graph, p, hi).additions}
    assert high <= low


@pytest.mark.parametrize(
    "text",
    [
        'SYNSET a words=a parents=b count=1 gloss="x"\nSYNSET b words=b parents=a count=1 gloss="y"\n',  # cycle
        'SYNSET a words=a parents=missing count=1 gloss="x"\n',  # unknown parent
        'SYNSET a words=a parents= count=1 gloss="x"\nSYNSET b words=b parents= count=1 gloss="y"\n',  # two roots
        'SYNSET a words=a parents= count=x gloss="x"\n',  # bad count
    ],
)
def test_malformed_graphs(text):
    with pytest.raises(ParseError):
        parse_lexical_graph(text)
