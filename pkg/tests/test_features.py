import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intentcache.encoder import build_embedding_table
from intentcache.errors import ParseError
from intentcache.features import (
    FeatureVector,
    TextProfile,
    build_corpus_stats,
    extract_features,
    extract_years,
    format_features,
    parse_features,
    tf_idf,
    weighted_embedding,
)
from intentcache.optics import NOISE, StructuredRecord
from intentcache.parser import TAGSET, parse

TEXTS = {1: "the dog sat with a cat in 1965", 2: "dog ran", 3: "cat ran to the library"}
LABELS = {1: 0, 2: 1, 3: NOISE}


def small_run():
    profiles = {k: TextProfile(parse(v)) for k, v in TEXTS.items()}
    profiles[1].entities = [("dog", "dog.n.01")]
    table = build_embedding_table([w for p in profiles.values() for w in p.parsed.filtered], 4, 0)
    return build_corpus_stats(table, profiles, [LABELS[k] for k in TEXTS])


def rows_for(stats, graph, ids):
    return [(k, extract_features(StructuredRecord(k, LABELS[k], 0.0, 0.0, ()), graph, stats)) for k in ids]


def test_tf_idf_examples():
    corpus = [["cat", "sat"], ["cat", "ran"], ["dog", "ran"]]
    w = tf_idf(corpus, 0)
    assert w["cat"] == pytest.approx(math.log(1.5), abs=1e-15)
    assert w["cat"] == pytest.approx(0.4055, abs=1e-4)
    assert "dog" not in w
    assert tf_idf([["a", "b"], ["a"]], 0) == {"b": math.log(2)}  # "a" is everywhere
    with pytest.raises(ValueError):
        tf_idf([], 0)


_docs = st.lists(st.lists(st.sampled_from("abcdef"), max_size=6), min_size=1, max_size=5)


@given(_docs, st.data())
@settings(max_examples=200, deadline=None)
def test_tf_idf_matches_recount(corpus, data):
    doc = data.draw(st.integers(0, len(corpus) - 1))
    expected = {}
    for term in set(corpus[doc]):
        tf = sum(1 for t in corpus[doc] if t == term)
        df = sum(1 for d in corpus if term in d)
        if df < len(corpus):
            expected[term] = tf * math.log(len(corpus) / df)
    assert tf_idf(corpus, doc) == expected
    assert all(v >= 0 for v in tf_idf(corpus, doc).values())


def test_years():
    assert extract_years(["in", "1965", "and", "99", "3000", "2024x"]) == [1965]
    assert extract_years(["no", "digits"]) == []


def test_golden_features(fixtures_dir, graph):
    stats = small_run()
    golden_text = (fixtures_dir / "golden_features.tsv").read_text()
    assert format_features(rows_for(stats, graph, [1, 2, 3])) == golden_text
    golden = dict(parse_features(golden_text))
    # hand-tabulated values behind the frozen file
    one = golden[1]
    assert one["tfidf"] == {"1965": math.log(3), "cat": math.log(1.5), "dog": math.log(1.5), "sat": math.log(3)}
    assert one["numeric"] == [8.0, 4.0, 4.0, 3.25]
    pos = [0.0] * len(TAGSET)
    pos[TAGSET.index("NOUN")], pos[TAGSET.index("NUM")] = 0.75, 0.25
    assert one["categorical"] == [1.0, 0.0, 0.0] + pos
    assert one["temporal"] == [1965]
    lin = 2 * math.log(0.6) / (math.log(0.3) + math.log(0.2))
    assert one["entity_links"][0][0] == "dog.n.01"
    assert one["entity_links"][0][1] == pytest.approx(lin, abs=1e-12)
    assert golden[3]["categorical"][:3] == [0.0, 0.0, 1.0]  # the noise slot
    assert golden[2]["temporal"] == [] and golden[2]["entity_links"] == []


def test_onehot_position(graph):
    profiles = {i: TextProfile(parse("word")) for i in range(4)}
    stats = build_corpus_stats(build_embedding_table(["word"], 4, 0), profiles, [0, 1, 2, 3])
    fv = extract_features(StructuredRecord(2, 2, 0.0, 0.0, ()), graph, stats)
    assert fv.categorical[:4] == [0.0, 0.0, 1.0, 0.0]


def test_extraction_is_order_independent_and_dense_width_fixed(graph):
    stats = small_run()
    forward = dict(rows_for(stats, graph, [1, 2, 3]))
    backward = dict(rows_for(stats, graph, [3, 2, 1]))
    for k in TEXTS:
        np.testing.assert_array_equal(forward[k].dense(), backward[k].dense())
        assert forward[k].dense().shape == (stats.dense_width(),)
        assert sum(forward[k].categorical[: stats.onehot_width]) == 1.0


def test_unknown_record_and_malformed_golden(graph):
    stats = small_run()
    with pytest.raises(KeyError):
        extract_features(StructuredRecord(99, 0, 0.0, 0.0, ()), graph, stats)
    with pytest.raises(ParseError) as exc:
        parse_features("# header\n1\tx:1\n")
    assert exc.value.line == 2


def test_weighted_embedding():
    table = build_embedding_table(["alpha", "beta"], 3, 0)
    rows = table.lookup(["alpha", "beta"])
    got = weighted_embedding(table, {"alpha": 1.0, "beta": 3.0}, ["alpha", "beta"])
    np.testing.assert_allclose(got, (rows[0] + 3 * rows[1]) / 4)
    np.testing.assert_allclose(weighted_embedding(table, {}, ["alpha", "beta"]), rows.mean(axis=0))
    assert not weighted_embedding(table, {}, []).any()


def test_dense_layout():
    fv = FeatureVector({}, [0.0, 1.0], [1.0], [2000, 2100], [("x", 0.5)], np.array([9.0]))
    dense = fv.dense()
    assert dense[0] == 9.0
    assert dense[2] == pytest.approx(math.log(2))
    assert list(dense[-3:]) == pytest.approx([2.0, (2050 - 1400) / 700, 0.5])
    assert Counter(type(v) for v in dense.tolist()) == Counter({float: len(dense)})
