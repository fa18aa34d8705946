import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from intentcache.cache import (
    CacheEntry,
    CacheStore,
    PipelineAnswer,
    cosine_similarity,
    load_cache,
    save_cache,
    similarity_loop,
)
from intentcache.errors import UndefinedMetricError


def entry(key, ids=(1,), intent="I"):
    return CacheEntry(key=np.asarray(key, dtype=float), intent=intent, result_ids=list(ids))


def test_cosine_examples():
    assert cosine_similarity([2.0, 3.0], [2.0, 3.0]) == 1.0
    assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0
    assert cosine_similarity([1.0, 1.0], [1.0, 0.0]) == pytest.approx(1 / math.sqrt(2), abs=1e-15)
    with pytest.raises(UndefinedMetricError):
        cosine_similarity([0.0, 0.0], [1.0, 0.0])


_vec = arrays(np.float64, (4,), elements=st.floats(-10, 10)).filter(lambda v: np.linalg.norm(v) > 1e-3)


@given(_vec, _vec, st.floats(0.01, 100))
@settings(max_examples=200, deadline=None)
def test_cosine_properties(a, b, c):
    assert cosine_similarity(a, b) == pytest.approx(cosine_similarity(b, a), abs=1e-15)
    assert -1.0 <= cosine_similarity(a, b) <= 1.0
    assert cosine_similarity(a, c * a) == pytest.approx(1.0, abs=1e-12)


def test_entry_validation():
    with pytest.raises(ValueError):
        entry([0.0, 0.0])
    with pytest.raises(ValueError):
        entry([1.0], ids=())


def test_lookup_examples():
    store = CacheStore()
    assert store.lookup([1.0, 0.0]) is None
    e = entry([1.0, 2.0])
    store.insert(e)
    hit = store.lookup([1.0, 2.0], 0.9)
    assert hit.entry is e and hit.similarity == 1.0 and e.hits == 1
    near = CacheStore()
    near.insert(entry([1.0, 0.0]))
    key = [0.95, math.sqrt(1 - 0.95**2)]
    hit = near.lookup(key, 0.9)
    assert hit is not None and hit.similarity == pytest.approx(0.95, abs=1e-12)
    assert near.lookup(key, 0.96) is None
    assert (near.lookups, near.hits, near.misses) == (2, 1, 1)
    with pytest.raises(ValueError):
        near.lookup(key, 0.0)


def test_lru_examples():
    store = CacheStore(capacity=2)
    a, b, c = entry([1.0, 0.0, 0.0]), entry([0.0, 1.0, 0.0]), entry([0.0, 0.0, 1.0])
    store.insert(a)
    store.insert(b)
    assert store.lookup([1.0, 0.0, 0.0]) is not None
    store.insert(c)
    keys = {e.key.tobytes() for e in store.entries.values()}
    assert keys == {a.key.tobytes(), c.key.tobytes()} and store.evictions == 1
    same = CacheStore()
    same.insert(entry([1.0, 1.0], ids=[1]))
    same.insert(entry([1.0, 1.0], ids=[2]))
    assert len(same) == 1 and next(iter(same.entries.values())).result_ids == [2]
    small = CacheStore(capacity=10)
    for i in range(100):
        small.insert(entry([1.0, float(i)]))
    assert len(small) == 10
    assert small.cuo_ms >= 0
    with pytest.raises(ValueError):
        CacheStore(0)


@given(st.integers(2, 6), st.lists(st.integers(0, 50), min_size=1, max_size=40))
@settings(max_examples=100, deadline=None)
def test_hot_entry_is_never_evicted(capacity, keys):
    store = CacheStore(capacity)
    hot = entry([1.0, 0.0, 0.0])
    store.insert(hot)
    for k in keys:
        store.insert(entry([0.0, 1.0, float(k) + 1.0]))
        assert store.lookup([1.0, 0.0, 0.0], 1.0) is not None
        assert len(store) <= capacity
        assert store.hits + store.misses == store.lookups


def _stub_pipeline(key, reps, ranked, calls):
    def run(threshold):
        calls.append(threshold)
        return PipelineAnswer(np.asarray(key, float), "N", list(ranked), lambda rid: np.asarray(reps[rid], float))

    return run


def test_loop_single_round_and_cache_replay():
    store = CacheStore()
    calls = []
    run = _stub_pipeline([1.0, 0.0], {7: [1.0, 0.1], 8: [0.0, 1.0]}, [7, 8], calls)
    first = similarity_loop(store, np.array([1.0, 0.0]), run)
    assert first.rounds == 1 and not first.from_cache and not first.below_threshold
    assert first.result_ids == [7, 8] and calls == [0.3]
    again = similarity_loop(store, np.array([1.0, 0.0]), run)
    assert again.from_cache and again.similarity == 1.0 and again.rounds == 1
    assert calls == [0.3]  # no pipeline run for the repeat


def test_loop_advances_and_relaxes():
    store = CacheStore()
    calls = []
    reps = {1: [0.0, 1.0], 2: [1.0, 0.05], 3: [1.0, 0.0]}
    result = similarity_loop(store, np.array([1.0, 0.0]), _stub_pipeline([1.0, 0.0], reps, [1, 2, 3], calls))
    assert result.rounds == 2 and result.result_ids == [2, 1, 3]
    assert calls == pytest.approx([0.3, 0.25])
    assert [t.candidate_rank for t in result.trace] == [0, 1]


def test_loop_adversarial_exhausts_rounds():
    store = CacheStore()
    calls = []
    # the query vocabulary and every answer vocabulary are orthogonal
    reps = {i: [0.0, 1.0, float(i)] for i in range(1, 6)}
    result = similarity_loop(
        store, np.array([1.0, 0.0, 0.0]), _stub_pipeline([1.0, 0.0, 0.0], reps, [1, 2, 3, 4, 5], calls), max_rounds=4
    )
    assert result.rounds == 4 and result.below_threshold and result.similarity == 0.0
    assert calls == pytest.approx([0.3, 0.25, 0.2, 0.15])
    with pytest.raises(ValueError):
        similarity_loop(store, np.array([1.0]), _stub_pipeline([1.0], {1: [1.0]}, [1], []), max_rounds=0)


@given(st.lists(st.tuples(st.integers(-5, 5), st.integers(-5, 5), st.integers(1, 5)), min_size=1, max_size=12),
       st.floats(0.05, 1.0), st.integers(1, 5))
@settings(max_examples=100, deadline=None)
def test_replay_hits_at_least_half(queries, theta_cache, max_rounds):
    store = CacheStore(64)
    for a, b, c in queries:
        key = np.array([float(a), float(b), float(c)])
        reps = {1: [1.0, 0.0, 0.0], 2: [0.0, 1.0, 0.0]}
        for _ in range(2):
            res = similarity_loop(store, key, _stub_pipeline(key, reps, [1, 2], []),
                                  theta_cache=theta_cache, max_rounds=max_rounds)
            assert 1 <= res.rounds <= max_rounds
            if res.from_cache:
                assert res.similarity >= theta_cache
    assert store.hits / store.lookups >= 0.5
    assert store.hits + store.misses == store.lookups


def test_concurrent_counters_stay_consistent():
    store = CacheStore(16)
    rng = np.random.default_rng(0)
    keys = [rng.normal(size=4) for _ in range(32)]

    def worker(offset):
        for i in range(200):
            k = keys[(i + offset) % len(keys)]
            if store.lookup(k) is None:
                store.insert(entry(k))

    threads = [threading.Thread(target=worker, args=(j,)) for j in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert store.lookups == 800 and store.hits + store.misses == 800 and len(store) <= 16


def test_persistence_round_trip(tmp_path):
    store = CacheStore(5)
    store.insert(entry([1.0, 2.0], ids=[4, 2], intent="T"))
    store.insert(entry([3.0, 1.0], ids=[9], intent="N"))
    store.lookup([1.0, 2.0])
    save_cache(tmp_path / "c.bin", store)
    back = load_cache(tmp_path / "c.bin")
    assert back.capacity == 5 and len(back) == 2
    assert [(e.intent, e.result_ids) for e in back.entries.values()] == [("N", [9]), ("T", [4, 2])]
    assert back.lookup([1.0, 2.0]).entry.hits == 2
