"""Cosine-gated semantic cache with LRU eviction, and the refinement loop
that falls back to the full pipeline on a miss."""

from __future__ import annotations

import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import UndefinedMetricError
from .intent import INTENTS
from .serialization import read_params, write_params


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise UndefinedMetricError("cosine similarity of a zero-norm vector")
    # clip rounding noise so the result stays in [-1, 1]
    return float(min(1.0, max(-1.0, float(a @ b) / (na * nb))))


def _now_ms() -> float:
    return time.monotonic() * 1000.0


@dataclass
class CacheEntry:
    key: np.ndarray
    intent: str
    result_ids: list[int]
    created_ms: float = field(default_factory=_now_ms)
    last_hit_ms: float = 0.0
    hits: int = 0
    similarity: float = 1.0  # answer quality when the entry was stored

    def __post_init__(self):
        self.key = np.asarray(self.key, dtype=np.float64).ravel()
        if not np.linalg.norm(self.key) > 0.0:
            raise ValueError("cache key must have nonzero norm")
        if not self.result_ids:
            raise ValueError("cache entry needs at least one result id")
        if not self.last_hit_ms:
            self.last_hit_ms = self.created_ms

    def key_bytes(self) -> bytes:
        return self.key.tobytes()


@dataclass
class CacheHit:
    entry: CacheEntry
    similarity: float


class CacheStore:
    """Bounded store; iteration order of ``entries`` is least- to most-recently used.

    Lookups and inserts take one lock, which keeps the counters and the
    recency order consistent when several workers share the store.
    """

    def __init__(self, capacity: int = 1024):
        if capacity < 1:
            raise ValueError(f"cache capacity must be at least 1, got {capacity}")
        self.capacity = capacity
        self.entries: OrderedDict[bytes, CacheEntry] = OrderedDict()
        self.lookups = 0
        self.hits = 0
        self.misses = 0
        self.cuo_ms = 0.0
        self.evictions = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, key, theta_cache: float = 0.9) -> CacheHit | None:
        if not 0.0 < theta_cache <= 1.0:
            raise ValueError(f"cache threshold must lie in (0, 1], got {theta_cache}")
        key = np.asarray(key, dtype=np.float64).ravel()
        with self._lock:
            self.lookups += 1
            best, best_sim = None, -np.inf
            if np.linalg.norm(key) > 0.0:
                exact = self.entries.get(key.tobytes())
                if exact is not None:
                    best, best_sim = exact, 1.0
                else:
                    for entry in self.entries.values():
                        sim = cosine_similarity(key, entry.key)
                        if sim > best_sim:
                            best, best_sim = entry, sim
            if best is None or best_sim < theta_cache:
                self.misses += 1
                return None
            self.hits += 1
            best.hits += 1
            best.last_hit_ms = _now_ms()
            self.entries.move_to_end(best.key_bytes())
            return CacheHit(best, best_sim)

    def insert(self, entry: CacheEntry) -> None:
        t0 = time.perf_counter()
        with self._lock:
            k = entry.key_bytes()
            if k in self.entries:
                del self.entries[k]
            self.entries[k] = entry
            while len(self.entries) > self.capacity:
                self.entries.popitem(last=False)
                self.evictions += 1
            self.cuo_ms += (time.perf_counter() - t0) * 1000.0


def save_cache(path, store: CacheStore) -> None:
    """Entries as flat sections ``e<i>.key``, ``e<i>.results`` and ``e<i>.meta``."""
    sections = {}
    for i, e in enumerate(store.entries.values()):
        sections[f"e{i}.key"] = e.key
        sections[f"e{i}.results"] = np.asarray(e.result_ids, dtype=np.float64)
        sections[f"e{i}.meta"] = np.array([INTENTS.index(e.intent), e.hits, e.similarity], dtype=np.float64)
    sections["capacity"] = np.array([store.capacity], dtype=np.float64)
    write_params(path, sections)


def load_cache(path) -> CacheStore:
    sections, _ = read_params(path)
    store = CacheStore(int(sections.pop("capacity")[0]))
    n = sum(1 for name in sections if name.endswith(".key"))
    for i in range(n):
        meta = sections[f"e{i}.meta"]
        store.insert(
            CacheEntry(
                key=sections[f"e{i}.key"],
                intent=INTENTS[int(meta[0])],
                result_ids=[int(v) for v in sections[f"e{i}.results"]],
                hits=int(meta[1]),
                similarity=float(meta[2]),
            )
        )
    store.cuo_ms = 0.0
    return store


# ---------------------------------------------------------------------------
# refinement loop
# ---------------------------------------------------------------------------

@dataclass
class PipelineAnswer:
    """What one full pipeline pass hands back to the loop."""

    key: np.ndarray  # query embedding
    intent: str
    ranked_ids: list[int]
    representatives: Callable[[int], np.ndarray]  # result id -> embedding


@dataclass
class RoundTrace:
    round: int
    source: str  # "cache" or "pipeline"
    expansion_threshold: float | None
    candidate_rank: int | None
    result_id: int | None
    similarity: float


@dataclass
class LoopResult:
    intent: str
    result_ids: list[int]
    similarity: float
    rounds: int
    from_cache: bool
    below_threshold: bool
    trace: list[RoundTrace]
    key: np.ndarray | None = None


def similarity_loop(
    store: CacheStore,
    query_key: np.ndarray,
    run_pipeline: Callable[[float], PipelineAnswer],
    theta: float = 0.9,
    theta_cache: float = 0.9,
    max_rounds: int = 3,
    expansion_threshold: float = 0.3,
    relax_step: float = 0.05,
    min_expansion_threshold: float = 0.05,
) -> LoopResult:
    """Cache lookup, then pipeline rounds until the answer's similarity to the
    query reaches ``theta`` or ``max_rounds`` is spent.

    Each round after the first relaxes the expansion threshold by
    ``relax_step`` and moves one position further down the ranking.  The best
    answer seen is returned and stored; ``below_threshold`` marks answers that
    never cleared ``theta``.  The cache lock is not held while the pipeline runs.
    """
    if max_rounds < 1:
        raise ValueError(f"max_rounds must be at least 1, got {max_rounds}")
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"theta must lie in (0, 1], got {theta}")
    trace: list[RoundTrace] = []
    hit = store.lookup(query_key, theta_cache)
    if hit is not None:
        trace.append(RoundTrace(1, "cache", None, None, hit.entry.result_ids[0], hit.similarity))
        return LoopResult(
            intent=hit.entry.intent,
            result_ids=list(hit.entry.result_ids),
            similarity=hit.similarity,
            rounds=1,
            from_cache=True,
            below_threshold=False,
            trace=trace,
            key=hit.entry.key,
        )
    best: tuple[float, PipelineAnswer, int] | None = None
    threshold = expansion_threshold
    for rnd in range(1, max_rounds + 1):
        if rnd > 1:
            threshold = max(min_expansion_threshold, threshold - relax_step)
        answer = run_pipeline(threshold)
        if not answer.ranked_ids:
            raise ValueError("pipeline returned no candidates")
        pos = min(rnd - 1, len(answer.ranked_ids) - 1)
        rid = answer.ranked_ids[pos]
        try:
            sim = cosine_similarity(answer.key, answer.representatives(rid))
        except UndefinedMetricError:
            sim = 0.0
        trace.append(RoundTrace(rnd, "pipeline", threshold, pos, rid, sim))
        if best is None or sim > best[0]:
            best = (sim, answer, pos)
        if sim >= theta:
            break
    sim, answer, pos = best
    ranked = [answer.ranked_ids[pos]] + [r for i, r in enumerate(answer.ranked_ids) if i != pos]
    if np.linalg.norm(answer.key) > 0.0:
        store.insert(CacheEntry(key=answer.key, intent=answer.intent, result_ids=ranked, similarity=sim))
    return LoopResult(
        intent=answer.intent,
        result_ids=ranked,
        similarity=sim,
        rounds=len(trace),
        from_cache=False,
        below_threshold=sim < theta,
        trace=trace,
        key=answer.key,
    )
