"""End-to-end engine: corpus structuring, training, single queries and the
replay benchmark."""

from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cache as cache_mod
from .config import RunConfig
from .corpus import Corpus, QueryRecord, load_corpus, split_queries
from .encoder import (
    Encoder,
    TaggingHead,
    build_embedding_table,
    fine_tune,
    init_attention,
    load_ner_fixture,
)
from .features import CorpusStats, TextProfile, build_corpus_stats, extract_profile_features, profile_from_resolved, weighted_embedding
from .intent import (
    FuzzyRulebook,
    IntentDecision,
    calibrate,
    detect_intent,
    generate_rules,
    load_keyword_tables,
)
from .lexicon import ExpandedQuery, expand_query, load_lexical_graph
from .metrics import QueryLog, RunLog, peak_memory_mb, span_counts
from .mgrlau import (
    MgrLau,
    QueryInputs,
    TrainingQuery,
    init_mgrlau,
    intent_step,
    load_mgrlau,
    mean_reciprocal_rank,
    plain_gru_ablation,
    process_query,
    save_mgrlau,
    train,
)
from .optics import NOISE, ClusteringResult, PointSet, ek_optics, fixed_optics, to_records, write_store
from .parser import ParsedQuery, ParserResources, parse, porter_stem
from .serialization import read_params, write_params


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms > 0.0, norms, 1.0)


@dataclass
class QueryAnswer:
    query: str
    intent: str
    result_ids: list[int]
    similarity: float
    rounds: int
    from_cache: bool
    below_threshold: bool
    latency_ms: float
    decision: IntentDecision | None = None


@dataclass
class _Prepared:
    """Threshold-independent analysis of one query text."""

    parsed: ParsedQuery
    key: np.ndarray
    decision: IntentDecision
    timings: dict[str, float] = field(default_factory=dict)


class Engine:
    """Holds every model the pipeline needs; built deterministically from a config."""

    def __init__(self, cfg: RunConfig, corpus: Corpus | None = None):
        self.cfg = cfg
        p = cfg.paths
        self.corpus = corpus or load_corpus(p.documents, p.queries, p.relevance)
        self.res = ParserResources.from_files(stopwords=p.stopwords)
        self.graph = load_lexical_graph(p.lexical_graph)
        self.tables = load_keyword_tables(p.keywords_informational, p.keywords_navigational, p.keywords_transactional)
        self.ner_fixture = load_ner_fixture(p.ner_fixture)
        seed = cfg.run.seed
        self.doc_ids = [d.id for d in self.corpus.documents]
        self.doc_parsed = {d.id: parse(f"{d.title} {d.body}", self.res) for d in self.corpus.documents}
        terms = set()
        for parsed in self.doc_parsed.values():
            terms.update(parsed.filtered)
        for q in self.corpus.queries:
            terms.update(parse(q.text, self.res).filtered)
        for tokens, _ in self.ner_fixture:
            terms.update(tokens)
        for syn in self.graph.synsets.values():
            terms.update(syn.words)
        m = cfg.model
        self.encoder = Encoder(
            table=build_embedding_table(terms, m.d, seed),
            attention=init_attention(m.d, m.d_k, seed),
            head=TaggingHead.zeros(m.d_k),
        )
        self.train_queries, self.test_queries = split_queries(self.corpus.queries, cfg.training.split_ratio, seed)
        self.rulebook: FuzzyRulebook = calibrate(
            generate_rules(), [parse(q.text, self.res) for q in self.train_queries], self.tables
        )
        # corpus statistics without cluster labels, used for embeddings and clustering
        self.stats: CorpusStats = build_corpus_stats(
            self.encoder.table, {i: TextProfile(pq) for i, pq in self.doc_parsed.items()}, []
        )
        self.doc_embeddings = np.stack([self._embedding(self.doc_parsed[i]) for i in self.doc_ids])
        # clustering works on directions, matching the cosine gate of the cache
        self.doc_points = _unit_rows(self.doc_embeddings)
        self.clustering: ClusteringResult | None = None
        self.doc_features: np.ndarray | None = None
        self.mgr: MgrLau | None = None
        self.trained = False

    # -- structuring -------------------------------------------------------

    def _embedding(self, parsed: ParsedQuery) -> np.ndarray:
        return weighted_embedding(self.encoder.table, self.stats.tfidf(parsed.stems), parsed.stems)

    def cluster(self) -> ClusteringResult:
        c = self.cfg.clustering
        ps = PointSet(self.doc_points)
        self.clustering = ek_optics(ps, c.h, c.alpha, c.beta, c.cut)
        labels = [int(v) for v in self.clustering.assignment.labels]
        self.stats = build_corpus_stats(self.encoder.table, self.stats.profiles, labels)
        self.doc_features = None
        return self.clustering

    def naive_clustering(self) -> ClusteringResult:
        c = self.cfg.clustering
        ps = PointSet(self.doc_points)
        eps = c.naive_eps if c.naive_eps is not None else float(ps.distances().max()) or 1.0
        return fixed_optics(ps, c.naive_min_pts, eps)

    def write_store(self, path) -> None:
        if self.clustering is None:
            self.cluster()
        write_store(path, to_records(self.doc_ids, PointSet(self.doc_points), self.clustering))

    def _ensure_clustered(self):
        if self.clustering is None:
            self.cluster()

    def _resolve(self, expanded: ExpandedQuery):
        if not expanded.base.filtered:
            return None
        return self.encoder.recognize(self.graph, expanded)

    def _features(self, parsed: ParsedQuery, label: int, threshold: float) -> np.ndarray:
        expanded = expand_query(self.graph, parsed, threshold)
        profile = profile_from_resolved(parsed, self._resolve(expanded))
        fv = extract_profile_features(profile, label, self.graph, self.stats)
        stems = list(parsed.stems) + [porter_stem(w) for w, _, _ in expanded.additions]
        if stems:
            fv.semantic = weighted_embedding(self.encoder.table, self.stats.tfidf(stems), stems)
        return fv.dense()

    def compute_doc_features(self) -> np.ndarray:
        """Dense document features, standardized per column over the corpus."""
        self._ensure_clustered()
        labels = self.stats.labels
        thr = self.cfg.pipeline.expansion_threshold
        raw = np.stack([self._features(self.doc_parsed[i], labels[k], thr) for k, i in enumerate(self.doc_ids)])
        self.feature_mean = raw.mean(axis=0)
        sd = raw.std(axis=0)
        self.feature_scale = np.where(sd > 0.0, sd, 1.0)
        self.doc_features = self._standardize(raw)
        return self.doc_features

    def _standardize(self, raw: np.ndarray) -> np.ndarray:
        return (raw - self.feature_mean) / self.feature_scale

    def _nearest_label(self, key: np.ndarray) -> int:
        if not self.stats.labels:
            return NOISE
        d = np.linalg.norm(self.doc_points - _unit_rows(key[None, :])[0], axis=1)
        return self.stats.labels[int(np.argmin(d))]

    # -- training ----------------------------------------------------------

    def train(self) -> None:
        t = self.cfg.training
        self.encoder.head = fine_tune(
            TaggingHead.zeros(self.cfg.model.d_k), self.ner_fixture, t.ner_epochs, t.ner_lr,
            self.encoder.table, self.encoder.attention,
        )
        feats = self.compute_doc_features()
        m = self.cfg.model
        model = init_mgrlau(feats.shape[1], m.m, m.heads, m.head_dim, self.cfg.run.seed, standard_gru=m.standard_gru)
        examples = self.training_examples(self.train_queries)
        if examples:
            model = train(model, examples, self.doc_ids, feats, t.epochs, t.lr, self.cfg.run.seed, t.negatives)
        self.mgr = model
        self.trained = True

    def query_inputs(self, text: str, decision: IntentDecision | None = None, threshold: float | None = None) -> QueryInputs:
        prep = self.prepare(text)
        thr = self.cfg.pipeline.expansion_threshold if threshold is None else threshold
        feats = self._standardize(self._features(prep.parsed, self._nearest_label(prep.key), thr))
        intent = (decision or prep.decision).intent
        return QueryInputs(query_features=feats, intent_step=intent_step(intent, feats.shape[0]))

    def training_examples(self, queries: list[QueryRecord]) -> list[TrainingQuery]:
        out = []
        for q in queries:
            rel = self.corpus.relevance.get(q.id, set())
            if rel and len(rel) < len(self.doc_ids):
                out.append(TrainingQuery(self.query_inputs(q.text), set(rel)))
        return out

    def _require_trained(self):
        if not self.trained:
            self.train()

    # -- querying ----------------------------------------------------------

    def prepare(self, text: str) -> _Prepared:
        parsed = parse(text, self.res)
        key = self._embedding(parsed)
        decision = detect_intent(parsed, self.rulebook, self.cfg.pipeline.t_max, self.tables, self.res)
        return _Prepared(parsed, key, decision, {"rgt_ms": decision.rgt_ms, "ft_ms": decision.ft_ms, "dft_ms": decision.dft_ms})

    def rank(self, text: str, threshold: float | None = None, plain: bool = False) -> list[int]:
        self._require_trained()
        inputs = self.query_inputs(text, threshold=threshold)
        run = plain_gru_ablation if plain else process_query
        return run(self.mgr, inputs, self.doc_ids, self.doc_features).ids

    def _representative(self, doc_id: int) -> np.ndarray:
        return self.doc_embeddings[self.doc_ids.index(doc_id)]

    def answer(self, text: str, store: cache_mod.CacheStore, prep: _Prepared | None = None) -> QueryAnswer:
        self._require_trained()
        t0 = time.perf_counter()
        prep = prep or self.prepare(text)
        pc = self.cfg.pipeline
        label = self._nearest_label(prep.key)

        def run_pipeline(threshold: float) -> cache_mod.PipelineAnswer:
            feats = self._standardize(self._features(prep.parsed, label, threshold))
            inputs = QueryInputs(feats, intent_step(prep.decision.intent, feats.shape[0]))
            result = process_query(self.mgr, inputs, self.doc_ids, self.doc_features)
            return cache_mod.PipelineAnswer(prep.key, prep.decision.intent, result.ids, self._representative)

        loop = cache_mod.similarity_loop(
            store, prep.key, run_pipeline, pc.theta, pc.theta_cache, pc.max_rounds,
            pc.expansion_threshold, pc.relax_step,
        )
        return QueryAnswer(
            query=text,
            intent=loop.intent,
            result_ids=loop.result_ids[: pc.top_k],
            similarity=loop.similarity,
            rounds=loop.rounds,
            from_cache=loop.from_cache,
            below_threshold=loop.below_threshold,
            latency_ms=(time.perf_counter() - t0) * 1000.0,
            decision=prep.decision,
        )

    def payload_bytes(self, ids: list[int]) -> int:
        docs = {d.id: d for d in self.corpus.documents}
        return sum(len((docs[i].title + "\n" + docs[i].body).encode("utf-8")) for i in ids)

    # -- evaluation --------------------------------------------------------

    def mrr(self, queries: list[QueryRecord], plain: bool = False) -> float | None:
        results = []
        for q in queries:
            rel = self.corpus.relevance.get(q.id)
            if rel:
                results.append((self.rank(q.text, plain=plain), rel))
        return mean_reciprocal_rank(results) if results else None

    def bench(self, workers: int | None = None) -> RunLog:
        """Replay the held-out queries, each sent twice in a row."""
        self._require_trained()
        workers = workers or self.cfg.run.workers
        store = cache_mod.CacheStore(self.cfg.cache.capacity)
        log = RunLog(seed=self.cfg.run.seed)
        timings = {"rgt_ms": 0.0, "ft_ms": 0.0, "dft_ms": 0.0}
        lock = threading.Lock()
        t_origin = time.monotonic()

        def run_one(item: tuple[int, QueryRecord]) -> list[QueryLog]:
            idx, q = item
            out = []
            worker = idx % workers
            for submission in (1, 2):
                start = (time.monotonic() - t_origin) * 1000.0
                prep = self.prepare(q.text)
                ans = self.answer(q.text, store, prep)
                end = (time.monotonic() - t_origin) * 1000.0
                with lock:
                    for k in timings:
                        timings[k] += prep.timings[k]
                out.append(
                    QueryLog(
                        query_id=q.id, submission=submission, worker=worker, start_ms=start, end_ms=end,
                        latency_ms=ans.latency_ms, hit=ans.from_cache, rounds=ans.rounds,
                        similarity=ans.similarity, below_threshold=ans.below_threshold, intent=ans.intent,
                        result_ids=ans.result_ids, bytes_returned=self.payload_bytes(ans.result_ids),
                    )
                )
            return out

        items = list(enumerate(self.test_queries))
        if workers == 1:
            batches = [run_one(it) for it in items]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                batches = list(pool.map(run_one, items))
        log.queries = [r for batch in batches for r in batch]

        self._ensure_clustered()
        naive = self.naive_clustering()
        tp, fp, fn = span_counts(
            [self.encoder.tag_tokens(tokens).tags for tokens, _ in self.ner_fixture],
            [tags for _, tags in self.ner_fixture],
        )
        log.ner_counts = {"tp": tp, "fp": fp, "fn": fn}
        log.timings = dict(timings, ct_ms=self.clustering.ct_ms, cuo_ms=store.cuo_ms)
        log.values = {
            "mrr": self.mrr(self.test_queries),
            "mrr_plain_gru": self.mrr(self.test_queries, plain=True),
            "silhouette": self.clustering.silhouette,
            # an undefined silhouette (fewer than two clusters) scores as the worst value
            "silhouette_fixed_params": naive.silhouette if naive.silhouette is not None else -1.0,
            "n_clusters": self.clustering.assignment.n_clusters,
        }
        log.memory_mb = peak_memory_mb()
        return log

    # -- persistence -------------------------------------------------------

    def save(self, workdir) -> None:
        self._require_trained()
        workdir = Path(workdir)
        workdir.mkdir(parents=True, exist_ok=True)
        save_mgrlau(workdir / "mgrlau.bin", self.mgr, self.cfg.run.seed)
        write_params(
            workdir / "encoder.bin",
            {
                "head.weight": self.encoder.head.weight,
                "head.bias": self.encoder.head.bias,
            },
            self.cfg.run.seed,
        )

    def load(self, workdir) -> bool:
        """Restore trained parameters saved by :meth:`save`; False if absent."""
        workdir = Path(workdir)
        if not (workdir / "mgrlau.bin").is_file() or not (workdir / "encoder.bin").is_file():
            return False
        sections, seed = read_params(workdir / "encoder.bin")
        if seed != self.cfg.run.seed:
            return False
        self.encoder.head = TaggingHead(sections["head.weight"], sections["head.bias"])
        self.compute_doc_features()
        mgr = load_mgrlau(workdir / "mgrlau.bin")
        if mgr.proj.shape[1] != self.doc_features.shape[1]:
            return False
        self.mgr = mgr
        self.trained = True
        return True

