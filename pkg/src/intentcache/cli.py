"""Command-line entry point: ingest, cluster, train, query, bench, eval."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import RunConfig, format_config, load_config
from .corpus import format_cisi_records
from .errors import IntentCacheError
from .metrics import RunLog, build_report, emit_report, format_report, write_query_csv

DEFAULT_WORKDIR = "intentcache-run"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, help="overrides run.seed")
    common.add_argument("--threshold", type=float, help="answer similarity gate theta (pipeline.theta)")
    common.add_argument("--cache-threshold", type=float, help="cache hit gate (pipeline.theta_cache)")
    common.add_argument("--cache-capacity", type=int, help="overrides cache.capacity")
    common.add_argument("--workers", type=int, help="overrides run.workers")
    common.add_argument("--report", help="write the metrics report here")
    common.add_argument("--workdir", default=DEFAULT_WORKDIR, help="artifact directory (default: %(default)s)")

    p = argparse.ArgumentParser(prog="intentcache", description="Intent-aware semantic cache over a CISI-format corpus.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", parents=[common], help="validate the corpus and snapshot it into the workdir")
    sub.add_parser("cluster", parents=[common], help="structure documents with EK-OPTICS")
    sub.add_parser("train", parents=[common], help="fine-tune the tagging head and the retrieval scorer")
    q = sub.add_parser("query", parents=[common], help="answer one query through the cache loop")
    q.add_argument("text", help="query text")
    sub.add_parser("bench", parents=[common], help="replay the held-out queries twice each")
    ev = sub.add_parser("eval", parents=[common], help="turn a run log into a metrics report")
    ev.add_argument("--log", help="run log (default: <workdir>/runlog.json)")
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.threshold is not None:
        cfg.pipeline.theta = args.threshold
    if args.cache_threshold is not None:
        cfg.pipeline.theta_cache = args.cache_threshold
    if args.cache_capacity is not None:
        cfg.cache.capacity = args.cache_capacity
    if args.workers is not None:
        cfg.run.workers = args.workers
    return cfg.validate()


def _engine(cfg: RunConfig, workdir: Path, need_trained: bool):
    from .pipeline import Engine

    engine = Engine(cfg)
    if need_trained and not engine.load(workdir):
        print("no trained parameters in workdir for this seed; training now", file=sys.stderr)
        engine.train()
        engine.save(workdir)
    return engine


def cmd_ingest(cfg, args, workdir: Path) -> None:
    from .corpus import load_corpus, split_queries

    p = cfg.paths
    corpus = load_corpus(p.documents, p.queries, p.relevance)
    train, test = split_queries(corpus.queries, cfg.training.split_ratio, cfg.run.seed)
    snap = workdir / "corpus"
    snap.mkdir(parents=True, exist_ok=True)
    (snap / "CISI.ALL").write_text(format_cisi_records(corpus.documents), encoding="utf-8")
    (snap / "CISI.QRY").write_text(format_cisi_records(corpus.queries), encoding="utf-8")
    rows = [f"{q} {d} 0 0.0" for q in sorted(corpus.relevance) for d in sorted(corpus.relevance[q])]
    (snap / "CISI.REL").write_text("\n".join(rows) + "\n", encoding="utf-8")
    (workdir / "split.txt").write_text(
        "train " + " ".join(str(q.id) for q in train) + "\ntest " + " ".join(str(q.id) for q in test) + "\n",
        encoding="utf-8",
    )
    (workdir / "config.effective").write_text(format_config(cfg), encoding="utf-8")
    judged = sum(1 for q in corpus.queries if corpus.relevance.get(q.id))
    print(f"documents: {len(corpus.documents)}")
    print(f"queries: {len(corpus.queries)} ({judged} with relevance judgements)")
    print(f"split: {len(train)} train / {len(test)} test (seed {cfg.run.seed})")
    print(f"snapshot: {snap}")


def cmd_cluster(cfg, args, workdir: Path) -> None:
    engine = _engine(cfg, workdir, need_trained=False)
    result = engine.cluster()
    workdir.mkdir(parents=True, exist_ok=True)
    engine.write_store(workdir / "structured.tsv")
    sil = "undefined" if result.silhouette is None else f"{result.silhouette:.6f}"
    print(f"min_pts: {result.ordering.min_pts}")
    print(f"epsilon: {result.ordering.epsilon:.6f}")
    print(f"clusters: {result.assignment.n_clusters}")
    print(f"noise: {int((result.assignment.labels == -1).sum())}")
    print(f"silhouette: {sil}")
    print(f"ct_ms: {result.ct_ms:.3f}")


def cmd_train(cfg, args, workdir: Path) -> None:
    from .metrics import ner_metrics

    engine = _engine(cfg, workdir, need_trained=False)
    engine.train()
    engine.save(workdir)
    fixture = engine.ner_fixture
    p, r, f1 = ner_metrics([engine.encoder.tag_tokens(t).tags for t, _ in fixture], [tags for _, tags in fixture])
    mrr = engine.mrr(engine.train_queries)
    print(f"ner_f1_percent: {100 * f1:.3f}")
    print(f"train_mrr: {'undefined' if mrr is None else f'{mrr:.6f}'}")
    print(f"saved: {workdir}")


def cmd_query(cfg, args, workdir: Path) -> None:
    from .cache import CacheStore, load_cache, save_cache

    engine = _engine(cfg, workdir, need_trained=True)
    cache_path = workdir / "cache.bin"
    store = load_cache(cache_path) if cache_path.is_file() else CacheStore(cfg.cache.capacity)
    store.capacity = cfg.cache.capacity
    ans = engine.answer(args.text, store)
    save_cache(cache_path, store)
    titles = {d.id: d.title for d in engine.corpus.documents}
    print(f"intent: {ans.intent}")
    print(f"source: {'cache' if ans.from_cache else 'pipeline'}")
    print(f"rounds: {ans.rounds}")
    print(f"similarity: {ans.similarity:.6f}{'  (below threshold)' if ans.below_threshold else ''}")
    for rank, did in enumerate(ans.result_ids, start=1):
        print(f"{rank:>3}. [{did}] {titles.get(did, '')}")


def cmd_bench(cfg, args, workdir: Path) -> None:
    engine = _engine(cfg, workdir, need_trained=True)
    log = engine.bench()
    workdir.mkdir(parents=True, exist_ok=True)
    log.save(workdir / "runlog.json")
    write_query_csv(workdir / "queries.csv", log)
    values = build_report(log, engine.corpus.relevance)
    if args.report:
        emit_report(args.report, values)
    sys.stdout.write(format_report(values))


def cmd_eval(cfg, args, workdir: Path) -> None:
    from .corpus import load_corpus

    log_path = Path(args.log) if args.log else workdir / "runlog.json"
    if not log_path.is_file():
        raise FileNotFoundError(f"no run log at {log_path}; run bench first")
    log = RunLog.load(log_path)
    p = cfg.paths
    corpus = load_corpus(p.documents, p.queries, p.relevance)
    values = build_report(log, corpus.relevance)
    text = emit_report(args.report, values) if args.report else format_report(values)
    sys.stdout.write(text)


COMMANDS = {
    "ingest": cmd_ingest,
    "cluster": cmd_cluster,
    "train": cmd_train,
    "query": cmd_query,
    "bench": cmd_bench,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    stage = args.command
    try:
        cfg = resolve_config(args)
        COMMANDS[stage](cfg, args, Path(args.workdir))
    except (IntentCacheError, ValueError, OSError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"intentcache {stage}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
