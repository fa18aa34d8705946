"""Run logs and the metrics computed from them, plus the key: value report."""

from __future__ import annotations

import csv
import json
import math
import resource
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .encoder import spans
from .errors import UndefinedMetricError

ENV_MARK = "# environment-dependent"


@dataclass
class QueryLog:
    query_id: int
    submission: int  # 1 for the first time the query is sent, 2 for the replay
    worker: int
    start_ms: float
    end_ms: float
    latency_ms: float
    hit: bool
    rounds: int
    similarity: float
    below_threshold: bool
    intent: str
    result_ids: list[int]
    bytes_returned: int


@dataclass
class RunLog:
    queries: list[QueryLog] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)  # ct_ms, rgt_ms, ft_ms, dft_ms, cuo_ms
    values: dict[str, float | None] = field(default_factory=dict)  # seeded, timing-free results
    ner_counts: dict[str, int] = field(default_factory=dict)  # tp, fp, fn
    memory_mb: float = 0.0
    seed: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunLog":
        raw = json.loads(text)
        raw["queries"] = [QueryLog(**q) for q in raw.get("queries", [])]
        return cls(**raw)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RunLog":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def peak_memory_mb() -> float:
    """Best-effort peak resident set size of this process."""
    peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    # kilobytes on Linux, bytes on macOS
    return peak / (1024.0 * 1024.0) if sys.platform == "darwin" else peak / 1024.0


@dataclass
class CacheMetrics:
    chr_percent: float
    cmr_percent: float
    lookups: int
    hits: int
    ql_mean: float
    ql_p50: float
    ql_p95: float
    cuo_ms: float


def chr_cmr(hits: int, lookups: int) -> tuple[float, float]:
    if lookups <= 0:
        raise UndefinedMetricError("zero lookups")
    chr_ = 100.0 * hits / lookups
    # derived from the complement so the pair sums to exactly 100
    return chr_, 100.0 * (lookups - hits) / lookups


def cache_metrics(log: RunLog) -> CacheMetrics:
    lookups = len(log.queries)
    hits = sum(1 for q in log.queries if q.hit)
    chr_, cmr = chr_cmr(hits, lookups)
    lat = np.array([q.latency_ms for q in log.queries])
    return CacheMetrics(
        chr_percent=chr_,
        cmr_percent=cmr,
        lookups=lookups,
        hits=hits,
        ql_mean=float(lat.mean()),
        ql_p50=float(np.percentile(lat, 50)),
        ql_p95=float(np.percentile(lat, 95)),
        cuo_ms=float(log.timings.get("cuo_ms", 0.0)),
    )


def span_counts(predicted: list[list[str]], gold: list[list[str]]) -> tuple[int, int, int]:
    if len(predicted) != len(gold):
        raise ValueError(f"{len(predicted)} predicted sequences for {len(gold)} gold sequences")
    tp = fp = fn = 0
    for i, (p, g) in enumerate(zip(predicted, gold)):
        p = getattr(p, "tags", p)
        g = getattr(g, "tags", g)
        if len(p) != len(g):
            raise ValueError(f"sequence {i}: {len(p)} predicted tags for {len(g)} gold tags")
        ps, gs = set(spans(list(p))), set(spans(list(g)))
        tp += len(ps & gs)
        fp += len(ps - gs)
        fn += len(gs - ps)
    return tp, fp, fn


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def ner_metrics(predicted, gold) -> tuple[float, float, float]:
    """Exact-span precision, recall and F1 as fractions in [0, 1]."""
    return prf(*span_counts(predicted, gold))


def pearson(x, y) -> float:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("pearson needs two equal-length series of at least 2 values")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedMetricError("correlation undefined: a series has zero variance")
    return float(max(-1.0, min(1.0, float(dx @ dy) / math.sqrt(sxx * syy))))


def similarity_and_correlation(log: RunLog, relevance: dict[int, set[int]]) -> tuple[float, float | None]:
    """Mean final similarity, and the Pearson correlation between each answer's
    similarity and whether its top result is relevant (None when undefined)."""
    answered = [q for q in log.queries if q.result_ids]
    if len(answered) < 2:
        raise ValueError("need at least 2 answered queries")
    sims = [q.similarity for q in answered]
    rel = [1.0 if q.result_ids[0] in relevance.get(q.query_id, set()) else 0.0 for q in answered]
    ss = float(np.mean(sims))
    try:
        cc = pearson(sims, rel)
    except UndefinedMetricError:
        cc = None
    return ss, cc


def throughput(log: RunLog, window_s: float) -> list[float]:
    """Kilobits per second of result payload in consecutive windows from the
    first query start; each query counts in the window where it finished."""
    if window_s <= 0:
        raise ValueError(f"window must be positive, got {window_s}")
    if not log.queries:
        return []
    t0 = min(q.start_ms for q in log.queries)
    t1 = max(q.end_ms for q in log.queries)
    n = max(1, math.ceil((t1 - t0) / 1000.0 / window_s))
    bits = [0.0] * n
    for q in log.queries:
        idx = min(int((q.end_ms - t0) / 1000.0 / window_s), n - 1)
        bits[idx] += 8.0 * q.bytes_returned
    return [b / 1000.0 / window_s for b in bits]


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

REPORT_HEADER = (
    "# ss: mean cosine similarity between each answer's top result and its query\n"
    "# cc: Pearson correlation of that similarity with the top result's binary relevance\n"
    "# percentages in [0, 100]; lines marked environment-dependent are wall-clock or memory figures\n"
)

# (key, is timing-dependent)
REPORT_FIELDS = (
    ("queries", False),
    ("lookups", False),
    ("hits", False),
    ("chr_percent", False),
    ("cmr_percent", False),
    ("mean_rounds", False),
    ("below_threshold", False),
    ("ss", False),
    ("cc", False),
    ("mrr", False),
    ("mrr_plain_gru", False),
    ("ner_precision_percent", False),
    ("ner_recall_percent", False),
    ("ner_f1_percent", False),
    ("silhouette", False),
    ("silhouette_fixed_params", False),
    ("n_clusters", False),
    ("ql_ms_mean", True),
    ("ql_ms_p50", True),
    ("ql_ms_p95", True),
    ("cuo_ms", True),
    ("throughput_kbps_20s", True),
    ("throughput_kbps_50s", True),
    ("ct_ms", True),
    ("rgt_ms", True),
    ("ft_ms", True),
    ("dft_ms", True),
    ("memory_mb", True),
)
PERCENT_KEYS = ("chr_percent", "cmr_percent", "ner_precision_percent", "ner_recall_percent", "ner_f1_percent")


def build_report(log: RunLog, relevance: dict[int, set[int]]) -> dict[str, float | int | None]:
    cm = cache_metrics(log)
    try:
        ss, cc = similarity_and_correlation(log, relevance)
    except ValueError:
        ss, cc = None, None
    p, r, f1 = prf(log.ner_counts.get("tp", 0), log.ner_counts.get("fp", 0), log.ner_counts.get("fn", 0))
    first = lambda xs: xs[0] if xs else 0.0  # noqa: E731
    return {
        "queries": len({q.query_id for q in log.queries}),
        "lookups": cm.lookups,
        "hits": cm.hits,
        "chr_percent": cm.chr_percent,
        "cmr_percent": cm.cmr_percent,
        "mean_rounds": float(np.mean([q.rounds for q in log.queries])),
        "below_threshold": sum(1 for q in log.queries if q.below_threshold),
        "ss": ss,
        "cc": cc,
        "mrr": log.values.get("mrr"),
        "mrr_plain_gru": log.values.get("mrr_plain_gru"),
        "ner_precision_percent": 100.0 * p,
        "ner_recall_percent": 100.0 * r,
        "ner_f1_percent": 100.0 * f1,
        "silhouette": log.values.get("silhouette"),
        "silhouette_fixed_params": log.values.get("silhouette_fixed_params"),
        "n_clusters": log.values.get("n_clusters"),
        "ql_ms_mean": cm.ql_mean,
        "ql_ms_p50": cm.ql_p50,
        "ql_ms_p95": cm.ql_p95,
        "cuo_ms": cm.cuo_ms,
        "throughput_kbps_20s": first(throughput(log, 20.0)),
        "throughput_kbps_50s": first(throughput(log, 50.0)),
        "ct_ms": log.timings.get("ct_ms", 0.0),
        "rgt_ms": log.timings.get("rgt_ms", 0.0),
        "ft_ms": log.timings.get("ft_ms", 0.0),
        "dft_ms": log.timings.get("dft_ms", 0.0),
        "memory_mb": log.memory_mb,
    }


def _fmt_value(v) -> str:
    if v is None:
        return "undefined"
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.6f}"


def format_report(values: dict) -> str:
    lines = [REPORT_HEADER.rstrip("\n")]
    for key, timing in REPORT_FIELDS:
        line = f"{key}: {_fmt_value(values.get(key))}"
        if timing:
            line += f"  {ENV_MARK}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def emit_report(path, values: dict) -> str:
    text = format_report(values)
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
    return text


def parse_report(text: str) -> dict[str, float | None]:
    out = {}
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        key, sep, rest = line.partition(":")
        if not sep:
            raise ValueError(f"report line without ':': {line!r}")
        value = rest.split("#", 1)[0].strip()
        out[key.strip()] = None if value == "undefined" else float(value)
    return out


def validate_report(text: str) -> dict[str, float | None]:
    """Check field order, completeness and value ranges; return the values."""
    values = parse_report(text)
    expected = [k for k, _ in REPORT_FIELDS]
    if list(values) != expected:
        raise ValueError(f"report fields {list(values)} do not match schema {expected}")
    for key in PERCENT_KEYS:
        if values[key] is None or not 0.0 <= values[key] <= 100.0:
            raise ValueError(f"{key} = {values[key]} is not a percentage")
    # the printed values carry 6 decimals each
    if abs(values["chr_percent"] + values["cmr_percent"] - 100.0) > 2e-6:
        raise ValueError("chr_percent + cmr_percent must equal 100")
    if values["cc"] is not None and not -1.0 <= values["cc"] <= 1.0:
        raise ValueError(f"cc = {values['cc']} outside [-1, 1]")
    return values


def strip_timing(text: str) -> str:
    return "\n".join(line for line in text.splitlines() if ENV_MARK not in line)


CSV_COLUMNS = (
    "query_id", "submission", "worker", "hit", "rounds", "similarity", "below_threshold",
    "intent", "top_result", "bytes_returned", "latency_ms",
)


def write_query_csv(path, log: RunLog) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for q in log.queries:
            w.writerow(
                [q.query_id, q.submission, q.worker, int(q.hit), q.rounds, f"{q.similarity:.6f}",
                 int(q.below_threshold), q.intent, q.result_ids[0] if q.result_ids else "",
                 q.bytes_returned, f"{q.latency_ms:.3f}"]
            )
