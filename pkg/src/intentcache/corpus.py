"""CISI-format corpus ingestion.

Records are introduced by ``.I <id>`` and carry field markers ``.T`` (title),
``.A`` (author), ``.W`` (body), ``.X`` (cross-references) and, in the query
file, ``.B`` (bibliographic source).  Each marker is followed by content lines
until the next marker.
"""

from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ParseError

_MARKER_RE = re.compile(r"^\.([A-Z])(?:\s+(.*))?$")
_FIELDS = {"T": "title", "A": "author", "W": "body", "X": "cross_refs", "B": "source"}
_REPEATABLE = {"A"}


@dataclass(frozen=True)
class Document:
    id: int
    title: str
    author: str
    body: str
    cross_refs: tuple[int, ...] = ()


@dataclass(frozen=True)
class QueryRecord:
    id: int
    text: str


@dataclass
class Corpus:
    documents: list[Document]
    queries: list[QueryRecord]
    relevance: dict[int, set[int]] = field(default_factory=dict)

    def document(self, doc_id: int) -> Document:
        return self._by_id()[doc_id]

    def _by_id(self) -> dict[int, Document]:
        cache = self.__dict__.get("_doc_index")
        if cache is None or len(cache) != len(self.documents):
            cache = {d.id: d for d in self.documents}
            self.__dict__["_doc_index"] = cache
        return cache


def _finish(record: dict, kind: str, start_line: int):
    fields = record["fields"]
    if "W" not in fields:
        raise ParseError(f"record .I {record['id']} has no .W field", start_line)
    body = " ".join(fields["W"]).strip()
    if not body:
        raise ParseError(f"record .I {record['id']} has an empty .W field", start_line)
    if kind == "query":
        return QueryRecord(id=record["id"], text=body)
    refs = []
    for line_no, line in record.get("xrefs", []):
        first = line.split()[0]
        try:
            refs.append(int(first))
        except ValueError:
            raise ParseError(f"non-integer cross-reference {first!r}", line_no) from None
    return Document(
        id=record["id"],
        title=" ".join(fields.get("T", [])).strip(),
        author="; ".join(a for a in (" ".join(x) for x in record["authors"]) if a),
        body=body,
        cross_refs=tuple(refs),
    )


def parse_cisi_records(raw: str, kind: str) -> list:
    """Parse marker-format text into :class:`Document` or :class:`QueryRecord`
    objects (``kind`` is ``"document"`` or ``"query"``)."""
    if kind not in ("document", "query"):
        raise ValueError(f"kind must be 'document' or 'query', got {kind!r}")
    out = []
    seen: set[int] = set()
    record = None
    current = None
    start_line = 0
    for line_no, line in enumerate(raw.splitlines(), start=1):
        stripped = line.rstrip("\r\n")
        marker = _MARKER_RE.match(stripped)
        if marker:
            letter, rest = marker.group(1), (marker.group(2) or "").strip()
            if letter == "I":
                if record is not None:
                    out.append(_finish(record, kind, start_line))
                try:
                    rid = int(rest)
                except ValueError:
                    raise ParseError(f"malformed .I marker {stripped!r}", line_no) from None
                if rid <= 0:
                    raise ParseError(f"record id must be positive, got {rid}", line_no)
                if rid in seen:
                    raise ParseError(f"duplicate record id {rid}", line_no)
                seen.add(rid)
                record = {"id": rid, "fields": {}, "authors": []}
                current = None
                start_line = line_no
                continue
            if letter not in _FIELDS:
                raise ParseError(f"unknown field marker .{letter}", line_no)
            if record is None:
                raise ParseError(f"field marker .{letter} before any .I record", line_no)
            if rest:
                raise ParseError(f"unexpected text after marker .{letter}", line_no)
            if letter in record["fields"] and letter not in _REPEATABLE:
                raise ParseError(f"repeated field .{letter} in record {record['id']}", line_no)
            record["fields"].setdefault(letter, [])
            if letter == "A":
                record["authors"].append([])
            current = letter
            continue
        if record is None:
            if stripped.strip():
                raise ParseError("content before the first .I record", line_no)
            continue
        if current is None:
            if stripped.strip():
                raise ParseError(f"content outside any field in record {record['id']}", line_no)
            continue
        text = stripped.strip()
        if current == "X":
            if text:
                record.setdefault("xrefs", []).append((line_no, text))
            continue
        if not text:
            continue
        record["fields"][current].append(text)
        if current == "A":
            record["authors"][-1].append(text)
    if record is not None:
        out.append(_finish(record, kind, start_line))
    return out


def format_cisi_records(records: list) -> str:
    """Serialize records back into marker format."""
    lines = []
    for rec in records:
        lines.append(f".I {rec.id}")
        if isinstance(rec, Document):
            if rec.title:
                lines += [".T", rec.title]
            for author in rec.author.split("; ") if rec.author else []:
                lines += [".A", author]
            lines += [".W", rec.body]
            if rec.cross_refs:
                lines.append(".X")
                lines += [f"{ref}\t1\t{rec.id}" for ref in rec.cross_refs]
        else:
            lines += [".W", rec.text]
    return "\n".join(lines) + ("\n" if lines else "")


def parse_relevance(raw: str) -> dict[int, set[int]]:
    rel: dict[int, set[int]] = {}
    for line_no, line in enumerate(raw.splitlines(), start=1):
        cols = line.split()
        if not cols:
            continue
        if len(cols) < 2:
            raise ParseError(f"expected at least two columns, got {line!r}", line_no)
        try:
            qid, did = int(cols[0]), int(cols[1])
        except ValueError:
            raise ParseError(f"non-integer id in row {line.strip()!r}", line_no) from None
        rel.setdefault(qid, set()).add(did)
    return rel


def validate_relevance(rel: dict[int, set[int]], documents: list[Document], queries: list[QueryRecord]) -> None:
    doc_ids = {d.id for d in documents}
    query_ids = {q.id for q in queries}
    for qid in sorted(rel):
        if qid not in query_ids:
            raise ParseError(f"relevance map references unknown query id {qid}")
        missing = sorted(rel[qid] - doc_ids)
        if missing:
            raise ParseError(f"relevance map for query {qid} references unknown document ids {missing}")


def split_queries(queries: list[QueryRecord], ratio: float, seed: int) -> tuple[list[QueryRecord], list[QueryRecord]]:
    """Seeded shuffle, then the first ``floor(ratio * n)`` queries train."""
    if not queries:
        raise ValueError("cannot split an empty query list")
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    shuffled = list(queries)
    random.Random(seed).shuffle(shuffled)
    n_train = math.floor(ratio * len(shuffled))
    return shuffled[:n_train], shuffled[n_train:]


def bundled_corpus_dir() -> Path:
    return Path(str(resources.files("intentcache").joinpath("data", "cisi_sample")))


def load_corpus(
    documents: str | Path | None = None,
    queries: str | Path | None = None,
    relevance: str | Path | None = None,
) -> Corpus:
    """Load and validate the three CISI files (bundled sample by default)."""
    base = bundled_corpus_dir()
    doc_path = Path(documents) if documents else base / "CISI.ALL"
    qry_path = Path(queries) if queries else base / "CISI.QRY"
    rel_path = Path(relevance) if relevance else base / "CISI.REL"
    # CISI is ASCII; latin-1 passes any other byte through unchanged
    docs = parse_cisi_records(doc_path.read_text(encoding="latin-1"), "document")
    qrys = parse_cisi_records(qry_path.read_text(encoding="latin-1"), "query")
    rel = parse_relevance(rel_path.read_text(encoding="latin-1"))
    validate_relevance(rel, docs, qrys)
    return Corpus(documents=docs, queries=qrys, relevance=rel)
