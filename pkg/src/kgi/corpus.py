"""Knowledge-source ingestion: chunk documents into passages and serve them by id.

Input corpora are line-delimited JSON, one document per line, with fields
``id``, ``title``, ``text``. Documents are chunked into token windows; each
passage keeps provenance back to its source document through its pid
(``doc_id::ordinal``). Storage is an append-only passage file plus a
pid-to-offset map, so a store is immutable once written and cheap to read
concurrently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from kgi.errors import CorpusFormatError, NotFoundError, ValidationError
from kgi.tokenization import token_spans, tokenize

PID_SEPARATOR = "::"

PASSAGES_FILE = "passages.jsonl"
OFFSETS_FILE = "offsets.json"
STATS_FILE = "stats.json"


@dataclass(frozen=True)
class SourceDocument:
    """One document of the knowledge source."""

    doc_id: str
    title: str
    body: str

    def __post_init__(self):
        if not self.doc_id:
            raise ValidationError("document id must be non-empty")


@dataclass(frozen=True)
class Passage:
    """A chunk of a document: the unit that is indexed and returned as evidence."""

    pid: str
    doc_id: str
    title: str
    text: str
    token_count: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "pid": self.pid,
                "doc_id": self.doc_id,
                "title": self.title,
                "text": self.text,
                "token_count": self.token_count,
            },
            ensure_ascii=False,
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "Passage":
        record = json.loads(line)
        return cls(
            pid=record["pid"],
            doc_id=record["doc_id"],
            title=record["title"],
            text=record["text"],
            token_count=record["token_count"],
        )


@dataclass(frozen=True)
class CorpusStats:
    n_documents: int
    n_passages: int
    mean_passage_tokens: float


def make_pid(doc_id: str, ordinal: int) -> str:
    return f"{doc_id}{PID_SEPARATOR}{ordinal}"


def doc_id_of_pid(pid: str) -> str:
    """Recover document-level provenance from a passage id."""
    doc_id, sep, _ = pid.rpartition(PID_SEPARATOR)
    if not sep:
        raise ValidationError(f"malformed pid: {pid!r}")
    return doc_id


def retrieval_text(passage: Passage) -> str:
    """Passage text with its title prepended, as seen by retrievers and rerankers.

    Titles are prepended at retrieval time rather than stored duplicated.
    Title-only passages (empty-body documents) already carry the title as
    their text, so they are returned as-is.
    """
    if not passage.title or passage.text == passage.title:
        return passage.text
    return f"{passage.title} : {passage.text}"


def chunk_document(doc: SourceDocument, max_tokens: int = 100, stride: int = 100) -> list[Passage]:
    """Split a document body into token windows of at most ``max_tokens``.

    Windows start at every multiple of ``stride`` below the body's token
    count, so consecutive passages overlap by ``max_tokens - stride`` tokens.
    Window boundaries fall on token starts; each passage's text is the
    original character span from its first token to the start of the first
    token after the window (or the end of the body), so concatenating
    de-overlapped windows reproduces the body exactly.

    A document with an untokenizable body but a non-empty title yields a
    single passage holding the title text.
    """
    if max_tokens < 1:
        raise ValidationError(f"max_tokens must be >= 1, got {max_tokens}")
    if not 1 <= stride <= max_tokens:
        raise ValidationError(f"stride must be in [1, max_tokens], got {stride}")

    spans = token_spans(doc.body)
    n = len(spans)
    if n == 0:
        if not doc.title:
            raise ValidationError(
                f"document {doc.doc_id!r} has no body tokens and no title; unchunkable"
            )
        title_text = doc.title
        return [
            Passage(
                pid=make_pid(doc.doc_id, 0),
                doc_id=doc.doc_id,
                title=doc.title,
                text=title_text,
                token_count=len(tokenize(title_text)),
            )
        ]

    passages = []
    ordinal = 0
    for start in range(0, n, stride):
        end = min(start + max_tokens, n)
        char_start = 0 if ordinal == 0 else spans[start][0]
        char_end = len(doc.body) if end == n else spans[end][0]
        text = doc.body[char_start:char_end]
        passages.append(
            Passage(
                pid=make_pid(doc.doc_id, ordinal),
                doc_id=doc.doc_id,
                title=doc.title,
                text=text,
                token_count=end - start,
            )
        )
        ordinal += 1
    return passages


def _parse_document_line(line: str, line_number: int) -> SourceDocument:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(
            f"line {line_number}: invalid JSON ({exc.msg})", line_number
        ) from exc
    if not isinstance(record, dict):
        raise CorpusFormatError(f"line {line_number}: record is not an object", line_number)
    for field in ("id", "title", "text"):
        if field not in record:
            raise CorpusFormatError(
                f"line {line_number}: missing field {field!r}", line_number
            )
    doc_id = str(record["id"])
    if not doc_id:
        raise CorpusFormatError(f"line {line_number}: empty document id", line_number)
    return SourceDocument(doc_id=doc_id, title=str(record["title"]), body=str(record["text"]))


def ingest_corpus(
    input_path: str | Path,
    out_dir: str | Path,
    max_tokens: int = 100,
    stride: int = 100,
) -> CorpusStats:
    """Chunk every document of a line-delimited corpus file and persist the passages.

    Fail-fast: any malformed line (bad JSON, missing field, duplicate or
    empty id, unchunkable document) aborts the ingestion with its line
    number before anything is written, so there is never partial state.
    Re-ingesting the same file with the same parameters produces
    byte-identical output.
    """
    input_path = Path(input_path)
    out_dir = Path(out_dir)

    documents: list[SourceDocument] = []
    seen_ids: set[str] = set()
    with input_path.open("r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            doc = _parse_document_line(line, line_number)
            if doc.doc_id in seen_ids:
                raise CorpusFormatError(
                    f"line {line_number}: duplicate document id {doc.doc_id!r}", line_number
                )
            seen_ids.add(doc.doc_id)
            documents.append(doc)

    all_passages: list[Passage] = []
    line_by_doc = {doc.doc_id: i + 1 for i, doc in enumerate(documents)}
    for doc in documents:
        try:
            all_passages.extend(chunk_document(doc, max_tokens=max_tokens, stride=stride))
        except ValidationError as exc:
            number = line_by_doc[doc.doc_id]
            raise CorpusFormatError(f"line {number}: {exc}", number) from exc

    stats = CorpusStats(
        n_documents=len(documents),
        n_passages=len(all_passages),
        mean_passage_tokens=(
            sum(p.token_count for p in all_passages) / len(all_passages) if all_passages else 0.0
        ),
    )

    out_dir.mkdir(parents=True, exist_ok=True)
    offsets: dict[str, list[int]] = {}
    with (out_dir / PASSAGES_FILE).open("w", encoding="utf-8") as handle:
        position = 0
        for passage in all_passages:
            encoded = passage.to_json() + "\n"
            raw = encoded.encode("utf-8")
            offsets[passage.pid] = [position, len(raw)]
            handle.write(encoded)
            position += len(raw)
    with (out_dir / OFFSETS_FILE).open("w", encoding="utf-8") as handle:
        json.dump(offsets, handle, sort_keys=True, separators=(",", ":"))
    with (out_dir / STATS_FILE).open("w", encoding="utf-8") as handle:
        json.dump(
            {
                "n_documents": stats.n_documents,
                "n_passages": stats.n_passages,
                "mean_passage_tokens": stats.mean_passage_tokens,
                "max_tokens": max_tokens,
                "stride": stride,
            },
            handle,
            sort_keys=True,
        )
    return stats


class PassageStore:
    """Read-only access to an ingested corpus directory.

    Lookups seek into the append-only passage file via the pid-to-offset
    map; iteration streams passages in ingestion order.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        offsets_path = self.directory / OFFSETS_FILE
        if not offsets_path.exists():
            raise NotFoundError(f"no ingested corpus at {self.directory}")
        with offsets_path.open("r", encoding="utf-8") as handle:
            self._offsets: dict[str, list[int]] = json.load(handle)
        self._passages_path = self.directory / PASSAGES_FILE

    def __len__(self) -> int:
        return len(self._offsets)

    def __contains__(self, pid: str) -> bool:
        return pid in self._offsets

    def __iter__(self) -> Iterator[Passage]:
        with self._passages_path.open("r", encoding="utf-8") as handle:
            for line in handle:
                yield Passage.from_json(line)

    def get_passage(self, pid: str) -> Passage:
        try:
            offset, length = self._offsets[pid]
        except KeyError:
            raise NotFoundError(f"unknown passage id: {pid!r}") from None
        with self._passages_path.open("rb") as handle:
            handle.seek(offset)
            raw = handle.read(length)
        return Passage.from_json(raw.decode("utf-8"))

    def stats(self) -> CorpusStats:
        with (self.directory / STATS_FILE).open("r", encoding="utf-8") as handle:
            record = json.load(handle)
        return CorpusStats(
            n_documents=record["n_documents"],
            n_passages=record["n_passages"],
            mean_passage_tokens=record["mean_passage_tokens"],
        )
