"""Corpus ingestion, validation, sharding and exact deduplication.

Corpora are directories of newline-delimited JSON shards (optionally
gzipped, detected by magic bytes) plus a manifest.json describing them.
Documents are immutable records; every token quantity in the pipeline is
derived from the manifest's tokenizer_id.
"""

from __future__ import annotations

import gzip
import hashlib
import json
import os
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import EmptyCorpus, IoFailure, MalformedRecord
from .tokenizers import get_tokenizer

SOURCE_TAGS = ("raw", "rewritten", "external")

MANIFEST_NAME = "manifest.json"
DEFAULT_SHARD_SIZE = 50_000


@dataclass
class Document:
    """One text record with stable identity and provenance."""

    id: str
    text: str
    url: str | None = None
    source_tag: str = "raw"
    token_count: int = 0
    metadata: dict[str, str] = field(default_factory=dict)

    def to_record(self) -> dict:
        rec = {
            "id": self.id,
            "text": self.text,
            "source_tag": self.source_tag,
            "token_count": self.token_count,
        }
        if self.url is not None:
            rec["url"] = self.url
        if self.metadata:
            rec["metadata"] = self.metadata
        return rec


@dataclass
class CorpusManifest:
    """Totals and shard listing for one corpus directory."""

    corpus_name: str
    shard_paths: list[str]
    document_count: int
    total_tokens: int
    tokenizer_id: str
    malformed_skipped: int = 0
    duplicate_id_skipped: int = 0
    provenance: dict[str, str] = field(default_factory=dict)

    @property
    def root(self) -> Path:
        """Directory holding the shards (parent of the first shard)."""
        if not self.shard_paths:
            raise EmptyCorpus(f"corpus {self.corpus_name!r} has no shards")
        return Path(self.shard_paths[0]).parent


def content_id(text: str) -> str:
    """64-bit content hash rendered as hex; the default document id."""
    return hashlib.blake2b(text.encode("utf-8"), digest_size=8).hexdigest()


def normalized_text_key(text: str) -> str:
    """Dedup key: NFC, lowercased, whitespace-collapsed, then 64-bit hashed."""
    norm = " ".join(unicodedata.normalize("NFC", text).lower().split())
    return hashlib.blake2b(norm.encode("utf-8"), digest_size=8).hexdigest()


def atomic_write_json(obj: dict, path: str | Path) -> None:
    """Write JSON via temp file + rename so readers never see a partial file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def save_manifest(manifest: CorpusManifest, path: str | Path) -> None:
    obj = {
        "corpus_name": manifest.corpus_name,
        "shard_paths": [Path(p).name for p in manifest.shard_paths],
        "document_count": manifest.document_count,
        "total_tokens": manifest.total_tokens,
        "tokenizer_id": manifest.tokenizer_id,
        "malformed_skipped": manifest.malformed_skipped,
        "duplicate_id_skipped": manifest.duplicate_id_skipped,
        "provenance": manifest.provenance,
    }
    atomic_write_json(obj, path)


def load_manifest(path: str | Path) -> CorpusManifest:
    """Load a manifest from a file or from a corpus directory."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot read manifest {path}: {exc}") from exc
    root = path.parent
    return CorpusManifest(
        corpus_name=obj["corpus_name"],
        shard_paths=[str(root / p) for p in obj["shard_paths"]],
        document_count=obj["document_count"],
        total_tokens=obj["total_tokens"],
        tokenizer_id=obj["tokenizer_id"],
        malformed_skipped=obj.get("malformed_skipped", 0),
        duplicate_id_skipped=obj.get("duplicate_id_skipped", 0),
        provenance=obj.get("provenance", {}),
    )


def _open_maybe_gzip(path: Path):
    try:
        with open(path, "rb") as probe:
            magic = probe.read(2)
    except OSError as exc:
        raise IoFailure(f"cannot open {path}: {exc}") from exc
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, "r", encoding="utf-8")


def _record_to_document(obj, tokenizer) -> Document:
    if not isinstance(obj, dict):
        raise MalformedRecord("record is not a JSON object")
    text = obj.get("text")
    if not isinstance(text, str):
        raise MalformedRecord("record has no string 'text' field")
    raw_id = obj.get("id")
    if raw_id is None or str(raw_id) == "":
        doc_id = content_id(text)
    else:
        doc_id = str(raw_id)
    url = obj.get("url")
    if url is not None and not isinstance(url, str):
        url = str(url)
    source_tag = obj.get("source_tag", "raw")
    if source_tag not in SOURCE_TAGS:
        raise MalformedRecord(f"invalid source_tag {source_tag!r}")
    meta = obj.get("metadata") or {}
    if not isinstance(meta, dict):
        raise MalformedRecord("metadata is not an object")
    metadata = {str(k): str(v) for k, v in meta.items()}
    return Document(
        id=doc_id,
        text=text,
        url=url,
        source_tag=source_tag,
        token_count=tokenizer.count(text),
        metadata=metadata,
    )


def iter_records(path: str | Path) -> Iterator[tuple[int, dict | None]]:
    """Yield (line_number, parsed_record_or_None) per non-blank line of a shard."""
    with _open_maybe_gzip(Path(path)) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError:
                yield lineno, None


class ShardWriter:
    """Writes documents into fixed-size numbered shards under one directory."""

    def __init__(self, out_dir: str | Path, shard_size: int = DEFAULT_SHARD_SIZE,
                 gzip_output: bool = False):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.shard_size = shard_size
        self.gzip_output = gzip_output
        self.shard_paths: list[str] = []
        self._fh = None
        self._in_shard = 0

    def _open_next(self):
        idx = len(self.shard_paths)
        suffix = ".jsonl.gz" if self.gzip_output else ".jsonl"
        path = self.out_dir / f"shard_{idx:05d}{suffix}"
        self.shard_paths.append(str(path))
        if self.gzip_output:
            # mtime=0 keeps shard bytes reproducible across runs
            raw = open(path, "wb")
            self._fh = gzip.GzipFile(fileobj=raw, mode="wb", mtime=0)
            self._raw = raw
        else:
            self._fh = open(path, "w", encoding="utf-8")
            self._raw = None
        self._in_shard = 0

    def write(self, doc: Document) -> None:
        if self._fh is None or self._in_shard >= self.shard_size:
            if self._fh is not None:
                self.close_current()
            self._open_next()
        line = json.dumps(doc.to_record(), sort_keys=True, ensure_ascii=False) + "\n"
        if self.gzip_output:
            self._fh.write(line.encode("utf-8"))
        else:
            self._fh.write(line)
        self._in_shard += 1

    def close_current(self):
        if self._fh is not None:
            self._fh.close()
            if self._raw is not None:
                self._raw.close()
            self._fh = None

    def close(self):
        self.close_current()


def ingest(input_paths: Iterable[str | Path], tokenizer_id: str, out_dir: str | Path,
           corpus_name: str | None = None, shard_size: int = DEFAULT_SHARD_SIZE,
           gzip_output: bool = False) -> CorpusManifest:
    """Read raw JSONL files into a normalized, sharded corpus.

    Input order is the lexicographic order of the input paths. Malformed
    records are skipped and counted; a record whose id repeats an earlier
    one is skipped and counted separately (first occurrence wins). A corpus
    with zero valid documents is fatal.
    """
    tokenizer = get_tokenizer(tokenizer_id)
    paths = sorted(str(p) for p in input_paths)
    if not paths:
        raise EmptyCorpus("no input files")
    out_dir = Path(out_dir)
    name = corpus_name or out_dir.name

    writer = ShardWriter(out_dir, shard_size=shard_size, gzip_output=gzip_output)
    seen_ids: set[str] = set()
    doc_count = 0
    token_total = 0
    malformed = 0
    dup_ids = 0
    for path in paths:
        for _lineno, obj in iter_records(path):
            if obj is None:
                malformed += 1
                continue
            try:
                doc = _record_to_document(obj, tokenizer)
            except MalformedRecord:
                malformed += 1
                continue
            if doc.id in seen_ids:
                dup_ids += 1
                continue
            seen_ids.add(doc.id)
            writer.write(doc)
            doc_count += 1
            token_total += doc.token_count
    writer.close()

    if doc_count == 0:
        raise EmptyCorpus(f"no valid documents in {len(paths)} input file(s)")

    manifest = CorpusManifest(
        corpus_name=name,
        shard_paths=sorted(writer.shard_paths),
        document_count=doc_count,
        total_tokens=token_total,
        tokenizer_id=tokenizer_id,
        malformed_skipped=malformed,
        duplicate_id_skipped=dup_ids,
    )
    save_manifest(manifest, out_dir / MANIFEST_NAME)
    return manifest


def iter_documents(manifest: CorpusManifest) -> Iterator[Document]:
    """Yield documents in shard order. Stored token counts are trusted."""
    for shard in manifest.shard_paths:
        for lineno, obj in iter_records(shard):
            if obj is None:
                raise MalformedRecord(f"{shard}:{lineno}: bad JSON in managed shard")
            yield Document(
                id=str(obj["id"]),
                text=obj["text"],
                url=obj.get("url"),
                source_tag=obj.get("source_tag", "raw"),
                token_count=int(obj["token_count"]),
                metadata=obj.get("metadata", {}),
            )


def write_corpus(docs: Iterable[Document], out_dir: str | Path, tokenizer_id: str,
                 corpus_name: str | None = None, shard_size: int = DEFAULT_SHARD_SIZE,
                 gzip_output: bool = False,
                 provenance: dict[str, str] | None = None) -> CorpusManifest:
    """Write documents to a new corpus directory, trusting their token counts."""
    out_dir = Path(out_dir)
    writer = ShardWriter(out_dir, shard_size=shard_size, gzip_output=gzip_output)
    doc_count = 0
    token_total = 0
    for doc in docs:
        writer.write(doc)
        doc_count += 1
        token_total += doc.token_count
    writer.close()
    manifest = CorpusManifest(
        corpus_name=corpus_name or out_dir.name,
        shard_paths=sorted(writer.shard_paths),
        document_count=doc_count,
        total_tokens=token_total,
        tokenizer_id=tokenizer_id,
        provenance=provenance or {},
    )
    save_manifest(manifest, out_dir / MANIFEST_NAME)
    return manifest


def deduplicate(manifest: CorpusManifest, out_dir: str | Path,
                shard_size: int = DEFAULT_SHARD_SIZE) -> CorpusManifest:
    """Exact-duplicate removal over the whole corpus.

    Documents whose normalized text (NFC, lowercase, whitespace-collapsed)
    hashes equal are duplicates; the first in shard order survives.
    """
    def survivors():
        seen: set[str] = set()
        for doc in iter_documents(manifest):
            key = normalized_text_key(doc.text)
            if key in seen:
                continue
            seen.add(key)
            yield doc

    return write_corpus(
        survivors(), out_dir, manifest.tokenizer_id,
        corpus_name=manifest.corpus_name, shard_size=shard_size,
    )


def count_tokens(text: str, tokenizer_id: str) -> int:
    """Deterministic token count of text under a registered tokenizer."""
    return get_tokenizer(tokenizer_id).count(text)
