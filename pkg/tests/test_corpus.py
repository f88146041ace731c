"""Ingestion, dedup and round-trip contracts for the corpus layer."""

from __future__ import annotations

import gzip
import json
import random
import unicodedata

import pytest
from hypothesis import given, settings, strategies as st

from corpusmill.corpus import (
    count_tokens,
    deduplicate,
    ingest,
    iter_documents,
    load_manifest,
)
from corpusmill.errors import EmptyCorpus, UnknownTokenizer

from conftest import make_documents, random_text, write_jsonl


def test_ingest_skips_malformed(tmp_path):
    path = tmp_path / "in.jsonl"
    with open(path, "w") as fh:
        fh.write(json.dumps({"id": "a", "text": "one two"}) + "\n")
        fh.write("{broken\n")
        fh.write(json.dumps({"id": "b", "text": "three"}) + "\n")
        fh.write(json.dumps({"id": "c", "text": "four five six"}) + "\n")
    manifest = ingest([path], "ws", tmp_path / "out")
    assert manifest.document_count == 3
    assert manifest.malformed_skipped == 1
    assert manifest.total_tokens == 6


def test_ingest_record_without_text_is_malformed(tmp_path):
    path = write_jsonl(tmp_path / "in.jsonl", [{"id": "a"}, {"text": "ok fine"}])
    manifest = ingest([path], "ws", tmp_path / "out")
    assert manifest.document_count == 1
    assert manifest.malformed_skipped == 1


def test_ingest_empty_file_is_fatal(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    with pytest.raises(EmptyCorpus):
        ingest([path], "ws", tmp_path / "out")


def test_ingest_gzip_detected_by_magic_bytes(tmp_path):
    path = tmp_path / "in.jsonl"  # no .gz suffix on purpose
    with gzip.open(path, "wt", encoding="utf-8") as fh:
        fh.write(json.dumps({"text": "packed text here"}) + "\n")
    manifest = ingest([path], "ws", tmp_path / "out")
    assert manifest.document_count == 1
    assert manifest.total_tokens == 3


def test_ingest_content_hash_ids_are_stable(tmp_path):
    path = write_jsonl(tmp_path / "in.jsonl", [{"text": "no id here"}])
    m1 = ingest([path], "ws", tmp_path / "out1")
    m2 = ingest([path], "ws", tmp_path / "out2")
    id1 = next(iter_documents(m1)).id
    id2 = next(iter_documents(m2)).id
    assert id1 == id2
    assert len(id1) == 16  # 64-bit hash as hex


def test_ingest_token_totals_match_recount_oracle(tmp_path):
    rng = random.Random(11)
    records = [{"id": f"r{i}", "text": random_text(rng, rng.randint(0, 50))}
               for i in range(10_000)]
    path = write_jsonl(tmp_path / "big.jsonl", records)
    manifest = ingest([path], "ws", tmp_path / "out")
    assert manifest.document_count == 10_000
    # independent single-threaded re-count of every document
    expected = sum(len(r["text"].split()) for r in records)
    assert manifest.total_tokens == expected
    recount = sum(count_tokens(d.text, "ws") for d in iter_documents(manifest))
    assert recount == expected


def test_ingest_order_stability(tmp_path):
    rng = random.Random(3)
    records = [{"id": f"r{i}", "text": random_text(rng, 8)} for i in range(50)]
    path_a = write_jsonl(tmp_path / "a.jsonl", records)
    shuffled = records[:]
    rng.shuffle(shuffled)
    path_b = write_jsonl(tmp_path / "b.jsonl", shuffled)
    ma = ingest([path_a], "ws", tmp_path / "outa")
    mb = ingest([path_b], "ws", tmp_path / "outb")
    multiset_a = sorted((d.id, d.text, d.token_count) for d in iter_documents(ma))
    multiset_b = sorted((d.id, d.text, d.token_count) for d in iter_documents(mb))
    assert multiset_a == multiset_b


def test_roundtrip_write_then_ingest(tmp_path):
    docs = make_documents(200, seed=5)
    from conftest import make_corpus
    manifest = make_corpus(tmp_path, docs, name="orig")
    re_manifest = ingest(manifest.shard_paths, "ws", tmp_path / "reingested")
    orig = sorted((d.id, d.text, d.token_count) for d in iter_documents(manifest))
    back = sorted((d.id, d.text, d.token_count) for d in iter_documents(re_manifest))
    assert orig == back


def test_manifest_save_load_roundtrip(tmp_path):
    docs = make_documents(10)
    from conftest import make_corpus
    manifest = make_corpus(tmp_path, docs)
    loaded = load_manifest(tmp_path / "corpus")
    assert loaded.document_count == manifest.document_count
    assert loaded.total_tokens == manifest.total_tokens
    assert loaded.tokenizer_id == "ws"
    assert [str(p) for p in loaded.shard_paths] == [str(p) for p in manifest.shard_paths]


# --- dedup ---

def test_dedup_byte_identical(tmp_path):
    path = write_jsonl(tmp_path / "in.jsonl", [
        {"id": "a", "text": "same text twice"},
        {"id": "b", "text": "same text twice"},
    ])
    manifest = ingest([path], "ws", tmp_path / "out")
    deduped = deduplicate(manifest, tmp_path / "dedup")
    assert deduped.document_count == 1
    assert next(iter_documents(deduped)).id == "a"  # first in shard order survives


def test_dedup_normalizes_whitespace_and_case(tmp_path):
    path = write_jsonl(tmp_path / "in.jsonl", [
        {"id": "a", "text": "Hello  World"},
        {"id": "b", "text": "hello world  "},
        {"id": "c", "text": "hello\nworld"},
    ])
    manifest = ingest([path], "ws", tmp_path / "out")
    deduped = deduplicate(manifest, tmp_path / "dedup")
    assert deduped.document_count == 1


def test_dedup_matches_quadratic_oracle(tmp_path):
    rng = random.Random(23)
    texts = []
    for i in range(1_000):
        if i % 7 == 0 and texts:
            base = rng.choice(texts)
            variant = rng.choice([base, base.upper(), base + "  ", base.replace(" ", "\t")])
            texts.append(variant)
        else:
            texts.append(random_text(rng, rng.randint(3, 12)))
    records = [{"id": f"r{i:04d}", "text": t} for i, t in enumerate(texts)]
    path = write_jsonl(tmp_path / "in.jsonl", records)
    manifest = ingest([path], "ws", tmp_path / "out")
    deduped = deduplicate(manifest, tmp_path / "dedup")

    # O(n^2) pairwise normalized-string-equality oracle
    def norm(t):
        return " ".join(unicodedata.normalize("NFC", t).lower().split())

    survivors = []
    for i, t in enumerate(texts):
        if not any(norm(texts[j]) == norm(t) for j in range(i)):
            survivors.append(f"r{i:04d}")
    assert [d.id for d in iter_documents(deduped)] == survivors


def test_dedup_idempotent_and_never_grows(tmp_path):
    docs = make_documents(300, seed=9)
    docs[10] = docs[10].__class__(id="dup", text=docs[0].text,
                                  token_count=docs[0].token_count)
    from conftest import make_corpus
    manifest = make_corpus(tmp_path, docs)
    once = deduplicate(manifest, tmp_path / "d1")
    twice = deduplicate(once, tmp_path / "d2")
    assert once.total_tokens <= manifest.total_tokens
    assert twice.document_count == once.document_count
    assert twice.total_tokens == once.total_tokens
    ids_once = [d.id for d in iter_documents(once)]
    ids_twice = [d.id for d in iter_documents(twice)]
    assert ids_once == ids_twice


# --- count_tokens ---

def test_count_tokens_trivials():
    assert count_tokens("", "ws") == 0
    assert count_tokens("a b c", "ws") == 3
    with pytest.raises(UnknownTokenizer):
        count_tokens("x", "nope")


@settings(max_examples=50)
@given(st.lists(st.sampled_from(["alpha", "beta", "Gamma", "delta  x"]), max_size=20))
def test_dedup_key_insensitive_to_case(words):
    from corpusmill.corpus import normalized_text_key
    text = " ".join(words)
    assert normalized_text_key(text) == normalized_text_key(text.upper())
    assert normalized_text_key(text) == normalized_text_key("  " + text + " ")
