"""Shared corpus builders and mock-endpoint fixtures."""

from __future__ import annotations

import json
import random
from pathlib import Path

import pytest

from corpusmill.corpus import Document, write_corpus

WORDS = (
    "data model train token web text corpus filter quality score rewrite mix "
    "budget epoch sample document source stream shard record line page draft "
    "improve select rank count unique pair node graph curve point table grid"
).split()


def random_text(rng: random.Random, n_tokens: int) -> str:
    return " ".join(rng.choice(WORDS) for _ in range(n_tokens))


def make_documents(n: int, seed: int = 0, min_tokens: int = 5, max_tokens: int = 40,
                   prefix: str = "doc") -> list[Document]:
    rng = random.Random(seed)
    docs = []
    for i in range(n):
        text = random_text(rng, rng.randint(min_tokens, max_tokens))
        docs.append(Document(id=f"{prefix}{i:05d}", text=text,
                             token_count=len(text.split())))
    return docs


def make_corpus(tmp_path: Path, docs: list[Document], name: str = "corpus",
                tokenizer_id: str = "ws", shard_size: int = 50_000):
    out = tmp_path / name
    return write_corpus(docs, out, tokenizer_id, corpus_name=name, shard_size=shard_size)


def write_jsonl(path: Path, records: list[dict]) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return path


@pytest.fixture
def mock_server():
    """Failure-free deterministic chat/embeddings endpoint."""
    from corpusmill.testing import MockLLMServer
    server = MockLLMServer()
    url = server.start()
    server.url = url
    yield server
    server.stop()
