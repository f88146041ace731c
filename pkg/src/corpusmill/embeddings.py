"""Pluggable sentence-embedding providers for the similarity analyses.

The pipeline never hosts an embedding model itself. Vectors come either
from a precomputed TSV table (id, then tab-separated components) or from
an OpenAI-compatible /v1/embeddings endpoint with the same bounded
concurrency and retry discipline as the rewrite client.
"""

from __future__ import annotations

import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np
import requests

from .corpus import Document
from .errors import ProviderFailure
from .rewrite import AUTH_TOKEN_ENV


class FileVectorProvider:
    """Reads precomputed id -> vector rows from a TSV file."""

    def __init__(self, path: str | Path):
        self.path = str(path)
        self.provider_id = f"file:{self.path}"
        self._table: dict[str, np.ndarray] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                self._table[parts[0]] = np.array([float(x) for x in parts[1:]], dtype=np.float64)

    def embed_documents(self, docs: Sequence[Document]):
        vectors: dict[str, np.ndarray] = {}
        failures: list[dict] = []
        for doc in docs:
            vec = self._table.get(doc.id)
            if vec is None:
                failures.append({"doc_id": doc.id, "reason": "id_not_in_table"})
            else:
                vectors[doc.id] = vec
        return vectors, failures


class HttpEmbeddingProvider:
    """Fetches embeddings from an OpenAI-compatible endpoint, batched."""

    def __init__(self, endpoint_url: str, model_name: str = "embedder",
                 max_concurrency: int = 4, retry_limit: int = 5,
                 batch_size: int = 16, backoff_base: float = 1.0,
                 backoff_cap: float = 60.0, request_timeout: float = 60.0):
        self.url = endpoint_url.rstrip("/") + "/v1/embeddings"
        self.model_name = model_name
        self.max_concurrency = max_concurrency
        self.retry_limit = retry_limit
        self.batch_size = batch_size
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self.request_timeout = request_timeout
        self.provider_id = f"http:{endpoint_url}:{model_name}"
        self._local = threading.local()

    def _session(self) -> requests.Session:
        if not hasattr(self._local, "session"):
            self._local.session = requests.Session()
            token = os.environ.get(AUTH_TOKEN_ENV)
            if token:
                self._local.session.headers["Authorization"] = f"Bearer {token}"
        return self._local.session

    def _fetch_batch(self, texts: list[str]) -> list[np.ndarray]:
        attempts = 0
        while True:
            attempts += 1
            try:
                resp = self._session().post(
                    self.url,
                    json={"model": self.model_name, "input": texts},
                    timeout=self.request_timeout,
                )
                if resp.status_code == 200:
                    data = resp.json()["data"]
                    ordered = sorted(data, key=lambda d: d["index"])
                    return [np.asarray(d["embedding"], dtype=np.float64) for d in ordered]
                retryable = resp.status_code == 429 or resp.status_code >= 500
            except requests.RequestException:
                retryable = True
            if not retryable or attempts > self.retry_limit:
                raise ProviderFailure(f"embedding request failed after {attempts} attempts")
            cap = min(self.backoff_cap, self.backoff_base * (2 ** (attempts - 1)))
            time.sleep(random.uniform(0.0, cap))

    def embed_documents(self, docs: Sequence[Document]):
        batches = [docs[i:i + self.batch_size] for i in range(0, len(docs), self.batch_size)]
        vectors: dict[str, np.ndarray] = {}
        failures: list[dict] = []
        lock = threading.Lock()

        def run(batch):
            try:
                vecs = self._fetch_batch([d.text for d in batch])
            except ProviderFailure as exc:
                with lock:
                    for d in batch:
                        failures.append({"doc_id": d.id, "reason": str(exc)})
                return
            with lock:
                for d, v in zip(batch, vecs):
                    vectors[d.id] = v

        with ThreadPoolExecutor(max_workers=self.max_concurrency) as pool:
            list(pool.map(run, batches))
        return vectors, failures


def provider_from_spec(spec: str, model_name: str = "embedder"):
    """Resolve 'file:<tsv>' or an http(s) endpoint URL to a provider."""
    if spec.startswith("file:"):
        return FileVectorProvider(spec.split(":", 1)[1])
    if spec.startswith("http://") or spec.startswith("https://"):
        return HttpEmbeddingProvider(spec, model_name=model_name)
    raise ValueError(f"unknown embedding provider spec: {spec!r}")


def write_vectors_tsv(vectors: dict[str, np.ndarray], path: str | Path) -> None:
    """Export vectors in the same TSV format the file provider reads."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id in sorted(vectors):
            comps = "\t".join(repr(float(x)) for x in vectors[doc_id])
            fh.write(f"{doc_id}\t{comps}\n")
