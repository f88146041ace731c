"""Guided rewriting of a corpus through an OpenAI-compatible chat endpoint.

Every document is sent through a fixed prompt template that asks the model
to think inside <thinking_starts>/<thinking_ends> and to emit the improved
document inside <improved_response_starts>/<improved_response_ends>. The
run is resumable: an append-only ledger records per-document outcomes, and
completed ids are skipped on restart. Output shards are assembled in input
order after the run, so completion arrival order never leaks into the
corpus.
"""

from __future__ import annotations

import json
import os
import random
import threading
import time
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import requests

from .corpus import CorpusManifest, Document, iter_records, write_corpus
from .corpus import iter_documents
from .errors import (
    BudgetExceeded,
    EmptyDocument,
    EndpointUnreachable,
    MissingImprovedTags,
)
from .tokenizers import get_tokenizer, truncate_to_tokens

THINKING_START = "<thinking_starts>"
THINKING_END = "<thinking_ends>"
IMPROVED_START = "<improved_response_starts>"
IMPROVED_END = "<improved_response_ends>"
ALL_TAGS = (THINKING_START, THINKING_END, IMPROVED_START, IMPROVED_END)

PLACEHOLDER = "[ORIGINAL DOCUMENT]"
PROMPT_RESOURCE = "rewrite_v1.txt"

AUTH_TOKEN_ENV = "CORPUSMILL_API_KEY"

LEDGER_NAME = "ledger.jsonl"
COMPLETIONS_NAME = "completions.jsonl"
FAILURES_NAME = "failures.jsonl"

_RETRYABLE_STATUS = frozenset({429}) | frozenset(range(500, 600))


@dataclass
class GenerationConfig:
    endpoint_url: str
    model_name: str
    temperature: float = 1.0
    top_p: float = 0.9
    max_tokens: int = 8192
    max_input_tokens: int = 8192
    max_concurrency: int = 4
    retry_limit: int = 5
    seed: int | None = None
    # operational knobs beyond the sampling parameters
    backoff_base: float = 1.0
    backoff_cap: float = 60.0
    request_timeout: float = 120.0
    max_requests: int | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError("top_p must be in (0,1]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")


@dataclass
class RewriteOutput:
    doc_id: str
    thinking: str
    improved: str
    raw_completion: str
    finish_reason: str  # stop | length | error
    attempt_count: int


def load_prompt_template() -> str:
    return resources.files("corpusmill.prompts").joinpath(PROMPT_RESOURCE).read_text(encoding="utf-8")


def build_prompt(doc: Document, max_input_tokens: int, tokenizer,
                 template: str | None = None) -> str:
    """Fill the rewrite template with the (possibly truncated) document text.

    Truncation keeps the first max_input_tokens tokens and is recorded in
    doc.metadata so the provenance survives into the rewritten corpus.
    """
    text, truncated = truncate_to_tokens(doc.text, max_input_tokens, tokenizer)
    if not text.strip():
        raise EmptyDocument(f"document {doc.id} is empty after truncation")
    if truncated:
        doc.metadata["input_truncated"] = "true"
    tpl = template if template is not None else load_prompt_template()
    return tpl.replace(PLACEHOLDER, text)


def compose_tagged(thinking: str, improved: str) -> str:
    """Inverse of parse_tagged for tag-free inputs; used by mocks and tests."""
    return (
        f"{THINKING_START}{thinking}{THINKING_END}\n"
        f"{IMPROVED_START}{improved}{IMPROVED_END}"
    )


def _first_span(text: str, start_tag: str, end_tag: str) -> str | None:
    start = text.find(start_tag)
    if start < 0:
        return None
    start += len(start_tag)
    end = text.find(end_tag, start)
    if end < 0:
        return None
    return text[start:end]


def parse_tagged(raw_completion: str) -> tuple[str, str]:
    """Extract (thinking, improved) between the first tag pairs.

    Thinking tags are optional; the improved pair is mandatory and its
    absence raises MissingImprovedTags (callers route that to the retry
    path). Extracted spans are whitespace-stripped.
    """
    improved = _first_span(raw_completion, IMPROVED_START, IMPROVED_END)
    if improved is None:
        raise MissingImprovedTags("completion has no improved-response tag pair")
    thinking = _first_span(raw_completion, THINKING_START, THINKING_END) or ""
    return thinking.strip(), improved.strip()


def scrub_tags(text: str) -> str:
    """Remove any tag markers the model leaked into the final text."""
    for tag in ALL_TAGS:
        text = text.replace(tag, "")
    return text


class ChatCompletionsClient:
    """POST /v1/chat/completions with bounded retries and full-jitter backoff."""

    def __init__(self, cfg: GenerationConfig):
        self.cfg = cfg
        self.url = cfg.endpoint_url.rstrip("/") + "/v1/chat/completions"
        self._local = threading.local()

    def _session(self) -> requests.Session:
        if not hasattr(self._local, "session"):
            self._local.session = requests.Session()
            token = os.environ.get(AUTH_TOKEN_ENV)
            if token:
                self._local.session.headers["Authorization"] = f"Bearer {token}"
        return self._local.session

    def _payload(self, prompt: str) -> dict:
        body = {
            "model": self.cfg.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature,
            "top_p": self.cfg.top_p,
            "max_tokens": self.cfg.max_tokens,
        }
        if self.cfg.seed is not None:
            body["seed"] = self.cfg.seed
        return body

    def _backoff(self, attempt: int) -> float:
        cap = min(self.cfg.backoff_cap, self.cfg.backoff_base * (2 ** attempt))
        return random.uniform(0.0, cap)

    def complete(self, doc_id: str, prompt: str):
        """Returns an outcome dict; never raises for per-document failures."""
        attempts = 0
        last_status = None
        kind = "http_error"
        while True:
            attempts += 1
            try:
                resp = self._session().post(self.url, json=self._payload(prompt),
                                            timeout=self.cfg.request_timeout)
                last_status = resp.status_code
            except requests.RequestException:
                kind = "transport_error"
                last_status = None
                retryable = True
            else:
                if resp.status_code == 200:
                    try:
                        data = resp.json()
                        choice = data["choices"][0]
                        content = choice["message"]["content"]
                        finish = choice.get("finish_reason", "stop")
                    except (ValueError, KeyError, IndexError):
                        kind = "malformed_response"
                        retryable = True
                    else:
                        try:
                            thinking, improved = parse_tagged(content)
                            if not improved:
                                raise MissingImprovedTags("empty improved span")
                        except MissingImprovedTags:
                            kind = "missing_tags"
                            retryable = True
                        else:
                            if finish not in ("stop", "length"):
                                finish = "error"
                            return {
                                "ok": True,
                                "doc_id": doc_id,
                                "thinking": thinking,
                                "improved": scrub_tags(improved),
                                "raw_completion": content,
                                "finish_reason": finish,
                                "attempt_count": attempts,
                                "http_status": last_status,
                            }
                elif resp.status_code in _RETRYABLE_STATUS:
                    kind = "http_error"
                    retryable = True
                else:
                    kind = "non_retryable_status"
                    retryable = False
            if not retryable or attempts > self.cfg.retry_limit:
                return {
                    "ok": False,
                    "doc_id": doc_id,
                    "reason": kind,
                    "attempt_count": attempts,
                    "http_status": last_status,
                }
            time.sleep(self._backoff(attempts - 1))


def _read_jsonl(path: Path) -> list[dict]:
    if not path.exists():
        return []
    out = []
    for _lineno, obj in iter_records(path):
        if obj is not None:
            out.append(obj)
    return out


def _append_jsonl(fh, obj: dict) -> None:
    fh.write(json.dumps(obj, sort_keys=True, ensure_ascii=False) + "\n")
    fh.flush()


def rewrite_corpus(manifest: CorpusManifest, cfg: GenerationConfig, out_dir: str | Path,
                   resume: bool = False) -> tuple[CorpusManifest, list[dict]]:
    """Rewrite every document; emit a rewritten corpus plus a failure sidecar.

    Outcomes land in ledger.jsonl / completions.jsonl strictly in input
    order (an id-indexed reorder buffer serializes the concurrent results),
    which keeps the whole artifact tree reproducible against a
    deterministic endpoint. With resume=True, ids whose last ledger status
    is ok are skipped and previously failed ids are retried.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ledger_path = out_dir / LEDGER_NAME
    completions_path = out_dir / COMPLETIONS_NAME

    tokenizer = get_tokenizer(manifest.tokenizer_id)
    template = load_prompt_template()
    docs = list(iter_documents(manifest))

    done_ids: set[str] = set()
    if resume:
        last_status: dict[str, str] = {}
        for entry in _read_jsonl(ledger_path):
            last_status[entry["doc_id"]] = entry["status"]
        done_ids = {i for i, s in last_status.items() if s == "ok"}
    else:
        for stale in (ledger_path, completions_path):
            if stale.exists():
                stale.unlink()

    pending = [d for d in docs if d.id not in done_ids]
    client = ChatCompletionsClient(cfg)

    results: dict[int, dict] = {}
    next_flush = 0
    successes = 0
    requests_made = 0
    budget_hit = False

    def handle(index: int, doc: Document) -> tuple[int, dict]:
        try:
            prompt = build_prompt(doc, cfg.max_input_tokens, tokenizer, template)
        except EmptyDocument:
            return index, {"ok": False, "doc_id": doc.id, "reason": "empty_document",
                           "attempt_count": 0, "http_status": None}
        return index, client.complete(doc.id, prompt)

    with open(ledger_path, "a", encoding="utf-8") as ledger_fh, \
            open(completions_path, "a", encoding="utf-8") as compl_fh:

        def flush_ready():
            nonlocal next_flush, successes
            while next_flush in results:
                res = results.pop(next_flush)
                if res["ok"]:
                    successes += 1
                    _append_jsonl(compl_fh, {
                        "doc_id": res["doc_id"],
                        "thinking": res["thinking"],
                        "improved": res["improved"],
                        "raw_completion": res["raw_completion"],
                        "finish_reason": res["finish_reason"],
                        "attempt_count": res["attempt_count"],
                    })
                    _append_jsonl(ledger_fh, {"doc_id": res["doc_id"], "status": "ok",
                                              "attempt_count": res["attempt_count"],
                                              "http_status": res["http_status"]})
                else:
                    if (next_flush == 0 and successes == 0
                            and res["reason"] == "transport_error"):
                        raise EndpointUnreachable(
                            f"first request to {cfg.endpoint_url} failed after "
                            f"{res['attempt_count']} attempts")
                    _append_jsonl(ledger_fh, {"doc_id": res["doc_id"], "status": "failed",
                                              "attempt_count": res["attempt_count"],
                                              "http_status": res["http_status"],
                                              "reason": res["reason"]})
                next_flush += 1

        with ThreadPoolExecutor(max_workers=cfg.max_concurrency) as pool:
            in_flight = set()
            for index, doc in enumerate(pending):
                if cfg.max_requests is not None and requests_made >= cfg.max_requests:
                    budget_hit = True
                    break
                while len(in_flight) >= cfg.max_concurrency:
                    finished, in_flight = wait(in_flight, return_when=FIRST_COMPLETED)
                    for fut in finished:
                        idx, res = fut.result()
                        requests_made += res["attempt_count"]
                        results[idx] = res
                    flush_ready()
                in_flight.add(pool.submit(handle, index, doc))
            for fut in in_flight:
                idx, res = fut.result()
                requests_made += res["attempt_count"]
                results[idx] = res
            flush_ready()

    if budget_hit:
        raise BudgetExceeded(
            f"request cap {cfg.max_requests} reached after {requests_made} requests; "
            f"rerun with --resume to continue")

    # Assemble the rewritten corpus in input order from the completions store.
    improved_by_id: dict[str, dict] = {}
    for entry in _read_jsonl(completions_path):
        improved_by_id[entry["doc_id"]] = entry

    final_status: dict[str, dict] = {}
    for entry in _read_jsonl(ledger_path):
        final_status[entry["doc_id"]] = entry

    failures: list[dict] = []

    def rewritten_docs():
        for doc in docs:
            entry = final_status.get(doc.id)
            if entry is None or entry["status"] != "ok":
                failures.append({
                    "doc_id": doc.id,
                    "reason": (entry or {}).get("reason", "not_attempted"),
                    "attempt_count": (entry or {}).get("attempt_count", 0),
                    "last_http_status": (entry or {}).get("http_status"),
                })
                continue
            compl = improved_by_id[doc.id]
            improved = compl["improved"]
            meta = dict(doc.metadata)
            meta["rewrite_model"] = cfg.model_name
            yield Document(
                id=doc.id,
                text=improved,
                url=doc.url,
                source_tag="rewritten",
                token_count=tokenizer.count(improved),
                metadata=meta,
            )

    rewritten_manifest = write_corpus(
        rewritten_docs(), out_dir, manifest.tokenizer_id,
        corpus_name=manifest.corpus_name + "-rewritten",
    )

    with open(out_dir / FAILURES_NAME, "w", encoding="utf-8") as fh:
        for rec in failures:
            _append_jsonl(fh, rec)

    return rewritten_manifest, failures
