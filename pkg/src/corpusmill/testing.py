"""Deterministic in-process mock of the generation and embedding endpoints.

The chat mock parses the incoming rewrite prompt, pulls out the original
draft, and answers with a completion that is a pure function of the draft
text, so whole-pipeline runs are reproducible. Failure injection is
hash-based: a configurable fraction of drafts answer HTTP 500 for their
first `fail_times` requests and succeed afterwards, which is exactly the
shape needed to exercise retry exhaustion followed by resume.
"""

from __future__ import annotations

import hashlib
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .rewrite import compose_tagged


def _draft_key(draft: str) -> str:
    return hashlib.blake2b(draft.encode("utf-8"), digest_size=8).hexdigest()


def fails_for(draft: str, fraction: float, salt: int) -> bool:
    """Deterministic per-draft failure decision used by the mock server."""
    if fraction <= 0:
        return False
    h = hashlib.blake2b(f"{salt}:{draft}".encode("utf-8"), digest_size=8).hexdigest()
    return (int(h, 16) % 10_000) < fraction * 10_000


def default_rewrite(draft: str) -> str:
    """Deterministic stand-in for a guided rewrite of the draft."""
    words = draft.split()
    headline = " ".join(words[:6])
    return (
        f"An organized treatment of the topic \"{headline}\" follows. "
        f"{' '.join(words)} "
        "In conclusion, the material above is restated with clearer structure and "
        "additional connective reasoning between the main points."
    )


def default_thinking(draft: str) -> str:
    words = draft.split()
    return (
        f"The draft has {len(words)} words. The core task is to present its content "
        "coherently. Plan: identify the purpose, order the points, then rewrite."
    )


class MockLLMServer:
    """OpenAI-compatible /v1/chat/completions and /v1/embeddings mock."""

    def __init__(self, fail_fraction: float = 0.0, fail_times: int = 0, salt: int = 0,
                 fixed_completion: str | None = None, embedding_dim: int = 16):
        self.fail_fraction = fail_fraction
        self.fail_times = fail_times
        self.salt = salt
        self.fixed_completion = fixed_completion
        self.embedding_dim = embedding_dim
        self._lock = threading.Lock()
        self.request_counts: dict[str, int] = {}
        self.total_requests = 0
        self._server: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    # -- lifecycle --

    def start(self) -> str:
        mock = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # quiet
                pass

            def _reply(self, status: int, obj: dict):
                body = json.dumps(obj).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_POST(self):
                length = int(self.headers.get("Content-Length", "0"))
                payload = json.loads(self.rfile.read(length) or b"{}")
                if self.path == "/v1/chat/completions":
                    self._reply(*mock.handle_chat(payload))
                elif self.path == "/v1/embeddings":
                    self._reply(*mock.handle_embeddings(payload))
                else:
                    self._reply(404, {"error": "no such route"})

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        host, port = self._server.server_address
        return f"http://{host}:{port}"

    def stop(self):
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None

    def __enter__(self):
        self.url = self.start()
        return self

    def __exit__(self, *exc):
        self.stop()

    # -- handlers --

    def handle_chat(self, payload: dict) -> tuple[int, dict]:
        prompt = payload["messages"][0]["content"]
        marker = "Original Draft: "
        draft = prompt.split(marker, 1)[1] if marker in prompt else prompt
        key = _draft_key(draft)
        with self._lock:
            self.total_requests += 1
            self.request_counts[key] = self.request_counts.get(key, 0) + 1
            count = self.request_counts[key]
        if fails_for(draft, self.fail_fraction, self.salt) and count <= self.fail_times:
            return 500, {"error": {"message": "injected failure", "type": "server_error"}}
        if self.fixed_completion is not None:
            content = self.fixed_completion
        else:
            content = compose_tagged(default_thinking(draft), default_rewrite(draft))
        return 200, {
            "id": f"chatcmpl-{key}",
            "object": "chat.completion",
            "model": payload.get("model", "mock"),
            "choices": [{
                "index": 0,
                "message": {"role": "assistant", "content": content},
                "finish_reason": "stop",
            }],
        }

    def handle_embeddings(self, payload: dict) -> tuple[int, dict]:
        inputs = payload["input"]
        if isinstance(inputs, str):
            inputs = [inputs]
        data = []
        for i, text in enumerate(inputs):
            seed = int(hashlib.blake2b(text.encode("utf-8"), digest_size=8).hexdigest(), 16)
            rng = np.random.default_rng(seed)
            vec = rng.normal(size=self.embedding_dim)
            vec /= np.linalg.norm(vec)
            data.append({"object": "embedding", "index": i, "embedding": vec.tolist()})
        return 200, {"object": "list", "data": data, "model": payload.get("model", "mock")}
