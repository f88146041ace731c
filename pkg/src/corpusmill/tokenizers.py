"""Tokenizer registry used for every token count in the pipeline.

Two built-ins:

* ``ws`` — Unicode-whitespace word split. The default for desk-scale work.
* ``subword:<vocab-file>`` — greedy longest-match segmentation over a
  user-supplied vocabulary (one token per line, UTF-8). Text is first split
  on whitespace; within each chunk the longest vocabulary entry starting at
  the cursor is consumed, and a character with no match counts as one
  unknown token.

All budget arithmetic downstream is relative to a tokenizer_id recorded in
the corpus manifest, so counts are comparable only within one id.
"""

from __future__ import annotations

import re
from pathlib import Path

from .errors import UnknownTokenizer

_WORD_RE = re.compile(r"\S+")


class WhitespaceTokenizer:
    """Splits on Unicode whitespace; each run of non-space characters is one token."""

    tokenizer_id = "ws"

    def count(self, text: str) -> int:
        return len(text.split())

    def spans(self, text: str) -> list[tuple[int, int]]:
        """Character (start, end) span of each token, in order."""
        return [m.span() for m in _WORD_RE.finditer(text)]


class SubwordTokenizer:
    """Greedy longest-match segmentation over a fixed vocabulary."""

    def __init__(self, vocab_path: str | Path):
        self.vocab_path = str(vocab_path)
        self.tokenizer_id = f"subword:{self.vocab_path}"
        try:
            entries = Path(vocab_path).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise UnknownTokenizer(f"cannot read vocabulary file {vocab_path}: {exc}") from exc
        self.vocab = {e for e in entries if e}
        if not self.vocab:
            raise UnknownTokenizer(f"vocabulary file {vocab_path} has no entries")
        self.max_len = max(len(e) for e in self.vocab)

    def _segment_chunk(self, chunk: str) -> int:
        count = 0
        i = 0
        n = len(chunk)
        while i < n:
            match_len = 0
            for length in range(min(self.max_len, n - i), 0, -1):
                if chunk[i:i + length] in self.vocab:
                    match_len = length
                    break
            if match_len == 0:
                match_len = 1  # unknown character, counts as one token
            count += 1
            i += match_len
        return count

    def count(self, text: str) -> int:
        return sum(self._segment_chunk(c) for c in text.split())

    def spans(self, text: str) -> list[tuple[int, int]]:
        out: list[tuple[int, int]] = []
        for m in _WORD_RE.finditer(text):
            chunk = m.group()
            base = m.start()
            i = 0
            n = len(chunk)
            while i < n:
                match_len = 0
                for length in range(min(self.max_len, n - i), 0, -1):
                    if chunk[i:i + length] in self.vocab:
                        match_len = length
                        break
                if match_len == 0:
                    match_len = 1
                out.append((base + i, base + i + match_len))
                i += match_len
        return out


def get_tokenizer(tokenizer_id: str):
    """Resolve a tokenizer_id to a tokenizer instance.

    Raises UnknownTokenizer for ids outside the registry.
    """
    if tokenizer_id == "ws":
        return WhitespaceTokenizer()
    if tokenizer_id.startswith("subword:"):
        vocab_path = tokenizer_id.split(":", 1)[1]
        if not vocab_path:
            raise UnknownTokenizer("subword tokenizer needs a vocabulary path: subword:<file>")
        return SubwordTokenizer(vocab_path)
    raise UnknownTokenizer(f"unknown tokenizer_id: {tokenizer_id!r}")


def truncate_to_tokens(text: str, max_tokens: int, tokenizer) -> tuple[str, bool]:
    """Keep the first max_tokens tokens of text, preserving original bytes.

    Returns (prefix, truncated). The prefix ends exactly at the end of the
    max_tokens-th token, so no partial token is emitted and the original
    whitespace inside the kept region is untouched.
    """
    if max_tokens <= 0:
        return "", bool(text.strip())
    spans = tokenizer.spans(text)
    if len(spans) <= max_tokens:
        return text, False
    end = spans[max_tokens - 1][1]
    return text[:end], True
