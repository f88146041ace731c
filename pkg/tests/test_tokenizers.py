"""Tokenizer registry: whitespace counts, greedy subword segmentation, truncation."""

from __future__ import annotations

import random

import pytest
from hypothesis import given, strategies as st

from corpusmill.errors import UnknownTokenizer
from corpusmill.tokenizers import get_tokenizer, truncate_to_tokens


def test_ws_empty_is_zero():
    assert get_tokenizer("ws").count("") == 0


def test_ws_three_words():
    assert get_tokenizer("ws").count("a b c") == 3


def test_ws_unicode_whitespace():
    assert get_tokenizer("ws").count("a b\tc\nd") == 4


def test_unknown_tokenizer():
    with pytest.raises(UnknownTokenizer):
        get_tokenizer("bpe")
    with pytest.raises(UnknownTokenizer):
        get_tokenizer("subword:")


def reference_greedy_count(text: str, vocab: set[str]) -> int:
    """Independent greedy longest-match: try every vocab entry at each cursor."""
    total = 0
    for chunk in text.split():
        i = 0
        while i < len(chunk):
            best = 0
            for entry in vocab:
                if len(entry) > best and chunk.startswith(entry, i):
                    best = len(entry)
            i += best if best else 1
            total += 1
    return total


@pytest.fixture
def vocab_file(tmp_path):
    vocab = ["the", "th", "he", "cat", "ca", "at", "ing", "walk", "walking", "a", "t"]
    path = tmp_path / "vocab.txt"
    path.write_text("\n".join(vocab) + "\n", encoding="utf-8")
    return path, set(vocab)


def test_subword_matches_reference_segmenter(vocab_file):
    path, vocab = vocab_file
    tok = get_tokenizer(f"subword:{path}")
    rng = random.Random(7)
    alphabet = "thecaingwlkxz "
    for _ in range(200):
        text = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 60)))
        assert tok.count(text) == reference_greedy_count(text, vocab), repr(text)


def test_subword_longest_match_wins(vocab_file):
    path, _ = vocab_file
    tok = get_tokenizer(f"subword:{path}")
    # "walking" matches whole, not walk+ing
    assert tok.count("walking") == 1
    # "that" -> "th" + "a" + "t" (greedy takes "th" over "t", then cannot reuse "at")
    assert tok.count("that") == 3


def test_subword_unknown_chars_count_one_each(vocab_file):
    path, _ = vocab_file
    tok = get_tokenizer(f"subword:{path}")
    assert tok.count("zz") == 2


def test_truncate_keeps_exact_prefix():
    tok = get_tokenizer("ws")
    text = "  one   two three\nfour five "
    prefix, truncated = truncate_to_tokens(text, 3, tok)
    assert truncated
    assert prefix == "  one   two three"
    assert tok.count(prefix) == 3


def test_truncate_noop_when_short():
    tok = get_tokenizer("ws")
    prefix, truncated = truncate_to_tokens("a b", 5, tok)
    assert (prefix, truncated) == ("a b", False)


@given(st.text(alphabet="ab \n", max_size=80), st.integers(min_value=1, max_value=20))
def test_truncate_token_count_property(text, n):
    tok = get_tokenizer("ws")
    prefix, _ = truncate_to_tokens(text, n, tok)
    assert tok.count(prefix) == min(n, tok.count(text))
    assert text.startswith(prefix)


def test_count_is_deterministic(vocab_file):
    path, _ = vocab_file
    tok1 = get_tokenizer(f"subword:{path}")
    tok2 = get_tokenizer(f"subword:{path}")
    text = "the cat walking that tta"
    assert tok1.count(text) == tok2.count(text)
