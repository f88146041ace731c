"""Rule-based document quality filters applied before any model scoring.

Five rules, checked in a fixed order with first-failure reporting:
min_length, max_length, dup_line_fraction, rep_ngram_fraction,
url_blocklist. Length rules are in tokens of the corpus tokenizer; the
repetition rules work on the raw text; the URL rule matches registrable
domain suffixes and is skipped for documents without a URL.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from urllib.parse import urlsplit

from .corpus import Document

RULES = ("min_length", "max_length", "dup_line_fraction", "rep_ngram_fraction", "url_blocklist")


@dataclass
class FilterConfig:
    # Thresholds are config-overridable; every run records its config hash.
    min_tokens: int = 50
    max_tokens: int = 100_000
    max_dup_line_fraction: float = 0.30
    max_rep_ngram_fraction: float = 0.18
    rep_ngram_n: int = 3
    url_blocklist: set[str] = field(default_factory=set)

    def __post_init__(self):
        if self.min_tokens > self.max_tokens:
            raise ValueError("min_tokens must be <= max_tokens")
        for name in ("max_dup_line_fraction", "max_rep_ngram_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0,1], got {v}")
        if self.rep_ngram_n < 2:
            raise ValueError("rep_ngram_n must be >= 2")
        self.url_blocklist = {d.lower().lstrip(".") for d in self.url_blocklist}


@dataclass
class FilterVerdict:
    doc_id: str
    passed: bool
    failed_rule: str | None = None
    measured_value: float | None = None

    def to_record(self) -> dict:
        rec = {"doc_id": self.doc_id, "passed": self.passed}
        if self.failed_rule is not None:
            rec["failed_rule"] = self.failed_rule
            rec["measured_value"] = self.measured_value
        return rec


def dup_line_fraction(text: str) -> float:
    """Fraction of non-empty lines that repeat an earlier line; 0 when <= 1 line."""
    lines = [ln.strip() for ln in text.split("\n")]
    lines = [ln for ln in lines if ln]
    if len(lines) <= 1:
        return 0.0
    seen: set[str] = set()
    dup = 0
    for ln in lines:
        if ln in seen:
            dup += 1
        else:
            seen.add(ln)
    return dup / len(lines)


def rep_ngram_fraction(text: str, n: int) -> float:
    """Fraction of token positions covered by the most frequent token n-gram.

    Tokens are whitespace-split. Occurrences may overlap; coverage is the
    union of their position spans. Frequency ties resolve to the candidate
    with the largest coverage, which keeps the result order-independent.
    Returns 0 when the text has fewer than n tokens.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    tokens = text.split()
    if len(tokens) < n:
        return 0.0
    grams = [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]
    counts = Counter(grams)
    top_freq = max(counts.values())
    best_cover = 0
    for gram, freq in counts.items():
        if freq != top_freq:
            continue
        covered: set[int] = set()
        for i, g in enumerate(grams):
            if g == gram:
                covered.update(range(i, i + n))
        best_cover = max(best_cover, len(covered))
    return best_cover / len(tokens)


def _url_domain(url: str) -> str | None:
    host = urlsplit(url).hostname
    if host is None:
        # tolerate bare "example.com/path" inputs
        host = urlsplit("//" + url).hostname
    return host.lower() if host else None


def url_blocked(url: str | None, blocklist: set[str]) -> bool:
    """True when the URL's host is a blocked domain or a subdomain of one."""
    if url is None or not blocklist:
        return False
    host = _url_domain(url)
    if host is None:
        return False
    return any(host == dom or host.endswith("." + dom) for dom in blocklist)


def evaluate(doc: Document, cfg: FilterConfig) -> FilterVerdict:
    """Apply the five rules in fixed order; report the first violation."""
    if doc.token_count < cfg.min_tokens:
        return FilterVerdict(doc.id, False, "min_length", float(doc.token_count))
    if doc.token_count > cfg.max_tokens:
        return FilterVerdict(doc.id, False, "max_length", float(doc.token_count))
    dlf = dup_line_fraction(doc.text)
    if dlf > cfg.max_dup_line_fraction:
        return FilterVerdict(doc.id, False, "dup_line_fraction", dlf)
    rnf = rep_ngram_fraction(doc.text, cfg.rep_ngram_n)
    if rnf > cfg.max_rep_ngram_fraction:
        return FilterVerdict(doc.id, False, "rep_ngram_fraction", rnf)
    if url_blocked(doc.url, cfg.url_blocklist):
        return FilterVerdict(doc.id, False, "url_blocklist", 1.0)
    return FilterVerdict(doc.id, True)


def measure_all(doc: Document, cfg: FilterConfig) -> dict[str, float]:
    """Every rule's measurement, for --explain-all diagnostics."""
    return {
        "token_count": float(doc.token_count),
        "dup_line_fraction": dup_line_fraction(doc.text),
        "rep_ngram_fraction": rep_ngram_fraction(doc.text, cfg.rep_ngram_n),
        "url_blocked": 1.0 if url_blocked(doc.url, cfg.url_blocklist) else 0.0,
    }


def filter_config_from_dict(obj: dict) -> FilterConfig:
    """Build a FilterConfig from a JSON/TOML config block."""
    kwargs = {}
    for name in ("min_tokens", "max_tokens", "rep_ngram_n"):
        if name in obj:
            kwargs[name] = int(obj[name])
    for name in ("max_dup_line_fraction", "max_rep_ngram_fraction"):
        if name in obj:
            kwargs[name] = float(obj[name])
    if "url_blocklist" in obj:
        kwargs["url_blocklist"] = set(obj["url_blocklist"])
    return FilterConfig(**kwargs)
