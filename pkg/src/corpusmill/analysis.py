"""Corpus comparison statistics: rank correlation, similarity distributions,
n-gram diversity scaling and length summaries.

Everything here emits plain data (CSV + JSON series); plotting is
deliberately external. Bigram tokenization is lowercased whitespace
word-split regardless of the corpus tokenizer, and that choice is recorded
in every report header.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import stdtr

from .corpus import CorpusManifest, Document, iter_documents
from .errors import (
    DegenerateVariance,
    DimensionMismatch,
    EmptyCorpus,
    SampleTooLarge,
    TooFewPairs,
    TooFewSamples,
)

BIGRAM_TOKENIZATION = "lowercase whitespace word-split, bigrams never span documents"


# --- rank correlation ---

@dataclass
class PairedScores:
    doc_id: str
    raw_score: float
    rewritten_score: float


@dataclass
class SpearmanResult:
    rho: float
    p_value: float
    n: int


def _midranks(values: np.ndarray) -> np.ndarray:
    """Average ranks (1-based); tied values share the mean of their ranks."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        ranks[order[i:j + 1]] = avg
        i = j + 1
    return ranks


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    return float(xc @ yc) / denom


def p_value_from_rho(rho: float, n: int) -> float:
    """Two-sided p under the t approximation with n-2 degrees of freedom."""
    if n < 3:
        raise TooFewPairs("need at least 3 pairs")
    if 1.0 - rho * rho <= 0.0:
        return 0.0
    t = abs(rho) * math.sqrt((n - 2) / (1.0 - rho * rho))
    return float(2.0 * stdtr(n - 2, -t))


def spearman(pairs: Sequence[PairedScores]) -> SpearmanResult:
    """Rank correlation over midranked scores, Pearson-of-ranks form."""
    if len(pairs) < 3:
        raise TooFewPairs(f"need at least 3 pairs, got {len(pairs)}")
    x = np.array([p.raw_score for p in pairs], dtype=np.float64)
    y = np.array([p.rewritten_score for p in pairs], dtype=np.float64)
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DegenerateVariance("one side has zero rank variance")
    rho = _pearson(_midranks(x), _midranks(y))
    return SpearmanResult(rho=rho, p_value=p_value_from_rho(rho, len(pairs)), n=len(pairs))


def pair_scores(raw_scores: dict[str, float], rewritten_scores: dict[str, float]) -> list[PairedScores]:
    """Join two score maps on their common ids, ascending id order."""
    common = sorted(set(raw_scores) & set(rewritten_scores))
    return [PairedScores(i, raw_scores[i], rewritten_scores[i]) for i in common]


# --- similarity distribution ---

def cosine(u: np.ndarray, v: np.ndarray) -> float:
    if u.shape != v.shape:
        raise DimensionMismatch(f"vector shapes differ: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("zero-norm vector")
    return float(u @ v) / (nu * nv)


def cosine_similarity_distribution(a: CorpusManifest, b: CorpusManifest, provider):
    """Per-id cosine between the two corpora's embeddings of the same document.

    Returns (pairs, skipped): pairs is a list of (doc_id, cosine) over ids
    present in both corpora with usable vectors; skipped records provider
    failures and zero-norm vectors per document.
    """
    docs_a = {d.id: d for d in iter_documents(a)}
    docs_b = {d.id: d for d in iter_documents(b)}
    common = sorted(set(docs_a) & set(docs_b))

    vec_a, fail_a = provider.embed_documents([docs_a[i] for i in common])
    vec_b, fail_b = provider.embed_documents([docs_b[i] for i in common])
    skipped = [dict(f, side="a") for f in fail_a] + [dict(f, side="b") for f in fail_b]

    pairs: list[tuple[str, float]] = []
    for doc_id in common:
        u = vec_a.get(doc_id)
        v = vec_b.get(doc_id)
        if u is None or v is None:
            continue
        if u.shape != v.shape:
            raise DimensionMismatch(f"{doc_id}: {u.shape} vs {v.shape}")
        if np.linalg.norm(u) == 0.0 or np.linalg.norm(v) == 0.0:
            skipped.append({"doc_id": doc_id, "reason": "zero_norm_vector"})
            continue
        pairs.append((doc_id, cosine(u, v)))
    return pairs, skipped


# --- kernel density estimation ---

def silverman_bandwidth(samples: Sequence[float]) -> float:
    x = np.asarray(samples, dtype=np.float64)
    n = len(x)
    std = float(x.std(ddof=1))
    q75, q25 = np.percentile(x, [75, 25])
    iqr = float(q75 - q25)
    spread = min(std, iqr / 1.34) if iqr > 0 else std
    if spread == 0.0:
        spread = max(abs(float(x[0])), 1.0) * 1e-3
    return 0.9 * spread * n ** (-0.2)


def kde(samples: Sequence[float], bandwidth: float | str, grid: Sequence[float]):
    """Gaussian kernel density of samples on a grid of evaluation points."""
    x = np.asarray(samples, dtype=np.float64)
    if len(x) < 2:
        raise TooFewSamples(f"need at least 2 samples, got {len(x)}")
    h = silverman_bandwidth(x) if bandwidth == "auto" else float(bandwidth)
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    g = np.asarray(grid, dtype=np.float64)
    z = (g[:, None] - x[None, :]) / h
    dens = np.exp(-0.5 * z * z).sum(axis=1) / (len(x) * h * math.sqrt(2.0 * math.pi))
    return list(zip(g.tolist(), dens.tolist()))


def kde_grid(samples: Sequence[float], bandwidth: float | str, points: int = 512) -> np.ndarray:
    """Evaluation grid spanning [min - 4h, max + 4h]; wide enough for mass ~= 1."""
    x = np.asarray(samples, dtype=np.float64)
    h = silverman_bandwidth(x) if bandwidth == "auto" else float(bandwidth)
    return np.linspace(float(x.min()) - 4.0 * h, float(x.max()) + 4.0 * h, points)


# --- n-gram diversity ---

def doc_bigrams(text: str) -> set[tuple[str, str]]:
    tokens = text.lower().split()
    return set(zip(tokens, tokens[1:]))


def unique_bigrams(docs: Sequence[Document]) -> int:
    """Distinct adjacent word pairs across documents; no cross-document bigrams."""
    seen: set[tuple[str, str]] = set()
    for doc in docs:
        seen |= doc_bigrams(doc.text)
    return len(seen)


@dataclass
class CurvePoint:
    requested: int
    realized: int
    unique_bigrams: int


@dataclass
class DiversityCurve:
    axis: str  # documents | tokens
    points: list[CurvePoint]
    seed: int


def diversity_curve(docs: Sequence[Document], axis: str, sample_sizes: Sequence[int],
                    seed: int) -> DiversityCurve:
    """Unique-bigram counts over nested random samples of growing size.

    Samples are prefixes of one seeded permutation, so each sample extends
    the previous one. On the tokens axis documents are added whole until
    the quota is first reached or exceeded; the realized token count is
    reported next to the requested one.
    """
    if axis not in ("documents", "tokens"):
        raise ValueError(f"axis must be 'documents' or 'tokens', got {axis!r}")
    sizes = [int(s) for s in sample_sizes]
    if sorted(sizes) != sizes or len(set(sizes)) != len(sizes):
        raise ValueError("sample sizes must be strictly increasing")
    perm = np.random.default_rng(seed).permutation(len(docs))
    ordered = [docs[i] for i in perm]

    points: list[CurvePoint] = []
    seen: set[tuple[str, str]] = set()
    cursor = 0
    tokens_taken = 0

    if axis == "documents":
        if sizes and sizes[-1] > len(docs):
            raise SampleTooLarge(f"{sizes[-1]} docs requested, corpus has {len(docs)}")
        for size in sizes:
            while cursor < size:
                seen |= doc_bigrams(ordered[cursor].text)
                cursor += 1
            points.append(CurvePoint(size, size, len(seen)))
    else:
        total_tokens = sum(d.token_count for d in docs)
        if sizes and sizes[-1] > total_tokens:
            raise SampleTooLarge(f"{sizes[-1]} tokens requested, corpus has {total_tokens}")
        for quota in sizes:
            while tokens_taken < quota and cursor < len(ordered):
                doc = ordered[cursor]
                seen |= doc_bigrams(doc.text)
                tokens_taken += doc.token_count
                cursor += 1
            points.append(CurvePoint(quota, tokens_taken, len(seen)))
    return DiversityCurve(axis=axis, points=points, seed=seed)


# --- length statistics ---

def length_stats(manifest: CorpusManifest) -> dict:
    """Min/max/mean/median token counts; median is the lower middle for even N."""
    counts = sorted(d.token_count for d in iter_documents(manifest))
    if not counts:
        raise EmptyCorpus("length_stats on empty corpus")
    n = len(counts)
    return {
        "documents": n,
        "min": counts[0],
        "max": counts[-1],
        "mean": round(sum(counts) / n, 2),
        "median": counts[(n - 1) // 2],
        "tokenizer_id": manifest.tokenizer_id,
    }


# --- report emission ---

def write_report(out_dir: str | Path, name: str, payload: dict,
                 rows: list[dict] | None = None) -> dict[str, str]:
    """Write <name>.json (payload + settings) and <name>.csv (rows) under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"{name}.json"
    json_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written = {"json": str(json_path)}
    if rows:
        csv_path = out_dir / f"{name}.csv"
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
        written["csv"] = str(csv_path)
    return written


def spearman_report(result: SpearmanResult, out_dir: str | Path,
                    thresholds: dict[str, float] | None = None) -> dict[str, str]:
    payload = {
        "statistic": "spearman_rank_correlation",
        "rho": result.rho,
        "p_value": result.p_value,
        "n": result.n,
    }
    if thresholds:
        payload["selection_thresholds"] = thresholds
    rows = [{"rho": result.rho, "p_value": result.p_value, "n": result.n}]
    return write_report(out_dir, "spearman", payload, rows)


def curve_report(curve: DiversityCurve, out_dir: str | Path, name: str) -> dict[str, str]:
    payload = {
        "axis": curve.axis,
        "seed": curve.seed,
        "tokenization": BIGRAM_TOKENIZATION,
        "points": [
            {"requested": p.requested, "realized": p.realized, "unique_bigrams": p.unique_bigrams}
            for p in curve.points
        ],
    }
    rows = [{"requested": p.requested, "realized": p.realized, "unique_bigrams": p.unique_bigrams}
            for p in curve.points]
    return write_report(out_dir, name, payload, rows)


def cosine_report(pairs: list[tuple[str, float]], skipped: list[dict],
                  out_dir: str | Path, provider_id: str,
                  bandwidth: float | str = "auto") -> dict[str, str]:
    values = [c for _, c in pairs]
    payload: dict = {
        "provider_id": provider_id,
        "pairs": len(pairs),
        "skipped": skipped,
    }
    if values:
        payload["mean_cosine"] = float(np.mean(values))
        payload["median_cosine"] = float(np.median(values))
    if len(values) >= 2:
        grid = kde_grid(values, bandwidth)
        payload["kde"] = [{"x": x, "density": d} for x, d in kde(values, bandwidth, grid)]
    rows = [{"doc_id": i, "cosine": c} for i, c in pairs]
    return write_report(out_dir, "cosine_similarity", payload, rows)
