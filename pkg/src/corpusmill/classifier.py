"""Hashed n-gram linear text classifier: training, scoring, selection.

The model embeds hashed word unigrams and bigrams into a shared bucket
table, averages the embeddings of a document's features, and applies a
two-class softmax on top. Training is single-threaded SGD with a linearly
decaying learning rate so that two runs with the same seed, data and
hyperparameters produce byte-identical models.

Scores (positive-class probability) rank documents; top-k% selection is
global over the corpus with a stable tie rule.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import CorpusManifest, Document, iter_documents
from .errors import DivergedTraining, EmptyClass, EmptyInput

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1
_BIGRAM_MIX = 116049371

_MAGIC = b"HNGCLS\x00\x01"
_FORMAT_VERSION = 1

LABELS = ("negative", "positive")


def _fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def hashed_features(text: str, bucket_count: int) -> list[int]:
    """Bucket ids (with multiplicity) of word unigrams and bigrams.

    Tokenization is lowercased whitespace split; bigram hashes mix the two
    word hashes so the bucket does not depend on string concatenation.
    """
    tokens = text.lower().split()
    hashes = [_fnv1a(t.encode("utf-8")) for t in tokens]
    feats = [h % bucket_count for h in hashes]
    for h1, h2 in zip(hashes, hashes[1:]):
        feats.append(((h1 * _BIGRAM_MIX + h2) & _MASK64) % bucket_count)
    return feats


@dataclass
class TrainConfig:
    bucket_count: int = 1 << 21
    embedding_dim: int = 16
    learning_rate: float = 0.1
    epochs: int = 5

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.bucket_count < 1 or self.embedding_dim < 1:
            raise ValueError("bucket_count and embedding_dim must be >= 1")

    def config_hash(self, seed: int) -> str:
        payload = json.dumps(
            {
                "bucket_count": self.bucket_count,
                "embedding_dim": self.embedding_dim,
                "learning_rate": self.learning_rate,
                "epochs": self.epochs,
                "seed": seed,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class ClassifierModel:
    bucket_count: int
    embedding_dim: int
    input_embeddings: np.ndarray   # (bucket_count, embedding_dim) float32
    output_weights: np.ndarray     # (2, embedding_dim) float32
    label_names: tuple[str, str] = LABELS
    train_config_hash: str = ""

    @property
    def classifier_id(self) -> str:
        return f"hnc-{self.train_config_hash[:12]}" if self.train_config_hash else "hnc-unhashed"


@dataclass
class TrainSet:
    positives: CorpusManifest
    negatives: CorpusManifest
    seed: int = 0


@dataclass
class ScoredDocument:
    doc_id: str
    score: float
    classifier_id: str

    def to_record(self) -> dict:
        return {"doc_id": self.doc_id, "score": self.score, "classifier_id": self.classifier_id}


def _softmax2(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def train_texts(pos_texts: Sequence[str], neg_texts: Sequence[str], seed: int,
                cfg: TrainConfig | None = None) -> ClassifierModel:
    """Train on in-memory text lists. Label 1 = positive, 0 = negative."""
    cfg = cfg or TrainConfig()
    if len(pos_texts) == 0:
        raise EmptyClass("positive class is empty")
    if len(neg_texts) == 0:
        raise EmptyClass("negative class is empty")

    examples = []
    for text in pos_texts:
        examples.append((hashed_features(text, cfg.bucket_count), 1))
    for text in neg_texts:
        examples.append((hashed_features(text, cfg.bucket_count), 0))

    rng = np.random.default_rng(seed)
    dim = cfg.embedding_dim
    emb = rng.uniform(-1.0 / dim, 1.0 / dim, size=(cfg.bucket_count, dim)).astype(np.float32)
    out = np.zeros((2, dim), dtype=np.float32)

    total_steps = cfg.epochs * len(examples)
    step = 0
    for _epoch in range(cfg.epochs):
        order = rng.permutation(len(examples))
        for idx in order:
            feats, label = examples[idx]
            lr = cfg.learning_rate * (1.0 - step / total_steps)
            if feats:
                ids, counts = np.unique(np.asarray(feats, dtype=np.int64), return_counts=True)
                weights = (counts / len(feats)).astype(np.float32)
                hidden = weights @ emb[ids]
                logits = out @ hidden
                probs = _softmax2(logits.astype(np.float64))
                grad_out = probs.astype(np.float32)
                grad_out[label] -= 1.0
                grad_hidden = grad_out @ out          # uses pre-update output weights
                out -= lr * np.outer(grad_out, hidden)
                emb[ids] -= (lr / len(feats)) * counts[:, None].astype(np.float32) * grad_hidden
                if not (np.isfinite(hidden).all() and np.isfinite(out).all()
                        and np.isfinite(emb[ids]).all()):
                    raise DivergedTraining(step)
            step += 1

    return ClassifierModel(
        bucket_count=cfg.bucket_count,
        embedding_dim=dim,
        input_embeddings=emb,
        output_weights=out,
        label_names=LABELS,
        train_config_hash=cfg.config_hash(seed),
    )


def train(ts: TrainSet, cfg: TrainConfig | None = None) -> ClassifierModel:
    """Train from two corpus manifests; classes must be disjoint by id."""
    pos = list(iter_documents(ts.positives))
    neg = list(iter_documents(ts.negatives))
    pos_ids = {d.id for d in pos}
    overlap = pos_ids.intersection(d.id for d in neg)
    if overlap:
        raise ValueError(f"train classes share {len(overlap)} document id(s)")
    return train_texts([d.text for d in pos], [d.text for d in neg], ts.seed, cfg)


def score_text(model: ClassifierModel, text: str) -> float:
    """Positive-class probability; empty or fully-OOV text scores the zero vector."""
    feats = hashed_features(text, model.bucket_count)
    if feats:
        ids, counts = np.unique(np.asarray(feats, dtype=np.int64), return_counts=True)
        weights = (counts / len(feats)).astype(np.float32)
        hidden = weights @ model.input_embeddings[ids]
    else:
        hidden = np.zeros(model.embedding_dim, dtype=np.float32)
    logits = (model.output_weights @ hidden).astype(np.float64)
    return float(_softmax2(logits)[1])


def score(model: ClassifierModel, doc: Document) -> ScoredDocument:
    return ScoredDocument(doc.id, score_text(model, doc.text), model.classifier_id)


def score_corpus(model: ClassifierModel, manifest: CorpusManifest) -> Iterable[ScoredDocument]:
    for doc in iter_documents(manifest):
        yield score(model, doc)


def evaluate_accuracy(model: ClassifierModel, texts: Sequence[str], labels: Sequence[int]) -> float:
    correct = sum(1 for t, y in zip(texts, labels) if (score_text(model, t) >= 0.5) == bool(y))
    return correct / len(texts)


# --- serialization ---

def save_model(model: ClassifierModel, path: str | Path,
               hyper: TrainConfig | None = None, seed: int | None = None) -> None:
    """Versioned binary container plus a JSON sidecar of hyperparameters."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _FORMAT_VERSION))
        fh.write(struct.pack("<Q", model.bucket_count))
        fh.write(struct.pack("<I", model.embedding_dim))
        fh.write(np.ascontiguousarray(model.input_embeddings, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(model.output_weights, dtype="<f4").tobytes())
        fh.write(struct.pack("<I", len(model.label_names)))
        for name in model.label_names:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        raw_hash = model.train_config_hash.encode("utf-8")
        fh.write(struct.pack("<I", len(raw_hash)))
        fh.write(raw_hash)
    sidecar = {
        "format_version": _FORMAT_VERSION,
        "bucket_count": model.bucket_count,
        "embedding_dim": model.embedding_dim,
        "labels": list(model.label_names),
        "train_config_hash": model.train_config_hash,
    }
    if hyper is not None:
        sidecar["learning_rate"] = hyper.learning_rate
        sidecar["epochs"] = hyper.epochs
    if seed is not None:
        sidecar["seed"] = seed
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_model(path: str | Path) -> ClassifierModel:
    data = Path(path).read_bytes()
    if data[: len(_MAGIC)] != _MAGIC:
        raise ValueError(f"{path}: not a classifier model file")
    off = len(_MAGIC)
    (version,) = struct.unpack_from("<I", data, off); off += 4
    if version != _FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported model format version {version}")
    (bucket_count,) = struct.unpack_from("<Q", data, off); off += 8
    (dim,) = struct.unpack_from("<I", data, off); off += 4
    n_in = bucket_count * dim
    emb = np.frombuffer(data, dtype="<f4", count=n_in, offset=off).reshape(bucket_count, dim).copy()
    off += 4 * n_in
    out = np.frombuffer(data, dtype="<f4", count=2 * dim, offset=off).reshape(2, dim).copy()
    off += 4 * 2 * dim
    (n_labels,) = struct.unpack_from("<I", data, off); off += 4
    labels = []
    for _ in range(n_labels):
        (ln,) = struct.unpack_from("<I", data, off); off += 4
        labels.append(data[off:off + ln].decode("utf-8")); off += ln
    (hlen,) = struct.unpack_from("<I", data, off); off += 4
    config_hash = data[off:off + hlen].decode("utf-8")
    return ClassifierModel(
        bucket_count=bucket_count,
        embedding_dim=dim,
        input_embeddings=emb,
        output_weights=out,
        label_names=tuple(labels),
        train_config_hash=config_hash,
    )


# --- selection ---

def select_top_fraction(scored: Sequence[ScoredDocument], k: float) -> list[str]:
    """Ids of the ceil(k*N) highest-scoring documents, ties by ascending id.

    Selection is global: callers must pass scores for the whole corpus, not
    one shard at a time.
    """
    if not scored:
        raise EmptyInput("no scored documents")
    if not 0.0 < k <= 1.0:
        raise ValueError(f"k must be in (0,1], got {k}")
    take = math.ceil(k * len(scored))
    ranked = sorted(scored, key=lambda s: (-s.score, s.doc_id))
    return [s.doc_id for s in ranked[:take]]


def select_top_tokens(scored: Sequence[ScoredDocument], k: float,
                      token_counts: dict[str, int]) -> list[str]:
    """Token-mass variant: take docs in rank order until k of the total
    token mass is reached (the crossing document is included)."""
    if not scored:
        raise EmptyInput("no scored documents")
    if not 0.0 < k <= 1.0:
        raise ValueError(f"k must be in (0,1], got {k}")
    total = sum(token_counts[s.doc_id] for s in scored)
    target = k * total
    ranked = sorted(scored, key=lambda s: (-s.score, s.doc_id))
    out: list[str] = []
    acc = 0
    for s in ranked:
        out.append(s.doc_id)
        acc += token_counts[s.doc_id]
        if acc >= target:
            break
    return out


def score_quantile(scored: Sequence[ScoredDocument], q: float) -> float:
    """Exact nearest-rank q-quantile of the score multiset."""
    if not scored:
        raise EmptyInput("no scored documents")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must be in [0,1], got {q}")
    values = sorted(s.score for s in scored)
    rank = max(1, math.ceil(q * len(values)))
    return values[rank - 1]


def selection_report(ids: Sequence[str], token_counts: dict[str, int]) -> dict:
    """Document and token totals of a selection, for manifest-style reporting."""
    tokens = sum(token_counts[i] for i in ids)
    return {"selected_documents": len(ids), "selected_tokens": tokens}


# --- score stream io ---

def write_scores(scored: Iterable[ScoredDocument], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for s in scored:
            fh.write(json.dumps(s.to_record(), sort_keys=True) + "\n")
            n += 1
    return n


def read_scores(path: str | Path) -> list[ScoredDocument]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            out.append(ScoredDocument(obj["doc_id"], float(obj["score"]), obj.get("classifier_id", "")))
    return out
