"""Token budgets, epoch schedules and ratio-weighted corpus mixing.

plan() does the budget arithmetic exactly (fractions all the way) and
checks the repeat cap; materialize() emits a training-ready corpus in
which each source's documents are replicated floor/ceil-interleaved to
hit its token share within one document, then globally shuffled with the
plan seed. Mixing is materialized rather than sampled at runtime so the
resulting dataset is auditable and diffable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .corpus import CorpusManifest, Document, iter_documents, load_manifest, write_corpus
from .errors import CapViolated, EmptyReference, EmptySource, ZeroWeightAll


@dataclass
class MixSource:
    name: str
    unique_tokens: int
    document_count: int | None = None
    weight: Fraction | None = None
    manifest: CorpusManifest | None = None

    @classmethod
    def from_manifest(cls, manifest: CorpusManifest, weight=None, name: str | None = None):
        return cls(
            name=name or manifest.corpus_name,
            unique_tokens=manifest.total_tokens,
            document_count=manifest.document_count,
            weight=_as_fraction(weight),
            manifest=manifest,
        )

    @classmethod
    def from_tokens(cls, name: str, tokens: int, weight=None):
        return cls(name=name, unique_tokens=int(tokens), weight=_as_fraction(weight))


def _as_fraction(value) -> Fraction | None:
    if value is None or isinstance(value, Fraction):
        return value
    # str() round-trip keeps decimal weights like 0.6 exact (3/5, not the
    # nearest binary float)
    return Fraction(str(value))


@dataclass
class MixPlan:
    sources: list[MixSource]
    token_budget: int
    max_repeats: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.token_budget < 1:
            raise ValueError("token_budget must be >= 1")
        if not self.sources:
            raise ValueError("a mix needs at least one source")
        given = [s.weight for s in self.sources]
        if all(w is None for w in given):
            for s in self.sources:
                s.weight = Fraction(1, len(self.sources))
        elif any(w is None for w in given):
            raise ValueError("either give every source a weight or none")
        total = sum(s.weight for s in self.sources)
        if total == 0:
            raise ZeroWeightAll("all mix weights are zero")
        for s in self.sources:
            s.weight = s.weight / total


@dataclass
class SourceBudget:
    name: str
    unique_tokens: int
    weight: Fraction
    target_tokens: Fraction
    epochs: Fraction


@dataclass
class BudgetReport:
    per_source: list[SourceBudget]
    token_budget: int
    max_repeats: int
    max_epochs: Fraction = field(init=False)
    cap_violated: bool = field(init=False)

    def __post_init__(self):
        self.max_epochs = max(s.epochs for s in self.per_source)
        self.cap_violated = self.max_epochs > self.max_repeats

    def to_json(self) -> dict:
        return {
            "token_budget": self.token_budget,
            "max_repeats": self.max_repeats,
            "max_epochs": round(float(self.max_epochs), 3),
            "cap_violated": self.cap_violated,
            "per_source": [
                {
                    "name": s.name,
                    "unique_tokens": s.unique_tokens,
                    "weight": round(float(s.weight), 6),
                    "target_tokens": round(float(s.target_tokens), 3),
                    "epochs": round(float(s.epochs), 3),
                }
                for s in self.per_source
            ],
        }

    def to_table(self) -> str:
        rows = [("source", "unique_tokens", "weight", "target_tokens", "epochs")]
        for s in self.per_source:
            rows.append((
                s.name,
                f"{s.unique_tokens:,}",
                f"{float(s.weight):.3f}",
                f"{float(s.target_tokens):,.0f}",
                f"{float(s.epochs):.3f}",
            ))
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)) for row in rows]
        status = "CAP VIOLATED" if self.cap_violated else "within cap"
        lines.append(f"budget {self.token_budget:,} tokens, max repeats {self.max_repeats} "
                     f"-> max epochs {float(self.max_epochs):.3f} ({status})")
        return "\n".join(lines)


def plan(mix: MixPlan) -> BudgetReport:
    """Per-source token targets and epoch counts, exact, with the cap check."""
    budgets = []
    for src in mix.sources:
        if src.unique_tokens <= 0 or (src.document_count is not None and src.document_count == 0):
            raise EmptySource(f"source {src.name!r} is empty")
        target = src.weight * mix.token_budget
        epochs = target / src.unique_tokens
        budgets.append(SourceBudget(src.name, src.unique_tokens, src.weight, target, epochs))
    return BudgetReport(budgets, mix.token_budget, mix.max_repeats)


def _replication_counts(docs: list[Document], target: Fraction) -> list[int]:
    """Copies per document: floor everywhere plus token-mass interleaved extras.

    The extra copies are spread with an accumulator so the realized token
    total lands within one document of the target, and counts within the
    source differ by at most 1.
    """
    total = sum(d.token_count for d in docs)
    base = int(target // total)
    extra_target = target - base * total
    counts = [base] * len(docs)
    if extra_target > 0:
        ratio = extra_target / total
        ideal = Fraction(0)
        given = 0
        for i, doc in enumerate(docs):
            ideal += doc.token_count * ratio
            if given < ideal:
                counts[i] += 1
                given += doc.token_count
    return counts


def materialize(mix: MixPlan, out_dir: str | Path, override_cap: bool = False,
                shard_size: int = 50_000) -> CorpusManifest:
    """Emit the replicated, globally shuffled training corpus for a plan."""
    report = plan(mix)
    if report.cap_violated:
        if not override_cap:
            raise CapViolated(
                f"max epochs {float(report.max_epochs):.3f} exceeds cap {mix.max_repeats}; "
                "pass override_cap to proceed anyway")
        print(f"WARNING: repeat cap {mix.max_repeats} overridden; "
              f"max epochs {float(report.max_epochs):.3f}")

    per_source_docs: list[list[Document]] = []
    per_source_counts: list[list[int]] = []
    for src, budget in zip(mix.sources, report.per_source):
        if src.manifest is None:
            raise ValueError(f"source {src.name!r} has no manifest to materialize from")
        docs = list(iter_documents(src.manifest))
        if not docs:
            raise EmptySource(f"source {src.name!r} is empty")
        per_source_docs.append(docs)
        per_source_counts.append(_replication_counts(docs, budget.target_tokens))

    entries: list[tuple[int, int]] = []
    for si, (docs, counts) in enumerate(zip(per_source_docs, per_source_counts)):
        for di, c in enumerate(counts):
            entries.extend([(si, di)] * c)

    order = np.random.default_rng(mix.seed).permutation(len(entries))

    tokenizer_id = (mix.sources[0].manifest.tokenizer_id
                    if mix.sources[0].manifest else "ws")

    def shuffled_docs():
        for pos in order:
            si, di = entries[pos]
            yield per_source_docs[si][di]

    out_dir = Path(out_dir)
    manifest = write_corpus(shuffled_docs(), out_dir, tokenizer_id, corpus_name=out_dir.name,
                            shard_size=shard_size)

    report_obj = {
        "token_budget": mix.token_budget,
        "max_repeats": mix.max_repeats,
        "seed": mix.seed,
        "total_documents": manifest.document_count,
        "total_tokens": manifest.total_tokens,
        "sources": [],
    }
    for src, budget, docs, counts in zip(mix.sources, report.per_source,
                                         per_source_docs, per_source_counts):
        realized = sum(d.token_count * c for d, c in zip(docs, counts))
        positive = [c for c in counts if c > 0]
        report_obj["sources"].append({
            "name": src.name,
            "weight": round(float(budget.weight), 6),
            "unique_tokens": src.unique_tokens,
            "target_tokens": round(float(budget.target_tokens), 3),
            "realized_tokens": realized,
            "documents_with_copies": len(positive),
            "replication_min": min(counts),
            "replication_max": max(counts),
        })
    from .corpus import atomic_write_json
    atomic_write_json(report_obj, out_dir / "mix_report.json")
    return manifest


def overlap_fraction(a: set[str], b: set[str], symmetric: bool = False) -> float:
    """Fraction of a's ids present in b (or Jaccard with symmetric=True)."""
    if not a:
        raise EmptyReference("reference id set is empty")
    inter = len(a & b)
    denom = len(a | b) if symmetric else len(a)
    return inter / denom


def mix_plan_from_dict(obj: dict, base_dir: str | Path = ".") -> MixPlan:
    """Build a MixPlan from a parsed JSON/TOML plan file.

    Each source gives either `manifest` (corpus path, relative to the plan
    file) or `tokens` (budget-arithmetic-only source); `weight` is optional.
    """
    base = Path(base_dir)
    sources = []
    for entry in obj["sources"]:
        weight = entry.get("weight")
        if "manifest" in entry:
            manifest = load_manifest(base / entry["manifest"])
            sources.append(MixSource.from_manifest(manifest, weight=weight,
                                                   name=entry.get("name")))
        else:
            sources.append(MixSource.from_tokens(entry["name"], int(entry["tokens"]),
                                                 weight=weight))
    return MixPlan(
        sources=sources,
        token_budget=int(obj["token_budget"]),
        max_repeats=int(obj.get("max_repeats", 4)),
        seed=int(obj.get("seed", 0)),
    )
