"""End-to-end orchestration: one config file drives every stage.

The stage graph is static: ingest -> dedup -> filter, then the raw branch
(score + select) and the rewrite branch (rewrite -> score + select), then
mix and analyze. Each stage writes its artifacts plus a content-addressed
completion marker (hash of upstream fingerprints + config + tool version),
so rerunning skips completed stages and any upstream change invalidates
everything downstream. Artifacts never embed wall-clock time; a finished
tree is byte-reproducible.
"""

from __future__ import annotations

import glob as globmod
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .classifier import (
    load_model,
    read_scores,
    score_corpus,
    score_quantile,
    select_top_fraction,
    write_scores,
)
from .corpus import (
    atomic_write_json,
    deduplicate,
    ingest,
    iter_documents,
    load_manifest,
    save_manifest,
    write_corpus,
)
from .errors import ConfigInvalid, CorpusmillError, StageFailed
from .filters import FilterConfig, evaluate, filter_config_from_dict
from .mixing import MixPlan, MixSource, materialize, overlap_fraction, plan
from .rewrite import GenerationConfig, rewrite_corpus
from .tokenizers import get_tokenizer
from .analysis import (
    curve_report,
    diversity_curve,
    length_stats,
    pair_scores,
    spearman,
    spearman_report,
    write_report,
)

STAGES = (
    "ingest", "dedup", "filter",
    "score_raw", "select_raw",
    "rewrite", "score_rewritten", "select_rewritten",
    "mix", "analyze",
)

# budget is a print-only pseudo-stage; it never writes artifacts
STAGE_DEPS = {
    "ingest": (),
    "dedup": ("ingest",),
    "filter": ("dedup",),
    "score_raw": ("filter",),
    "select_raw": ("score_raw",),
    "rewrite": ("filter",),
    "score_rewritten": ("rewrite",),
    "select_rewritten": ("score_rewritten",),
    "mix": ("select_raw", "select_rewritten"),
    "analyze": ("select_raw", "select_rewritten"),
    "budget": ("select_raw", "select_rewritten"),
}


def _load_config_file(path: str | Path) -> dict:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        return json.loads(text)
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    return tomllib.loads(text)


@dataclass
class PipelineConfig:
    name: str
    output_root: Path
    tokenizer_id: str
    input_globs: list[str]
    filter_cfg: FilterConfig
    raw_model: Path
    rewritten_model: Path
    raw_top_fraction: float
    rewritten_top_fraction: float
    generation: GenerationConfig
    token_budget: int
    max_repeats: int
    mix_weights: tuple[float, float]  # (raw, rewritten)
    seed: int
    analysis: dict = field(default_factory=dict)
    raw_config: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    @property
    def config_hash(self) -> str:
        payload = json.dumps(self.raw_config, sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def provenance(self, stage: str) -> dict[str, str]:
        return {"config_hash": self.config_hash, "stage": stage, "tool_version": __version__}


def load_pipeline_config(path: str | Path, seed_override: int | None = None) -> PipelineConfig:
    path = Path(path)
    obj = _load_config_file(path)
    if seed_override is not None:
        obj.setdefault("pipeline", {})["seed"] = seed_override
    base = path.parent

    pl = obj.get("pipeline", {})
    gen = dict(obj.get("generation", {}))
    seed = int(pl.get("seed", 0))
    gen.setdefault("seed", seed)
    generation = GenerationConfig(
        endpoint_url=gen.get("endpoint_url", ""),
        model_name=gen.get("model_name", ""),
        temperature=float(gen.get("temperature", 1.0)),
        top_p=float(gen.get("top_p", 0.9)),
        max_tokens=int(gen.get("max_tokens", 8192)),
        max_input_tokens=int(gen.get("max_input_tokens", 8192)),
        max_concurrency=int(gen.get("max_concurrency", 4)),
        retry_limit=int(gen.get("retry_limit", 5)),
        seed=gen.get("seed"),
        backoff_base=float(gen.get("backoff_base", 1.0)),
        backoff_cap=float(gen.get("backoff_cap", 60.0)),
        request_timeout=float(gen.get("request_timeout", 120.0)),
        max_requests=gen.get("max_requests"),
    )
    cls = obj.get("classifier", {})
    mix = obj.get("mix", {})
    return PipelineConfig(
        name=pl.get("name", "pipeline"),
        output_root=base / pl.get("output_root", "out"),
        tokenizer_id=pl.get("tokenizer", "ws"),
        input_globs=[str(base / g) for g in obj.get("ingest", {}).get("inputs", [])],
        filter_cfg=filter_config_from_dict(obj.get("filter", {})),
        raw_model=base / cls.get("raw_model", ""),
        rewritten_model=base / cls.get("rewritten_model", ""),
        raw_top_fraction=float(cls.get("raw_top_fraction", 0.10)),
        rewritten_top_fraction=float(cls.get("rewritten_top_fraction", 0.10)),
        generation=generation,
        token_budget=int(mix.get("token_budget", 0)),
        max_repeats=int(mix.get("max_repeats", 4)),
        mix_weights=(float(mix.get("raw_weight", 0.5)), float(mix.get("rewritten_weight", 0.5))),
        seed=seed,
        analysis=obj.get("analysis", {}),
        raw_config=obj,
        base_dir=base,
    )


def validate(cfg: PipelineConfig) -> list[tuple[str, str]]:
    """One diagnostic per violated invariant; an empty list means runnable."""
    diags: list[tuple[str, str]] = []
    if not cfg.input_globs:
        diags.append(("ingest.inputs", "no input globs configured"))
    else:
        matched = [p for g in cfg.input_globs for p in globmod.glob(g)]
        if not matched:
            diags.append(("ingest.inputs", f"no files match {cfg.input_globs}"))
    try:
        get_tokenizer(cfg.tokenizer_id)
    except CorpusmillError as exc:
        diags.append(("pipeline.tokenizer", str(exc)))
    for label, path in (("classifier.raw_model", cfg.raw_model),
                        ("classifier.rewritten_model", cfg.rewritten_model)):
        if not Path(path).is_file():
            diags.append((label, f"model file not found: {path}"))
    for label, k in (("classifier.raw_top_fraction", cfg.raw_top_fraction),
                     ("classifier.rewritten_top_fraction", cfg.rewritten_top_fraction)):
        if not 0.0 < k <= 1.0:
            diags.append((label, f"fraction must be in (0,1], got {k}"))
    if not cfg.generation.endpoint_url:
        diags.append(("generation.endpoint_url", "endpoint URL is empty"))
    if cfg.token_budget < 1:
        diags.append(("mix.token_budget", f"must be >= 1, got {cfg.token_budget}"))
    wsum = cfg.mix_weights[0] + cfg.mix_weights[1]
    if wsum <= 0:
        diags.append(("mix", "weights sum to zero"))
    elif abs(wsum - 1.0) > 1e-9:
        diags.append(("mix", f"weights sum to {wsum}, not 1; they would be normalized"))
    return diags


# --- stage machinery ---

def _marker_path(cfg: PipelineConfig, stage: str) -> Path:
    return cfg.output_root / "markers" / f"{stage}.json"


def _fingerprint(cfg: PipelineConfig, stage: str) -> str:
    upstream = [_fingerprint(cfg, dep) for dep in STAGE_DEPS[stage]]
    payload = json.dumps({
        "stage": stage,
        "config_hash": cfg.config_hash,
        "tool_version": __version__,
        "inputs": upstream,
    }, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _is_complete(cfg: PipelineConfig, stage: str) -> bool:
    path = _marker_path(cfg, stage)
    if not path.exists():
        return False
    try:
        marker = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return False
    return marker.get("fingerprint") == _fingerprint(cfg, stage)


def _mark_complete(cfg: PipelineConfig, stage: str) -> None:
    path = _marker_path(cfg, stage)
    path.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_json({
        "stage": stage,
        "fingerprint": _fingerprint(cfg, stage),
        "config_hash": cfg.config_hash,
        "tool_version": __version__,
    }, path)


def _stamp_manifest(cfg: PipelineConfig, stage: str, corpus_dir: Path) -> None:
    manifest = load_manifest(corpus_dir)
    manifest.provenance = cfg.provenance(stage)
    save_manifest(manifest, corpus_dir / "manifest.json")


# --- stage bodies ---

def _stage_ingest(cfg: PipelineConfig) -> None:
    paths = sorted(p for g in cfg.input_globs for p in globmod.glob(g))
    ingest(paths, cfg.tokenizer_id, cfg.output_root / "ingest", corpus_name=cfg.name)
    _stamp_manifest(cfg, "ingest", cfg.output_root / "ingest")


def _stage_dedup(cfg: PipelineConfig) -> None:
    manifest = load_manifest(cfg.output_root / "ingest")
    deduplicate(manifest, cfg.output_root / "dedup")
    _stamp_manifest(cfg, "dedup", cfg.output_root / "dedup")


def _stage_filter(cfg: PipelineConfig) -> None:
    manifest = load_manifest(cfg.output_root / "dedup")
    out_dir = cfg.output_root / "filtered"
    out_dir.mkdir(parents=True, exist_ok=True)
    verdict_path = out_dir / "verdicts.jsonl"

    def passing():
        with open(verdict_path, "w", encoding="utf-8") as fh:
            for doc in iter_documents(manifest):
                verdict = evaluate(doc, cfg.filter_cfg)
                fh.write(json.dumps(verdict.to_record(), sort_keys=True) + "\n")
                if verdict.passed:
                    yield doc

    write_corpus(passing(), out_dir, manifest.tokenizer_id, corpus_name=cfg.name + "-filtered")
    _stamp_manifest(cfg, "filter", out_dir)


def _scores_path(cfg: PipelineConfig, stream: str) -> Path:
    return cfg.output_root / "scores" / f"{stream}.jsonl"


def _stage_score(cfg: PipelineConfig, stream: str) -> None:
    corpus_dir = cfg.output_root / ("filtered" if stream == "raw" else "rewritten")
    model_path = cfg.raw_model if stream == "raw" else cfg.rewritten_model
    model = load_model(model_path)
    manifest = load_manifest(corpus_dir)
    path = _scores_path(cfg, stream)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_scores(score_corpus(model, manifest), path)


def _stage_select(cfg: PipelineConfig, stream: str) -> None:
    corpus_dir = cfg.output_root / ("filtered" if stream == "raw" else "rewritten")
    k = cfg.raw_top_fraction if stream == "raw" else cfg.rewritten_top_fraction
    scored = read_scores(_scores_path(cfg, stream))
    ids = select_top_fraction(scored, k)
    id_set = set(ids)
    out_dir = cfg.output_root / f"selected_{stream}"
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ids.txt").write_text("".join(i + "\n" for i in sorted(ids)), encoding="utf-8")

    manifest = load_manifest(corpus_dir)
    selected = (d for d in iter_documents(manifest) if d.id in id_set)
    sel_manifest = write_corpus(selected, out_dir, manifest.tokenizer_id,
                                corpus_name=f"{cfg.name}-{stream}-top")
    atomic_write_json({
        "stream": stream,
        "top_fraction": k,
        "scored_documents": len(scored),
        "selected_documents": sel_manifest.document_count,
        "selected_tokens": sel_manifest.total_tokens,
        "score_threshold": score_quantile(scored, 1.0 - k),
    }, out_dir / "selection.json")
    _stamp_manifest(cfg, f"select_{stream}", out_dir)


def _stage_rewrite(cfg: PipelineConfig) -> None:
    manifest = load_manifest(cfg.output_root / "filtered")
    rewrite_corpus(manifest, cfg.generation, cfg.output_root / "rewritten", resume=True)
    _stamp_manifest(cfg, "rewrite", cfg.output_root / "rewritten")


def _mix_plan(cfg: PipelineConfig) -> MixPlan:
    raw_manifest = load_manifest(cfg.output_root / "selected_raw")
    rw_manifest = load_manifest(cfg.output_root / "selected_rewritten")
    return MixPlan(
        sources=[
            MixSource.from_manifest(raw_manifest, weight=cfg.mix_weights[0], name="raw"),
            MixSource.from_manifest(rw_manifest, weight=cfg.mix_weights[1], name="rewritten"),
        ],
        token_budget=cfg.token_budget,
        max_repeats=cfg.max_repeats,
        seed=cfg.seed,
    )


def _stage_mix(cfg: PipelineConfig) -> None:
    materialize(_mix_plan(cfg), cfg.output_root / "mixed")
    _stamp_manifest(cfg, "mix", cfg.output_root / "mixed")


def _stage_analyze(cfg: PipelineConfig) -> None:
    opts = cfg.analysis
    out_dir = cfg.output_root / "reports"
    out_dir.mkdir(parents=True, exist_ok=True)

    raw_scores = {s.doc_id: s.score for s in read_scores(_scores_path(cfg, "raw"))}
    rw_scores = {s.doc_id: s.score for s in read_scores(_scores_path(cfg, "rewritten"))}

    if opts.get("spearman", True):
        pairs = pair_scores(raw_scores, rw_scores)
        result = spearman(pairs)
        raw_sorted = read_scores(_scores_path(cfg, "raw"))
        rw_sorted = read_scores(_scores_path(cfg, "rewritten"))
        thresholds = {
            "raw": score_quantile(raw_sorted, 1.0 - cfg.raw_top_fraction),
            "rewritten": score_quantile(rw_sorted, 1.0 - cfg.rewritten_top_fraction),
        }
        spearman_report(result, out_dir, thresholds)

    if opts.get("overlap", True):
        ids_raw = set((cfg.output_root / "selected_raw" / "ids.txt")
                      .read_text(encoding="utf-8").split())
        ids_rw = set((cfg.output_root / "selected_rewritten" / "ids.txt")
                     .read_text(encoding="utf-8").split())
        write_report(out_dir, "overlap", {
            "selected_raw": len(ids_raw),
            "selected_rewritten": len(ids_rw),
            "shared": len(ids_raw & ids_rw),
            "overlap_fraction_of_raw": overlap_fraction(ids_raw, ids_rw),
            "jaccard": overlap_fraction(ids_raw, ids_rw, symmetric=True),
        })

    if opts.get("bigrams", True):
        for stream in ("raw", "rewritten"):
            docs = list(iter_documents(load_manifest(cfg.output_root / f"selected_{stream}")))
            sizes = opts.get("bigram_sizes")
            if not sizes:
                n = len(docs)
                sizes = sorted({max(1, n // 4), max(1, n // 2), n})
            curve = diversity_curve(docs, opts.get("bigram_axis", "documents"),
                                    sizes, cfg.seed)
            curve_report(curve, out_dir, f"bigrams_{stream}")

    if opts.get("lengths", True):
        stats = {
            stream: length_stats(load_manifest(cfg.output_root / f"selected_{stream}"))
            for stream in ("raw", "rewritten")
        }
        write_report(out_dir, "lengths", stats)

    atomic_write_json(cfg.provenance("analyze"), out_dir / "report_provenance.json")


_STAGE_BODIES = {
    "ingest": _stage_ingest,
    "dedup": _stage_dedup,
    "filter": _stage_filter,
    "score_raw": lambda cfg: _stage_score(cfg, "raw"),
    "select_raw": lambda cfg: _stage_select(cfg, "raw"),
    "rewrite": _stage_rewrite,
    "score_rewritten": lambda cfg: _stage_score(cfg, "rewritten"),
    "select_rewritten": lambda cfg: _stage_select(cfg, "rewritten"),
    "mix": _stage_mix,
    "analyze": _stage_analyze,
}


def run_pipeline(cfg: PipelineConfig, stages: set[str] | None = None,
                 force: bool = False, out=sys.stdout) -> dict[str, str]:
    """Run the requested stages (default all) in dependency order.

    Returns {stage: "done" | "skipped"}. Raises ConfigInvalid before any
    work when validation fails, and StageFailed when a stage body raises
    (earlier artifacts stay intact).
    """
    diags = validate(cfg)
    if diags:
        raise ConfigInvalid(diags)

    wanted = set(stages) if stages else set(STAGES)
    unknown = wanted - set(STAGES) - {"budget"}
    if unknown:
        raise ConfigInvalid([("stages", f"unknown stage(s): {sorted(unknown)}")])

    for stage in wanted:
        for dep in STAGE_DEPS[stage]:
            if dep not in wanted and not _is_complete(cfg, dep):
                raise StageFailed(stage, CorpusmillError(
                    f"upstream stage {dep!r} has no completion marker; run it first"))

    statuses: dict[str, str] = {}
    for stage in STAGES:
        if stage not in wanted:
            continue
        if not force and _is_complete(cfg, stage):
            statuses[stage] = "skipped"
            print(f"[{cfg.name}] {stage}: skipped (complete)", file=out)
            continue
        try:
            _STAGE_BODIES[stage](cfg)
        except Exception as exc:
            raise StageFailed(stage, exc) from exc
        _mark_complete(cfg, stage)
        statuses[stage] = "done"
        print(f"[{cfg.name}] {stage}: done", file=out)

    if "budget" in wanted:
        report = plan(_mix_plan(cfg))
        print(report.to_table(), file=out)
        print(json.dumps(report.to_json(), sort_keys=True), file=out)
        statuses["budget"] = "done"
    return statuses
