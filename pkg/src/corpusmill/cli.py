"""Command-line entry point: every pipeline stage as a subcommand."""

from __future__ import annotations

import argparse
import glob as globmod
import json
import sys
from pathlib import Path

from . import __version__
from .classifier import (
    TrainConfig,
    TrainSet,
    load_model,
    read_scores,
    save_model,
    score_corpus,
    select_top_fraction,
    select_top_tokens,
    train,
    write_scores,
)
from .corpus import deduplicate, ingest, iter_documents, load_manifest
from .embeddings import provider_from_spec, write_vectors_tsv
from .errors import ConfigInvalid, CorpusmillError, StageFailed
from .filters import FilterConfig, evaluate, filter_config_from_dict, measure_all
from .mixing import materialize, mix_plan_from_dict, plan
from .pipeline import _load_config_file, load_pipeline_config, run_pipeline, validate
from .rewrite import GenerationConfig, rewrite_corpus
from .analysis import (
    cosine_report,
    cosine_similarity_distribution,
    curve_report,
    diversity_curve,
    length_stats,
    pair_scores,
    spearman,
    spearman_report,
    write_report,
)


def _add_ingest(sub):
    p = sub.add_parser("ingest", help="read raw jsonl files into a sharded corpus")
    p.add_argument("--input", action="append", required=True, help="input glob (repeatable)")
    p.add_argument("--tokenizer", default="ws")
    p.add_argument("--out", required=True)
    p.add_argument("--name")
    p.add_argument("--gzip", action="store_true")
    p.add_argument("--shard-size", type=int, default=50_000)

    def run(args):
        paths = sorted(p for g in args.input for p in globmod.glob(g))
        manifest = ingest(paths, args.tokenizer, args.out, corpus_name=args.name,
                          shard_size=args.shard_size, gzip_output=args.gzip)
        print(f"ingested {manifest.document_count} docs, {manifest.total_tokens} tokens "
              f"({manifest.malformed_skipped} malformed, "
              f"{manifest.duplicate_id_skipped} duplicate ids skipped)")
        return 0
    p.set_defaults(func=run)


def _add_dedup(sub):
    p = sub.add_parser("dedup", help="exact-duplicate removal over a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)

    def run(args):
        before = load_manifest(args.corpus)
        after = deduplicate(before, args.out)
        print(f"dedup kept {after.document_count}/{before.document_count} docs")
        return 0
    p.set_defaults(func=run)


def _add_filter(sub):
    p = sub.add_parser("filter", help="apply rule-based quality filters")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON/TOML file with a [filter] block or bare fields")
    p.add_argument("--verdicts", help="write per-document verdicts to this jsonl file")
    p.add_argument("--explain-all", action="store_true",
                   help="measure every rule instead of stopping at the first failure")

    def run(args):
        from .corpus import write_corpus
        cfg = FilterConfig()
        if args.config:
            obj = _load_config_file(args.config)
            cfg = filter_config_from_dict(obj.get("filter", obj))
        manifest = load_manifest(args.corpus)
        verdict_fh = open(args.verdicts, "w", encoding="utf-8") if args.verdicts else None
        kept = 0

        def passing():
            nonlocal kept
            for doc in iter_documents(manifest):
                verdict = evaluate(doc, cfg)
                if verdict_fh:
                    rec = verdict.to_record()
                    if args.explain_all:
                        rec["measurements"] = measure_all(doc, cfg)
                    verdict_fh.write(json.dumps(rec, sort_keys=True) + "\n")
                if verdict.passed:
                    kept += 1
                    yield doc

        out = write_corpus(passing(), args.out, manifest.tokenizer_id,
                           corpus_name=manifest.corpus_name + "-filtered")
        if verdict_fh:
            verdict_fh.close()
        print(f"filter kept {out.document_count}/{manifest.document_count} docs")
        return 0
    p.set_defaults(func=run)


def _add_train(sub):
    p = sub.add_parser("train-classifier", help="train the hashed n-gram quality classifier")
    p.add_argument("--pos", required=True, help="positive-class corpus dir")
    p.add_argument("--neg", required=True, help="negative-class corpus dir")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--buckets", type=int, default=1 << 21)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=5)

    def run(args):
        hyper = TrainConfig(bucket_count=args.buckets, embedding_dim=args.dim,
                            learning_rate=args.lr, epochs=args.epochs)
        ts = TrainSet(load_manifest(args.pos), load_manifest(args.neg), seed=args.seed)
        model = train(ts, hyper)
        save_model(model, args.out, hyper=hyper, seed=args.seed)
        print(f"trained {model.classifier_id} -> {args.out}")
        return 0
    p.set_defaults(func=run)


def _add_score(sub):
    p = sub.add_parser("score", help="score a corpus with a trained classifier")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)

    def run(args):
        model = load_model(args.model)
        manifest = load_manifest(args.corpus)
        n = write_scores(score_corpus(model, manifest), args.out)
        print(f"scored {n} docs with {model.classifier_id}")
        return 0
    p.set_defaults(func=run)


def _add_select(sub):
    p = sub.add_parser("select", help="keep the top-k% of a score stream")
    p.add_argument("--scores", required=True)
    p.add_argument("--top", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", help="corpus dir; report the selected token total")
    p.add_argument("--by-tokens", action="store_true",
                   help="select by token mass instead of document count")

    def run(args):
        scored = read_scores(args.scores)
        if args.by_tokens:
            if not args.manifest:
                print("--by-tokens needs --manifest for token counts", file=sys.stderr)
                return 2
            counts = {d.id: d.token_count
                      for d in iter_documents(load_manifest(args.manifest))}
            ids = select_top_tokens(scored, args.top, counts)
        else:
            ids = select_top_fraction(scored, args.top)
        Path(args.out).write_text("".join(i + "\n" for i in ids), encoding="utf-8")
        msg = f"selected {len(ids)}/{len(scored)} docs"
        if args.manifest:
            counts = {d.id: d.token_count
                      for d in iter_documents(load_manifest(args.manifest))}
            msg += f", {sum(counts[i] for i in ids)} tokens"
        print(msg)
        return 0
    p.set_defaults(func=run)


def _add_rewrite(sub):
    p = sub.add_parser("rewrite", help="guided-rewrite every document via an LLM endpoint")
    p.add_argument("--corpus", required=True)
    p.add_argument("--endpoint", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--concurrency", type=int, default=4)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--top-p", type=float, default=0.9)
    p.add_argument("--max-tokens", type=int, default=8192)
    p.add_argument("--max-input-tokens", type=int, default=8192)
    p.add_argument("--retry-limit", type=int, default=5)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-requests", type=int)

    def run(args):
        cfg = GenerationConfig(
            endpoint_url=args.endpoint, model_name=args.model,
            temperature=args.temperature, top_p=args.top_p,
            max_tokens=args.max_tokens, max_input_tokens=args.max_input_tokens,
            max_concurrency=args.concurrency, retry_limit=args.retry_limit,
            seed=args.seed, max_requests=args.max_requests,
        )
        manifest = load_manifest(args.corpus)
        out_manifest, failures = rewrite_corpus(manifest, cfg, args.out, resume=args.resume)
        print(f"rewrote {out_manifest.document_count}/{manifest.document_count} docs, "
              f"{len(failures)} failed (see failures.jsonl)")
        return 0 if not failures else 1
    p.set_defaults(func=run)


def _add_mix(sub):
    p = sub.add_parser("mix", help="materialize a weighted, budgeted mixture corpus")
    p.add_argument("--plan", required=True, help="JSON/TOML mix plan")
    p.add_argument("--out", required=True)
    p.add_argument("--override-cap", action="store_true")

    def run(args):
        obj = _load_config_file(args.plan)
        mix = mix_plan_from_dict(obj, Path(args.plan).parent)
        manifest = materialize(mix, args.out, override_cap=args.override_cap)
        print(f"mixed corpus: {manifest.document_count} docs, {manifest.total_tokens} tokens")
        return 0
    p.set_defaults(func=run)


def _add_budget(sub):
    p = sub.add_parser("budget", help="print the epoch/budget report for a mix plan")
    p.add_argument("--plan", required=True)

    def run(args):
        obj = _load_config_file(args.plan)
        mix = mix_plan_from_dict(obj, Path(args.plan).parent)
        report = plan(mix)
        print(report.to_table())
        print(json.dumps(report.to_json(), sort_keys=True))
        return 0
    p.set_defaults(func=run)


def _parse_sizes(raw: str) -> list[int]:
    return [int(float(x)) for x in raw.split(",") if x]


def _add_analyze(sub):
    p = sub.add_parser("analyze", help="corpus comparison statistics")
    asub = p.add_subparsers(dest="analysis", required=True)

    sp = asub.add_parser("spearman", help="rank correlation between two score streams")
    sp.add_argument("--raw-scores", required=True)
    sp.add_argument("--rewritten-scores", required=True)
    sp.add_argument("--out", default="reports")
    sp.add_argument("--top", type=float, default=0.10,
                    help="report the 1-k score quantile of each stream as its threshold")

    def run_spearman(args):
        from .classifier import score_quantile
        raw = read_scores(args.raw_scores)
        rw = read_scores(args.rewritten_scores)
        pairs = pair_scores({s.doc_id: s.score for s in raw},
                            {s.doc_id: s.score for s in rw})
        result = spearman(pairs)
        thresholds = {"raw": score_quantile(raw, 1.0 - args.top),
                      "rewritten": score_quantile(rw, 1.0 - args.top)}
        paths = spearman_report(result, args.out, thresholds)
        print(f"spearman rho={result.rho:.6f} p={result.p_value:.3e} n={result.n} "
              f"-> {paths['json']}")
        return 0
    sp.set_defaults(func=run_spearman)

    bg = asub.add_parser("bigrams", help="unique-bigram diversity scaling curve")
    bg.add_argument("--corpus", required=True)
    bg.add_argument("--axis", choices=("documents", "tokens"), default="documents")
    bg.add_argument("--sizes", required=True, help="comma list, e.g. 1e3,1e4,1e5")
    bg.add_argument("--seed", type=int, default=0)
    bg.add_argument("--out", default="reports")
    bg.add_argument("--name", default="bigrams")

    def run_bigrams(args):
        docs = list(iter_documents(load_manifest(args.corpus)))
        curve = diversity_curve(docs, args.axis, _parse_sizes(args.sizes), args.seed)
        paths = curve_report(curve, args.out, args.name)
        print(f"bigram curve ({args.axis}) -> {paths['json']}")
        return 0
    bg.set_defaults(func=run_bigrams)

    sc = asub.add_parser("simcse", help="cosine similarity of paired document embeddings")
    sc.add_argument("--a", required=True, help="first corpus dir")
    sc.add_argument("--b", required=True, help="second corpus dir")
    sc.add_argument("--provider", required=True, help="file:<tsv> or an http(s) endpoint")
    sc.add_argument("--embed-model", default="embedder")
    sc.add_argument("--bandwidth", default="auto")
    sc.add_argument("--out", default="reports")
    sc.add_argument("--dump-vectors", help="also export fetched vectors to this TSV")

    def run_simcse(args):
        provider = provider_from_spec(args.provider, model_name=args.embed_model)
        a = load_manifest(args.a)
        b = load_manifest(args.b)
        pairs, skipped = cosine_similarity_distribution(a, b, provider)
        bw = args.bandwidth if args.bandwidth == "auto" else float(args.bandwidth)
        paths = cosine_report(pairs, skipped, args.out, provider.provider_id, bw)
        if args.dump_vectors:
            docs = {d.id: d for d in iter_documents(a)}
            vectors, _ = provider.embed_documents(list(docs.values()))
            write_vectors_tsv(vectors, args.dump_vectors)
        print(f"cosine pairs={len(pairs)} skipped={len(skipped)} -> {paths['json']}")
        return 0
    sc.set_defaults(func=run_simcse)

    ln = asub.add_parser("lengths", help="token length statistics of a corpus")
    ln.add_argument("--corpus", required=True)
    ln.add_argument("--out", default="reports")

    def run_lengths(args):
        stats = length_stats(load_manifest(args.corpus))
        paths = write_report(args.out, "lengths", stats, [stats])
        print(f"lengths {stats} -> {paths['json']}")
        return 0
    ln.set_defaults(func=run_lengths)


def _add_run(sub):
    p = sub.add_parser("run", help="run the whole pipeline from one config file")
    p.add_argument("--config", required=True)
    p.add_argument("--stages", help="comma list; default all")
    p.add_argument("--force", action="store_true")
    p.add_argument("--seed", type=int, help="override the config seed")

    def run(args):
        cfg = load_pipeline_config(args.config, seed_override=args.seed)
        stages = set(args.stages.split(",")) if args.stages else None
        run_pipeline(cfg, stages=stages, force=args.force)
        return 0
    p.set_defaults(func=run)


def _add_validate(sub):
    p = sub.add_parser("validate", help="check a pipeline config without running it")
    p.add_argument("--config", required=True)

    def run(args):
        cfg = load_pipeline_config(args.config)
        diags = validate(cfg)
        for path, msg in diags:
            print(f"{path}: {msg}")
        if not diags:
            print("config ok")
        return 0 if not diags else 1
    p.set_defaults(func=run)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="corpusmill",
                                     description="corpus recycling pipeline")
    parser.add_argument("--version", action="version", version=f"corpusmill {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for add in (_add_ingest, _add_dedup, _add_filter, _add_train, _add_score, _add_select,
                _add_rewrite, _add_mix, _add_budget, _add_analyze, _add_run, _add_validate):
        add(sub)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        for path, msg in exc.diagnostics:
            print(f"config error: {path}: {msg}", file=sys.stderr)
        return 2
    except StageFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except CorpusmillError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
