"""Command-line entry point wiring the pipeline stages.

    ingest        validate a corpus manifest and print counts
    gen-dataset   generate instruction samples from seed relations
    gen-bench     generate yes/no benchmark candidates
    classify      assign hallucination types to negative candidates
    review-serve  run the human-filtering HTTP service
    finalize      draw the final benchmark from kept candidates
    collect       query a model endpoint for every benchmark item
    eval          score a responses file against a benchmark
    report        re-render a stored CSV report

Exit codes: 0 success, 1 stage failure, 2 usage or config error. Stage
failures print one JSON object to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bench as bench_mod
from . import dataset as dataset_mod
from . import evaluation
from .annotations import load_corpus
from .config import RunConfig, load_config
from .errors import ConfigError, PipelineError
from .gateway import Gateway
from .review import ReviewStore, serve

logger = logging.getLogger(__name__)


def _fail(stage: str, exc: Exception) -> int:
    record = {"error": "stage_failure", "stage": stage, "message": str(exc)}
    print(json.dumps(record, ensure_ascii=False), file=sys.stderr)
    return 1


def _write_run_metadata(cfg: RunConfig, stage: str, counts: dict):
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "stage": stage,
        "seed": cfg.run_seed,
        "config_hash": cfg.config_hash,
        "counts": counts,
    }
    path = out_dir / f"run_{stage}.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_retry_manifest(path: Path, entries):
    if not entries:
        return
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry, ensure_ascii=False) + "\n")


def _load(args) -> RunConfig:
    overrides = {
        "run_seed": args.seed,
        "manifest": args.manifest,
        "output_dir": args.output_dir,
        "gateway.mock_script": getattr(args, "mock_script", None),
    }
    return load_config(args.config, overrides)


def cmd_ingest(args) -> int:
    cfg = _load(args)
    corpus = load_corpus(cfg.manifest)
    counts = {
        "images": len(corpus.images),
        "relations": len(corpus.relations),
        "captions": sum(len(v) for v in corpus.captions.values()),
        "objects": sum(len(v) for v in corpus.objects.values()),
        "regions": sum(len(v) for v in corpus.regions.values()),
    }
    _write_run_metadata(cfg, "ingest", counts)
    print(json.dumps(counts, sort_keys=True))
    return 0


def cmd_gen_dataset(args) -> int:
    cfg = _load(args)
    corpus = load_corpus(cfg.manifest)
    gateway = Gateway(cfg.gateway)
    samples, skipped, retryable = dataset_mod.build_dataset(corpus, cfg, gateway)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = dataset_mod.export_jsonl(samples, out_dir / "dataset.jsonl")
    _write_retry_manifest(
        out_dir / "retry_dataset.jsonl",
        [{"relation_id": r.relation_id, "error": r.error} for r in retryable],
    )
    skip_hist: dict[str, int] = {}
    for rec in skipped:
        skip_hist[rec.reason] = skip_hist.get(rec.reason, 0) + 1
    counts = {"samples": written, "skipped": skip_hist, "retryable": len(retryable)}
    _write_run_metadata(cfg, "gen-dataset", counts)
    print(json.dumps(counts, sort_keys=True))
    return 0


def cmd_gen_bench(args) -> int:
    cfg = _load(args)
    corpus = load_corpus(cfg.manifest)
    gateway = Gateway(cfg.gateway)
    candidates, dropped, retryable = bench_mod.generate_candidates(corpus, cfg, gateway)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = bench_mod.write_pool(candidates, out_dir / "pool.jsonl")
    _write_retry_manifest(
        out_dir / "retry_bench.jsonl",
        [{"candidate_id": r.candidate_id, "error": r.error} for r in retryable],
    )
    drop_hist: dict[str, int] = {}
    for rec in dropped:
        drop_hist[rec.reason] = drop_hist.get(rec.reason, 0) + 1
    counts = {"candidates": written, "dropped": drop_hist, "retryable": len(retryable)}
    _write_run_metadata(cfg, "gen-bench", counts)
    print(json.dumps(counts, sort_keys=True))
    return 0


def cmd_classify(args) -> int:
    cfg = _load(args)
    gateway = Gateway(cfg.gateway)
    pool_path = Path(args.pool) if args.pool else Path(cfg.output_dir) / "pool.jsonl"
    pool = bench_mod.read_pool(pool_path)
    updated, retryable = bench_mod.classify_candidates(pool, cfg, gateway)
    bench_mod.write_pool(updated, pool_path)
    _write_retry_manifest(
        pool_path.parent / "retry_classify.jsonl",
        [{"candidate_id": r.candidate_id, "error": r.error} for r in retryable],
    )
    subsets: dict[str, int] = {}
    for cand in updated:
        subsets[cand.proposed_subset] = subsets.get(cand.proposed_subset, 0) + 1
    counts = {"candidates": len(updated), "subsets": subsets, "retryable": len(retryable)}
    _write_run_metadata(cfg, "classify", counts)
    print(json.dumps(counts, sort_keys=True))
    return 0


def cmd_review_serve(args) -> int:
    serve(
        pool_path=args.pool,
        images_root=args.images_root,
        host=args.host,
        port=args.port,
        log_path=args.decision_log,
    )
    return 0


def cmd_finalize(args) -> int:
    cfg = _load(args)
    pool_path = Path(args.pool) if args.pool else Path(cfg.output_dir) / "pool.jsonl"
    store = ReviewStore(pool_path, args.decision_log)
    try:
        benchmark = bench_mod.finalize(
            store.pool,
            store.decisions_map(),
            cfg.n_per_subset,
            cfg.effective_n_positive,
            cfg.run_seed,
        )
    finally:
        store.close()
    out_path = Path(args.out) if args.out else Path(cfg.output_dir) / "bench.jsonl"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    written = bench_mod.write_benchmark(benchmark, out_path)
    counts = {"items": written, "n_per_subset": cfg.n_per_subset, "n_positive": cfg.effective_n_positive}
    _write_run_metadata(cfg, "finalize", counts)
    print(json.dumps({"path": str(out_path), **counts}, sort_keys=True))
    return 0


def _read_items(path: str, external: bool):
    if external:
        return evaluation.load_external_benchmark(path)
    return bench_mod.read_benchmark(path)


def cmd_collect(args) -> int:
    cfg = _load(args)
    items = _read_items(args.benchmark, args.external)
    gateway = Gateway(cfg.gateway)
    records, retryable = evaluation.collect_responses(items, cfg, gateway)
    out_path = Path(args.out) if args.out else Path(cfg.output_dir) / "responses.jsonl"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    written = evaluation.write_responses(records, out_path)
    _write_retry_manifest(
        out_path.parent / "retry_collect.jsonl",
        [{"item_id": item_id, "error": error} for item_id, error in retryable],
    )
    counts = {"responses": written, "retryable": len(retryable)}
    _write_run_metadata(cfg, "collect", counts)
    print(json.dumps(counts, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    items = _read_items(args.benchmark, args.external)
    responses = evaluation.read_responses(args.responses)
    report = evaluation.score(
        items, responses, benchmark_name=args.benchmark, model_label=args.model_label
    )
    text = evaluation.format_report(report, style=args.format)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_report(args) -> int:
    report = evaluation.parse_csv_report(Path(args.csv).read_text(encoding="utf-8"))
    text = evaluation.format_report(report, style=args.format)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _add_config_flags(p: argparse.ArgumentParser, mock: bool = False):
    p.add_argument("--config", required=True, help="path to the JSON run config")
    p.add_argument("--seed", type=int, default=None, help="override run_seed")
    p.add_argument("--manifest", default=None, help="override corpus manifest path")
    p.add_argument("--output-dir", default=None, help="override output directory")
    if mock:
        p.add_argument("--mock-script", default=None, help="override gateway mock script")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relqa", description=__doc__.strip().splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a corpus manifest and print counts")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("gen-dataset", help="generate instruction samples")
    _add_config_flags(p, mock=True)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("gen-bench", help="generate benchmark candidates")
    _add_config_flags(p, mock=True)
    p.set_defaults(func=cmd_gen_bench)

    p = sub.add_parser("classify", help="classify negative candidates by hallucination type")
    _add_config_flags(p, mock=True)
    p.add_argument("--pool", default=None, help="candidate pool path (default: output_dir/pool.jsonl)")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("review-serve", help="run the review HTTP service")
    p.add_argument("--pool", required=True, help="candidate pool path")
    p.add_argument("--images-root", default=None, help="directory of image files")
    p.add_argument("--decision-log", default=None, help="decision log path (default: beside pool)")
    p.add_argument("--host", default="127.0.0.1", help="listen address")
    p.add_argument("--port", type=int, default=8321, help="listen port")
    p.set_defaults(func=cmd_review_serve)

    p = sub.add_parser("finalize", help="draw the final benchmark from kept candidates")
    _add_config_flags(p)
    p.add_argument("--pool", default=None, help="candidate pool path (default: output_dir/pool.jsonl)")
    p.add_argument("--decision-log", default=None, help="decision log path (default: beside pool)")
    p.add_argument("--out", default=None, help="benchmark output path (default: output_dir/bench.jsonl)")
    p.set_defaults(func=cmd_finalize)

    p = sub.add_parser("collect", help="query a model endpoint per benchmark item")
    _add_config_flags(p, mock=True)
    p.add_argument("--benchmark", required=True, help="benchmark JSONL path")
    p.add_argument("--external", action="store_true", help="benchmark file uses an external label schema")
    p.add_argument("--out", default=None, help="responses output path")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("eval", help="score responses against a benchmark")
    p.add_argument("--benchmark", required=True, help="benchmark JSONL path")
    p.add_argument("--responses", required=True, help="responses JSONL path")
    p.add_argument("--external", action="store_true", help="benchmark file uses an external label schema")
    p.add_argument("--format", choices=("markdown", "csv"), default="markdown", help="output style")
    p.add_argument("--model-label", default="model", help="name shown in the report")
    p.add_argument("--out", default=None, help="write the report here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="re-render a stored CSV report")
    p.add_argument("--csv", required=True, help="stored CSV report path")
    p.add_argument("--format", choices=("markdown", "csv"), default="markdown", help="output style")
    p.add_argument("--out", default=None, help="write the report here instead of stdout")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(
            json.dumps({"error": "config", "message": str(exc)}, ensure_ascii=False),
            file=sys.stderr,
        )
        return 2
    except (PipelineError, OSError) as exc:
        return _fail(args.command, exc)


if __name__ == "__main__":
    sys.exit(main())
