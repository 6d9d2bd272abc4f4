"""Command-line front end.

Subcommands cover the whole workflow: synthesize a noise library, embed
it, query it, run an evaluation, sweep the ablation matrix, re-judge a
captions file, and inspect datasets and reports.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 partial run
(some samples failed generation or judging).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .context import PromptVariant
from .dataset import dataset_stats, load_manifest
from .embed import embed_library
from .errors import NaiclError, UsageError
from .gateway import BackendLimits
from .index import load_index, retrieve
from .judge import judge
from .metrics import render_report_md
from .noise import RECIPES, build_library
from .pipeline import (
    RunConfig,
    VERDICTS_NAME,
    _verdict_row,
    default_matrix,
    load_matrix,
    make_backend,
    make_embedder,
    run_matrix,
    run_pipeline,
)
from .embed import embed_clip

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_PARTIAL = 3


def _add_backend_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--generator", default="mock",
                   help="caption backend: mock | mock:<script.jsonl> | http(s):<url>")
    p.add_argument("--judge", default="mock", dest="judge_backend",
                   help="judge backend: mock | mock:<script.jsonl> | http(s):<url>")
    p.add_argument("--generator-model", default="default")
    p.add_argument("--judge-model", default="judge")
    p.add_argument("--concurrency", type=int, default=1)
    p.add_argument("--timeout", type=float, default=60.0, help="per-request timeout, seconds")
    p.add_argument("--retries", type=int, default=2)


def _add_keyword_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--keywords-event")
    p.add_argument("--keywords-definite")
    p.add_argument("--keywords-acoustic")
    p.add_argument("--stem", action="store_true",
                   help="match keywords on lightly stemmed tokens")


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", required=True)
    p.add_argument("--shots", type=int, default=3)
    p.add_argument("--unstructured", action="store_true",
                   help="use free-form exemplar captions instead of the template form")
    p.add_argument("--noise-duration", type=float, default=2.0)
    p.add_argument("--library", help="noise library directory")
    p.add_argument("--embedder", default="builtin", help="builtin | external:<url>")
    p.add_argument("--exemplar-manifest",
                   help="records to use as real-audio exemplars (icl_real_audio only)")
    p.add_argument("--max-samples", type=int)
    p.add_argument("--out", default="runs/out")
    p.add_argument("--resume", action="store_true")
    _add_backend_args(p)
    _add_keyword_args(p)


def _resolve_variant(args: argparse.Namespace) -> PromptVariant:
    if args.variant == "naicl":
        retrieval = args.retrieval or "on"
        return (
            PromptVariant.NAICL_RETRIEVAL if retrieval == "on" else PromptVariant.NAICL_FIXED
        )
    if args.retrieval is not None:
        raise UsageError("--retrieval only applies to --variant naicl")
    return PromptVariant(args.variant)


def _config_from_args(args: argparse.Namespace, variant: PromptVariant) -> RunConfig:
    return RunConfig(
        manifest=args.manifest,
        variant=variant,
        shots=0 if variant == PromptVariant.BASELINE_NONE else args.shots,
        structured=not args.unstructured,
        noise_duration_s=args.noise_duration,
        library_dir=args.library,
        embedder=args.embedder,
        generator=args.generator,
        judge_backend=args.judge_backend,
        generator_model=args.generator_model,
        judge_model=args.judge_model,
        keywords_event=args.keywords_event,
        keywords_definite=args.keywords_definite,
        keywords_acoustic=args.keywords_acoustic,
        stem=args.stem,
        exemplar_manifest=args.exemplar_manifest,
        max_samples=args.max_samples,
        out_dir=args.out,
        concurrency=args.concurrency,
        resume=args.resume,
        limits=BackendLimits(timeout_s=args.timeout, retries=args.retries),
    )


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_build_library(args: argparse.Namespace) -> int:
    recipe = RECIPES[args.recipe]
    specs = recipe(base_seed=args.seed, duration_s=args.duration,
                   sample_rate_hz=args.sample_rate)
    library = build_library(specs, args.out)
    print(f"built {len(library.entries)} noise clips in {args.out}")
    return EXIT_OK


def cmd_embed(args: argparse.Namespace) -> int:
    from .noise import load_library

    library = load_library(args.library)
    cfg = make_embedder(args.embedder)
    embed_library(library, cfg)
    print(f"embedded {len(library.entries)} clips ({cfg.tag}) in {args.library}")
    return EXIT_OK


def cmd_retrieve(args: argparse.Namespace) -> int:
    index = load_index(args.library)
    cfg = make_embedder(args.embedder)
    expected = cfg.tag
    if index.kind_tag != expected:
        raise UsageError(
            f"library embeddings are '{index.kind_tag}' but --embedder gives "
            f"'{expected}'"
        )
    query = embed_clip(args.query, cfg)
    ctx = retrieve(query, index, k=args.k, query_id=str(args.query))
    rows = [
        {
            "entry_id": h.entry_id,
            "similarity": round(h.similarity, 6),
            "caption": h.description.rendered(not args.unstructured),
            "audio_path": str(h.audio_path),
        }
        for h in ctx.hits
    ]
    print(json.dumps(rows, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    variant = _resolve_variant(args)
    result = run_pipeline(_config_from_args(args, variant))
    r = result.report
    print(
        f"run {r.run_id} [{r.variant}] n={r.n_judged}/{r.n_samples} "
        f"HR={r.hr_percent:.2f}% -> {result.out_dir}"
    )
    return result.exit_code


def cmd_ablate(args: argparse.Namespace) -> int:
    if args.matrix:
        rows = load_matrix(args.matrix)
    else:
        if not args.library or not args.library_10s:
            raise UsageError(
                "default matrix needs --library and --library-10s "
                "(or pass an explicit --matrix file)"
            )
        rows = default_matrix(args.library, args.library_10s)
    base = _config_from_args(args, PromptVariant.BASELINE_NONE)
    base = dataclasses.replace(base, shots=args.shots, out_dir=args.out)
    results, out = run_matrix(base, rows, args.out)
    for res in results:
        r = res.report
        print(f"  {r.variant:<16} shots={r.config_snapshot['shots']} HR={r.hr_percent:.2f}%")
    print(f"ablation report -> {out / 'report.json'}")
    return max(res.exit_code for res in results)


def cmd_judge(args: argparse.Namespace) -> int:
    records = {r.id: r for r in load_manifest(args.manifest)}
    backend = make_backend(args.judge_backend, "judge", model=args.judge_model)
    limits = BackendLimits(timeout_s=args.timeout, retries=args.retries)
    rows = []
    unjudgeable = 0
    with open(args.captions, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            sid = row["sample_id"]
            rec = records.get(sid)
            if rec is None:
                raise UsageError(f"{args.captions}:{lineno}: unknown sample_id '{sid}'")
            outcome = judge(
                caption=row["caption"],
                reference=rec.reference,
                sample_id=sid,
                backend=backend,
                limits=limits,
                human_captions=rec.original_captions,
                judge_model=args.judge_model,
            )
            unjudgeable += 0 if outcome.judged else 1
            rows.append(_verdict_row(outcome))
    out = Path(args.out or VERDICTS_NAME)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    print(f"judged {len(rows) - unjudgeable}/{len(rows)} captions -> {out}")
    return EXIT_PARTIAL if unjudgeable else EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    records = load_manifest(args.manifest)
    stats = dataset_stats(records)
    print(json.dumps(stats.to_json_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    from .metrics import EvaluationReport

    reports = []
    for run_dir in args.runs:
        path = Path(run_dir) / "report.json"
        if not path.exists():
            raise UsageError(f"no report.json under {run_dir}")
        payload = json.loads(path.read_text(encoding="utf-8"))
        for raw in payload.get("runs", []):
            reports.append(EvaluationReport(**raw))
    if not reports:
        raise UsageError("no runs found")
    text = render_report_md(reports, title="Combined report")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="naicl",
        description="Noise-prior retrieval and hallucination benchmarking "
                    "for audio captioning models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-library", help="synthesize a noise-prior library")
    p.add_argument("--out", required=True)
    p.add_argument("--recipe", choices=sorted(RECIPES), default="default")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--duration", type=float, default=2.0)
    p.add_argument("--sample-rate", type=int, default=16000)
    p.set_defaults(func=cmd_build_library)

    p = sub.add_parser("embed", help="embed a library and write the sidecar")
    p.add_argument("--library", required=True)
    p.add_argument("--embedder", default="builtin")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("retrieve", help="query a library with an audio clip")
    p.add_argument("--library", required=True)
    p.add_argument("--query", required=True, help="wav file to embed as the query")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--embedder", default="builtin")
    p.add_argument("--unstructured", action="store_true")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("run", help="run one evaluation variant end to end")
    p.add_argument("--variant", choices=["naicl", "icl_real_audio", "baseline_none"],
                   default="naicl")
    p.add_argument("--retrieval", choices=["on", "off"],
                   help="naicl only: per-sample retrieval (on) or a fixed shot list (off)")
    _add_run_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="run the variant comparison matrix")
    p.add_argument("--matrix", help="JSON list of labelled RunConfig overrides")
    p.add_argument("--library-10s", help="library of long-duration clips for the default matrix")
    _add_run_args(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("judge", help="judge an existing captions.jsonl")
    p.add_argument("--manifest", required=True)
    p.add_argument("--captions", required=True)
    p.add_argument("--out")
    p.add_argument("--judge", default="mock", dest="judge_backend")
    p.add_argument("--judge-model", default="judge")
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--retries", type=int, default=2)
    p.set_defaults(func=cmd_judge)

    p = sub.add_parser("stats", help="summarize a benchmark manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("report", help="merge run reports into one table")
    p.add_argument("runs", nargs="+", help="run directories containing report.json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NaiclError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
