"""End-to-end evaluation runs.

A run is: load benchmark records, build per-sample prompts for the chosen
variant (retrieving noise exemplars when the variant calls for it),
generate captions through the gateway, judge them, and score. Artifacts
land in out_dir: captions.jsonl, verdicts.jsonl, report.json, report.md.

The run id is a hash of the run configuration, and everything written to
report.json is derived from inputs and config only, so repeating a run
(at any concurrency) produces byte-identical reports.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .context import (
    PromptPlan,
    PromptVariant,
    assemble,
    plan_variant,
)
from .dataset import BenchmarkRecord, load_manifest
from .embed import EmbedderConfig, EmbedderKind, embed_clip
from .errors import NaiclError, UsageError
from .gateway import (
    BackendLimits,
    BatchOutcome,
    GenerationResult,
    GeneratorBackend,
    HttpChatAudioBackend,
    MockScript,
    generate_batch,
)
from .index import PriorIndex, load_index, retrieve
from .judge import (
    HallucinationType,
    JudgeOutcome,
    JudgeVerdict,
    Span,
    judge,
)
from .metrics import EvaluationReport, KeywordSets, make_report, render_report_json, render_report_md
from .noise import PriorLibrary, load_library

CAPTIONS_NAME = "captions.jsonl"
VERDICTS_NAME = "verdicts.jsonl"
FAILURES_NAME = "failures.jsonl"
REPORT_JSON_NAME = "report.json"
REPORT_MD_NAME = "report.md"

MOCK_GENERATOR_DEFAULT = "a steady background sound"
MOCK_JUDGE_DEFAULT = '{"hallucinated": false, "types": [], "spans": []}'


class PipelineError(NaiclError):
    pass


@dataclass(frozen=True)
class RunConfig:
    manifest: str
    variant: PromptVariant
    shots: int = 3
    structured: bool = True
    noise_duration_s: float = 2.0
    library_dir: str | None = None
    embedder: str = "builtin"  # "builtin" | "external:<url>"
    generator: str = "mock"  # "mock" | "mock:<script.jsonl>" | "http:<url>"
    judge_backend: str = "mock"
    generator_model: str = "default"
    judge_model: str = "judge"
    keywords_event: str | None = None
    keywords_definite: str | None = None
    keywords_acoustic: str | None = None
    stem: bool = False
    exemplar_manifest: str | None = None
    max_samples: int | None = None
    out_dir: str = "runs/out"
    concurrency: int = 1
    resume: bool = False
    limits: BackendLimits = field(default_factory=BackendLimits)

    def snapshot(self) -> dict:
        """Everything that determines the run's results. Execution knobs
        (out_dir, concurrency, resume, retry limits) are left out so the
        same experiment hashes the same everywhere."""
        keyword_src = (
            [self.keywords_event, self.keywords_definite, self.keywords_acoustic]
            if self.keywords_event
            else "builtin"
        )
        return {
            "manifest": self.manifest,
            "variant": self.variant.value,
            "shots": self.shots,
            "structured": self.structured,
            "noise_duration_s": self.noise_duration_s,
            "library_dir": self.library_dir,
            "embedder": self.embedder,
            "generator": self.generator,
            "judge_backend": self.judge_backend,
            "generator_model": self.generator_model,
            "judge_model": self.judge_model,
            "keywords": keyword_src,
            "stem": self.stem,
            "exemplar_manifest": self.exemplar_manifest,
            "max_samples": self.max_samples,
        }

    def run_id(self) -> str:
        blob = json.dumps(self.snapshot(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


@dataclass(frozen=True)
class PipelineResult:
    report: EvaluationReport
    out_dir: Path
    exit_code: int  # 0 clean, 3 partial (failures or unjudgeable samples)


# --------------------------------------------------------------------------
# config resolution helpers
# --------------------------------------------------------------------------

def make_backend(spec: str, role: str, model: str = "default") -> GeneratorBackend:
    """Backend spec strings: "mock", "mock:<script.jsonl>", "http:<url>"."""
    if spec == "mock":
        default = MOCK_JUDGE_DEFAULT if role == "judge" else MOCK_GENERATOR_DEFAULT
        return MockScript(default=default)
    if spec.startswith("mock:"):
        return MockScript.from_jsonl(spec[len("mock:"):], default=None)
    if spec.startswith("http:") or spec.startswith("https:"):
        env = "NAICL_JUDGE_KEY" if role == "judge" else "NAICL_GENERATOR_KEY"
        return HttpChatAudioBackend(spec, model=model, api_key_env=env)
    raise UsageError(f"unknown {role} backend spec: {spec!r}")


def make_embedder(spec: str) -> EmbedderConfig:
    if spec == "builtin":
        return EmbedderConfig(kind=EmbedderKind.BUILTIN)
    if spec.startswith("external:"):
        return EmbedderConfig(kind=EmbedderKind.EXTERNAL, endpoint=spec[len("external:"):])
    raise UsageError(f"unknown embedder spec: {spec!r}")


def load_keywords(config: RunConfig) -> KeywordSets:
    paths = (config.keywords_event, config.keywords_definite, config.keywords_acoustic)
    given = [p for p in paths if p]
    if not given:
        return KeywordSets.default()
    if len(given) != 3:
        raise UsageError("provide all three keyword files or none")
    return KeywordSets.from_files(*paths)


def _load_library_checked(config: RunConfig) -> PriorLibrary:
    if not config.library_dir:
        raise UsageError(f"variant {config.variant.value} requires a noise library")
    library = load_library(config.library_dir)
    off = [
        e.id
        for e in library.entries
        if abs(e.spec.duration_s - config.noise_duration_s) > 1e-9
    ]
    if off:
        raise PipelineError(
            f"library entries do not match noise_duration_s={config.noise_duration_s}: "
            + ", ".join(off[:5])
            + ("..." if len(off) > 5 else "")
        )
    return library


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

def _write_jsonl(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _read_jsonl(path: Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def _result_row(r: GenerationResult) -> dict:
    return {
        "sample_id": r.sample_id,
        "caption": r.caption,
        "backend": r.backend,
        "attempt": r.attempt,
        "latency_ms": round(r.latency_ms, 3),
    }


def _result_from_row(row: dict) -> GenerationResult:
    return GenerationResult(
        sample_id=row["sample_id"],
        caption=row["caption"],
        backend=row.get("backend", ""),
        latency_ms=float(row.get("latency_ms", 0.0)),
        attempt=int(row.get("attempt", 1)),
    )


def _verdict_row(outcome: JudgeOutcome) -> dict:
    if outcome.verdict is None:
        return {
            "sample_id": outcome.sample_id,
            "unjudgeable": True,
            "reason": outcome.unjudgeable_reason,
            "attempts": outcome.attempts,
        }
    row = outcome.verdict.to_dict()
    row["unjudgeable"] = False
    row["attempts"] = outcome.attempts
    return row


def _verdict_from_row(row: dict) -> JudgeOutcome:
    if row.get("unjudgeable"):
        return JudgeOutcome(
            sample_id=row["sample_id"],
            verdict=None,
            unjudgeable_reason=row.get("reason", "persisted as unjudgeable"),
            attempts=int(row.get("attempts", 1)),
        )
    verdict = JudgeVerdict(
        sample_id=row["sample_id"],
        hallucinated=bool(row["hallucinated"]),
        types=tuple(HallucinationType(t) for t in row["types"]),
        spans=tuple(
            Span(text=s["text"], types=tuple(HallucinationType(t) for t in s.get("types", [])))
            for s in row.get("spans", [])
        ),
        judge_model=row.get("judge_model", ""),
        raw_response="",
        warnings=tuple(row.get("warnings", [])),
    )
    return JudgeOutcome(
        sample_id=row["sample_id"],
        verdict=verdict,
        unjudgeable_reason=None,
        attempts=int(row.get("attempts", 1)),
    )


# --------------------------------------------------------------------------
# run
# --------------------------------------------------------------------------

def _split_records(
    records: list[BenchmarkRecord], config: RunConfig
) -> tuple[list[BenchmarkRecord], list[BenchmarkRecord]]:
    """Returns (eval_records, exemplar_records). Real-audio ICL without a
    dedicated exemplar manifest reserves the leading records as shots."""
    exemplars: list[BenchmarkRecord] = []
    eval_records = records
    if config.variant == PromptVariant.ICL_REAL_AUDIO:
        if config.exemplar_manifest:
            exemplars = load_manifest(config.exemplar_manifest, verify_audio=True)
        else:
            if len(records) <= config.shots:
                raise PipelineError(
                    f"manifest has {len(records)} records, cannot reserve "
                    f"{config.shots} as exemplars"
                )
            exemplars = records[: config.shots]
            eval_records = records[config.shots:]
    if config.max_samples is not None:
        eval_records = eval_records[: config.max_samples]
    if not eval_records:
        raise PipelineError("no records left to evaluate")
    return eval_records, exemplars


def _build_requests(
    eval_records: list[BenchmarkRecord],
    plan: PromptPlan,
    config: RunConfig,
    index: PriorIndex | None,
    keywords: KeywordSets,
):
    """Assemble one request per record, embedding and retrieving serially
    in the caller's thread so exemplar choice never depends on scheduling."""
    requests = []
    if plan.variant == PromptVariant.NAICL_RETRIEVAL:
        assert index is not None
        cfg = make_embedder(config.embedder)
        for rec in eval_records:
            query = embed_clip(rec.audio_path, cfg)
            ctx = retrieve(query, index, k=plan.shots, query_id=rec.id)
            requests.append(assemble(rec, plan, ctx, event_terms=keywords.event))
    else:
        for rec in eval_records:
            requests.append(assemble(rec, plan, None, event_terms=keywords.event))
    return requests


def _judge_all(
    results: list[GenerationResult],
    by_id: dict[str, BenchmarkRecord],
    backend: GeneratorBackend,
    config: RunConfig,
) -> list[JudgeOutcome]:
    def judge_one(r: GenerationResult) -> JudgeOutcome:
        rec = by_id[r.sample_id]
        return judge(
            caption=r.caption,
            reference=rec.reference,
            sample_id=r.sample_id,
            backend=backend,
            limits=config.limits,
            human_captions=rec.original_captions,
            judge_model=config.judge_model,
        )

    workers = max(1, min(config.concurrency, config.limits.max_concurrency))
    if workers == 1:
        return [judge_one(r) for r in results]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(judge_one, results))


def run_pipeline(config: RunConfig) -> PipelineResult:
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    run_id = config.run_id()

    records = load_manifest(config.manifest, verify_audio=True)
    eval_records, exemplar_records = _split_records(records, config)
    by_id = {r.id: r for r in eval_records}
    keywords = load_keywords(config)

    library = index = None
    if config.variant in (PromptVariant.NAICL_RETRIEVAL, PromptVariant.NAICL_FIXED):
        library = _load_library_checked(config)
    if config.variant == PromptVariant.NAICL_RETRIEVAL:
        index = load_index(config.library_dir)
        expected_tag = make_embedder(config.embedder).tag
        if index.kind_tag != expected_tag:
            raise PipelineError(
                f"library embeddings were built with '{index.kind_tag}' but this "
                f"run uses '{expected_tag}'; re-embed the library"
            )

    plan = plan_variant(
        config.variant,
        config.shots,
        structured=config.structured,
        noise_duration_s=config.noise_duration_s,
        library=library,
        holdout_records=exemplar_records or None,
    )
    requests = _build_requests(eval_records, plan, config, index, keywords)

    # Resume: anything already persisted in out_dir is not re-run.
    persisted_results: dict[str, GenerationResult] = {}
    persisted_outcomes: dict[str, JudgeOutcome] = {}
    captions_path = out_dir / CAPTIONS_NAME
    verdicts_path = out_dir / VERDICTS_NAME
    if config.resume and captions_path.exists():
        for row in _read_jsonl(captions_path):
            persisted_results[row["sample_id"]] = _result_from_row(row)
        if verdicts_path.exists():
            for row in _read_jsonl(verdicts_path):
                outcome = _verdict_from_row(row)
                if outcome.judged:  # unjudgeable samples get another try
                    persisted_outcomes[outcome.sample_id] = outcome

    todo = [req for req in requests if req.sample_id not in persisted_results]
    batch = generate_batch(
        todo,
        make_backend(config.generator, "generator", model=config.generator_model),
        limits=config.limits,
        concurrency=config.concurrency,
    )
    new_results = {r.sample_id: r for r in batch.results}
    results = [
        persisted_results.get(rec.id) or new_results.get(rec.id)
        for rec in eval_records
    ]
    results = [r for r in results if r is not None]

    judge_backend = make_backend(config.judge_backend, "judge", model=config.judge_model)
    to_judge = [r for r in results if r.sample_id not in persisted_outcomes]
    new_outcomes = {o.sample_id: o for o in _judge_all(to_judge, by_id, judge_backend, config)}
    outcomes = [
        persisted_outcomes.get(r.sample_id) or new_outcomes[r.sample_id] for r in results
    ]

    # Canonical manifest order, full rewrite: resumed and fresh runs
    # produce identical files.
    _write_jsonl(captions_path, [_result_row(r) for r in results])
    _write_jsonl(verdicts_path, [_verdict_row(o) for o in outcomes])
    if batch.failures:
        _write_jsonl(out_dir / FAILURES_NAME, [dataclasses.asdict(f) for f in batch.failures])

    judged = [o.verdict for o in outcomes if o.verdict is not None]
    if not judged:
        raise PipelineError("no sample could be judged; nothing to score")
    unjudgeable = sum(1 for o in outcomes if o.verdict is None)
    report = make_report(
        run_id=run_id,
        variant=config.variant.value,
        n_samples=len(eval_records),
        verdicts=judged,
        captions=[r.caption for r in results],
        keywords=keywords,
        unjudgeable=unjudgeable,
        generation_failures=len(batch.failures),
        config_snapshot=config.snapshot(),
        stem=config.stem,
    )
    (out_dir / REPORT_JSON_NAME).write_text(render_report_json([report]), encoding="utf-8")
    (out_dir / REPORT_MD_NAME).write_text(render_report_md([report]), encoding="utf-8")

    exit_code = 3 if (batch.failures or unjudgeable) else 0
    return PipelineResult(report=report, out_dir=out_dir, exit_code=exit_code)


# --------------------------------------------------------------------------
# ablation matrix
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AblationRow:
    label: str
    overrides: dict


def default_matrix(library_dir: str, library_10s_dir: str) -> list[AblationRow]:
    """The standard eight-arm comparison: no context, real-audio shots,
    fixed noise shots at 1/2/3, long-duration retrieval, unstructured
    captions, and the full retrieval configuration."""
    fixed = {"variant": PromptVariant.NAICL_FIXED, "library_dir": library_dir}
    retrieval = {"variant": PromptVariant.NAICL_RETRIEVAL, "shots": 3, "library_dir": library_dir}
    return [
        AblationRow("baseline_none", {"variant": PromptVariant.BASELINE_NONE, "shots": 0}),
        AblationRow("icl_real_3shot", {"variant": PromptVariant.ICL_REAL_AUDIO, "shots": 3}),
        AblationRow("naicl_fixed_1shot", {**fixed, "shots": 1}),
        AblationRow("naicl_fixed_2shot", {**fixed, "shots": 2}),
        AblationRow("naicl_fixed_3shot", {**fixed, "shots": 3}),
        AblationRow(
            "naicl_retrieval_3shot_10s",
            {**retrieval, "library_dir": library_10s_dir, "noise_duration_s": 10.0},
        ),
        AblationRow("naicl_retrieval_3shot_unstructured", {**retrieval, "structured": False}),
        AblationRow("naicl_retrieval_3shot", retrieval),
    ]


def load_matrix(path: str | Path) -> list[AblationRow]:
    """Matrix file: JSON list of {"label": ..., <RunConfig overrides>}."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list) or not raw:
        raise UsageError(f"{path}: matrix must be a non-empty JSON list")
    rows = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict) or "label" not in item:
            raise UsageError(f"{path}: row {i} needs a 'label'")
        overrides = {k: v for k, v in item.items() if k != "label"}
        if "variant" in overrides:
            overrides["variant"] = PromptVariant(overrides["variant"])
        rows.append(AblationRow(label=str(item["label"]), overrides=overrides))
    labels = [r.label for r in rows]
    if len(set(labels)) != len(labels):
        raise UsageError(f"{path}: duplicate row labels")
    return rows


def run_matrix(base: RunConfig, rows: list[AblationRow], out_dir: str | Path) -> tuple[list[PipelineResult], Path]:
    """Run every row in isolation under out_dir/rows/<label>/ and write a
    consolidated report at the top level. Row snapshots must be distinct,
    otherwise two arms of the comparison would be the same experiment."""
    out = Path(out_dir)
    configs = []
    for row in rows:
        cfg = dataclasses.replace(
            base, out_dir=str(out / "rows" / row.label), **row.overrides
        )
        configs.append((row.label, cfg))
    seen: dict[str, str] = {}
    for label, cfg in configs:
        key = json.dumps(cfg.snapshot(), sort_keys=True)
        if key in seen:
            raise UsageError(f"matrix rows '{seen[key]}' and '{label}' are identical runs")
        seen[key] = label

    results = [run_pipeline(cfg) for _, cfg in configs]
    reports = [r.report for r in results]
    out.mkdir(parents=True, exist_ok=True)
    (out / REPORT_JSON_NAME).write_text(render_report_json(reports), encoding="utf-8")
    (out / REPORT_MD_NAME).write_text(
        render_report_md(reports, title="Ablation report"), encoding="utf-8"
    )
    return results, out
