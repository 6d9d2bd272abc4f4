"""Noise-aware in-context learning toolkit for audio captioning models:
synthetic noise-prior libraries, similarity retrieval, prompt assembly,
and a hallucination benchmark harness."""
from .context import (
    AssembledRequest,
    Exemplar,
    PromptPlan,
    PromptVariant,
    assemble,
    plan_variant,
)
from .dataset import BenchmarkRecord, dataset_stats, load_manifest, save_manifest
from .embed import (
    EmbedderConfig,
    EmbedderKind,
    Embedding,
    embed_builtin,
    embed_clip,
    embed_library,
)
from .errors import NaiclError, UsageError
from .gateway import (
    BackendLimits,
    GenerationFailure,
    GenerationResult,
    HttpChatAudioBackend,
    MockScript,
    generate,
    generate_batch,
)
from .index import PriorIndex, RetrievalContext, RetrievalHit, build_index, load_index, retrieve
# the judge() entry point stays namespaced (naicl.judge.judge) so the
# submodule attribute is not shadowed by a function of the same name
from .judge import (
    HallucinationType,
    JudgeOutcome,
    JudgeVerdict,
    build_judge_prompt,
    parse_verdict,
)
from .metrics import (
    EvaluationReport,
    KeywordSets,
    hallucination_rate,
    keyword_frequency,
    make_report,
    render_report_json,
    render_report_md,
    type_rates,
)
from .noise import (
    Envelope,
    NoiseColor,
    NoiseSpec,
    PriorLibrary,
    build_library,
    load_library,
    render_description,
    synthesize_noise,
)
from .pipeline import RunConfig, default_matrix, run_matrix, run_pipeline

__version__ = "0.1.0"
