"""In-context prompt assembly for every evaluation variant.

A PromptPlan captures the experiment knobs (variant, shot count, noise
duration, caption style); `assemble` turns (benchmark sample, plan,
optional retrieval context) into a backend-agnostic chat request. The
same instruction text is used for every variant so only the exemplar
treatment differs between runs.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .dataset import BenchmarkRecord
from .errors import NaiclError
from .index import RetrievalContext
from .noise import PriorLibrary

DEFAULT_INSTRUCTION = "Describe the sounds in this audio clip."
DEFAULT_DECODE_HINT = {"temperature": 0.0, "max_tokens": 256}


class PlanError(NaiclError):
    pass


class AssemblyError(NaiclError):
    pass


class ExemplarLeakageError(AssemblyError):
    """A real-audio exemplar coincides with the sample under evaluation."""


class CaptionHygieneError(AssemblyError):
    """A noise-exemplar caption contains event-verb vocabulary."""


class PromptVariant(str, Enum):
    NAICL_RETRIEVAL = "naicl_retrieval"
    NAICL_FIXED = "naicl_fixed"
    ICL_REAL_AUDIO = "icl_real_audio"
    BASELINE_NONE = "baseline_none"


@dataclass(frozen=True)
class Exemplar:
    audio_path: str
    caption: str
    source_id: str = ""


@dataclass(frozen=True)
class PromptPlan:
    variant: PromptVariant
    shots: int
    structured: bool = True
    noise_duration_s: float = 2.0
    instruction_text: str = DEFAULT_INSTRUCTION
    exemplars: tuple[Exemplar, ...] = ()
    text_only_shots: bool = False

    def __post_init__(self) -> None:
        if self.shots < 0:
            raise PlanError("shots must be >= 0")
        if self.variant == PromptVariant.BASELINE_NONE and self.shots != 0:
            raise PlanError("baseline variant takes zero shots")
        if self.variant != PromptVariant.NAICL_RETRIEVAL and len(self.exemplars) != self.shots:
            raise PlanError(
                f"{self.variant.value} plan has {len(self.exemplars)} exemplars "
                f"but shots={self.shots}"
            )

    def summary(self) -> dict:
        return {
            "variant": self.variant.value,
            "shots": self.shots,
            "structured": self.structured,
            "noise_duration_s": self.noise_duration_s,
            "text_only_shots": self.text_only_shots,
        }


@dataclass(frozen=True)
class Part:
    type: str  # "text" | "audio"
    text: str = ""
    path: str = ""

    def to_dict(self) -> dict:
        if self.type == "text":
            return {"type": "text", "text": self.text}
        return {"type": "audio", "path": self.path}


@dataclass(frozen=True)
class Message:
    role: str
    parts: tuple[Part, ...]

    def to_dict(self) -> dict:
        return {"role": self.role, "content": [p.to_dict() for p in self.parts]}


@dataclass(frozen=True)
class AssembledRequest:
    sample_id: str
    messages: tuple[Message, ...]
    decode_hint: dict

    def to_json(self) -> str:
        payload = {
            "sample_id": self.sample_id,
            "messages": [m.to_dict() for m in self.messages],
            "decode_hint": self.decode_hint,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def text_request(sample_id: str, text: str, decode_hint: dict | None = None) -> AssembledRequest:
    """Single-turn text-only request (used by the judge path)."""
    return AssembledRequest(
        sample_id=sample_id,
        messages=(Message(role="user", parts=(Part(type="text", text=text),)),),
        decode_hint=dict(decode_hint or DEFAULT_DECODE_HINT),
    )


# --------------------------------------------------------------------------
# planning
# --------------------------------------------------------------------------

def plan_variant(
    variant: PromptVariant,
    shots: int,
    *,
    structured: bool = True,
    noise_duration_s: float = 2.0,
    library: PriorLibrary | None = None,
    static_exemplar_ids: list[str] | None = None,
    holdout_records: list[BenchmarkRecord] | None = None,
    text_only_shots: bool = False,
    instruction_text: str = DEFAULT_INSTRUCTION,
) -> PromptPlan:
    """Resolve a variant into a concrete plan.

    naicl_fixed and icl_real_audio freeze their exemplar lists here;
    naicl_retrieval leaves exemplars empty, to be filled per sample at
    assembly from the retrieval context.
    """
    common = dict(
        structured=structured,
        noise_duration_s=noise_duration_s,
        instruction_text=instruction_text,
        text_only_shots=text_only_shots,
    )
    if variant == PromptVariant.BASELINE_NONE:
        if shots != 0:
            raise PlanError("baseline variant takes zero shots")
        return PromptPlan(variant=variant, shots=0, **common)

    if variant == PromptVariant.NAICL_RETRIEVAL:
        if shots < 1:
            raise PlanError("retrieval variant needs shots >= 1")
        return PromptPlan(variant=variant, shots=shots, **common)

    if variant == PromptVariant.NAICL_FIXED:
        if library is None or not library.entries:
            raise PlanError("fixed-exemplar variant requires a non-empty noise library")
        by_id = {e.id: e for e in library.entries}
        if static_exemplar_ids:
            try:
                chosen = [by_id[i] for i in static_exemplar_ids]
            except KeyError as exc:
                raise PlanError(f"static exemplar id not in library: {exc}") from exc
        else:
            chosen = [by_id[i] for i in sorted(by_id)]
        if len(chosen) < shots:
            raise PlanError(
                f"static exemplar list has {len(chosen)} entries, needs {shots}"
            )
        chosen = chosen[:shots]
        for e in chosen:
            if not math.isclose(e.spec.duration_s, noise_duration_s, rel_tol=1e-9, abs_tol=1e-9):
                raise PlanError(
                    f"library entry '{e.id}' is {e.spec.duration_s}s but the plan "
                    f"calls for {noise_duration_s}s noise"
                )
        exemplars = tuple(
            Exemplar(
                audio_path=str(e.audio_path),
                caption=e.description.rendered(structured),
                source_id=e.id,
            )
            for e in chosen
        )
        return PromptPlan(variant=variant, shots=shots, exemplars=exemplars, **common)

    # ICL_REAL_AUDIO
    if not holdout_records:
        raise PlanError("real-audio ICL requires held-out benchmark records")
    if len(holdout_records) < shots:
        raise PlanError(
            f"held-out slice has {len(holdout_records)} records, needs {shots}"
        )
    exemplars = tuple(
        Exemplar(
            audio_path=str(r.audio_path),
            caption=r.original_captions[0],
            source_id=r.id,
        )
        for r in holdout_records[:shots]
    )
    return PromptPlan(variant=variant, shots=shots, exemplars=exemplars, **common)


# --------------------------------------------------------------------------
# assembly
# --------------------------------------------------------------------------

def _default_event_terms() -> frozenset[str]:
    from .metrics import KeywordSets  # deferred: metrics depends on judge types

    return KeywordSets.default().event


def assemble(
    sample: BenchmarkRecord,
    plan: PromptPlan,
    ctx: RetrievalContext | None = None,
    event_terms: frozenset[str] | None = None,
) -> AssembledRequest:
    """Build the chat request for one sample: exemplar turns in order, then
    the instruction + target-audio turn. Pure function of its arguments."""
    if plan.variant == PromptVariant.NAICL_RETRIEVAL:
        if ctx is None:
            raise AssemblyError("retrieval variant requires a RetrievalContext")
        if ctx.k != plan.shots:
            raise AssemblyError(f"retrieval context k={ctx.k} but plan.shots={plan.shots}")
        exemplars = tuple(
            Exemplar(
                audio_path=str(h.audio_path),
                caption=h.description.rendered(plan.structured),
                source_id=h.entry_id,
            )
            for h in ctx.hits
        )
    else:
        if ctx is not None:
            raise AssemblyError(f"{plan.variant.value} variant does not take a retrieval context")
        exemplars = plan.exemplars

    if len(exemplars) != plan.shots:
        raise AssemblyError(
            f"assembled {len(exemplars)} exemplars but plan.shots={plan.shots}"
        )

    if plan.variant == PromptVariant.ICL_REAL_AUDIO:
        for ex in exemplars:
            if ex.source_id == sample.id:
                raise ExemplarLeakageError(
                    f"exemplar '{ex.source_id}' is the sample under evaluation"
                )

    if plan.variant in (PromptVariant.NAICL_RETRIEVAL, PromptVariant.NAICL_FIXED):
        terms = event_terms if event_terms is not None else _default_event_terms()
        from .metrics import find_terms  # deferred, same reason as above

        for ex in exemplars:
            offending = find_terms(ex.caption, terms)
            if offending:
                raise CaptionHygieneError(
                    f"noise exemplar '{ex.source_id}' caption contains event "
                    f"term(s): {', '.join(sorted(offending))}"
                )

    missing = [ex.audio_path for ex in exemplars if not Path(ex.audio_path).exists()]
    if not Path(sample.audio_path).exists():
        missing.append(str(sample.audio_path))
    if missing:
        raise AssemblyError(f"missing audio file(s): {', '.join(missing)}")

    messages: list[Message] = []
    for ex in exemplars:
        parts: tuple[Part, ...]
        if plan.text_only_shots:
            parts = (Part(type="text", text=ex.caption),)
        else:
            parts = (Part(type="audio", path=ex.audio_path), Part(type="text", text=ex.caption))
        messages.append(Message(role="user", parts=parts))
    messages.append(
        Message(
            role="user",
            parts=(
                Part(type="text", text=plan.instruction_text),
                Part(type="audio", path=str(sample.audio_path)),
            ),
        )
    )
    return AssembledRequest(
        sample_id=sample.id,
        messages=tuple(messages),
        decode_hint=dict(DEFAULT_DECODE_HINT),
    )
