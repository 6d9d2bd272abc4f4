"""Caption auditing with a judge model.

The judge receives the generated caption plus the ground-truth reference
material and returns a strict-JSON verdict labelling hallucinated content
under a four-type taxonomy. Parsing is defensive: the first JSON object
is extracted from the raw reply, the schema is validated field by field,
and a single re-ask is issued before a sample is declared unjudgeable.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum

from .context import AssembledRequest, Message, Part, text_request
from .errors import NaiclError
from .gateway import (
    BackendError,
    BackendLimits,
    GenerationResult,
    GeneratorBackend,
    generate,
)


class HallucinationType(str, Enum):
    ACOUSTIC_ATTRIBUTE = "acoustic_attribute"
    SOURCE_MATERIAL = "source_material"
    PRIOR_DRIVEN = "prior_driven"
    FABRICATED_EVENT = "fabricated_event"


_TYPE_ORDER = {t: i for i, t in enumerate(HallucinationType)}

TYPE_DEFINITIONS: dict[HallucinationType, str] = {
    HallucinationType.ACOUSTIC_ATTRIBUTE: (
        "The model assigns attributes or action characteristics to events or "
        "sound sources that are indeed present in the audio, but that are not "
        "supported by acoustic evidence."
    ),
    HallucinationType.SOURCE_MATERIAL: (
        "The model incorrectly identifies the source or material of a sound, "
        "attributing an acoustic event to a sound source or object that does "
        "not correspond to the actual audio."
    ),
    HallucinationType.PRIOR_DRIVEN: (
        "The generated content is primarily driven by linguistic priors or "
        "commonsense knowledge, rather than grounded in the acoustic evidence "
        "of the input audio."
    ),
    HallucinationType.FABRICATED_EVENT: (
        "The model generates sound events that are completely absent from the "
        "input audio and have no perceptual basis at the acoustic level."
    ),
}

_SCHEMA_HINT = (
    '{"hallucinated": true|false, "types": [<zero or more type labels>], '
    '"spans": [{"text": "<verbatim substring of the caption>", '
    '"types": [<type labels>]}]}'
)

REASK_TEXT = (
    "Your previous reply could not be parsed. Respond again with exactly one "
    "JSON object matching the schema, and nothing else."
)


class VerdictParseError(NaiclError):
    pass


class NoJsonError(VerdictParseError):
    pass


class SchemaError(VerdictParseError):
    pass


class UnknownTypeLabelError(VerdictParseError):
    pass


class SpanNotInCaptionError(VerdictParseError):
    pass


@dataclass(frozen=True)
class Span:
    text: str
    types: tuple[HallucinationType, ...] = ()


@dataclass(frozen=True)
class JudgeVerdict:
    sample_id: str
    hallucinated: bool
    types: tuple[HallucinationType, ...]
    spans: tuple[Span, ...]
    judge_model: str
    raw_response: str
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "hallucinated": self.hallucinated,
            "types": [t.value for t in self.types],
            "spans": [
                {"text": s.text, "types": [t.value for t in s.types]} for s in self.spans
            ],
            "judge_model": self.judge_model,
            "warnings": list(self.warnings),
        }


@dataclass(frozen=True)
class JudgeOutcome:
    sample_id: str
    verdict: JudgeVerdict | None
    unjudgeable_reason: str | None
    attempts: int

    @property
    def judged(self) -> bool:
        return self.verdict is not None


# --------------------------------------------------------------------------
# prompt
# --------------------------------------------------------------------------

def build_judge_prompt(
    caption: str, reference: str, human_captions: tuple[str, ...] = ()
) -> str:
    labels = ", ".join(f'"{t.value}"' for t in HallucinationType)
    rubric = "\n".join(
        f"- {t.value}: {TYPE_DEFINITIONS[t]}" for t in HallucinationType
    )
    payload = {
        "caption": caption,
        "reference": reference,
        "human_captions": list(human_captions),
    }
    return (
        "You are auditing a machine-written caption of an audio clip against "
        "trusted reference descriptions of the same clip.\n\n"
        "Hallucination type labels:\n"
        f"{rubric}\n\n"
        "INPUT:\n"
        f"{json.dumps(payload, sort_keys=True)}\n\n"
        "Identify every claim in the caption that the reference material does "
        "not support, and label each with the types above. Respond with "
        "exactly one JSON object, no surrounding prose, in this shape:\n"
        f"{_SCHEMA_HINT}\n"
        f"Valid type labels: {labels}.\n"
        'Every "text" value must be copied verbatim from the caption. If the '
        'caption is fully supported, return {"hallucinated": false, '
        '"types": [], "spans": []}.'
    )


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------

def _first_json_object(raw: str) -> dict:
    decoder = json.JSONDecoder()
    idx = raw.find("{")
    while idx != -1:
        try:
            obj, _ = decoder.raw_decode(raw, idx)
        except ValueError:
            idx = raw.find("{", idx + 1)
            continue
        if isinstance(obj, dict):
            return obj
        idx = raw.find("{", idx + 1)
    raise NoJsonError("no JSON object found in judge reply")


def _coerce_label(label: object) -> HallucinationType:
    if not isinstance(label, str):
        raise UnknownTypeLabelError(f"type label is not a string: {label!r}")
    norm = "_".join(re.split(r"[\s/_-]+", label.strip().lower())).strip("_")
    try:
        return HallucinationType(norm)
    except ValueError:
        raise UnknownTypeLabelError(f"unknown hallucination type label: {label!r}") from None


def _sorted_types(types: set[HallucinationType]) -> tuple[HallucinationType, ...]:
    return tuple(sorted(types, key=_TYPE_ORDER.__getitem__))


def parse_verdict(
    raw: str, caption: str, sample_id: str = "", judge_model: str = ""
) -> JudgeVerdict:
    """Validate a raw judge reply into a JudgeVerdict.

    The `hallucinated` flag is normalised to `types != []`; a disagreement
    between the reported flag and the labels is recorded as a warning, not
    an error, because the labels carry the information the metrics need.
    """
    obj = _first_json_object(raw)
    warnings: list[str] = []

    if "hallucinated" not in obj or "types" not in obj:
        raise SchemaError('verdict must contain "hallucinated" and "types"')
    flag = obj["hallucinated"]
    if not isinstance(flag, bool):
        raise SchemaError('"hallucinated" must be a boolean')
    raw_types = obj["types"]
    if not isinstance(raw_types, list):
        raise SchemaError('"types" must be a list')
    types = {_coerce_label(t) for t in raw_types}

    spans: list[Span] = []
    raw_spans = obj.get("spans", [])
    if not isinstance(raw_spans, list):
        raise SchemaError('"spans" must be a list')
    for item in raw_spans:
        if not isinstance(item, dict) or "text" not in item:
            raise SchemaError('each span needs a "text" field')
        text = item["text"]
        if not isinstance(text, str) or not text:
            raise SchemaError('span "text" must be a non-empty string')
        if text not in caption:
            raise SpanNotInCaptionError(f"span not found in caption: {text!r}")
        span_types = {_coerce_label(t) for t in item.get("types", [])}
        spans.append(Span(text=text, types=_sorted_types(span_types)))

    span_union = {t for s in spans for t in s.types}
    if span_union - types:
        warnings.append("span labels extended the top-level type list")
        types |= span_union

    hallucinated = bool(types)
    if flag != hallucinated:
        warnings.append(
            f"reported hallucinated={flag} disagreed with types; normalised"
        )

    return JudgeVerdict(
        sample_id=sample_id,
        hallucinated=hallucinated,
        types=_sorted_types(types),
        spans=tuple(spans),
        judge_model=judge_model,
        raw_response=raw,
        warnings=tuple(warnings),
    )


# --------------------------------------------------------------------------
# judging
# --------------------------------------------------------------------------

def _reask_request(sample_id: str, prompt: str, previous_raw: str) -> AssembledRequest:
    return AssembledRequest(
        sample_id=sample_id,
        messages=(
            Message(role="user", parts=(Part(type="text", text=prompt),)),
            Message(role="assistant", parts=(Part(type="text", text=previous_raw),)),
            Message(role="user", parts=(Part(type="text", text=REASK_TEXT),)),
        ),
        decode_hint={"temperature": 0.0, "max_tokens": 512},
    )


def judge(
    caption: str,
    reference: str,
    sample_id: str,
    backend: GeneratorBackend,
    limits: BackendLimits = BackendLimits(),
    human_captions: tuple[str, ...] = (),
    judge_model: str = "",
) -> JudgeOutcome:
    """Judge one caption, re-asking once on a malformed reply. Backend
    failures and a second malformed reply make the sample unjudgeable."""
    prompt = build_judge_prompt(caption, reference, human_captions)
    model = judge_model or backend.name
    request = text_request(sample_id, prompt, {"temperature": 0.0, "max_tokens": 512})
    attempts = 0
    previous_raw = ""
    last_error = ""
    while attempts < 2:
        attempts += 1
        try:
            result: GenerationResult = generate(request, backend, limits)
        except BackendError as exc:
            return JudgeOutcome(
                sample_id=sample_id,
                verdict=None,
                unjudgeable_reason=f"judge backend error: {exc}",
                attempts=attempts,
            )
        try:
            verdict = parse_verdict(
                result.caption, caption, sample_id=sample_id, judge_model=model
            )
        except VerdictParseError as exc:
            previous_raw = result.caption
            last_error = f"{type(exc).__name__}: {exc}"
            request = _reask_request(sample_id, prompt, previous_raw)
            continue
        return JudgeOutcome(
            sample_id=sample_id, verdict=verdict, unjudgeable_reason=None, attempts=attempts
        )
    return JudgeOutcome(
        sample_id=sample_id,
        verdict=None,
        unjudgeable_reason=f"unparseable after re-ask: {last_error}",
        attempts=attempts,
    )
