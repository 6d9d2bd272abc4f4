"""Scoring: hallucination rates from judge verdicts and keyword-frequency
measures over generated captions.

Keyword matching is token-based: captions and terms are lowercased and
split on non-alphanumerics, and a multi-word term matches only as a
contiguous token run. A caption counts once per vocabulary no matter how
many of its terms appear.
"""
from __future__ import annotations

import json
import re
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from functools import cache
from importlib import resources
from pathlib import Path

from .errors import NaiclError
from .judge import HallucinationType, JudgeVerdict

SCHEMA_VERSION = 1

_TOKEN_RE = re.compile(r"[a-z0-9]+")

_STEM_SUFFIXES = ("ing", "ed", "es", "s")
_STEM_MIN_ROOT = 3


class MetricsError(NaiclError):
    pass


class KeywordSetError(MetricsError):
    pass


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def light_stem(token: str) -> str:
    """Strip one common inflection suffix, keeping at least a 3-char root."""
    for suffix in _STEM_SUFFIXES:
        if token.endswith(suffix) and len(token) - len(suffix) >= _STEM_MIN_ROOT:
            return token[: -len(suffix)]
    return token


def _term_tokens(term: str, stem: bool) -> tuple[str, ...]:
    toks = tokenize(term)
    if stem:
        toks = [light_stem(t) for t in toks]
    return tuple(toks)


def _contains_run(tokens: list[str], run: tuple[str, ...]) -> bool:
    if not run:
        return False
    if len(run) == 1:
        return run[0] in tokens
    width = len(run)
    for i in range(len(tokens) - width + 1):
        if tuple(tokens[i : i + width]) == run:
            return True
    return False


def find_terms(
    text: str, terms: Iterable[str], stem: bool = False
) -> set[str]:
    """Return the subset of `terms` present in `text`."""
    tokens = tokenize(text)
    if stem:
        tokens = [light_stem(t) for t in tokens]
    found = set()
    for term in terms:
        if _contains_run(tokens, _term_tokens(term, stem)):
            found.add(term)
    return found


# --------------------------------------------------------------------------
# keyword vocabularies
# --------------------------------------------------------------------------

def load_terms(path: str | Path) -> frozenset[str]:
    """One term per line; '#' starts a comment; terms are lowercased and
    inner whitespace is collapsed. Multi-word terms are allowed."""
    terms: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            term = " ".join(text.lower().split())
            if not tokenize(term):
                raise KeywordSetError(f"{path}:{lineno}: term has no tokens: {text!r}")
            terms.add(term)
    if not terms:
        raise KeywordSetError(f"{path}: no terms found")
    return frozenset(terms)


@dataclass(frozen=True)
class KeywordSets:
    event: frozenset[str]
    definite: frozenset[str]
    acoustic: frozenset[str]

    def __post_init__(self) -> None:
        named = {"event": self.event, "definite": self.definite, "acoustic": self.acoustic}
        for name, terms in named.items():
            if not terms:
                raise KeywordSetError(f"{name} vocabulary is empty")
        pairs = [("event", "definite"), ("event", "acoustic"), ("definite", "acoustic")]
        for a, b in pairs:
            overlap = named[a] & named[b]
            if overlap:
                raise KeywordSetError(
                    f"{a} and {b} vocabularies overlap: {', '.join(sorted(overlap))}"
                )

    @classmethod
    def from_files(
        cls, event_path: str | Path, definite_path: str | Path, acoustic_path: str | Path
    ) -> "KeywordSets":
        return cls(
            event=load_terms(event_path),
            definite=load_terms(definite_path),
            acoustic=load_terms(acoustic_path),
        )

    @classmethod
    @cache
    def default(cls) -> "KeywordSets":
        data = resources.files("naicl").joinpath("data")
        return cls(
            event=load_terms(str(data.joinpath("keywords_event.txt"))),
            definite=load_terms(str(data.joinpath("keywords_definite.txt"))),
            acoustic=load_terms(str(data.joinpath("keywords_acoustic.txt"))),
        )

    def as_dict(self) -> dict[str, frozenset[str]]:
        return {"event": self.event, "definite": self.definite, "acoustic": self.acoustic}


def keyword_frequency(
    captions: Sequence[str], terms: frozenset[str], stem: bool = False
) -> float:
    """Fraction of captions containing at least one vocabulary term."""
    if not captions:
        raise MetricsError("keyword frequency needs at least one caption")
    hits = sum(1 for c in captions if find_terms(c, terms, stem=stem))
    return hits / len(captions)


# --------------------------------------------------------------------------
# verdict rates
# --------------------------------------------------------------------------

def hallucination_rate(verdicts: Sequence[JudgeVerdict]) -> float:
    """Percent of judged captions with at least one hallucination label."""
    if not verdicts:
        raise MetricsError("hallucination rate needs at least one judged verdict")
    flagged = sum(1 for v in verdicts if v.types)
    return 100.0 * flagged / len(verdicts)


def type_rates(verdicts: Sequence[JudgeVerdict]) -> dict[HallucinationType, float]:
    """Percent of judged captions carrying each label. Labels are not
    mutually exclusive, so these rates may sum past the headline rate."""
    if not verdicts:
        raise MetricsError("type rates need at least one judged verdict")
    rates = {}
    for t in HallucinationType:
        flagged = sum(1 for v in verdicts if t in v.types)
        rates[t] = 100.0 * flagged / len(verdicts)
    return rates


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

FREQ_KEYS = ("event", "definite", "acoustic")


@dataclass(frozen=True)
class EvaluationReport:
    run_id: str
    variant: str
    n_samples: int
    n_judged: int
    hr_percent: float
    type_rates_percent: dict[str, float]
    keyword_freq: dict[str, float]
    unjudgeable: int
    generation_failures: int
    config_snapshot: dict

    def to_json_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "variant": self.variant,
            "n_samples": self.n_samples,
            "n_judged": self.n_judged,
            "hr_percent": self.hr_percent,
            "type_rates_percent": dict(self.type_rates_percent),
            "keyword_freq": dict(self.keyword_freq),
            "unjudgeable": self.unjudgeable,
            "generation_failures": self.generation_failures,
            "config_snapshot": self.config_snapshot,
        }


def make_report(
    run_id: str,
    variant: str,
    n_samples: int,
    verdicts: Sequence[JudgeVerdict],
    captions: Sequence[str],
    keywords: KeywordSets,
    unjudgeable: int,
    generation_failures: int,
    config_snapshot: dict,
    stem: bool = False,
) -> EvaluationReport:
    """Assemble one run's report. Rates are in percent rounded to 2 places;
    keyword frequencies are fractions rounded to 4 places."""
    rates = type_rates(verdicts)
    return EvaluationReport(
        run_id=run_id,
        variant=variant,
        n_samples=n_samples,
        n_judged=len(verdicts),
        hr_percent=round(hallucination_rate(verdicts), 2),
        type_rates_percent={t.value: round(r, 2) for t, r in rates.items()},
        keyword_freq={
            key: round(keyword_frequency(captions, terms, stem=stem), 4)
            for key, terms in zip(FREQ_KEYS, (keywords.event, keywords.definite, keywords.acoustic))
        },
        unjudgeable=unjudgeable,
        generation_failures=generation_failures,
        config_snapshot=config_snapshot,
    )


def render_report_json(reports: Sequence[EvaluationReport]) -> str:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "runs": [r.to_json_dict() for r in reports],
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


_MD_COLUMNS = (
    ("HR (%)", lambda r: f"{r.hr_percent:.2f}"),
    ("Acoustic Attribute (%)", lambda r: f"{r.type_rates_percent['acoustic_attribute']:.2f}"),
    ("Source (%)", lambda r: f"{r.type_rates_percent['source_material']:.2f}"),
    ("Prior-Driven (%)", lambda r: f"{r.type_rates_percent['prior_driven']:.2f}"),
    ("Fabricated (%)", lambda r: f"{r.type_rates_percent['fabricated_event']:.2f}"),
    ("Event", lambda r: f"{r.keyword_freq['event']:.4f}"),
    ("Definite", lambda r: f"{r.keyword_freq['definite']:.4f}"),
    ("Acoustic", lambda r: f"{r.keyword_freq['acoustic']:.4f}"),
)


def render_report_md(reports: Sequence[EvaluationReport], title: str = "Evaluation report") -> str:
    """Markdown table, one row per run, judged-rate columns first and
    keyword-frequency columns after."""
    header = ["Run", "Variant", "N"] + [name for name, _ in _MD_COLUMNS]
    lines = [f"# {title}", ""]
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "|".join([" --- "] * len(header)) + "|")
    for r in reports:
        row = [r.run_id, r.variant, str(r.n_judged)]
        row.extend(fmt(r) for _, fmt in _MD_COLUMNS)
        lines.append("| " + " | ".join(row) + " |")
    lines.append("")
    for r in reports:
        if r.unjudgeable or r.generation_failures:
            lines.append(
                f"- `{r.run_id}`: {r.unjudgeable} unjudgeable, "
                f"{r.generation_failures} generation failures "
                f"(of {r.n_samples} samples)."
            )
    return "\n".join(lines).rstrip() + "\n"
