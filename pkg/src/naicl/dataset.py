"""Benchmark manifest loading, validation, and dataset statistics.

A benchmark manifest is JSONL, one record per line:

    {"id": "...", "audio_path": "clips/x.wav",
     "original_captions": [5 strings], "reference": "...",
     "events": ["Speech", ...], "duration_s": 12.4}

Audio paths are relative to a configurable root (default: the manifest's
directory) so manifests stay portable across machines.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import NaiclError

REQUIRED_CAPTIONS = 5
DURATION_BIN_WIDTH_S = 5.0


class ManifestError(NaiclError):
    pass


@dataclass(frozen=True)
class BenchmarkRecord:
    id: str
    audio_path: Path
    original_captions: tuple[str, ...]
    reference: str
    events: tuple[str, ...]
    duration_s: float


def _validate_record(raw: dict, line_no: int, audio_root: Path) -> BenchmarkRecord:
    problems = []
    rid = raw.get("id")
    if not isinstance(rid, str) or not rid:
        problems.append("missing or empty 'id'")
    captions = raw.get("original_captions")
    if not isinstance(captions, list) or len(captions) != REQUIRED_CAPTIONS:
        problems.append(
            f"'original_captions' must be a list of exactly {REQUIRED_CAPTIONS} strings"
        )
    elif any(not isinstance(c, str) or not c.strip() for c in captions):
        problems.append("every original caption must be a non-empty string")
    reference = raw.get("reference")
    if not isinstance(reference, str) or not reference.strip():
        problems.append("missing or empty 'reference'")
    events = raw.get("events")
    if not isinstance(events, list) or not events or any(
        not isinstance(e, str) or not e for e in events
    ):
        problems.append("'events' must be a non-empty list of label strings")
    audio = raw.get("audio_path")
    if not isinstance(audio, str) or not audio:
        problems.append("missing or empty 'audio_path'")
    duration = raw.get("duration_s")
    if not isinstance(duration, (int, float)) or duration <= 0:
        problems.append("'duration_s' must be a positive number")
    if problems:
        raise ManifestError(f"line {line_no}: " + "; ".join(problems))
    return BenchmarkRecord(
        id=rid,
        audio_path=(audio_root / audio),
        original_captions=tuple(captions),
        reference=reference,
        events=tuple(events),
        duration_s=float(duration),
    )


def load_manifest(
    path: str | Path,
    audio_root: str | Path | None = None,
    verify_audio: bool = False,
) -> list[BenchmarkRecord]:
    """Load and validate every record; all line-level problems are reported
    together, with line numbers, before anything else runs."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    root = Path(audio_root) if audio_root is not None else path.parent
    records: list[BenchmarkRecord] = []
    errors: list[str] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                errors.append(f"line {line_no}: invalid JSON: {exc}")
                continue
            try:
                record = _validate_record(raw, line_no, root)
            except ManifestError as exc:
                errors.append(str(exc))
                continue
            if record.id in seen:
                raise ManifestError(
                    f"duplicate record id '{record.id}' at lines {seen[record.id]} and {line_no}"
                )
            seen[record.id] = line_no
            if verify_audio and not record.audio_path.exists():
                errors.append(f"line {line_no}: audio file not found: {record.audio_path}")
                continue
            records.append(record)
    if errors:
        raise ManifestError(
            f"{len(errors)} invalid record(s) in {path}:\n  " + "\n  ".join(errors)
        )
    if not records:
        raise ManifestError(f"manifest {path} contains no records")
    return records


def save_manifest(records: list[BenchmarkRecord], path: str | Path, audio_root: str | Path | None = None) -> None:
    path = Path(path)
    root = Path(audio_root) if audio_root is not None else path.parent
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            audio = r.audio_path
            try:
                audio = audio.relative_to(root)
            except ValueError:
                pass
            fh.write(
                json.dumps(
                    {
                        "id": r.id,
                        "audio_path": str(audio),
                        "original_captions": list(r.original_captions),
                        "reference": r.reference,
                        "events": list(r.events),
                        "duration_s": r.duration_s,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


@dataclass
class DatasetStats:
    duration_bins: dict[str, int] = field(default_factory=dict)
    event_count_hist: dict[int, int] = field(default_factory=dict)
    label_freq: dict[str, int] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "duration_bins": self.duration_bins,
            "event_count_hist": {str(k): v for k, v in sorted(self.event_count_hist.items())},
            "label_freq": dict(sorted(self.label_freq.items())),
        }


def _bin_label(duration_s: float) -> str:
    lo = int(duration_s // DURATION_BIN_WIDTH_S) * int(DURATION_BIN_WIDTH_S)
    return f"[{lo},{lo + int(DURATION_BIN_WIDTH_S)})"


def dataset_stats(records: list[BenchmarkRecord]) -> DatasetStats:
    """Duration histogram (5 s bins), per-record event-count histogram, and
    flat ontology label frequencies."""
    if not records:
        raise ManifestError("cannot compute stats over zero records")
    duration_bins: Counter = Counter(_bin_label(r.duration_s) for r in records)
    event_counts: Counter = Counter(len(r.events) for r in records)
    labels: Counter = Counter(label for r in records for label in r.events)
    return DatasetStats(
        duration_bins=dict(sorted(duration_bins.items(), key=lambda kv: int(kv[0][1:].split(",")[0]))),
        event_count_hist=dict(sorted(event_counts.items())),
        label_freq=dict(labels.most_common()),
    )
