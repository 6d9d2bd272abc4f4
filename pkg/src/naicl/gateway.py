"""Backend gateway for caption generation and judge calls.

Backends expose one method, `complete(request) -> str`. The gateway adds
retry-with-backoff around transient faults, batch execution with bounded
concurrency, and fail-soft error collection with an abort threshold so a
dead backend stops a run early instead of burning the whole batch.
"""
from __future__ import annotations

import base64
import json
import os
import threading
import time
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Protocol

import requests

from .context import AssembledRequest
from .errors import NaiclError


class BackendKind(str, Enum):
    HTTP_CHAT_AUDIO = "http_chat_audio"
    MOCK = "mock"


class BackendError(NaiclError):
    pass


class TransientBackendError(BackendError):
    """Retryable: connection faults, timeouts, 5xx responses."""


class PermanentBackendError(BackendError):
    """Not retryable: 4xx responses, malformed payloads, empty output."""


class BatchAbortError(BackendError):
    """Failure fraction crossed the abort threshold."""


@dataclass(frozen=True)
class BackendLimits:
    max_concurrency: int = 4
    timeout_s: float = 60.0
    retries: int = 2  # retries after the first attempt
    backoff_s: float = 0.5

    def __post_init__(self) -> None:
        if self.max_concurrency < 1:
            raise BackendError("max_concurrency must be >= 1")
        if self.retries < 0:
            raise BackendError("retries must be >= 0")


class GeneratorBackend(Protocol):
    name: str

    def complete(self, request: AssembledRequest) -> str: ...


@dataclass(frozen=True)
class GenerationResult:
    sample_id: str
    caption: str
    backend: str
    latency_ms: float
    attempt: int  # 1-based attempt that succeeded


@dataclass(frozen=True)
class GenerationFailure:
    sample_id: str
    error: str
    kind: str  # "transient_exhausted" | "permanent"
    attempts: int


@dataclass(frozen=True)
class BatchOutcome:
    results: tuple[GenerationResult, ...]  # input order, successes only
    failures: tuple[GenerationFailure, ...]  # input order

    @property
    def failure_fraction(self) -> float:
        total = len(self.results) + len(self.failures)
        return len(self.failures) / total if total else 0.0


# --------------------------------------------------------------------------
# backends
# --------------------------------------------------------------------------

class MockScript:
    """Scripted in-process backend for tests and offline dry runs.

    `responses` maps sample_id to either a string (returned on every call),
    or a list whose items are consumed one per call (the last item repeats
    once exhausted). An item that is an Exception instance is raised,
    which lets tests script transient faults and malformed replies.
    """

    name = "mock"

    def __init__(
        self,
        responses: dict[str, object] | None = None,
        default: str | None = "a steady background sound",
        delay_s: float = 0.0,
    ) -> None:
        self._responses = dict(responses or {})
        self._default = default
        self._delay_s = delay_s
        self._cursor: dict[str, int] = {}
        self._lock = threading.Lock()
        self.calls: list[str] = []
        self.in_flight = 0
        self.peak_in_flight = 0

    @classmethod
    def from_jsonl(cls, path: str | Path, **kwargs) -> "MockScript":
        """Load {"sample_id": ..., "caption": ...} lines as the script."""
        responses: dict[str, object] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                    sid, caption = row["sample_id"], row["caption"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise BackendError(f"{path}:{lineno}: bad script line ({exc})") from exc
                existing = responses.get(sid)
                if existing is None:
                    responses[sid] = caption
                elif isinstance(existing, list):
                    existing.append(caption)
                else:
                    responses[sid] = [existing, caption]
        return cls(responses=responses, **kwargs)

    def complete(self, request: AssembledRequest) -> str:
        with self._lock:
            self.calls.append(request.sample_id)
            self.in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
            item = self._next_item(request.sample_id)
        try:
            if self._delay_s:
                time.sleep(self._delay_s)
            if isinstance(item, Exception):
                raise item
            return str(item)
        finally:
            with self._lock:
                self.in_flight -= 1

    def _next_item(self, sample_id: str) -> object:
        value = self._responses.get(sample_id)
        if value is None:
            if self._default is None:
                raise PermanentBackendError(f"no scripted response for '{sample_id}'")
            return self._default
        if isinstance(value, list):
            if not value:
                raise PermanentBackendError(f"empty script for '{sample_id}'")
            i = self._cursor.get(sample_id, 0)
            item = value[min(i, len(value) - 1)]
            self._cursor[sample_id] = i + 1
            return item
        return value


class HttpChatAudioBackend:
    """POSTs chat-style requests with inline base64 audio to a JSON API."""

    def __init__(
        self,
        endpoint: str,
        model: str = "default",
        api_key_env: str = "NAICL_GENERATOR_KEY",
        timeout_s: float = 60.0,
    ) -> None:
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.timeout_s = timeout_s
        self.name = f"http:{self.endpoint}"

    def complete(self, request: AssembledRequest) -> str:
        payload = {
            "model": self.model,
            "messages": _wire_messages(request),
            "temperature": request.decode_hint.get("temperature", 0.0),
            "max_tokens": request.decode_hint.get("max_tokens", 256),
        }
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = requests.post(
                self.endpoint, json=payload, headers=headers, timeout=self.timeout_s
            )
        except requests.RequestException as exc:
            raise TransientBackendError(f"request failed: {exc}") from exc
        if resp.status_code >= 500:
            raise TransientBackendError(f"server error {resp.status_code}")
        if resp.status_code != 200:
            raise PermanentBackendError(
                f"backend rejected request: {resp.status_code} {resp.text[:200]}"
            )
        try:
            body = resp.json()
            caption = body["caption"]
        except (ValueError, KeyError, TypeError) as exc:
            raise PermanentBackendError(f"malformed backend response: {exc}") from exc
        if not isinstance(caption, str):
            raise PermanentBackendError("backend 'caption' field is not a string")
        return caption


def _wire_messages(request: AssembledRequest) -> list[dict]:
    messages = []
    for msg in request.messages:
        content = []
        for part in msg.parts:
            if part.type == "audio":
                data = Path(part.path).read_bytes()
                content.append(
                    {"type": "audio", "b64": base64.b64encode(data).decode("ascii")}
                )
            else:
                content.append({"type": "text", "text": part.text})
        messages.append({"role": msg.role, "content": content})
    return messages


# --------------------------------------------------------------------------
# retry + batch
# --------------------------------------------------------------------------

def generate(
    request: AssembledRequest,
    backend: GeneratorBackend,
    limits: BackendLimits = BackendLimits(),
    sleep=time.sleep,
) -> GenerationResult:
    """One request with retry. Transient faults back off exponentially;
    permanent faults and empty captions are raised immediately."""
    attempts = limits.retries + 1
    last_exc: Exception | None = None
    for attempt in range(1, attempts + 1):
        start = time.monotonic()
        try:
            raw = backend.complete(request)
        except TransientBackendError as exc:
            last_exc = exc
            if attempt < attempts:
                sleep(limits.backoff_s * (2 ** (attempt - 1)))
            continue
        caption = raw.strip()
        if not caption:
            raise PermanentBackendError("backend returned an empty caption")
        return GenerationResult(
            sample_id=request.sample_id,
            caption=caption,
            backend=backend.name,
            latency_ms=(time.monotonic() - start) * 1000.0,
            attempt=attempt,
        )
    raise TransientBackendError(
        f"gave up after {attempts} attempts: {last_exc}"
    ) from last_exc


def generate_batch(
    requests_in: list[AssembledRequest],
    backend: GeneratorBackend,
    limits: BackendLimits = BackendLimits(),
    concurrency: int = 1,
    abort_fraction: float = 0.1,
    audit_path: str | Path | None = None,
) -> BatchOutcome:
    """Run a batch, collecting per-request failures instead of raising,
    until failures exceed `abort_fraction` of the batch (strictly), at
    which point the whole batch aborts. Output order matches input order
    regardless of concurrency."""
    n = len(requests_in)
    if n == 0:
        return BatchOutcome(results=(), failures=())
    workers = max(1, min(concurrency, limits.max_concurrency))
    slots: list[GenerationResult | GenerationFailure | None] = [None] * n

    def run_one(i: int) -> int:
        try:
            slots[i] = generate(requests_in[i], backend, limits)
        except TransientBackendError as exc:
            slots[i] = GenerationFailure(
                sample_id=requests_in[i].sample_id,
                error=str(exc),
                kind="transient_exhausted",
                attempts=limits.retries + 1,
            )
        except PermanentBackendError as exc:
            slots[i] = GenerationFailure(
                sample_id=requests_in[i].sample_id,
                error=str(exc),
                kind="permanent",
                attempts=1,
            )
        return i

    failure_count = 0
    aborted = False
    with ThreadPoolExecutor(max_workers=workers) as pool:
        pending = {pool.submit(run_one, i) for i in range(n)}
        while pending:
            done, pending = wait(pending, return_when=FIRST_COMPLETED)
            for fut in done:
                i = fut.result()
                if isinstance(slots[i], GenerationFailure):
                    failure_count += 1
            if failure_count > abort_fraction * n:
                for fut in pending:
                    fut.cancel()
                aborted = True
                pending = set()
    if aborted:
        raise BatchAbortError(
            f"aborting batch: {failure_count}/{n} requests failed "
            f"(threshold {abort_fraction:.0%})"
        )

    results = tuple(s for s in slots if isinstance(s, GenerationResult))
    failures = tuple(s for s in slots if isinstance(s, GenerationFailure))
    if audit_path is not None:
        _write_audit(Path(audit_path), slots)
    return BatchOutcome(results=results, failures=failures)


def _write_audit(path: Path, slots: list) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for slot in slots:
            if isinstance(slot, GenerationResult):
                row = {
                    "sample_id": slot.sample_id,
                    "ok": True,
                    "attempt": slot.attempt,
                    "latency_ms": round(slot.latency_ms, 3),
                }
            elif isinstance(slot, GenerationFailure):
                row = {
                    "sample_id": slot.sample_id,
                    "ok": False,
                    "kind": slot.kind,
                    "error": slot.error,
                }
            else:
                continue
            fh.write(json.dumps(row, sort_keys=True) + "\n")
