"""Fixed-dimension unit-norm audio embeddings.

Two embedder kinds share one contract:

  * ``builtin_spectral`` -- offline log-mel statistics embedder (per-band
    mean and standard deviation pooled over frames, L2-normalized). Good
    enough to separate noise colors; needs no model weights.
  * ``external`` -- any HTTP service speaking the embedding protocol:
    POST WAV bytes to ``<endpoint>/embed``, receive
    ``{"dim": int, "values": [float, ...]}``.

Normalization always happens on this side, so downstream cosine
similarity reduces to a plain dot product. Whole-library embeddings are
persisted to a binary sidecar (one JSON header line, then row-major
little-endian float32) whose kind+dim tag prevents mixing embedders in
one index.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import requests

from .audio import read_wav
from .errors import NaiclError
from .noise import PriorLibrary

SIDECAR_NAME = "embeddings.f32"
UNIT_NORM_TOL = 1e-6


class EmbeddingError(NaiclError):
    pass


class DegenerateSignalError(EmbeddingError):
    """All-zero or too-short audio has no usable direction in embedding space."""


class EmbedderKind(str, Enum):
    BUILTIN = "builtin_spectral"
    EXTERNAL = "external"


@dataclass(frozen=True)
class EmbedderConfig:
    kind: EmbedderKind = EmbedderKind.BUILTIN
    mel_bands: int = 64
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    endpoint: str = ""
    expected_dim: int = 128
    timeout_s: float = 30.0
    retries: int = 2

    def __post_init__(self) -> None:
        if self.expected_dim <= 0:
            raise EmbeddingError("expected_dim must be positive")
        if self.kind == EmbedderKind.BUILTIN:
            if self.mel_bands <= 0 or self.frame_ms <= 0 or self.hop_ms <= 0:
                raise EmbeddingError("builtin embedder parameters must be positive")
        elif not self.endpoint:
            raise EmbeddingError("external embedder requires an endpoint")

    @property
    def tag(self) -> str:
        return f"{self.kind.value}:{self.expected_dim}"


@dataclass(frozen=True)
class Embedding:
    """Unit-norm finite vector; invariants checked at construction."""

    values: np.ndarray

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.values)):
            raise EmbeddingError("embedding contains non-finite values")
        norm = float(np.linalg.norm(self.values))
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise EmbeddingError(f"embedding is not unit-norm (|v| = {norm:.8f})")

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


def _unit(values: np.ndarray) -> Embedding:
    arr = np.asarray(values, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise EmbeddingError("embedding contains non-finite values")
    norm = float(np.linalg.norm(arr.astype(np.float64)))
    if norm == 0.0:
        raise DegenerateSignalError("degenerate signal: zero-norm embedding")
    return Embedding(values=(arr / np.float32(norm)).astype(np.float32))


# --------------------------------------------------------------------------
# builtin spectral embedder
# --------------------------------------------------------------------------

def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def _mel_filterbank(n_mels: int, n_fft: int, sample_rate_hz: int) -> np.ndarray:
    edges_mel = np.linspace(_hz_to_mel(0.0), _hz_to_mel(sample_rate_hz / 2.0), n_mels + 2)
    edges_hz = _mel_to_hz(edges_mel)
    bins = np.floor((n_fft + 1) * edges_hz / sample_rate_hz).astype(int)
    fb = np.zeros((n_mels, n_fft // 2 + 1))
    for m in range(1, n_mels + 1):
        left, center, right = bins[m - 1], bins[m], bins[m + 1]
        for k in range(left, center):
            fb[m - 1, k] = (k - left) / max(center - left, 1)
        for k in range(center, right):
            fb[m - 1, k] = (right - k) / max(right - center, 1)
    return fb


def _log_mel_frames(audio: np.ndarray, sample_rate_hz: int, cfg: EmbedderConfig) -> np.ndarray:
    frame_len = int(round(cfg.frame_ms / 1000.0 * sample_rate_hz))
    hop = int(round(cfg.hop_ms / 1000.0 * sample_rate_hz))
    if len(audio) < frame_len:
        raise DegenerateSignalError(
            f"audio shorter than one frame ({len(audio)} < {frame_len} samples)"
        )
    n_fft = 1
    while n_fft < frame_len:
        n_fft *= 2
    n_frames = 1 + (len(audio) - frame_len) // hop
    window = np.hanning(frame_len)
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = audio[idx] * window
    power = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2
    fb = _mel_filterbank(cfg.mel_bands, n_fft, sample_rate_hz)
    return np.log(power @ fb.T + 1e-10)


def embed_builtin(audio: np.ndarray, sample_rate_hz: int, cfg: EmbedderConfig | None = None) -> Embedding:
    """Log-mel statistics embedding: per-band mean ++ per-band std, unit-norm.

    Dimension is 2 * mel_bands (128 by default). Raises
    DegenerateSignalError for silent or too-short input.
    """
    cfg = cfg or EmbedderConfig()
    if cfg.kind != EmbedderKind.BUILTIN:
        raise EmbeddingError(f"embed_builtin called with kind={cfg.kind.value}")
    audio = np.asarray(audio, dtype=np.float64)
    if audio.size == 0 or float(np.max(np.abs(audio))) == 0.0:
        raise DegenerateSignalError("degenerate signal: empty or all-zero audio")
    mel = _log_mel_frames(audio, sample_rate_hz, cfg)
    pooled = np.concatenate([mel.mean(axis=0), mel.std(axis=0)])
    return _unit(pooled)


# --------------------------------------------------------------------------
# external embedder (HTTP protocol)
# --------------------------------------------------------------------------

def embed_external(audio_path: str | Path, cfg: EmbedderConfig) -> Embedding:
    """POST the WAV to the configured service and validate the reply."""
    if cfg.kind != EmbedderKind.EXTERNAL:
        raise EmbeddingError(f"embed_external called with kind={cfg.kind.value}")
    with open(audio_path, "rb") as fh:
        payload = fh.read()
    url = cfg.endpoint.rstrip("/") + "/embed"

    last_error: Exception | None = None
    for attempt in range(cfg.retries + 1):
        try:
            resp = requests.post(
                url,
                data=payload,
                headers={"Content-Type": "audio/wav"},
                timeout=cfg.timeout_s,
            )
        except requests.RequestException as exc:
            last_error = exc
            time.sleep(min(0.2 * 2**attempt, 2.0))
            continue
        if resp.status_code >= 500:
            last_error = EmbeddingError(f"embedding service error {resp.status_code}")
            time.sleep(min(0.2 * 2**attempt, 2.0))
            continue
        if resp.status_code != 200:
            raise EmbeddingError(
                f"embedding service rejected request: {resp.status_code} {resp.text[:200]}"
            )
        try:
            body = resp.json()
            dim = int(body["dim"])
            values = np.asarray(body["values"], dtype=np.float64)
        except (ValueError, KeyError, TypeError) as exc:
            raise EmbeddingError(f"malformed embedding response: {exc}") from exc
        if dim != cfg.expected_dim or values.shape != (cfg.expected_dim,):
            raise EmbeddingError(
                f"dimension mismatch: service returned {dim}, expected {cfg.expected_dim}"
            )
        if not np.all(np.isfinite(values)):
            raise EmbeddingError("embedding service returned non-finite values")
        return _unit(values)
    raise EmbeddingError(f"embedding service unreachable after {cfg.retries + 1} attempts: {last_error}")


def embed_clip(audio_path: str | Path, cfg: EmbedderConfig) -> Embedding:
    """Embed one audio file with whichever embedder the config selects."""
    if cfg.kind == EmbedderKind.BUILTIN:
        audio, sr = read_wav(audio_path)
        return embed_builtin(audio, sr, cfg)
    return embed_external(audio_path, cfg)


# --------------------------------------------------------------------------
# library embedding + sidecar persistence
# --------------------------------------------------------------------------

def write_sidecar(path: str | Path, kind_tag: str, matrix: np.ndarray) -> None:
    count, dim = matrix.shape
    header = json.dumps({"count": count, "dim": dim, "kind": kind_tag}, sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8") + b"\n")
        fh.write(matrix.astype("<f4").tobytes(order="C"))


def read_sidecar(path: str | Path) -> tuple[str, np.ndarray]:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        blob = fh.read()
    header = json.loads(header_line.decode("utf-8"))
    count, dim, kind = int(header["count"]), int(header["dim"]), str(header["kind"])
    matrix = np.frombuffer(blob, dtype="<f4")
    if matrix.size != count * dim:
        raise EmbeddingError(
            f"sidecar {path} is corrupt: expected {count * dim} floats, found {matrix.size}"
        )
    return kind, matrix.reshape(count, dim)


def sidecar_path_for(library: PriorLibrary) -> Path:
    return library.root / SIDECAR_NAME


def embed_library(library: PriorLibrary, cfg: EmbedderConfig | None = None) -> PriorLibrary:
    """Embed every entry and persist the sidecar next to the manifest.

    Any per-entry failure aborts the whole pass, naming the offending
    entry id; a half-embedded index is worse than none.
    """
    cfg = cfg or EmbedderConfig()
    rows: list[np.ndarray] = []
    for entry in library.entries:
        try:
            if cfg.kind == EmbedderKind.BUILTIN:
                audio, sr = read_wav(entry.audio_path)
                _check_entry_duration(entry, len(audio), sr)
                emb = embed_builtin(audio, sr, cfg)
            else:
                emb = embed_external(entry.audio_path, cfg)
        except Exception as exc:
            raise EmbeddingError(f"failed to embed library entry '{entry.id}': {exc}") from exc
        entry.embedding = emb.values
        rows.append(emb.values)

    dims = {row.shape[0] for row in rows}
    if len(dims) != 1:
        raise EmbeddingError(f"library embeddings have mixed dims: {sorted(dims)}")
    matrix = np.stack(rows).astype(np.float32)
    write_sidecar(sidecar_path_for(library), f"{cfg.kind.value}:{matrix.shape[1]}", matrix)
    return library


def _check_entry_duration(entry, n_samples: int, sample_rate_hz: int) -> None:
    # within one hop frame (10 ms) of the declared duration
    hop_s = 0.010
    actual = n_samples / sample_rate_hz
    if abs(actual - entry.spec.duration_s) > hop_s:
        raise EmbeddingError(
            f"entry '{entry.id}' audio duration {actual:.3f}s does not match "
            f"spec {entry.spec.duration_s:.3f}s"
        )


def attach_sidecar(library: PriorLibrary) -> tuple[PriorLibrary, str]:
    """Load sidecar vectors onto the library entries; returns the kind tag."""
    path = sidecar_path_for(library)
    if not path.exists():
        raise EmbeddingError(f"no embedding sidecar at {path}; run the embed step first")
    kind_tag, matrix = read_sidecar(path)
    if matrix.shape[0] != len(library.entries):
        raise EmbeddingError(
            f"sidecar row count {matrix.shape[0]} does not match "
            f"manifest entry count {len(library.entries)}"
        )
    for entry, row in zip(library.entries, matrix):
        entry.embedding = row
    return library, kind_tag
