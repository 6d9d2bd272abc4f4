"""Serve pooled features from a TorchScript acoustic encoder over HTTP.

The wire contract is intentionally tiny so any embedding client can use it:

* ``POST /embed`` with raw WAV bytes returns ``{"dim": D, "values": [...]}``
  where ``values`` are the frame-mean-pooled encoder features, raw and
  unnormalized — scaling and normalization are the caller's business.
* ``GET /health`` returns ``{"dim": D, "model_id": "..."}``.
* Undecodable or unusable audio is a 400; until the checkpoint has finished
  loading every request is a 503.

Audio is resampled bridge-side to the encoder's expected rate, and model
inference is serialized behind a lock, so one served checkpoint answers with
constant-dimension, deterministic vectors for identical input bytes.
"""
from __future__ import annotations

import io
import math
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import torch
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from scipy.io import wavfile
from scipy.signal import resample_poly

ENCODER_SAMPLE_RATE_HZ = 16_000
PROBE_SECONDS = 1.0


class BridgeError(Exception):
    pass


class ConfigError(BridgeError):
    pass


class AudioDecodeError(BridgeError):
    pass


class EncoderContractError(BridgeError):
    """The checkpoint does not behave like a frame-feature encoder."""


class Pooling(str, Enum):
    MEAN = "mean"


@dataclass(frozen=True)
class BridgeConfig:
    checkpoint: Path
    device: str = "cpu"
    pooling: Pooling = Pooling.MEAN
    port: int = 8601

    def __post_init__(self) -> None:
        object.__setattr__(self, "checkpoint", Path(self.checkpoint))
        try:
            object.__setattr__(self, "pooling", Pooling(self.pooling))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not self.checkpoint.is_file():
            raise ConfigError(f"checkpoint not found: {self.checkpoint}")
        if not 1024 <= self.port <= 65535:
            raise ConfigError(f"port must be in [1024, 65535], got {self.port}")


def _as_frame_features(out: torch.Tensor) -> torch.Tensor:
    """Coerce encoder output to (frames, dim)."""
    if not isinstance(out, torch.Tensor):
        raise EncoderContractError(
            f"encoder returned {type(out).__name__}, expected a tensor")
    if out.ndim == 1:
        return out.unsqueeze(0)
    if out.ndim == 2:
        return out
    if out.ndim == 3 and out.shape[0] == 1:
        return out.squeeze(0)
    raise EncoderContractError(
        f"unsupported encoder output shape {tuple(out.shape)}; "
        "expected (dim,), (frames, dim) or (1, frames, dim)")


class LoadedEncoder:
    """A TorchScript encoder in eval mode plus its probed output geometry.

    ``embed`` is serialized with a lock: the service promises deterministic
    answers, not throughput.
    """

    def __init__(self, model: torch.jit.ScriptModule, dim: int, model_id: str,
                 pooling: Pooling) -> None:
        self.model = model
        self.dim = dim
        self.model_id = model_id
        self.pooling = pooling
        self._lock = threading.Lock()

    @classmethod
    def load(cls, cfg: BridgeConfig) -> "LoadedEncoder":
        try:
            model = torch.jit.load(str(cfg.checkpoint), map_location=cfg.device)
        except Exception as exc:  # torch raises several unrelated types here
            raise BridgeError(f"cannot load checkpoint {cfg.checkpoint}: {exc}") from exc
        model.eval()
        probe = torch.zeros(1, int(ENCODER_SAMPLE_RATE_HZ * PROBE_SECONDS))
        with torch.no_grad():
            feats = _as_frame_features(model(probe))
        if feats.shape[0] < 1:
            raise EncoderContractError(
                "encoder produced no frames for a one-second probe")
        return cls(model, int(feats.shape[-1]), cfg.checkpoint.stem, cfg.pooling)

    def embed(self, waveform: np.ndarray) -> np.ndarray:
        x = torch.from_numpy(np.ascontiguousarray(waveform, dtype=np.float32))
        try:
            with self._lock, torch.no_grad():
                feats = _as_frame_features(self.model(x.unsqueeze(0)))
        except RuntimeError as exc:
            # the checkpoint passed its load-time probe, so a per-input
            # failure means this audio is unusable (usually: too short)
            reason = " ".join(str(exc).split())[:160]
            raise AudioDecodeError(
                f"audio too short or unusable for the encoder: {reason}") from exc
        if feats.shape[0] < 1:
            raise AudioDecodeError("audio too short for the encoder")
        if self.pooling is Pooling.MEAN:
            pooled = feats.mean(dim=0)
        else:  # pragma: no cover - single-member enum today
            raise EncoderContractError(f"unsupported pooling {self.pooling}")
        values = pooled.cpu().numpy().astype(np.float64)
        if not np.all(np.isfinite(values)):
            raise EncoderContractError("encoder produced non-finite features")
        return values


def decode_wav(data: bytes) -> np.ndarray:
    """WAV bytes -> mono float32 waveform at the encoder's sample rate."""
    try:
        rate, samples = wavfile.read(io.BytesIO(data))
    except Exception as exc:
        raise AudioDecodeError(f"undecodable WAV payload: {exc}") from exc
    x = np.asarray(samples)
    if x.size == 0:
        raise AudioDecodeError("WAV payload contains no samples")
    if x.ndim == 2:
        x = x.mean(axis=1)

    if x.dtype == np.int16:
        x = x.astype(np.float32) / 32768.0
    elif x.dtype == np.int32:
        x = x.astype(np.float32) / 2147483648.0
    elif x.dtype == np.uint8:
        x = (x.astype(np.float32) - 128.0) / 128.0
    else:
        x = x.astype(np.float32)

    if rate != ENCODER_SAMPLE_RATE_HZ:
        if rate <= 0:
            raise AudioDecodeError(f"invalid sample rate {rate}")
        g = math.gcd(int(rate), ENCODER_SAMPLE_RATE_HZ)
        x = resample_poly(x, ENCODER_SAMPLE_RATE_HZ // g, int(rate) // g)
        x = x.astype(np.float32)
    return x


def create_app(cfg: BridgeConfig, preload: bool = False) -> FastAPI:
    """Build the service; the encoder is attached by ``load_encoder``.

    With ``preload=False`` the app starts answering 503 immediately while the
    checkpoint loads (or before ``load_encoder`` is called at all).
    """
    app = FastAPI(title="encoder-bridge")
    app.state.config = cfg
    app.state.encoder = None
    app.state.load_error = None

    def _unavailable() -> JSONResponse:
        detail = "encoder not loaded yet"
        if app.state.load_error is not None:
            detail = f"encoder failed to load: {app.state.load_error}"
        return JSONResponse({"detail": detail}, status_code=503)

    @app.get("/health")
    def health():
        encoder: LoadedEncoder | None = app.state.encoder
        if encoder is None:
            return _unavailable()
        return {"dim": encoder.dim, "model_id": encoder.model_id}

    @app.post("/embed")
    async def embed(request: Request):
        encoder: LoadedEncoder | None = app.state.encoder
        if encoder is None:
            return _unavailable()
        body = await request.body()
        try:
            waveform = decode_wav(body)
            values = encoder.embed(waveform)
        except AudioDecodeError as exc:
            return JSONResponse({"detail": str(exc)}, status_code=400)
        except BridgeError as exc:
            return JSONResponse({"detail": str(exc)}, status_code=500)
        return {"dim": encoder.dim, "values": values.tolist()}

    if preload:
        load_encoder(app)
    return app


def load_encoder(app: FastAPI) -> None:
    """Attach the checkpoint to a created app; safe to call from a thread."""
    try:
        app.state.encoder = LoadedEncoder.load(app.state.config)
    except BridgeError as exc:
        app.state.load_error = exc
        raise


def serve_embeddings(cfg: BridgeConfig, host: str = "127.0.0.1") -> None:
    """Run the bridge until interrupted.

    The checkpoint loads in the background so the port is claimed at once;
    requests arriving before the load finishes are answered with 503.
    """
    import uvicorn

    app = create_app(cfg)

    def _load() -> None:
        try:
            load_encoder(app)
        except BridgeError:
            pass  # surfaced to clients via 503 with the load error

    threading.Thread(target=_load, name="encoder-load", daemon=True).start()
    uvicorn.run(app, host=host, port=cfg.port, log_level="warning")
