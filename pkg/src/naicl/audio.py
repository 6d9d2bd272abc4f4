"""Minimal WAV I/O: 16 kHz-ish mono PCM, 16-bit little-endian RIFF.

All audio in the toolchain moves through this one canonical format to
avoid resampling ambiguity between stages.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import NaiclError

INT16_FULL_SCALE = 32767.0


class AudioIOError(NaiclError):
    pass


def write_wav(path: str | Path, samples: np.ndarray, sample_rate_hz: int) -> None:
    """Write a float buffer in [-1, 1] as 16-bit PCM mono."""
    clipped = np.clip(samples, -1.0, 1.0)
    pcm = np.round(clipped * INT16_FULL_SCALE).astype(np.int16)
    wavfile.write(str(path), sample_rate_hz, pcm)


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a WAV file as (float64 mono buffer in [-1, 1], sample rate)."""
    try:
        sample_rate, data = wavfile.read(str(path))
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise AudioIOError(f"cannot decode WAV file {path}: {exc}") from exc
    if data.ndim > 1:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        buf = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        buf = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        buf = (data.astype(np.float64) - 128.0) / 128.0
    else:
        buf = data.astype(np.float64)
    return buf, int(sample_rate)
