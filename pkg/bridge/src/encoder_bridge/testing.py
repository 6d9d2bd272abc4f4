"""A tiny deterministic TorchScript encoder for tests and smoke runs.

It frames the waveform with a strided convolution (25 ms windows, 10 ms hop
at 16 kHz) and squashes with tanh, giving shape (1, frames, dim) — the same
contract a real acoustic encoder checkpoint must honour.
"""
from __future__ import annotations

from pathlib import Path

import torch


class _ToyEncoder(torch.nn.Module):
    def __init__(self, dim: int) -> None:
        super().__init__()
        self.conv = torch.nn.Conv1d(1, dim, kernel_size=400, stride=160)

    def forward(self, waveform: torch.Tensor) -> torch.Tensor:
        # waveform: (1, samples) -> (1, frames, dim)
        h = self.conv(waveform.unsqueeze(1))
        return torch.tanh(h).transpose(1, 2)


def save_toy_checkpoint(path: str | Path, dim: int = 128, seed: int = 7) -> Path:
    path = Path(path)
    torch.manual_seed(seed)
    model = _ToyEncoder(dim).eval()
    torch.jit.script(model).save(str(path))
    return path
