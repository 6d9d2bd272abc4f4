"""Broadband noise synthesis and the noise prior library.

Generates deterministic colored-noise clips (white / pink / brown /
band-limited) with optional amplitude envelopes, pairs each clip with a
conservative acoustics-level description, and persists the collection
as WAV files plus a JSONL manifest.

Synthesis notes:
  * white  -- i.i.d. Gaussian samples; flat spectrum (0 dB/octave).
  * pink   -- Voss-McCartney multi-row hold-and-sum; ~-3 dB/octave.
  * brown  -- integrated white noise with DC removal; ~-6 dB/octave.
  * band_limited -- white noise brick-wall filtered in the frequency
    domain; out-of-band rejection is limited only by measurement leakage.

Every generator is a pure function of the spec (seed included): calling
it twice yields bit-identical buffers.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .audio import write_wav
from .errors import NaiclError

DEFAULT_SAMPLE_RATE_HZ = 16000
DEFAULT_DURATION_S = 2.0
PEAK_LEVEL = 0.5  # full-scale headroom so pulsed envelopes never clip

MANIFEST_NAME = "manifest.jsonl"
WAV_SUBDIR = "wavs"

_VOSS_ROWS = 16
_FADE_FRACTION = 0.1   # of total length, each side
_PULSE_RATE_HZ = 4.0
_PULSE_DUTY = 0.5


class NoiseSpecError(NaiclError):
    pass


class LibraryError(NaiclError):
    pass


class NoiseColor(str, Enum):
    WHITE = "white"
    PINK = "pink"
    BROWN = "brown"
    BAND_LIMITED = "band_limited"


class Envelope(str, Enum):
    FLAT = "flat"
    FADE_IN_OUT = "fade_in_out"
    PULSED = "pulsed"


@dataclass(frozen=True)
class NoiseSpec:
    """Full recipe for one noise clip; the seed makes it reproducible."""

    color: NoiseColor
    duration_s: float = DEFAULT_DURATION_S
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE_HZ
    band: tuple[float, float] | None = None
    envelope: Envelope = Envelope.FLAT
    seed: int = 0

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise NoiseSpecError(f"duration_s must be > 0, got {self.duration_s}")
        if self.sample_rate_hz < 8000:
            raise NoiseSpecError(
                f"sample_rate_hz must be >= 8000, got {self.sample_rate_hz}"
            )
        if not 0 <= self.seed < 2**64:
            raise NoiseSpecError("seed must be a 64-bit unsigned integer")
        if self.color == NoiseColor.BAND_LIMITED:
            if self.band is None:
                raise NoiseSpecError("band_limited noise requires a (low_hz, high_hz) band")
            low, high = self.band
            if not (0 < low < high < self.sample_rate_hz / 2):
                raise NoiseSpecError(
                    f"band must satisfy 0 < low < high < sample_rate/2, got {self.band}"
                )
        elif self.band is not None:
            raise NoiseSpecError(f"band is only valid for band_limited noise, got color={self.color.value}")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate_hz))

    def to_dict(self) -> dict:
        return {
            "color": self.color.value,
            "duration_s": self.duration_s,
            "sample_rate_hz": self.sample_rate_hz,
            "band": list(self.band) if self.band is not None else None,
            "envelope": self.envelope.value,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        return cls(
            color=NoiseColor(d["color"]),
            duration_s=float(d["duration_s"]),
            sample_rate_hz=int(d["sample_rate_hz"]),
            band=tuple(d["band"]) if d.get("band") else None,
            envelope=Envelope(d["envelope"]),
            seed=int(d["seed"]),
        )


@dataclass(frozen=True)
class ConservativeDescription:
    """Acoustics-level caption for a noise clip.

    Deliberately avoids event verbs and entity assertions; both a
    templated and a free-form rendering are kept so prompt assembly can
    switch between them.
    """

    texture: str
    frequency_character: str
    temporal_pattern: str
    rendered_structured: str
    rendered_unstructured: str

    def rendered(self, structured: bool) -> str:
        return self.rendered_structured if structured else self.rendered_unstructured

    def to_dict(self) -> dict:
        return {
            "texture": self.texture,
            "frequency_character": self.frequency_character,
            "temporal_pattern": self.temporal_pattern,
            "rendered_structured": self.rendered_structured,
            "rendered_unstructured": self.rendered_unstructured,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConservativeDescription":
        return cls(
            texture=d["texture"],
            frequency_character=d["frequency_character"],
            temporal_pattern=d["temporal_pattern"],
            rendered_structured=d["rendered_structured"],
            rendered_unstructured=d["rendered_unstructured"],
        )


@dataclass
class NoisePriorEntry:
    """One (noise clip, conservative description) pair in the library."""

    id: str
    spec: NoiseSpec
    audio_path: Path
    description: ConservativeDescription
    embedding: np.ndarray | None = None

    def to_manifest_dict(self, root: Path) -> dict:
        return {
            "id": self.id,
            "spec": self.spec.to_dict(),
            "audio_path": str(self.audio_path.relative_to(root)),
            "description": self.description.to_dict(),
            "embedding": None,
        }


@dataclass
class PriorLibrary:
    """In-memory view of a library directory (manifest + WAVs + sidecar)."""

    root: Path
    entries: list[NoisePriorEntry] = field(default_factory=list)

    @property
    def manifest_path(self) -> Path:
        return self.root / MANIFEST_NAME

    def __len__(self) -> int:
        return len(self.entries)


# --------------------------------------------------------------------------
# synthesis
# --------------------------------------------------------------------------

def _white(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.standard_normal(n)


def _pink_voss(rng: np.random.Generator, n: int) -> np.ndarray:
    # Voss-McCartney: sum rows of held white noise, row k refreshing every
    # 2**k samples, plus a per-sample white row on top.
    total = np.zeros(n)
    for k in range(_VOSS_ROWS):
        step = 1 << k
        if step >= 2 * n:
            break
        values = rng.standard_normal((n + step - 1) // step)
        total += np.repeat(values, step)[:n]
    total += rng.standard_normal(n)
    return total


def _brown(rng: np.random.Generator, n: int) -> np.ndarray:
    walk = np.cumsum(rng.standard_normal(n))
    return walk - walk.mean()


def _band_limited(rng: np.random.Generator, n: int, sr: int, low: float, high: float) -> np.ndarray:
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, d=1.0 / sr)
    spectrum[(freqs < low) | (freqs > high)] = 0.0
    return np.fft.irfft(spectrum, n)


def _envelope(kind: Envelope, n: int, sr: int) -> np.ndarray:
    if kind == Envelope.FLAT:
        return np.ones(n)
    if kind == Envelope.FADE_IN_OUT:
        ramp = max(1, int(round(n * _FADE_FRACTION)))
        env = np.ones(n)
        fade = 0.5 * (1.0 - np.cos(np.pi * np.arange(ramp) / ramp))
        env[:ramp] = fade
        env[n - ramp:] = fade[::-1]
        return env
    # PULSED: raised-cosine bursts at a fixed rate
    t = np.arange(n) / sr
    phase = (t * _PULSE_RATE_HZ) % 1.0
    env = np.where(
        phase < _PULSE_DUTY,
        0.5 * (1.0 - np.cos(2.0 * np.pi * phase / _PULSE_DUTY)),
        0.0,
    )
    return env


def synthesize_noise(spec: NoiseSpec) -> np.ndarray:
    """Render the clip described by ``spec`` as float samples peaking at 0.5 FS.

    Deterministic: the same spec (seed included) always yields the same
    buffer bit for bit.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.n_samples
    if spec.color == NoiseColor.WHITE:
        x = _white(rng, n)
    elif spec.color == NoiseColor.PINK:
        x = _pink_voss(rng, n)
    elif spec.color == NoiseColor.BROWN:
        x = _brown(rng, n)
    else:
        low, high = spec.band  # type: ignore[misc]
        x = _band_limited(rng, n, spec.sample_rate_hz, low, high)
    x = x * _envelope(spec.envelope, n, spec.sample_rate_hz)
    peak = np.max(np.abs(x))
    if peak > 0:
        x = x * (PEAK_LEVEL / peak)
    return x


# --------------------------------------------------------------------------
# descriptions
# --------------------------------------------------------------------------

_TEXTURES = {
    NoiseColor.WHITE: "continuous background noise",
    NoiseColor.PINK: "soft broadband hiss",
    NoiseColor.BROWN: "rumbling low-frequency sound",
    NoiseColor.BAND_LIMITED: "narrow band of filtered static",
}

_FREQUENCY_CHARACTERS = {
    NoiseColor.WHITE: "energy spread evenly across the spectrum",
    NoiseColor.PINK: "energy tilted toward the lower frequencies",
    NoiseColor.BROWN: "a heavy low-frequency emphasis",
}

_TEMPORAL_PATTERNS = {
    Envelope.FLAT: "holding a steady level the whole time",
    Envelope.FADE_IN_OUT: "rising gradually and fading away at the end",
    Envelope.PULSED: "swelling and receding in a slow regular pattern",
}


def render_description(spec: NoiseSpec) -> ConservativeDescription:
    """Map a spec to its conservative description (pure, deterministic).

    Both renderings carry the same three phrases; the structured one
    follows the fixed "A <texture> with <frequency_character>,
    <temporal_pattern>." template.
    """
    texture = _TEXTURES[spec.color]
    if spec.color == NoiseColor.BAND_LIMITED:
        low, high = spec.band  # type: ignore[misc]
        freq_char = f"energy confined roughly between {int(low)} and {int(high)} Hz"
    else:
        freq_char = _FREQUENCY_CHARACTERS[spec.color]
    temporal = _TEMPORAL_PATTERNS[spec.envelope]

    structured = f"A {texture} with {freq_char}, {temporal}."
    unstructured = (
        f"The recording is a {texture}, {temporal}, and it carries {freq_char}."
    )
    return ConservativeDescription(
        texture=texture,
        frequency_character=freq_char,
        temporal_pattern=temporal,
        rendered_structured=structured,
        rendered_unstructured=unstructured,
    )


# --------------------------------------------------------------------------
# library construction
# --------------------------------------------------------------------------

def entry_id_for(spec: NoiseSpec) -> str:
    if spec.color == NoiseColor.BAND_LIMITED:
        low, high = spec.band  # type: ignore[misc]
        base = f"band{int(low)}to{int(high)}"
    else:
        base = spec.color.value
    return f"{base}_{spec.envelope.value}_s{spec.seed}"


def build_library(specs: list[NoiseSpec], out_dir: str | Path) -> PriorLibrary:
    """Synthesize every spec into ``out_dir`` and write the JSONL manifest.

    Embedding columns stay empty; `naicl.embed.embed_library` fills the
    sidecar afterwards.
    """
    if not specs:
        raise LibraryError("empty library: at least one noise spec is required")
    seeds = [s.seed for s in specs]
    if len(set(seeds)) != len(seeds):
        raise LibraryError("noise spec seeds must be distinct within a library")

    root = Path(out_dir)
    wav_dir = root / WAV_SUBDIR
    wav_dir.mkdir(parents=True, exist_ok=True)

    entries: list[NoisePriorEntry] = []
    seen: set[str] = set()
    for spec in specs:
        eid = entry_id_for(spec)
        if eid in seen:
            raise LibraryError(f"duplicate library entry id: {eid}")
        seen.add(eid)
        samples = synthesize_noise(spec)
        wav_path = wav_dir / f"{eid}.wav"
        write_wav(wav_path, samples, spec.sample_rate_hz)
        entries.append(
            NoisePriorEntry(
                id=eid,
                spec=spec,
                audio_path=wav_path,
                description=render_description(spec),
            )
        )

    library = PriorLibrary(root=root, entries=entries)
    with open(library.manifest_path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry.to_manifest_dict(root), sort_keys=True) + "\n")
    return library


def load_library(lib_dir: str | Path) -> PriorLibrary:
    """Read a manifest back; embeddings are attached separately from the sidecar."""
    root = Path(lib_dir)
    manifest = root / MANIFEST_NAME
    if not manifest.exists():
        raise LibraryError(f"no manifest found at {manifest}")
    entries: list[NoisePriorEntry] = []
    seen: set[str] = set()
    with open(manifest, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LibraryError(f"{manifest}:{line_no}: invalid JSON: {exc}") from exc
            eid = raw["id"]
            if eid in seen:
                raise LibraryError(f"{manifest}:{line_no}: duplicate entry id {eid}")
            seen.add(eid)
            entries.append(
                NoisePriorEntry(
                    id=eid,
                    spec=NoiseSpec.from_dict(raw["spec"]),
                    audio_path=root / raw["audio_path"],
                    description=ConservativeDescription.from_dict(raw["description"]),
                )
            )
    if not entries:
        raise LibraryError(f"manifest {manifest} contains no entries")
    return PriorLibrary(root=root, entries=entries)


# --------------------------------------------------------------------------
# recipes
# --------------------------------------------------------------------------

_RECIPE_BANDS = [
    (100.0, 400.0),
    (200.0, 800.0),
    (400.0, 1600.0),
    (800.0, 3200.0),
    (1600.0, 6400.0),
    (3000.0, 7000.0),
    (100.0, 1000.0),
    (1000.0, 4000.0),
]


def default_recipe(
    base_seed: int = 7,
    duration_s: float = DEFAULT_DURATION_S,
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE_HZ,
) -> list[NoiseSpec]:
    """50-entry default library: 3 true colors x 3 envelopes x 2 seeds (18)
    plus 8 bands x {flat, pulsed} x 2 seeds (32)."""
    specs: list[NoiseSpec] = []
    k = 0

    def next_seed() -> int:
        nonlocal k
        seed = base_seed * 1000 + k
        k += 1
        return seed

    for color in (NoiseColor.WHITE, NoiseColor.PINK, NoiseColor.BROWN):
        for env in (Envelope.FLAT, Envelope.FADE_IN_OUT, Envelope.PULSED):
            for _ in range(2):
                specs.append(
                    NoiseSpec(color=color, duration_s=duration_s,
                              sample_rate_hz=sample_rate_hz, envelope=env,
                              seed=next_seed())
                )
    nyquist = sample_rate_hz / 2
    for low, high in _RECIPE_BANDS:
        if high >= nyquist:
            high = math.floor(nyquist * 0.9)
        for env in (Envelope.FLAT, Envelope.PULSED):
            for _ in range(2):
                specs.append(
                    NoiseSpec(color=NoiseColor.BAND_LIMITED, duration_s=duration_s,
                              sample_rate_hz=sample_rate_hz, band=(low, float(high)),
                              envelope=env, seed=next_seed())
                )
    return specs


def mini_recipe(
    base_seed: int = 7,
    duration_s: float = DEFAULT_DURATION_S,
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE_HZ,
) -> list[NoiseSpec]:
    """8-entry library for demos and quick runs."""
    specs = []
    seeds = iter(range(base_seed * 1000, base_seed * 1000 + 8))
    for color in (NoiseColor.WHITE, NoiseColor.PINK, NoiseColor.BROWN):
        for env in (Envelope.FLAT, Envelope.PULSED):
            specs.append(NoiseSpec(color=color, duration_s=duration_s,
                                   sample_rate_hz=sample_rate_hz, envelope=env,
                                   seed=next(seeds)))
    for band in ((200.0, 800.0), (1000.0, 3000.0)):
        specs.append(NoiseSpec(color=NoiseColor.BAND_LIMITED, duration_s=duration_s,
                               sample_rate_hz=sample_rate_hz, band=band,
                               envelope=Envelope.FLAT, seed=next(seeds)))
    return specs


RECIPES = {"default": default_recipe, "mini": mini_recipe}
