import json

import numpy as np
import pytest

import oracles
from naicl.noise import (
    Envelope,
    LibraryError,
    NoiseColor,
    NoiseSpec,
    NoiseSpecError,
    PEAK_LEVEL,
    build_library,
    default_recipe,
    entry_id_for,
    load_library,
    mini_recipe,
    render_description,
    synthesize_noise,
)


class TestNoiseSpec:
    def test_defaults(self):
        spec = NoiseSpec(color=NoiseColor.WHITE, seed=1)
        assert spec.duration_s == 2.0
        assert spec.sample_rate_hz == 16000
        assert spec.n_samples == 32000

    def test_rejects_bad_duration(self):
        with pytest.raises(NoiseSpecError):
            NoiseSpec(color=NoiseColor.WHITE, seed=1, duration_s=0.0)

    def test_rejects_low_sample_rate(self):
        with pytest.raises(NoiseSpecError):
            NoiseSpec(color=NoiseColor.WHITE, seed=1, sample_rate_hz=4000)

    def test_band_required_iff_band_limited(self):
        with pytest.raises(NoiseSpecError):
            NoiseSpec(color=NoiseColor.BAND_LIMITED, seed=1)
        with pytest.raises(NoiseSpecError):
            NoiseSpec(color=NoiseColor.WHITE, seed=1, band=(100.0, 200.0))

    def test_band_edges_validated(self):
        with pytest.raises(NoiseSpecError):
            NoiseSpec(color=NoiseColor.BAND_LIMITED, seed=1, band=(2000.0, 500.0))
        with pytest.raises(NoiseSpecError):
            # upper edge at/above Nyquist
            NoiseSpec(color=NoiseColor.BAND_LIMITED, seed=1, band=(500.0, 8000.0))

    def test_seed_range(self):
        with pytest.raises(NoiseSpecError):
            NoiseSpec(color=NoiseColor.WHITE, seed=-1)
        with pytest.raises(NoiseSpecError):
            NoiseSpec(color=NoiseColor.WHITE, seed=2**64)

    def test_dict_round_trip(self):
        spec = NoiseSpec(
            color=NoiseColor.BAND_LIMITED, seed=9, band=(300.0, 1200.0),
            envelope=Envelope.PULSED,
        )
        assert NoiseSpec.from_dict(spec.to_dict()) == spec


class TestSynthesis:
    def test_deterministic(self):
        spec = NoiseSpec(color=NoiseColor.PINK, seed=5)
        a = synthesize_noise(spec)
        b = synthesize_noise(spec)
        np.testing.assert_array_equal(a, b)

    def test_seed_changes_signal(self):
        a = synthesize_noise(NoiseSpec(color=NoiseColor.PINK, seed=5))
        b = synthesize_noise(NoiseSpec(color=NoiseColor.PINK, seed=6))
        assert not np.array_equal(a, b)

    def test_peak_level(self):
        for color in (NoiseColor.WHITE, NoiseColor.PINK, NoiseColor.BROWN):
            x = synthesize_noise(NoiseSpec(color=color, seed=3))
            assert np.max(np.abs(x)) == pytest.approx(PEAK_LEVEL, rel=1e-9)

    def test_length(self):
        x = synthesize_noise(NoiseSpec(color=NoiseColor.WHITE, seed=3, duration_s=1.25))
        assert x.shape == (20000,)

    def test_fade_envelope_quiet_at_edges(self):
        x = synthesize_noise(
            NoiseSpec(color=NoiseColor.WHITE, seed=3, envelope=Envelope.FADE_IN_OUT)
        )
        n = x.shape[0]
        edge = np.abs(x[: n // 100]).max()
        middle = np.abs(x[n // 3: 2 * n // 3]).max()
        assert edge < 0.2 * middle

    def test_pulsed_envelope_has_troughs(self):
        x = synthesize_noise(
            NoiseSpec(color=NoiseColor.WHITE, seed=3, envelope=Envelope.PULSED)
        )
        # 4 Hz bursts at 50% duty: a full off window exists within any 250 ms
        frame = np.abs(x[:32000]).reshape(-1, 400).max(axis=1)
        assert frame.min() < 1e-6
        assert frame.max() == pytest.approx(PEAK_LEVEL, rel=1e-6)

    def test_slope_spot_checks(self):
        targets = {NoiseColor.WHITE: 0.0, NoiseColor.PINK: -3.0, NoiseColor.BROWN: -6.0}
        for color, target in targets.items():
            for seed in (11, 12, 13):
                x = synthesize_noise(NoiseSpec(color=color, seed=seed))
                slope = oracles.fit_slope_db_per_octave(x, 16000)
                assert abs(slope - target) <= 1.0, (color, seed, slope)

    def test_band_limited_rejection_spot_check(self):
        spec = NoiseSpec(color=NoiseColor.BAND_LIMITED, seed=8, band=(500.0, 2000.0))
        x = synthesize_noise(spec)
        assert oracles.band_rejection_db(x, 16000, 500.0, 2000.0) >= 30.0


class TestDescriptions:
    def test_structured_and_unstructured_differ(self):
        desc = render_description(NoiseSpec(color=NoiseColor.PINK, seed=1))
        assert desc.rendered(True) != desc.rendered(False)
        assert desc.rendered(True) == desc.rendered_structured

    def test_band_description_names_edges(self):
        desc = render_description(
            NoiseSpec(color=NoiseColor.BAND_LIMITED, seed=1, band=(300.0, 1200.0))
        )
        assert "300" in desc.rendered(True) and "1200" in desc.rendered(True)

    def test_same_spec_same_description(self):
        spec = NoiseSpec(color=NoiseColor.BROWN, seed=1, envelope=Envelope.PULSED)
        assert render_description(spec) == render_description(spec)


class TestLibrary:
    def test_build_and_load_round_trip(self, tmp_path):
        specs = mini_recipe()
        lib = build_library(specs, tmp_path / "lib")
        loaded = load_library(tmp_path / "lib")
        assert [e.id for e in loaded.entries] == [e.id for e in lib.entries]
        assert [e.spec for e in loaded.entries] == specs
        for e in loaded.entries:
            assert e.audio_path.exists()

    def test_manifest_is_sorted_json(self, tmp_path):
        build_library(mini_recipe(), tmp_path / "lib")
        lines = (tmp_path / "lib" / "manifest.jsonl").read_text().splitlines()
        assert len(lines) == 8
        for line in lines:
            row = json.loads(line)
            assert list(row) == sorted(row)

    def test_empty_specs_rejected(self, tmp_path):
        with pytest.raises(LibraryError):
            build_library([], tmp_path / "lib")

    def test_duplicate_spec_rejected(self, tmp_path):
        spec = NoiseSpec(color=NoiseColor.WHITE, seed=1)
        with pytest.raises(LibraryError):
            build_library([spec, spec], tmp_path / "lib")

    def test_entry_id_format(self):
        spec = NoiseSpec(color=NoiseColor.PINK, seed=42, envelope=Envelope.PULSED)
        assert entry_id_for(spec) == "pink_pulsed_s42"

    def test_recipe_sizes(self):
        assert len(default_recipe()) == 50
        assert len(mini_recipe()) == 8

    def test_recipe_seeds_unique(self):
        specs = default_recipe()
        seeds = [s.seed for s in specs]
        assert len(set(seeds)) == len(seeds)

    def test_recipe_duration_honored(self):
        for spec in mini_recipe(duration_s=10.0):
            assert spec.duration_s == 10.0
