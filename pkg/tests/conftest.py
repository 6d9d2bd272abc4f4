import json
from pathlib import Path

import numpy as np
import pytest
from jsonl_util import write_jsonl

from naicl.audio import write_wav
from naicl.dataset import BenchmarkRecord, save_manifest
from naicl.embed import embed_library
from naicl.noise import build_library, mini_recipe

# ids scripted to come back hallucinated: 3 of 10 -> headline rate 30.00%
HALLUCINATED_CAPTIONS = {
    "clip02": "a dog barks loudly nearby",
    "clip05": "someone is knocking on a door",
    "clip07": "rain falls while a car honks",
}


@pytest.fixture(scope="session")
def mini_library_dir(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("lib2s")
    library = build_library(mini_recipe(), root)
    embed_library(library)
    return root


@pytest.fixture(scope="session")
def library_10s_dir(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("lib10s")
    library = build_library(mini_recipe(duration_s=10.0), root)
    embed_library(library)
    return root


@pytest.fixture(scope="session")
def bench_dir(tmp_path_factory) -> Path:
    """10-sample benchmark with scripted generator and judge files."""
    root = tmp_path_factory.mktemp("bench")
    (root / "audio").mkdir()
    rng = np.random.default_rng(42)
    records = []
    for i in range(10):
        sid = f"clip{i:02d}"
        path = root / "audio" / f"{sid}.wav"
        write_wav(path, 0.3 * rng.standard_normal(16000), 16000)
        records.append(
            BenchmarkRecord(
                id=sid,
                audio_path=path,
                original_captions=tuple(f"human caption {j} for {sid}" for j in range(5)),
                reference=f"a steady ambient recording, take {i}",
                events=("ambience",),
                duration_s=1.0,
            )
        )
    save_manifest(records, root / "manifest.jsonl")

    gen_rows, judge_rows = [], []
    for i in range(10):
        sid = f"clip{i:02d}"
        caption = HALLUCINATED_CAPTIONS.get(sid, f"a low hum fills the room in take {i}")
        gen_rows.append({"sample_id": sid, "caption": caption})
        if sid in HALLUCINATED_CAPTIONS:
            verdict = {
                "hallucinated": True,
                "types": ["fabricated_event"],
                "spans": [{"text": caption, "types": ["fabricated_event"]}],
            }
        else:
            verdict = {"hallucinated": False, "types": [], "spans": []}
        judge_rows.append({"sample_id": sid, "caption": json.dumps(verdict)})
    write_jsonl(root / "gen.jsonl", gen_rows)
    write_jsonl(root / "judge.jsonl", judge_rows)
    return root
