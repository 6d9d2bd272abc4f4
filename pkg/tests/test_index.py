from pathlib import Path

import numpy as np
import pytest

import oracles
from naicl.embed import Embedding
from naicl.index import (
    IndexError_,
    PriorIndex,
    RetrievalContext,
    RetrievalError,
    RetrievalHit,
    build_index,
    load_index,
    retrieve,
)
from naicl.noise import (
    NoiseColor,
    NoiseSpec,
    NoisePriorEntry,
    load_library,
    render_description,
)

_SPEC = NoiseSpec(color=NoiseColor.WHITE, seed=0)
_DESC = render_description(_SPEC)


def make_index(matrix: np.ndarray, ids: list[str]) -> PriorIndex:
    entries = tuple(
        NoisePriorEntry(
            id=ids[i], spec=_SPEC, audio_path=Path(f"{ids[i]}.wav"),
            description=_DESC, embedding=matrix[i],
        )
        for i in range(matrix.shape[0])
    )
    return PriorIndex(entries=entries, matrix=matrix, kind_tag="test:%d" % matrix.shape[1])


def unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    m = rng.standard_normal((n, dim))
    m /= np.linalg.norm(m, axis=1, keepdims=True)
    return m.astype(np.float32)


def unit_query(rng: np.random.Generator, dim: int) -> Embedding:
    q = rng.standard_normal(dim)
    return Embedding(values=(q / np.linalg.norm(q)).astype(np.float32))


class TestBuildIndex:
    def test_round_trip_from_disk(self, mini_library_dir):
        index = load_index(mini_library_dir)
        assert index.count == 8
        assert index.dim == 128
        assert index.kind_tag == "builtin_spectral:128"

    def test_empty_library_rejected(self, mini_library_dir):
        library = load_library(mini_library_dir)
        object.__setattr__(library, "entries", [])
        with pytest.raises(IndexError_):
            build_index(library)

    def test_missing_embeddings_named(self, mini_library_dir):
        library = load_library(mini_library_dir)  # no sidecar attached
        with pytest.raises(IndexError_, match=library.entries[0].id):
            build_index(library)

    def test_non_unit_rows_rejected(self, mini_library_dir):
        from naicl.embed import attach_sidecar

        library, tag = attach_sidecar(load_library(mini_library_dir))
        library.entries[2].embedding = library.entries[2].embedding * 3.0
        with pytest.raises(IndexError_, match="unit-norm"):
            build_index(library, kind_tag=tag)


class TestRetrieve:
    def test_known_ranking(self):
        matrix = np.eye(4, dtype=np.float32)
        index = make_index(matrix, ["a", "b", "c", "d"])
        q = np.array([0.9, 0.1, 0.0, 0.0])
        q /= np.linalg.norm(q)
        ctx = retrieve(Embedding(values=q.astype(np.float32)), index, k=2, query_id="q1")
        assert [h.entry_id for h in ctx.hits] == ["a", "b"]
        assert ctx.query_id == "q1"
        assert ctx.hits[0].similarity > ctx.hits[1].similarity

    def test_tie_broken_by_ascending_id(self):
        row = np.zeros(4, dtype=np.float32)
        row[0] = 1.0
        matrix = np.stack([row, row, row])
        index = make_index(matrix, ["zebra", "apple", "mango"])
        q = Embedding(values=row)
        ctx = retrieve(q, index, k=3)
        assert [h.entry_id for h in ctx.hits] == ["apple", "mango", "zebra"]

    def test_tie_at_kth_boundary(self):
        # two identical rows straddle the k boundary; the smaller id wins
        e0 = np.array([1.0, 0, 0, 0], dtype=np.float32)
        tied = np.array([0, 1.0, 0, 0], dtype=np.float32)
        matrix = np.stack([e0, tied, tied])
        index = make_index(matrix, ["top", "z_tied", "a_tied"])
        q = np.array([0.8, 0.6, 0, 0], dtype=np.float32)
        ctx = retrieve(Embedding(values=q), index, k=2)
        assert [h.entry_id for h in ctx.hits] == ["top", "a_tied"]

    def test_k_out_of_range(self):
        index = make_index(unit_rows(np.random.default_rng(0), 4, 8), list("abcd"))
        q = unit_query(np.random.default_rng(1), 8)
        with pytest.raises(RetrievalError):
            retrieve(q, index, k=0)
        with pytest.raises(RetrievalError):
            retrieve(q, index, k=5)

    def test_dim_mismatch(self):
        index = make_index(unit_rows(np.random.default_rng(0), 4, 8), list("abcd"))
        q = unit_query(np.random.default_rng(1), 16)
        with pytest.raises(RetrievalError, match="dim"):
            retrieve(q, index, k=1)

    def test_agrees_with_full_sort_oracle(self):
        rng = np.random.default_rng(7)
        for trial in range(20):
            n = int(rng.integers(5, 200))
            matrix = unit_rows(rng, n, 16)
            # plant duplicates so ties actually occur
            for _ in range(n // 10):
                i, j = rng.integers(0, n, size=2)
                matrix[i] = matrix[j]
            ids = [f"e{i:04d}" for i in rng.permutation(n)]
            index = make_index(matrix, ids)
            for _ in range(10):
                q = unit_query(rng, 16)
                k = int(rng.integers(1, min(6, n + 1)))
                got = retrieve(q, index, k=k)
                want = oracles.topk_full_sort(matrix, ids, np.asarray(q.values), k)
                assert [h.entry_id for h in got.hits] == [w[0] for w in want]


class TestRetrievalContext:
    def test_hit_count_must_match_k(self):
        hit = RetrievalHit(entry_id="a", similarity=1.0, description=_DESC, audio_path=Path("a.wav"))
        with pytest.raises(RetrievalError):
            RetrievalContext(query_id="q", hits=(hit,), k=2)

    def test_order_must_be_descending(self):
        h1 = RetrievalHit(entry_id="a", similarity=0.1, description=_DESC, audio_path=Path("a.wav"))
        h2 = RetrievalHit(entry_id="b", similarity=0.9, description=_DESC, audio_path=Path("b.wav"))
        with pytest.raises(RetrievalError):
            RetrievalContext(query_id="q", hits=(h1, h2), k=2)
