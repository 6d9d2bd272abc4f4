"""Exact top-K cosine retrieval over the noise prior library.

The library is small (tens to hundreds of entries), so the index is a
plain matrix of unit-norm rows and every query is an exhaustive dot
product. Ties are broken by ascending entry id to keep ablations
reproducible. The index is immutable once built; concurrent queries
need no synchronization.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .embed import Embedding, attach_sidecar, UNIT_NORM_TOL
from .errors import NaiclError
from .noise import ConservativeDescription, NoisePriorEntry, PriorLibrary, load_library


class IndexError_(NaiclError):
    pass


class RetrievalError(NaiclError):
    pass


@dataclass(frozen=True)
class RetrievalHit:
    entry_id: str
    similarity: float
    description: ConservativeDescription
    audio_path: Path


@dataclass(frozen=True)
class RetrievalContext:
    """Ordered top-K exemplars for one query clip."""

    query_id: str
    hits: tuple[RetrievalHit, ...]
    k: int

    def __post_init__(self) -> None:
        if len(self.hits) != self.k:
            raise RetrievalError(f"context has {len(self.hits)} hits but k={self.k}")
        for a, b in zip(self.hits, self.hits[1:]):
            if b.similarity > a.similarity:
                raise RetrievalError("hits are not sorted by descending similarity")


@dataclass(frozen=True)
class PriorIndex:
    entries: tuple[NoisePriorEntry, ...]
    matrix: np.ndarray  # (count, dim) float32, rows unit-norm
    kind_tag: str

    @property
    def count(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    @cached_property
    def ids(self) -> np.ndarray:
        return np.array([e.id for e in self.entries])


def build_index(library: PriorLibrary, kind_tag: str = "") -> PriorIndex:
    """Stack the library's embeddings into a read-only index."""
    if not library.entries:
        raise IndexError_("cannot index an empty library")
    missing = [e.id for e in library.entries if e.embedding is None]
    if missing:
        raise IndexError_(f"entries missing embeddings: {', '.join(missing[:5])}")
    dims = {e.embedding.shape[0] for e in library.entries}
    if len(dims) != 1:
        raise IndexError_(f"mixed embedding dims in library: {sorted(dims)}")
    matrix = np.stack([e.embedding for e in library.entries]).astype(np.float32)
    norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-4)
    if bad.size:
        raise IndexError_(f"entry '{library.entries[bad[0]].id}' embedding is not unit-norm")
    return PriorIndex(entries=tuple(library.entries), matrix=matrix, kind_tag=kind_tag)


def load_index(lib_dir: str | Path) -> PriorIndex:
    """Manifest + sidecar -> index; the persisted form is exactly those two files."""
    library = load_library(lib_dir)
    library, kind_tag = attach_sidecar(library)
    return build_index(library, kind_tag=kind_tag)


def retrieve(query: Embedding, index: PriorIndex, k: int, query_id: str = "") -> RetrievalContext:
    """Exact top-k by dot product (rows are unit-norm, so dot == cosine).

    Ranking: similarity descending, ties by ascending entry id.
    """
    if not 1 <= k <= index.count:
        raise RetrievalError(f"k={k} out of range for index of {index.count} entries")
    q = np.asarray(query.values, dtype=np.float32)
    if q.shape[0] != index.dim:
        raise RetrievalError(f"query dim {q.shape[0]} != index dim {index.dim}")

    scores = (index.matrix @ q).astype(np.float64)
    # partial selection, then an exact (-score, id) sort over the candidate set;
    # every score tied with the kth largest is kept as a candidate so the id
    # tie rule can decide
    kth = np.partition(scores, index.count - k)[index.count - k]
    cand = np.flatnonzero(scores >= kth)
    order = np.lexsort((index.ids[cand], -scores[cand]))
    top = cand[order[:k]]

    hits = tuple(
        RetrievalHit(
            entry_id=index.entries[i].id,
            similarity=float(scores[i]),
            description=index.entries[i].description,
            audio_path=Path(index.entries[i].audio_path),
        )
        for i in top
    )
    return RetrievalContext(query_id=query_id, hits=hits, k=k)
