"""Image pool: ids, embeddings, captions, and similarity-based lookups.

The pool file format is line-delimited JSON, one record per line:

    {"id": "img-1", "embedding": [0.1, ...], "caption": "...", "image_uri": "..."}

``caption`` and ``image_uri`` are optional. Embedding dimension must be
uniform across the file. Pools are immutable after construction and
safe to share across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .numerics import as_embedding


class PoolFormatError(ValueError):
    """Raised when a pool or dataset file fails to parse or validate."""


@dataclass(frozen=True, eq=False)
class ImageRecord:
    id: str
    embedding: np.ndarray
    caption: str | None = None
    image_uri: str | None = None


class ImagePool:
    """Ordered, immutable collection of image records.

    Iteration order is insertion order; every similarity tie in ranking
    breaks toward the earlier-inserted record, which keeps ranks
    deterministic.
    """

    def __init__(self, records):
        self._records: tuple[ImageRecord, ...] = tuple(records)
        seen: dict[str, int] = {}
        for i, rec in enumerate(self._records):
            if rec.id in seen:
                raise PoolFormatError(f"duplicate image id {rec.id!r}")
            seen[rec.id] = i
        self._index = seen
        if self._records:
            dims = {rec.embedding.size for rec in self._records}
            if len(dims) != 1:
                raise PoolFormatError(f"mixed embedding dimensions in pool: {sorted(dims)}")
            self.dimension = self._records[0].embedding.size
            matrix = np.stack([rec.embedding for rec in self._records])
            norms = np.linalg.norm(matrix, axis=1)
            if np.any(norms == 0):
                bad = self._records[int(np.flatnonzero(norms == 0)[0])].id
                raise PoolFormatError(f"record {bad!r} has a zero-norm embedding")
            self._matrix = matrix
            self._unit_matrix = matrix / norms[:, None]
        else:
            self.dimension = 0
            self._matrix = np.zeros((0, 0))
            self._unit_matrix = self._matrix

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    @property
    def records(self) -> tuple[ImageRecord, ...]:
        return self._records

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._index

    def get(self, image_id: str) -> ImageRecord:
        return self._records[self.index_of(image_id)]

    def index_of(self, image_id: str) -> int:
        """Insertion position of a record; the tie-break order for ranks."""
        try:
            return self._index[image_id]
        except KeyError:
            raise KeyError(f"unknown image id {image_id!r}") from None

    def similarities(self, query_embedding) -> np.ndarray:
        """Cosine similarity of the query against every pool record."""
        if not self._records:
            raise ValueError("pool is empty")
        query = as_embedding(query_embedding, dim=self.dimension)
        norm = float(np.linalg.norm(query))
        if norm == 0.0:
            raise ValueError("query embedding has zero norm")
        return self._unit_matrix @ (query / norm)


@dataclass(frozen=True)
class CandidateSet:
    """Top-n pool records for a query, in descending similarity order."""

    members: tuple[ImageRecord, ...]
    scores: tuple[float, ...]
    query_embedding: np.ndarray
    n: int

    def __len__(self) -> int:
        return len(self.members)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(rec.id for rec in self.members)

    def embedding_matrix(self) -> np.ndarray:
        return np.stack([rec.embedding for rec in self.members])


def default_candidate_count(pool_size: int) -> int:
    """Default n: about 1% of the pool, clamped to [1, pool size]."""
    if pool_size < 1:
        raise ValueError("pool must be non-empty")
    return min(max(math.ceil(0.01 * pool_size), 1), pool_size)


def top_n_candidates(query_embedding, pool: ImagePool, n: int) -> CandidateSet:
    """The n pool records most similar to the query, descending.

    Equivalent to iterating argmax-and-remove n times; ties break by
    pool insertion order. n past the pool size returns the whole pool.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    sims = pool.similarities(query_embedding)
    order = np.argsort(-sims, kind="stable")[: min(n, len(pool))]
    return CandidateSet(
        members=tuple(pool.records[i] for i in order),
        scores=tuple(float(sims[i]) for i in order),
        query_embedding=as_embedding(query_embedding),
        n=n,
    )


def rank_of_target(query_embedding, pool: ImagePool, target_id: str) -> int:
    """1-indexed rank of the target in the descending similarity order."""
    target_idx = pool.index_of(target_id)
    sims = pool.similarities(query_embedding)
    target_sim = sims[target_idx]
    ahead = int(np.sum(sims > target_sim))
    tied_earlier = int(np.sum(sims[:target_idx] == target_sim))
    return ahead + tied_earlier + 1


def _parse_record(obj, line_no: int, expected_dim: int | None) -> ImageRecord:
    if not isinstance(obj, dict):
        raise PoolFormatError(f"line {line_no}: expected an object, got {type(obj).__name__}")
    try:
        image_id = obj["id"]
        embedding = obj["embedding"]
    except KeyError as exc:
        raise PoolFormatError(f"line {line_no}: missing field {exc.args[0]!r}") from None
    if not isinstance(image_id, str) or not image_id:
        raise PoolFormatError(f"line {line_no}: id must be a non-empty string")
    try:
        vec = as_embedding(embedding, dim=expected_dim)
    except ValueError as exc:
        raise PoolFormatError(f"line {line_no}: {exc}") from None
    caption = obj.get("caption")
    image_uri = obj.get("image_uri")
    return ImageRecord(id=image_id, embedding=vec, caption=caption, image_uri=image_uri)


def load_pool(path) -> ImagePool:
    """Read a pool file; raises PoolFormatError with the offending line."""
    records: list[ImageRecord] = []
    dim: int | None = None
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise PoolFormatError(f"line {line_no}: invalid JSON ({exc.msg})") from None
            record = _parse_record(obj, line_no, dim)
            if dim is None:
                dim = record.embedding.size
            records.append(record)
    return ImagePool(records)


def save_pool(pool: ImagePool, path) -> None:
    """Write the pool in the line-delimited format; round-trips exactly."""
    with open(path, "w", encoding="utf-8") as handle:
        for rec in pool:
            obj = {"id": rec.id, "embedding": rec.embedding.tolist()}
            if rec.caption is not None:
                obj["caption"] = rec.caption
            if rec.image_uri is not None:
                obj["image_uri"] = rec.image_uri
            handle.write(json.dumps(obj, ensure_ascii=False) + "\n")
