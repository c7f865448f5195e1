"""Numeric kernels shared by the retrieval pipeline.

Everything here is a pure function over immutable inputs: cosine
similarity, stable softmax, entropy and KL divergence in nats, and a
seeded k-means (k-means++ initialization, Lloyd's iterations, restarts).
Distributions are represented by :class:`SimilarityDistribution`, which
validates itself on construction so downstream code never re-checks.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

# Sum-to-one slack accepted when validating a probability vector.
DISTRIBUTION_TOLERANCE = 1e-9


def derive_seed(*parts) -> int:
    """Stable 63-bit seed derived from the given parts.

    Uses sha256 of the repr-joined parts, so it is reproducible across
    processes and platforms (unlike the built-in ``hash``).
    """
    blob = "\x1f".join(repr(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big") >> 1


def as_embedding(values, dim: int | None = None) -> np.ndarray:
    """Coerce ``values`` to a 1-D float64 vector, checking finiteness."""
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1:
        raise ValueError(f"embedding must be 1-D, got shape {vec.shape}")
    if vec.size == 0:
        raise ValueError("embedding must be non-empty")
    if not np.all(np.isfinite(vec)):
        raise ValueError("embedding contains non-finite entries")
    if dim is not None and vec.size != dim:
        raise ValueError(f"embedding dimension {vec.size} != expected {dim}")
    return vec


def l2_normalize(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return vec / norm


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors, in [-1, 1].

    Raises ValueError on dimension mismatch or a zero-norm input.
    """
    va = as_embedding(a)
    vb = as_embedding(b)
    if va.size != vb.size:
        raise ValueError(f"dimension mismatch: {va.size} vs {vb.size}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for zero-norm vector")
    sim = float(np.dot(va, vb) / (na * nb))
    # Rounding can push |sim| just past 1 for near-parallel vectors.
    return max(-1.0, min(1.0, sim))


@dataclass(frozen=True)
class SimilarityDistribution:
    """A probability vector over an ordered set of candidate ids.

    Invariants (checked on construction): probs >= 0, sum(probs) = 1
    within ``DISTRIBUTION_TOLERANCE``, len(probs) == len(candidate_ids).
    """

    probs: np.ndarray
    candidate_ids: tuple = field(default=())

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 1 or probs.size == 0:
            raise ValueError("distribution must be a non-empty 1-D vector")
        if not np.all(np.isfinite(probs)):
            raise ValueError("distribution contains non-finite entries")
        if np.any(probs < 0):
            raise ValueError("distribution contains negative probabilities")
        total = float(probs.sum())
        if abs(total - 1.0) > DISTRIBUTION_TOLERANCE:
            raise ValueError(f"distribution sums to {total!r}, not 1")
        ids = self.candidate_ids
        if not ids:
            ids = tuple(range(probs.size))
            object.__setattr__(self, "candidate_ids", ids)
        elif len(ids) != probs.size:
            raise ValueError("candidate_ids length != probs length")

    def __len__(self) -> int:
        return int(self.probs.size)


def softmax_distribution(sims, temperature: float = 1.0,
                         candidate_ids: tuple = ()) -> SimilarityDistribution:
    """Softmax of ``sims`` at the given temperature.

    probs_i = exp(sims_i / T) / sum_j exp(sims_j / T), computed with
    max-subtraction so large scores cannot overflow. T defaults to 1,
    which is the plain softmax over raw similarity scores.
    """
    scores = np.asarray(sims, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise ValueError("softmax input must be a non-empty 1-D vector")
    if not np.all(np.isfinite(scores)):
        raise ValueError("softmax input contains non-finite entries")
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    scaled = scores / float(temperature)
    shifted = scaled - scaled.max()
    weights = np.exp(shifted)
    probs = weights / weights.sum()
    return SimilarityDistribution(probs=probs, candidate_ids=candidate_ids)


def entropy(dist: SimilarityDistribution) -> float:
    """Shannon entropy in nats, with 0*ln(0) taken as 0."""
    p = dist.probs
    nz = p[p > 0]
    h = float(-np.sum(nz * np.log(nz)))
    return max(h, 0.0)


def kl_divergence(p: SimilarityDistribution, q: SimilarityDistribution) -> float:
    """KL(p || q) in nats over a shared candidate index set.

    Terms with p_i = 0 contribute nothing; a q_i = 0 where p_i > 0
    yields +inf (softmax outputs are strictly positive, so pipeline
    callers never hit that branch).
    """
    if p.candidate_ids != q.candidate_ids:
        raise ValueError("KL divergence requires identical candidate index sets")
    mask = p.probs > 0
    pk = p.probs[mask]
    qk = q.probs[mask]
    if np.any(qk == 0):
        return float("inf")
    return float(np.sum(pk * np.log(pk / qk)))


def _kmeans_plusplus(points: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread initial centroids by D^2 sampling."""
    n = points.shape[0]
    centroids = np.empty((m, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = points[first]
    closest_sq = np.sum((points - centroids[0]) ** 2, axis=1)
    for i in range(1, m):
        total = float(closest_sq.sum())
        if total == 0.0:
            # All remaining points coincide with a chosen centroid.
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest_sq / total))
        centroids[i] = points[idx]
        dist_sq = np.sum((points - centroids[i]) ** 2, axis=1)
        closest_sq = np.minimum(closest_sq, dist_sq)
    return centroids


def _assign(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # Squared Euclidean distances; argmin ties resolve to the lowest cluster id.
    d2 = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    return np.argmin(d2, axis=1)


def _sse(points: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    return float(np.sum((points - centroids[labels]) ** 2))


def _lloyd(points: np.ndarray, centroids: np.ndarray, max_iter: int) -> tuple[np.ndarray, np.ndarray]:
    m = centroids.shape[0]
    labels = _assign(points, centroids)
    for _ in range(max_iter):
        new_centroids = centroids.copy()
        for c in range(m):
            members = points[labels == c]
            if members.shape[0] > 0:
                new_centroids[c] = members.mean(axis=0)
        empties = [c for c in range(m) if not np.any(labels == c)]
        if empties:
            # Reseed each empty cluster at the point currently farthest
            # from its assigned centroid, then keep iterating.
            d2 = np.sum((points - new_centroids[labels]) ** 2, axis=1)
            for c in empties:
                far = int(np.argmax(d2))
                new_centroids[c] = points[far]
                d2[far] = -1.0
        new_labels = _assign(points, new_centroids)
        converged = not empties and np.array_equal(new_labels, labels)
        centroids = new_centroids
        labels = new_labels
        if converged:
            break
    return labels, centroids


def _hartigan_refine(points: np.ndarray, labels: np.ndarray, m: int,
                     max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Single-point reassignment descent on the exact SSE objective.

    Accepts a move only when it strictly lowers the objective, using the
    exact cluster-size-weighted deltas, so it escapes Lloyd-only local
    optima. Any stable point of this descent is also a Lloyd fixed
    point: centroids stay exact means and every point stays with its
    nearest centroid.
    """
    counts = np.bincount(labels, minlength=m).astype(np.float64)
    sums = np.zeros((m, points.shape[1]), dtype=np.float64)
    for c in range(m):
        sums[c] = points[labels == c].sum(axis=0)
    for _ in range(max_sweeps):
        improved = False
        for i in range(points.shape[0]):
            a = int(labels[i])
            if counts[a] <= 1:
                continue
            x = points[i]
            centroid_a = sums[a] / counts[a]
            removal_gain = counts[a] / (counts[a] - 1) * float(np.sum((x - centroid_a) ** 2))
            best_delta = -1e-12
            best_b = -1
            for b in range(m):
                if b == a:
                    continue
                centroid_b = sums[b] / counts[b]
                addition_cost = counts[b] / (counts[b] + 1) * float(np.sum((x - centroid_b) ** 2))
                delta = addition_cost - removal_gain
                if delta < best_delta:
                    best_delta = delta
                    best_b = b
            if best_b >= 0:
                sums[a] -= x
                counts[a] -= 1
                sums[best_b] += x
                counts[best_b] += 1
                labels[i] = best_b
                improved = True
        if not improved:
            break
    return labels, sums / counts[:, None]


def _canonical_labels(labels: np.ndarray) -> np.ndarray:
    """Relabel clusters by order of first appearance in the point sequence."""
    mapping: dict[int, int] = {}
    out = np.empty_like(labels)
    for i, lab in enumerate(labels):
        if int(lab) not in mapping:
            mapping[int(lab)] = len(mapping)
        out[i] = mapping[int(lab)]
    return out


def kmeans(points, m: int, seed: int, n_restarts: int = 10,
           max_iter: int = 100) -> np.ndarray:
    """Cluster ``points`` into ``m`` groups; returns per-point cluster ids.

    k-means++ seeding, Lloyd's iterations until assignments stabilize
    (or ``max_iter``), ``n_restarts`` independent restarts keeping the
    lowest within-cluster SSE. Deterministic for a fixed seed. Cluster
    ids are canonicalized to 0..m-1 in order of first appearance, so
    identical inputs always yield the identical labeling.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError(f"points must be a 2-D array, got shape {pts.shape}")
    n = pts.shape[0]
    if m <= 0:
        raise ValueError("m must be a positive integer")
    if m > n:
        raise ValueError(f"m={m} exceeds the number of points ({n})")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points contain non-finite entries")

    rng = np.random.default_rng(seed)
    best_labels: np.ndarray | None = None
    best_sse = np.inf
    for _ in range(n_restarts):
        centroids = _kmeans_plusplus(pts, m, rng)
        labels, centroids = _lloyd(pts, centroids, max_iter)
        # Duplicate points can defeat the in-loop repair; force-fill any
        # cluster that is still empty so every cluster id is used.
        for c in range(m):
            if not np.any(labels == c):
                d2 = np.sum((pts - centroids[labels]) ** 2, axis=1)
                far = int(np.argmax(d2))
                labels[far] = c
                centroids[c] = pts[far]
        labels, centroids = _hartigan_refine(pts, labels, m)
        sse = _sse(pts, centroids, labels)
        if sse < best_sse - 1e-12:
            best_sse = sse
            best_labels = labels
    assert best_labels is not None
    return _canonical_labels(best_labels)
