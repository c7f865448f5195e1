"""Brute-force reference implementations used to check the fast paths.

Everything here is written with plain Python loops and math.* calls,
independent of the numpy-based implementations under test.
"""

import math


def cosine_direct(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    return dot / (na * nb)


def softmax_direct(scores, temperature=1.0):
    weights = [math.exp(s / temperature) for s in scores]
    total = sum(weights)
    return [w / total for w in weights]


def entropy_direct(probs):
    return -sum(p * math.log(p) for p in probs if p > 0)


def kl_direct(p, q):
    total = 0.0
    for pi, qi in zip(p, q):
        if pi > 0:
            total += pi * math.log(pi / qi)
    return total


def sse_of_partition(points, groups):
    """Within-cluster sum of squared distances for an explicit partition."""
    total = 0.0
    for group in groups:
        if not group:
            continue
        dim = len(points[0])
        mean = [sum(points[i][d] for i in group) / len(group) for d in range(dim)]
        for i in group:
            total += sum((points[i][d] - mean[d]) ** 2 for d in range(dim))
    return total


def best_two_partition_sse(points):
    """Exhaustive optimum over all non-empty 2-partitions of the points.

    Fixing point 0 in the first group halves the enumeration; feasible
    for len(points) <= ~16, used here with <= 8.
    """
    n = len(points)
    best = math.inf
    for mask in range(2 ** (n - 1)):
        group_a = [0] + [i for i in range(1, n) if mask & (1 << (i - 1))]
        group_b = [i for i in range(1, n) if not mask & (1 << (i - 1))]
        if not group_b:
            continue
        best = min(best, sse_of_partition(points, [group_a, group_b]))
    return best


def representative_by_entropy(candidate_embeddings, members):
    """Lowest-entropy member of a cluster, recomputed exhaustively.

    For each member, builds its similarity distribution over the whole
    candidate set (self-similarity included) and takes the entropy by
    direct summation. Ties break toward the lowest candidate index.
    """
    best_idx = None
    best_h = math.inf
    for idx in members:
        sims = [cosine_direct(candidate_embeddings[idx], other)
                for other in candidate_embeddings]
        h = entropy_direct(softmax_direct(sims))
        if h < best_h - 1e-15:
            best_h = h
            best_idx = idx
    return best_idx
