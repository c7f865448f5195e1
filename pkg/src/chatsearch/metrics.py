"""Evaluation metrics for multi-round retrieval episodes.

The headline metric is the best-log-rank integral: take the running
best (prefix-minimum) rank over rounds, integrate its natural log with
the trapezoidal rule, and divide by the round span. Lower is better; a
target found at rank 1 in round 0 and kept there scores 0. It rewards
all three things a per-K metric misses: ever finding the target (user
satisfaction), finding it early (efficiency), and pushing its rank
higher (ranking improvement).

Also here: the conventional per-round metrics (Recall@K, Hits@K, MRR@K,
NDCG@K with one relevant image per query), rounds-to-success, the
aggregation over a query set, and the episode-log file format.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field


@dataclass(frozen=True)
class RoundRecord:
    round: int
    rank: int | None
    reformulated_query: str
    question: str | None = None
    answer: str | None = None

    def __post_init__(self):
        # rank is None only for live sessions with no hidden target.
        if self.rank is not None and self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if self.round == 0 and (self.question is not None or self.answer is not None):
            raise ValueError("round 0 carries no question or answer")
        if self.round > 0 and (self.question is None or self.answer is None):
            raise ValueError(f"round {self.round} needs a question and an answer")


@dataclass(frozen=True)
class EpisodeLog:
    """Everything one target image's episode produced, round by round."""

    query_id: str
    rounds: tuple[RoundRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "rounds", tuple(self.rounds))
        if not self.rounds:
            raise ValueError("episode log needs at least round 0")
        for expected, record in enumerate(self.rounds):
            if record.round != expected:
                raise ValueError(
                    f"rounds must be contiguous from 0; found {record.round} "
                    f"at position {expected}")

    @property
    def ranks(self) -> list[int]:
        out = []
        for record in self.rounds:
            if record.rank is None:
                raise ValueError(
                    f"episode {self.query_id!r} has no recorded rank for round "
                    f"{record.round}; it was run without a target")
            out.append(record.rank)
        return out

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "rounds": [
                {
                    "round": r.round,
                    "question": r.question,
                    "answer": r.answer,
                    "reformulated_query": r.reformulated_query,
                    "rank": r.rank,
                }
                for r in self.rounds
            ],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "EpisodeLog":
        rounds = tuple(
            RoundRecord(
                round=r["round"],
                question=r.get("question"),
                answer=r.get("answer"),
                reformulated_query=r["reformulated_query"],
                rank=r["rank"],
            )
            for r in obj["rounds"]
        )
        return cls(query_id=obj["query_id"], rounds=rounds)


def best_ranks(ranks) -> list[int]:
    """Prefix minima: the best rank seen up to each round."""
    ranks = list(ranks)
    if not ranks:
        raise ValueError("ranks must be non-empty")
    out = []
    best = math.inf
    for rank in ranks:
        if rank < 1:
            raise ValueError(f"rank must be >= 1, got {rank}")
        best = min(best, rank)
        out.append(int(best))
    return out


def bri(ranks) -> float:
    """Best log rank integral over the episode's rounds; lower is better.

    Trapezoidal average of ln(best rank): with b the prefix minima and
    T the last round index, (1/T) * sum of (ln b_t + ln b_{t+1}) / 2.
    A single-round episode degenerates to ln(b_0).
    """
    b = best_ranks(ranks)
    span = len(b) - 1
    logs = [math.log(value) for value in b]
    if span == 0:
        return logs[0]
    area = sum((logs[t] + logs[t + 1]) / 2.0 for t in range(span))
    return area / span


def recall_at_k(rank: int, k: int) -> int:
    """1 iff this round's rank is within the top K."""
    _check_k(k)
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    return int(rank <= k)


def hits_at_k(ranks, k: int) -> int:
    """1 iff any round so far ranked the target within the top K."""
    _check_k(k)
    return int(best_ranks(ranks)[-1] <= k)


def mrr_at_k(rank: int, k: int) -> float:
    """Reciprocal rank, zeroed outside the top K (one relevant image)."""
    _check_k(k)
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    return 1.0 / rank if rank <= k else 0.0


def ndcg_at_k(rank: int, k: int) -> float:
    """Binary-gain NDCG with a single relevant image (ideal DCG = 1)."""
    _check_k(k)
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    return 1.0 / math.log2(1 + rank) if rank <= k else 0.0


def _check_k(k: int) -> None:
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")


@dataclass(frozen=True)
class RoundsToSuccess:
    """Mean first round whose best rank reached the top K."""

    average: float | None
    num_successful: int
    num_failed: int


def avg_rounds_to_success(logs, k: int) -> RoundsToSuccess:
    """Average over episodes that ever reach the top K; others counted apart."""
    _check_k(k)
    first_rounds = []
    failed = 0
    for log in logs:
        hit = next((t for t, rank in enumerate(log.ranks) if rank <= k), None)
        if hit is None:
            failed += 1
        else:
            first_rounds.append(hit)
    if not first_rounds:
        return RoundsToSuccess(average=None, num_successful=0, num_failed=failed)
    return RoundsToSuccess(
        average=sum(first_rounds) / len(first_rounds),
        num_successful=len(first_rounds),
        num_failed=failed,
    )


@dataclass(frozen=True)
class MetricReport:
    """Aggregated metrics over a query set; stable field names."""

    k: int
    round_cutoff: int
    num_queries: int
    bri: float
    recall_at_k: tuple[float, ...] = field(default=())
    hits_at_k: tuple[float, ...] = field(default=())
    mrr_at_k: tuple[float, ...] = field(default=())
    ndcg_at_k: tuple[float, ...] = field(default=())
    avg_rounds_to_success: float | None = None
    num_successful: int = 0

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "round_cutoff": self.round_cutoff,
            "num_queries": self.num_queries,
            "bri": self.bri,
            "recall_at_k": list(self.recall_at_k),
            "hits_at_k": list(self.hits_at_k),
            "mrr_at_k": list(self.mrr_at_k),
            "ndcg_at_k": list(self.ndcg_at_k),
            "avg_rounds_to_success": self.avg_rounds_to_success,
            "num_successful": self.num_successful,
        }


def evaluate(logs, k: int = 10, round_cutoff: int | None = None) -> MetricReport:
    """Per-round means of the conventional metrics plus the BRI mean.

    Rounds beyond ``round_cutoff`` are ignored; per-round means cover
    the episodes that reached that round.
    """
    logs = list(logs)
    if not logs:
        raise ValueError("cannot evaluate an empty log set")
    _check_k(k)
    max_round = max(len(log.rounds) for log in logs) - 1
    cutoff = max_round if round_cutoff is None else min(round_cutoff, max_round)
    if cutoff < 0:
        raise ValueError("round_cutoff must be >= 0")

    recall_rounds, hits_rounds, mrr_rounds, ndcg_rounds = [], [], [], []
    for t in range(cutoff + 1):
        present = [log for log in logs if len(log.rounds) > t]
        if not present:
            break
        recall_rounds.append(
            sum(recall_at_k(log.ranks[t], k) for log in present) / len(present))
        hits_rounds.append(
            sum(hits_at_k(log.ranks[: t + 1], k) for log in present) / len(present))
        mrr_rounds.append(
            sum(mrr_at_k(log.ranks[t], k) for log in present) / len(present))
        ndcg_rounds.append(
            sum(ndcg_at_k(log.ranks[t], k) for log in present) / len(present))

    bri_mean = sum(bri(log.ranks[: cutoff + 1]) for log in logs) / len(logs)
    rounds_to_success = avg_rounds_to_success(logs, k)
    return MetricReport(
        k=k,
        round_cutoff=cutoff,
        num_queries=len(logs),
        bri=bri_mean,
        recall_at_k=tuple(recall_rounds),
        hits_at_k=tuple(hits_rounds),
        mrr_at_k=tuple(mrr_rounds),
        ndcg_at_k=tuple(ndcg_rounds),
        avg_rounds_to_success=rounds_to_success.average,
        num_successful=rounds_to_success.num_successful,
    )


class LogFormatError(ValueError):
    """Raised when an episode log file fails to parse or validate."""


def write_logs(logs, path) -> None:
    """One JSON object per line, in the given order."""
    with open(path, "w", encoding="utf-8") as handle:
        for log in logs:
            handle.write(json.dumps(log.to_dict(), ensure_ascii=False) + "\n")


def read_logs(path) -> list[EpisodeLog]:
    """Parse an episode log file; errors carry the offending line number."""
    logs = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LogFormatError(f"line {line_no}: invalid JSON ({exc.msg})") from None
            try:
                logs.append(EpisodeLog.from_dict(obj))
            except (KeyError, TypeError, ValueError) as exc:
                raise LogFormatError(f"line {line_no}: {exc}") from None
    return logs
