"""Acceptance suite: one test per release criterion.

Run with ``pytest -s tests/test_acceptance.py`` to see one PASS/FAIL
line per criterion.
"""

import json
import math
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from chatsearch.backends import HashEmbedBackend, PoolCaptionBackend, ScriptedChatBackend
from chatsearch.cli import main
from chatsearch.config import ROLE_SAMPLING
from chatsearch.corpus import ImagePool, ImageRecord, default_candidate_count, top_n_candidates
from chatsearch.metrics import (
    bri,
    hits_at_k,
    mrr_at_k,
    ndcg_at_k,
    recall_at_k,
    write_logs,
)
from chatsearch.numerics import (
    SimilarityDistribution,
    entropy,
    kl_divergence,
    kmeans,
    softmax_distribution,
)
from chatsearch.orchestrator import EpisodeConfig, run_batch
from chatsearch.questioner import (
    DialogueContext,
    QuestionSet,
    extract_retrieval_context,
    filter_questions,
)

from mockcorpus import make_mock_pool, make_queries, mock_backends
from oracles import (
    best_two_partition_sse,
    cosine_direct,
    kl_direct,
    representative_by_entropy,
    softmax_direct,
    sse_of_partition,
)

DATA = Path(__file__).parent / "data"


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"[FAIL] {name}")
        raise
    print(f"[PASS] {name}")


def _random_pool(rng, count, dim):
    return ImagePool([
        ImageRecord(id=f"r{i:02d}", caption=f"synthetic caption {i}",
                    embedding=rng.normal(size=dim))
        for i in range(count)
    ])


def test_bri_oracle():
    """Six reference rank sequences reproduce the published integrals."""
    with criterion("BRI oracle: six reference sequences"):
        started = time.perf_counter()
        cases = [
            ([100, 100, 100], 4.60517, 4.6),
            ([100, 10, 100], 2.87823, 2.9),
            ([100, 100, 10], 4.02952, 4.0),
            ([100, 10, 10], 2.87823, 2.9),
            ([100, 10], 3.45388, 3.5),
            ([100, 5], 3.10731, 3.1),
        ]
        for ranks, raw, reported in cases:
            value = bri(ranks)
            assert abs(value - raw) <= 0.005, (ranks, value, raw)
            assert round(value, 1) == reported, (ranks, value, reported)
        assert time.perf_counter() - started < 1.0


def test_conventional_metric_oracle():
    """Every cell of the three worked metric-comparison tables."""
    with criterion("Conventional-metric oracle: all table cells"):
        tables = [
            # (ranks, recall, mrr, ndcg, hits) at the final round, K=10
            ([100, 100, 100], 0.0, 0.0, 0.0, 0.0),
            ([100, 10, 100], 0.0, 0.0, 0.0, 1.0),
            ([100, 100, 10], 1.0, 0.1, 0.3, 1.0),
            ([100, 10, 10], 1.0, 0.1, 0.3, 1.0),
            ([100, 10], 1.0, 0.1, 0.3, 1.0),
            ([100, 5], 1.0, 0.2, 0.4, 1.0),
        ]
        for ranks, want_recall, want_mrr, want_ndcg, want_hits in tables:
            final = ranks[-1]
            assert recall_at_k(final, 10) == want_recall
            assert hits_at_k(ranks, 10) == want_hits
            assert abs(mrr_at_k(final, 10) - want_mrr) <= 0.05
            assert abs(ndcg_at_k(final, 10) - want_ndcg) <= 0.05


def test_algorithm1_equivalence():
    """Cluster representatives match exhaustive entropy recomputation."""
    with criterion("Retrieval-context extraction matches entropy oracle "
                   "(100 random corpora)"):
        started = time.perf_counter()
        mismatches = 0
        for trial in range(100):
            rng = np.random.default_rng(1000 + trial)
            count = int(rng.integers(4, 33))
            m = int(rng.integers(1, min(count, 8) + 1))
            dim = int(rng.integers(3, 9))
            pool = _random_pool(rng, count, dim)
            query = rng.normal(size=dim)
            candidates, rc = extract_retrieval_context(
                query, pool, n=count, m=m,
                captioner=PoolCaptionBackend(pool), seed=trial)

            unit = candidates.embedding_matrix()
            unit = unit / np.linalg.norm(unit, axis=1, keepdims=True)
            labels = kmeans(unit, m=m, seed=trial)
            vectors = unit.tolist()
            for cluster in range(m):
                members = np.flatnonzero(labels == cluster).tolist()
                expected = representative_by_entropy(vectors, members)
                if candidates.members[expected].id != rc.representative_ids[cluster]:
                    mismatches += 1
        assert mismatches == 0
        assert time.perf_counter() - started < 30.0


def test_algorithm2_equivalence():
    """Question selection matches the brute-force KL argmin."""
    with criterion("Question filtering matches KL oracle (100 random instances)"):
        mismatches = 0
        for trial in range(100):
            rng = np.random.default_rng(2000 + trial)
            count = int(rng.integers(2, 17))
            num_questions = int(rng.integers(1, 9))
            dim = int(rng.integers(3, 9))
            pool = _random_pool(rng, count, dim)
            query = rng.normal(size=dim)
            candidates = top_n_candidates(query, pool, n=count)
            questions = tuple(f"probe {trial}-{i}?" for i in range(num_questions))
            kept_size = int(rng.integers(1, num_questions + 1))
            kept_indices = sorted(
                rng.choice(num_questions, size=kept_size, replace=False).tolist())
            kept_set = {questions[i] for i in kept_indices}

            def verdict(request, kept_set=kept_set):
                for q in kept_set:
                    if f"Question: {q}" in request.prompt:
                        return "uncertain"
                return "yes"

            embedder = HashEmbedBackend(dim=dim, seed=trial)
            result = filter_questions(
                DialogueContext(caption="synthetic"), "synthetic", query,
                QuestionSet(questions=questions), candidates,
                chat=ScriptedChatBackend({}, default=verdict), embedder=embedder)

            assert result.chosen_question in kept_set  # never outside kept
            members = [rec.embedding.tolist() for rec in candidates.members]
            p_c = softmax_direct(
                [cosine_direct(query.tolist(), mem) for mem in members])
            best_idx, best_kl = None, math.inf
            for idx in kept_indices:
                appended = embedder.embed_text(f"synthetic {questions[idx]}").tolist()
                p_cq = softmax_direct(
                    [cosine_direct(appended, mem) for mem in members])
                divergence = kl_direct(p_c, p_cq)
                if divergence < best_kl:
                    best_kl, best_idx = divergence, idx
            if result.chosen != best_idx:
                mismatches += 1
        assert mismatches == 0


def test_kmeans_micro_optimality():
    """10-restart k-means hits the exhaustive 2-partition optimum."""
    with criterion("k-means SSE equals exhaustive optimum (50 micro instances)"):
        for trial in range(50):
            rng = np.random.default_rng(3000 + trial)
            count = int(rng.integers(2, 9))
            dim = int(rng.integers(2, 5))
            points = rng.normal(size=(count, dim))
            labels = kmeans(points, m=2, seed=trial, n_restarts=10)
            groups = [np.flatnonzero(labels == c).tolist() for c in (0, 1)]
            got = sse_of_partition(points.tolist(), groups)
            best = best_two_partition_sse(points.tolist())
            assert got == pytest.approx(best, rel=1e-9, abs=1e-9), trial


def test_numeric_kernels():
    """Normalization, entropy bounds, and KL positivity."""
    with criterion("Numeric kernels: softmax/entropy/KL guarantees"):
        rng = np.random.default_rng(77)
        for _ in range(200):
            dist = softmax_distribution(rng.normal(size=int(rng.integers(1, 50))) * 5)
            assert abs(float(dist.probs.sum()) - 1.0) <= 1e-9
        for n in (2, 3, 10, 100):
            uniform = SimilarityDistribution(probs=np.full(n, 1.0 / n))
            assert abs(entropy(uniform) - math.log(n)) <= 1e-9
        for _ in range(100):
            p = softmax_distribution(rng.normal(size=8))
            assert kl_divergence(p, p) <= 1e-12
        for _ in range(10_000):
            size = int(rng.integers(2, 12))
            p = softmax_distribution(rng.normal(size=size) * 3)
            q = softmax_distribution(rng.normal(size=size) * 3)
            assert kl_divergence(p, q) >= 0.0


def test_end_to_end_determinism(tmp_path):
    """Mock batch: byte-identical across runs and parallelism levels."""
    with criterion("End-to-end determinism: 10-query batch, "
                   "two runs and parallelism 1 vs 4"):
        pool = make_mock_pool(40, dim=16, seed=0)
        queries = make_queries(pool, 10)
        config = EpisodeConfig(max_rounds=3, n=10, m=4, k_questions=3, seed=123)

        paths = []
        for name, parallelism in (("run1.jsonl", 1), ("run2.jsonl", 1),
                                  ("run4.jsonl", 4)):
            result = run_batch(queries, pool, config, mock_backends(pool),
                               parallelism=parallelism)
            assert result.failures == {}
            path = tmp_path / name
            write_logs(result.logs, path)
            paths.append(path)

        blobs = [path.read_bytes() for path in paths]
        assert blobs[0] == blobs[1] == blobs[2]
        golden = (DATA / "golden_batch.jsonl").read_bytes()
        assert blobs[0] == golden


def test_paper_defaults():
    """m, n, and per-role sampling parameters match the published setup."""
    with criterion("Defaults: m=10, n=ceil(1% of pool), role sampling "
                   "0.7/32, 0.0/512, 0.0/10"):
        assert EpisodeConfig().m == 10
        assert EpisodeConfig().max_rounds == 10
        for pool_size in (100, 2064, 20_000, 50_000):
            assert default_candidate_count(pool_size) == math.ceil(0.01 * pool_size)
        assert EpisodeConfig().resolve_for_pool(50_000).n == 500
        question = ROLE_SAMPLING["question_generation"]
        assert (question.temperature, question.max_output_tokens) == (0.7, 32)
        reformulation = ROLE_SAMPLING["reformulation"]
        assert (reformulation.temperature, reformulation.max_output_tokens) == (0.0, 512)
        filtering = ROLE_SAMPLING["filtering"]
        assert (filtering.temperature, filtering.max_output_tokens) == (0.0, 10)


def test_ablate_m_cli(tmp_path):
    """The cluster-count sweep emits one BRI per m without crashing."""
    with criterion("cmd_ablate_m: one BRI per m for m in {2, 5, 10}"):
        captions = tmp_path / "captions.jsonl"
        from mockcorpus import caption_for
        lines = [json.dumps({"id": f"img-{i:03d}", "caption": caption_for(i)})
                 for i in range(30)]
        captions.write_text("\n".join(lines) + "\n")
        pool_path = tmp_path / "pool.jsonl"
        assert main(["embed", "--captions", str(captions), "--out", str(pool_path),
                     "--dim", "16"]) == 0

        from chatsearch.corpus import load_pool
        pool = load_pool(pool_path)
        dataset = tmp_path / "dataset.jsonl"
        rows = [json.dumps({"target_id": t, "caption": c})
                for t, c in make_queries(pool, 4)]
        dataset.write_text("\n".join(rows) + "\n")

        out = tmp_path / "ablate.json"
        code = main(["ablate-m", "--pool", str(pool_path),
                     "--dataset", str(dataset),
                     "--out", str(out), "--m-values", "2,5,10",
                     "--rounds", "2", "--n", "10", "--seed", "11"])
        assert code == 0
        report = json.loads(out.read_text())
        assert [row["m"] for row in report["rows"]] == [2, 5, 10]
        assert all(math.isfinite(row["bri"]) for row in report["rows"])
