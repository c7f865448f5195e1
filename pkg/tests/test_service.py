import json
import threading
import time
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from chatsearch.metrics import evaluate, read_logs
from chatsearch.orchestrator import EpisodeConfig, run_episode
from chatsearch.service import create_app

from goldenscenario import golden_backends, golden_config, golden_pool
from mockcorpus import make_mock_pool, make_queries, mock_backends


DATA = Path(__file__).parent / "data"


def sequential_ids():
    counter = iter(range(10_000))
    return lambda: f"s-{next(counter)}"


@pytest.fixture
def golden_client(tmp_path):
    pool = golden_pool()
    app = create_app(pool, golden_backends(pool), golden_config(),
                     log_dir=tmp_path / "logs", id_factory=sequential_ids())
    with TestClient(app) as client:
        yield client


@pytest.fixture
def mock_client(tmp_path):
    pool = make_mock_pool(30)
    config = EpisodeConfig(max_rounds=3, n=10, m=4, k_questions=3, seed=2)
    app = create_app(pool, mock_backends(pool), config,
                     log_dir=tmp_path / "logs", id_factory=sequential_ids())
    with TestClient(app) as client:
        yield client


class TestHealth:
    def test_healthz(self, golden_client):
        response = golden_client.get("/healthz")
        assert response.status_code == 200
        assert response.json() == {"status": "ok", "pool_size": 4}


class TestCreate:
    def test_returns_k_scored_tiles_descending(self, mock_client):
        response = mock_client.post("/sessions", json={"caption": "a red ball", "k": 5})
        assert response.status_code == 201
        body = response.json()
        results = body["round"]["results"]
        assert len(results) == 5
        scores = [tile["score"] for tile in results]
        assert scores == sorted(scores, reverse=True)
        assert all(tile["id"] for tile in results)
        assert body["question"].endswith("?")
        assert body["done"] is False
        # Live session: no target, no rank.
        assert body["round"]["rank"] is None

    def test_empty_caption_is_client_error(self, mock_client):
        response = mock_client.post("/sessions", json={"caption": "   "})
        assert response.status_code == 400
        body = response.json()
        assert body["code"] == "empty_caption"
        assert "message" in body

    def test_missing_caption_field(self, mock_client):
        response = mock_client.post("/sessions", json={})
        assert response.status_code == 400
        assert response.json()["code"] == "validation_error"

    def test_unknown_target_rejected(self, mock_client):
        response = mock_client.post("/sessions",
                                    json={"caption": "x", "target_id": "nope"})
        assert response.status_code == 400
        assert response.json()["code"] == "unknown_target"

    def test_golden_create_matches_fixture(self, golden_client):
        response = golden_client.post(
            "/sessions", json={"caption": "a toy", "k": 4, "target_id": "img-3"})
        assert response.status_code == 201
        expected = json.loads((DATA / "golden_create_response.json").read_text())
        assert response.json() == expected


class TestAnswer:
    def test_answer_advances_round(self, golden_client):
        created = golden_client.post(
            "/sessions", json={"caption": "a toy", "k": 4, "target_id": "img-3"}).json()
        assert created["question"] == "is it a ball?"
        first = golden_client.post(
            f"/sessions/{created['session_id']}/answer", json={"text": "no"})
        assert first.status_code == 200
        body = first.json()
        assert body["round"]["round"] == 1
        assert body["round"]["rank"] == 2
        assert body["round"]["answer"] == "no"
        assert body["question"] == "does it fly?"
        assert body["done"] is False

    def test_done_after_max_rounds(self, golden_client):
        created = golden_client.post(
            "/sessions", json={"caption": "a toy", "k": 4, "target_id": "img-3"}).json()
        sid = created["session_id"]
        golden_client.post(f"/sessions/{sid}/answer", json={"text": "no"})
        final = golden_client.post(f"/sessions/{sid}/answer", json={"text": "yes"}).json()
        assert final["done"] is True
        assert final["question"] is None
        assert final["round"]["rank"] == 1
        # No pending question left: a further submission conflicts.
        again = golden_client.post(f"/sessions/{sid}/answer", json={"text": "??"})
        assert again.status_code == 409
        assert again.json()["code"] == "conflict"

    def test_unknown_session(self, golden_client):
        response = golden_client.post("/sessions/nope/answer", json={"text": "x"})
        assert response.status_code == 404
        assert response.json()["code"] == "unknown_session"


class TestGetAndEnd:
    def test_get_after_create_shows_round_zero(self, golden_client):
        created = golden_client.post(
            "/sessions", json={"caption": "a toy", "k": 2, "target_id": "img-3"}).json()
        view = golden_client.get(f"/sessions/{created['session_id']}").json()
        assert view["rounds"][0]["round"] == 0
        assert view["question"] == "is it a ball?"
        assert view["done"] is False
        assert view["created_at"] <= view["updated_at"]

    def test_end_then_get_is_gone(self, golden_client):
        created = golden_client.post(
            "/sessions", json={"caption": "a toy", "k": 2, "target_id": "img-3"}).json()
        sid = created["session_id"]
        ended = golden_client.post(f"/sessions/{sid}/end")
        assert ended.status_code == 200
        assert golden_client.get(f"/sessions/{sid}").status_code == 404

    def test_ended_log_is_evaluable(self, golden_client):
        created = golden_client.post(
            "/sessions", json={"caption": "a toy", "k": 4, "target_id": "img-3"}).json()
        sid = created["session_id"]
        golden_client.post(f"/sessions/{sid}/answer", json={"text": "no"})
        golden_client.post(f"/sessions/{sid}/answer", json={"text": "yes"})
        ended = golden_client.post(f"/sessions/{sid}/end").json()
        path = ended["log_path"]
        logs = read_logs(path)
        report = evaluate(logs, k=10)
        assert report.num_queries == 1
        expected = json.loads((DATA / "golden_episode.json").read_text())
        assert ended["log"] == expected

    def test_shutdown_flushes_open_sessions(self, tmp_path):
        pool = golden_pool()
        log_dir = tmp_path / "logs"
        app = create_app(pool, golden_backends(pool), golden_config(),
                         log_dir=log_dir, id_factory=sequential_ids())
        with TestClient(app) as client:
            client.post("/sessions",
                        json={"caption": "a toy", "k": 2, "target_id": "img-3"})
        # Leaving the context triggers shutdown; the unfinished session persists.
        files = list(log_dir.glob("*.jsonl"))
        assert len(files) == 1
        assert read_logs(files[0])[0].rounds[0].rank == 4


class TestEquivalenceWithBatchRunner:
    def test_session_ranks_match_run_episode(self, tmp_path):
        pool = make_mock_pool(30)
        config = EpisodeConfig(max_rounds=3, n=10, m=4, k_questions=3, seed=2)
        target_id, caption = make_queries(pool, 5)[3]

        log = run_episode(target_id, caption, pool, config, mock_backends(pool))
        answers = [r.answer for r in log.rounds[1:]]

        app = create_app(pool, mock_backends(pool), config,
                         log_dir=tmp_path, id_factory=sequential_ids())
        with TestClient(app) as client:
            created = client.post(
                "/sessions",
                json={"caption": caption, "k": 5, "target_id": target_id}).json()
            sid = created["session_id"]
            for answer in answers:
                response = client.post(f"/sessions/{sid}/answer", json={"text": answer})
                assert response.status_code == 200
            ended = client.post(f"/sessions/{sid}/end").json()

        service_ranks = [r["rank"] for r in ended["log"]["rounds"]]
        assert service_ranks == log.ranks
        assert ended["log"] == log.to_dict()


class SlowChat:
    """Delays reformulation so two submissions can collide."""

    def __init__(self, inner, delay=0.3):
        self._inner = inner
        self._delay = delay

    def chat(self, request):
        if "Reformulated caption:" in request.prompt:
            time.sleep(self._delay)
        return self._inner.chat(request)


class TestConcurrency:
    def test_second_concurrent_submission_conflicts(self, tmp_path):
        pool = golden_pool()
        backends = golden_backends(pool)
        backends.chat = SlowChat(backends.chat)
        app = create_app(pool, backends, golden_config(),
                         log_dir=tmp_path, id_factory=sequential_ids())
        with TestClient(app) as client:
            created = client.post(
                "/sessions", json={"caption": "a toy", "k": 2, "target_id": "img-3"}).json()
            sid = created["session_id"]
            statuses = []

            def submit():
                response = client.post(f"/sessions/{sid}/answer", json={"text": "no"})
                statuses.append(response.status_code)

            threads = [threading.Thread(target=submit) for _ in range(2)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            assert sorted(statuses) == [200, 409]
