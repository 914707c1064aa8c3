import json
from concurrent.futures import ThreadPoolExecutor
from datetime import date
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from bess_om.config import AppConfig
from bess_om.llm import MockLLM
from bess_om.records import RecordStoreError
from bess_om.service import create_app

from conftest import make_store

GOLDEN_DIR = Path(__file__).parent / "golden"


@pytest.fixture()
def client(fixture_store, sample_index, mock_embedder):
    config = AppConfig()
    app = create_app(config, store=fixture_store, index=sample_index,
                     llm=MockLLM(), embedder=mock_embedder)
    return TestClient(app)


class TestHealthz:
    def test_reports_counts(self, client):
        body = client.get("/api/healthz").json()
        assert body["status"] == "ok"
        assert body["record_entries"] == 3
        assert body["knowledge_slices"] == 6
        assert body["llm_mock"] is True


class TestRecords:
    def test_range_query(self, client):
        response = client.get("/api/records",
                              params={"from": "2024-10-01", "to": "2024-10-02"})
        assert response.status_code == 200
        entries = response.json()["entries"]
        assert [e["date"] for e in entries] == ["2024-10-01", "2024-10-02"]
        assert len(entries[0]["operations"][0]["V"]) == 3

    def test_inverted_range_400(self, client):
        response = client.get("/api/records",
                              params={"from": "2024-10-05", "to": "2024-10-01"})
        assert response.status_code == 400
        assert "inverted range" in response.json()["error"]

    def test_bad_date_400(self, client):
        response = client.get("/api/records",
                              params={"from": "yesterday", "to": "2024-10-01"})
        assert response.status_code == 400


class TestKnowledgeSearch:
    def test_hits_include_bodies(self, client):
        response = client.get("/api/knowledge/search",
                              params={"q": "cooling faults", "k": 3})
        assert response.status_code == 200
        hits = response.json()["hits"]
        assert len(hits) == 3
        assert all(h["body"] for h in hits)
        assert all(-1.0 <= h["fused_score"] <= 1.0 for h in hits)


class TestQuery:
    DATA_Q = ("Retrieve and analyze the internal inconsistency dataset from "
              "2024-10-01 to 2024-10-05 and compute voltage statistics.")
    BOTH_Q = ("From 2024-10-01 to 2024-10-05, analyze the voltage "
              "inconsistency and explain likely causes. Provide optimization "
              "suggestions.")

    def test_data_query_end_to_end(self, client):
        response = client.post("/api/query", json={"question": self.DATA_Q})
        assert response.status_code == 200
        body = response.json()
        assert body["route"] == "data_only"
        assert 3 <= len(body["bullets"]) <= 5
        assert body["degraded"] is False
        assert body["timings_ms"]
        assert body["audit"]["stages"]

    def test_comprehensive_query(self, client):
        body = client.post("/api/query", json={"question": self.BOTH_Q}).json()
        assert body["route"] == "data_and_knowledge"
        assert body["data_summary"] and body["knowledge_summary"]

    def test_empty_question_400(self, client):
        response = client.post("/api/query", json={"question": "   "})
        assert response.status_code == 400
        assert response.json()["stage"] == "router"

    def test_concurrent_queries_no_crosstalk(self, client):
        questions = [
            f"Retrieve and analyze the inconsistency dataset from 2024-10-0{d} "
            f"to 2024-10-05 and list pack {d} statistics."
            for d in range(1, 6)
        ] * 4  # 20 distinct-ish requests, >=16 in flight

        def ask(q):
            body = client.post("/api/query", json={"question": q}).json()
            return q, body

        with ThreadPoolExecutor(max_workers=16) as pool:
            for q, body in pool.map(ask, questions):
                router_stages = [s for s in body["audit"]["stages"]
                                 if s["stage"] == "router"]
                assert router_stages[0]["user_prompt"] == q

    def test_golden_response_schema(self, client):
        body = client.post("/api/query", json={"question": self.BOTH_Q}).json()
        body.pop("timings_ms")
        for stage in body["audit"]["stages"]:
            stage.pop("elapsed_ms", None)
        golden_path = GOLDEN_DIR / "query_response.json"
        if not golden_path.exists():
            GOLDEN_DIR.mkdir(exist_ok=True)
            golden_path.write_text(json.dumps(body, indent=1, ensure_ascii=False)
                                   + "\n", encoding="utf-8")
        golden = json.loads(golden_path.read_text(encoding="utf-8"))
        assert body == golden


class TestStartup:
    def test_missing_store_fails_fast(self, tmp_path):
        config = AppConfig()
        config.service.store_dir = str(tmp_path / "absent")
        with pytest.raises(RecordStoreError):
            create_app(config)

    def test_loads_from_disk(self, tmp_path, sample_index, mock_embedder):
        store = make_store([date(2024, 10, 1)], packs=3)
        store.save(tmp_path / "store")
        config = AppConfig()
        config.service.store_dir = str(tmp_path / "store")
        config.service.index_dir = str(tmp_path / "no-index")
        app = create_app(config, llm=MockLLM(), embedder=mock_embedder)
        body = TestClient(app).get("/api/healthz").json()
        assert body["record_entries"] == 1
        assert body["knowledge_slices"] == 0
