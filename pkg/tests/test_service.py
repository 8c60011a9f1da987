"""Service tests over the in-process ASGI client: response schemas, error
mapping (400/404/409/503), stream framing, and the CLI serve wiring."""

from __future__ import annotations

import json

import pytest
from fastapi.testclient import TestClient

from ecovector.errors import GenerationUnavailable
from ecovector.ragpipe import DeterministicHashEmbedder, Pipeline
from ecovector.service import create_app

TEXTS = {
    "apples.txt": "apple orchard rows in autumn",
    "bread.txt": "bread oven heat and crust",
    "copper.txt": "copper kettle shine polish",
}


def make_pipeline(tmp_path, subdir="svc", generator=None):
    corpus = tmp_path / subdir / "corpus"
    corpus.mkdir(parents=True)
    for name, text in TEXTS.items():
        (corpus / name).write_text(text, encoding="utf-8")
    return Pipeline.build(
        sorted(corpus.iterdir()),
        tmp_path / subdir / "store",
        embedder=DeterministicHashEmbedder(dim=16),
        generator=generator,
        n_c=2,
        seed=3,
    )


@pytest.fixture
def client(tmp_path):
    return TestClient(create_app(make_pipeline(tmp_path)))


class TestStatusAndDocuments:
    def test_status_matches_store_counts(self, client, tmp_path):
        body = client.get("/v1/status").json()
        assert body == {"files": 3, "vectors": 3, "index_version": 0}

    def test_document_fetch(self, client):
        response = client.get("/v1/documents/1")
        assert response.status_code == 200
        assert response.json() == {
            "doc_id": 1,
            "title": "bread",
            "text": "bread oven heat and crust",
        }

    def test_document_unknown_id_404(self, client):
        assert client.get("/v1/documents/99").status_code == 404

    def test_document_non_integer_400(self, client):
        assert client.get("/v1/documents/abc").status_code == 400

    def test_cors_headers_present(self, client):
        response = client.get("/v1/status", headers={"Origin": "http://localhost:5173"})
        assert response.headers.get("access-control-allow-origin") == "*"


class TestQuery:
    def test_schema_and_references(self, client, tmp_path):
        response = client.post("/v1/query", json={"text": "bread oven heat", "k": 2})
        assert response.status_code == 200
        body = response.json()
        assert set(body) == {"query_id", "answer", "references", "timings"}
        assert body["answer"].startswith("[stub-answer")
        twin = Pipeline.load(
            tmp_path / "svc" / "store", DeterministicHashEmbedder(dim=16)
        )
        expected = twin.answer_query("bread oven heat", k=2)
        assert body["references"] == [
            {"doc_id": r.doc_id, "title": r.title, "score": pytest.approx(r.score)}
            for r in expected.references
        ]
        assert body["answer"] == expected.answer
        assert set(body["timings"]) == {
            "retrieval_ms", "scr_ms", "generation_first_token_ms", "ttft_ms", "total_ms",
        }

    def test_deterministic_body_across_fresh_apps(self, tmp_path):
        bodies = []
        for subdir in ("s1", "s2"):
            app_client = TestClient(create_app(make_pipeline(tmp_path, subdir)))
            response = app_client.post("/v1/query", json={"text": "copper kettle", "k": 1})
            body = response.json()
            body["timings"] = None
            bodies.append(body)
        assert bodies[0] == bodies[1]

    def test_malformed_bodies_400(self, client):
        assert client.post("/v1/query", json={}).status_code == 400
        assert client.post("/v1/query", json={"text": "  "}).status_code == 400
        assert client.post("/v1/query", json={"text": "x", "k": 0}).status_code == 400
        assert client.post("/v1/query", json={"text": "x", "k": "three"}).status_code == 400
        assert client.post("/v1/query", json={"text": "x", "stream": 1}).status_code == 400
        assert client.post("/v1/query", json={"text": "x", "extra": 1}).status_code == 400
        assert (
            client.post(
                "/v1/query",
                content=b"not json",
                headers={"content-type": "application/json"},
            ).status_code
            == 400
        )

    def test_generation_failure_503(self, tmp_path):
        class DownGenerator:
            def generate(self, prompt, stream=False):
                raise GenerationUnavailable("model endpoint is down")

        pipeline = make_pipeline(tmp_path, generator=DownGenerator())
        app_client = TestClient(create_app(pipeline))
        response = app_client.post("/v1/query", json={"text": "bread"})
        assert response.status_code == 503

    def test_references_cache_resolvable(self, client):
        body = client.post("/v1/query", json={"text": "apple orchard", "k": 1}).json()
        cached = client.get(f"/v1/queries/{body['query_id']}/references")
        assert cached.status_code == 200
        assert cached.json()["references"] == body["references"]
        assert client.get("/v1/queries/q999999/references").status_code == 404


class TestStreaming:
    def test_frames_then_terminal_timing_frame(self, client, tmp_path):
        with client.stream(
            "POST", "/v1/query", json={"text": "bread oven heat", "k": 2, "stream": True}
        ) as response:
            assert response.status_code == 200
            assert response.headers["content-type"].startswith("application/x-ndjson")
            frames = [json.loads(line) for line in response.iter_lines() if line]
        assert [f["type"] for f in frames[:-1]] == ["token"] * (len(frames) - 1)
        terminal = frames[-1]
        assert terminal["type"] == "end"
        assert set(terminal) == {"type", "query_id", "references", "timings"}
        assert terminal["timings"]["ttft_ms"] > 0
        assert terminal["timings"]["total_ms"] >= terminal["timings"]["ttft_ms"]

        twin = Pipeline.load(
            tmp_path / "svc" / "store", DeterministicHashEmbedder(dim=16)
        )
        expected = twin.answer_query("bread oven heat", k=2)
        assert "".join(f["token"] for f in frames[:-1]) == expected.answer
        assert terminal["references"] == [
            {"doc_id": r.doc_id, "title": r.title, "score": pytest.approx(r.score)}
            for r in expected.references
        ]

    def test_stream_error_frame_on_generation_failure(self, tmp_path):
        class DownGenerator:
            def generate(self, prompt, stream=False):
                raise GenerationUnavailable("down")
                yield  # pragma: no cover

        pipeline = make_pipeline(tmp_path, generator=DownGenerator())
        app_client = TestClient(create_app(pipeline))
        with app_client.stream(
            "POST", "/v1/query", json={"text": "bread", "stream": True}
        ) as response:
            frames = [json.loads(line) for line in response.iter_lines() if line]
        assert frames[-1]["type"] == "error"


class TestIndexMutations:
    def test_update_adds_and_removes(self, client, tmp_path):
        extra = tmp_path / "extra.txt"
        extra.write_text("durable granite slabs", encoding="utf-8")
        response = client.post("/v1/index/update", json={"add_paths": [str(extra)]})
        assert response.status_code == 200
        body = response.json()
        assert body["state"] == "completed"
        assert body["job_id"] == "job-0001"
        assert body["added_chunks"] == 1
        assert client.get("/v1/status").json()["files"] == 4

        response = client.post("/v1/index/update", json={"remove_doc_ids": [0]})
        assert response.status_code == 200
        assert client.get("/v1/status").json()["files"] == 3

    def test_update_unknown_doc_404(self, client):
        response = client.post("/v1/index/update", json={"remove_doc_ids": [42]})
        assert response.status_code == 404

    def test_update_validates_body(self, client):
        assert (
            client.post("/v1/index/update", json={"add_paths": "x"}).status_code == 400
        )
        assert (
            client.post(
                "/v1/index/update", json={"remove_doc_ids": ["zero"]}
            ).status_code
            == 400
        )
        assert client.post("/v1/index/update", json={"other": 1}).status_code == 400

    def test_update_busy_lease_409(self, client):
        app = client.app
        assert app.state.mutation_lock.acquire(blocking=False)
        try:
            response = client.post("/v1/index/update", json={"remove_doc_ids": [0]})
            assert response.status_code == 409
        finally:
            app.state.mutation_lock.release()
        assert client.get("/v1/status").json()["files"] == 3

    def test_build_replaces_index(self, client, tmp_path):
        fresh = tmp_path / "fresh"
        fresh.mkdir()
        paths = []
        for i in range(2):
            p = fresh / f"n{i}.txt"
            p.write_text(f"new corpus file number {i}", encoding="utf-8")
            paths.append(str(p))
        response = client.post(
            "/v1/index/build", json={"paths": paths, "titles": ["First", "Second"]}
        )
        assert response.status_code == 200
        body = response.json()
        assert body["state"] == "completed"
        assert body["files"] == 2 and body["vectors"] == 2
        assert client.get("/v1/status").json()["files"] == 2
        doc = client.get("/v1/documents/0").json()
        assert doc["title"] == "First"
        answer = client.post("/v1/query", json={"text": "new corpus file number 1"})
        assert answer.json()["references"][0]["doc_id"] == 1

    def test_build_validates_before_wiping(self, client):
        response = client.post("/v1/index/build", json={"paths": []})
        assert response.status_code == 400
        response = client.post("/v1/index/build", json={"paths": ["/no/such/file"]})
        assert response.status_code == 400
        assert client.get("/v1/status").json()["files"] == 3

    def test_build_busy_lease_409(self, client, tmp_path):
        extra = tmp_path / "b.txt"
        extra.write_text("body", encoding="utf-8")
        app = client.app
        assert app.state.mutation_lock.acquire(blocking=False)
        try:
            response = client.post("/v1/index/build", json={"paths": [str(extra)]})
            assert response.status_code == 409
        finally:
            app.state.mutation_lock.release()


class TestServeWiring:
    def test_cli_serve_builds_app_and_runs_uvicorn(self, tmp_path, monkeypatch, capsys):
        from ecovector.cli import main

        pipeline = make_pipeline(tmp_path)
        pipeline.store.close()
        seen = {}

        def fake_run(app, host=None, port=None):
            seen["app"] = app
            seen["host"] = host
            seen["port"] = port

        monkeypatch.setattr("uvicorn.run", fake_run)
        code = main(
            [
                "serve",
                "--index-dir", str(tmp_path / "svc" / "store"),
                "--host", "127.0.0.9",
                "--port", "9321",
            ]
        )
        assert code == 0
        assert (seen["host"], seen["port"]) == ("127.0.0.9", 9321)
        paths = {route.path for route in seen["app"].routes}
        assert {
            "/v1/query",
            "/v1/documents/{doc_id}",
            "/v1/status",
            "/v1/index/build",
            "/v1/index/update",
        } <= paths
