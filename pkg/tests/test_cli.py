"""CLI tests: argument resolution (flag > env > config > default), the
build/update/search/query round trip, config validation, and the bench
report columns on a small clustered fixture."""

from __future__ import annotations

import csv
import json
import math

import numpy as np
import pytest

from conftest import make_mixture
from ecovector.cli import BENCH_COLUMNS, load_config, main
from ecovector.datasets import write_fvecs, write_ivecs, write_jsonl_corpus
from ecovector.errors import InvalidConfig
from ecovector.storage import IndexFiles


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture
def corpus_dir(tmp_path):
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    (corpus / "apples.txt").write_text("apple orchard rows in autumn", encoding="utf-8")
    (corpus / "bread.txt").write_text("bread oven heat and crust", encoding="utf-8")
    (corpus / "copper.txt").write_text("copper kettle shine polish", encoding="utf-8")
    return corpus


def build_fixture(capsys, tmp_path, corpus_dir, *extra):
    index_dir = tmp_path / "idx"
    code, out, err = run_cli(
        capsys, "build", "--corpus", str(corpus_dir), "--index-dir", str(index_dir),
        "--dim", "16", "--nc", "2", "--seed", "3", *extra,
    )
    assert code == 0, err
    return index_dir, out


class TestBuildAndSearch:
    def test_build_reports_counts_in_display_format(self, capsys, tmp_path, corpus_dir):
        _, out = build_fixture(capsys, tmp_path, corpus_dir)
        assert "3 Files, 3 Vectors" in out

    def test_build_then_search_round_trip(self, capsys, tmp_path, corpus_dir):
        index_dir, _ = build_fixture(capsys, tmp_path, corpus_dir)
        code, out, err = run_cli(
            capsys, "search", "--index-dir", str(index_dir),
            "--text", "apple orchard rows in autumn", "--k", "3",
        )
        assert code == 0, err
        lines = out.strip().splitlines()
        assert lines[0].split() == ["rank", "id", "distance"]
        assert len(lines) == 4
        first = lines[1].split()
        assert first == ["1", "0", "0.000000"]

    def test_search_k_limits_rows(self, capsys, tmp_path, corpus_dir):
        index_dir, _ = build_fixture(capsys, tmp_path, corpus_dir)
        code, out, _ = run_cli(
            capsys, "search", "--index-dir", str(index_dir), "--text", "bread", "--k", "1"
        )
        assert code == 0
        assert len(out.strip().splitlines()) == 2

    def test_build_deterministic_given_seed(self, capsys, tmp_path, corpus_dir):
        a = tmp_path / "a"
        b = tmp_path / "b"
        for target in (a, b):
            code, _, err = run_cli(
                capsys, "build", "--corpus", str(corpus_dir), "--index-dir", str(target),
                "--dim", "16", "--nc", "2", "--seed", "11",
            )
            assert code == 0, err
        manifest_a = IndexFiles(a / "index").read_manifest()
        manifest_b = IndexFiles(b / "index").read_manifest()
        assert manifest_a == manifest_b

    def test_build_from_jsonl_keeps_titles(self, capsys, tmp_path):
        src = tmp_path / "corpus.jsonl"
        write_jsonl_corpus(
            src,
            [
                {"title": "Orchard Notes", "text": "apple orchard rows"},
                {"title": "Bakery Log", "text": "bread oven heat"},
            ],
        )
        index_dir = tmp_path / "idx"
        code, out, err = run_cli(
            capsys, "build", "--jsonl", str(src), "--index-dir", str(index_dir),
            "--dim", "16", "--nc", "2", "--seed", "3",
        )
        assert code == 0, err
        assert "2 Files, 2 Vectors" in out
        code, out, _ = run_cli(
            capsys, "query", "--index-dir", str(index_dir), "--text", "bread oven heat"
        )
        assert code == 0
        assert "[Bakery Log]" in out

    def test_missing_index_dir_is_diagnosed(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "search", "--text", "x")
        assert code == 1
        assert "error:" in err and "--index-dir" in err

    def test_search_on_absent_index_fails_cleanly(self, capsys, tmp_path):
        code, _, err = run_cli(
            capsys, "search", "--index-dir", str(tmp_path / "nope"), "--text", "x"
        )
        assert code == 1
        assert err.startswith("error:")


class TestUpdateCommand:
    def test_add_and_remove(self, capsys, tmp_path, corpus_dir):
        index_dir, _ = build_fixture(capsys, tmp_path, corpus_dir)
        extra = tmp_path / "extra.txt"
        extra.write_text("durable granite slabs", encoding="utf-8")
        code, out, err = run_cli(
            capsys, "update", "--index-dir", str(index_dir), "--add", str(extra)
        )
        assert code == 0, err
        assert "added 1 documents (1 chunks), removed 0 chunks" in out
        assert "4 Files, 4 Vectors" in out

        code, out, _ = run_cli(
            capsys, "update", "--index-dir", str(index_dir), "--remove", "0"
        )
        assert code == 0
        assert "removed 1 chunks" in out
        assert "3 Files, 3 Vectors" in out

    def test_remove_unknown_doc_fails(self, capsys, tmp_path, corpus_dir):
        index_dir, _ = build_fixture(capsys, tmp_path, corpus_dir)
        code, _, err = run_cli(
            capsys, "update", "--index-dir", str(index_dir), "--remove", "42"
        )
        assert code == 1
        assert "error:" in err


class TestQueryCommand:
    def test_prints_answer_references_timings(self, capsys, tmp_path, corpus_dir):
        index_dir, _ = build_fixture(capsys, tmp_path, corpus_dir)
        code, out, err = run_cli(
            capsys, "query", "--index-dir", str(index_dir),
            "--text", "apple orchard rows in autumn", "--k", "2",
        )
        assert code == 0, err
        assert "[stub-answer" in out
        assert "References:" in out
        assert "1. [apples] (doc 0, score" in out
        assert "timings: retrieval" in out and "ttft" in out


class TestConfigResolution:
    def test_unknown_top_level_key_rejected(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text('{"bogus": 1}', encoding="utf-8")
        with pytest.raises(InvalidConfig, match="bogus"):
            load_config(path)

    def test_unknown_section_key_rejected(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text('{"search": {"beam": 9}}', encoding="utf-8")
        with pytest.raises(InvalidConfig, match="beam"):
            load_config(path)

    def test_bad_json_rejected(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{nope", encoding="utf-8")
        with pytest.raises(InvalidConfig):
            load_config(path)

    def test_cli_surfaces_config_errors(self, capsys, tmp_path, corpus_dir):
        cfg = tmp_path / "c.json"
        cfg.write_text('{"bogus": 1}', encoding="utf-8")
        code, _, err = run_cli(
            capsys, "search", "--index-dir", str(tmp_path), "--text", "x",
            "--config", str(cfg),
        )
        assert code == 1
        assert "unknown config keys" in err

    def test_config_value_applies(self, capsys, tmp_path, corpus_dir):
        index_dir, _ = build_fixture(capsys, tmp_path, corpus_dir)
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"search": {"k": 1}}), encoding="utf-8")
        code, out, _ = run_cli(
            capsys, "search", "--index-dir", str(index_dir), "--text", "bread",
            "--config", str(cfg),
        )
        assert code == 0
        assert len(out.strip().splitlines()) == 2

    def test_env_overrides_config(self, capsys, tmp_path, corpus_dir, monkeypatch):
        index_dir, _ = build_fixture(capsys, tmp_path, corpus_dir)
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"search": {"k": 1}}), encoding="utf-8")
        monkeypatch.setenv("ECOVECTOR_K", "2")
        code, out, _ = run_cli(
            capsys, "search", "--index-dir", str(index_dir), "--text", "bread",
            "--config", str(cfg),
        )
        assert code == 0
        assert len(out.strip().splitlines()) == 3

    def test_flag_overrides_env(self, capsys, tmp_path, corpus_dir, monkeypatch):
        index_dir, _ = build_fixture(capsys, tmp_path, corpus_dir)
        monkeypatch.setenv("ECOVECTOR_K", "2")
        code, out, _ = run_cli(
            capsys, "search", "--index-dir", str(index_dir), "--text", "bread", "--k", "1"
        )
        assert code == 0
        assert len(out.strip().splitlines()) == 2

    def test_env_index_dir(self, capsys, tmp_path, corpus_dir, monkeypatch):
        index_dir, _ = build_fixture(capsys, tmp_path, corpus_dir)
        monkeypatch.setenv("ECOVECTOR_INDEX_DIR", str(index_dir))
        code, out, _ = run_cli(capsys, "search", "--text", "bread", "--k", "1")
        assert code == 0
        assert len(out.strip().splitlines()) == 2

    def test_malformed_env_int_diagnosed(self, capsys, tmp_path, monkeypatch):
        monkeypatch.setenv("ECOVECTOR_K", "many")
        code, _, err = run_cli(
            capsys, "search", "--index-dir", str(tmp_path), "--text", "x"
        )
        assert code == 1
        assert "ECOVECTOR_K" in err


@pytest.fixture(scope="module")
def bench_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("benchdata")
    points, centers, rs = make_mixture(400, 16, 20, 0.6, seed=61)
    queries = np.empty((25, 16), dtype=np.float32)
    for i in range(25):
        a, b = rs.randint(20), rs.randint(20)
        w = rs.uniform(0.35, 0.65)
        queries[i] = w * centers[a] + (1 - w) * centers[b] + rs.randn(16) * 0.6
    write_fvecs(root / "base.fvecs", points)
    write_fvecs(root / "queries.fvecs", queries)
    return root, points, queries


class TestBench:
    def run_bench(self, capsys, tmp_path, bench_data, *extra):
        root, _, _ = bench_data
        out_csv = tmp_path / "report.csv"
        code, out, err = run_cli(
            capsys, "bench", "--vectors", str(root / "base.fvecs"),
            "--queries", str(root / "queries.fvecs"),
            "--index-dir", str(tmp_path / "bench"),
            "--nc", "8", "--k", "10", "--seed", "1",
            "--csv-out", str(out_csv), *extra,
        )
        assert code == 0, err
        assert f"wrote" in out
        with open(out_csv, newline="", encoding="utf-8") as handle:
            return list(csv.DictReader(handle))

    def test_report_columns_and_exact_row(self, capsys, tmp_path, bench_data):
        rows = self.run_bench(capsys, tmp_path, bench_data)
        assert list(rows[0].keys()) == BENCH_COLUMNS
        exact = [r for r in rows if r["label"] == "exact"]
        assert len(exact) == 1
        assert float(exact[0]["recall_at_k"]) == 1.0
        assert exact[0]["n_probe"] == "8"

    def test_recall_monotone_in_n_probe(self, capsys, tmp_path, bench_data):
        rows = self.run_bench(capsys, tmp_path, bench_data)
        for ef in ("32", "64"):
            sweep = [r for r in rows if r["label"] == "sweep" and r["ef_l"] == ef]
            probes = [int(r["n_probe"]) for r in sweep]
            assert probes == sorted(probes)
            recalls = [float(r["recall_at_k"]) for r in sweep]
            assert recalls == sorted(recalls), f"ef_l={ef}: {recalls}"
            assert recalls[-1] > recalls[0]

    def test_model_columns_populated(self, capsys, tmp_path, bench_data):
        rows = self.run_bench(capsys, tmp_path, bench_data)
        for row in rows:
            assert float(row["mean_distance_ops"]) > 0
            assert float(row["model_search_ops"]) > 0
            assert float(row["ops_ratio"]) > 0
            assert float(row["edges_ratio"]) > 0
            assert float(row["qps"]) > 0
            assert float(row["mean_bytes_read"]) > 0
            assert float(row["model_energy_j"]) > 0
            assert row["ops_in_band"] in {"true", "false"}

    def test_ground_truth_file_matches_brute_force(self, capsys, tmp_path, bench_data):
        root, points, queries = bench_data
        dists = (
            np.linalg.norm(
                queries[:, None, :].astype(np.float64)
                - points[None, :, :].astype(np.float64),
                axis=2,
            )
        )
        gt = np.argsort(dists, axis=1, kind="stable")[:, :10].astype(np.int32)
        gt_path = tmp_path / "gt.ivecs"
        write_ivecs(gt_path, gt)
        with_gt = self.run_bench(
            capsys, tmp_path, bench_data, "--ground-truth", str(gt_path)
        )
        without = self.run_bench(capsys, tmp_path, bench_data)
        strip = lambda rows: [
            {k: v for k, v in row.items() if k != "qps"} for row in rows
        ]
        assert strip(with_gt) == strip(without)

    def test_pinned_sweep_flags(self, capsys, tmp_path, bench_data):
        rows = self.run_bench(
            capsys, tmp_path, bench_data, "--n-probe", "4", "--ef-l", "48"
        )
        sweep = [r for r in rows if r["label"] == "sweep"]
        assert len(sweep) == 1
        assert (sweep[0]["n_probe"], sweep[0]["ef_l"]) == ("4", "48")

    def test_deterministic_given_seed(self, capsys, tmp_path, bench_data):
        first = self.run_bench(capsys, tmp_path, bench_data)
        second = self.run_bench(capsys, tmp_path, bench_data)
        strip = lambda rows: [
            {k: v for k, v in row.items() if k != "qps"} for row in rows
        ]
        assert strip(first) == strip(second)

    def test_stdout_mode(self, capsys, tmp_path, bench_data):
        root, _, _ = bench_data
        code, out, err = run_cli(
            capsys, "bench", "--vectors", str(root / "base.fvecs"),
            "--queries", str(root / "queries.fvecs"),
            "--index-dir", str(tmp_path / "bench"),
            "--nc", "8", "--k", "10", "--seed", "1", "--n-probe", "2",
        )
        assert code == 0, err
        rows = list(csv.DictReader(out.splitlines()))
        assert list(rows[0].keys()) == BENCH_COLUMNS

    def test_malformed_dataset_diagnosed(self, capsys, tmp_path):
        bad = tmp_path / "bad.fvecs"
        bad.write_bytes(b"\x02\x00\x00\x00\x00")
        code, _, err = run_cli(
            capsys, "bench", "--vectors", str(bad), "--queries", str(bad),
            "--index-dir", str(tmp_path / "b"),
        )
        assert code == 1
        assert "error:" in err
