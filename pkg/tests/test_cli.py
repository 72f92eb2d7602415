import json
import math
import os

import pytest
import requests
import yaml

from conftest import check_golden
from retrieval_kernels import bench, embedder
from retrieval_kernels.__main__ import build_parser, build_request, main
from retrieval_kernels.errors import InvalidConfig
from retrieval_kernels.index import ScoredHit
from retrieval_kernels.math_kernels import plistmle_loss
from retrieval_kernels.metrics import evaluate, read_qrels, read_run, write_run

FIXTURE = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data", "pipeline")


def run_ok(*argv):
    assert main(list(argv)) == 0


def pipeline(root):
    """synth, embed, index and search; returns the paths involved."""
    fx = root / "fixture"
    paths = {
        "corpus": str(fx / "corpus.jsonl"),
        "queries": str(fx / "queries.jsonl"),
        "qrels": str(fx / "qrels.txt"),
        "cache": str(root / "embeddings.bin"),
        "index": str(root / "index.bin"),
        "run": str(root / "run.txt"),
    }
    run_ok("synth", "--output-dir", str(fx))
    run_ok("embed", "--corpus", paths["corpus"], "--output", paths["cache"], "--quiet")
    run_ok("index", "--cache", paths["cache"], "--output", paths["index"])
    run_ok(
        "search", "--index", paths["index"], "--queries", paths["queries"],
        "--output", paths["run"], "--quiet",
    )
    return paths


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    return pipeline(tmp_path_factory.mktemp("pipeline"))


def error_line(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return err[-1]


def test_search_writes_twenty_hits_per_query(built):
    run = read_run(built["run"])
    assert len(run) == 40
    assert all(len(hits) == 20 for hits in run.values())


def test_ingest(built, tmp_path, capsys):
    out = str(tmp_path / "chunks.jsonl")
    run_ok("ingest", "--corpus", built["corpus"], "--output", out, "--chunk-size", "16", "--overlap", "4")
    assert "chunks for 200 documents" in capsys.readouterr().out
    with open(out, encoding="utf-8") as f:
        records = [json.loads(line) for line in f]
    assert all(r["token_end"] - r["token_start"] <= 16 for r in records)
    assert {r["doc_id"] for r in records} == {f"doc-{i:04d}" for i in range(200)}


def test_identity_rerank_reproduces_the_run(built, tmp_path):
    out = tmp_path / "identity.txt"
    run_ok(
        "rerank", "--run", built["run"], "--corpus", built["corpus"],
        "--queries", built["queries"], "--output", str(out), "--reranker", "identity",
    )
    with open(built["run"], "rb") as f:
        assert out.read_bytes() == f.read()


def test_oracle_rerank_never_hurts(built, tmp_path):
    out = str(tmp_path / "oracle.txt")
    run_ok(
        "rerank", "--run", built["run"], "--corpus", built["corpus"],
        "--queries", built["queries"], "--output", out,
        "--reranker", "oracle", "--qrels", built["qrels"],
    )
    qrels = read_qrels(built["qrels"])
    before = evaluate(read_run(built["run"]), qrels)
    after = evaluate(read_run(out), qrels)
    for name in before.metrics:
        if name.startswith("ndcg"):
            assert after.metrics[name] >= before.metrics[name] - 1e-12


def test_oracle_rerank_needs_qrels(built, tmp_path, capsys):
    status = main([
        "rerank", "--run", built["run"], "--corpus", built["corpus"],
        "--queries", built["queries"], "--output", str(tmp_path / "o.txt"), "--reranker", "oracle",
    ])
    assert status == 3
    assert error_line(capsys) == "error: INVALID_CONFIG: rerank: missing --qrels"


def test_mine(built, tmp_path):
    out = tmp_path / "negatives.jsonl"
    run_ok(
        "mine", "--qrels", built["qrels"], "--index", built["index"], "--queries", built["queries"],
        "--corpus", built["corpus"], "--output", str(out), "--quiet", "--workers", "3",
    )
    records = [json.loads(line) for line in out.read_text(encoding="utf-8").splitlines()]
    qrels = read_qrels(built["qrels"])
    assert len(records) == sum(g > 0 for grades in qrels.values() for g in grades.values())
    for r in records:
        grades = qrels[r["query_id"]]
        assert grades[r["positive_id"]] > 0
        assert len(r["negatives"]) <= 8
        assert all(grades.get(n, 0) == 0 for n in r["negatives"])


def test_eval_of_the_ideal_run(built, tmp_path, capsys):
    qrels = read_qrels(built["qrels"])
    ideal = {
        qid: [ScoredHit(d, float(g)) for d, g in sorted(grades.items(), key=lambda p: (-p[1], p[0]))]
        for qid, grades in qrels.items()
    }
    path = str(tmp_path / "ideal.txt")
    write_run(path, ideal)
    run_ok("eval", "--run", path, "--qrels", built["qrels"])
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "ndcg@10 1.0000"
    assert "match@5 1.0000" in out
    assert out[-1].startswith("evaluated 40 queries")


@pytest.fixture(scope="module")
def committed(tmp_path_factory):
    """The committed fixture through ingest, embed, index, search, rerank, eval and mine."""
    work = tmp_path_factory.mktemp("committed")
    corpus, queries, qrels = (
        os.path.join(FIXTURE, name) for name in ("corpus.jsonl", "queries.jsonl", "qrels.txt")
    )
    out = {name: str(work / name) for name in (
        "chunks.jsonl", "embeddings.bin", "index.bin", "search.txt", "run.txt",
        "report.yaml", "negatives.jsonl",
    )}
    run_ok(
        "ingest", "--corpus", corpus, "--output", out["chunks.jsonl"],
        "--chunk-size", "4", "--overlap", "1",
    )
    run_ok("embed", "--corpus", corpus, "--output", out["embeddings.bin"], "--quiet")
    run_ok("index", "--cache", out["embeddings.bin"], "--output", out["index.bin"])
    run_ok(
        "search", "--index", out["index.bin"], "--queries", queries,
        "--output", out["search.txt"], "--quiet",
    )
    run_ok(
        "rerank", "--run", out["search.txt"], "--corpus", corpus, "--queries", queries,
        "--output", out["run.txt"], "--reranker", "overlap",
    )
    run_ok("eval", "--run", out["run.txt"], "--qrels", qrels, "--output", out["report.yaml"])
    run_ok(
        "mine", "--qrels", qrels, "--index", out["index.bin"], "--queries", queries,
        "--corpus", corpus, "--output", out["negatives.jsonl"], "--quiet",
    )
    return out


@pytest.mark.parametrize("golden,output", [
    ("fixture_chunks.jsonl", "chunks.jsonl"),
    ("fixture_report.yaml", "report.yaml"),
    ("fixture_negatives.jsonl", "negatives.jsonl"),
])
def test_committed_fixture_golden(committed, golden, output):
    with open(committed[output], encoding="utf-8") as f:
        check_golden(golden, f.read())


def test_committed_fixture_report(committed):
    with open(committed["report.yaml"], encoding="utf-8") as f:
        text = f.read()
    assert text.startswith("# run: run.txt\n# qrels: qrels.txt\n")
    data = yaml.safe_load(text)
    assert data["metrics"]["recall@5"] == 0.875
    assert data["metrics"]["accuracy@1"] == 0.75
    assert data["diagnostics"] == {
        "evaluated": 4, "not_in_qrels": 1, "no_relevant": 1, "not_in_run": 1,
    }


def test_committed_fixture_rerank_order(committed):
    run = read_run(committed["run.txt"])
    assert [h.doc_id for h in run["q4"][:3]] == ["d11", "d12", "d01"]
    assert [h.score for h in run["q2"][:3]] == [4.0, 3.0, 1.0]


def test_eval_per_query(built, tmp_path):
    report = tmp_path / "report.yaml"
    run_ok(
        "eval", "--run", built["run"], "--qrels", built["qrels"],
        "--output", str(report), "--per-query",
    )
    data = yaml.safe_load(report.read_text(encoding="utf-8"))
    assert len(data["per_query"]["ndcg@10"]) == data["diagnostics"]["evaluated"]


def test_pipeline_is_deterministic(built, tmp_path):
    again = pipeline(tmp_path)
    for key in ("corpus", "queries", "qrels", "cache", "run"):
        with open(built[key], "rb") as a, open(again[key], "rb") as b:
            assert a.read() == b.read(), key


def test_bench(tmp_path, capsys):
    report = str(tmp_path / "bench.yaml")
    run_ok(
        "bench", "--synth-docs", "6", "--mean-chars", "400", "--repeats", "2",
        "--output", report, "--quiet", "--label", "toy-256",
    )
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "working on 6 documents with the toy embedder"
    assert "toy-256" in out and "0.0%" in out
    saved = bench.read_report(report)
    assert saved.total_docs == 6 and len(saved.wall_times) == 2

    run_ok(
        "bench", "--synth-docs", "6", "--mean-chars", "400", "--repeats", "1",
        "--baseline", report, "--quiet", "--dim", "32",
    )
    table = capsys.readouterr().out
    assert "toy-256" in table and "\ntoy " in table


def test_bench_needs_a_corpus(capsys):
    assert main(["bench"]) == 3
    assert "--synth-docs" in error_line(capsys)


def test_loss(tmp_path, capsys):
    batch = tmp_path / "batch.jsonl"
    batch.write_text(
        json.dumps({"kind": "plistmle", "scores": [0.5, 2.0, -1.0], "labels": [2, 1, 0]}) + "\n"
        + json.dumps({"kind": "distillation", "student": [[1.0, 0.0]], "teacher": [[1.0, 0.0]]}) + "\n",
        encoding="utf-8",
    )
    run_ok("loss", "--batch", str(batch))
    lines = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert [r["kind"] for r in lines] == ["plistmle", "distillation"]
    assert lines[0]["value"] == pytest.approx(plistmle_loss([0.5, 2.0, -1.0], [0, 1, 2]).value)
    assert len(lines[0]["grad"]) == 3
    assert all(math.isfinite(r["value"]) for r in lines)


def test_loss_reports_the_line(tmp_path, capsys):
    batch = tmp_path / "batch.jsonl"
    batch.write_text('\n{"kind": "plistmle", "scores": [1.0]}\n', encoding="utf-8")
    assert main(["loss", "--batch", str(batch)]) == 2
    line = error_line(capsys)
    assert line.startswith("error: INVALID_INPUT: ")
    assert line.count("batch.jsonl:2:") == 1
    assert line.endswith("missing 'labels'")


class TestExitStatus:
    def test_missing_input_file(self, tmp_path, capsys):
        assert main(["ingest", "--corpus", str(tmp_path / "nope.jsonl"), "--output", "x"]) == 2
        assert error_line(capsys).startswith("error: INVALID_INPUT: corpus: no such file")

    def test_missing_flag(self, built, capsys):
        assert main(["ingest", "--corpus", built["corpus"]]) == 3
        assert error_line(capsys) == "error: INVALID_CONFIG: ingest: missing --output"

    def test_bad_depth(self, built, capsys):
        assert main(["eval", "--run", built["run"], "--qrels", built["qrels"], "--ndcg-k", "0"]) == 3

    def test_index_of_an_empty_cache(self, tmp_path, capsys):
        corpus = tmp_path / "corpus.jsonl"
        corpus.write_text("", encoding="utf-8")
        cache = str(tmp_path / "embeddings.bin")
        run_ok("embed", "--corpus", str(corpus), "--output", cache, "--quiet")
        assert main(["index", "--cache", cache, "--output", str(tmp_path / "index.bin")]) == 2
        assert error_line(capsys).endswith("cache holds no vectors to index")
        assert not (tmp_path / "index.bin").exists()

    def test_corrupt_index(self, built, tmp_path, capsys):
        index = tmp_path / "index.bin"
        index.write_bytes(b"definitely not an index file")
        status = main([
            "search", "--index", str(index), "--queries", built["queries"],
            "--output", str(tmp_path / "run.txt"), "--quiet",
        ])
        assert status == 4
        assert error_line(capsys).startswith("error: INTEGRITY: ")

    def test_transport(self, built, tmp_path, monkeypatch, capsys):
        def refuse(url, **kw):
            raise requests.ConnectionError("connection refused")

        monkeypatch.setattr(embedder.requests, "post", refuse)
        monkeypatch.delenv("RETRIEVAL_KERNELS_ENDPOINT", raising=False)
        status = main([
            "embed", "--corpus", built["corpus"], "--output", str(tmp_path / "e.bin"),
            "--embedder", "remote", "--endpoint", "http://embed.test", "--retries", "0", "--quiet",
        ])
        assert status == 5
        line = error_line(capsys)
        assert line.startswith("error: TRANSPORT: ") and "\n" not in line

    def test_protocol(self, built, tmp_path, monkeypatch, capsys):
        class Short:
            status_code = 200

            def raise_for_status(self):
                pass

            def json(self):
                return {"embeddings": []}

        monkeypatch.setattr(embedder.requests, "post", lambda url, **kw: Short())
        monkeypatch.delenv("RETRIEVAL_KERNELS_ENDPOINT", raising=False)
        status = main([
            "embed", "--corpus", built["corpus"], "--output", str(tmp_path / "e.bin"),
            "--embedder", "remote", "--endpoint", "http://embed.test", "--quiet",
        ])
        assert status == 6
        assert error_line(capsys).startswith("error: PROTOCOL: ")

    def test_unwritable_output(self, built, tmp_path, capsys):
        out = tmp_path / "missing-dir" / "chunks.jsonl"
        assert main(["ingest", "--corpus", built["corpus"], "--output", str(out)]) == 7
        assert error_line(capsys).startswith("error: IO: ")


class TestConfig:
    def test_merge_order(self):
        parser, known = build_parser()
        request = build_request(
            "eval", known, {"run": "r.txt", "ndcg_k": 5, "recall_k": 3}, {"recall_k": 7, "qrels": None}
        )
        assert request["ndcg_k"] == 5
        assert request["recall_k"] == 7
        assert request["match_k"] == 5
        assert request["qrels"] is None
        assert request["action"] == "eval"

    def test_config_file_and_flags(self, built, tmp_path, capsys):
        config = tmp_path / "eval.yaml"
        config.write_text(
            yaml.safe_dump({"action": "eval", "run": built["run"], "qrels": built["qrels"], "ndcg_k": 5}),
            encoding="utf-8",
        )
        run_ok("eval", "--config", str(config), "--recall-k", "3")
        names = [line.split()[0] for line in capsys.readouterr().out.splitlines()[:3]]
        assert names == ["ndcg@5", "recall@3", "match@5"]

    def test_unknown_key(self, tmp_path, capsys):
        config = tmp_path / "eval.yaml"
        config.write_text("ndcg_depth: 5\n", encoding="utf-8")
        assert main(["eval", "--config", str(config)]) == 3
        assert "unknown config keys ndcg_depth" in error_line(capsys)

    def test_config_for_another_action(self):
        _, known = build_parser()
        with pytest.raises(InvalidConfig):
            build_request("eval", known, {"action": "bench"})


class TestRequests:
    def test_check_and_run(self, tmp_path, capsys):
        requests_dir = tmp_path / "requests"
        requests_dir.mkdir()
        out = tmp_path / "fixture"
        (requests_dir / "01-synth.yml").write_text(
            f"action: synth\noutput_dir: {out}\ndocs: 30\nqueries: 5\n", encoding="utf-8"
        )
        run_ok("requests", "check", str(requests_dir))
        assert not out.exists()
        assert "checked" in capsys.readouterr().out

        run_ok("requests", "run", str(requests_dir))
        assert len(read_qrels(str(out / "qrels.txt"))) == 5

    def test_rejects_stray_files(self, tmp_path, capsys):
        (tmp_path / "synth.json").write_text("{}", encoding="utf-8")
        assert main(["requests", "check", str(tmp_path)]) == 3
        assert "non-YAML" in error_line(capsys)

    def test_needs_action(self, tmp_path, capsys):
        (tmp_path / "a.yaml").write_text("docs: 3\n", encoding="utf-8")
        assert main(["requests", "check", str(tmp_path)]) == 3
        assert "no action" in error_line(capsys)
