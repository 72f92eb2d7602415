"""The ``eval`` and ``bench`` actions."""
import os
import sys
from typing import Any, Dict

from ruamel.yaml import YAML
from ruamel.yaml.comments import CommentedMap

from . import bench
from .corpus import ChunkConfig, WhitespaceTokenizer, ingest
from .embedder import make_embedder
from .embedding_actions import EMBEDDER_DEFAULTS, add_embedder_arguments, embedder_spec
from .errors import InvalidConfig
from .metrics import evaluate, read_qrels, read_run
from .utils import require_files

HELP = {
    "eval": "score a run file against qrels",
    "bench": "measure embedding throughput in documents per second",
}

DEFAULTS = {
    "eval": {"ndcg_k": 10, "recall_k": 5, "match_k": 5, "per_query": False},
    "bench": {
        **EMBEDDER_DEFAULTS,
        "chunk_size": 512,
        "overlap": 100,
        "repeats": 3,
        "synth_docs": None,
        "mean_chars": 6393.0,
        "label": None,
        "baseline": None,
    },
}


def add_arguments(parser, action: str) -> None:
    if action == "eval":
        parser.add_argument("--run", help="run file to score")
        parser.add_argument("--qrels", help="relevance judgments")
        parser.add_argument("--output", help="YAML metric report to write")
        parser.add_argument("--ndcg-k", type=int, help="NDCG depth (10)")
        parser.add_argument("--recall-k", type=int, help="recall depth (5)")
        parser.add_argument("--match-k", type=int, help="match depth (5)")
        parser.add_argument(
            "--per-query", action="store_true", default=None, help="include per-query values"
        )
    else:
        parser.add_argument("--corpus", help="line-delimited {id, text} records")
        parser.add_argument("--synth-docs", type=int, help="synthesize this many documents instead")
        parser.add_argument("--mean-chars", type=float, help="synthetic mean length (6393)")
        parser.add_argument("--output", help="YAML throughput report to write")
        parser.add_argument("--chunk-size", type=int, help="tokens per chunk (512)")
        parser.add_argument("--overlap", type=int, help="tokens shared by neighbours (100)")
        parser.add_argument("--repeats", type=int, help="timed repeats (3)")
        parser.add_argument("--label", help="embedder name in the report")
        parser.add_argument("--baseline", help="report to compare against")
        add_embedder_arguments(parser)


def check(request: Dict[str, Any]) -> None:
    action = request["action"]
    assert action in ("eval", "bench"), f"Unknown action {action}"
    if action == "eval":
        require_files(request, "run", "qrels")
        for key in ("ndcg_k", "recall_k", "match_k"):
            if request[key] < 1:
                raise InvalidConfig(f"--{key.replace('_', '-')} must be positive")
        return

    if request.get("corpus"):
        require_files(request, "corpus")
    elif not request.get("synth_docs"):
        raise InvalidConfig("bench: give --corpus or --synth-docs")
    if request.get("baseline"):
        require_files(request, "baseline")
    if request["repeats"] < 1:
        raise InvalidConfig("--repeats must be positive")
    ChunkConfig(chunk_size=request["chunk_size"], overlap=request["overlap"])
    embedder_spec(request)


def write_metric_report(path: str, report: Dict[str, Any], run_path: str, qrels_path: str) -> None:
    data = CommentedMap(report)
    data.yaml_set_start_comment(
        f"run: {os.path.basename(run_path)}\nqrels: {os.path.basename(qrels_path)}"
    )
    yaml = YAML(typ="rt")
    with open(path, "w", encoding="utf-8") as f:
        yaml.dump(data, f)


def _eval(request: Dict[str, Any]) -> None:
    report = evaluate(
        read_run(request["run"]),
        read_qrels(request["qrels"]),
        ndcg_k=request["ndcg_k"],
        recall_k=request["recall_k"],
        match_k=request["match_k"],
    )
    for name, value in report.metrics.items():
        print(f"{name} {value:.4f}", flush=True)
    diag = report.diagnostics
    print(
        f"evaluated {diag.evaluated} queries "
        f"({diag.not_in_qrels} not in qrels, {diag.no_relevant} without relevant documents, "
        f"{diag.not_in_run} judged but not in run)",
        flush=True,
    )
    if request.get("output"):
        data = report.to_dict()
        if request["per_query"]:
            data["per_query"] = {
                name: {qid: round(v, 6) for qid, v in sorted(values.items())}
                for name, values in report.per_query.items()
            }
        write_metric_report(request["output"], data, request["run"], request["qrels"])
        print(f"wrote metric report to {request['output']}", flush=True)


def _bench(request: Dict[str, Any]) -> None:
    if request.get("corpus"):
        documents = ingest(request["corpus"])
    else:
        dist = bench.LengthDistribution(mean=request["mean_chars"])
        documents = bench.synth_corpus(request["synth_docs"], dist, request["seed"])
    spec = embedder_spec(request)
    print(f"working on {len(documents)} documents with the {spec.kind} embedder", flush=True)
    report = bench.measure_throughput(
        documents,
        make_embedder(spec),
        ChunkConfig(chunk_size=request["chunk_size"], overlap=request["overlap"]),
        batch_size=request["batch_size"],
        repeats=request["repeats"],
        tokenizer=WhitespaceTokenizer(request["max_token_bytes"]),
        label=request.get("label") or spec.kind,
        progress=not request["quiet"] and sys.stderr.isatty(),
    )
    for failure in report.failures:
        print(f"    failed {failure}", flush=True)
    baseline = bench.read_report(request["baseline"]) if request.get("baseline") else report
    reports = [report] if baseline is report else [baseline, report]
    print(bench.compare(reports, baseline), end="", flush=True)
    if request.get("output"):
        bench.write_report(request["output"], report)
        print(f"wrote throughput report to {request['output']}", flush=True)


def run(request: Dict[str, Any]) -> None:
    {"eval": _eval, "bench": _bench}[request["action"]](request)
