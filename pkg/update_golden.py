import difflib
import os
import sys
import tempfile

from retrieval_kernels.__main__ import main
from retrieval_kernels.embedder import EmbedderSpec, ToyEmbedder

ROOT = os.path.dirname(os.path.abspath(__file__))
GOLDEN_DIR = os.path.join(ROOT, "tests", "golden")
FIXTURE_DIR = os.path.join(ROOT, "tests", "data", "pipeline")


def _toy_vector():
    vec = ToyEmbedder(EmbedderSpec(dim=8, seed=7)).embed_text("a b a").values
    return "".join(f"{v:.12f}\n" for v in vec)


def pipeline_steps(fixture_dir, work_dir):
    """ingest, embed, index, search, rerank, eval and mine over ``fixture_dir``.

    Returns the argv of every step and a map of golden file name to the output
    it is compared with.
    """
    corpus = os.path.join(fixture_dir, "corpus.jsonl")
    queries = os.path.join(fixture_dir, "queries.jsonl")
    qrels = os.path.join(fixture_dir, "qrels.txt")
    out = {
        name: os.path.join(work_dir, name)
        for name in (
            "chunks.jsonl", "embeddings.bin", "index.bin", "search.txt", "run.txt",
            "report.yaml", "negatives.jsonl",
        )
    }
    steps = [
        ["ingest", "--corpus", corpus, "--output", out["chunks.jsonl"],
         "--chunk-size", "4", "--overlap", "1"],
        ["embed", "--corpus", corpus, "--output", out["embeddings.bin"], "--quiet"],
        ["index", "--cache", out["embeddings.bin"], "--output", out["index.bin"]],
        ["search", "--index", out["index.bin"], "--queries", queries,
         "--output", out["search.txt"], "--quiet"],
        ["rerank", "--run", out["search.txt"], "--corpus", corpus, "--queries", queries,
         "--output", out["run.txt"], "--reranker", "overlap"],
        ["eval", "--run", out["run.txt"], "--qrels", qrels, "--output", out["report.yaml"]],
        ["mine", "--qrels", qrels, "--index", out["index.bin"], "--queries", queries,
         "--corpus", corpus, "--output", out["negatives.jsonl"], "--quiet"],
    ]
    goldens = {
        "fixture_chunks.jsonl": out["chunks.jsonl"],
        "fixture_report.yaml": out["report.yaml"],
        "fixture_negatives.jsonl": out["negatives.jsonl"],
    }
    return steps, goldens


def _pipeline_outputs():
    with tempfile.TemporaryDirectory() as tmpdir:
        steps, goldens = pipeline_steps(FIXTURE_DIR, tmpdir)
        for argv in steps:
            status = main(argv)
            if status != 0:
                raise RuntimeError(f"{argv[0]} exited with status {status}")
        texts = {}
        for name, path in goldens.items():
            with open(path, encoding="utf-8") as f:
                texts[name] = f.read()
        return texts


def generate():
    return {"toy_dim8_seed7.txt": _toy_vector(), **_pipeline_outputs()}


def update_golden(dry_run):
    os.makedirs(GOLDEN_DIR, exist_ok=True)
    for name, new in generate().items():
        path = os.path.join(GOLDEN_DIR, name)
        old = ""
        if os.path.exists(path):
            with open(path, encoding="utf-8") as f:
                old = f.read()

        diff = "".join(difflib.unified_diff(
            old.splitlines(keepends=True),
            new.splitlines(keepends=True),
            fromfile=f"a/{name}",
            tofile=f"b/{name}",
        ))
        print(f"{name}: {'unchanged' if not diff else 'changed'}", flush=True)
        if diff:
            print(diff, flush=True)
            if not dry_run:
                with open(path, "w", encoding="utf-8", newline="\n") as f:
                    f.write(new)


if __name__ == "__main__":
    if len(sys.argv) > 2:
        raise RuntimeError("Need 0 or 1 arguments")
    if len(sys.argv) == 2 and sys.argv[1] == '--dry-run':
        dry_run = True
    else:
        dry_run = False

    update_golden(dry_run)
