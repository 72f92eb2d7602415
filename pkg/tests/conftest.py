import os

import numpy as np
import pytest

from retrieval_kernels import fixtures

GOLDEN_DIR = os.path.join(os.path.dirname(__file__), "golden")


@pytest.fixture
def rng():
    return np.random.default_rng(20240108)


@pytest.fixture(scope="session")
def planted():
    return fixtures.planted_corpus()


@pytest.fixture
def fixture_dir(tmp_path, planted):
    """The planted fixture written as corpus.jsonl, queries.jsonl and qrels.txt."""
    fixtures.write_fixture(str(tmp_path), planted)
    return tmp_path


def check_golden(name: str, text: str) -> None:
    """Compare ``text`` with a committed golden file."""
    path = os.path.join(GOLDEN_DIR, name)
    if not os.path.exists(path):
        pytest.fail(f"golden file {name} is missing; generate it with update_golden.py")
    with open(path, encoding="utf-8") as f:
        assert f.read() == text, f"{name} differs; regenerate with update_golden.py"
