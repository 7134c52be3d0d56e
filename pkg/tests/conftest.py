import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mafin.ingest import write_corpus, write_qrels, write_queries  # noqa: E402
from mafin.providers import StubProvider  # noqa: E402
from mafin.synthetic import make_toy_dataset  # noqa: E402


@pytest.fixture(scope="session")
def small_toy():
    return make_toy_dataset(n_passages=60, n_queries=40, seed=3)


@pytest.fixture
def stub():
    return StubProvider(seed=0, dim=32)


@pytest.fixture
def beir_dir(tmp_path, small_toy):
    """A BEIR folder on disk: dev qrels for 30 queries, test qrels for 10."""
    root = tmp_path / "toy"
    (root / "qrels").mkdir(parents=True)
    write_corpus(small_toy.corpus, root / "corpus.jsonl")
    write_queries(small_toy.queries, root / "queries.jsonl")
    ids = small_toy.queries.ids
    write_qrels({q: small_toy.qrels[q] for q in ids[:30]}, root / "qrels" / "dev.tsv")
    write_qrels({q: small_toy.qrels[q] for q in ids[30:]}, root / "qrels" / "test.tsv")
    return root


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
