import json
import logging

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mafin.ingest import (
    Corpus,
    DataError,
    Passage,
    Query,
    QuerySet,
    SplitSpec,
    load_beir,
    load_corpus,
    load_qrels,
    load_queries,
    split,
    validate_qrels,
    write_corpus,
)


def write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


class TestCorpus:
    def test_two_lines(self, tmp_path):
        p = write_lines(
            tmp_path / "c.jsonl",
            [json.dumps({"_id": "d1", "title": "", "text": "a b"}), json.dumps({"_id": "d2", "title": "T", "text": "c"})],
        )
        c = load_corpus(p)
        assert len(c) == 2 and c.ids == ["d1", "d2"]
        assert c["d2"].embed_text() == "T c"
        assert c["d2"].embed_text(use_title=False) == "c"
        assert c["d1"].embed_text() == "a b"

    def test_missing_text_reports_line(self, tmp_path):
        p = write_lines(tmp_path / "c.jsonl", [json.dumps({"_id": "d1", "text": "x"}), json.dumps({"_id": "d2", "title": "t"})])
        with pytest.raises(DataError, match=r":2:.*'text'"):
            load_corpus(p)

    def test_malformed_json_reports_line(self, tmp_path):
        p = write_lines(tmp_path / "c.jsonl", [json.dumps({"_id": "d1", "text": "x"}), "{nope"])
        with pytest.raises(DataError, match=":2:"):
            load_corpus(p)

    def test_duplicate_id(self, tmp_path):
        row = json.dumps({"_id": "d1", "text": "x"})
        with pytest.raises(DataError, match="duplicate"):
            load_corpus(write_lines(tmp_path / "c.jsonl", [row, row]))

    def test_empty_file_warns(self, tmp_path, caplog):
        p = tmp_path / "c.jsonl"
        p.write_text("")
        with caplog.at_level(logging.WARNING):
            assert len(load_corpus(p)) == 0
        assert "empty" in caplog.text

    def test_round_trip(self, tmp_path, small_toy):
        write_corpus(small_toy.corpus, tmp_path / "c.jsonl")
        again = load_corpus(tmp_path / "c.jsonl")
        assert list(again) == list(small_toy.corpus)


def test_queries_duplicate_and_empty(tmp_path):
    p = write_lines(tmp_path / "q.jsonl", [json.dumps({"_id": "q1", "text": "x"}), json.dumps({"_id": "q1", "text": "y"})])
    with pytest.raises(DataError, match="duplicate"):
        load_queries(p)
    p = write_lines(tmp_path / "q2.jsonl", [json.dumps({"_id": "q1", "text": "  "})])
    with pytest.raises(DataError, match=":1:"):
        load_queries(p)


class TestQrels:
    def qrels(self, tmp_path, rows, header="query-id\tcorpus-id\tscore"):
        return write_lines(tmp_path / "q.tsv", [header, *rows])

    def test_graded(self, tmp_path):
        assert load_qrels(self.qrels(tmp_path, ["q1\td1\t2"])) == {"q1": {"d1": 2}}

    def test_negative_clamped(self, tmp_path, caplog):
        with caplog.at_level(logging.WARNING):
            assert load_qrels(self.qrels(tmp_path, ["q1\td1\t-1"])) == {"q1": {"d1": 0}}
        assert "clamped" in caplog.text

    def test_header_only(self, tmp_path):
        assert load_qrels(self.qrels(tmp_path, [])) == {}

    def test_last_duplicate_wins(self, tmp_path, caplog):
        with caplog.at_level(logging.WARNING):
            assert load_qrels(self.qrels(tmp_path, ["q1\td1\t1", "q1\td1\t2"])) == {"q1": {"d1": 2}}
        assert "duplicate" in caplog.text

    def test_non_integer_score(self, tmp_path):
        with pytest.raises(DataError, match=":2:.*non-integer"):
            load_qrels(self.qrels(tmp_path, ["q1\td1\t1.5"]))

    def test_bad_header(self, tmp_path):
        with pytest.raises(DataError, match="header"):
            load_qrels(self.qrels(tmp_path, ["q1\td1\t1"], header="qid\tdid\tscore"))

    def test_unknown_ids(self, tmp_path):
        corpus = Corpus([Passage("d1", "x")])
        queries = QuerySet([Query("q1", "y")])
        with pytest.raises(DataError, match="'d9'"):
            load_qrels(self.qrels(tmp_path, ["q1\td9\t1"]), corpus, queries)
        with pytest.raises(DataError, match="'q9'"):
            validate_qrels({"q9": {"d1": 1}}, corpus, queries)


class TestSplit:
    def setup_method(self):
        self.queries = QuerySet(Query(f"q{i}", f"text {i}") for i in range(10))
        self.qrels = {f"q{i}": {"d": 1} for i in range(10)}

    def test_fraction(self):
        s = split(self.queries, self.qrels, SplitSpec(0.8, seed=7))
        assert len(s.train) == 8 and len(s.validation) == 2
        again = split(self.queries, self.qrels, SplitSpec(0.8, seed=7))
        assert s == again
        assert set(s.train).isdisjoint(s.validation)
        assert set(s.train) | set(s.validation) == set(self.queries.ids)

    def test_fraction_one_is_invalid(self):
        with pytest.raises(ValueError):
            split(self.queries, self.qrels, SplitSpec(1.0, seed=7))

    def test_empty_validation(self):
        two = QuerySet([Query("a", "x"), Query("b", "y")])
        with pytest.raises(ValueError, match="validation"):
            split(two, {"a": {"d": 1}, "b": {"d": 1}}, SplitSpec(0.9))

    def test_provided_keeps_file_order(self):
        provided = {"train": {"q3": {}, "q1": {}}, "dev": {"q2": {}}, "test": {"q0": {}}}
        s = split(self.queries, self.qrels, SplitSpec(mode="use-provided-splits"), provided)
        assert (s.train, s.validation, s.test) == (["q3", "q1"], ["q2"], ["q0"])

    def test_provided_overlap(self):
        provided = {"train": {"q1": {}}, "dev": {"q1": {}}}
        with pytest.raises(ValueError, match="two splits"):
            split(self.queries, self.qrels, SplitSpec(mode="use-provided-splits"), provided)

    def test_qrels_travel_with_queries(self):
        s = split(self.queries, self.qrels, SplitSpec(0.5, seed=1))
        assert set(s.qrels_for("train", self.qrels)) == set(s.train)

    @settings(max_examples=40)
    @given(st.integers(2, 60), st.floats(0.05, 0.95), st.integers(0, 2**31))
    def test_partition_property(self, n, frac, seed):
        queries = QuerySet(Query(f"q{i}", "t") for i in range(n))
        qrels = {f"q{i}": {"d": 1} for i in range(n)}
        try:
            s = split(queries, qrels, SplitSpec(frac, seed))
        except ValueError:
            n_train = int(frac * n + 0.5)
            assert n_train in (0, n)
            return
        assert sorted(s.train + s.validation) == sorted(queries.ids)
        assert s == split(queries, qrels, SplitSpec(frac, seed))


def test_load_beir(beir_dir):
    ds = load_beir(beir_dir)
    assert len(ds.corpus) == 60 and len(ds.queries) == 40
    assert set(ds.qrels) == {"dev", "test"}
    assert len(ds.all_qrels) == 40
