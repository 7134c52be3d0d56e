import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mafin.augmodel import AugmentingModel
from mafin.evalx import (
    EvalReport,
    MetricSpec,
    NoRelevantError,
    comparison_table,
    dcg_at_k,
    default_specs,
    evaluate,
    evaluate_ranked,
    ndcg_at_k,
    recall_at_k,
)
from mafin.ingest import Corpus, Passage, Query
from mafin.providers import StubProvider
from mafin.scoring import RankedList, Scorer, read_ranked_tsv, topk_from_scores, write_ranked_tsv
from oracles import naive_ndcg, naive_recall


def random_instance(rng):
    n = int(rng.integers(1, 30))
    ids = [f"d{i}" for i in range(n)]
    ranked = [ids[i] for i in rng.permutation(n)]
    judged = rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)
    rel = {ids[i]: int(rng.integers(0, 4)) for i in judged}
    rel[ids[int(judged[0])]] = int(rng.integers(1, 4))
    return ranked, rel, int(rng.integers(1, 35))


class TestRecall:
    def test_examples(self):
        assert recall_at_k(["a", "x", "y"], {"a": 1, "b": 1}, 3) == 0.5
        assert recall_at_k(["b", "a", "c"], {"a": 2, "b": 1}, 2) == 1.0

    def test_no_relevant(self):
        with pytest.raises(NoRelevantError):
            recall_at_k(["a"], {"a": 0}, 1)

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1))
    def test_monotone_in_k(self, seed):
        ranked, rel, _ = random_instance(np.random.default_rng(seed))
        vals = [recall_at_k(ranked, rel, k) for k in range(1, len(ranked) + 2)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))


class TestDCG:
    def test_examples(self):
        rel = {"a": 2, "b": 1, "c": 0}
        assert abs(dcg_at_k(["a", "b", "c"], rel, 3) - 3.6309298) < 1e-7
        assert abs(dcg_at_k(["c", "b", "a"], rel, 3) - 2.1309298) < 1e-7
        assert dcg_at_k(["x", "y"], {"x": 0}, 2) == 0.0
        assert abs(dcg_at_k(["a", "b", "c"], rel, 3) - (3 + 1 / math.log2(3))) < 1e-15

    def test_ndcg_examples(self):
        rel = {"a": 2, "b": 1, "c": 0}
        assert ndcg_at_k(["a", "b", "c"], rel, 3) == 1.0
        assert abs(ndcg_at_k(["c", "b", "a"], rel, 3) - 0.5868827) < 1e-7
        assert ndcg_at_k(["z", "q"], {"z": 1}, 1) == 1.0

    def test_ideal_uses_all_judged(self):
        # the second relevant passage is never retrieved but still counts in the ideal
        assert abs(ndcg_at_k(["a"], {"a": 1, "b": 1}, 2) - 1 / (1 + 1 / math.log2(3))) < 1e-15

    def test_no_relevant(self):
        with pytest.raises(NoRelevantError):
            ndcg_at_k(["a"], {}, 3)

    def test_oracle_500(self):
        rng = np.random.default_rng(20)
        for _ in range(500):
            ranked, rel, k = random_instance(rng)
            assert abs(recall_at_k(ranked, rel, k) - naive_recall(ranked, rel, k)) <= 1e-12
            assert abs(ndcg_at_k(ranked, rel, k) - naive_ndcg(ranked, rel, k)) <= 1e-12

    @settings(max_examples=100)
    @given(st.integers(0, 2**32 - 1))
    def test_ndcg_bounded_and_one_iff_sorted(self, seed):
        ranked, rel, k = random_instance(np.random.default_rng(seed))
        v = ndcg_at_k(ranked, rel, k)
        assert 0.0 <= v <= 1.0 + 1e-12
        gains = [rel.get(d, 0) for d in ranked[:k]]
        ideal = sorted((r for r in rel.values() if r > 0), reverse=True)[:k]
        assert (abs(v - 1.0) < 1e-12) == (gains[: len(ideal)] == ideal)

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1))
    def test_rank_only(self, seed):
        rng = np.random.default_rng(seed)
        ranked, rel, k = random_instance(rng)
        scores = rng.standard_normal(len(ranked))
        a = topk_from_scores("q", ranked, scores, k)
        b = topk_from_scores("q", ranked, 2 * scores + 1, k)
        assert ndcg_at_k(a, rel, k) == ndcg_at_k(b, rel, k)
        assert recall_at_k(a, rel, k) == recall_at_k(b, rel, k)


class TestReports:
    def test_means_and_exclusion(self):
        ranked = [RankedList("q1", [("a", 1.0)]), RankedList("q2", [("b", 1.0)]), RankedList("q3", [("c", 1.0)])]
        qrels = {"q1": {"a": 1}, "q2": {"x": 1}, "q3": {"c": 0}}
        rep = evaluate_ranked(ranked, qrels, default_specs((1,)))
        assert rep.means == {"Recall@1": 0.5, "NDCG@1": 0.5}
        assert rep.n_queries == 2 and rep.n_excluded == 1

    def test_spec_validation(self):
        assert MetricSpec("ndcg", (5, 1, 5)).cutoffs == (1, 5)
        with pytest.raises(ValueError):
            MetricSpec("map", (1,))
        with pytest.raises(ValueError):
            MetricSpec("recall", (0,))

    def test_single_query_perfect(self):
        corpus = Corpus([Passage("d1", "exact words here"), Passage("d2", "something else entirely")])
        scorer = Scorer("bb_only", provider=StubProvider(0, 64))
        rep = evaluate(scorer, [Query("q", "exact words here")], corpus, {"q": {"d1": 1}}, default_specs((1,)))
        assert rep.means == {"Recall@1": 1.0, "NDCG@1": 1.0}

    def test_depth(self, small_toy):
        scorer = Scorer("bb_only", provider=StubProvider(0, 16))
        with pytest.raises(ValueError):
            evaluate(scorer, list(small_toy.queries)[:2], small_toy.corpus, small_toy.qrels, default_specs((5,)), depth=3)

    def test_live_equals_persisted(self, tmp_path, small_toy):
        scorer = Scorer("mafin", provider=StubProvider(0, 16), model=AugmentingModel.init(8, 1 << 10))
        specs = default_specs((1, 3, 5))
        live, ranked = evaluate(scorer, list(small_toy.queries), small_toy.corpus, small_toy.qrels, specs, return_ranked=True)
        write_ranked_tsv(ranked, tmp_path / "run.tsv")
        again = evaluate_ranked(read_ranked_tsv(tmp_path / "run.tsv"), small_toy.qrels, specs, "mafin")
        assert again.dumps(with_timestamp=False) == live.dumps(with_timestamp=False)

    def test_json_and_table(self):
        a = EvalReport("bb_only", {"Recall@1": 0.5, "NDCG@1": 0.25}, {}, 2, 0)
        b = EvalReport("mafin", {"Recall@1": 0.75, "NDCG@1": 0.5}, {}, 2, 0)
        assert "timestamp" in json.loads(a.dumps()) and "timestamp" not in json.loads(a.dumps(False))
        table = comparison_table([a, b]).splitlines()
        assert table[0].split() == ["Model", "Recall@1", "NDCG@1"]
        assert table[2].split()[0] == "bb_only" and table[3].split()[0] == "mafin"
        assert "0.7500" in table[3]
