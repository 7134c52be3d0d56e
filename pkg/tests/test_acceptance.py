"""Acceptance criteria 1-9, one test each.

Every test prints a single ``criterion N: PASS|FAIL ...`` line (also collected
into the terminal summary by ``conftest.py``) and then asserts.
"""

import itertools
import math
import time

import numpy as np

import gradcheck
import mafin.trainer as trainer_mod
from mafin.core import EmbeddingVector, dot
from mafin.evalx import EvalReport, dcg_at_k, ndcg_at_k, recall_at_k
from mafin.experiment import ExperimentConfig, run
from mafin.ingest import Corpus, Passage, Query, QuerySet
from mafin.augmodel import AugmentingModel
from mafin.ranking import (
    delta_target,
    infonce_loss,
    pl_kl_loss,
    pl_prob,
    top1_kl_loss,
    top1_target,
)
from mafin.scoring import Scorer, lambda_mafin_embed, lambda_weights, mafin_embed
from mafin.trainer import SMOOTHING_GRID, LossConfig, TrainConfig, grid_search_smoothing, train
from oracles import naive_dcg, naive_ndcg, naive_recall, pl_cross_entropy_oracle

RESULTS: list[str] = []


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line, flush=True)
    assert ok, line


def unit(rng, d):
    v = rng.standard_normal(d)
    return v / math.sqrt(float(v @ v))


def test_criterion_1_mafin_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(1000):
        bq, bx, aq, ax = (EmbeddingVector(unit(rng, d)) for d in (32, 32, 16, 16))
        zq, zx = mafin_embed(bq, aq), mafin_embed(bx, ax)
        cos = dot(zq, zx) / (zq.norm * zx.norm)
        worst = max(worst, abs(cos - (dot(bq, bx) + dot(aq, ax)) / 2))
    dt = time.perf_counter() - t0
    record(1, worst <= 1e-12 and dt < 1.0, f"max |cos - (bb+aug)/2| = {worst:.2e} over 1000 pairs, {dt:.2f}s")


def test_criterion_2_lambda_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = worst_unit = 0.0
    for _ in range(1000):
        bq, bx = EmbeddingVector(unit(rng, 32)), EmbeddingVector(unit(rng, 32))
        uq, ux = unit(rng, 16), unit(rng, 16)
        a, b = rng.uniform(0, 5, 2)
        zq = lambda_mafin_embed(bq, EmbeddingVector(a * uq))
        zx = lambda_mafin_embed(bx, EmbeddingVector(b * ux))
        cos = dot(zq, zx) / (zq.norm * zx.norm)
        l1, l2 = lambda_weights(a, b)
        worst = max(worst, abs(cos - (l1 * dot(bq, bx) + l2 * float(uq @ ux))))
        # unit augment norms reduce to vanilla Mafin
        one = dot(lambda_mafin_embed(bq, EmbeddingVector(uq)), lambda_mafin_embed(bx, EmbeddingVector(ux)))
        van = dot(mafin_embed(bq, EmbeddingVector(uq)), mafin_embed(bx, EmbeddingVector(ux)))
        worst_unit = max(worst_unit, abs(one - van))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-10 and worst_unit <= 1e-12 and dt < 1.0
    record(2, ok, f"max weight-identity error {worst:.2e}, a=b=1 error {worst_unit:.2e}, {dt:.2f}s")


def test_criterion_3_ranking_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    sums = 0.0
    for k in range(1, 7):
        for _ in range(5):
            s = rng.normal(0, 2, k)
            sums = max(sums, abs(sum(pl_prob(s, pi) for pi in itertools.permutations(range(k))) - 1.0))
    pl = 0.0
    for _ in range(60):
        k = int(rng.integers(1, 6))
        y, s, tau = rng.integers(0, 4, k), rng.normal(0, 2, k), rng.uniform(0.2, 3)
        pl = max(pl, abs(pl_kl_loss(y, s, tau) - pl_cross_entropy_oracle(y, s, tau)))
    two = 0.0
    for _ in range(200):
        y, s, tau = rng.integers(0, 4, 2), rng.normal(0, 2, 2), rng.uniform(0.1, 3)
        two = max(two, abs(pl_kl_loss(y, s, tau) - top1_kl_loss(top1_target(y, tau), s)))
    nce = 0.0
    for _ in range(200):
        m = int(rng.integers(2, 64))
        s = rng.normal(0, 3, m)
        k = int(rng.integers(m))
        nce = max(nce, abs(infonce_loss(k, s) - top1_kl_loss(delta_target(k, m), s)))
    tv = 0.0
    for _ in range(200):
        k = int(rng.integers(2, 10))
        y = rng.permutation(k)  # unique maximum
        tv = max(tv, 0.5 * np.abs(top1_target(y, 1e-6) - delta_target(int(np.argmax(y)), k)).sum())
    dt = time.perf_counter() - t0
    ok = sums <= 1e-9 and pl <= 1e-9 and two <= 1e-12 and nce <= 1e-12 and tv <= 1e-6 and dt < 10.0
    record(3, ok, f"PL sum {sums:.1e}, PL vs oracle {pl:.1e}, K=2 pl/top1 {two:.1e}, infonce/top1 {nce:.1e}, tau->0 TV {tv:.1e}, {dt:.2f}s")


def test_criterion_4_gradients():
    t0 = time.perf_counter()
    worst, least = 0.0, math.inf
    for (kind, mode), loss in itertools.product(gradcheck.CASES, gradcheck.LOSSES):
        err, n = gradcheck.check(kind, mode, loss)
        worst, least = max(worst, err), min(least, n)
    dt = time.perf_counter() - t0
    ok = worst < 1e-4 and least >= 100 and dt < 60.0
    record(4, ok, f"max relative error {worst:.2e} over 5 scorers x 3 losses, >= {least} params each, {dt:.1f}s")


def test_criterion_5_metrics():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(500):
        n = int(rng.integers(1, 40))
        ids = [f"d{i}" for i in range(n)]
        ranked = [ids[i] for i in rng.permutation(n)]
        rel = {ids[i]: int(rng.integers(0, 4)) for i in rng.choice(n, int(rng.integers(1, n + 1)), replace=False)}
        rel[ranked[int(rng.integers(n))]] = int(rng.integers(1, 4))
        k = int(rng.integers(1, 45))
        worst = max(worst, abs(recall_at_k(ranked, rel, k) - naive_recall(ranked, rel, k)))
        worst = max(worst, abs(ndcg_at_k(ranked, rel, k) - naive_ndcg(ranked, rel, k)))
    rel = {"a": 2, "b": 1, "c": 0}
    d1, d2 = dcg_at_k(["a", "b", "c"], rel, 3), dcg_at_k(["c", "b", "a"], rel, 3)
    nd = ndcg_at_k(["c", "b", "a"], rel, 3)
    worked = abs(d1 - 3.6309298) < 5e-8 and abs(d2 - 2.1309298) < 5e-8 and abs(nd - 0.5868827) < 5e-8
    worked = worked and abs(d1 - naive_dcg([2, 1, 0], 3)) < 1e-15
    dt = time.perf_counter() - t0
    ok = worst <= 1e-12 and worked and dt < 5.0
    record(5, ok, f"max oracle gap {worst:.1e} on 500 instances; DCG {d1:.7f} / {d2:.7f}, NDCG {nd:.7f}; {dt:.2f}s")


# ---------------------------------------------------------------- end to end

_RUNS: dict[str, tuple[str, float, object]] = {}


def _experiment(supervised):
    key = "sup" if supervised else "unsup"
    if key not in _RUNS:
        t0 = time.perf_counter()
        res = run(ExperimentConfig(), supervised=supervised)
        _RUNS[key] = (res.dumps(), time.perf_counter() - t0, res)
    return _RUNS[key]


def _rel(a, b):
    return (a - b) / b


def test_criterion_6_supervised():
    _, dt, res = _experiment(True)
    bb, aug, maf = (res.reports[k].means for k in ("bb_only", "aug_only_ft", "mafin_sup"))
    wins = all(maf[m] > bb[m] and maf[m] > aug[m] for m in ("Recall@1", "NDCG@5"))
    margins = {m: _rel(maf[m], aug[m]) for m in ("Recall@1", "NDCG@5")}
    ok = 0.3 <= bb["Recall@1"] <= 0.7 and wins and min(margins.values()) >= 0.03 and dt < 300
    record(
        6, ok,
        f"R@1 bb {bb['Recall@1']:.3f} / aug_ft {aug['Recall@1']:.3f} / mafin {maf['Recall@1']:.3f}; "
        f"N@5 {bb['NDCG@5']:.4f} / {aug['NDCG@5']:.4f} / {maf['NDCG@5']:.4f}; "
        f"margin vs aug_ft R@1 {margins['Recall@1']:+.1%} N@5 {margins['NDCG@5']:+.1%}; {dt:.0f}s",
    )


def test_criterion_7_unsupervised():
    _, dt, res = _experiment(False)
    bb, maf = res.reports["bb_only"].means, res.reports["mafin_unsup"].means
    ok = maf["NDCG@5"] > bb["NDCG@5"] and dt < 300
    record(7, ok, f"N@5 bb {bb['NDCG@5']:.4f} vs mafin_unsup {maf['NDCG@5']:.4f}; {dt:.0f}s")


def test_criterion_8_determinism():
    first = {k: _experiment(k == "sup")[0] for k in ("sup", "unsup")}
    again = {k: run(ExperimentConfig(), supervised=(k == "sup")).dumps() for k in ("sup", "unsup")}
    same = {k: first[k] == again[k] for k in first}
    record(8, all(same.values()), f"byte-identical reports on rerun: supervised {same['sup']}, unsupervised {same['unsup']}")


# ---------------------------------------------------------------- protocol


def _scripted_stop(values, patience=4):
    """Stop epoch of a real training run whose validation metric follows ``values``."""
    corpus = Corpus([Passage(f"d{i}", f"word{i} other{i}") for i in range(4)])
    queries = QuerySet([Query("t", "word0"), Query("v", "word1")])
    qrels = {"t": {"d0": 1}, "v": {"d1": 1}}
    it = iter(values)
    real = trainer_mod.evaluate

    def scripted(*a, **k):
        rep = real(*a, **k)
        return EvalReport(rep.scorer, {name: next(it) for name in rep.means}, {}, 1, 0)

    trainer_mod.evaluate = scripted
    try:
        scorer = Scorer("aug_only", model=AugmentingModel.init(2, 64))
        rep = train(scorer, corpus, queries, {"t": qrels["t"]}, ["v"], qrels, LossConfig(negatives=2),
                    TrainConfig(max_epochs=len(values), patience=patience))
    finally:
        trainer_mod.evaluate = real
    return rep.stop_epoch


def test_criterion_9_protocol():
    cases = [
        ([0.5, 0.4, 0.4, 0.4, 0.4, 0.9, 0.9], 5),
        ([0.1, 0.2, 0.2, 0.3, 0.3, 0.3, 0.3, 0.3, 1.0], 8),
        ([0.1, 0.2, 0.3, 0.4, 0.5, 0.6], 6),
        ([0.5, 0.5, 0.5, 0.6, 0.5, 0.5, 0.5, 0.7, 0.7], 9),
    ]
    stops = [_scripted_stop(v) for v, _ in cases]
    early_ok = stops == [want for _, want in cases]
    corpus = Corpus([Passage(f"d{i}", f"word{i}") for i in range(4)])
    queries = QuerySet([Query("t", "word0"), Query("v", "word1")])
    qrels = {"t": {"d0": 1}, "v": {"d1": 1}}
    grid = grid_search_smoothing(
        lambda: Scorer("aug_only", model=AugmentingModel.init(2, 64)), corpus, queries, {"t": qrels["t"]}, ["v"], qrels,
        LossConfig(negatives=2), TrainConfig(max_epochs=1),
    )
    grid_ok = list(grid.reports) == [0.0, 0.1, 0.2, 0.3, 0.4, 0.5] and tuple(grid.reports) == SMOOTHING_GRID
    record(9, early_ok and grid_ok, f"stop epochs {stops} (expected {[w for _, w in cases]}); grid ran {list(grid.reports)}")
