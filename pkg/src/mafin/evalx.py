"""Recall@K and NDCG@K over ranked lists, plus evaluation reports."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Mapping, Sequence

from mafin.scoring import RankedList, Scorer, retrieve_many

METRICS = ("recall", "ndcg")


class NoRelevantError(ValueError):
    """The query has no relevant passage, so the metric is undefined."""


def _ids(ranked) -> list[str]:
    return ranked.doc_ids if isinstance(ranked, RankedList) else list(ranked)


def recall_at_k(ranked, qrels: Mapping[str, int], k: int) -> float:
    relevant = {d for d, r in qrels.items() if r > 0}
    if not relevant:
        raise NoRelevantError("query has no relevant passages")
    hits = sum(1 for d in _ids(ranked)[:k] if d in relevant)
    return hits / len(relevant)


def _dcg(gains: Iterable[int]) -> float:
    total = 0.0
    for i, rel in enumerate(gains, start=1):
        total += (2.0**rel - 1.0) / math.log2(i + 1)
    return total


def dcg_at_k(ranked, qrels: Mapping[str, int], k: int) -> float:
    """``sum_i (2^rel_i - 1) / log2(i + 1)`` over the first ``k`` positions."""
    return _dcg(qrels.get(d, 0) for d in _ids(ranked)[:k])


def idcg_at_k(qrels: Mapping[str, int], k: int) -> float:
    return _dcg(sorted((r for r in qrels.values() if r > 0), reverse=True)[:k])


def ndcg_at_k(ranked, qrels: Mapping[str, int], k: int) -> float:
    ideal = idcg_at_k(qrels, k)
    if ideal == 0.0:
        raise NoRelevantError("query has no graded-relevant passages")
    return dcg_at_k(ranked, qrels, k) / ideal


_FUNCS = {"recall": recall_at_k, "ndcg": ndcg_at_k}


@dataclass(frozen=True)
class MetricSpec:
    metric: str
    cutoffs: tuple[int, ...]

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        cut = tuple(sorted(set(int(c) for c in self.cutoffs)))
        if not cut or cut[0] < 1:
            raise ValueError("cutoffs must be positive integers")
        object.__setattr__(self, "cutoffs", cut)

    @property
    def names(self) -> list[str]:
        return [f"{'Recall' if self.metric == 'recall' else 'NDCG'}@{k}" for k in self.cutoffs]


def default_specs(cutoffs: Sequence[int] = (1, 3, 5)) -> list[MetricSpec]:
    return [MetricSpec("recall", tuple(cutoffs)), MetricSpec("ndcg", tuple(cutoffs))]


@dataclass
class EvalReport:
    scorer: str
    means: dict[str, float]
    per_query: dict[str, dict[str, float]]
    n_queries: int
    n_excluded: int
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))

    def to_json(self, with_timestamp: bool = True) -> dict:
        out = {
            "scorer": self.scorer,
            "means": self.means,
            "n_queries": self.n_queries,
            "n_excluded": self.n_excluded,
            "per_query": self.per_query,
        }
        if with_timestamp:
            out["timestamp"] = self.timestamp
        return out

    def dumps(self, with_timestamp: bool = True) -> str:
        return json.dumps(self.to_json(with_timestamp), indent=2, sort_keys=True)


def evaluate_ranked(
    ranked: Iterable[RankedList],
    qrels: Mapping[str, Mapping[str, int]],
    specs: Sequence[MetricSpec],
    scorer: str = "",
) -> EvalReport:
    """Metrics from already-ranked lists; queries without relevant docs are excluded and counted."""
    per_query: dict[str, dict[str, float]] = {}
    excluded = 0
    for rl in ranked:
        q = qrels.get(rl.query_id, {})
        if not any(r > 0 for r in q.values()):
            excluded += 1
            continue
        row = {}
        for spec in specs:
            fn = _FUNCS[spec.metric]
            for name, k in zip(spec.names, spec.cutoffs):
                row[name] = fn(rl, q, k)
        per_query[rl.query_id] = row
    names = [n for s in specs for n in s.names]
    n = len(per_query)
    means = {name: (math.fsum(r[name] for r in per_query.values()) / n if n else float("nan")) for name in names}
    return EvalReport(scorer, means, per_query, n, excluded)


def evaluate(
    scorer: Scorer,
    queries,
    corpus,
    qrels: Mapping[str, Mapping[str, int]],
    specs: Sequence[MetricSpec],
    depth: int | None = None,
    return_ranked: bool = False,
):
    """Retrieve once per query at the largest cutoff and compute every metric from that list."""
    max_k = max(k for s in specs for k in s.cutoffs)
    depth = depth or max_k
    if depth < max_k:
        raise ValueError(f"retrieval depth {depth} is below the largest cutoff {max_k}")
    ranked = retrieve_many(scorer, list(queries), corpus, depth)
    report = evaluate_ranked(ranked, qrels, specs, scorer.kind)
    return (report, ranked) if return_ranked else report


def comparison_table(reports: Sequence[EvalReport], names: Sequence[str] | None = None) -> str:
    """Aligned text table: one row per scorer, one column per metric."""
    if not reports:
        return ""
    cols = list(reports[0].means)
    labels = list(names) if names else [r.scorer for r in reports]
    w0 = max(len("Model"), *(len(l) for l in labels))
    widths = [max(len(c), 7) for c in cols]
    lines = ["  ".join(["Model".ljust(w0)] + [c.rjust(w) for c, w in zip(cols, widths)])]
    lines.append("-" * len(lines[0]))
    for label, r in zip(labels, reports):
        cells = [f"{r.means.get(c, float('nan')):.5f}".rjust(w) for c, w in zip(cols, widths)]
        lines.append("  ".join([label.ljust(w0)] + cells))
    return "\n".join(lines)
