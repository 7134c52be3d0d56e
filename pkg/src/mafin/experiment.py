"""End-to-end comparison runs on a toy dataset: black box alone, augmenting
encoder alone (untrained / fine-tuned), concatenations, linear transform,
and Mafin trained with or without real queries."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

from mafin.augmodel import AugmentingModel
from mafin.evalx import EvalReport, comparison_table, default_specs, evaluate
from mafin.genqueries import OfflineGenerator, generate_pairs
from mafin.ingest import QuerySet, SplitSpec, Splits, split
from mafin.providers import StubProvider
from mafin.ranking import LossConfig
from mafin.scoring import LinearTransform, Scorer
from mafin.synthetic import ToyDataset, make_toy_dataset
from mafin.trainer import SMOOTHING_GRID, TrainConfig, grid_search_smoothing

log = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    n_passages: int = 500
    n_queries: int = 200
    data_seed: int = 0
    vocab_size: int = 150
    topic_vocab: int = 60
    passage_words: int = 8
    query_words: int = 4
    synonym_rate: float = 0.5
    distractors: int = 1
    stub_seed: int = 0
    stub_dim: int = 256
    d_aug: int = 64
    feature_dim: int = 1 << 14
    model_seed: int = 0
    negatives: int = 32
    loss: str = "infonce"
    lr: float = 1e-4
    max_epochs: int = 100
    patience: int = 4
    monitor: str = "NDCG@10"
    train_seed: int = 0
    split_seed: int = 0
    test_fraction: float = 0.2
    train_fraction: float = 0.8
    grid: tuple[float, ...] = SMOOTHING_GRID
    cutoffs: tuple[int, ...] = (1, 3, 5)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    splits: Splits
    reports: dict[str, EvalReport] = field(default_factory=dict)
    training: dict[str, dict] = field(default_factory=dict)

    def table(self) -> str:
        return comparison_table(list(self.reports.values()), list(self.reports))

    def to_json(self) -> dict:
        return {
            "config": asdict(self.config),
            "splits": self.splits.to_json(),
            "test": {name: r.to_json(with_timestamp=False) for name, r in self.reports.items()},
            "training": self.training,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def prepare(cfg: ExperimentConfig) -> tuple[ToyDataset, Splits]:
    data = make_toy_dataset(
        cfg.n_passages,
        cfg.n_queries,
        vocab_size=cfg.vocab_size,
        topic_vocab=cfg.topic_vocab,
        passage_words=cfg.passage_words,
        query_words=cfg.query_words,
        synonym_rate=cfg.synonym_rate,
        distractors=cfg.distractors,
        seed=cfg.data_seed,
    )
    outer = split(data.queries, data.qrels, SplitSpec(1.0 - cfg.test_fraction, cfg.split_seed))
    inner = split(outer.train, data.qrels, SplitSpec(cfg.train_fraction, cfg.split_seed))
    return data, Splits(inner.train, inner.validation, outer.validation)


def _train_cfg(cfg: ExperimentConfig) -> TrainConfig:
    return TrainConfig(
        max_epochs=cfg.max_epochs, patience=cfg.patience, monitor=cfg.monitor, lr=cfg.lr, seed=cfg.train_seed
    )


def _new_model(cfg: ExperimentConfig, mode: str = "normalized") -> AugmentingModel:
    return AugmentingModel.init(cfg.d_aug, cfg.feature_dim, mode, seed=cfg.model_seed)


def run(cfg: ExperimentConfig, supervised: bool = True, baselines: tuple[str, ...] = ("bb_only", "aug_only_ft")) -> ExperimentResult:
    """Train and evaluate on the held-out test split.

    ``baselines`` picks extra rows among ``bb_only``, ``aug_only``,
    ``aug_only_ft``, ``concat``, ``concat_ft`` and ``linear``; the Mafin row
    is always produced (``mafin_sup`` or ``mafin_unsup``).
    """
    data, splits = prepare(cfg)
    provider = StubProvider(cfg.stub_seed, cfg.stub_dim)
    corpus = data.corpus
    specs = default_specs(cfg.cutoffs)
    test_q = [data.queries[q] for q in splits.test]
    test_qrels = splits.qrels_for("test", data.qrels)
    result = ExperimentResult(cfg, splits)
    tcfg = _train_cfg(cfg)
    loss = LossConfig(cfg.loss, negatives=cfg.negatives)

    if supervised:
        queries, train_qrels, train_ids = data.queries, splits.qrels_for("train", data.qrels), splits.train
        val_ids, val_qrels = splits.validation, splits.qrels_for("validation", data.qrels)
    else:
        # label-free: train and early-stop on synthetic pairs; real queries only for the test split
        pairs = generate_pairs(OfflineGenerator(cfg.train_seed), corpus, cfg.train_seed)
        synth = pairs.queries()
        sq = pairs.qrels()
        sp = split(synth, sq, SplitSpec(cfg.train_fraction, cfg.split_seed))
        queries = QuerySet(list(data.queries) + list(synth))
        train_ids, train_qrels = sp.train, sp.qrels_for("train", sq)
        val_ids, val_qrels = sp.validation, sp.qrels_for("validation", sq)

    def fit(name, make):
        g = grid_search_smoothing(make, corpus, queries, train_qrels, val_ids, val_qrels, loss, tcfg, cfg.grid, train_ids)
        result.training[name] = json.loads(g.dumps())
        return g.scorer

    def report(name, scorer):
        result.reports[name] = evaluate(scorer, test_q, corpus, test_qrels, specs)

    if "bb_only" in baselines:
        report("bb_only", Scorer("bb_only", provider))
    if "aug_only" in baselines:
        report("aug_only", Scorer("aug_only", None, _new_model(cfg)))
    if "concat" in baselines:
        report("concat", Scorer("concat_frozen", provider, _new_model(cfg)))
    if "aug_only_ft" in baselines or "concat_ft" in baselines:
        ft = fit("aug_only_ft", lambda: Scorer("aug_only", None, _new_model(cfg)))
        if "aug_only_ft" in baselines:
            report("aug_only_ft", ft)
        if "concat_ft" in baselines:
            report("concat_ft", Scorer("concat_frozen", provider, ft.model))
    if "linear" in baselines:
        lt = fit("linear", lambda: Scorer("linear_transform", provider, transform=LinearTransform.near_identity(cfg.stub_dim, seed=cfg.model_seed)))
        report("linear", lt)
    name = "mafin_sup" if supervised else "mafin_unsup"
    report(name, fit(name, lambda: Scorer("mafin", provider, _new_model(cfg))))
    return result
