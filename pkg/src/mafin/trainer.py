"""Training loop with validation-based early stopping, the label-smoothing
grid, and binary checkpoints.

Linear-transform checkpoint layout (little endian)::

    b"MAFL" | version u32 | mode u8 (0 full, 1 low_rank) | D u32 | R u32
    | f64 arrays (W, or W_l then W_r) | crc32 u32

Augmenting-model checkpoints use :meth:`AugmentingModel.to_bytes`.
"""

from __future__ import annotations

import json
import logging
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from mafin.augmodel import AugmentingModel, CheckpointError, GradientBuffer
from mafin.evalx import MetricSpec, evaluate
from mafin.ingest import Corpus, Qrels, QuerySet
from mafin.ranking import LabeledList, LossConfig, loss_backward, sample_negatives
from mafin.scoring import LinearTransform, ListGrads, Scorer

log = logging.getLogger(__name__)

SMOOTHING_GRID = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
TRANSFORM_MAGIC = b"MAFL"
TRANSFORM_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass
class OptimizerState:
    """SGD or Adam. Adam on the augmenting weights is lazy: moments and
    weights of a feature column move only on steps where that column has
    gradient, as usual for hashed / embedding-table parameters."""

    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    moments: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")

    def _adam_moments(self, name, shape):
        if name not in self.moments:
            self.moments[name] = (np.zeros(shape, order="F"), np.zeros(shape, order="F"))
        return self.moments[name]

    def apply(self, scorer: Scorer, grads: ListGrads) -> None:
        self.step += 1
        if grads.aug is not None:
            self._apply_columns(scorer.model.weights, grads.aug)
        if grads.transform is not None:
            params = scorer.transform.params()
            for name, g in grads.transform.items():
                self._apply_dense(name, params[name], g)

    def _apply_columns(self, W: np.ndarray, buf: GradientBuffer) -> None:
        cols, g = buf.consolidate()
        if cols.size == 0:
            return
        # W is column-major, so W.T[cols] gathers contiguous rows
        WT, gT = W.T, np.array(g.T, order="C")
        if self.kind == "sgd":
            WT[cols] -= self.lr * gT
            return
        m, v = self._adam_moments("aug", W.shape)
        mT, vT = m.T, v.T
        mc = mT[cols]
        mc *= self.beta1
        mc += (1.0 - self.beta1) * gT
        gT *= gT
        gT *= 1.0 - self.beta2
        vc = vT[cols]
        vc *= self.beta2
        vc += gT
        mT[cols] = mc
        vT[cols] = vc
        WT[cols] -= self._adam_delta(mc, vc)

    def _apply_dense(self, name: str, P: np.ndarray, g: np.ndarray) -> None:
        if self.kind == "sgd":
            P -= self.lr * g
            return
        m, v = self._adam_moments(name, P.shape)
        m *= self.beta1
        m += (1.0 - self.beta1) * g
        v *= self.beta2
        v += (1.0 - self.beta2) * g * g
        P -= self._adam_delta(m, v)

    def _adam_delta(self, m, v):
        # lr * mhat / (sqrt(vhat) + eps) with the bias corrections folded into scalars
        bc1 = 1.0 - self.beta1**self.step
        bc2 = math.sqrt(1.0 - self.beta2**self.step)
        den = np.sqrt(v)
        den += self.eps * bc2
        out = m / den
        out *= self.lr * bc2 / bc1
        return out


@dataclass
class EarlyStopState:
    patience: int = 4
    monitor: str = "NDCG@10"
    best: float = -math.inf
    best_epoch: int = 0
    counter: int = 0

    def update(self, value: float, epoch: int) -> bool:
        """Record an epoch's metric; True when it beats the best so far."""
        if value > self.best:
            self.best, self.best_epoch, self.counter = value, epoch, 0
            return True
        self.counter += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.counter >= self.patience


@dataclass
class TrainConfig:
    max_epochs: int = 100
    patience: int = 4
    monitor: str = "NDCG@10"
    optimizer: str = "adam"
    lr: float = 1e-3
    seed: int = 0
    batch_size: int = 1
    checkpoint_dir: str | None = None

    def monitor_spec(self) -> MetricSpec:
        name, _, k = self.monitor.partition("@")
        metric = {"recall": "recall", "ndcg": "ndcg"}.get(name.lower())
        if metric is None or not k.isdigit():
            raise ValueError(f"cannot parse monitored metric {self.monitor!r}")
        return MetricSpec(metric, (int(k),))


@dataclass
class TrainReport:
    epochs: list[dict] = field(default_factory=list)
    stop_epoch: int = 0
    best_epoch: int = 0
    best_metric: float = -math.inf
    best_checkpoint: str | None = None
    stopped_early: bool = False
    config: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)

    @property
    def train_losses(self) -> list[float]:
        return [e["train_loss"] for e in self.epochs]

    def to_json(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n", encoding="utf-8")


def _snapshot(scorer: Scorer):
    return (
        scorer.model.weights.copy(order="F") if scorer.model is not None else None,
        scorer.transform.copy() if scorer.transform is not None else None,
    )


def _restore(scorer: Scorer, snap) -> None:
    w, t = snap
    if w is not None:
        scorer.model.weights[...] = w
    if t is not None:
        for name, p in scorer.transform.params().items():
            p[...] = t.params()[name]


def build_lists(
    query_ids: Sequence[str],
    queries: QuerySet,
    qrels: Qrels,
    corpus: Corpus,
    m: int,
    rng: np.random.Generator,
    use_title: bool = True,
) -> list[LabeledList]:
    ids = corpus.ids
    out = []
    for qid in query_ids:
        docs, labels, _ = sample_negatives(qid, qrels[qid], ids, m, rng)
        out.append(
            LabeledList(qid, queries[qid].text, docs, [corpus[d].embed_text(use_title) for d in docs], labels)
        )
    return out


def train(
    scorer: Scorer,
    corpus: Corpus,
    queries: QuerySet,
    train_qrels: Qrels,
    val_ids: Sequence[str],
    val_qrels: Qrels,
    loss: LossConfig,
    config: TrainConfig | None = None,
    train_ids: Sequence[str] | None = None,
) -> TrainReport:
    """Fit the scorer's trainable weights in place; on return they hold the best epoch.

    ``queries`` must contain every train and validation query id.
    """
    config = config or TrainConfig()
    if not scorer.trainable:
        raise ValueError(f"scorer {scorer.kind!r} is not trainable")
    train_ids = list(train_ids if train_ids is not None else train_qrels)
    val_ids = list(val_ids)
    if not train_ids:
        raise ValueError("training split is empty")
    if not val_ids:
        raise ValueError("validation split is empty")
    for qid in train_ids:
        if max(train_qrels.get(qid, {}).values(), default=0) <= 0:
            raise ValueError(f"training query {qid!r} has no positive passage")

    monitor = config.monitor_spec()
    rng = np.random.default_rng(config.seed)
    opt = OptimizerState(config.optimizer, config.lr)
    stopper = EarlyStopState(config.patience, config.monitor)
    report = TrainReport(
        config={"train": asdict(config), "loss": asdict(loss), "scorer": scorer.kind},
        seeds={"train": config.seed},
    )
    ptexts = corpus.texts(scorer.use_title)
    bank = scorer.bank(ptexts + [queries[q].text for q in train_ids + val_ids])
    val_queries = [queries[q] for q in val_ids]
    best = _snapshot(scorer)
    ckpt_dir = Path(config.checkpoint_dir) if config.checkpoint_dir else None

    for epoch in range(1, config.max_epochs + 1):
        order = [train_ids[i] for i in rng.permutation(len(train_ids))]
        total, n = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = build_lists(order[start : start + config.batch_size], queries, train_qrels, corpus, loss.negatives, rng, scorer.use_title)
            value, grads = loss_backward(loss, batch, scorer, bank)
            if not math.isfinite(value):
                raise TrainingError(
                    f"non-finite loss {value} at epoch {epoch}, queries {[b.query_id for b in batch]}, "
                    f"candidates {[b.doc_ids for b in batch]}"
                )
            opt.apply(scorer, grads)
            total += value
            n += len(batch)
        val = evaluate(scorer, val_queries, corpus, val_qrels, [monitor])
        metric = val.means[monitor.names[0]]
        improved = stopper.update(metric, epoch)
        report.epochs.append({"epoch": epoch, "train_loss": total / max(n, 1), "val": val.means})
        log.info("epoch %d loss %.6f %s %.5f%s", epoch, total / max(n, 1), config.monitor, metric, " *" if improved else "")
        if improved:
            best = _snapshot(scorer)
            if ckpt_dir is not None:
                ckpt_dir.mkdir(parents=True, exist_ok=True)
                path = ckpt_dir / ("best.mafw" if scorer.model is not None else "best.mafl")
                checkpoint_save(path, scorer.model if scorer.model is not None else scorer.transform)
                if scorer.model is not None and scorer.transform is not None:
                    checkpoint_save(ckpt_dir / "best.mafl", scorer.transform)
                report.best_checkpoint = str(path)
        if stopper.should_stop:
            report.stopped_early = True
            break
    report.stop_epoch = epoch
    report.best_epoch = stopper.best_epoch
    report.best_metric = stopper.best
    _restore(scorer, best)
    return report


@dataclass
class GridResult:
    best_smoothing: float
    reports: dict[float, TrainReport]
    scorer: Scorer

    def to_json(self) -> dict:
        return {
            "best_smoothing": self.best_smoothing,
            "runs": {repr(eps): r.to_json() for eps, r in self.reports.items()},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def grid_search_smoothing(
    make_scorer: Callable[[], Scorer],
    corpus: Corpus,
    queries: QuerySet,
    train_qrels: Qrels,
    val_ids: Sequence[str],
    val_qrels: Qrels,
    loss: LossConfig,
    config: TrainConfig | None = None,
    grid: Sequence[float] = SMOOTHING_GRID,
    train_ids: Sequence[str] | None = None,
) -> GridResult:
    """Train once per smoothing rate from identical seeds; keep the best on validation.

    Ties go to the smaller rate. ``make_scorer`` must return a fresh, untrained scorer.
    """
    grid = sorted(float(e) for e in grid)
    if not grid:
        raise ValueError("smoothing grid is empty")
    config = config or TrainConfig()
    reports: dict[float, TrainReport] = {}
    best_eps, best_metric, best_scorer = None, -math.inf, None
    for eps in grid:
        scorer = make_scorer()
        cfg = config
        if config.checkpoint_dir:
            cfg = replace(config, checkpoint_dir=str(Path(config.checkpoint_dir) / f"eps{eps:g}"))
        rep = train(scorer, corpus, queries, train_qrels, val_ids, val_qrels, LossConfig(**{**asdict(loss), "smoothing": eps}), cfg, train_ids)
        reports[eps] = rep
        if rep.best_metric > best_metric:
            best_eps, best_metric, best_scorer = eps, rep.best_metric, scorer
    return GridResult(best_eps, reports, best_scorer)


def _transform_bytes(t: LinearTransform) -> bytes:
    if t.mode == "full":
        D, R, arrays = t.W.shape[0], 0, [t.W]
    else:
        (D, R), arrays = t.W_l.shape, [t.W_l, t.W_r]
    body = TRANSFORM_MAGIC + struct.pack("<IBII", TRANSFORM_VERSION, 0 if t.mode == "full" else 1, D, R)
    body += b"".join(a.astype("<f8").tobytes() for a in arrays)
    return body + struct.pack("<I", zlib.crc32(body))


def _transform_from_bytes(blob: bytes) -> LinearTransform:
    head = 4 + struct.calcsize("<IBII")
    if len(blob) < head + 4:
        raise CheckpointError("truncated checkpoint")
    version, mode, D, R = struct.unpack("<IBII", blob[4:head])
    if version != TRANSFORM_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) != crc:
        raise CheckpointError("checkpoint CRC mismatch (file corrupted)")
    if mode == 0:
        if len(blob) != head + 8 * D * D + 4:
            raise CheckpointError("checkpoint size inconsistent")
        W = np.frombuffer(blob, "<f8", D * D, head).reshape(D, D).astype(np.float64)
        return LinearTransform("full", W=W)
    if len(blob) != head + 16 * D * R + 4:
        raise CheckpointError("checkpoint size inconsistent")
    W_l = np.frombuffer(blob, "<f8", D * R, head).reshape(D, R).astype(np.float64)
    W_r = np.frombuffer(blob, "<f8", D * R, head + 8 * D * R).reshape(D, R).astype(np.float64)
    return LinearTransform("low_rank", W_l=W_l, W_r=W_r)


def checkpoint_save(path, obj: AugmentingModel | LinearTransform) -> None:
    """Write atomically (temp file + rename)."""
    path = Path(path)
    if isinstance(obj, AugmentingModel):
        blob = obj.to_bytes()
    elif isinstance(obj, LinearTransform):
        blob = _transform_bytes(obj)
    else:
        raise TypeError(f"cannot checkpoint {type(obj).__name__}")
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)


def checkpoint_load(path) -> AugmentingModel | LinearTransform:
    blob = Path(path).read_bytes()
    if blob[:4] == TRANSFORM_MAGIC:
        return _transform_from_bytes(blob)
    if blob[:4] == b"MAFW":
        return AugmentingModel.from_bytes(blob)
    raise CheckpointError(f"{path}: unknown checkpoint format")
