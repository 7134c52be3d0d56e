"""Listwise ranking losses over candidate lists.

Three members of one family, each returning the loss and its gradient with
respect to the candidate scores:

* ``pl_full``  cross-entropy between Plackett-Luce permutation distributions
  (labels / tau vs. model scores), by explicit enumeration, K <= 8;
* ``top1_kl``  the same restricted to which item ranks first;
* ``infonce``  the tau -> 0 limit: ``-log softmax(scores)[k_max]``.

Constant entropy terms of the KL divergences are omitted throughout.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.special import log_softmax, softmax

from mafin.scoring import ListGrads, Scorer, TextBank

log = logging.getLogger(__name__)

LOSS_KINDS = ("pl_full", "top1_kl", "infonce")
MAX_ENUM_K = 8


@dataclass
class LossConfig:
    kind: str = "infonce"
    temperature: float = 1.0
    smoothing: float = 0.0
    negatives: int = 32
    train_score: str = "combined_mafin"  # or "aug_only"

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; valid: {', '.join(LOSS_KINDS)}")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if not 0.0 <= self.smoothing <= 0.5:
            raise ValueError("label smoothing must lie in [0, 0.5]")
        if self.negatives < 2:
            raise ValueError("candidate list size M must be >= 2")
        if self.train_score not in ("combined_mafin", "aug_only"):
            raise ValueError(f"unknown train-score mode {self.train_score!r}")


@dataclass
class LabeledList:
    """One query with K candidate passages and their integer labels."""

    query_id: str
    query_text: str
    doc_ids: list[str]
    passage_texts: list[str]
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.doc_ids) != len(self.labels) or len(self.passage_texts) != len(self.labels):
            raise ValueError("doc_ids, passage_texts and labels must align")
        if len(self.labels) < 2:
            raise ValueError("a labeled list needs K >= 2 candidates")
        if np.any(self.labels < 0):
            raise ValueError("labels must be non-negative")

    @property
    def usable(self) -> bool:
        return bool(np.any(self.labels > 0))


@lru_cache(maxsize=MAX_ENUM_K + 1)
def all_permutations(k: int) -> np.ndarray:
    """All ``k!`` orderings, each row listing items from rank 1 downward."""
    return np.array(list(itertools.permutations(range(k))), dtype=np.int64).reshape(-1, k)


def _pl_logprob_matrix(scores: np.ndarray, perms: np.ndarray):
    S = scores[perms]
    suffix = np.logaddexp.accumulate(S[:, ::-1], axis=1)[:, ::-1]
    return S, suffix, np.sum(S - suffix, axis=1)


def pl_log_prob(scores, permutation) -> float:
    """Log Plackett-Luce probability of ``permutation`` (items listed in rank order)."""
    s = np.asarray(scores, dtype=np.float64)
    perm = np.asarray(permutation, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(len(s))):
        raise ValueError("permutation must be a bijection on the candidate indices")
    return float(_pl_logprob_matrix(s, perm[None, :])[2][0])


def pl_prob(scores, permutation) -> float:
    return float(np.exp(pl_log_prob(scores, permutation)))


def pl_distribution(scores) -> tuple[np.ndarray, np.ndarray]:
    """``(perms, probs)`` over every permutation of the candidates."""
    s = np.asarray(scores, dtype=np.float64)
    if len(s) > MAX_ENUM_K:
        raise ValueError(f"explicit enumeration is limited to K <= {MAX_ENUM_K}; use top1_kl")
    perms = all_permutations(len(s))
    return perms, np.exp(_pl_logprob_matrix(s, perms)[2])


def pl_kl_loss_grad(labels, scores, temperature: float = 1.0, smoothing: float = 0.0) -> tuple[float, np.ndarray]:
    """``-sum_pi p_s(pi) log p_theta(pi)`` and its gradient in the scores.

    ``p_s`` is the Plackett-Luce law of ``labels / temperature``, mixed with the
    uniform law over permutations at rate ``smoothing``.
    """
    y = np.asarray(labels, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    K = len(s)
    if K > MAX_ENUM_K:
        raise ValueError(f"pl_full enumerates K! permutations and is limited to K <= {MAX_ENUM_K}; use top1_kl")
    if len(y) != K:
        raise ValueError("labels and scores must have the same length")
    perms = all_permutations(K)
    target = np.exp(_pl_logprob_matrix(y / temperature, perms)[2])
    if smoothing:
        target = (1.0 - smoothing) * target + smoothing / len(perms)
    S, suffix, logp = _pl_logprob_matrix(s, perms)
    loss = -float(target @ logp)
    # d log p(pi) / d s at rank t: 1 - sum_{r <= t} exp(S_t - suffix_r)
    cum = np.logaddexp.accumulate(-suffix, axis=1)
    dlogp = 1.0 - np.exp(S + cum)
    grad = np.zeros(K)
    np.add.at(grad, perms.ravel(), -(target[:, None] * dlogp).ravel())
    return loss, grad


def pl_kl_loss(labels, scores, temperature: float = 1.0) -> float:
    return pl_kl_loss_grad(labels, scores, temperature)[0]


def top1_target(labels, temperature: float = 1.0, smoothing: float = 0.0) -> np.ndarray:
    """``(1 - eps) * softmax(y / tau) + eps / K``."""
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    if not 0.0 <= smoothing <= 0.5:
        raise ValueError("label smoothing must lie in [0, 0.5]")
    y = np.asarray(labels, dtype=np.float64)
    p = softmax(y / temperature)
    return (1.0 - smoothing) * p + smoothing / len(y)


def delta_target(k: int, size: int, smoothing: float = 0.0) -> np.ndarray:
    t = np.full(size, smoothing / size)
    t[k] += 1.0 - smoothing
    return t


def argmax_label(labels) -> int:
    """Index of the largest label, lowest index on ties."""
    return int(np.argmax(np.asarray(labels)))


def top1_kl_loss_grad(target, scores) -> tuple[float, np.ndarray]:
    t = np.asarray(target, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    if abs(t.sum() - 1.0) > 1e-9:
        raise ValueError("target must sum to 1")
    logp = log_softmax(s)
    loss = -float(np.sum(t[t > 0] * logp[t > 0]))
    return loss, np.exp(logp) - t


def top1_kl_loss(target, scores) -> float:
    return top1_kl_loss_grad(target, scores)[0]


def infonce_loss_grad(positive: int, scores) -> tuple[float, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    logp = log_softmax(s)
    grad = np.exp(logp)
    grad[positive] -= 1.0
    return -float(logp[positive]), grad


def infonce_loss(positive: int, scores) -> float:
    return infonce_loss_grad(positive, scores)[0]


def loss_and_grad(config: LossConfig, labels, scores) -> tuple[float, np.ndarray]:
    """Loss of one candidate list under ``config`` and d(loss)/d(scores)."""
    if config.kind == "pl_full":
        return pl_kl_loss_grad(labels, scores, config.temperature, config.smoothing)
    if config.kind == "top1_kl":
        return top1_kl_loss_grad(top1_target(labels, config.temperature, config.smoothing), scores)
    k = argmax_label(labels)
    if config.smoothing == 0.0:
        return infonce_loss_grad(k, scores)
    return top1_kl_loss_grad(delta_target(k, len(scores), config.smoothing), scores)


def sample_negatives(
    query_id: str,
    qrels_for_query: dict[str, int],
    corpus_ids: Sequence[str],
    m: int,
    rng: np.random.Generator,
) -> tuple[list[str], np.ndarray, int]:
    """Draw one top-label positive plus ``m - 1`` label-0 passages, shuffled.

    Returns ``(doc_ids, labels, positive_index)``. Passages without a
    judgment count as label 0.
    """
    if m < 2:
        raise ValueError("M must be >= 2")
    if len(corpus_ids) < m:
        raise ValueError(f"corpus has {len(corpus_ids)} passages, fewer than M={m}")
    top = max(qrels_for_query.values(), default=0)
    if top <= 0:
        raise ValueError(f"query {query_id!r} has no positive passage")
    positives = sorted(d for d, r in qrels_for_query.items() if r == top)
    pos = positives[int(rng.integers(len(positives)))]
    pool = [d for d in corpus_ids if qrels_for_query.get(d, 0) == 0]
    if len(pool) < m - 1:
        log.warning("query %s: only %d label-0 passages for %d negatives; sampling with replacement", query_id, len(pool), m - 1)
        picks = rng.choice(len(pool), size=m - 1, replace=True)
    else:
        picks = rng.choice(len(pool), size=m - 1, replace=False)
    docs = [pos] + [pool[i] for i in picks]
    labels = np.array([top] + [0] * (m - 1), dtype=np.int64)
    order = rng.permutation(m)
    docs = [docs[i] for i in order]
    labels = labels[order]
    return docs, labels, int(np.flatnonzero(order == 0)[0])


def list_loss_backward(
    config: LossConfig, lst: LabeledList, scorer: Scorer, bank: TextBank | None = None
) -> tuple[float, ListGrads]:
    """Loss of one labeled list and the exact gradient of the scorer's parameters.

    Black-box embeddings are constants; only augmenting / transform weights
    receive gradient.
    """
    bank = bank if bank is not None else scorer.bank([lst.query_text, *lst.passage_texts])
    q_row = bank.index[lst.query_text]
    rows = bank.rows(lst.passage_texts)
    scores, backward = scorer.list_scores(bank, q_row, rows, config.train_score)
    loss, ds = loss_and_grad(config, lst.labels, scores)
    return loss, backward(ds)


def loss_backward(config: LossConfig, batch: Sequence[LabeledList], scorer: Scorer, bank: TextBank | None = None) -> tuple[float, ListGrads]:
    """Summed loss and gradients over a batch of lists; unusable lists are skipped."""
    total = 0.0
    grads = ListGrads()
    for lst in batch:
        if not lst.usable:
            log.warning("skipping list for query %s: no positive label", lst.query_id)
            continue
        loss, g = list_loss_backward(config, lst, scorer, bank)
        total += loss
        if g.aug is not None:
            if grads.aug is None:
                grads.aug = g.aug
            else:
                grads.aug.merge(g.aug)
        if g.transform is not None:
            if grads.transform is None:
                grads.transform = {k: v.copy() for k, v in g.transform.items()}
            else:
                for k, v in g.transform.items():
                    grads.transform[k] += v
    return total, grads

