"""Relevance scorers and brute-force top-K retrieval.

Every scorer kind is a composite embedding ``z(text)`` with unit norm, so a
relevance score is always ``z(q) . z(x)``:

=============== ===========================================================
bb_only         ``e_bb``
aug_only        ``e_theta`` (normalized augmenting encoder)
mafin           ``concat[e_bb, e_theta] / sqrt(2)``
concat_frozen   same arithmetic as mafin, augmenting weights trained apart
lambda_mafin    ``concat[e_bb, raw_theta] / sqrt(1 + ||raw_theta||^2)``
linear_transform ``normalize(W e_bb)`` with ``W`` full or ``W_l W_r^T``
=============== ===========================================================
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from mafin.augmodel import AugmentingModel, GradientBuffer
from mafin.core import EmbeddingVector, ZeroNormError, dot
from mafin.providers import BlackBoxProvider, embed_texts

KINDS = ("bb_only", "aug_only", "mafin", "lambda_mafin", "concat_frozen", "linear_transform")
TRAINABLE = ("aug_only", "mafin", "lambda_mafin", "linear_transform")
SQRT2 = math.sqrt(2.0)


def mafin_embed(bb: EmbeddingVector, aug: EmbeddingVector) -> EmbeddingVector:
    if not (bb.normalized and aug.normalized):
        raise ValueError("vanilla Mafin needs normalized black-box and augmenting embeddings")
    return EmbeddingVector(np.concatenate([bb.values, aug.values]) / SQRT2, normalized=True)


def lambda_mafin_embed(bb: EmbeddingVector, aug_raw: EmbeddingVector) -> EmbeddingVector:
    if not bb.normalized:
        raise ValueError("black-box embedding must be normalized")
    a = aug_raw.norm
    return EmbeddingVector(np.concatenate([bb.values, aug_raw.values]) / math.sqrt(1.0 + a * a), normalized=True)


def lambda_weights(a: float, b: float) -> tuple[float, float]:
    """Implicit black-box / augment weights for raw augment norms ``a`` and ``b``."""
    if not (math.isfinite(a) and math.isfinite(b)) or a < 0 or b < 0:
        raise ValueError("norms must be finite and non-negative")
    denom = math.sqrt((1.0 + a * a) * (1.0 + b * b))
    return 1.0 / denom, a * b / denom


@dataclass
class LinearTransform:
    """``e_new = W e_bb``; low-rank mode keeps ``W = W_l W_r^T`` factored."""

    mode: str
    W: np.ndarray | None = None
    W_l: np.ndarray | None = None
    W_r: np.ndarray | None = None

    def __post_init__(self):
        if self.mode == "full":
            if self.W is None or self.W.ndim != 2 or self.W.shape[0] != self.W.shape[1]:
                raise ValueError("full transform needs a square W")
        elif self.mode == "low_rank":
            if self.W_l is None or self.W_r is None or self.W_l.shape != self.W_r.shape:
                raise ValueError("low-rank transform needs W_l and W_r of equal shape (D, R)")
            D, R = self.W_l.shape
            if not R < D:
                raise ValueError(f"rank {R} must be below dimension {D}")
        else:
            raise ValueError(f"unknown transform mode {self.mode!r}")
        for p in self.params().values():
            if not np.all(np.isfinite(p)):
                raise ValueError("transform has non-finite entries")

    @classmethod
    def near_identity(cls, dim: int, rank: int | None = None, eps: float = 1e-3, seed: int = 0) -> "LinearTransform":
        rng = np.random.default_rng(seed)
        if rank is None:
            return cls("full", W=np.eye(dim) + eps * rng.standard_normal((dim, dim)))
        base = np.eye(dim, rank)
        return cls(
            "low_rank",
            W_l=base + eps * rng.standard_normal((dim, rank)),
            W_r=base + eps * rng.standard_normal((dim, rank)),
        )

    @property
    def dim(self) -> int:
        return (self.W if self.mode == "full" else self.W_l).shape[0]

    def params(self) -> dict[str, np.ndarray]:
        if self.mode == "full":
            return {"W": self.W}
        return {"W_l": self.W_l, "W_r": self.W_r}

    def copy(self) -> "LinearTransform":
        return LinearTransform(self.mode, **{k: v.copy() for k, v in self.params().items()})

    def apply(self, B: np.ndarray) -> np.ndarray:
        """Transform the rows of ``B`` (n, D)."""
        if B.shape[-1] != self.dim:
            raise ValueError(f"transform dim {self.dim} does not match embedding dim {B.shape[-1]}")
        if self.mode == "full":
            return B @ self.W.T
        return (B @ self.W_r) @ self.W_l.T

    def backward(self, B: np.ndarray, G: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients given d(loss)/d(apply(B)) = ``G``."""
        if self.mode == "full":
            return {"W": G.T @ B}
        V = B @ self.W_r
        return {"W_l": G.T @ V, "W_r": B.T @ (G @ self.W_l)}


def linear_transform_embed(t: LinearTransform, bb: EmbeddingVector) -> EmbeddingVector:
    u = t.apply(bb.values[None, :])[0]
    n = math.sqrt(dot(u, u))
    if n == 0.0:
        raise ZeroNormError("linear transform collapsed the embedding to zero")
    return EmbeddingVector(u / n, normalized=True)


@dataclass
class RankedList:
    query_id: str
    items: list[tuple[str, float]]

    @property
    def doc_ids(self) -> list[str]:
        return [d for d, _ in self.items]

    def __len__(self):
        return len(self.items)


def write_ranked_tsv(lists: Iterable[RankedList], path_or_fh) -> None:
    """``query-id  doc-id  rank  score`` rows; scores written with ``repr`` so they round-trip."""
    own = isinstance(path_or_fh, (str, bytes)) or hasattr(path_or_fh, "__fspath__")
    fh = open(path_or_fh, "w", encoding="utf-8", newline="\n") if own else path_or_fh
    try:
        fh.write("query-id\tdoc-id\trank\tscore\n")
        for rl in lists:
            for rank, (did, s) in enumerate(rl.items, start=1):
                fh.write(f"{rl.query_id}\t{did}\t{rank}\t{float(s)!r}\n")
    finally:
        if own:
            fh.close()


def read_ranked_tsv(path) -> list[RankedList]:
    out: dict[str, list[tuple[int, str, float]]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header != ["query-id", "doc-id", "rank", "score"]:
            raise ValueError(f"{path}: unexpected header {header!r}")
        for row in reader:
            if row:
                out.setdefault(row[0], []).append((int(row[2]), row[1], float(row[3])))
    return [RankedList(q, [(d, s) for _, d, s in sorted(rows)]) for q, rows in out.items()]


class TextBank:
    """Texts with their black-box embeddings and hashed features, row-aligned.

    Built once per dataset so training and evaluation never re-embed.
    """

    def __init__(self, texts: Sequence[str], provider: BlackBoxProvider | None = None, model: AugmentingModel | None = None):
        self.provider = provider
        self.hasher = model.hasher if model is not None else None
        self.texts: list[str] = []
        self.index: dict[str, int] = {}
        self.bb = np.zeros((0, provider.embed_dim)) if provider is not None else None
        self.X = sp.csr_matrix((0, self.hasher.feature_dim)) if self.hasher is not None else None
        self.extend(texts)

    def extend(self, texts: Iterable[str]) -> None:
        new = [t for t in dict.fromkeys(texts) if t not in self.index]
        if not new:
            return
        for t in new:
            self.index[t] = len(self.texts)
            self.texts.append(t)
        if self.provider is not None:
            self.bb = np.vstack([self.bb, embed_texts(self.provider, new)])
        if self.hasher is not None:
            self.X = sp.vstack([self.X, self.hasher.featurize_many(new)], format="csr")

    def rows(self, texts: Iterable[str]) -> np.ndarray:
        return np.array([self.index[t] for t in texts], dtype=np.int64)

    def __len__(self):
        return len(self.texts)


@dataclass
class ListGrads:
    aug: GradientBuffer | None = None
    transform: dict[str, np.ndarray] | None = None


@dataclass
class Scorer:
    """A scoring configuration: kind plus the components that kind needs."""

    kind: str
    provider: BlackBoxProvider | None = None
    model: AugmentingModel | None = None
    transform: LinearTransform | None = None
    use_title: bool = True
    _bank: TextBank | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scorer kind {self.kind!r}; valid kinds: {', '.join(KINDS)}")
        if self.kind != "aug_only" and self.provider is None:
            raise ValueError(f"scorer {self.kind!r} needs a black-box provider")
        if self.kind in ("aug_only", "mafin", "concat_frozen", "lambda_mafin") and self.model is None:
            raise ValueError(f"scorer {self.kind!r} needs an augmenting model")
        if self.kind in ("aug_only", "mafin", "concat_frozen") and self.model.mode != "normalized":
            raise ValueError(f"scorer {self.kind!r} needs a normalized augmenting model")
        if self.kind == "lambda_mafin" and self.model.mode != "unnormalized":
            raise ValueError("lambda_mafin needs an unnormalized augmenting model")
        if self.kind == "linear_transform":
            if self.transform is None:
                raise ValueError("linear_transform scorer needs a LinearTransform")
            if self.transform.dim != self.provider.embed_dim:
                raise ValueError("transform dimension does not match the provider")

    @property
    def trainable(self) -> bool:
        return self.kind in TRAINABLE

    @property
    def uses_bb(self) -> bool:
        return self.kind != "aug_only"

    @property
    def uses_aug(self) -> bool:
        return self.kind not in ("bb_only", "linear_transform")

    def bank(self, texts: Sequence[str] = ()) -> TextBank:
        """The scorer's :class:`TextBank`, extended to cover ``texts``."""
        if self._bank is None:
            self._bank = TextBank(
                [], self.provider if self.uses_bb else None, self.model if self.uses_aug else None
            )
        self._bank.extend(texts)
        return self._bank

    def composite(self, bank: TextBank, rows: np.ndarray) -> np.ndarray:
        """Unit-norm composite embeddings for ``bank`` rows."""
        rows = np.asarray(rows, dtype=np.int64)
        if self.uses_bb:
            bb = bank.bb[rows]
        if self.uses_aug:
            X = bank.X[rows]
            aug = self.model.emit(self.model.raw(X))
        k = self.kind
        if k == "bb_only":
            return bb
        if k == "aug_only":
            return aug
        if k in ("mafin", "concat_frozen"):
            return np.hstack([bb, aug]) / SQRT2
        if k == "lambda_mafin":
            n2 = np.einsum("ij,ij->i", aug, aug)
            return np.hstack([bb, aug]) / np.sqrt(1.0 + n2)[:, None]
        u = self.transform.apply(bb)
        norms = np.sqrt(np.einsum("ij,ij->i", u, u))
        if np.any(norms == 0):
            raise ZeroNormError("linear transform collapsed an embedding to zero")
        return u / norms[:, None]

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        texts = list(texts)
        b = self.bank(texts)
        return self.composite(b, b.rows(texts))

    def score(self, query_text: str, passage_text: str) -> float:
        z = self.embed([query_text, passage_text])
        return dot(z[0], z[1])

    def list_scores(
        self, bank: TextBank, q_row: int, cand_rows: np.ndarray, train_score: str = "combined_mafin"
    ) -> tuple[np.ndarray, Callable[[np.ndarray], ListGrads]]:
        """Scores of candidates against one query plus a backward closure.

        ``train_score="aug_only"`` makes the scores (and the gradient) use the
        augmenting similarity alone, whatever the scorer kind.
        """
        kind = self.kind
        if train_score == "aug_only" and self.uses_aug:
            if self.model.mode != "normalized":
                raise ValueError("aug_only train scores need a normalized augmenting model")
            kind = "aug_only"
        elif train_score not in ("combined_mafin", "aug_only"):
            raise ValueError(f"unknown train-score mode {train_score!r}")
        if kind not in TRAINABLE:
            raise ValueError(f"scorer {self.kind!r} has no trainable parameters")
        rows = np.concatenate([[q_row], np.asarray(cand_rows, dtype=np.int64)])

        if kind == "linear_transform":
            B = bank.bb[rows]
            U = self.transform.apply(B)
            norms = np.sqrt(np.einsum("ij,ij->i", U, U))
            if np.any(norms == 0):
                raise ZeroNormError("linear transform collapsed an embedding to zero")
            Z = U / norms[:, None]
            scores = Z[1:] @ Z[0]

            def backward(ds):
                gz = np.zeros_like(Z)
                gz[0] = ds @ Z[1:]
                gz[1:] = ds[:, None] * Z[0]
                gu = (gz - Z * np.einsum("ij,ij->i", Z, gz)[:, None]) / norms[:, None]
                return ListGrads(transform=self.transform.backward(B, gu))

            return scores, backward

        X = bank.X[rows]
        raw = self.model.raw(X)
        E = self.model.emit(raw)
        eq, ec = E[0], E[1:]
        if kind == "aug_only":
            scores = ec @ eq
        elif kind == "mafin":
            bb = bank.bb[rows]
            scores = (bb[1:] @ bb[0] + ec @ eq) / 2.0
        else:  # lambda_mafin: self-normalized concat of bb and raw augment
            bb = bank.bb[rows]
            n2 = np.einsum("ij,ij->i", E, E)
            denom = np.sqrt(1.0 + n2)
            scores = (bb[1:] @ bb[0] + ec @ eq) / (denom[0] * denom[1:])

        def backward(ds):
            g = np.zeros_like(E)
            if kind == "aug_only":
                g[0] = ds @ ec
                g[1:] = ds[:, None] * eq
            elif kind == "mafin":
                g[0] = 0.5 * (ds @ ec)
                g[1:] = 0.5 * ds[:, None] * eq
            else:
                pair = denom[0] * denom[1:]
                g[0] = (ds / pair) @ ec - (ds @ scores) * eq / (1.0 + n2[0])
                g[1:] = (ds / pair)[:, None] * eq - (ds * scores / (1.0 + n2[1:]))[:, None] * ec
            return ListGrads(aug=self.model.backward(X, raw, g))

        return scores, backward


def score(scorer: Scorer, query_text: str, passage_text: str) -> float:
    return scorer.score(query_text, passage_text)


def topk_from_scores(query_id: str, doc_ids: Sequence[str], scores: np.ndarray, k: int) -> RankedList:
    """Bounded-heap top-K; ties broken by ascending doc id."""
    if k < 1:
        raise ValueError("K must be >= 1")
    best = heapq.nsmallest(k, zip((-s for s in scores.tolist()), doc_ids))
    return RankedList(query_id, [(d, -neg) for neg, d in best])


def retrieve_topk(scorer: Scorer, query, corpus, k: int) -> RankedList:
    """Score every passage against ``query`` (a Query or a text) and keep the top ``k``."""
    return retrieve_many(scorer, [query], corpus, k)[0]


def retrieve_many(scorer: Scorer, queries, corpus, k: int) -> list[RankedList]:
    if len(corpus) == 0:
        raise ValueError("cannot retrieve from an empty corpus")
    qs = [(q.id, q.text) if hasattr(q, "text") else (str(q), str(q)) for q in queries]
    ptexts = corpus.texts(scorer.use_title)
    bank = scorer.bank(ptexts + [t for _, t in qs])
    P = scorer.composite(bank, bank.rows(ptexts))
    Q = scorer.composite(bank, bank.rows([t for _, t in qs]))
    S = Q @ P.T
    ids = corpus.ids
    return [topk_from_scores(qid, ids, S[i], k) for i, (qid, _) in enumerate(qs)]
