"""The trainable augmenting encoder: hashed text features through one linear map.

``raw = W @ featurize(text)``; in ``normalized`` mode the emitted embedding is
``raw / ||raw||`` (the self-normalized encoder used by vanilla Mafin), in
``unnormalized`` mode ``raw`` itself is emitted and its norm acts as the
implicit weight of lambda-Mafin.
"""

from __future__ import annotations

import hashlib
import logging
import re
import struct
import zlib
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from mafin.core import EmbeddingVector

log = logging.getLogger(__name__)

NGRAM_RANGE = (3, 5)
MODES = ("normalized", "unnormalized")
CHECKPOINT_MAGIC = b"MAFW"
CHECKPOINT_VERSION = 1

_WORD = re.compile(r"\w+")


class CheckpointError(ValueError):
    pass


class NonFiniteEncoding(FloatingPointError):
    pass


@lru_cache(maxsize=1 << 20)
def _feature_hash(seed: int, token: str) -> int:
    key = seed.to_bytes(8, "little", signed=True)
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=key).digest(), "little")


@dataclass(frozen=True)
class SparseFeatures:
    indices: np.ndarray  # sorted, unique
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def dense(self, dim: int) -> np.ndarray:
        out = np.zeros(dim)
        out[self.indices] = self.values
        return out


@dataclass(frozen=True)
class FeatureHasher:
    """Signed hashing of lowercase character 3-5 grams and word unigrams.

    Each token lands in ``hash % feature_dim`` with sign taken from the top
    bit of the same 64-bit hash; the vector is scaled by ``1/sqrt(nnz)``.
    """

    feature_dim: int = 1 << 18
    seed: int = 0

    def __post_init__(self):
        F = self.feature_dim
        if F < 2 or F & (F - 1):
            raise ValueError(f"feature_dim must be a power of two, got {F}")

    def tokens(self, text: str) -> list[str]:
        t = text.lower()
        toks = []
        lo, hi = NGRAM_RANGE
        for n in range(lo, hi + 1):
            toks.extend("c" + t[i : i + n] for i in range(len(t) - n + 1))
        toks.extend("w" + w for w in _WORD.findall(t))
        return toks

    def featurize(self, text: str) -> SparseFeatures:
        if not text:
            raise ValueError("cannot featurize empty text")
        toks = self.tokens(text)
        if not toks:
            # e.g. punctuation-only text shorter than the smallest n-gram
            toks = ["c" + text.lower()]
        h = np.fromiter((_feature_hash(self.seed, tok) for tok in toks), dtype=np.uint64, count=len(toks))
        idx = (h & np.uint64(self.feature_dim - 1)).astype(np.int64)
        sign = np.where((h >> np.uint64(63)) == 0, 1.0, -1.0)
        uniq, inv = np.unique(idx, return_inverse=True)
        counts = np.zeros(uniq.size)
        np.add.at(counts, inv, sign)
        keep = counts != 0
        uniq, counts = uniq[keep], counts[keep]
        if uniq.size:
            counts = counts / np.sqrt(uniq.size)
        return SparseFeatures(uniq, counts)

    def featurize_many(self, texts: Sequence[str]) -> sp.csr_matrix:
        feats = [self.featurize(t) for t in texts]
        indptr = np.zeros(len(feats) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([f.nnz for f in feats])
        indices = np.concatenate([f.indices for f in feats]) if feats else np.zeros(0, np.int64)
        data = np.concatenate([f.values for f in feats]) if feats else np.zeros(0)
        return sp.csr_matrix((data, indices, indptr), shape=(len(feats), self.feature_dim))


def featurize(hasher: FeatureHasher, text: str) -> SparseFeatures:
    return hasher.featurize(text)


@dataclass
class GradientBuffer:
    """Sparse accumulator of d(loss)/dW keyed by feature column."""

    rows: int
    _cols: list = field(default_factory=list)
    _blocks: list = field(default_factory=list)

    def add(self, cols: np.ndarray, block: np.ndarray) -> None:
        """Accumulate ``block`` (rows x len(cols)) into columns ``cols``."""
        if block.shape != (self.rows, len(cols)):
            raise ValueError(f"block shape {block.shape} does not match ({self.rows}, {len(cols)})")
        self._cols.append(np.asarray(cols, dtype=np.int64))
        self._blocks.append(np.asarray(block, dtype=np.float64))

    def merge(self, other: "GradientBuffer") -> None:
        self._cols += other._cols
        self._blocks += other._blocks

    def consolidate(self) -> tuple[np.ndarray, np.ndarray]:
        """Return unique sorted columns and the summed (rows x ncols) block."""
        if not self._cols:
            return np.zeros(0, np.int64), np.zeros((self.rows, 0))
        if len(self._cols) == 1:
            cols, block = self._cols[0], self._blocks[0]
            order = np.argsort(cols, kind="stable")
            if np.all(np.diff(cols[order]) > 0):
                return cols[order], block[:, order]
        all_cols = np.concatenate(self._cols)
        all_blocks = np.concatenate(self._blocks, axis=1)
        cols, inv = np.unique(all_cols, return_inverse=True)
        out = np.zeros((self.rows, cols.size))
        np.add.at(out.T, inv, all_blocks.T)
        self._cols, self._blocks = [cols], [out]
        return cols, out

    def to_dense(self, n_cols: int) -> np.ndarray:
        cols, block = self.consolidate()
        out = np.zeros((self.rows, n_cols))
        out[:, cols] = block
        return out

    def clear(self) -> None:
        self._cols.clear()
        self._blocks.clear()

    def __bool__(self):
        return bool(self._cols)


@dataclass
class AugmentingModel:
    """``weights`` has shape (d_aug, feature_dim)."""

    weights: np.ndarray
    hasher: FeatureHasher
    mode: str = "normalized"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        # column-major so a feature's weight column is contiguous for sparse updates
        self.weights = np.asfortranarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2 or self.weights.shape[1] != self.hasher.feature_dim:
            raise ValueError(
                f"weights must be (d_aug, {self.hasher.feature_dim}), got {self.weights.shape}"
            )

    @classmethod
    def init(
        cls,
        d_aug: int = 64,
        feature_dim: int = 1 << 18,
        mode: str = "normalized",
        seed: int = 0,
        hasher_seed: int | None = None,
        scale: float = 1.0,
    ) -> "AugmentingModel":
        """Uniform(-s, s) weights with ``s = scale / sqrt(feature_dim)``."""
        hasher = FeatureHasher(feature_dim, seed if hasher_seed is None else hasher_seed)
        bound = scale / np.sqrt(feature_dim)
        w = np.random.default_rng(seed).uniform(-bound, bound, size=(d_aug, feature_dim))
        return cls(w, hasher, mode)

    @property
    def d_aug(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "AugmentingModel":
        return AugmentingModel(self.weights.copy(order="F"), self.hasher, self.mode)

    def raw(self, X: sp.csr_matrix) -> np.ndarray:
        """Raw encodings ``X @ W.T`` for a feature matrix, computed on active columns only."""
        cols, compact = compact_columns(X)
        if cols.size == 0:
            return np.zeros((X.shape[0], self.d_aug))
        return np.asarray(compact @ self.weights[:, cols].T)

    def emit(self, raw: np.ndarray) -> np.ndarray:
        """Map raw encodings to emitted embeddings (row-wise)."""
        if not np.all(np.isfinite(raw)):
            raise NonFiniteEncoding("augmenting encoder produced non-finite values; weights exploded?")
        if self.mode == "unnormalized":
            return raw
        norms = np.sqrt(np.einsum("ij,ij->i", raw, raw))
        out = np.zeros_like(raw)
        ok = norms > 0
        out[ok] = raw[ok] / norms[ok, None]
        if not np.all(ok):
            log.warning("%d zero raw encodings replaced by the first basis vector", int((~ok).sum()))
            out[~ok, 0] = 1.0
        return out

    def encode_many(self, texts: Sequence[str]) -> np.ndarray:
        return self.emit(self.raw(self.hasher.featurize_many(texts)))

    def backward(self, X: sp.csr_matrix, raw: np.ndarray, upstream: np.ndarray, buf: GradientBuffer | None = None) -> GradientBuffer:
        """Accumulate d(loss)/dW given d(loss)/d(emitted) for each row of ``X``.

        In normalized mode the chain passes through ``(I - u u^T)/||raw||``;
        rows with zero raw vector contribute nothing.
        """
        upstream = np.asarray(upstream, dtype=np.float64)
        if self.mode == "normalized":
            norms = np.sqrt(np.einsum("ij,ij->i", raw, raw))
            g = np.zeros_like(upstream)
            ok = norms > 0
            u = raw[ok] / norms[ok, None]
            gu = upstream[ok]
            g[ok] = (gu - u * np.einsum("ij,ij->i", u, gu)[:, None]) / norms[ok, None]
        else:
            g = upstream
        buf = buf if buf is not None else GradientBuffer(self.d_aug)
        cols, compact = compact_columns(X)
        if cols.size:
            buf.add(cols, np.asarray(compact.T @ g).T)
        return buf

    def to_bytes(self) -> bytes:
        head = CHECKPOINT_MAGIC + struct.pack(
            "<IIIBq", CHECKPOINT_VERSION, self.feature_dim, self.d_aug, MODES.index(self.mode), self.hasher.seed
        )
        body = head + self.weights.astype("<f8").tobytes()
        return body + struct.pack("<I", zlib.crc32(body))

    @classmethod
    def from_bytes(cls, blob: bytes) -> "AugmentingModel":
        head_size = 4 + struct.calcsize("<IIIBq")
        if len(blob) < head_size + 4 or blob[:4] != CHECKPOINT_MAGIC:
            raise CheckpointError("not an augmenting-model checkpoint")
        version, F, d, mode, seed = struct.unpack("<IIIBq", blob[4:head_size])
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (crc,) = struct.unpack("<I", blob[-4:])
        if zlib.crc32(blob[:-4]) != crc:
            raise CheckpointError("checkpoint CRC mismatch (file corrupted)")
        if len(blob) != head_size + 8 * F * d + 4 or mode >= len(MODES):
            raise CheckpointError("checkpoint size or mode field inconsistent")
        w = np.frombuffer(blob, dtype="<f8", count=F * d, offset=head_size).reshape(d, F).astype(np.float64)
        return cls(w, FeatureHasher(F, seed), MODES[mode])


def compact_columns(X: sp.csr_matrix) -> tuple[np.ndarray, sp.csr_matrix]:
    """Return the active columns of ``X`` and ``X`` restricted to them."""
    X = sp.csr_matrix(X)
    cols, inv = np.unique(X.indices, return_inverse=True)
    compact = sp.csr_matrix((X.data, inv.astype(np.int64), X.indptr), shape=(X.shape[0], cols.size))
    return cols, compact


def encode(model: AugmentingModel, text: str) -> EmbeddingVector:
    raw = model.raw(model.hasher.featurize_many([text]))
    out = model.emit(raw)[0]
    return EmbeddingVector(out, normalized=True if model.mode == "normalized" else None)


def encode_backward(model: AugmentingModel, text: str, upstream_grad, buf: GradientBuffer | None = None) -> GradientBuffer:
    X = model.hasher.featurize_many([text])
    raw = model.raw(X)
    return model.backward(X, raw, np.asarray(upstream_grad, dtype=np.float64).reshape(1, -1), buf)
