"""Embedding vectors and the exact vector arithmetic shared by all modules."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

NORM_TOL = 1e-6


class DimensionMismatch(ValueError):
    pass


class ZeroNormError(ValueError):
    """Raised when a vector with zero L2 norm is normalized or compared."""


@dataclass(frozen=True)
class EmbeddingVector:
    """A dense float64 vector that remembers whether it is unit-norm.

    ``normalized`` is derived from the values unless given explicitly; an
    explicit ``True`` is checked against the actual norm.
    """

    values: np.ndarray
    normalized: bool = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        if values.size < 1:
            raise ValueError("embedding must have at least one dimension")
        if not np.all(np.isfinite(values)):
            raise ValueError("embedding contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        is_unit = abs(_norm(values) - 1.0) <= NORM_TOL
        if self.normalized is None:
            object.__setattr__(self, "normalized", is_unit)
        elif self.normalized and not is_unit:
            raise ValueError(f"vector flagged normalized has norm {_norm(values)!r}")

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    @property
    def norm(self) -> float:
        return _norm(self.values)

    def __len__(self) -> int:
        return self.dim


def _as_values(a) -> np.ndarray:
    if isinstance(a, EmbeddingVector):
        return a.values
    return np.asarray(a, dtype=np.float64).reshape(-1)


def _dot(x: np.ndarray, y: np.ndarray) -> float:
    # Plain left-to-right accumulation; products commute, so dot(a, b) == dot(b, a) bitwise.
    total = 0.0
    for u, v in zip(x.tolist(), y.tolist()):
        total += u * v
    return total


def _norm(x: np.ndarray) -> float:
    return math.sqrt(_dot(x, x))


def dot(a, b) -> float:
    """Inner product with index-ascending summation."""
    x, y = _as_values(a), _as_values(b)
    if x.shape != y.shape:
        raise DimensionMismatch(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    return _dot(x, y)


def cosine(a, b) -> float:
    """Cosine similarity; equals ``dot`` when both inputs are flagged normalized."""
    d = dot(a, b)
    if (
        isinstance(a, EmbeddingVector)
        and isinstance(b, EmbeddingVector)
        and a.normalized
        and b.normalized
    ):
        return d
    na, nb = _norm(_as_values(a)), _norm(_as_values(b))
    if na == 0.0 or nb == 0.0:
        raise ZeroNormError("cosine of a zero-norm embedding is undefined")
    return d / (na * nb)


def l2_normalize(a) -> EmbeddingVector:
    x = _as_values(a)
    n = _norm(x)
    if n == 0.0:
        raise ZeroNormError("cannot normalize the zero vector")
    return EmbeddingVector(x / n, normalized=True)


def normalize_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise L2 normalization of a 2-D array; zero rows raise."""
    m = np.asarray(m, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", m, m))
    if np.any(norms == 0.0):
        raise ZeroNormError("cannot normalize a zero row")
    return m / norms[:, None]


def derive_seed(seed: int, label: str) -> int:
    """Child seed for one consumer of randomness, independent across labels."""
    h = hashlib.blake2b(f"{int(seed)}/{label}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(h, "little") & 0x7FFF_FFFF
