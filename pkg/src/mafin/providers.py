"""Frozen black-box embedding providers and their persistent cache.

Three providers share one interface: :class:`StubProvider` (deterministic
hashed character trigrams, used by every test), :class:`FileStoreProvider`
(precomputed vectors in the cache file format) and :class:`HTTPProvider`
(an OpenAI-style ``/embeddings`` endpoint).

Cache / store file layout (little endian)::

    b"MAFC" | version u32 | dim u32 | tag_len u32 | tag bytes
    then records of: key (32 bytes, sha256) | dim x f64
"""

from __future__ import annotations

import abc
import hashlib
import logging
import os
import struct
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from mafin.core import EmbeddingVector

log = logging.getLogger(__name__)

CACHE_MAGIC = b"MAFC"
CACHE_VERSION = 1
DEFAULT_MAX_BATCH = 64
DEFAULT_MAX_CHARS = 8000
TOKEN_ENV = "MAFIN_EMBED_TOKEN"


class ProviderError(RuntimeError):
    pass


class TransportError(ProviderError):
    """Retriable failure talking to a backend; ``attempts`` were made."""

    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempt{'s' if attempts != 1 else ''})")
        self.attempts = attempts


class DimensionDriftError(ProviderError):
    pass


class MissingEmbeddingError(ProviderError, KeyError):
    def __str__(self):
        return self.args[0]


class CacheIdentityError(ProviderError):
    pass


def cache_key(identity: str, text: str) -> bytes:
    tag = identity.encode("utf-8")
    return hashlib.sha256(struct.pack("<I", len(tag)) + tag + text.encode("utf-8")).digest()


class BlackBoxProvider(abc.ABC):
    """A frozen text -> unit vector map, identified by ``identity``."""

    embed_dim: int
    identity: str
    max_batch: int = DEFAULT_MAX_BATCH

    @abc.abstractmethod
    def _embed(self, texts: Sequence[str]) -> np.ndarray:
        """Return an (n, embed_dim) array for one batch."""

    def embed_batch(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        return [EmbeddingVector(v, normalized=True) for v in self.embed_array(texts)]

    def embed_array(self, texts: Sequence[str]) -> np.ndarray:
        texts = list(texts)
        if not texts:
            raise ValueError("empty batch")
        if len(texts) > self.max_batch:
            raise ValueError(f"batch of {len(texts)} exceeds max batch size {self.max_batch}")
        for t in texts:
            if not isinstance(t, str) or not t:
                raise ValueError("texts must be non-empty strings")
        out = np.asarray(self._embed(texts), dtype=np.float64)
        if out.ndim != 2 or out.shape[0] != len(texts):
            raise ProviderError(f"backend returned shape {out.shape} for {len(texts)} texts")
        if out.shape[1] != self.embed_dim:
            raise DimensionDriftError(
                f"backend returned dim {out.shape[1]}, provider declares {self.embed_dim}"
            )
        if not np.all(np.isfinite(out)):
            raise ProviderError("backend returned non-finite values")
        norms = np.linalg.norm(out, axis=1)
        if np.any(norms == 0):
            raise ProviderError("backend returned a zero vector")
        return out / norms[:, None]


def embed_batch(provider: BlackBoxProvider, texts: Sequence[str]) -> list[EmbeddingVector]:
    return provider.embed_batch(texts)


def embed_texts(
    provider: BlackBoxProvider,
    texts: Sequence[str],
    batch_size: int | None = None,
    max_workers: int = 4,
) -> np.ndarray:
    """Embed any number of texts in batches, up to ``max_workers`` batches in flight."""
    texts = list(texts)
    if not texts:
        return np.zeros((0, provider.embed_dim))
    size = min(batch_size or provider.max_batch, provider.max_batch)
    chunks = [texts[i : i + size] for i in range(0, len(texts), size)]
    if max_workers <= 1 or len(chunks) == 1:
        parts = [provider.embed_array(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            parts = list(pool.map(provider.embed_array, chunks))
    return np.vstack(parts)


@lru_cache(maxsize=1 << 18)
def _gram_hash(seed: int, gram: str) -> int:
    key = seed.to_bytes(8, "little", signed=True)
    return int.from_bytes(hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=key).digest(), "little")


def _stub_vector(seed: int, dim: int, text: str) -> np.ndarray:
    grams = [text[i : i + 3] for i in range(len(text) - 2)] or [text]
    hashes = np.array([_gram_hash(seed, g) for g in grams], dtype=np.uint64)
    idx = (hashes % np.uint64(dim)).astype(np.int64)
    sign = np.where((hashes >> np.uint64(63)) == 0, 1.0, -1.0)
    v = np.zeros(dim)
    np.add.at(v, idx, sign)
    n = np.sqrt(v @ v)
    if n == 0.0:
        log.warning("stub embedding of %r cancelled to zero; using basis vector", text[:40])
        v[0], n = 1.0, 1.0
    return v / n


def stub_embed(seed: int, dim: int, text: str) -> EmbeddingVector:
    """Signed hashed character-trigram counts, L2 normalized.

    Depends only on ``(seed, dim, text)``; blake2b keeps it platform independent.
    """
    if dim < 2:
        raise ValueError("stub dim must be >= 2")
    if not text:
        raise ValueError("cannot embed empty text")
    return EmbeddingVector(_stub_vector(seed, dim, text), normalized=True)


class StubProvider(BlackBoxProvider):
    def __init__(self, seed: int = 0, dim: int = 256, max_batch: int = DEFAULT_MAX_BATCH):
        if dim < 2:
            raise ValueError("stub dim must be >= 2")
        self.seed = seed
        self.embed_dim = dim
        self.max_batch = max_batch
        self.identity = f"stub:seed={seed}:dim={dim}"

    def _embed(self, texts):
        return np.stack([_stub_vector(self.seed, self.embed_dim, t) for t in texts])


class EmbeddingCache:
    """Append-only persistent map from ``cache_key(identity, text)`` to vectors.

    Writes are serialized by a lock and land as one ``write`` per record, so a
    reader re-opening the file sees whole records; a torn tail left by a crash
    is dropped on load.
    """

    def __init__(self, path, identity: str, dim: int):
        self.path = Path(path)
        self.identity = identity
        self.dim = dim
        self._entries: dict[bytes, np.ndarray] = {}
        self._lock = threading.Lock()
        if self.path.exists() and self.path.stat().st_size > 0:
            self._load()
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "wb") as fh:
                fh.write(self._header())

    def _header(self) -> bytes:
        tag = self.identity.encode("utf-8")
        return CACHE_MAGIC + struct.pack("<III", CACHE_VERSION, self.dim, len(tag)) + tag

    @staticmethod
    def read_header(path) -> tuple[str, int, int]:
        """Return ``(identity, dim, header_size)`` of a cache file."""
        with open(path, "rb") as fh:
            head = fh.read(16)
            if len(head) < 16 or head[:4] != CACHE_MAGIC:
                raise ProviderError(f"{path}: not an embedding cache file")
            version, dim, tag_len = struct.unpack("<III", head[4:])
            if version != CACHE_VERSION:
                raise ProviderError(f"{path}: unsupported cache version {version}")
            tag = fh.read(tag_len)
        return tag.decode("utf-8"), dim, 16 + tag_len

    def _load(self):
        identity, dim, offset = self.read_header(self.path)
        if identity != self.identity:
            raise CacheIdentityError(
                f"{self.path} was written by provider {identity!r}, not {self.identity!r}"
            )
        if dim != self.dim:
            raise CacheIdentityError(f"{self.path} holds dim {dim}, expected {self.dim}")
        rec = 32 + 8 * dim
        data = self.path.read_bytes()[offset:]
        whole = len(data) // rec
        if len(data) % rec:
            log.warning("%s: dropping torn trailing record", self.path)
            with open(self.path, "r+b") as fh:
                fh.truncate(offset + whole * rec)
        for i in range(whole):
            chunk = data[i * rec : (i + 1) * rec]
            self._entries[chunk[:32]] = np.frombuffer(chunk[32:], dtype="<f8").copy()

    @classmethod
    def open(cls, path) -> "EmbeddingCache":
        identity, dim, _ = cls.read_header(path)
        return cls(path, identity, dim)

    def __len__(self):
        return len(self._entries)

    def __contains__(self, text: str) -> bool:
        return cache_key(self.identity, text) in self._entries

    def get(self, text: str) -> np.ndarray | None:
        return self._entries.get(cache_key(self.identity, text))

    def get_key(self, key: bytes) -> np.ndarray | None:
        return self._entries.get(key)

    def put_many(self, texts: Sequence[str], vectors: np.ndarray) -> None:
        vectors = np.asarray(vectors, dtype="<f8")
        with self._lock, open(self.path, "ab") as fh:
            for text, v in zip(texts, vectors):
                key = cache_key(self.identity, text)
                if key in self._entries:
                    continue
                fh.write(key + v.tobytes())
                self._entries[key] = v.astype(np.float64)


class FileStoreProvider(BlackBoxProvider):
    """Serves precomputed vectors from a cache-format file; never computes."""

    def __init__(self, path, max_batch: int = DEFAULT_MAX_BATCH):
        self.store = EmbeddingCache.open(path)
        self.identity = self.store.identity
        self.embed_dim = self.store.dim
        self.max_batch = max_batch

    def _embed(self, texts):
        out = []
        for t in texts:
            key = cache_key(self.identity, t)
            v = self.store.get_key(key)
            if v is None:
                raise MissingEmbeddingError(f"missing precomputed embedding for text hash {key.hex()}")
            out.append(v)
        return np.stack(out)


class HTTPProvider(BlackBoxProvider):
    """Client for ``POST {base_url}`` with ``{"model", "input"}`` bodies.

    Retries transport failures with exponential backoff; texts longer than
    ``max_chars`` are truncated (and logged) before sending.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        dim: int,
        token_env: str = TOKEN_ENV,
        max_batch: int = DEFAULT_MAX_BATCH,
        max_chars: int = DEFAULT_MAX_CHARS,
        attempts: int = 3,
        backoff: float = 1.0,
        timeout: float = 60.0,
        session=None,
        sleep=time.sleep,
    ):
        token = os.environ.get(token_env)
        if not token:
            raise ProviderError(f"environment variable {token_env} is not set; it must hold the API token")
        if session is None:
            import requests

            session = requests.Session()
        self.base_url = base_url
        self.model = model
        self.embed_dim = dim
        self.identity = f"http:{model}:dim={dim}"
        self.max_batch = max_batch
        self.max_chars = max_chars
        self.attempts = attempts
        self.backoff = backoff
        self.timeout = timeout
        self._session = session
        self._sleep = sleep
        self._headers = {"Authorization": f"Bearer {token}", "Content-Type": "application/json"}

    def _post(self, body: dict) -> dict:
        last = None
        for attempt in range(1, self.attempts + 1):
            try:
                resp = self._session.post(self.base_url, json=body, headers=self._headers, timeout=self.timeout)
                status = getattr(resp, "status_code", 200)
                if status >= 500 or status == 429:
                    raise ConnectionError(f"HTTP {status}")
                if status >= 400:
                    raise ProviderError(f"embedding request rejected with HTTP {status}")
                return resp.json()
            except ProviderError:
                raise
            except Exception as exc:  # transport level: connection, timeout, 5xx
                last = exc
                log.warning("embedding request attempt %d/%d failed: %s", attempt, self.attempts, exc)
                if attempt < self.attempts:
                    self._sleep(self.backoff * 2 ** (attempt - 1))
        raise TransportError(f"embedding request failed: {last}", self.attempts)

    def _embed(self, texts):
        sent = []
        for t in texts:
            if len(t) > self.max_chars:
                log.info("truncating text of %d chars to %d", len(t), self.max_chars)
                t = t[: self.max_chars]
            sent.append(t)
        payload = self._post({"model": self.model, "input": sent})
        try:
            data = sorted(payload["data"], key=lambda d: d["index"])
            vecs = [d["embedding"] for d in data]
        except (KeyError, TypeError) as exc:
            raise ProviderError(f"malformed embedding response: {exc}") from None
        for v in vecs:
            if len(v) != self.embed_dim:
                raise DimensionDriftError(f"backend returned dim {len(v)}, expected {self.embed_dim}")
        return np.array(vecs, dtype=np.float64)


class CachedProvider(BlackBoxProvider):
    """Read-through cache in front of another provider."""

    def __init__(self, inner: BlackBoxProvider, cache: EmbeddingCache):
        if cache.identity != inner.identity or cache.dim != inner.embed_dim:
            raise CacheIdentityError(
                f"cache {cache.path} belongs to {cache.identity!r}, provider is {inner.identity!r}"
            )
        self.inner = inner
        self.cache = cache
        self.identity = inner.identity
        self.embed_dim = inner.embed_dim
        self.max_batch = inner.max_batch

    def _embed(self, texts):
        missing = [t for t in dict.fromkeys(texts) if t not in self.cache]
        if missing:
            self.cache.put_many(missing, self.inner.embed_array(missing))
        return np.stack([self.cache.get(t) for t in texts])


@dataclass
class FillReport:
    hits: int = 0
    misses: int = 0
    fetched: int = 0

    def to_json(self) -> dict:
        return {"hits": self.hits, "misses": self.misses, "fetched": self.fetched}


def cache_fill(provider: BlackBoxProvider, corpus, queries, cache_path, use_title: bool = True) -> FillReport:
    """Persist embeddings for every passage and query, fetching only what is missing.

    Each fetched batch is written before the next is requested, so an
    interrupted fill resumes without refetching.
    """
    texts: list[str] = []
    if corpus is not None:
        texts += corpus.texts(use_title)
    if queries is not None:
        texts += queries.texts()
    unique = list(dict.fromkeys(texts))
    cache = EmbeddingCache(cache_path, provider.identity, provider.embed_dim)
    report = FillReport()
    missing = []
    for t in unique:
        if t in cache:
            report.hits += 1
        else:
            missing.append(t)
    report.misses = len(missing)
    for i in range(0, len(missing), provider.max_batch):
        chunk = missing[i : i + provider.max_batch]
        cache.put_many(chunk, provider.embed_array(chunk))
        report.fetched += len(chunk)
    return report
