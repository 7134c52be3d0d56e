"""Synthetic queries for label-free fine-tuning.

One query is generated per passage and assumed relevant to that passage
only, which turns the corpus into one-hot labeled training lists.
"""

from __future__ import annotations

import abc
import json
import logging
import os
import re
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterator

import numpy as np

from mafin.ingest import Corpus, QuerySet, Query, Qrels
from mafin.ranking import LabeledList, sample_negatives

log = logging.getLogger(__name__)

PROMPT = "generate a query based on the given passage"
FALLBACK_QUERY = "what is this passage about?"
TOKEN_ENV = "MAFIN_LLM_TOKEN"

_TOKEN = re.compile(r"[a-z0-9]+")


@lru_cache(maxsize=1)
def stopwords() -> frozenset[str]:
    text = resources.files("mafin").joinpath("data/stopwords.txt").read_text(encoding="utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


def offline_generate(passage: str, seed: int = 0) -> str:
    """Template query naming the passage's two most frequent content words.

    Ties in count go to the lexicographically smaller token. ``seed`` is
    accepted for interface symmetry; the template has no random choices.
    """
    if not passage.strip():
        raise ValueError("passage text is empty")
    stop = stopwords()
    counts = Counter(t for t in _TOKEN.findall(passage.lower()) if t not in stop)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if not ranked:
        return FALLBACK_QUERY
    if len(ranked) == 1:
        return f"what does this passage explain about {ranked[0][0]}?"
    return f"what does this passage explain about {ranked[0][0]} and {ranked[1][0]}?"


class QueryGenerator(abc.ABC):
    identity: str

    @abc.abstractmethod
    def generate(self, passage: str) -> str:
        """One non-empty query for ``passage``."""


class OfflineGenerator(QueryGenerator):
    def __init__(self, seed: int = 0):
        self.seed = seed
        self.identity = f"offline-template:seed={seed}"

    def generate(self, passage: str) -> str:
        return offline_generate(passage, self.seed)


class RemoteGenerator(QueryGenerator):
    """Chat-completions style client: ``{"model", "messages", "temperature"}``."""

    def __init__(
        self,
        base_url: str,
        model: str,
        temperature: float = 0.7,
        retries: int = 2,
        backoff: float = 1.0,
        token_env: str = TOKEN_ENV,
        timeout: float = 60.0,
        session=None,
        sleep=time.sleep,
    ):
        token = os.environ.get(token_env)
        if not token:
            raise RuntimeError(f"environment variable {token_env} is not set; it must hold the API token")
        if session is None:
            import requests

            session = requests.Session()
        self.base_url = base_url
        self.model = model
        self.temperature = temperature
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self.identity = f"remote:{model}:t={temperature}"
        self._session = session
        self._sleep = sleep
        self._headers = {"Authorization": f"Bearer {token}", "Content-Type": "application/json"}

    def generate(self, passage: str) -> str:
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": f"{PROMPT}\n\n{passage}"}],
            "temperature": self.temperature,
        }
        last = None
        for attempt in range(self.retries + 1):
            try:
                resp = self._session.post(self.base_url, json=body, headers=self._headers, timeout=self.timeout)
                if getattr(resp, "status_code", 200) >= 400:
                    raise ConnectionError(f"HTTP {resp.status_code}")
                text = resp.json()["choices"][0]["message"]["content"].strip()
                if text:
                    return text
                last = ValueError("empty generation")
            except Exception as exc:
                last = exc
            log.warning("query generation attempt %d failed: %s", attempt + 1, last)
            if attempt < self.retries:
                self._sleep(self.backoff * 2**attempt)
        raise RuntimeError(f"query generation failed after {self.retries + 1} attempts: {last}")


@dataclass(frozen=True)
class SyntheticPair:
    query_id: str
    text: str
    doc_id: str


@dataclass
class SyntheticPairSet:
    pairs: list[SyntheticPair]
    skipped: list[str] = field(default_factory=list)
    generator: str = ""

    def __len__(self):
        return len(self.pairs)

    def queries(self) -> QuerySet:
        return QuerySet(Query(p.query_id, p.text) for p in self.pairs)

    def qrels(self) -> Qrels:
        """One-hot judgments: each synthetic query is relevant to its source passage only."""
        return {p.query_id: {p.doc_id: 1} for p in self.pairs}

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for p in self.pairs:
                fh.write(json.dumps({"query_id": p.query_id, "text": p.text, "doc_id": p.doc_id}) + "\n")

    @classmethod
    def load(cls, path) -> "SyntheticPairSet":
        pairs = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                obj = json.loads(line)
                try:
                    pairs.append(SyntheticPair(obj["query_id"], obj["text"], obj["doc_id"]))
                except KeyError as exc:
                    raise ValueError(f"{path}:{lineno}: missing field {exc}") from None
        return cls(pairs)


def generate_pairs(
    generator: QueryGenerator,
    corpus: Corpus,
    seed: int = 0,
    max_workers: int = 4,
    use_title: bool = True,
    save_to=None,
) -> SyntheticPairSet:
    """One synthetic query per passage, in corpus order; failed passages are skipped."""
    if not len(corpus):
        raise ValueError("corpus is empty")
    passages = list(corpus)

    def one(p):
        try:
            q = generator.generate(p.embed_text(use_title))
        except Exception as exc:
            log.warning("skipping passage %s: %s", p.id, exc)
            return None
        return q if q and q.strip() else None

    if max_workers > 1 and not isinstance(generator, OfflineGenerator):
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(one, passages))
    else:
        results = [one(p) for p in passages]
    out = SyntheticPairSet([], [], generator.identity)
    for p, q in zip(passages, results):
        if q is None:
            out.skipped.append(p.id)
        else:
            out.pairs.append(SyntheticPair(f"synth-{p.id}", q, p.id))
    if save_to is not None:
        out.save(save_to)
    return out


def pairs_to_training_lists(
    pairs: SyntheticPairSet, corpus: Corpus, m: int, seed: int = 0, use_title: bool = True
) -> Iterator[LabeledList]:
    """For each pair: its passage (label 1) plus ``m - 1`` other passages (label 0)."""
    if m < 2:
        raise ValueError("M must be >= 2")
    rng = np.random.default_rng(seed)
    ids = corpus.ids
    for p in pairs.pairs:
        docs, labels, _ = sample_negatives(p.query_id, {p.doc_id: 1}, ids, m, rng)
        yield LabeledList(p.query_id, p.text, docs, [corpus[d].embed_text(use_title) for d in docs], labels)
