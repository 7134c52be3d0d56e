"""BEIR-style corpus / queries / qrels loading and query splits.

File layouts::

    corpus.jsonl    {"_id": str, "title": str, "text": str}
    queries.jsonl   {"_id": str, "text": str}
    qrels/*.tsv     query-id<TAB>corpus-id<TAB>score   (with header row)
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

log = logging.getLogger(__name__)

QRELS_HEADER = ("query-id", "corpus-id", "score")

Qrels = dict[str, dict[str, int]]


class DataError(ValueError):
    """Malformed or inconsistent dataset file."""


@dataclass(frozen=True)
class Passage:
    id: str
    text: str
    title: str = ""

    def embed_text(self, use_title: bool = True) -> str:
        if use_title and self.title.strip():
            return f"{self.title} {self.text}"
        return self.text


@dataclass(frozen=True)
class Query:
    id: str
    text: str


class _Collection:
    _kind = "record"

    def __init__(self, records: Iterable = ()):
        self._records: dict[str, object] = {}
        for r in records:
            if not r.id:
                raise DataError(f"{self._kind} with empty id")
            if r.id in self._records:
                raise DataError(f"duplicate {self._kind} id {r.id!r}")
            self._records[r.id] = r

    def __len__(self):
        return len(self._records)

    def __iter__(self):
        return iter(self._records.values())

    def __contains__(self, key):
        return key in self._records

    def __getitem__(self, key):
        return self._records[key]

    @property
    def ids(self) -> list[str]:
        return list(self._records)

    def subset(self, ids: Iterable[str]):
        return type(self)(self._records[i] for i in ids)

    def __repr__(self):
        return f"{type(self).__name__}(n={len(self)})"


class Corpus(_Collection):
    """Ordered passages keyed by id."""

    _kind = "passage"

    def texts(self, use_title: bool = True) -> list[str]:
        return [p.embed_text(use_title) for p in self]


class QuerySet(_Collection):
    _kind = "query"

    def texts(self) -> list[str]:
        return [q.text for q in self]


def _read_jsonl(path: Path, required: tuple[str, ...]) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            for key in required:
                if not isinstance(obj.get(key), str):
                    raise DataError(f"{path}:{lineno}: missing or non-string field {key!r}")
            yield lineno, obj


def load_corpus(path) -> Corpus:
    path = Path(path)
    corpus = Corpus()
    for lineno, obj in _read_jsonl(path, ("_id", "text")):
        title = obj.get("title", "")
        if not isinstance(title, str):
            raise DataError(f"{path}:{lineno}: field 'title' must be a string")
        if not obj["text"].strip():
            raise DataError(f"{path}:{lineno}: empty passage text")
        if obj["_id"] in corpus:
            raise DataError(f"{path}:{lineno}: duplicate _id {obj['_id']!r}")
        corpus._records[obj["_id"]] = Passage(obj["_id"], obj["text"], title)
    if not len(corpus):
        log.warning("corpus %s is empty", path)
    log.info("loaded %d passages from %s", len(corpus), path)
    return corpus


def load_queries(path) -> QuerySet:
    path = Path(path)
    queries = QuerySet()
    for lineno, obj in _read_jsonl(path, ("_id", "text")):
        if not obj["text"].strip():
            raise DataError(f"{path}:{lineno}: empty query text")
        if obj["_id"] in queries:
            raise DataError(f"{path}:{lineno}: duplicate _id {obj['_id']!r}")
        queries._records[obj["_id"]] = Query(obj["_id"], obj["text"])
    if not len(queries):
        log.warning("query file %s is empty", path)
    return queries


def load_qrels(path, corpus: Corpus | None = None, queries: QuerySet | None = None) -> Qrels:
    """Read a qrels TSV. When ``corpus``/``queries`` are given, every id is checked."""
    path = Path(path)
    qrels: Qrels = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != QRELS_HEADER:
            raise DataError(f"{path}:1: expected header {QRELS_HEADER!r}, got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            qid, did, raw = (c.strip() for c in row)
            try:
                score = int(raw)
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer score {raw!r}") from None
            if score < 0:
                log.warning("%s:%d: negative score %d clamped to 0", path, lineno, score)
                score = 0
            if queries is not None and qid not in queries:
                raise DataError(f"{path}:{lineno}: unknown query id {qid!r}")
            if corpus is not None and did not in corpus:
                raise DataError(f"{path}:{lineno}: unknown corpus id {did!r}")
            per_query = qrels.setdefault(qid, {})
            if did in per_query:
                log.warning("%s:%d: duplicate pair (%s, %s); last one wins", path, lineno, qid, did)
            per_query[did] = score
    return qrels


def validate_qrels(qrels: Qrels, corpus: Corpus, queries: QuerySet) -> None:
    for qid, docs in qrels.items():
        if qid not in queries:
            raise DataError(f"qrels reference unknown query id {qid!r}")
        for did in docs:
            if did not in corpus:
                raise DataError(f"qrels reference unknown corpus id {did!r} (query {qid!r})")


def write_corpus(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in corpus:
            fh.write(json.dumps({"_id": p.id, "title": p.title, "text": p.text}) + "\n")


def write_queries(queries: QuerySet, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for q in queries:
            fh.write(json.dumps({"_id": q.id, "text": q.text}) + "\n")


def write_qrels(qrels: Mapping[str, Mapping[str, int]], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(QRELS_HEADER) + "\n")
        for qid, docs in qrels.items():
            for did, score in docs.items():
                fh.write(f"{qid}\t{did}\t{int(score)}\n")


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    mode: str = "fraction-of-dev"  # or "use-provided-splits"

    def __post_init__(self):
        if self.mode not in ("fraction-of-dev", "use-provided-splits"):
            raise ValueError(f"unknown split mode {self.mode!r}")
        if self.mode == "fraction-of-dev" and not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")


@dataclass
class Splits:
    """Query ids per split; each query's qrels travel with it via :meth:`qrels_for`."""

    train: list[str]
    validation: list[str]
    test: list[str] = field(default_factory=list)

    def qrels_for(self, name: str, qrels: Qrels) -> Qrels:
        return {q: dict(qrels[q]) for q in getattr(self, name) if q in qrels}

    def to_json(self) -> dict:
        return {"train": self.train, "validation": self.validation, "test": self.test}


def split(
    queries: QuerySet | Iterable[str],
    qrels: Qrels,
    spec: SplitSpec,
    provided: Mapping[str, Qrels] | None = None,
) -> Splits:
    """Partition queries into train / validation (/ test).

    ``fraction-of-dev`` shuffles the queries that have judgments in ``qrels``
    with ``spec.seed`` and cuts at ``train_fraction``; the test split is taken
    from ``provided["test"]`` when present. ``use-provided-splits`` returns the
    query ids of ``provided["train"]``, ``provided["dev"]`` (or
    ``"validation"``) and ``provided["test"]`` in file order.
    """
    ids = queries.ids if isinstance(queries, QuerySet) else list(queries)
    provided = provided or {}
    if spec.mode == "use-provided-splits":
        val = provided.get("dev", provided.get("validation"))
        if "train" not in provided or val is None:
            raise ValueError("use-provided-splits needs 'train' and 'dev' qrels")
        out = Splits(list(provided["train"]), list(val), list(provided.get("test", {})))
    else:
        pool = [q for q in ids if q in qrels]
        order = np.random.default_rng(spec.seed).permutation(len(pool))
        shuffled = [pool[i] for i in order]
        n_train = int(math.floor(spec.train_fraction * len(pool) + 0.5))
        out = Splits(shuffled[:n_train], shuffled[n_train:], list(provided.get("test", {})))
    for name in ("train", "validation"):
        if not getattr(out, name):
            raise ValueError(f"{name} split would be empty")
    seen: set[str] = set()
    for name in ("train", "validation", "test"):
        overlap = seen.intersection(getattr(out, name))
        if overlap:
            raise ValueError(f"query {sorted(overlap)[0]!r} appears in two splits")
        seen.update(getattr(out, name))
    return out


@dataclass
class BeirDataset:
    corpus: Corpus
    queries: QuerySet
    qrels: dict[str, Qrels]  # split name -> qrels

    @property
    def all_qrels(self) -> Qrels:
        merged: Qrels = {}
        for q in self.qrels.values():
            for qid, docs in q.items():
                merged.setdefault(qid, {}).update(docs)
        return merged


def load_beir(folder) -> BeirDataset:
    """Load ``corpus.jsonl``, ``queries.jsonl`` and every ``qrels/<split>.tsv``."""
    folder = Path(folder)
    corpus = load_corpus(folder / "corpus.jsonl")
    queries = load_queries(folder / "queries.jsonl")
    qrels = {}
    qdir = folder / "qrels"
    if qdir.is_dir():
        for f in sorted(qdir.glob("*.tsv")):
            qrels[f.stem] = load_qrels(f, corpus, queries)
    return BeirDataset(corpus, queries, qrels)
