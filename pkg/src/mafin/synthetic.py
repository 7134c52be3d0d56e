"""Seeded toy retrieval datasets for tests, demos and the end-to-end checks.

Passages are bags of random pseudo-words: a few topic keywords drawn from a
small topic vocabulary, each repeated, plus filler words from a larger
vocabulary. Each query is a lexical corruption of one passage: its keywords
and a few filler words, some swapped for a fixed "synonym" (a different
random string sharing no surface form), plus distractor words. A character
n-gram black box cannot see through the synonyms; a trained encoder can
learn them from training queries, and template queries built from the most
frequent passage words point it at the keywords.
"""

from __future__ import annotations

import string
from dataclasses import dataclass

import numpy as np

from mafin.ingest import Corpus, Passage, Qrels, Query, QuerySet
from mafin.genqueries import stopwords


@dataclass
class ToyDataset:
    corpus: Corpus
    queries: QuerySet
    qrels: Qrels
    synonyms: dict[str, str]


def _words(rng: np.random.Generator, n: int, taken: set[str], lo: int = 5, hi: int = 8) -> list[str]:
    letters = np.array(list(string.ascii_lowercase))
    out = []
    while len(out) < n:
        w = "".join(rng.choice(letters, size=int(rng.integers(lo, hi + 1))))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def make_toy_dataset(
    n_passages: int = 500,
    n_queries: int = 200,
    vocab_size: int = 150,
    topic_vocab: int = 60,
    keywords: int = 2,
    keyword_repeats: int = 2,
    passage_words: int = 8,
    query_words: int = 4,
    synonym_rate: float = 0.5,
    distractors: int = 1,
    seed: int = 0,
) -> ToyDataset:
    """Build a corpus and ``n_queries`` queries, each with one relevant passage (label 1).

    A passage has ``keywords`` distinct topic words repeated ``keyword_repeats``
    times and ``passage_words - keywords`` filler words. A query keeps every
    keyword plus ``query_words - keywords`` filler words of its passage,
    replaces each with its synonym with probability ``synonym_rate`` and adds
    ``distractors`` random filler words.
    """
    if n_queries > n_passages:
        raise ValueError("at most one query per passage")
    if not 0 <= keywords <= min(query_words, passage_words):
        raise ValueError("keywords must fit in both passages and queries")
    rng = np.random.default_rng(seed)
    taken = set(stopwords())
    topics = _words(rng, topic_vocab, taken)
    filler = _words(rng, vocab_size, taken)
    vocab = topics + filler
    synonyms = dict(zip(vocab, _words(rng, len(vocab), taken)))

    passages, parts = [], []
    for i in range(n_passages):
        keys = [topics[j] for j in rng.choice(topic_vocab, size=keywords, replace=False)]
        rest = [filler[j] for j in rng.choice(vocab_size, size=passage_words - keywords, replace=False)]
        words = keys * keyword_repeats + rest
        words = [words[j] for j in rng.permutation(len(words))]
        passages.append(Passage(f"d{i:04d}", " ".join(words)))
        parts.append((keys, rest))
    corpus = Corpus(passages)

    targets = rng.choice(n_passages, size=n_queries, replace=False)
    queries, qrels = [], {}
    for qi, pi in enumerate(sorted(targets.tolist())):
        keys, rest = parts[pi]
        pick = rng.choice(len(rest), size=min(query_words - keywords, len(rest)), replace=False)
        words = keys + [rest[j] for j in pick]
        q = [synonyms[w] if rng.random() < synonym_rate else w for w in words]
        q += [filler[j] for j in rng.choice(vocab_size, size=distractors, replace=False)]
        q = [q[j] for j in rng.permutation(len(q))]
        qid = f"q{qi:04d}"
        queries.append(Query(qid, " ".join(q)))
        qrels[qid] = {passages[pi].id: 1}
    return ToyDataset(corpus, QuerySet(queries), qrels, synonyms)
