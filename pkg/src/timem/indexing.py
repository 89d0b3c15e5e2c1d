"""Dual-channel scoring over base segments.

Semantic channel: cosine similarity of embeddings, mapped to [0, 1].
Lexical channel: Okapi BM25 over extracted keywords, min-max normalized
per query across the leaf pool. The two are fused with a configurable
weight and the top-k leaves are activated.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, IndexOutOfRange, ZeroVector
from .tree import MemoryNode

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if self.k1 < 0:
            raise ValueError(f"k1 must be >= 0, got {self.k1}")
        if not 0 <= self.b <= 1:
            raise ValueError(f"b must be in [0, 1], got {self.b}")


class Bm25Index:
    """Okapi BM25 statistics over a fixed corpus of token lists."""

    def __init__(self, corpus: list[list[str]], params: Bm25Params | None = None):
        if not corpus:
            raise ValueError("corpus must be non-empty")
        self.params = params or Bm25Params()
        self.corpus = corpus
        self.doc_len = [len(doc) for doc in corpus]
        self.avgdl = sum(self.doc_len) / len(corpus)
        df: Counter[str] = Counter()
        for doc in corpus:
            df.update(set(doc))
        n = len(corpus)
        # idf = ln((N - n_t + 0.5) / (n_t + 0.5) + 1)
        self.idf = {t: math.log((n - c + 0.5) / (c + 0.5) + 1.0) for t, c in df.items()}
        self._freqs = [Counter(doc) for doc in corpus]

    def score(self, doc_index: int, keywords: list[str]) -> float:
        if not 0 <= doc_index < len(self.corpus):
            raise IndexOutOfRange(f"doc index {doc_index} outside corpus of {len(self.corpus)}")
        k1, b = self.params.k1, self.params.b
        dl = self.doc_len[doc_index]
        freqs = self._freqs[doc_index]
        total = 0.0
        for term in keywords:
            idf = self.idf.get(term)
            if idf is None:
                continue  # term absent from the whole corpus
            f = freqs.get(term, 0)
            denom = f + k1 * (1 - b + b * dl / self.avgdl) if self.avgdl > 0 else f + k1
            if denom > 0:
                total += idf * f * (k1 + 1) / denom
        return total


def bm25_score(
    corpus: list[list[str]],
    doc_index: int,
    keywords: list[str],
    params: Bm25Params | None = None,
) -> float:
    """One-shot BM25 score; builds corpus statistics on the fly."""
    return Bm25Index(corpus, params).score(doc_index, keywords)


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatch(f"shapes {u.shape} and {v.shape} differ")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ZeroVector("cosine similarity undefined for zero vectors")
    return float(np.dot(u, v) / (nu * nv))


@dataclass(frozen=True)
class ScoredLeaf:
    node_id: int
    s_sem: float
    s_lex: float
    fused: float


def _keyword_terms(keywords: list[str]) -> list[str]:
    """Flatten keywords to tokens (a multiword keyword scores per token)."""
    terms: list[str] = []
    for kw in keywords:
        terms.extend(tokenize(kw))
    return terms


def fused_top_k(
    query_embedding: np.ndarray,
    keywords: list[str],
    leaves: list[MemoryNode],
    fusion_weight: float = 0.9,
    k: int = 20,
    params: Bm25Params | None = None,
) -> list[ScoredLeaf]:
    """Score every leaf on both channels and return the top-k fused.

    s_sem = (1 + cosine) / 2; s_lex = min-max normalized BM25 over the
    whole leaf pool (all scores equal -> 0 for all). Ties break toward
    the more recent interval end, then the smaller id.
    """
    if not 0 <= fusion_weight <= 1:
        raise ValueError(f"fusion weight must be in [0, 1], got {fusion_weight}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not leaves:
        return []

    terms = _keyword_terms(keywords)
    corpus = [tokenize(leaf.text) for leaf in leaves]
    index = Bm25Index(corpus, params)
    raw_lex = [index.score(i, terms) for i in range(len(leaves))]
    lo, hi = min(raw_lex), max(raw_lex)
    if hi > lo:
        s_lex = [(x - lo) / (hi - lo) for x in raw_lex]
    else:
        s_lex = [0.0] * len(leaves)  # no discriminative lexical signal

    scored = []
    for i, leaf in enumerate(leaves):
        if leaf.embedding is None:
            raise ValueError(f"leaf {leaf.id} has no embedding")
        sem = (1.0 + cosine_similarity(query_embedding, leaf.embedding)) / 2.0
        fused = fusion_weight * sem + (1.0 - fusion_weight) * s_lex[i]
        scored.append((fused, leaf.interval.end, leaf.id, ScoredLeaf(leaf.id, sem, s_lex[i], fused)))

    # fused descending, then recency descending, then id ascending
    scored.sort(key=lambda item: (-item[0], -item[1].timestamp(), item[2]))
    return [item[3] for item in scored[:k]]
