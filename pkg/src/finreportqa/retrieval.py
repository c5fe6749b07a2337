"""Per-report retrieval: chunking, sparse (TF-IDF / BM25) and dense indices,
top-k search, page-level recall, and the chunk-granularity ablation.

All retrieval happens within one report; corpora are small enough that
exact scoring over every unit is the right tool.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .corpus import Report
from .embeddings import EmbeddingProvider
from .errors import (
    DimensionMismatchError,
    EmptyCorpusError,
    EmptyGoldError,
    EmptyQueryError,
)

_TERM_RE = re.compile(r"[a-z0-9]+")

DEFAULT_BM25_PARAMS = (1.2, 0.75)

ABLATION_CHUNK_SIZES = (256, 512, 800, 1200)

INDEX_FORMAT = "finreportqa-index"
INDEX_VERSION = 1


def tokenize(text: str) -> list[str]:
    """Lowercase terms split on any non-alphanumeric run; digits kept."""
    return _TERM_RE.findall(text.lower())


@dataclass(frozen=True)
class RetrievalUnit:
    unit_id: str
    page_number: int
    text: str
    token_count: int


@dataclass(frozen=True)
class ScoredHit:
    unit_id: str
    page_number: int
    score: float


def _hit_sort_key(hit: ScoredHit):
    return (-hit.score, hit.page_number, hit.unit_id)


def rechunk(report: Report, granularity: str | int = "page") -> list[RetrievalUnit]:
    """Build retrieval units at page granularity or a token size within pages.

    Sized granularity greedily packs whole whitespace tokens up to the size;
    the last unit of each page may be short. Units never straddle pages.
    """
    if granularity == "page":
        return [
            RetrievalUnit(
                unit_id=f"p{page.page_number}",
                page_number=page.page_number,
                text=page.text,
                token_count=page.token_count,
            )
            for page in report.pages
        ]
    size = int(granularity)
    if size <= 0:
        raise ValueError("chunk size must be positive")
    units: list[RetrievalUnit] = []
    for page in report.pages:
        words = page.text.split()
        if not words:
            continue
        for index, start in enumerate(range(0, len(words), size)):
            piece = words[start:start + size]
            units.append(RetrievalUnit(
                unit_id=f"p{page.page_number}.{index}",
                page_number=page.page_number,
                text=" ".join(piece),
                token_count=len(piece),
            ))
    return units


# --- sparse indexing ---------------------------------------------------------

@dataclass
class SparseIndex:
    scheme: str  # "tfidf" | "bm25"
    vocabulary: dict[str, int]                      # term -> document frequency
    postings: dict[str, list[tuple[str, int]]]      # term -> [(unit_id, tf)]
    unit_lengths: dict[str, int]                    # unit_id -> term count
    unit_pages: dict[str, int]                      # unit_id -> page number
    n_units: int
    bm25_params: tuple[float, float] = DEFAULT_BM25_PARAMS

    @property
    def avg_unit_length(self) -> float:
        if not self.unit_lengths:
            return 0.0
        return sum(self.unit_lengths.values()) / len(self.unit_lengths)

    def to_json(self) -> str:
        payload = {
            "format": INDEX_FORMAT,
            "version": INDEX_VERSION,
            "scheme": self.scheme,
            "bm25_params": list(self.bm25_params),
            "n_units": self.n_units,
            "vocabulary": {t: self.vocabulary[t] for t in sorted(self.vocabulary)},
            "postings": {
                t: sorted(self.postings[t]) for t in sorted(self.postings)
            },
            "unit_lengths": {u: self.unit_lengths[u] for u in sorted(self.unit_lengths)},
            "unit_pages": {u: self.unit_pages[u] for u in sorted(self.unit_pages)},
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "SparseIndex":
        payload = json.loads(text)
        if payload.get("format") != INDEX_FORMAT:
            raise ValueError("not a finreportqa index file")
        return cls(
            scheme=payload["scheme"],
            vocabulary=dict(payload["vocabulary"]),
            postings={t: [tuple(entry) for entry in post]
                      for t, post in payload["postings"].items()},
            unit_lengths=dict(payload["unit_lengths"]),
            unit_pages=dict(payload["unit_pages"]),
            n_units=payload["n_units"],
            bm25_params=tuple(payload["bm25_params"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SparseIndex":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def build_sparse_index(units: Sequence[RetrievalUnit], scheme: str = "bm25",
                       bm25_params: tuple[float, float] = DEFAULT_BM25_PARAMS) -> SparseIndex:
    if not units:
        raise EmptyCorpusError("cannot index zero units")
    if scheme not in ("tfidf", "bm25"):
        raise ValueError(f"unknown sparse scheme: {scheme!r}")
    vocabulary: dict[str, int] = {}
    postings: dict[str, list[tuple[str, int]]] = {}
    unit_lengths: dict[str, int] = {}
    unit_pages: dict[str, int] = {}
    for unit in units:
        terms = tokenize(unit.text)
        unit_lengths[unit.unit_id] = len(terms)
        unit_pages[unit.unit_id] = unit.page_number
        for term, tf in sorted(Counter(terms).items()):
            vocabulary[term] = vocabulary.get(term, 0) + 1
            postings.setdefault(term, []).append((unit.unit_id, tf))
    return SparseIndex(
        scheme=scheme,
        vocabulary=vocabulary,
        postings=postings,
        unit_lengths=unit_lengths,
        unit_pages=unit_pages,
        n_units=len(units),
        bm25_params=bm25_params,
    )


def _sparse_scores(index: SparseIndex, query_terms: Sequence[str]) -> dict[str, float]:
    scores: dict[str, float] = {}
    n = index.n_units
    if index.scheme == "tfidf":
        for term in query_terms:
            df = index.vocabulary.get(term)
            if not df:
                continue
            idf = math.log(n / df)
            for unit_id, tf in index.postings[term]:
                scores[unit_id] = scores.get(unit_id, 0.0) + tf * idf
        return scores
    k1, b = index.bm25_params
    avgdl = index.avg_unit_length
    for term in query_terms:
        df = index.vocabulary.get(term)
        if not df:
            continue
        idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
        for unit_id, tf in index.postings[term]:
            dl = index.unit_lengths[unit_id]
            denom = tf + k1 * (1 - b + b * dl / avgdl) if avgdl > 0 else tf + k1
            scores[unit_id] = scores.get(unit_id, 0.0) + idf * tf * (k1 + 1) / denom
    return scores


def search(index: SparseIndex, query_text: str, k: int) -> list[ScoredHit]:
    """Top-k units with nonzero score, ordered by score then page then id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    query_terms = tokenize(query_text)
    if not query_terms:
        raise EmptyQueryError("query tokenized to nothing")
    scores = _sparse_scores(index, query_terms)
    hits = [
        ScoredHit(unit_id=uid, page_number=index.unit_pages[uid], score=score)
        for uid, score in scores.items()
        if score > 0.0
    ]
    hits.sort(key=_hit_sort_key)
    return hits[:k]


# --- dense indexing ----------------------------------------------------------

@dataclass
class DenseIndex:
    dimension: int
    vectors: dict[str, list[float]] = field(default_factory=dict)  # unit-norm
    unit_pages: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "format": INDEX_FORMAT,
            "version": INDEX_VERSION,
            "scheme": "dense",
            "dimension": self.dimension,
            "vectors": {u: self.vectors[u] for u in sorted(self.vectors)},
            "unit_pages": {u: self.unit_pages[u] for u in sorted(self.unit_pages)},
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "DenseIndex":
        payload = json.loads(text)
        if payload.get("format") != INDEX_FORMAT or payload.get("scheme") != "dense":
            raise ValueError("not a finreportqa dense index file")
        return cls(
            dimension=payload["dimension"],
            vectors={u: list(map(float, v)) for u, v in payload["vectors"].items()},
            unit_pages=dict(payload["unit_pages"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DenseIndex":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _normalize(vector: Sequence[float]) -> list[float]:
    norm = math.sqrt(sum(x * x for x in vector))
    if norm == 0.0:
        return list(vector)
    return [x / norm for x in vector]


def embed_units(provider: EmbeddingProvider, units: Sequence[RetrievalUnit]) -> DenseIndex:
    if not units:
        raise EmptyCorpusError("cannot index zero units")
    vectors = provider.embed([unit.text for unit in units])
    index = DenseIndex(dimension=provider.dimension)
    for unit, vector in zip(units, vectors):
        if len(vector) != provider.dimension:
            raise DimensionMismatchError(
                f"unit {unit.unit_id}: got dimension {len(vector)}, expected {provider.dimension}")
        index.vectors[unit.unit_id] = _normalize(vector)
        index.unit_pages[unit.unit_id] = unit.page_number
    return index


def dense_search(index: DenseIndex, provider: EmbeddingProvider, query: str, k: int) -> list[ScoredHit]:
    """Top-k by inner product against the normalized query vector."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not query.strip():
        raise EmptyQueryError("query is empty")
    query_vector = _normalize(provider.embed([query])[0])
    if len(query_vector) != index.dimension:
        raise DimensionMismatchError(
            f"query dimension {len(query_vector)} != index dimension {index.dimension}")
    hits = [
        ScoredHit(
            unit_id=uid,
            page_number=index.unit_pages[uid],
            score=sum(q * v for q, v in zip(query_vector, vector)),
        )
        for uid, vector in index.vectors.items()
    ]
    hits.sort(key=_hit_sort_key)
    return hits[:k]


# --- retriever facade --------------------------------------------------------

class Retriever:
    """Uniform search interface over a sparse or dense index."""

    def search(self, query: str, k: int) -> list[ScoredHit]:
        raise NotImplementedError

    @property
    def n_units(self) -> int:
        raise NotImplementedError


class SparseRetriever(Retriever):
    def __init__(self, index: SparseIndex):
        self.index = index

    def search(self, query: str, k: int) -> list[ScoredHit]:
        return search(self.index, query, k)

    @property
    def n_units(self) -> int:
        return self.index.n_units


class DenseRetriever(Retriever):
    def __init__(self, index: DenseIndex, provider: EmbeddingProvider):
        self.index = index
        self.provider = provider

    def search(self, query: str, k: int) -> list[ScoredHit]:
        return dense_search(self.index, self.provider, query, k)

    @property
    def n_units(self) -> int:
        return len(self.index.vectors)


def build_retriever(report: Report, scheme: str, *, granularity: str | int = "page",
                    provider: Optional[EmbeddingProvider] = None,
                    bm25_params: tuple[float, float] = DEFAULT_BM25_PARAMS) -> Retriever:
    units = rechunk(report, granularity)
    if scheme in ("tfidf", "bm25"):
        return SparseRetriever(build_sparse_index(units, scheme, bm25_params))
    if scheme == "dense":
        if provider is None:
            raise ValueError("dense retrieval needs an embedding provider")
        return DenseRetriever(embed_units(provider, units), provider)
    raise ValueError(f"unknown retrieval scheme: {scheme!r}")


# --- evaluation ----------------------------------------------------------------

def pages_from_hits(hits: Iterable[ScoredHit]) -> list[int]:
    """Hit pages in rank order, first occurrence only."""
    seen: set[int] = set()
    pages: list[int] = []
    for hit in hits:
        if hit.page_number not in seen:
            seen.add(hit.page_number)
            pages.append(hit.page_number)
    return pages


def recall_at_k(retrieved_pages: Sequence[int], gold_pages: set[int] | frozenset[int], k: int) -> float:
    """Fraction of gold pages among the first k distinct retrieved pages."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not gold_pages:
        raise EmptyGoldError("gold page set is empty")
    seen: set[int] = set()
    distinct: list[int] = []
    for page in retrieved_pages:
        if page not in seen:
            seen.add(page)
            distinct.append(page)
        if len(distinct) == k:
            break
    return len(set(distinct) & set(gold_pages)) / len(gold_pages)


def ablate_chunks(reports: Sequence[Report], instances: Sequence, sizes: Sequence[int] = ABLATION_CHUNK_SIZES,
                  k_values: Sequence[int] = (5, 10, 30), scheme: str = "bm25") -> list[dict]:
    """Macro-averaged page Recall@k per granularity ("page" plus each size).

    The query is each instance's question text; sub-page hits are mapped to
    their source page before recall.
    """
    by_id = {report.report_id: report for report in reports}
    rows: list[dict] = []
    max_k = max(k_values)
    for granularity in ["page", *sizes]:
        indices: dict[str, SparseIndex] = {}
        recalls: dict[int, list[float]] = {k: [] for k in k_values}
        for instance in instances:
            report = by_id[instance.report_id]
            if report.report_id not in indices:
                indices[report.report_id] = build_sparse_index(
                    rechunk(report, granularity), scheme)
            index = indices[report.report_id]
            hits = search(index, instance.question, k=max(max_k, index.n_units))
            pages = pages_from_hits(hits)
            for k in k_values:
                recalls[k].append(recall_at_k(pages, instance.evidence_pages, k))
        row: dict = {"granularity": str(granularity)}
        for k in k_values:
            values = recalls[k]
            row[f"recall@{k}"] = sum(values) / len(values) if values else 0.0
        rows.append(row)
    return rows
