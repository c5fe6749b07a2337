import random

import pytest

from finreportqa.corpus import parse_report
from finreportqa.embeddings import CachedEmbeddingProvider, EmbeddingCache, EmbeddingProvider
from finreportqa.errors import (
    EmptyCorpusError,
    EmptyGoldError,
    EmptyQueryError,
    ProviderError,
)
from finreportqa.retrieval import (
    DenseRetriever,
    RetrievalUnit,
    SparseIndex,
    ablate_chunks,
    build_sparse_index,
    dense_search,
    embed_units,
    pages_from_hits,
    rechunk,
    recall_at_k,
    search,
    tokenize,
)

from oracles import brute_force_ranking, brute_force_scores, random_corpus, random_query


def units_from_texts(texts, pages=None):
    pages = pages or list(range(1, len(texts) + 1))
    return [
        RetrievalUnit(unit_id=f"u{i:03d}", page_number=pages[i], text=text,
                      token_count=len(text.split()))
        for i, text in enumerate(texts)
    ]


class TestTokenize:
    def test_words_and_digits(self):
        assert tokenize("Net Sales, 2023") == ["net", "sales", "2023"]

    def test_empty(self):
        assert tokenize("") == []

    def test_symbols_split(self):
        assert tokenize("EBITDA/(Interest+Principal)") == ["ebitda", "interest", "principal"]


class TestRechunk:
    def _report(self, page_tokens):
        body = []
        for page_number, count in enumerate(page_tokens, start=1):
            words = " ".join(f"tok{page_number}_{i}" for i in range(count))
            body.append(f"<!-- page: {page_number} -->\n{words}\n")
        return parse_report("".join(body))

    def test_page_granularity(self):
        report = self._report([5, 7])
        units = rechunk(report, "page")
        assert [u.page_number for u in units] == [1, 2]
        assert units[0].text == report.page(1).text

    def test_sized_packing(self):
        report = self._report([600])
        units = rechunk(report, 256)
        assert [u.token_count for u in units] == [256, 256, 88]
        assert all(u.page_number == 1 for u in units)

    def test_small_page_single_unit(self):
        report = self._report([100])
        units = rechunk(report, 256)
        assert len(units) == 1
        assert units[0].token_count == 100

    def test_units_never_straddle_pages(self):
        report = self._report([300, 300])
        units = rechunk(report, 256)
        for unit in units:
            prefix = f"tok{unit.page_number}_"
            assert all(word.startswith(prefix) for word in unit.text.split())

    def test_invalid_size(self):
        with pytest.raises(ValueError):
            rechunk(self._report([5]), 0)


class TestBuildSparseIndex:
    def test_document_frequencies(self):
        index = build_sparse_index(units_from_texts(["a b", "b c"]), "tfidf")
        assert index.vocabulary == {"a": 1, "b": 2, "c": 1}

    def test_single_unit_df_one(self):
        index = build_sparse_index(units_from_texts(["x y z x"]), "bm25")
        assert all(df == 1 for df in index.vocabulary.values())

    def test_postings_match_exhaustive_counts(self):
        texts = ["net income net", "income tax", "net assets assets"]
        index = build_sparse_index(units_from_texts(texts), "bm25")
        expected = {}
        for i, text in enumerate(texts):
            for term in set(tokenize(text)):
                expected.setdefault(term, []).append((f"u{i:03d}", tokenize(text).count(term)))
        assert {t: sorted(p) for t, p in index.postings.items()} == \
               {t: sorted(p) for t, p in expected.items()}

    def test_df_equals_distinct_posting_units(self):
        index = build_sparse_index(units_from_texts(["a b a", "b", "a c"]), "tfidf")
        for term, posting in index.postings.items():
            assert index.vocabulary[term] == len({uid for uid, _ in posting})

    def test_empty_corpus_rejected(self):
        with pytest.raises(EmptyCorpusError):
            build_sparse_index([], "bm25")


class TestSearch:
    def test_full_text_query_ranks_unit_first(self):
        texts = ["alpha beta gamma", "delta epsilon", "alpha delta"]
        index = build_sparse_index(units_from_texts(texts), "tfidf")
        hits = search(index, "delta epsilon", k=3)
        assert hits[0].unit_id == "u001"

    def test_k_larger_than_corpus(self):
        index = build_sparse_index(units_from_texts(["a b", "a c"]), "bm25")
        hits = search(index, "a", k=50)
        assert len(hits) == 2

    def test_zero_score_units_dropped(self):
        index = build_sparse_index(units_from_texts(["a b", "c d"]), "bm25")
        hits = search(index, "a", k=10)
        assert [h.unit_id for h in hits] == ["u000"]

    def test_empty_query_rejected(self):
        index = build_sparse_index(units_from_texts(["a"]), "bm25")
        with pytest.raises(EmptyQueryError):
            search(index, "!!!", k=1)

    def test_bm25_five_unit_fixture_matches_oracle(self):
        texts = [
            "revenue grew while net income fell",
            "net net net income stable",
            "assets and liabilities by segment",
            "income from interest on assets",
            "interest expense net of hedges",
        ]
        unit_texts = {f"u{i:03d}": t for i, t in enumerate(texts)}
        unit_pages = {f"u{i:03d}": i + 1 for i in range(len(texts))}
        index = build_sparse_index(units_from_texts(texts), "bm25")
        hits = search(index, "net income interest", k=5)
        expected = brute_force_ranking(unit_texts, unit_pages, "net income interest",
                                       "bm25", k=5)
        assert [h.unit_id for h in hits] == [uid for uid, _ in expected]
        for hit, (_, score) in zip(hits, expected):
            assert hit.score == pytest.approx(score, abs=1e-9)

    @pytest.mark.parametrize("scheme", ["tfidf", "bm25"])
    def test_random_corpora_match_oracle(self, scheme):
        rng = random.Random(42 if scheme == "bm25" else 43)
        for _ in range(60):
            unit_texts = random_corpus(rng)
            unit_pages = {uid: i + 1 for i, uid in enumerate(unit_texts)}
            units = [
                RetrievalUnit(uid, unit_pages[uid], text, len(text.split()))
                for uid, text in unit_texts.items()
            ]
            index = build_sparse_index(units, scheme)
            query = random_query(rng)
            oracle_scores = brute_force_scores(unit_texts, query, scheme)
            if not oracle_scores:
                continue
            hits = search(index, query, k=len(units))
            expected = brute_force_ranking(unit_texts, unit_pages, query, scheme,
                                           k=len(units))
            assert [h.unit_id for h in hits] == [uid for uid, _ in expected]
            for hit, (_, score) in zip(hits, expected):
                assert hit.score == pytest.approx(score, abs=1e-9)

    def test_prefix_stable_ranking(self):
        rng = random.Random(99)
        unit_texts = random_corpus(rng, max_units=30)
        units = [RetrievalUnit(uid, i + 1, text, len(text.split()))
                 for i, (uid, text) in enumerate(unit_texts.items())]
        index = build_sparse_index(units, "bm25")
        query = "revenue net income"
        full = search(index, query, k=len(units))
        for j in range(1, len(full) + 1):
            assert search(index, query, k=j) == full[:j]

    def test_tie_break_by_page_then_unit(self):
        texts = ["same text", "same text", "same text"]
        units = units_from_texts(texts, pages=[7, 3, 3])
        index = build_sparse_index(units, "bm25")
        hits = search(index, "same", k=3)
        assert [(h.page_number, h.unit_id) for h in hits] == \
               [(3, "u001"), (3, "u002"), (7, "u000")]


class TestIndexSerialization:
    def test_round_trip(self):
        index = build_sparse_index(units_from_texts(["a b", "b c"]), "bm25")
        clone = SparseIndex.from_json(index.to_json())
        assert clone.to_json() == index.to_json()
        assert search(clone, "b", k=2) == search(index, "b", k=2)

    def test_build_is_deterministic(self):
        texts = ["net income", "total assets net", "interest expense"]
        first = build_sparse_index(units_from_texts(texts), "bm25").to_json()
        second = build_sparse_index(units_from_texts(texts), "bm25").to_json()
        assert first == second


class _BasisProvider(EmbeddingProvider):
    """Toy provider: text "unit i" -> basis vector e_i."""

    def __init__(self, dimension=4, query_axis=1):
        self.model = "basis-toy"
        self.dimension = dimension
        self.query_axis = query_axis
        self.calls = 0

    def embed(self, texts):
        self.calls += 1
        vectors = []
        for text in texts:
            axis = int(text.split()[-1]) if text.startswith("unit ") else self.query_axis
            vectors.append([1.0 if i == axis else 0.0 for i in range(self.dimension)])
        return vectors


class _OfflineProvider(EmbeddingProvider):
    model = "basis-toy"
    dimension = 4

    def embed(self, texts):
        raise ProviderError("provider offline")


class TestDense:
    def _units(self, count=4):
        return [RetrievalUnit(f"u{i}", i + 1, f"unit {i}", 2) for i in range(count)]

    def test_basis_vectors_rank_matching_unit_first(self):
        provider = _BasisProvider(query_axis=2)
        index = embed_units(provider, self._units())
        hits = dense_search(index, provider, "query", k=4)
        assert hits[0].unit_id == "u2"
        assert hits[0].score == pytest.approx(1.0)

    def test_all_equal_vectors_fall_back_to_tie_break(self):
        class Constant(EmbeddingProvider):
            model = "const"
            dimension = 3

            def embed(self, texts):
                return [[1.0, 1.0, 1.0] for _ in texts]

        provider = Constant()
        index = embed_units(provider, self._units(3))
        hits = dense_search(index, provider, "anything", k=3)
        assert [h.unit_id for h in hits] == ["u0", "u1", "u2"]

    def test_vectors_unit_normalized(self):
        class Scaled(EmbeddingProvider):
            model = "scaled"
            dimension = 2

            def embed(self, texts):
                return [[3.0, 4.0] for _ in texts]

        index = embed_units(Scaled(), self._units(2))
        for vector in index.vectors.values():
            norm = sum(x * x for x in vector) ** 0.5
            assert norm == pytest.approx(1.0, abs=1e-6)

    def test_cache_replay_without_provider(self, tmp_path):
        cache = EmbeddingCache(tmp_path / "emb")
        warm = CachedEmbeddingProvider(_BasisProvider(query_axis=2), cache)
        units = self._units()
        index = embed_units(warm, units)
        warm.embed(["the query"])  # warm the query vector too

        offline = CachedEmbeddingProvider(_OfflineProvider(), cache)
        hits = dense_search(index, offline, "the query", k=4)
        assert hits[0].unit_id == "u2"

    def test_cache_hit_skips_provider(self, tmp_path):
        cache = EmbeddingCache(tmp_path / "emb")
        inner = _BasisProvider()
        provider = CachedEmbeddingProvider(inner, cache)
        provider.embed(["unit 1"])
        calls_after_first = inner.calls
        provider.embed(["unit 1"])
        assert inner.calls == calls_after_first

    def test_dense_returns_min_k_corpus(self):
        provider = _BasisProvider()
        index = embed_units(provider, self._units(3))
        assert len(dense_search(index, provider, "q", k=10)) == 3

    def test_dense_retriever_facade(self):
        provider = _BasisProvider(query_axis=0)
        retriever = DenseRetriever(embed_units(provider, self._units()), provider)
        assert retriever.n_units == 4
        assert retriever.search("q", 2)[0].unit_id == "u0"

    def test_http_provider_session_memo(self):
        from finreportqa.embeddings import HttpEmbeddingProvider

        calls = []

        def transport(url, payload, headers, timeout):
            calls.append(list(payload["input"]))
            return {"data": [{"embedding": [1.0, 0.0]} for _ in payload["input"]]}

        provider = HttpEmbeddingProvider("http://x/embeddings", "m", 2,
                                         transport=transport)
        first = provider.embed(["a", "b", "a"])
        second = provider.embed(["a"])
        assert first[0] == first[2] == second[0]
        assert calls == [["a", "b"]]  # deduped, then fully memoized


class TestRecall:
    def test_worked_example(self):
        assert recall_at_k([101, 105, 104, 108, 107], {101, 105}, k=5) == 1.0

    def test_zero_overlap(self):
        assert recall_at_k([1, 2, 3], {7}, k=3) == 0.0

    def test_full_retrieval_is_total(self):
        pages = list(range(1, 21))
        assert recall_at_k(pages, {3, 9, 20}, k=20) == 1.0

    def test_monotone_in_k(self):
        rng = random.Random(5)
        for _ in range(30):
            retrieved = rng.sample(range(1, 40), k=20)
            gold = set(rng.sample(range(1, 40), k=4))
            values = [recall_at_k(retrieved, gold, k) for k in range(1, 21)]
            assert all(a <= b for a, b in zip(values, values[1:]))

    def test_duplicates_do_not_consume_slots(self):
        assert recall_at_k([9, 9, 9, 5], {5}, k=2) == 1.0

    def test_empty_gold_rejected(self):
        with pytest.raises(EmptyGoldError):
            recall_at_k([1], set(), k=1)


class TestAblation:
    def _fixture(self):
        # The gold page's table rows land in separate 4-token chunks, so no
        # sub-page unit holds both query terms; a distractor page mentions
        # both terms inside one chunk and outranks them. At page level the
        # gold page's higher term frequencies win.
        page_one = ("| turnover 917 |\n| headcount 35 |\n"
                    "| turnover 820 |\n| headcount 29 |")
        page_two = ("operations summary notes this turnover headcount among other "
                    "annual items include several misc entries listed here")
        md = (f"<!-- page: 1 -->\n{page_one}\n"
              f"<!-- page: 2 -->\n{page_two}\n"
              f"<!-- page: 3 -->\nunrelated narrative text\n")
        report = parse_report(md, report_id="DemoCo_2023")
        instance = type("I", (), {})()
        instance.report_id = "DemoCo_2023"
        instance.question = "turnover headcount"
        instance.evidence_pages = frozenset({1})
        return report, instance

    def test_page_beats_subpage_when_table_splits(self):
        report, instance = self._fixture()
        rows = ablate_chunks([report], [instance], sizes=[4], k_values=[1])
        by_granularity = {row["granularity"]: row for row in rows}
        assert by_granularity["page"]["recall@1"] == 1.0
        assert by_granularity["4"]["recall@1"] == 0.0
        assert by_granularity["page"]["recall@1"] >= by_granularity["4"]["recall@1"]

    def test_k_at_corpus_size_is_total(self):
        report, instance = self._fixture()
        rows = ablate_chunks([report], [instance], sizes=[4], k_values=[3])
        for row in rows:
            assert row["recall@3"] == 1.0

    def test_row_shape(self):
        report, instance = self._fixture()
        rows = ablate_chunks([report], [instance], sizes=[4, 8], k_values=[1, 2])
        assert [row["granularity"] for row in rows] == ["page", "4", "8"]
        assert all("recall@1" in row and "recall@2" in row for row in rows)


def test_pages_from_hits_dedupes_in_rank_order():
    hits = [
        type("H", (), {"unit_id": "a", "page_number": 4})(),
        type("H", (), {"unit_id": "b", "page_number": 2})(),
        type("H", (), {"unit_id": "c", "page_number": 4})(),
    ]
    assert pages_from_hits(hits) == [4, 2]
