"""
텍스트-키워드 이분 그래프 테스트
"""

import numpy as np
import pytest

from src.bipartite import build_bipartite, from_records, keyword_records, neighbors
from src.corpus import ChunkingConfig, build_vocabulary, chunk_corpus, segment_sentences, split_subchunks
from src.embedding import EmbeddingStore, mean_embedding
from src.utils.text import word_set


@pytest.fixture
def bipartite_setup(stopwords, tokenizer, hash_provider, sample_documents):
    cfg = ChunkingConfig(chunk_tokens=24, splits=1, stopwords=stopwords)
    chunks = chunk_corpus(sample_documents, cfg, tokenizer)
    subs = split_subchunks(chunks, 1, tokenizer)
    sentences = segment_sentences(subs, stopwords)
    vocab = build_vocabulary(sentences, cfg)
    store = EmbeddingStore()
    graph = build_bipartite(subs, sentences, vocab, hash_provider, store)
    return graph, subs, sentences, vocab, store


class TestBuildBipartite:
    """이분 그래프 구축 테스트"""

    def test_edges_follow_word_containment(self, bipartite_setup):
        """엣지 (k, s) ⇔ k ∈ 서브청크 s 의 단어 집합"""
        graph, subs, _, _, _ = bipartite_setup
        for sub in subs:
            words = word_set(sub.text)
            for keyword in graph.keywords:
                assert (sub.sub_id in graph.adjacency[keyword]) == (keyword in words)

    def test_every_vocabulary_keyword_has_node(self, bipartite_setup):
        graph, _, _, vocab, _ = bipartite_setup
        assert set(graph.keywords) == vocab.keywords
        assert graph.sub_ids == sorted(graph.sub_ids)

    def test_keyword_embedding_is_sentence_mean(self, bipartite_setup):
        graph, _, _, _, store = bipartite_setup
        node = graph.keywords["rockets"]
        expected = mean_embedding([store.get(f"sent:{i}") for i in node.sentence_ids])
        assert np.allclose(store.get(node.embedding_key), expected, atol=1e-6)

    def test_description_joins_sentences(self, bipartite_setup):
        graph, _, sentences, _, _ = bipartite_setup
        node = graph.keywords["wheat"]
        texts = {s.sentence_id: s.text for s in sentences}
        assert node.description == " ".join(texts[i] for i in node.sentence_ids)
        assert node.sentence_count == 2

    def test_stopwords_are_not_keywords(self, bipartite_setup):
        graph, _, _, _, _ = bipartite_setup
        assert "the" not in graph.keywords


class TestNeighbors:
    """N(𝒮_k) 계산 테스트"""

    def test_union_of_adjacent_subchunks(self, bipartite_setup):
        graph, _, _, _, _ = bipartite_setup
        expected = set(graph.adjacency["rockets"]) | set(graph.adjacency["wheat"])
        assert neighbors(graph, ["rockets", "wheat"]) == expected

    def test_unknown_keyword_ignored(self, bipartite_setup, caplog):
        graph, _, _, _, _ = bipartite_setup
        with caplog.at_level("WARNING"):
            assert neighbors(graph, ["no-such-keyword"]) == set()
        assert "no-such-keyword" in caplog.text

    def test_adding_keywords_never_shrinks_neighbors(self, built_index):
        """N(A) ⊆ N(A ∪ B): 키워드를 늘려 가며 이웃 집합이 커지기만 하는지 확인"""
        graph = built_index.bipartite
        keywords = sorted(graph.keywords)
        for start in range(len(keywords)):
            previous = set()
            for end in range(start + 1, len(keywords) + 1):
                current = neighbors(graph, keywords[start:end])
                assert previous <= current
                previous = current
        assert neighbors(graph, keywords) <= set(graph.sub_ids)


class TestRecords:
    """레코드 직렬화 테스트"""

    def test_round_trip(self, bipartite_setup):
        graph, _, _, _, _ = bipartite_setup
        edge_rows = [{"keyword": k, "sub_id": s} for k, s in graph.edges()]
        restored = from_records(graph.sub_ids, keyword_records(graph), edge_rows)

        assert restored.keywords == graph.keywords
        assert restored.adjacency == graph.adjacency
        assert restored.edge_count() == graph.edge_count()
