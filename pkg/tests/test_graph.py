"""
KNN 그래프 / PageRank / 코어 선택 테스트
"""

import numpy as np
import pytest

from src.corpus import Chunk, KeywordVocabulary, Posting
from src.embedding import EmbeddingStore
from src.graph import (
    KnnConfig,
    KnnGraph,
    PageRankScores,
    build_knn_graph,
    core_count,
    degree_histogram,
    degree_histogram_csv,
    pagerank,
    select_core_chunks,
    transition_matrix,
)


def _graph_from_edges(nodes, edges) -> KnnGraph:
    graph = KnnGraph(nodes=sorted(nodes))
    graph.undirected.add_nodes_from(graph.nodes)
    graph.undirected.add_edges_from(edges)
    return graph


def _scores(values) -> PageRankScores:
    return PageRankScores(scores=dict(enumerate(values)), iterations=1, residual=0.0, converged=True)


@pytest.fixture
def four_chunk_setup():
    """청크 0,2 는 'rocket', 1,3 은 'wheat' 키워드를 공유"""
    chunks = [Chunk(chunk_id=i, doc_id="d", text=f"c{i}", token_count=1) for i in range(4)]
    vocab = KeywordVocabulary(
        keywords={"rocket", "wheat"},
        postings={
            "rocket": [Posting(0, 0, 0), Posting(2, 2, 2)],
            "wheat": [Posting(1, 1, 1), Posting(3, 3, 3)],
        },
    )
    store = EmbeddingStore()
    store.put_many(
        [f"chunk:{i}" for i in range(4)],
        [[1.0, 0.0], [0.0, 1.0], [1.0, 0.1], [0.1, 1.0]],
    )
    return chunks, vocab, store


# ----------------------------------------------------------------------
# KNN 그래프
# ----------------------------------------------------------------------

class TestKnnGraph:
    """KNN 그래프 구축 테스트"""

    def test_lexical_then_semantic_proposals(self, four_chunk_setup):
        """어휘 이웃 K/2, 의미 이웃 K/2 를 순서대로 제안"""
        chunks, vocab, store = four_chunk_setup
        graph = build_knn_graph(chunks, vocab, store, KnnConfig(k=2))

        assert graph.proposals[0] == [(2, "lexical"), (3, "semantic")]
        assert graph.proposals[1] == [(3, "lexical"), (2, "semantic")]
        for node, proposed in graph.proposals.items():
            assert len(proposed) == 2
            assert node not in [j for j, _ in proposed]
            assert len({j for j, _ in proposed}) == 2

    def test_symmetrized_edges_cover_proposals(self, four_chunk_setup):
        chunks, vocab, store = four_chunk_setup
        graph = build_knn_graph(chunks, vocab, store, KnnConfig(k=2))
        for src, proposed in graph.proposals.items():
            for dst, _ in proposed:
                assert graph.undirected.has_edge(src, dst)
                assert src in graph.neighbors(dst)

    def test_small_graph_connects_everything(self, four_chunk_setup):
        """노드 수가 K 이하이면 완전 그래프"""
        chunks, vocab, store = four_chunk_setup
        graph = build_knn_graph(chunks[:3], vocab, store, KnnConfig(k=4))
        assert graph.edge_count() == 3

    def test_missing_embedding_raises(self, four_chunk_setup):
        chunks, vocab, _ = four_chunk_setup
        with pytest.raises(KeyError):
            build_knn_graph(chunks, vocab, EmbeddingStore(), KnnConfig(k=2))

    def test_records_round_trip(self, four_chunk_setup):
        chunks, vocab, store = four_chunk_setup
        graph = build_knn_graph(chunks, vocab, store, KnnConfig(k=2))
        restored = KnnGraph.from_records(graph.nodes, graph.to_records())

        assert restored.proposals == graph.proposals
        assert set(restored.undirected.edges()) == set(graph.undirected.edges())

    def test_odd_k_rejected(self):
        with pytest.raises(ValueError):
            KnnConfig(k=3).validate()


# ----------------------------------------------------------------------
# PageRank
# ----------------------------------------------------------------------

class TestPageRank:
    """PageRank 테스트"""

    def test_matches_linear_solve(self):
        """거듭제곱 반복 결과가 선형계 해와 일치"""
        graph = _graph_from_edges(range(5), [(0, 1), (0, 2), (0, 3), (3, 4), (1, 2)])
        cfg = KnnConfig(k=2, alpha=0.15)
        result = pagerank(graph, cfg, tol=1e-12, max_iter=1000)

        n = 5
        P = transition_matrix(graph)
        expected = np.linalg.solve((np.eye(n) - (1 - cfg.alpha) * P).T, np.full(n, cfg.alpha / n))

        assert result.converged
        assert np.allclose([result.scores[i] for i in range(n)], expected, atol=1e-9)
        assert sum(result.scores.values()) == pytest.approx(1.0)

    def test_cycle_is_uniform(self):
        graph = _graph_from_edges(range(6), [(i, (i + 1) % 6) for i in range(6)])
        result = pagerank(graph)
        assert all(v == pytest.approx(1 / 6) for v in result.scores.values())

    def test_alpha_one_is_uniform(self):
        graph = _graph_from_edges(range(4), [(0, 1), (0, 2), (0, 3)])
        result = pagerank(graph, KnnConfig(alpha=1.0))
        assert all(v == pytest.approx(0.25) for v in result.scores.values())
        assert result.iterations == 1

    def test_star_center_ranks_first(self):
        graph = _graph_from_edges(range(4), [(0, 1), (0, 2), (0, 3)])
        result = pagerank(graph)
        assert max(result.scores, key=result.scores.get) == 0

    def test_isolated_node_still_normalized(self):
        graph = _graph_from_edges(range(3), [(0, 1)])
        result = pagerank(graph)
        assert sum(result.scores.values()) == pytest.approx(1.0)
        assert all(v > 0 for v in result.scores.values())

    def test_non_convergence_is_reported(self):
        graph = _graph_from_edges(range(4), [(0, 1), (0, 2), (0, 3)])
        result = pagerank(graph, tol=1e-15, max_iter=1)
        assert not result.converged
        assert result.iterations == 1
        assert sum(result.scores.values()) == pytest.approx(1.0)

    def test_empty_graph_rejected(self):
        with pytest.raises(ValueError):
            pagerank(KnnGraph())

    def test_non_positive_tol_rejected(self):
        graph = _graph_from_edges(range(2), [(0, 1)])
        with pytest.raises(ValueError):
            pagerank(graph, tol=0.0)


# ----------------------------------------------------------------------
# 코어 선택
# ----------------------------------------------------------------------

class TestCoreSelection:
    """코어 청크 선택 테스트"""

    @pytest.mark.parametrize(
        "beta,n,expected",
        [(0.0, 10, 0), (0.3, 10, 3), (0.8, 10, 8), (1.0, 5, 5), (0.01, 5, 1), (0.5, 0, 0)],
    )
    def test_core_count(self, beta, n, expected):
        assert core_count(beta, n) == expected

    def test_pagerank_mode_orders_by_score_then_id(self):
        scores = _scores([0.1, 0.3, 0.3, 0.2, 0.1])
        assert select_core_chunks(scores, 0.6) == [1, 2, 3]

    def test_ties_broken_by_id(self):
        scores = _scores([0.25, 0.25, 0.25, 0.25])
        assert select_core_chunks(scores, 0.5) == [0, 1]

    def test_uniform_mode_is_seeded(self):
        scores = _scores([0.1] * 20)
        a = select_core_chunks(scores, 0.4, mode="uniform", seed=11)
        b = select_core_chunks(scores, 0.4, mode="uniform", seed=11)
        assert a == b
        assert len(a) == 8
        assert len(set(a)) == 8

    def test_invalid_beta(self):
        with pytest.raises(ValueError):
            select_core_chunks(_scores([0.5, 0.5]), 1.5)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            select_core_chunks(_scores([0.5, 0.5]), 0.5, mode="random")  # type: ignore[arg-type]


# ----------------------------------------------------------------------
# 차수 통계
# ----------------------------------------------------------------------

class TestDegreeHistogram:
    """차수 분포 테스트"""

    def test_path_graph(self):
        graph = _graph_from_edges(range(3), [(0, 1), (1, 2)])
        histogram = degree_histogram(graph)
        assert histogram == {1: 2, 2: 1}
        assert degree_histogram_csv(histogram) == "degree,count\n1,2\n2,1\n"

    def test_counts_sum_to_node_count(self, four_chunk_setup):
        chunks, vocab, store = four_chunk_setup
        graph = build_knn_graph(chunks, vocab, store, KnnConfig(k=2))
        assert sum(degree_histogram(graph).values()) == 4
