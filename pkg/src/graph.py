"""
KNN 그래프 모듈

청크 단위 KNN 그래프를 만들고, PageRank로 구조적 중요도를 계산하여
코어 청크를 선택하며, 차수 분포 통계를 제공합니다.

- 각 노드는 어휘 유사도(공유 키워드 수) 상위 K/2 개와
  의미 유사도(코사인) 상위 K/2 개를 이웃으로 제안합니다.
- PageRank는 제안 그래프를 대칭화한 무향 그래프 위에서 계산합니다.
- 동점은 항상 (점수 내림차순, chunk id 오름차순)으로 깹니다.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Literal, Mapping, Optional, Sequence, Set, Tuple

import networkx as nx
import numpy as np

from src.corpus import Chunk, KeywordVocabulary
from src.embedding import EmbeddingStore

try:
    from config.settings import KNN_K, PAGERANK_ALPHA, PAGERANK_TOL, PAGERANK_MAX_ITER
except ImportError:
    KNN_K: int = 2
    PAGERANK_ALPHA: float = 0.15
    PAGERANK_TOL: float = 1e-8
    PAGERANK_MAX_ITER: int = 200

logger = logging.getLogger(__name__)

Provenance = Literal["lexical", "semantic"]
CoreMode = Literal["pagerank", "uniform"]


# ============================================================================
# 설정 / 타입
# ============================================================================

@dataclass(frozen=True)
class KnnConfig:
    """KNN 그래프 / PageRank 설정

    Attributes:
        k: KNN 차수 K (짝수, K/2 어휘 + K/2 의미)
        alpha: 텔레포트 확률 α ∈ (0, 1]
        tol: PageRank L1 수렴 허용 오차
        max_iter: PageRank 최대 반복 횟수
    """

    k: int = KNN_K
    alpha: float = PAGERANK_ALPHA
    tol: float = PAGERANK_TOL
    max_iter: int = PAGERANK_MAX_ITER

    def validate(self) -> "KnnConfig":
        """
        Raises:
            ValueError: K가 양의 짝수가 아니거나 α, tol, max_iter가 범위를 벗어난 경우
        """
        if self.k < 2 or self.k % 2 != 0:
            raise ValueError(f"K는 2 이상의 짝수여야 합니다: {self.k}")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"α는 (0, 1] 범위여야 합니다: {self.alpha}")
        if self.tol <= 0:
            raise ValueError(f"tol은 양수여야 합니다: {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter는 1 이상이어야 합니다: {self.max_iter}")
        return self


@dataclass
class KnnGraph:
    """청크 KNN 그래프

    Attributes:
        nodes: 노드(chunk id) 목록, 오름차순
        proposals: 노드 → 제안한 (이웃, 출처) 리스트 (어휘 먼저, 그 다음 의미)
        undirected: 대칭화된 무향 그래프 (networkx)
    """

    nodes: List[int] = field(default_factory=list)
    proposals: Dict[int, List[Tuple[int, Provenance]]] = field(default_factory=dict)
    undirected: nx.Graph = field(default_factory=nx.Graph)

    def neighbors(self, node: int) -> List[int]:
        """무향 이웃 (오름차순)"""
        return sorted(self.undirected.neighbors(node))

    def degree(self, node: int) -> int:
        return int(self.undirected.degree(node))

    def edge_count(self) -> int:
        return self.undirected.number_of_edges()

    def to_records(self) -> List[Dict[str, object]]:
        """제안 엣지를 JSON 직렬화용 레코드로 변환합니다."""
        return [
            {"source": src, "target": dst, "provenance": prov}
            for src in self.nodes
            for dst, prov in self.proposals.get(src, [])
        ]

    @classmethod
    def from_records(cls, nodes: Iterable[int], records: Iterable[Mapping[str, object]]) -> "KnnGraph":
        graph = cls(nodes=sorted(int(n) for n in nodes))
        graph.undirected.add_nodes_from(graph.nodes)
        for node in graph.nodes:
            graph.proposals[node] = []
        for rec in records:
            src, dst = int(rec["source"]), int(rec["target"])
            graph.proposals.setdefault(src, []).append((dst, str(rec["provenance"])))  # type: ignore[arg-type]
            graph.undirected.add_edge(src, dst)
        return graph


@dataclass(frozen=True)
class PageRankScores:
    """PageRank 결과

    Attributes:
        scores: chunk id → π
        iterations: 사용한 반복 횟수
        residual: 마지막 L1 잔차
        converged: tol 이내로 수렴했는지 여부
    """

    scores: Dict[int, float]
    iterations: int
    residual: float
    converged: bool

    def __len__(self) -> int:
        return len(self.scores)


# ============================================================================
# KNN 그래프 구축
# ============================================================================

def _ranked(candidates: Sequence[int], score: Mapping[int, float]) -> List[int]:
    return sorted(candidates, key=lambda j: (-score[j], j))


def build_knn_graph(
    chunks: Sequence[Chunk],
    vocabulary: KeywordVocabulary,
    store: EmbeddingStore,
    cfg: Optional[KnnConfig] = None,
) -> KnnGraph:
    """청크 KNN 그래프를 만듭니다.

    각 노드 i 에 대해
    - 𝒮₁: 공유 키워드 수 상위 K/2 (공유 0개여도 chunk id 순으로 채움)
    - 𝒮₂: 𝒮₁ 과 자기 자신을 제외한 코사인 상위 K/2
    노드 수가 K 이하이면 이 규칙만으로 다른 모든 노드와 연결됩니다.

    Args:
        chunks: 청크 리스트 (모두 "chunk:{id}" 키로 임베딩되어 있어야 함)
        vocabulary: 같은 코퍼스의 키워드 어휘
        store: 임베딩 저장소
        cfg: KNN 설정

    Raises:
        KeyError: 임베딩이 없는 청크가 있는 경우
    """
    cfg = (cfg or KnnConfig()).validate()
    half = cfg.k // 2
    ids = sorted(c.chunk_id for c in chunks)
    graph = KnnGraph(nodes=ids)
    graph.undirected.add_nodes_from(ids)
    if not ids:
        return graph

    missing = store.missing(f"chunk:{i}" for i in ids)
    if missing:
        raise KeyError(f"임베딩이 없는 청크: {missing[:5]}")

    matrix = store.matrix([f"chunk:{i}" for i in ids])
    norms = np.linalg.norm(matrix, axis=1)
    norms[norms == 0.0] = 1.0
    unit = matrix / norms[:, None]
    cos = unit @ unit.T

    keywords = vocabulary.chunk_keywords()
    empty: Set[str] = set()
    position = {cid: idx for idx, cid in enumerate(ids)}

    for row, i in enumerate(ids):
        others = [j for j in ids if j != i]
        kw_i = keywords.get(i, empty)
        lexical = {j: float(len(kw_i & keywords.get(j, empty))) for j in others}
        s1 = _ranked(others, lexical)[:half]

        s1_set = set(s1)
        remaining = [j for j in others if j not in s1_set]
        semantic = {j: float(cos[row, position[j]]) for j in remaining}
        s2 = _ranked(remaining, semantic)[:half]

        graph.proposals[i] = [(j, "lexical") for j in s1] + [(j, "semantic") for j in s2]
        for j in s1 + s2:
            graph.undirected.add_edge(i, j)

    logger.info(
        f"KNN 그래프 구축 완료: 노드 {len(ids)}개, 무향 엣지 {graph.edge_count()}개 (K={cfg.k})"
    )
    return graph


# ============================================================================
# PageRank
# ============================================================================

def transition_matrix(graph: KnnGraph) -> np.ndarray:
    """무향 그래프의 행 확률 행렬 P (고립 노드는 모든 노드로 균등 연결)"""
    n = len(graph.nodes)
    adjacency = nx.to_numpy_array(graph.undirected, nodelist=graph.nodes, weight=None)
    degrees = adjacency.sum(axis=1)
    P = np.empty((n, n))
    for i in range(n):
        if degrees[i] > 0:
            P[i] = adjacency[i] / degrees[i]
        else:
            P[i] = 1.0 / n
    return P


def pagerank(
    graph: KnnGraph,
    cfg: Optional[KnnConfig] = None,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
) -> PageRankScores:
    """π = α·1/n + (1−α)·π·P 의 고정점을 거듭제곱 반복으로 구합니다.

    Args:
        graph: KNN 그래프 (비어 있으면 안 됨)
        cfg: α 기본값을 제공하는 설정
        tol: L1 잔차 허용 오차 (None이면 cfg.tol)
        max_iter: 최대 반복 (None이면 cfg.max_iter)

    Returns:
        PageRankScores: 수렴하지 못하면 converged=False 로 반환합니다.

    Raises:
        ValueError: 그래프가 비어 있거나 tol ≤ 0 인 경우
    """
    cfg = (cfg or KnnConfig()).validate()
    tol = cfg.tol if tol is None else tol
    max_iter = cfg.max_iter if max_iter is None else max_iter
    n = len(graph.nodes)
    if n == 0:
        raise ValueError("빈 그래프에는 PageRank를 계산할 수 없습니다.")
    if tol <= 0:
        raise ValueError(f"tol은 양수여야 합니다: {tol}")

    alpha = cfg.alpha
    P = transition_matrix(graph)
    teleport = np.full(n, 1.0 / n)
    pi = teleport.copy()
    residual = float("inf")
    iterations = 0

    for iterations in range(1, max_iter + 1):
        nxt = alpha * teleport + (1.0 - alpha) * (pi @ P)
        residual = float(np.abs(nxt - pi).sum())
        pi = nxt
        if residual < tol:
            break

    pi = pi / pi.sum()
    converged = residual < tol
    if not converged:
        logger.warning(f"PageRank 미수렴: {max_iter}회 반복 후 잔차 {residual:.3e}")
    else:
        logger.debug(f"PageRank 수렴: {iterations}회, 잔차 {residual:.3e}")

    return PageRankScores(
        scores={node: float(pi[idx]) for idx, node in enumerate(graph.nodes)},
        iterations=iterations,
        residual=residual,
        converged=converged,
    )


# ============================================================================
# 코어 청크 선택
# ============================================================================

def core_count(beta: float, n: int) -> int:
    """⌈β·n⌉ (부동소수점 오차로 한 칸 올라가는 것을 막기 위해 반올림 후 올림)"""
    return min(n, math.ceil(round(beta * n, 9)))


def select_core_chunks(
    scores: PageRankScores,
    beta: float,
    mode: CoreMode = "pagerank",
    seed: int = 0,
) -> List[int]:
    """코어 청크 ⌈β·n⌉ 개를 선택합니다.

    - pagerank: π 내림차순, 동점은 chunk id 오름차순
    - uniform: 시드 고정 비복원 균등 표본 (표본 순서 유지)

    Raises:
        ValueError: β가 [0, 1] 밖이거나 알 수 없는 mode
    """
    if not (0.0 <= beta <= 1.0):
        raise ValueError(f"β는 [0, 1] 범위여야 합니다: {beta}")
    ids = sorted(scores.scores)
    count = core_count(beta, len(ids))
    if count == 0:
        return []

    if mode == "pagerank":
        ranked = sorted(ids, key=lambda i: (-scores.scores[i], i))
        return ranked[:count]
    if mode == "uniform":
        rng = np.random.default_rng(seed)
        picked = rng.choice(len(ids), size=count, replace=False)
        return [ids[int(p)] for p in picked]
    raise ValueError(f"알 수 없는 코어 선택 방식: {mode}")


# ============================================================================
# 차수 통계
# ============================================================================

def degree_histogram(graph: KnnGraph) -> Dict[int, int]:
    """대칭화 그래프의 차수 → 노드 수"""
    histogram: Dict[int, int] = {}
    for _, deg in graph.undirected.degree():
        histogram[int(deg)] = histogram.get(int(deg), 0) + 1
    return dict(sorted(histogram.items()))


def degree_histogram_csv(histogram: Mapping[int, int]) -> str:
    """`degree,count` 형식의 CSV 문자열 (차수 오름차순)"""
    lines = ["degree,count"]
    lines.extend(f"{deg},{histogram[deg]}" for deg in sorted(histogram))
    return "\n".join(lines) + "\n"
