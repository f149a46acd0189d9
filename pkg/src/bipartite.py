"""
텍스트-키워드 이분 그래프 모듈

모든 서브청크와 키워드 어휘로부터 이분 그래프 𝒢_k 를 만듭니다.
- 키워드 노드의 설명은 그 키워드를 포함한 모든 문장을 이어 붙인 것이고,
  임베딩은 그 문장 임베딩들의 평균입니다.
- 엣지 (k, s) 는 서브청크 s 의 정규화 단어 집합에 k 가 있을 때만 존재합니다.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Set, Tuple

from src.corpus import KeywordVocabulary, Sentence, SubChunk
from src.embedding import EmbeddingProvider, EmbeddingStore, embed_batch, mean_embedding
from src.utils.text import word_set

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class KeywordNode:
    """키워드 노드

    Attributes:
        keyword: 정규화 키워드
        description: 키워드를 포함한 문장들을 이어 붙인 텍스트
        sentence_ids: 설명에 사용된 문장 id (오름차순)
    """

    keyword: str
    description: str
    sentence_ids: Tuple[int, ...]

    @property
    def sentence_count(self) -> int:
        return len(self.sentence_ids)

    @property
    def embedding_key(self) -> str:
        return f"kw:{self.keyword}"


@dataclass
class BipartiteGraph:
    """이분 그래프 𝒢_k = (𝒱_k ∪ 𝒱_t, 𝓔_k)

    Attributes:
        keywords: 키워드 → 노드
        sub_ids: 서브청크 노드 id (오름차순)
        adjacency: 키워드 → 이웃 서브청크 id (오름차순, 중복 없음)
    """

    keywords: Dict[str, KeywordNode] = field(default_factory=dict)
    sub_ids: List[int] = field(default_factory=list)
    adjacency: Dict[str, List[int]] = field(default_factory=dict)

    def edges(self) -> List[Tuple[str, int]]:
        """(키워드, 서브청크) 엣지 리스트 (키워드, sub_id 순)"""
        return [(k, s) for k in sorted(self.adjacency) for s in self.adjacency[k]]

    def degree(self, keyword: str) -> int:
        return len(self.adjacency.get(keyword, []))

    def edge_count(self) -> int:
        return sum(len(v) for v in self.adjacency.values())

    def is_empty(self) -> bool:
        return not self.keywords


def neighbors(graph: BipartiteGraph, keywords: Iterable[str]) -> Set[int]:
    """N(𝒮_k): 키워드 집합에 인접한 서브청크 id 집합

    그래프에 없는 키워드는 경고와 함께 무시합니다.
    """
    result: Set[int] = set()
    for keyword in keywords:
        adjacent = graph.adjacency.get(keyword)
        if adjacent is None:
            logger.warning(f"알 수 없는 키워드 무시: {keyword}")
            continue
        result.update(adjacent)
    return result


def build_bipartite(
    sub_chunks: Sequence[SubChunk],
    sentences: Sequence[Sentence],
    vocabulary: KeywordVocabulary,
    provider: EmbeddingProvider,
    store: EmbeddingStore,
) -> BipartiteGraph:
    """이분 그래프를 만들고 키워드 임베딩을 저장소에 넣습니다.

    문장 임베딩("sent:{id}")이 저장소에 없으면 이 단계에서 만듭니다.
    키워드 임베딩("kw:{keyword}")은 정규화하지 않은 문장 평균 그대로 저장합니다.

    Args:
        sub_chunks: 모든 서브청크
        sentences: 서브청크에서 분리한 문장
        vocabulary: 같은 코퍼스의 키워드 어휘
        provider: 문장 임베딩 제공자
        store: 임베딩 저장소

    Returns:
        BipartiteGraph: 어휘가 비어 있으면 서브청크 노드만 있는 그래프
    """
    graph = BipartiteGraph(sub_ids=sorted(s.sub_id for s in sub_chunks))
    by_id = {s.sentence_id: s for s in sentences}

    missing = [s for s in sentences if f"sent:{s.sentence_id}" not in store]
    if missing:
        vectors = embed_batch(provider, [s.text for s in missing])
        store.put_many([f"sent:{s.sentence_id}" for s in missing], vectors)

    for keyword in sorted(vocabulary.keywords):
        sentence_ids = sorted({p.sentence_id for p in vocabulary.postings.get(keyword, []) if p.sentence_id in by_id})
        if not sentence_ids:
            logger.debug(f"문장이 없는 키워드 제외: {keyword}")
            continue
        node = KeywordNode(
            keyword=keyword,
            description=" ".join(by_id[i].text for i in sentence_ids),
            sentence_ids=tuple(sentence_ids),
        )
        graph.keywords[keyword] = node
        store.put(node.embedding_key, mean_embedding([store.get(f"sent:{i}") for i in sentence_ids]))

    adjacency: Dict[str, List[int]] = {k: [] for k in graph.keywords}
    for sub in sorted(sub_chunks, key=lambda s: s.sub_id):
        for word in sorted(word_set(sub.text)):
            if word in adjacency:
                adjacency[word].append(sub.sub_id)
    graph.adjacency = adjacency

    logger.info(
        f"이분 그래프 구축 완료: 키워드 {len(graph.keywords)}개, "
        f"서브청크 {len(graph.sub_ids)}개, 엣지 {graph.edge_count()}개"
    )
    return graph


def keyword_records(graph: BipartiteGraph) -> List[Dict[str, object]]:
    """keywords.jsonl 직렬화용 레코드"""
    return [
        {"keyword": n.keyword, "description": n.description, "sentence_ids": list(n.sentence_ids)}
        for n in (graph.keywords[k] for k in sorted(graph.keywords))
    ]


def from_records(
    sub_ids: Iterable[int],
    keyword_rows: Iterable[Dict[str, object]],
    edge_rows: Iterable[Dict[str, object]],
) -> BipartiteGraph:
    """저장된 레코드로부터 그래프를 복원합니다."""
    graph = BipartiteGraph(sub_ids=sorted(int(s) for s in sub_ids))
    for row in keyword_rows:
        node = KeywordNode(str(row["keyword"]), str(row["description"]), tuple(int(i) for i in row["sentence_ids"]))  # type: ignore[union-attr]
        graph.keywords[node.keyword] = node
        graph.adjacency[node.keyword] = []
    for row in edge_rows:
        graph.adjacency.setdefault(str(row["keyword"]), []).append(int(row["sub_id"]))  # type: ignore[arg-type]
    for keyword in graph.adjacency:
        graph.adjacency[keyword] = sorted(set(graph.adjacency[keyword]))
    return graph


__all__ = [
    "KeywordNode",
    "BipartiteGraph",
    "build_bipartite",
    "neighbors",
    "keyword_records",
    "from_records",
]
