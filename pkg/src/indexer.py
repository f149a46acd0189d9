"""
KET 인덱서 모듈

코퍼스로부터 KET 인덱스를 끝까지 만듭니다.

    청킹 → 서브청크 분할 → 문장/키워드 어휘 → 다중 입도 텍스트 임베딩
    → KNN 그래프 → PageRank 코어 청크 선택 (⌈β·n⌉)
    → 코어 청크에 대한 KG-Index → 이분 그래프 → 스켈레톤 재배선

β=0 이면 스켈레톤 없이 키워드 인덱스만 만들고,
β=1, τ=0 이면 모든 청크에 대한 전체 지식 그래프가 됩니다.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from src.bipartite import BipartiteGraph, build_bipartite
from src.corpus import (
    Chunk,
    ChunkingConfig,
    Sentence,
    SubChunk,
    build_vocabulary,
    chunk_corpus,
    segment_sentences,
    split_subchunks,
)
from src.embedding import EmbeddingProvider, EmbeddingStore, embed_batch
from src.extraction import (
    ExtractionCache,
    MeteredExtractor,
    SkeletonGraph,
    TripletExtractor,
    kg_index,
)
from src.graph import (
    KnnConfig,
    KnnGraph,
    PageRankScores,
    build_knn_graph,
    pagerank,
    select_core_chunks,
)
from src.tokenizer import Tokenizer, get_tokenizer
from src.utils.records import IssueLog
from src.utils.text import contains_phrase, normalized_words

try:
    from config.settings import CORE_BETA, CORE_MODE, DEFAULT_SEED, INDEX_FORMAT_VERSION
except ImportError:
    CORE_BETA: float = 0.8
    CORE_MODE: str = "pagerank"
    DEFAULT_SEED: int = 42
    INDEX_FORMAT_VERSION: int = 1

logger = logging.getLogger(__name__)

REWIRING_RULE = (
    "entity/relation link to chunk c -> sub-chunks of c whose normalized words contain the entity name "
    "(either endpoint name for relations); no match -> all sub-chunks of c"
)


# ============================================================================
# 커스텀 예외 클래스
# ============================================================================

class IndexBuildError(RuntimeError):
    """인덱스 빌드 결과 스켈레톤과 이분 그래프가 모두 비어 있는 경우 발생하는 예외"""
    pass


# ============================================================================
# 설정 / 인덱스 타입
# ============================================================================

@dataclass(frozen=True)
class IndexConfig:
    """인덱스 빌드 설정 (manifest에 그대로 기록)

    Attributes:
        chunking: 청킹 설정 (ℓ, τ, 불용어)
        knn: KNN / PageRank 설정
        beta: 코어 청크 비율 β
        core_mode: "pagerank" 또는 "uniform"
        extractor: 추출기 이름
        embedder: 임베딩 제공자 이름
        tokenizer: 토크나이저 이름
        seed: 랜덤 시드
    """

    chunking: ChunkingConfig = field(default_factory=ChunkingConfig)
    knn: KnnConfig = field(default_factory=KnnConfig)
    beta: float = CORE_BETA
    core_mode: str = CORE_MODE
    extractor: str = "mock"
    embedder: str = "hash"
    tokenizer: str = "word"
    seed: int = DEFAULT_SEED

    def validate(self) -> "IndexConfig":
        """
        Raises:
            ChunkingConfigError: 청킹 설정 오류
            ValueError: β, core_mode, KNN 설정 오류
        """
        self.chunking.validate()
        self.knn.validate()
        if not (0.0 <= self.beta <= 1.0):
            raise ValueError(f"β는 [0, 1] 범위여야 합니다: {self.beta}")
        if self.core_mode not in ("pagerank", "uniform"):
            raise ValueError(f"알 수 없는 코어 선택 방식: {self.core_mode}")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {
            "chunk_tokens": self.chunking.chunk_tokens,
            "splits": self.chunking.splits,
            "stopword_count": len(self.chunking.stopwords),
            "k": self.knn.k,
            "alpha": self.knn.alpha,
            "pagerank_tol": self.knn.tol,
            "pagerank_max_iter": self.knn.max_iter,
            "beta": self.beta,
            "core_mode": self.core_mode,
            "extractor": self.extractor,
            "embedder": self.embedder,
            "tokenizer": self.tokenizer,
            "seed": self.seed,
        }


@dataclass
class KetIndex:
    """KET 인덱스 𝒢 = 𝒢_s ∪ 𝒢_k

    Attributes:
        config: manifest에 기록된 설정 딕셔너리
        chunks: 청크 테이블
        sub_chunks: 서브청크 테이블 (𝒢_s 와 𝒢_k 가 공유하는 𝒱_t)
        skeleton: 서브청크로 재배선된 스켈레톤
        bipartite: 이분 그래프
        knn_graph: 청크 KNN 그래프
        core_chunks: 선택된 코어 청크 (선택 순서)
        store: 임베딩 저장소
        embedding_provider: 제공자 설명 (manifest용)
        pagerank_info: PageRank 반복/잔차/수렴 정보
        metered: 추출 입력 토큰 계측값
        issues: 빌드 이슈 레코드
    """

    config: Dict[str, Any]
    chunks: List[Chunk]
    sub_chunks: List[SubChunk]
    skeleton: SkeletonGraph
    bipartite: BipartiteGraph
    knn_graph: KnnGraph = field(compare=False)
    core_chunks: List[int]
    store: EmbeddingStore
    embedding_provider: Dict[str, Any] = field(default_factory=dict)
    pagerank_info: Dict[str, Any] = field(default_factory=dict)
    metered: Dict[str, int] = field(default_factory=dict)
    issues: List[Dict[str, Any]] = field(default_factory=list)
    sentences: List[Sentence] = field(default_factory=list, compare=False)
    tokenizer: Optional[Tokenizer] = field(default=None, compare=False, repr=False)

    @property
    def tokenizer_name(self) -> str:
        return str(self.config.get("tokenizer", "word"))

    def sub_chunk(self, sub_id: int) -> SubChunk:
        return self.sub_chunks[sub_id]

    def chunk(self, chunk_id: int) -> Chunk:
        return self.chunks[chunk_id]


# ============================================================================
# 스켈레톤 재배선
# ============================================================================

def rewire_skeleton(skeleton: SkeletonGraph, sub_chunks: Sequence[SubChunk]) -> SkeletonGraph:
    """청크 링크를 서브청크 링크로 바꿉니다.

    청크 c 에 대한 링크는 c 의 서브청크 중 엔티티 이름(관계는 두 끝점 중 하나)을
    정규화 단어 단위로 포함하는 서브청크들로 바뀌며, 하나도 없으면 c 의 모든 서브청크로 바뀝니다.
    """
    if skeleton.link_level == "sub":
        return skeleton

    by_parent: Dict[int, List[SubChunk]] = {}
    for sub in sorted(sub_chunks, key=lambda s: (s.parent, s.split_index)):
        by_parent.setdefault(sub.parent, []).append(sub)
    words = {s.sub_id: normalized_words(s.text) for s in sub_chunks}

    def rewire(links: List[int], names: Sequence[List[str]]) -> List[int]:
        result = set()
        for chunk_id in links:
            subs = by_parent.get(chunk_id, [])
            matched = [s.sub_id for s in subs if any(contains_phrase(words[s.sub_id], n) for n in names)]
            result.update(matched or [s.sub_id for s in subs])
        return sorted(result)

    name_words = {e.entity_id: normalized_words(e.name) for e in skeleton.entities}
    entities = [replace(e, links=rewire(e.links, [name_words[e.entity_id]])) for e in skeleton.entities]
    relations = [
        replace(r, links=rewire(r.links, [name_words[r.source], name_words[r.target]]))
        for r in skeleton.relations
    ]
    return SkeletonGraph(entities=entities, relations=relations, link_level="sub")


# ============================================================================
# 인덱스 빌드
# ============================================================================

def _embed_units(
    provider: EmbeddingProvider,
    store: EmbeddingStore,
    prefix: str,
    items: Sequence[Tuple[int, str]],
) -> None:
    if items:
        store.put_many([f"{prefix}:{i}" for i, _ in items], embed_batch(provider, [t for _, t in items]))


def ket_index(
    documents: List[Tuple[str, str]],
    cfg: IndexConfig,
    provider: EmbeddingProvider,
    extractor: TripletExtractor,
    tokenizer: Optional[Tokenizer] = None,
    cache: Optional[ExtractionCache] = None,
    issues: Optional[IssueLog] = None,
    map_fn: Optional[Callable[..., List[Any]]] = None,
) -> KetIndex:
    """코퍼스로부터 KET 인덱스를 만듭니다.

    Args:
        documents: (doc_id, text) 리스트
        cfg: 인덱스 설정
        provider: 텍스트 임베딩 제공자
        extractor: 트리플 추출기 (β=0 이면 호출되지 않음)
        tokenizer: 토크나이저 (None이면 cfg.tokenizer 로 생성)
        cache: 추출 캐시
        issues: 이슈 레코드 수집기
        map_fn: 청크별 추출을 병렬 실행할 함수 (게이트웨이의 map_concurrent 등)

    Returns:
        KetIndex

    Raises:
        ChunkingConfigError / ValueError: 설정 오류
        IndexBuildError: 스켈레톤과 이분 그래프가 모두 비어 있는 경우
    """
    cfg.validate()
    issues = issues if issues is not None else IssueLog()
    tokenizer = tokenizer or get_tokenizer(cfg.tokenizer)
    store = EmbeddingStore()

    # 1. 청킹 / 분할 / 문장 / 어휘
    chunks = chunk_corpus(documents, cfg.chunking, tokenizer, issues)
    subs = split_subchunks(chunks, cfg.chunking.splits, tokenizer, issues)
    sentences = segment_sentences(subs, cfg.chunking.stopwords)
    vocabulary = build_vocabulary(sentences, cfg.chunking)

    # 2. 다중 입도 텍스트 임베딩 (청크, 서브청크, 문장)
    _embed_units(provider, store, "chunk", [(c.chunk_id, c.text) for c in chunks])
    _embed_units(provider, store, "sub", [(s.sub_id, s.text) for s in subs])
    _embed_units(provider, store, "sent", [(s.sentence_id, s.text) for s in sentences])

    # 3. KNN 그래프 / 코어 청크
    knn_graph = build_knn_graph(chunks, vocabulary, store, cfg.knn)
    pagerank_info: Dict[str, Any] = {}
    core: List[int] = []
    if chunks:
        scores: PageRankScores = pagerank(knn_graph, cfg.knn)
        pagerank_info = {
            "iterations": scores.iterations,
            "residual": scores.residual,
            "converged": scores.converged,
        }
        if not scores.converged:
            issues.warn("pagerank", "graph", f"{scores.iterations}회 반복 후 미수렴 (잔차 {scores.residual:.3e})")
        core = select_core_chunks(scores, cfg.beta, cfg.core_mode, cfg.seed)  # type: ignore[arg-type]

    # 4. 코어 청크 KG-Index
    metered = MeteredExtractor(extractor, tokenizer)
    core_set = set(core)
    core_chunks = [c for c in chunks if c.chunk_id in core_set]
    skeleton = kg_index(core_chunks, metered, provider, store, tokenizer, cache, issues, map_fn)

    # 5. 이분 그래프 / 재배선
    bipartite = build_bipartite(subs, sentences, vocabulary, provider, store)
    rewired = rewire_skeleton(skeleton, subs)

    if rewired.is_empty() and bipartite.is_empty():
        raise IndexBuildError("스켈레톤과 이분 그래프가 모두 비어 있어 인덱스를 만들 수 없습니다.")

    config = cfg.to_dict()
    config["tokenizer"] = tokenizer.name
    index = KetIndex(
        config=config,
        chunks=chunks,
        sub_chunks=subs,
        skeleton=rewired,
        bipartite=bipartite,
        knn_graph=knn_graph,
        core_chunks=core,
        store=store,
        embedding_provider=provider.describe(),
        pagerank_info=pagerank_info,
        metered={"extraction_input_tokens": metered.input_tokens, "extraction_calls": metered.calls},
        issues=issues.to_list(),
        sentences=sentences,
        tokenizer=tokenizer,
    )
    logger.info(f"KET 인덱스 빌드 완료: {index_summary(index)}")
    return index


def index_summary(index: KetIndex) -> Dict[str, Any]:
    """빌드 요약 (청크/코어/엔티티/관계/키워드/서브청크 수, 계측 토큰)"""
    return {
        "chunks": len(index.chunks),
        "core_chunks": len(index.core_chunks),
        "sub_chunks": len(index.sub_chunks),
        "entities": len(index.skeleton.entities),
        "relations": len(index.skeleton.relations),
        "keywords": len(index.bipartite.keywords),
        "bipartite_edges": index.bipartite.edge_count(),
        "knn_edges": index.knn_graph.edge_count(),
        "metered": dict(index.metered),
        "issues": len(index.issues),
    }


__all__ = [
    "IndexBuildError",
    "IndexConfig",
    "KetIndex",
    "REWIRING_RULE",
    "INDEX_FORMAT_VERSION",
    "ket_index",
    "rewire_skeleton",
    "index_summary",
]
