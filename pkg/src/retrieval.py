"""
검색 모듈

토큰 예산 λ 안에서 컨텍스트를 조립합니다.

- kg_retrieve: 스켈레톤 채널. 시드 엔티티(유클리드 거리) → 관계 → 서브청크 순으로
  (엔티티+관계) ≤ λ_s/2, 서브청크 ≤ λ_s/2 예산을 적용합니다. 서브청크 순위는 시드 전체와
  그 관계 후보 전체에 대한 링크 수로 정합니다.
- keyword_retrieve: 키워드 채널. 코사인 순으로 키워드를 늘려 |⊕N(𝒮_k)| ≥ 2·λ_k 가 처음 되는
  지점에서 멈추고, N(𝒮_k) 의 서브청크를 (처음 덮은 키워드 순위, 코사인) 순으로 λ_k 까지 담습니다.
- ket_retrieve: C_s(θ·λ) ⊕ C_k((1−θ)·λ)
- text_retrieve / knn_retrieve: 청크 단위 비교 기준선

모든 선택은 순위대로 담다가 처음으로 넘치는 항목 앞에서 멈춥니다 (뒤쪽 작은 항목으로 빈틈을 채우지 않음).
모든 순위는 예산과 무관하므로 λ 를 키우면 이전 선택을 모두 포함합니다.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Dict, Iterable, List, Literal, Optional, Sequence, Set, Tuple

import numpy as np

from config.prompts import ANSWER_PROMPT_TEMPLATE, ANSWER_SYSTEM_MESSAGE, CONTEXT_SECTION_TITLES, render_template
from src.bipartite import neighbors
from src.embedding import EmbeddingProvider, cosine_to_rows, embed_batch
from src.extraction import relation_context_text
from src.indexer import KetIndex
from src.tokenizer import Tokenizer, get_tokenizer

try:
    from config.settings import ANSWER_MAX_TOKENS, CONTEXT_TOKEN_LIMIT, RETRIEVAL_THETA, SEED_ENTITY_COUNT
except ImportError:
    ANSWER_MAX_TOKENS: int = 500
    CONTEXT_TOKEN_LIMIT: int = 12000
    RETRIEVAL_THETA: float = 0.4
    SEED_ENTITY_COUNT: int = 10

if TYPE_CHECKING:
    from src.gateway import LLMGateway

logger = logging.getLogger(__name__)

Channel = Literal["entity", "relation", "chunk", "keyword-chunk"]
RetrievalMode = Literal["ket", "text", "knn"]


# ============================================================================
# 커스텀 예외 클래스
# ============================================================================

class RetrievalConfigError(ValueError):
    """검색 설정이 유효하지 않은 경우 발생하는 예외 (λ ≤ 0, θ ∉ [0, 1] 등)"""
    pass


# ============================================================================
# 설정 / 컨텍스트 타입
# ============================================================================

@dataclass(frozen=True)
class RetrievalConfig:
    """검색 설정

    Attributes:
        limit: 컨텍스트 토큰 한도 λ
        theta: 스켈레톤 채널 비율 θ
        k_seed: 시드 엔티티 수
    """

    limit: float = CONTEXT_TOKEN_LIMIT
    theta: float = RETRIEVAL_THETA
    k_seed: int = SEED_ENTITY_COUNT

    def validate(self) -> "RetrievalConfig":
        """
        Raises:
            RetrievalConfigError: λ ≤ 0, θ ∉ [0, 1], k_seed < 1
        """
        if self.limit <= 0:
            raise RetrievalConfigError(f"λ는 양수여야 합니다: {self.limit}")
        if not (0.0 <= self.theta <= 1.0):
            raise RetrievalConfigError(f"θ는 [0, 1] 범위여야 합니다: {self.theta}")
        if self.k_seed < 1:
            raise RetrievalConfigError(f"k_seed는 1 이상이어야 합니다: {self.k_seed}")
        return self


@dataclass(frozen=True)
class Segment:
    """컨텍스트 조각"""

    channel: Channel
    source_id: str
    text: str
    tokens: int

    def to_dict(self) -> Dict[str, Any]:
        return {"channel": self.channel, "source_id": self.source_id, "tokens": self.tokens, "text": self.text}


@dataclass
class Context:
    """채널 태그가 붙은 순서 있는 컨텍스트

    Attributes:
        segments: 조각 리스트 (entity → relation → chunk → keyword-chunk 순)
        flags: 상태 표시 (예: "empty")
    """

    segments: List[Segment] = field(default_factory=list)
    flags: List[str] = field(default_factory=list)

    @property
    def total_tokens(self) -> int:
        return sum(s.tokens for s in self.segments)

    def tokens_for(self, *channels: str) -> int:
        return sum(s.tokens for s in self.segments if s.channel in channels)

    def source_ids(self, *channels: str) -> List[str]:
        return [s.source_id for s in self.segments if not channels or s.channel in channels]

    def text(self) -> str:
        return "\n".join(s.text for s in self.segments)

    def is_empty(self) -> bool:
        return not self.segments

    def concat(self, other: "Context") -> "Context":
        """C ⊕ C' (순서 유지)"""
        return Context(segments=self.segments + other.segments, flags=sorted(set(self.flags + other.flags)))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "segments": [s.to_dict() for s in self.segments],
            "total_tokens": self.total_tokens,
            "flags": list(self.flags),
        }

    def to_json(self, indent: Optional[int] = 2) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=indent)


# ============================================================================
# 공통 헬퍼
# ============================================================================

def _tokenizer(index: KetIndex) -> Tokenizer:
    if index.tokenizer is None:
        index.tokenizer = get_tokenizer(index.tokenizer_name)
    return index.tokenizer


def _similarities(index: KetIndex, keys: Sequence[str], query: np.ndarray) -> Dict[str, float]:
    if not keys:
        return {}
    sims = cosine_to_rows(index.store.matrix(list(keys)), query)
    return {k: float(s) for k, s in zip(keys, sims)}


def _greedy(
    candidates: Iterable[Tuple[str, str, int]],
    channel: Channel,
    budget: float,
    used: int = 0,
) -> Tuple[List[Segment], int]:
    """(source_id, text, tokens) 를 순서대로 담다가 처음 넘치는 항목 앞에서 멈춥니다."""
    segments: List[Segment] = []
    for source_id, text, tokens in candidates:
        if used + tokens > budget:
            break
        segments.append(Segment(channel, source_id, text, tokens))
        used += tokens
    return segments, used


# ============================================================================
# KG 채널
# ============================================================================

def seed_entities(index: KetIndex, query: np.ndarray, k_seed: int) -> List[int]:
    """유클리드 거리 오름차순 상위 k_seed 엔티티 (동점은 entity_id 오름차순)"""
    entities = index.skeleton.entities
    if not entities:
        return []
    matrix = index.store.matrix([e.embedding_key for e in entities])
    distances = np.linalg.norm(matrix - np.asarray(query, dtype=np.float64)[None, :], axis=1)
    ranked = sorted(range(len(entities)), key=lambda i: (float(distances[i]), entities[i].entity_id))
    return [entities[i].entity_id for i in ranked[:k_seed]]


def rank_relations(index: KetIndex, seeds: Sequence[int], seed_sim: Dict[int, float]) -> List[int]:
    """시드 엔티티에 닿는 관계의 순위

    두 끝점이 모두 시드인 관계가 먼저, 같은 부류 안에서는 시드 끝점 유사도 합 내림차순,
    그 다음 relation_id 오름차순입니다.
    """
    seed_set = set(seeds)
    keyed = []
    for rel in index.skeleton.relations:
        touched = [e for e in {rel.source, rel.target} if e in seed_set]
        if not touched:
            continue
        both = rel.source in seed_set and rel.target in seed_set
        score = sum(seed_sim.get(e, 0.0) for e in touched)
        keyed.append(((0 if both else 1, -score, rel.relation_id), rel.relation_id))
    return [rid for _, rid in sorted(keyed)]


def kg_retrieve(
    index: KetIndex,
    query: np.ndarray,
    budget: float,
    k_seed: int = SEED_ENTITY_COUNT,
) -> Context:
    """스켈레톤 채널 검색

    Args:
        index: KET 인덱스 (스켈레톤은 서브청크로 재배선되어 있어야 함)
        query: 쿼리 임베딩
        budget: 이 채널의 토큰 예산 λ_s
        k_seed: 시드 엔티티 수

    Returns:
        Context: entity → relation → chunk 순의 조각들 (스켈레톤이 비면 빈 컨텍스트)
    """
    skeleton = index.skeleton
    if skeleton.is_empty() or budget <= 0:
        return Context()
    tokenizer = _tokenizer(index)
    half = budget / 2.0

    seeds = seed_entities(index, query, k_seed)
    sims = _similarities(index, [f"ent:{e}" for e in seeds], query)
    seed_sim = {e: sims[f"ent:{e}"] for e in seeds}

    # 엔티티 → 관계를 하나의 순서로 보고 처음 넘치는 지점에서 멈춤
    entity_candidates = []
    for eid in seeds:
        text = skeleton.entities[eid].context_text()
        entity_candidates.append((f"ent:{eid}", text, tokenizer.count(text)))
    entity_segments, used = _greedy(entity_candidates, "entity", half)

    ranked_relations = rank_relations(index, seeds, seed_sim)
    relation_segments: List[Segment] = []
    if len(entity_segments) == len(entity_candidates):
        relation_candidates = []
        for rid in ranked_relations:
            text = relation_context_text(skeleton, skeleton.relations[rid])
            relation_candidates.append((f"rel:{rid}", text, tokenizer.count(text)))
        relation_segments, used = _greedy(relation_candidates, "relation", half, used)

    # 서브청크: 시드 엔티티 전체와 그 관계 후보 전체에 대한 링크 수 → 코사인 → sub_id
    # 예산과 무관한 순서라서 λ 를 키워도 이미 담긴 서브청크가 빠지지 않음
    link_count: Dict[int, int] = {}
    for eid in seeds:
        for sid in skeleton.entities[eid].links:
            link_count[sid] = link_count.get(sid, 0) + 1
    for rid in ranked_relations:
        for sid in skeleton.relations[rid].links:
            link_count[sid] = link_count.get(sid, 0) + 1

    sub_sims = _similarities(index, [f"sub:{s}" for s in sorted(link_count)], query)
    ranked_subs = sorted(link_count, key=lambda s: (-link_count[s], -sub_sims[f"sub:{s}"], s))
    chunk_segments, _ = _greedy(
        ((f"sub:{s}", index.sub_chunk(s).text, index.sub_chunk(s).token_count) for s in ranked_subs),
        "chunk",
        half,
    )

    return Context(segments=entity_segments + relation_segments + chunk_segments)


# ============================================================================
# 키워드 채널
# ============================================================================

def seed_keywords(index: KetIndex, query: np.ndarray, budget: float) -> List[str]:
    """코사인 순으로 키워드를 늘려 |⊕N(𝒮_k)| ≥ 2·budget 이 처음 되는 지점까지의 𝒮_k"""
    graph = index.bipartite
    keywords = sorted(graph.keywords)
    sims = _similarities(index, [graph.keywords[k].embedding_key for k in keywords], query)
    ranked = sorted(keywords, key=lambda k: (-sims[f"kw:{k}"], k))

    selected: List[str] = []
    covered: Set[int] = set()
    tokens = 0
    for keyword in ranked:
        selected.append(keyword)
        for sid in graph.adjacency.get(keyword, []):
            if sid not in covered:
                covered.add(sid)
                tokens += index.sub_chunk(sid).token_count
        if tokens >= 2 * budget:
            break
    return selected


def keyword_retrieve(index: KetIndex, query: np.ndarray, budget: float) -> Context:
    """키워드 채널 검색

    Returns:
        Context: keyword-chunk 조각들 (키워드가 없으면 경고와 함께 빈 컨텍스트)
    """
    if budget <= 0:
        return Context()
    if index.bipartite.is_empty():
        logger.warning("키워드가 없어 키워드 채널 결과가 비어 있습니다.")
        return Context(flags=["no-keywords"])

    selected = seed_keywords(index, query, budget)
    candidates = sorted(neighbors(index.bipartite, selected))
    sims = _similarities(index, [f"sub:{s}" for s in candidates], query)

    # 서브청크를 처음 덮은 시드 키워드의 순위로 묶고, 묶음 안에서는 코사인 순
    # 𝒮_k 는 예산이 커질수록 같은 순위를 뒤로 늘리기만 하므로 이 순서도 앞부분이 유지됨
    first_cover: Dict[int, int] = {}
    for rank, keyword in enumerate(selected):
        for sid in index.bipartite.adjacency.get(keyword, []):
            first_cover.setdefault(sid, rank)
    ranked = sorted(candidates, key=lambda s: (first_cover[s], -sims[f"sub:{s}"], s))
    segments, _ = _greedy(
        ((f"sub:{s}", index.sub_chunk(s).text, index.sub_chunk(s).token_count) for s in ranked),
        "keyword-chunk",
        budget,
    )
    return Context(segments=segments)


# ============================================================================
# KET 검색
# ============================================================================

def embed_query(provider: EmbeddingProvider, question: str) -> np.ndarray:
    """질문 임베딩 (L2 정규화)"""
    return embed_batch(provider, [question])[0]


def ket_retrieve_vector(index: KetIndex, query: np.ndarray, cfg: RetrievalConfig) -> Context:
    """쿼리 임베딩으로 C_s(θ·λ) ⊕ C_k((1−θ)·λ) 를 만듭니다."""
    cfg.validate()
    skeleton_part = kg_retrieve(index, query, cfg.theta * cfg.limit, cfg.k_seed)
    keyword_part = keyword_retrieve(index, query, (1.0 - cfg.theta) * cfg.limit)
    context = skeleton_part.concat(keyword_part)
    if context.is_empty():
        logger.warning("두 채널 모두 결과가 없습니다.")
        context.flags = sorted(set(context.flags) | {"empty"})
    return context


def ket_retrieve(
    index: KetIndex,
    question: str,
    cfg: RetrievalConfig,
    provider: EmbeddingProvider,
) -> Context:
    """질문 텍스트로 KET 검색을 수행합니다."""
    return ket_retrieve_vector(index, embed_query(provider, question), cfg)


# ============================================================================
# 청크 단위 기준선
# ============================================================================

def _chunk_candidates(index: KetIndex, chunk_ids: Iterable[int]) -> Iterable[Tuple[str, str, int]]:
    for cid in chunk_ids:
        chunk = index.chunk(cid)
        yield f"chunk:{cid}", chunk.text, chunk.token_count


def rank_chunks(index: KetIndex, query: np.ndarray) -> List[int]:
    ids = [c.chunk_id for c in index.chunks]
    sims = _similarities(index, [f"chunk:{i}" for i in ids], query)
    return sorted(ids, key=lambda i: (-sims[f"chunk:{i}"], i))


def text_retrieve(index: KetIndex, query: np.ndarray, budget: float) -> Context:
    """청크를 코사인 순으로 λ 까지 담는 일반 텍스트 검색"""
    if budget <= 0 or not index.chunks:
        return Context()
    segments, _ = _greedy(_chunk_candidates(index, rank_chunks(index, query)), "chunk", budget)
    return Context(segments=segments)


def knn_retrieve(index: KetIndex, query: np.ndarray, budget: float, seeds: int = SEED_ENTITY_COUNT) -> Context:
    """시드 청크와 그 KNN 이웃을 차례로 담는 검색

    시드 청크(코사인 상위 seeds 개)마다 자신, 그 다음 KNN 이웃(코사인 순)을 후보에 넣습니다.
    """
    if budget <= 0 or not index.chunks:
        return Context()
    ranked = rank_chunks(index, query)
    position = {cid: pos for pos, cid in enumerate(ranked)}

    order: List[int] = []
    seen: Set[int] = set()
    for seed in ranked[:seeds]:
        group = [seed] + sorted(index.knn_graph.neighbors(seed), key=lambda c: position[c])
        for cid in group:
            if cid not in seen:
                seen.add(cid)
                order.append(cid)

    segments, _ = _greedy(_chunk_candidates(index, order), "chunk", budget)
    return Context(segments=segments)


def retrieve(
    index: KetIndex,
    query: np.ndarray,
    cfg: RetrievalConfig,
    mode: RetrievalMode = "ket",
) -> Context:
    """검색 방식 선택 (ket / text / knn)

    Raises:
        RetrievalConfigError: 알 수 없는 방식
    """
    cfg.validate()
    if mode == "ket":
        return ket_retrieve_vector(index, query, cfg)
    if mode == "text":
        return text_retrieve(index, query, cfg.limit)
    if mode == "knn":
        return knn_retrieve(index, query, cfg.limit, cfg.k_seed)
    raise RetrievalConfigError(f"알 수 없는 검색 방식: {mode}")


# ============================================================================
# 프롬프트 조립 / 답변 생성
# ============================================================================

def serialize_context(context: Context) -> str:
    """채널 라벨 섹션 + 한 줄 한 레코드 직렬화 (조각 순서 그대로)"""
    lines: List[str] = []
    current: Optional[str] = None
    for segment in context.segments:
        if segment.channel != current:
            current = segment.channel
            lines.append(f"-----{CONTEXT_SECTION_TITLES.get(current, current)}-----")
        lines.append(f"[{segment.source_id}] {' '.join(segment.text.split())}")
    return "\n".join(lines)


def assemble_prompt(context: Context, question: str, template: str = ANSWER_PROMPT_TEMPLATE) -> str:
    """컨텍스트와 질문을 템플릿의 `{context}`, `{question}` 자리에 넣습니다.

    Raises:
        ValueError: 템플릿에 자리표시자가 없는 경우
    """
    if "{context}" not in template or "{question}" not in template:
        raise ValueError("템플릿에 {context} 와 {question} 자리표시자가 모두 필요합니다.")
    return render_template(template, context=serialize_context(context), question=question)


def generate_answer(
    gateway: "LLMGateway",
    context: Context,
    question: str,
    max_tokens: int = ANSWER_MAX_TOKENS,
) -> Tuple[str, Dict[str, int]]:
    """검색된 컨텍스트만으로 답변을 생성합니다.

    Returns:
        (답변, 사용량)

    Raises:
        GatewayError: 호출 실패
    """
    prompt = assemble_prompt(context, question)
    answer, usage = gateway.chat_complete(ANSWER_SYSTEM_MESSAGE, prompt, max_tokens=max_tokens, stage="generation")
    return answer.strip(), usage
