"""
지식 그래프 추출 모듈 (KG-Index)

선택된 청크들로부터 엔티티·관계·설명을 추출하고, 설명을 임베딩하며,
각 항목을 그것을 낸 청크와 연결하여 스켈레톤 그래프를 만듭니다.

추출기(TripletExtractor)는 교체 가능한 인터페이스입니다.
- MockTripletExtractor: 대문자 n-gram 규칙 기반 (오프라인 기본값, 결정적)
- LLMTripletExtractor: 엔티티 → 관계 2단계 프롬프트를 게이트웨이로 호출

모든 추출기는 같은 구분자 레코드 형식의 원시 출력을 내며,
파싱은 공통 parse_records() 가 담당합니다.
    ("entity"|name|type|description)
    ("relationship"|source|target|description)
"""

import hashlib
import json
import logging
import os
import re
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import (
    TYPE_CHECKING,
    Callable,
    Dict,
    FrozenSet,
    Iterable,
    List,
    Optional,
    Sequence,
    Tuple,
    TypeVar,
)

from config.prompts import (
    EXTRACTION_SYSTEM_MESSAGE,
    load_extraction_template,
    render_template,
)
from src.corpus import Chunk, load_stopwords, split_sentence_spans
from src.embedding import EmbeddingProvider, EmbeddingStore, embed_batch
from src.tokenizer import Tokenizer, WordTokenizer
from src.utils.records import IssueLog
from src.utils.text import collapse_whitespace

try:
    from config.settings import EXTRACTION_MAX_TOKENS, PROMPTS_DIR
except ImportError:
    EXTRACTION_MAX_TOKENS: int = 2000
    PROMPTS_DIR: str = os.path.join("data", "prompts")

if TYPE_CHECKING:
    from src.gateway import LLMGateway

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

MOCK_TYPE_LABEL = "MOCK"

_RECORD_RE = re.compile(r'^\s*\(\s*"(entity|relationship)"\s*\|(.*)\)\s*$')


# ============================================================================
# 커스텀 예외 클래스
# ============================================================================

class ExtractionParseError(ValueError):
    """추출기 출력을 레코드로 해석할 수 없는 경우 발생하는 예외"""
    pass


# ============================================================================
# 도메인 타입
# ============================================================================

@dataclass(frozen=True)
class ExtractedEntity:
    """추출기가 한 청크에서 낸 엔티티 (병합 전)"""

    name: str
    type_label: str
    description: str


@dataclass(frozen=True)
class ExtractedRelation:
    """추출기가 한 청크에서 낸 관계 (병합 전, 엔티티 이름으로 참조)"""

    source: str
    target: str
    description: str


@dataclass
class ChunkExtraction:
    """청크 하나의 추출 결과

    Attributes:
        chunk_id: 대상 청크
        entities: 추출된 엔티티
        relations: 추출된 관계
        failed: 재시도 후에도 실패하여 빈 결과로 기록되었는지 여부
    """

    chunk_id: int
    entities: List[ExtractedEntity] = field(default_factory=list)
    relations: List[ExtractedRelation] = field(default_factory=list)
    failed: bool = False


@dataclass
class Entity:
    """스켈레톤 엔티티 노드

    Attributes:
        entity_id: 병합 순서대로 부여된 번호
        name: 정규화 이름 (대문자, 공백 축약)
        type_label: 타입 라벨
        description: 병합된 설명 t_x
        description_tokens: 설명 토큰 수 ℓ_x
        links: 연결된 청크 id (rewire 후에는 서브청크 id)
    """

    entity_id: int
    name: str
    type_label: str
    description: str
    description_tokens: int = 0
    links: List[int] = field(default_factory=list)

    @property
    def embedding_key(self) -> str:
        return f"ent:{self.entity_id}"

    def context_text(self) -> str:
        """컨텍스트에 들어가는 텍스트"""
        return f"{self.name} ({self.type_label}): {self.description}"


@dataclass
class Relation:
    """스켈레톤 관계 엣지

    Attributes:
        relation_id: 병합 순서대로 부여된 번호
        source: 출발 엔티티 id
        target: 도착 엔티티 id
        description: 병합된 설명
        description_tokens: 설명 토큰 수
        links: 연결된 청크 id (rewire 후에는 서브청크 id)
    """

    relation_id: int
    source: int
    target: int
    description: str
    description_tokens: int = 0
    links: List[int] = field(default_factory=list)

    @property
    def embedding_key(self) -> str:
        return f"rel:{self.relation_id}"

    @property
    def is_self_loop(self) -> bool:
        return self.source == self.target


@dataclass
class SkeletonGraph:
    """지식 그래프 스켈레톤 𝒢_s

    Attributes:
        entities: 엔티티 리스트 (entity_id 순)
        relations: 관계 리스트 (relation_id 순)
        link_level: 링크 대상이 "chunk" 인지 rewire 후 "sub" 인지
    """

    entities: List[Entity] = field(default_factory=list)
    relations: List[Relation] = field(default_factory=list)
    link_level: str = "chunk"

    def is_empty(self) -> bool:
        return not self.entities

    def entity(self, entity_id: int) -> Entity:
        return self.entities[entity_id]

    def linked_units(self) -> List[int]:
        """링크된 모든 청크/서브청크 id (오름차순)"""
        units = {u for e in self.entities for u in e.links}
        units.update(u for r in self.relations for u in r.links)
        return sorted(units)

    def entity_names(self) -> FrozenSet[str]:
        return frozenset(e.name for e in self.entities)


def normalize_entity_name(name: str) -> str:
    """중복 제거용 이름 정규화: 대문자 + 공백 축약"""
    return collapse_whitespace(name).upper()


# ============================================================================
# 레코드 파싱
# ============================================================================

def _clean_field(value: str) -> str:
    return value.strip().strip('"').strip()


def parse_records(raw: str) -> Tuple[List[ExtractedEntity], List[ExtractedRelation]]:
    """구분자 레코드 형식의 원시 출력을 해석합니다.

    레코드가 아닌 줄은 무시하지만, 비어 있지 않은 출력에서
    레코드를 하나도 찾지 못하면 해석 실패로 간주합니다.

    Raises:
        ExtractionParseError: 해석 가능한 레코드가 없는 비어 있지 않은 출력
    """
    entities: List[ExtractedEntity] = []
    relations: List[ExtractedRelation] = []
    meaningful_lines = 0

    for line in raw.splitlines():
        if not line.strip():
            continue
        meaningful_lines += 1
        match = _RECORD_RE.match(line)
        if not match:
            logger.debug(f"레코드가 아닌 줄 무시: {line[:80]}")
            continue
        kind, body = match.group(1), match.group(2)
        parts = body.split("|", 2)
        if len(parts) < 3:
            logger.debug(f"필드가 부족한 레코드 무시: {line[:80]}")
            continue
        first, second, description = (_clean_field(p) for p in parts)
        if kind == "entity":
            name = normalize_entity_name(first)
            if name:
                entities.append(ExtractedEntity(name, second.upper() or "UNKNOWN", description))
        else:
            source, target = normalize_entity_name(first), normalize_entity_name(second)
            if source and target:
                relations.append(ExtractedRelation(source, target, description))

    if meaningful_lines and not entities and not relations:
        raise ExtractionParseError(f"해석 가능한 레코드가 없습니다 ({meaningful_lines}줄)")
    return entities, relations


def _field(value: str) -> str:
    # 이름/타입 필드에는 구분자가 들어갈 수 없음
    return collapse_whitespace(value.replace("|", " "))


def format_entity_record(name: str, type_label: str, description: str) -> str:
    return f'("entity"|{_field(name)}|{_field(type_label)}|{collapse_whitespace(description)})'


def format_relation_record(source: str, target: str, description: str) -> str:
    return f'("relationship"|{_field(source)}|{_field(target)}|{collapse_whitespace(description)})'


# ============================================================================
# 추출기
# ============================================================================

class TripletExtractor(ABC):
    """트리플 추출기 인터페이스

    Attributes:
        name: 추출기 이름 (캐시 키와 manifest에 사용)
        deterministic: 같은 텍스트에 항상 같은 출력을 내는지 여부
    """

    name: str = "abstract"
    deterministic: bool = False

    @abstractmethod
    def run(self, text: str, refresh: bool = False) -> str:
        """청크 텍스트에 대한 원시 출력을 반환합니다.

        Args:
            text: 청크 텍스트
            refresh: True면 하위 응답 캐시를 읽지 않고 새로 요청 (재시도용)
        """
        ...

    def parse(self, raw: str) -> Tuple[List[ExtractedEntity], List[ExtractedRelation]]:
        return parse_records(raw)

    def __repr__(self) -> str:
        return f"<TripletExtractor {self.name}>"


class MockTripletExtractor(TripletExtractor):
    """대문자 n-gram 규칙 기반 추출기

    - 엔티티: 문장 안의 최대 연속 대문자 시작 단어열. 맨 앞의 불용어 단어는 제외하며
      이름은 대문자로, 타입은 "MOCK", 설명은 그 문장입니다.
    - 관계: 한 문장에 함께 나온 서로 다른 엔티티 쌍마다 등장 순서대로 하나씩,
      설명은 그 문장입니다.
    """

    name = "mock"
    deterministic = True

    def __init__(self, stopwords: Optional[Iterable[str]] = None) -> None:
        self.stopwords: FrozenSet[str] = (
            frozenset(stopwords) if stopwords is not None else load_stopwords()
        )

    def _spans(self, sentence: str) -> List[str]:
        spans: List[str] = []
        current: List[str] = []

        def flush() -> None:
            while current and current[0].lower() in self.stopwords:
                current.pop(0)
            if current:
                spans.append(" ".join(current).upper())
            current.clear()

        for token in sentence.split():
            word = token.strip("\"'()[]{},.;:!?")
            if word and word[0].isupper():
                current.append(word)
                # 단어 뒤에 구두점이 붙어 있으면 n-gram이 끝남
                if token.rstrip("\"')]}") != token or token[-1] in ",.;:!?":
                    flush()
            else:
                flush()
        flush()

        unique: List[str] = []
        for span in spans:
            if span not in unique:
                unique.append(span)
        return unique

    def run(self, text: str, refresh: bool = False) -> str:
        lines: List[str] = []
        for start, end in split_sentence_spans(text):
            sentence = collapse_whitespace(text[start:end])
            names = self._spans(sentence)
            for name in names:
                lines.append(format_entity_record(name, MOCK_TYPE_LABEL, sentence))
            for i, source in enumerate(names):
                for target in names[i + 1:]:
                    lines.append(format_relation_record(source, target, sentence))
        return "\n".join(lines)


class LLMTripletExtractor(TripletExtractor):
    """LLM 2단계 추출기 (엔티티 패스 → 관계 패스)

    Attributes:
        gateway: LLMGateway 인스턴스
        entity_template: 엔티티 추출 템플릿
        relation_template: 관계 추출 템플릿
    """

    deterministic = False

    def __init__(
        self,
        gateway: "LLMGateway",
        prompts_dir: str = PROMPTS_DIR,
        max_tokens: int = EXTRACTION_MAX_TOKENS,
    ) -> None:
        self.gateway = gateway
        self.name = f"llm:{gateway.config.chat_model}"
        self.entity_template = load_extraction_template("entity", prompts_dir)
        self.relation_template = load_extraction_template("relation", prompts_dir)
        self.max_tokens = max_tokens

    def run(self, text: str, refresh: bool = False) -> str:
        entity_prompt = render_template(self.entity_template, input_text=text)
        entity_raw, _ = self.gateway.chat_complete(
            EXTRACTION_SYSTEM_MESSAGE, entity_prompt, max_tokens=self.max_tokens, stage="extraction",
            use_cache=not refresh,
        )
        entities, _ = parse_records(entity_raw)
        if not entities:
            return entity_raw

        entity_list = ", ".join(dict.fromkeys(e.name for e in entities))
        relation_prompt = render_template(
            self.relation_template, input_text=text, entity_list=entity_list
        )
        relation_raw, _ = self.gateway.chat_complete(
            EXTRACTION_SYSTEM_MESSAGE, relation_prompt, max_tokens=self.max_tokens, stage="extraction",
            use_cache=not refresh,
        )
        return entity_raw.rstrip() + "\n" + relation_raw.strip()


def template_token_counts(tokenizer: Tokenizer, prompts_dir: str = PROMPTS_DIR) -> Tuple[int, int]:
    """추출 템플릿 토큰 수 (λ_e, λ_r), 자리표시자 제외"""
    counts = []
    for kind in ("entity", "relation"):
        template = render_template(load_extraction_template(kind, prompts_dir), input_text="", entity_list="")
        counts.append(tokenizer.count(template))
    return counts[0], counts[1]


class MeteredExtractor(TripletExtractor):
    """추출 호출이 보냈을(보낸) LLM 입력 토큰을 세는 래퍼

    한 번의 run() 은 2단계 프로토콜 전체, 즉 템플릿 2개(λ_e + λ_r)와 청크 텍스트 2회분을
    입력으로 계산합니다. LLM 추출기가 엔티티가 없어 관계 패스를 건너뛰어도 같은 값을
    더하므로, 실제 전송량의 상한이며 cost_model 의 닫힌 형태 비용식과 같은 기준입니다.
    실제 전송량은 게이트웨이의 UsageMeter 에 기록됩니다.
    """

    def __init__(
        self,
        inner: TripletExtractor,
        tokenizer: Tokenizer,
        prompt_tokens: Optional[Tuple[int, int]] = None,
        prompts_dir: str = PROMPTS_DIR,
    ) -> None:
        self.inner = inner
        self.tokenizer = tokenizer
        self.name = inner.name
        self.deterministic = inner.deterministic
        self.lambda_e, self.lambda_r = prompt_tokens or template_token_counts(tokenizer, prompts_dir)
        self.input_tokens = 0
        self.calls = 0
        self._lock = threading.Lock()

    def run(self, text: str, refresh: bool = False) -> str:
        cost = self.lambda_e + self.lambda_r + 2 * self.tokenizer.count(text)
        with self._lock:
            self.input_tokens += cost
            self.calls += 1
        return self.inner.run(text, refresh=refresh)

    def parse(self, raw: str) -> Tuple[List[ExtractedEntity], List[ExtractedRelation]]:
        return self.inner.parse(raw)


# ============================================================================
# 추출 캐시
# ============================================================================

class ExtractionCache:
    """(추출기 이름, 청크 내용 해시) → 원시 출력 캐시

    path가 주어지면 JSON lines 파일에서 읽고, 새 항목을 덧붙여 저장합니다.
    """

    def __init__(self, path: Optional[str] = None) -> None:
        self.path = path
        self._entries: Dict[str, str] = {}
        self._lock = threading.Lock()
        self.hits = 0
        if path and os.path.exists(path):
            self._load(path)

    @staticmethod
    def key(extractor_name: str, text: str) -> str:
        return hashlib.sha256(f"{extractor_name}\n{text}".encode("utf-8")).hexdigest()

    def _load(self, path: str) -> None:
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    self._entries[record["key"]] = record["raw"]
                except (json.JSONDecodeError, KeyError) as e:
                    logger.warning(f"추출 캐시 {line_no}번째 줄 무시: {e}")
        logger.info(f"추출 캐시 로드: {len(self._entries)}개 ({path})")

    def get(self, extractor_name: str, text: str) -> Optional[str]:
        with self._lock:
            raw = self._entries.get(self.key(extractor_name, text))
            if raw is not None:
                self.hits += 1
            return raw

    def put(self, extractor_name: str, text: str, raw: str) -> None:
        key = self.key(extractor_name, text)
        with self._lock:
            self._entries[key] = raw
            if self.path:
                os.makedirs(os.path.dirname(os.path.abspath(self.path)), exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as f:
                    f.write(json.dumps({"key": key, "extractor": extractor_name, "raw": raw}, ensure_ascii=False) + "\n")

    def discard(self, extractor_name: str, text: str) -> None:
        with self._lock:
            self._entries.pop(self.key(extractor_name, text), None)

    def __len__(self) -> int:
        return len(self._entries)


# ============================================================================
# 청크 추출 / KG-Index
# ============================================================================

def extract_chunk(
    extractor: TripletExtractor,
    chunk: Chunk,
    cache: Optional[ExtractionCache] = None,
    issues: Optional[IssueLog] = None,
) -> ChunkExtraction:
    """청크 하나에서 엔티티와 관계를 추출합니다.

    해석 실패(또는 호출 실패) 시 추출 캐시와 게이트웨이 응답 캐시를 모두 우회하여
    한 번 재시도하고, 그래도 실패하면 빈 결과와 에러 레코드를 남깁니다.

    Raises:
        ValueError: 청크 텍스트가 비어 있는 경우
    """
    if not chunk.text or not chunk.text.strip():
        raise ValueError(f"청크 {chunk.chunk_id}의 텍스트가 비어있습니다.")
    issues = issues if issues is not None else IssueLog()

    last_error: Optional[Exception] = None
    for attempt in range(2):
        raw: Optional[str] = None
        if cache is not None and attempt == 0:
            raw = cache.get(extractor.name, chunk.text)
        from_cache = raw is not None
        try:
            if raw is None:
                raw = extractor.run(chunk.text, refresh=attempt > 0)
            entities, relations = extractor.parse(raw)
        except Exception as e:
            last_error = e
            if from_cache and cache is not None:
                cache.discard(extractor.name, chunk.text)
            logger.warning(f"청크 {chunk.chunk_id} 추출 실패 (시도 {attempt + 1}/2): {e}")
            continue
        if cache is not None and not from_cache:
            cache.put(extractor.name, chunk.text, raw)
        return ChunkExtraction(chunk.chunk_id, entities, relations)

    issues.error("extract", chunk.chunk_id, f"재시도 후에도 추출 실패: {last_error}")
    return ChunkExtraction(chunk.chunk_id, failed=True)


def _sequential_map(fn: Callable[[T], R], items: Sequence[T]) -> List[R]:
    return [fn(item) for item in items]


def merge_extractions(
    extractions: Sequence[ChunkExtraction],
    tokenizer: Tokenizer,
    issues: Optional[IssueLog] = None,
) -> SkeletonGraph:
    """청크별 추출 결과를 청크 순서대로 병합합니다.

    - 엔티티: (정규화 이름, 타입) 으로 중복 제거, 설명은 이어 붙임
    - 관계: (출발, 도착) 엔티티 쌍으로 중복 제거, 설명은 이어 붙임
    - 관계 끝점은 같은 청크에서 추출된 엔티티 이름으로 찾으며, 없으면 관계를 버림
    """
    issues = issues if issues is not None else IssueLog()
    entity_index: Dict[Tuple[str, str], int] = {}
    relation_index: Dict[Tuple[int, int], int] = {}
    skeleton = SkeletonGraph()

    def append_description(current: str, extra: str) -> str:
        if not extra:
            return current
        return f"{current}\n{extra}" if current else extra

    def add_link(links: List[int], unit: int) -> None:
        if unit not in links:
            links.append(unit)

    for extraction in sorted(extractions, key=lambda x: x.chunk_id):
        chunk_names: Dict[str, int] = {}
        for raw in extraction.entities:
            key = (raw.name, raw.type_label)
            eid = entity_index.get(key)
            if eid is None:
                eid = len(skeleton.entities)
                entity_index[key] = eid
                skeleton.entities.append(Entity(eid, raw.name, raw.type_label, raw.description))
            else:
                entity = skeleton.entities[eid]
                entity.description = append_description(entity.description, raw.description)
            add_link(skeleton.entities[eid].links, extraction.chunk_id)
            chunk_names.setdefault(raw.name, eid)

        for raw in extraction.relations:
            source, target = chunk_names.get(raw.source), chunk_names.get(raw.target)
            if source is None or target is None:
                issues.warn(
                    "extract", extraction.chunk_id,
                    f"알 수 없는 끝점의 관계를 버립니다: {raw.source} → {raw.target}",
                )
                continue
            key = (source, target)
            rid = relation_index.get(key)
            if rid is None:
                rid = len(skeleton.relations)
                relation_index[key] = rid
                skeleton.relations.append(Relation(rid, source, target, raw.description))
                if source == target:
                    logger.warning(f"자기 자신을 가리키는 관계: {raw.source}")
            else:
                relation = skeleton.relations[rid]
                relation.description = append_description(relation.description, raw.description)
            add_link(skeleton.relations[rid].links, extraction.chunk_id)

    for entity in skeleton.entities:
        entity.description_tokens = tokenizer.count(entity.description)
    for relation in skeleton.relations:
        relation.description_tokens = tokenizer.count(relation.description)
    return skeleton


def relation_context_text(skeleton: SkeletonGraph, relation: Relation) -> str:
    """관계의 컨텍스트 텍스트"""
    source = skeleton.entities[relation.source].name
    target = skeleton.entities[relation.target].name
    return f"{source} -> {target}: {relation.description}"


def embed_skeleton(
    skeleton: SkeletonGraph,
    provider: EmbeddingProvider,
    store: EmbeddingStore,
) -> None:
    """엔티티/관계 설명을 임베딩하여 저장소에 넣습니다 (설명이 비면 이름/끝점으로 대체)."""
    if skeleton.entities:
        texts = [e.description or e.name for e in skeleton.entities]
        store.put_many([e.embedding_key for e in skeleton.entities], embed_batch(provider, texts))
    if skeleton.relations:
        texts = [r.description or relation_context_text(skeleton, r) for r in skeleton.relations]
        store.put_many([r.embedding_key for r in skeleton.relations], embed_batch(provider, texts))


def kg_index(
    chunks: Sequence[Chunk],
    extractor: TripletExtractor,
    provider: EmbeddingProvider,
    store: EmbeddingStore,
    tokenizer: Optional[Tokenizer] = None,
    cache: Optional[ExtractionCache] = None,
    issues: Optional[IssueLog] = None,
    map_fn: Optional[Callable[[Callable[[Chunk], ChunkExtraction], Sequence[Chunk]], List[ChunkExtraction]]] = None,
) -> SkeletonGraph:
    """청크들로부터 스켈레톤 지식 그래프를 만듭니다.

    청크별 추출은 map_fn (예: 게이트웨이의 제한 동시 실행) 으로 병렬 실행할 수 있으며,
    병합은 청크 순서대로 단일 스레드에서 수행합니다.
    청크별 실패는 레코드로만 남기고 배치를 중단하지 않습니다.

    Args:
        chunks: 추출 대상 청크 (코어 청크)
        extractor: 트리플 추출기
        provider: 설명 임베딩 제공자
        store: 임베딩 저장소 (ent:/rel: 키가 추가됨)
        tokenizer: 설명 토큰 수 계산용 (None이면 WordTokenizer)
        cache: 추출 캐시
        issues: 경고/에러 레코드 수집기
        map_fn: (함수, 항목들) → 결과 리스트, 입력 순서를 보존해야 함

    Returns:
        SkeletonGraph: 청크 수준 링크를 가진 스켈레톤
    """
    issues = issues if issues is not None else IssueLog()
    tokenizer = tokenizer or WordTokenizer()
    if not chunks:
        return SkeletonGraph()

    mapper = map_fn or _sequential_map
    extractions = mapper(lambda c: extract_chunk(extractor, c, cache, issues), list(chunks))
    skeleton = merge_extractions(extractions, tokenizer, issues)
    embed_skeleton(skeleton, provider, store)

    failed = sum(1 for x in extractions if x.failed)
    logger.info(
        f"KG-Index 완료: 청크 {len(chunks)}개 → 엔티티 {len(skeleton.entities)}개, "
        f"관계 {len(skeleton.relations)}개 (실패 {failed}개)"
    )
    return skeleton
