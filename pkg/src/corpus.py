"""
코퍼스 모듈

원시 문서를 고정 길이 청크로 나누고, 청크를 2^τ 개의 서브청크로 재귀 분할하며,
문장 분리와 키워드 어휘(𝒲) 구축을 담당합니다.

모든 함수는 불변 입력에 대한 순수 함수이며 문서 단위로 병렬화해도 안전합니다.
"""

import json
import logging
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Set, Tuple

from src.tokenizer import Tokenizer, WordTokenizer
from src.utils.records import IssueLog
from src.utils.text import keyword_set, normalized_words

try:
    from config.settings import CHUNK_TOKENS, SPLIT_TIMES, STOPWORDS_PATH
except ImportError:
    CHUNK_TOKENS: int = 1200
    SPLIT_TIMES: int = 3
    STOPWORDS_PATH: str = os.path.join("data", "stopwords_en.txt")

logger = logging.getLogger(__name__)

# 문장 경계: 종결 부호(+닫는 따옴표/괄호) 뒤에 공백이 오는 위치
_SENTENCE_END_RE = re.compile(r"[.!?]+[\"')\]]*(?=\s)")

# 마침표가 문장을 끝내지 않는 약어 목록 (소문자, 마지막 마침표 제외)
ABBREVIATIONS: FrozenSet[str] = frozenset({
    "dr", "mr", "mrs", "ms", "prof", "st", "jr", "sr", "vs", "etc",
    "e.g", "i.e", "inc", "ltd", "co", "no",
})


# ============================================================================
# 커스텀 예외 클래스
# ============================================================================

class ChunkingConfigError(ValueError):
    """청킹 설정이 불변식을 위반한 경우 발생하는 예외

    ℓ < 2^τ 이거나 키워드 추출이 켜져 있는데 불용어 집합이 비어 있는 경우 등입니다.
    """
    pass


class DatasetFormatError(ValueError):
    """입력 코퍼스/데이터셋 파일의 형식이 올바르지 않은 경우 발생하는 예외"""
    pass


# ============================================================================
# 도메인 타입
# ============================================================================

@dataclass(frozen=True)
class ChunkingConfig:
    """청킹 설정

    Attributes:
        chunk_tokens: 청크 길이 ℓ (토큰)
        splits: 재귀 분할 횟수 τ
        stopwords: 소문자 불용어 집합
        extract_keywords: 키워드 추출 사용 여부
    """

    chunk_tokens: int = CHUNK_TOKENS
    splits: int = SPLIT_TIMES
    stopwords: FrozenSet[str] = frozenset()
    extract_keywords: bool = True

    def validate(self) -> "ChunkingConfig":
        """불변식을 확인하고 자기 자신을 반환합니다.

        Raises:
            ChunkingConfigError: 설정이 유효하지 않은 경우
        """
        if self.chunk_tokens < 1:
            raise ChunkingConfigError(f"chunk_tokens는 1 이상이어야 합니다: {self.chunk_tokens}")
        if self.splits < 0:
            raise ChunkingConfigError(f"splits(τ)는 0 이상이어야 합니다: {self.splits}")
        if self.chunk_tokens < 2 ** self.splits:
            raise ChunkingConfigError(
                f"chunk_tokens(ℓ={self.chunk_tokens}) < 2^τ (={2 ** self.splits}): "
                "모든 서브청크가 최소 1개 토큰을 가질 수 없습니다."
            )
        if self.extract_keywords and not self.stopwords:
            raise ChunkingConfigError("키워드 추출이 켜져 있으면 불용어 집합이 비어 있을 수 없습니다.")
        return self


@dataclass(frozen=True)
class Chunk:
    """고정 길이 텍스트 청크 t_i"""

    chunk_id: int
    doc_id: str
    text: str
    token_count: int
    token_ids: Tuple[int, ...] = field(default=(), repr=False, compare=False)


@dataclass(frozen=True)
class SubChunk:
    """검색 단위가 되는 서브청크"""

    sub_id: int
    parent: int
    split_index: int
    text: str
    token_count: int
    token_ids: Tuple[int, ...] = field(default=(), repr=False, compare=False)


@dataclass(frozen=True)
class Sentence:
    """서브청크에 귀속된 문장

    Attributes:
        sentence_id: 코퍼스 전체에서의 문장 순번
        chunk_id: 소속 청크
        sub_id: 첫 토큰이 속한 서브청크
        text: 문장 텍스트 (앞뒤 공백 제거)
        keyword_set: 불용어를 제외한 정규화 키워드 집합
    """

    sentence_id: int
    chunk_id: int
    sub_id: int
    text: str
    keyword_set: FrozenSet[str]


@dataclass(frozen=True, order=True)
class Posting:
    """키워드 포스팅: (chunk_id, sub_id, sentence_id)"""

    chunk_id: int
    sub_id: int
    sentence_id: int


@dataclass
class KeywordVocabulary:
    """키워드 어휘 𝒲 와 포스팅 목록"""

    keywords: Set[str] = field(default_factory=set)
    postings: Dict[str, List[Posting]] = field(default_factory=dict)

    def chunk_keywords(self) -> Dict[int, Set[str]]:
        """청크별 키워드 집합 (KNN 어휘 유사도 계산용)"""
        result: Dict[int, Set[str]] = {}
        for keyword, plist in self.postings.items():
            for p in plist:
                result.setdefault(p.chunk_id, set()).add(keyword)
        return result

    def __len__(self) -> int:
        return len(self.keywords)


# ============================================================================
# 입력 로딩
# ============================================================================

def load_stopwords(path: Optional[str] = None) -> FrozenSet[str]:
    """불용어 파일을 읽습니다 (한 줄에 한 단어, '#' 주석 무시).

    Args:
        path: 불용어 파일 경로. None이면 기본 데이터 파일을 사용합니다.
    """
    path = path or STOPWORDS_PATH
    words: Set[str] = set()
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            word = line.strip().lower()
            if word and not word.startswith("#"):
                words.add(word)
    logger.debug(f"불용어 {len(words)}개 로드: {path}")
    return frozenset(words)


def load_corpus(path: str) -> List[Tuple[str, str]]:
    """코퍼스를 (doc_id, text) 리스트로 읽습니다.

    - 디렉토리: 하위의 모든 .txt 파일 (doc_id = 상대 경로, 정렬 순서)
    - 파일: JSON lines, 각 줄 {"id": str, "text": str}

    Raises:
        FileNotFoundError: 경로가 없는 경우
        DatasetFormatError: JSON lines 형식 오류
    """
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"코퍼스 경로가 없습니다: {path}")

    if p.is_dir():
        docs: List[Tuple[str, str]] = []
        for file in sorted(p.rglob("*.txt")):
            docs.append((file.relative_to(p).as_posix(), file.read_text(encoding="utf-8")))
        logger.info(f"디렉토리 코퍼스 로드: {len(docs)}개 문서 ({path})")
        return docs

    docs = []
    with open(p, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                docs.append((str(record["id"]), str(record["text"])))
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise DatasetFormatError(f"{path}:{line_no} 줄 형식 오류: {e}") from e
    logger.info(f"JSONL 코퍼스 로드: {len(docs)}개 문서 ({path})")
    return docs


# ============================================================================
# 청킹
# ============================================================================

def chunk_corpus(
    documents: List[Tuple[str, str]],
    cfg: ChunkingConfig,
    tokenizer: Tokenizer,
    issues: Optional[IssueLog] = None,
) -> List[Chunk]:
    """문서들을 ℓ 토큰 길이의 연속·비중첩 청크로 나눕니다.

    문서 순서를 보존하며, 각 문서의 마지막 청크만 ℓ보다 짧을 수 있습니다.
    토큰이 0개인 문서는 건너뛰고 경고 레코드를 남깁니다.

    Args:
        documents: (doc_id, text) 리스트
        cfg: 청킹 설정
        tokenizer: 사용할 토크나이저
        issues: 경고 레코드 수집기 (선택)

    Returns:
        List[Chunk]: chunk_id가 0부터 연속으로 부여된 청크 리스트
    """
    cfg.validate()
    issues = issues if issues is not None else IssueLog()
    size = cfg.chunk_tokens
    chunks: List[Chunk] = []

    for doc_id, text in documents:
        token_ids = tokenizer.encode(text or "")
        if not token_ids:
            issues.warn("chunk", doc_id, "토큰이 없는 문서를 건너뜁니다.")
            continue
        for start in range(0, len(token_ids), size):
            window = tuple(token_ids[start:start + size])
            chunks.append(Chunk(
                chunk_id=len(chunks),
                doc_id=doc_id,
                text=tokenizer.decode(window),
                token_count=len(window),
                token_ids=window,
            ))

    logger.info(f"청킹 완료: 문서 {len(documents)}개 → 청크 {len(chunks)}개 (ℓ={size})")
    return chunks


def _halve(token_ids: Tuple[int, ...], depth: int) -> List[Tuple[int, ...]]:
    """각 단계에서 ⌈len/2⌉ 위치로 나누는 재귀 이등분"""
    if depth == 0:
        return [token_ids]
    mid = math.ceil(len(token_ids) / 2)
    return _halve(token_ids[:mid], depth - 1) + _halve(token_ids[mid:], depth - 1)


def split_subchunks(
    chunks: List[Chunk],
    splits: int,
    tokenizer: Tokenizer,
    issues: Optional[IssueLog] = None,
) -> List[SubChunk]:
    """각 청크를 재귀 이등분하여 2^τ 개의 서브청크로 나눕니다.

    토큰 수가 2^τ 보다 적은 청크는 빈 서브청크를 만들지 않고
    가능한 만큼만 생성한 뒤 경고 레코드를 남깁니다.

    Raises:
        ChunkingConfigError: splits < 0 인 경우
    """
    if splits < 0:
        raise ChunkingConfigError(f"splits(τ)는 0 이상이어야 합니다: {splits}")
    issues = issues if issues is not None else IssueLog()
    expected = 2 ** splits
    subs: List[SubChunk] = []

    for chunk in chunks:
        token_ids = chunk.token_ids or tuple(tokenizer.encode(chunk.text))
        pieces = [p for p in _halve(token_ids, splits) if p]
        if len(pieces) < expected:
            issues.warn(
                "split", chunk.chunk_id,
                f"토큰 {len(token_ids)}개로 {expected}개 서브청크를 만들 수 없어 {len(pieces)}개만 생성합니다.",
            )
        for split_index, piece in enumerate(pieces):
            subs.append(SubChunk(
                sub_id=len(subs),
                parent=chunk.chunk_id,
                split_index=split_index,
                text=tokenizer.decode(piece),
                token_count=len(piece),
                token_ids=piece,
            ))

    logger.info(f"서브청크 분할 완료: 청크 {len(chunks)}개 → 서브청크 {len(subs)}개 (τ={splits})")
    return subs


# ============================================================================
# 문장 분리
# ============================================================================

def _is_abbreviation(text: str, punct_start: int) -> bool:
    """마침표 바로 앞 단어가 약어 목록에 있는지 확인합니다."""
    if text[punct_start] != ".":
        return False
    word_start = punct_start
    while word_start > 0 and not text[word_start - 1].isspace():
        word_start -= 1
    word = text[word_start:punct_start].lower().lstrip("(\"'")
    return word in ABBREVIATIONS


def split_sentence_spans(text: str) -> List[Tuple[int, int]]:
    """텍스트의 문장 (start, end) 문자 구간을 반환합니다.

    규칙: 종결 부호(. ! ?) 뒤에 공백이 오면 문장이 끝납니다.
    단, 마침표 앞 단어가 ABBREVIATIONS 에 있으면 끝나지 않습니다.
    종결 부호가 없으면 텍스트 전체가 한 문장입니다.
    """
    spans: List[Tuple[int, int]] = []
    start = 0
    for match in _SENTENCE_END_RE.finditer(text):
        if _is_abbreviation(text, match.start()):
            continue
        spans.append((start, match.end()))
        start = match.end()
    spans.append((start, len(text)))

    result: List[Tuple[int, int]] = []
    for s, e in spans:
        # 앞뒤 공백을 제외한 실제 구간
        while s < e and text[s].isspace():
            s += 1
        while e > s and text[e - 1].isspace():
            e -= 1
        if s < e:
            result.append((s, e))
    return result


def segment_sentences(
    sub_chunks: List[SubChunk],
    stopwords: Optional[Iterable[str]] = None,
) -> List[Sentence]:
    """서브청크들을 문장으로 분리합니다.

    같은 청크의 서브청크를 split_index 순서로 이어 붙인 텍스트에서 문장을 찾고,
    각 문장은 첫 글자가 속한 서브청크에 귀속시킵니다.

    Args:
        sub_chunks: 서브청크 리스트
        stopwords: 키워드 집합에서 제외할 불용어 (None이면 기본 불용어 파일)
    """
    stop = frozenset(stopwords) if stopwords is not None else load_stopwords()

    by_parent: Dict[int, List[SubChunk]] = {}
    for sub in sub_chunks:
        by_parent.setdefault(sub.parent, []).append(sub)

    sentences: List[Sentence] = []
    for parent in sorted(by_parent):
        subs = sorted(by_parent[parent], key=lambda s: s.split_index)
        text = "".join(s.text for s in subs)

        # 서브청크별 문자 구간 끝 위치
        bounds: List[int] = []
        offset = 0
        for s in subs:
            offset += len(s.text)
            bounds.append(offset)

        owner = 0
        for start, end in split_sentence_spans(text):
            while owner < len(bounds) - 1 and start >= bounds[owner]:
                owner += 1
            sentence_text = text[start:end]
            sentences.append(Sentence(
                sentence_id=len(sentences),
                chunk_id=parent,
                sub_id=subs[owner].sub_id,
                text=sentence_text,
                keyword_set=keyword_set(sentence_text, stop),
            ))

    logger.info(f"문장 분리 완료: {len(sentences)}개 문장")
    return sentences


# ============================================================================
# 키워드 어휘
# ============================================================================

def build_vocabulary(sentences: List[Sentence], cfg: ChunkingConfig) -> KeywordVocabulary:
    """문장들로부터 키워드 어휘 𝒲 와 포스팅을 만듭니다.

    키워드는 불용어가 아닌 정규화 단어이며 포스팅은 중복 없이 정렬됩니다.
    """
    postings: Dict[str, Set[Posting]] = {}
    for sentence in sentences:
        for keyword in sentence.keyword_set:
            if keyword in cfg.stopwords:
                continue
            postings.setdefault(keyword, set()).add(
                Posting(sentence.chunk_id, sentence.sub_id, sentence.sentence_id)
            )

    vocabulary = KeywordVocabulary(
        keywords=set(postings),
        postings={k: sorted(v) for k, v in sorted(postings.items())},
    )
    logger.info(f"키워드 어휘 구축 완료: {len(vocabulary)}개 키워드")
    return vocabulary


def sentence_words(sentence: Sentence) -> List[str]:
    """문장의 정규화 단어 리스트 (불용어 포함)"""
    return normalized_words(sentence.text)


def default_chunking_config(
    chunk_tokens: int = CHUNK_TOKENS,
    splits: int = SPLIT_TIMES,
    stopwords_path: Optional[str] = None,
) -> ChunkingConfig:
    """기본 불용어 파일을 읽어 ChunkingConfig를 만듭니다."""
    return ChunkingConfig(
        chunk_tokens=chunk_tokens,
        splits=splits,
        stopwords=load_stopwords(stopwords_path),
    )


__all__ = [
    "ChunkingConfig",
    "ChunkingConfigError",
    "DatasetFormatError",
    "Chunk",
    "SubChunk",
    "Sentence",
    "Posting",
    "KeywordVocabulary",
    "WordTokenizer",
    "load_stopwords",
    "load_corpus",
    "chunk_corpus",
    "split_subchunks",
    "split_sentence_spans",
    "segment_sentences",
    "build_vocabulary",
    "default_chunking_config",
]
