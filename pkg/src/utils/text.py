"""
텍스트 정규화 헬퍼

키워드 정규화(소문자 + 앞뒤 구두점 제거, 어간 추출 없음)를 저장소 전체에서
하나의 의미로 쓰기 위한 함수들입니다. 이분 그래프의 포함 관계 판정과
스켈레톤 재배선도 모두 이 함수들을 사용합니다.
"""

import re
import string
from typing import FrozenSet, Iterable, List, Set

_PUNCT = string.punctuation + "“”‘’«»…—–"
_WHITESPACE_RE = re.compile(r"\s+")


def normalize_word(word: str) -> str:
    """단어 하나를 키워드 형태로 정규화합니다.

    Args:
        word: 공백으로 분리된 원시 단어

    Returns:
        소문자화 후 앞뒤 구두점을 제거한 문자열 (빈 문자열일 수 있음)
    """
    return word.strip(_PUNCT).lower()


def normalized_words(text: str) -> List[str]:
    """텍스트를 정규화된 단어 리스트로 변환합니다 (순서 유지, 빈 단어 제외)."""
    words = (normalize_word(w) for w in text.split())
    return [w for w in words if w]


def word_set(text: str) -> FrozenSet[str]:
    """텍스트의 정규화된 단어 집합"""
    return frozenset(normalized_words(text))


def keyword_set(text: str, stopwords: Set[str]) -> FrozenSet[str]:
    """불용어를 제외한 정규화 키워드 집합"""
    return frozenset(w for w in normalized_words(text) if w not in stopwords)


def contains_phrase(words: List[str], phrase: Iterable[str]) -> bool:
    """정규화 단어 리스트에 구(phrase)가 연속으로 등장하는지 확인합니다.

    "cat" 이 "catalog" 에 매칭되지 않도록 부분 문자열이 아닌 단어 단위로 비교합니다.
    """
    target = list(phrase)
    if not target:
        return False
    n = len(target)
    for i in range(len(words) - n + 1):
        if words[i:i + n] == target:
            return True
    return False


def collapse_whitespace(text: str) -> str:
    return _WHITESPACE_RE.sub(" ", text).strip()
