"""
유틸리티 모듈

이슈 레코드와 텍스트 정규화 헬퍼를 제공합니다.
"""

from src.utils.records import BuildIssue, IssueLog
from src.utils.text import normalize_word, normalized_words, word_set, keyword_set

__all__ = [
    "BuildIssue",
    "IssueLog",
    "normalize_word",
    "normalized_words",
    "word_set",
    "keyword_set",
]
