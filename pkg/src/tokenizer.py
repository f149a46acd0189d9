"""
토크나이저 모듈

청킹과 토큰 예산 계산에 쓰이는 교체 가능한 토크나이저 인터페이스입니다.

- WordTokenizer: 공백+구두점 기반 단어 토크나이저 (오프라인 기본값, 완전 결정적)
- TiktokenTokenizer: cl100k_base BPE 토크나이저 (tiktoken 패키지 필요, 지연 import)

인덱스는 자신이 빌드된 토크나이저 이름을 manifest에 기록하고,
로드 시 같은 토크나이저를 요구합니다.
"""

import logging
import re
import threading
from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional, Sequence

logger = logging.getLogger(__name__)

# 단어 또는 구두점 하나 + 뒤따르는 공백을 하나의 토큰으로 취급 (decode = 단순 연결)
_WORD_PIECE_RE = re.compile(r"\w+\s*|[^\w\s]\s*", re.UNICODE)

# tiktoken Encoding 캐시 (lazy import용)
_encodings: Dict[str, Any] = {}
_encodings_lock = threading.Lock()


class TokenizerUnavailableError(RuntimeError):
    """요청한 토크나이저를 사용할 수 없는 경우 발생하는 예외

    tiktoken 패키지가 설치되지 않았거나 알 수 없는 토크나이저 이름인 경우입니다.
    """
    pass


class Tokenizer(ABC):
    """토크나이저 추상 기본 클래스"""

    name: str = "abstract"

    @abstractmethod
    def encode(self, text: str) -> List[int]:
        """텍스트를 토큰 ID 리스트로 변환합니다."""
        ...

    @abstractmethod
    def decode(self, token_ids: Sequence[int]) -> str:
        """토큰 ID 리스트를 텍스트로 복원합니다."""
        ...

    def count(self, text: str) -> int:
        """텍스트의 토큰 수"""
        if not text:
            return 0
        return len(self.encode(text))

    def __repr__(self) -> str:
        return f"<Tokenizer {self.name}>"


class WordTokenizer(Tokenizer):
    """공백+구두점 단어 토크나이저

    각 토큰은 단어(\\w+) 또는 구두점 한 글자에 뒤따르는 공백을 붙인 조각입니다.
    따라서 decode(encode(t)) 는 t 의 앞쪽 공백만 제외하고 원문과 동일합니다.
    토큰 ID는 처음 등장한 순서대로 부여되는 인스턴스 내부 어휘 번호입니다.
    """

    name = "word"

    def __init__(self) -> None:
        self._piece_to_id: Dict[str, int] = {}
        self._pieces: List[str] = []
        self._lock = threading.Lock()

    def pieces(self, text: str) -> List[str]:
        return _WORD_PIECE_RE.findall(text)

    def encode(self, text: str) -> List[int]:
        ids: List[int] = []
        with self._lock:
            for piece in self.pieces(text):
                token_id = self._piece_to_id.get(piece)
                if token_id is None:
                    token_id = len(self._pieces)
                    self._piece_to_id[piece] = token_id
                    self._pieces.append(piece)
                ids.append(token_id)
        return ids

    def decode(self, token_ids: Sequence[int]) -> str:
        with self._lock:
            return "".join(self._pieces[i] for i in token_ids)

    def count(self, text: str) -> int:
        # 어휘를 늘리지 않고 세기만 함
        return len(self.pieces(text)) if text else 0


def _get_encoding(encoding_name: str) -> Any:
    """tiktoken Encoding 인스턴스를 lazy import하여 반환합니다.

    Raises:
        TokenizerUnavailableError: tiktoken 패키지가 없거나 인코딩을 불러오지 못한 경우
    """
    with _encodings_lock:
        if encoding_name in _encodings:
            return _encodings[encoding_name]
        try:
            import tiktoken
        except ImportError as e:
            raise TokenizerUnavailableError(
                "tiktoken 패키지가 설치되지 않았습니다. "
                "다음 명령어로 설치해주세요: pip install tiktoken"
            ) from e
        try:
            encoding = tiktoken.get_encoding(encoding_name)
        except Exception as e:
            raise TokenizerUnavailableError(
                f"tiktoken 인코딩을 불러올 수 없습니다: {encoding_name} ({e})"
            ) from e
        _encodings[encoding_name] = encoding
        return encoding


class TiktokenTokenizer(Tokenizer):
    """tiktoken 기반 BPE 토크나이저 (기본: cl100k_base)"""

    def __init__(self, encoding_name: str = "cl100k_base") -> None:
        self.name = encoding_name
        self._encoding = _get_encoding(encoding_name)

    def encode(self, text: str) -> List[int]:
        return self._encoding.encode(text, disallowed_special=())

    def decode(self, token_ids: Sequence[int]) -> str:
        return self._encoding.decode(list(token_ids))


_BPE_NAMES = {"cl100k_base", "o200k_base"}


def get_tokenizer(name: Optional[str] = None) -> Tokenizer:
    """이름으로 토크나이저를 생성합니다.

    Args:
        name: "word" (기본) 또는 tiktoken 인코딩 이름 (예: "cl100k_base")

    Raises:
        TokenizerUnavailableError: 알 수 없는 이름이거나 tiktoken을 쓸 수 없는 경우
    """
    if name is None or name == WordTokenizer.name:
        return WordTokenizer()
    if name in _BPE_NAMES:
        return TiktokenTokenizer(name)
    raise TokenizerUnavailableError(f"알 수 없는 토크나이저: {name}")


def count_tokens(texts: Sequence[str], tokenizer: Tokenizer) -> int:
    """텍스트 리스트의 토큰 수 합계 |⊕(S)|

    이 저장소에서 토큰 수는 정의상 가산적입니다 (연결 경계 보정 0).
    """
    return sum(tokenizer.count(t) for t in texts)
