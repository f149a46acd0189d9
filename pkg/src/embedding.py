"""
임베딩 모듈

임베딩 함수 φ(·), 유사도 함수(코사인·유클리드), 평균 임베딩, 그리고
그래프/검색 모듈이 공유하는 임베딩 저장소를 제공합니다.

제공자(provider)는 두 가지입니다.
- HashEmbeddingProvider: 시드 해시 투영 임베더 (오프라인 기본값, 테스트용)
- RemoteEmbeddingProvider: 게이트웨이를 통한 OpenAI 호환 임베딩 API

해시 투영 규칙 (플랫폼 무관 재현을 위해 명시):
    seed = int.from_bytes(blake2b(text.encode("utf-8"), digest_size=8).digest(), "little") ^ provider_seed
    vector = numpy.random.default_rng(seed).standard_normal(dim)
    vector = vector / ||vector||₂
granularity="words" 변형은 정규화 단어마다 위 벡터를 만든 뒤 합산하고 다시 정규화합니다.

저장되는 모든 제공자 출력 벡터는 수집 시점에 L2 정규화됩니다.
"""

import hashlib
import json
import logging
import os
import threading
from abc import ABC, abstractmethod
from typing import TYPE_CHECKING, Dict, Iterable, Iterator, List, Literal, Optional, Sequence

import numpy as np

from src.utils.text import normalized_words

try:
    from config.settings import (
        HASH_EMBEDDING_DIM,
        HASH_EMBEDDING_SEED,
        EMBEDDINGS_FILE,
        EMBEDDINGS_SIDECAR_FILE,
    )
except ImportError:
    HASH_EMBEDDING_DIM: int = 64
    HASH_EMBEDDING_SEED: int = 0
    EMBEDDINGS_FILE: str = "embeddings.bin"
    EMBEDDINGS_SIDECAR_FILE: str = "embeddings.json"

if TYPE_CHECKING:
    from src.gateway import LLMGateway

logger = logging.getLogger(__name__)

EmbeddingVector = np.ndarray


class EmbeddingError(RuntimeError):
    """임베딩 생성에 실패한 경우 발생하는 예외

    Attributes:
        failed_indices: 실패한 배치의 입력 인덱스 목록
    """

    def __init__(self, message: str, failed_indices: Sequence[int]) -> None:
        super().__init__(message)
        self.failed_indices: List[int] = list(failed_indices)


# ============================================================================
# 벡터 연산
# ============================================================================

def l2_normalize(vector: np.ndarray) -> np.ndarray:
    """L2 정규화 (영벡터는 그대로 반환)"""
    v = np.asarray(vector, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        return v
    return v / norm


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    """코사인 유사도 (대칭, [-1, 1])

    영벡터가 포함되면 유사도 0으로 정의하고 경고를 남깁니다.

    Raises:
        ValueError: 차원이 다른 경우
    """
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise ValueError(f"차원이 다릅니다: {va.shape} vs {vb.shape}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        logger.warning("영벡터에 대한 코사인 유사도 요청: 0으로 처리합니다.")
        return 0.0
    value = float(np.dot(va, vb) / (na * nb))
    return max(-1.0, min(1.0, value))


def euclidean(a: Sequence[float], b: Sequence[float]) -> float:
    """유클리드(L2) 거리

    Raises:
        ValueError: 차원이 다른 경우
    """
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise ValueError(f"차원이 다릅니다: {va.shape} vs {vb.shape}")
    return float(np.linalg.norm(va - vb))


def mean_embedding(vectors: Sequence[Sequence[float]]) -> np.ndarray:
    """좌표별 산술 평균

    Raises:
        ValueError: 빈 리스트이거나 차원이 섞여 있는 경우
    """
    if len(vectors) == 0:
        raise ValueError("빈 벡터 리스트의 평균은 정의되지 않습니다.")
    stacked = np.vstack([np.asarray(v, dtype=np.float64) for v in vectors])
    return stacked.mean(axis=0)


def cosine_to_rows(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    """행렬의 각 행과 쿼리 사이의 코사인 유사도 (영벡터 행은 0)"""
    m = np.asarray(matrix, dtype=np.float64)
    q = np.asarray(query, dtype=np.float64)
    if m.size == 0:
        return np.zeros(0)
    row_norms = np.linalg.norm(m, axis=1)
    q_norm = float(np.linalg.norm(q))
    if q_norm == 0.0:
        logger.warning("영벡터 쿼리: 모든 코사인 유사도를 0으로 처리합니다.")
        return np.zeros(m.shape[0])
    denom = np.where(row_norms == 0.0, 1.0, row_norms * q_norm)
    sims = (m @ q) / denom
    sims[row_norms == 0.0] = 0.0
    return np.clip(sims, -1.0, 1.0)


# ============================================================================
# 임베딩 제공자
# ============================================================================

class EmbeddingProvider(ABC):
    """임베딩 제공자 인터페이스

    Attributes:
        name: 제공자 이름 (manifest에 기록)
        dim: 벡터 차원
        deterministic: 같은 입력에 항상 같은 벡터를 내는지 여부
    """

    name: str = "abstract"
    dim: int = 0
    deterministic: bool = False

    @abstractmethod
    def embed_texts(self, texts: List[str]) -> np.ndarray:
        """텍스트들을 (len(texts), dim) 행렬로 변환합니다."""
        ...

    def describe(self) -> Dict[str, object]:
        """manifest 기록용 설명"""
        return {"name": self.name, "dim": self.dim, "deterministic": self.deterministic}

    def __repr__(self) -> str:
        return f"<EmbeddingProvider {self.name} dim={self.dim}>"


class HashEmbeddingProvider(EmbeddingProvider):
    """시드 해시 투영 임베더 (오프라인·결정적)"""

    deterministic = True

    def __init__(
        self,
        dim: int = HASH_EMBEDDING_DIM,
        seed: int = HASH_EMBEDDING_SEED,
        granularity: Literal["text", "words"] = "text",
    ) -> None:
        if dim < 1:
            raise ValueError(f"dim은 1 이상이어야 합니다: {dim}")
        self.dim = dim
        self.seed = seed
        self.granularity = granularity
        self.name = "hash" if granularity == "text" else "hash-words"
        self._cache: Dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def _vector_for(self, text: str) -> np.ndarray:
        with self._lock:
            cached = self._cache.get(text)
        if cached is not None:
            return cached
        digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
        seed = int.from_bytes(digest, "little") ^ self.seed
        vector = l2_normalize(np.random.default_rng(seed).standard_normal(self.dim))
        with self._lock:
            self._cache[text] = vector
        return vector

    def embed_texts(self, texts: List[str]) -> np.ndarray:
        rows = []
        for text in texts:
            if self.granularity == "words":
                words = normalized_words(text)
                if words:
                    rows.append(l2_normalize(np.sum([self._vector_for(w) for w in words], axis=0)))
                    continue
            rows.append(self._vector_for(text))
        return np.vstack(rows) if rows else np.zeros((0, self.dim))

    def describe(self) -> Dict[str, object]:
        info = super().describe()
        info.update({"seed": self.seed, "granularity": self.granularity, "hash": "blake2b-8/pcg64"})
        return info


class RemoteEmbeddingProvider(EmbeddingProvider):
    """게이트웨이를 통한 원격 임베딩 제공자

    동일한 텍스트에 대한 중복 호출을 막기 위해 텍스트-임베딩 캐시를 유지합니다.

    Attributes:
        gateway: LLMGateway 인스턴스
        model: 임베딩 모델 이름
        cache_hit_count: 캐시 히트 횟수
    """

    deterministic = False

    def __init__(self, gateway: "LLMGateway", dim: Optional[int] = None) -> None:
        self.gateway = gateway
        self.model = gateway.config.embedding_model
        self.name = f"remote:{self.model}"
        self.dim = dim or 0
        self._cache: Dict[str, np.ndarray] = {}
        self._lock = threading.Lock()
        self.cache_hit_count = 0

    def embed_texts(self, texts: List[str]) -> np.ndarray:
        results: List[Optional[np.ndarray]] = [None] * len(texts)
        uncached: List[str] = []
        uncached_idx: List[int] = []
        with self._lock:
            for idx, text in enumerate(texts):
                if text in self._cache:
                    results[idx] = self._cache[text]
                    self.cache_hit_count += 1
                else:
                    uncached.append(text)
                    uncached_idx.append(idx)

        if uncached:
            vectors = self.gateway.embed(uncached)
            with self._lock:
                for idx, text, vec in zip(uncached_idx, uncached, vectors):
                    arr = np.asarray(vec, dtype=np.float64)
                    self._cache[text] = arr
                    results[idx] = arr

        matrix = np.vstack([r for r in results if r is not None]) if texts else np.zeros((0, self.dim))
        if matrix.size and not self.dim:
            self.dim = int(matrix.shape[1])
        return matrix


def provider_from_description(
    description: Dict[str, object],
    gateway: Optional["LLMGateway"] = None,
) -> EmbeddingProvider:
    """manifest의 embedding_provider 설명으로 같은 제공자를 다시 만듭니다.

    Raises:
        ValueError: 원격 제공자인데 게이트웨이가 없거나, 알 수 없는 제공자인 경우
    """
    name = str(description.get("name", ""))
    if name in ("hash", "hash-words"):
        return HashEmbeddingProvider(
            dim=int(description.get("dim", HASH_EMBEDDING_DIM)),  # type: ignore[arg-type]
            seed=int(description.get("seed", HASH_EMBEDDING_SEED)),  # type: ignore[arg-type]
            granularity="words" if name == "hash-words" else "text",
        )
    if name.startswith("remote:"):
        if gateway is None:
            raise ValueError(f"원격 임베딩 제공자({name})에는 게이트웨이가 필요합니다.")
        return RemoteEmbeddingProvider(gateway, dim=int(description.get("dim", 0)) or None)  # type: ignore[arg-type]
    raise ValueError(f"알 수 없는 임베딩 제공자: {name!r}")


def embed_batch(provider: EmbeddingProvider, texts: List[str]) -> List[np.ndarray]:
    """텍스트 배치를 임베딩하여 정규화된 벡터 리스트로 반환합니다.

    Args:
        provider: 임베딩 제공자
        texts: 비어 있지 않은 문자열 리스트

    Returns:
        입력과 순서가 맞춰진 L2 정규화 벡터 리스트 (빈 입력이면 빈 리스트)

    Raises:
        ValueError: 빈 문자열이 포함된 경우
        EmbeddingError: 제공자 호출이 재시도 후에도 실패한 경우 (실패 인덱스 포함)
    """
    if not texts:
        return []
    for idx, text in enumerate(texts):
        if not text or not text.strip():
            raise ValueError(f"인덱스 {idx}의 텍스트가 비어있습니다.")

    try:
        matrix = provider.embed_texts(list(texts))
    except EmbeddingError:
        raise
    except Exception as e:
        logger.error(f"임베딩 배치 실패 ({len(texts)}개): {e}", exc_info=True)
        raise EmbeddingError(f"임베딩 생성 실패: {e}", failed_indices=range(len(texts))) from e

    if matrix.shape[0] != len(texts):
        raise EmbeddingError(
            f"임베딩 개수 불일치: 요청 {len(texts)}개, 응답 {matrix.shape[0]}개",
            failed_indices=range(len(texts)),
        )
    if not np.all(np.isfinite(matrix)):
        bad = [i for i in range(matrix.shape[0]) if not np.all(np.isfinite(matrix[i]))]
        raise EmbeddingError("유한하지 않은 임베딩 값이 포함되어 있습니다.", failed_indices=bad)

    return [l2_normalize(row) for row in matrix]


# ============================================================================
# 임베딩 저장소
# ============================================================================

class EmbeddingStore:
    """항목 키 → 임베딩 벡터 저장소

    키 규칙: "chunk:{id}", "sub:{id}", "sent:{id}", "kw:{keyword}", "ent:{id}", "rel:{id}".
    인덱스 빌드 후에는 읽기 전용으로 취급합니다.
    """

    def __init__(self, dim: Optional[int] = None) -> None:
        self.dim: Optional[int] = dim
        self._vectors: Dict[str, np.ndarray] = {}

    def put(self, key: str, vector: Sequence[float]) -> None:
        """벡터를 저장합니다.

        Raises:
            ValueError: 차원이 다르거나 유한하지 않은 값이 있는 경우
        """
        arr = np.asarray(vector, dtype=np.float32).reshape(-1)
        if self.dim is None:
            self.dim = int(arr.shape[0])
        if arr.shape[0] != self.dim:
            raise ValueError(f"차원 불일치 ({key}): {arr.shape[0]} != {self.dim}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"유한하지 않은 임베딩 값: {key}")
        self._vectors[key] = arr

    def put_many(self, keys: Sequence[str], vectors: Sequence[Sequence[float]]) -> None:
        if len(keys) != len(vectors):
            raise ValueError(f"키와 벡터 개수가 다릅니다: {len(keys)} vs {len(vectors)}")
        for key, vector in zip(keys, vectors):
            self.put(key, vector)

    def get(self, key: str) -> np.ndarray:
        """벡터 조회

        Raises:
            KeyError: 키가 없는 경우
        """
        return self._vectors[key]

    def matrix(self, keys: Sequence[str]) -> np.ndarray:
        """키 순서대로 쌓은 (len(keys), dim) float64 행렬"""
        if not keys:
            return np.zeros((0, self.dim or 0))
        return np.vstack([self._vectors[k] for k in keys]).astype(np.float64)

    def keys(self) -> List[str]:
        return list(self._vectors)

    def items(self) -> Iterator:
        return iter(self._vectors.items())

    def missing(self, keys: Iterable[str]) -> List[str]:
        return [k for k in keys if k not in self._vectors]

    def __contains__(self, key: object) -> bool:
        return key in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        if self.dim != other.dim or set(self._vectors) != set(other._vectors):
            return False
        return all(np.array_equal(v, other._vectors[k]) for k, v in self._vectors.items())

    # ------------------------------------------------------------------
    # 저장 / 로드
    # ------------------------------------------------------------------

    def save(self, directory: str) -> Dict[str, str]:
        """리틀엔디안 float32 행 우선 바이너리 + JSON 사이드카로 저장합니다.

        Returns:
            저장된 파일 경로 딕셔너리
        """
        os.makedirs(directory, exist_ok=True)
        keys = sorted(self._vectors)
        dim = self.dim or 0
        matrix = (
            np.vstack([self._vectors[k] for k in keys]) if keys else np.zeros((0, dim), dtype=np.float32)
        )
        bin_path = os.path.join(directory, EMBEDDINGS_FILE)
        sidecar_path = os.path.join(directory, EMBEDDINGS_SIDECAR_FILE)
        with open(bin_path, "wb") as f:
            f.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())
        with open(sidecar_path, "w", encoding="utf-8") as f:
            json.dump({"dim": dim, "count": len(keys), "keys": keys}, f, ensure_ascii=False)
        logger.info(f"임베딩 저장 완료: {len(keys)}개 (dim={dim})")
        return {"bin": bin_path, "sidecar": sidecar_path}

    @classmethod
    def load(cls, directory: str) -> "EmbeddingStore":
        """save()로 저장한 저장소를 읽습니다.

        Raises:
            ValueError: 바이너리 크기가 사이드카와 맞지 않는 경우
        """
        with open(os.path.join(directory, EMBEDDINGS_SIDECAR_FILE), "r", encoding="utf-8") as f:
            sidecar = json.load(f)
        dim, count, keys = int(sidecar["dim"]), int(sidecar["count"]), list(sidecar["keys"])
        with open(os.path.join(directory, EMBEDDINGS_FILE), "rb") as f:
            raw = f.read()
        expected = dim * count * 4
        if len(raw) != expected or len(keys) != count:
            raise ValueError(
                f"임베딩 파일 크기 불일치: {len(raw)} bytes (예상 {expected}), keys={len(keys)}, count={count}"
            )
        matrix = np.frombuffer(raw, dtype="<f4").reshape(count, dim) if count else np.zeros((0, dim))
        store = cls(dim=dim if dim else None)
        for key, row in zip(keys, matrix):
            store._vectors[key] = np.array(row, dtype=np.float32)
        return store
