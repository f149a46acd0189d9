"""
LLM 게이트웨이 모듈

OpenAI 호환 chat-completions / embeddings 엔드포인트에 대한 클라이언트입니다.
- 제한된 동시 실행 (기본 최대 30개 요청)
- 429/연결 오류/5xx 에 대한 지수 백오프 재시도
- 단계별(추출·임베딩·생성) 토큰 사용량 계측
- (endpoint, model, 요청 본문) 해시 키의 응답 캐시 (JSON lines)

전송 계층은 주입 가능한 httpx 클라이언트이며, 테스트에서는 httpx.MockTransport 를 사용합니다.
SDK 자체 재시도는 끄고(max_retries=0) 이 모듈의 재시도 루프만 사용합니다.
"""

import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import httpx
from dotenv import load_dotenv
from openai import APIConnectionError, APIStatusError, InternalServerError, OpenAI, RateLimitError

try:
    from config.settings import (
        API_KEY_ENV,
        BASE_BACKOFF_SECONDS,
        DEFAULT_MODEL,
        EMBEDDING_BATCH_SIZE,
        EMBEDDING_MODEL,
        MAX_CONCURRENT_REQUESTS,
        MAX_RETRIES,
        OPENAI_BASE_URL,
        PRICE_CHAT_INPUT_PER_1K,
        PRICE_CHAT_OUTPUT_PER_1K,
        PRICE_EMBEDDING_PER_1K,
        REQUEST_TIMEOUT_SECONDS,
    )
except ImportError:
    API_KEY_ENV: str = "OPENAI_API_KEY"
    BASE_BACKOFF_SECONDS: int = 2
    DEFAULT_MODEL: str = "gpt-4o-mini"
    EMBEDDING_BATCH_SIZE: int = 64
    EMBEDDING_MODEL: str = "text-embedding-3-small"
    MAX_CONCURRENT_REQUESTS: int = 30
    MAX_RETRIES: int = 3
    OPENAI_BASE_URL: str = "https://api.openai.com/v1"
    PRICE_CHAT_INPUT_PER_1K: float = 0.00015
    PRICE_CHAT_OUTPUT_PER_1K: float = 0.0006
    PRICE_EMBEDDING_PER_1K: float = 0.00002
    REQUEST_TIMEOUT_SECONDS: float = 60.0

# 환경변수 로드
load_dotenv()

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

STAGES = ("extraction", "embedding", "generation")

_RETRYABLE = (RateLimitError, APIConnectionError, InternalServerError)


# ============================================================================
# 커스텀 예외 클래스
# ============================================================================

class APIKeyNotFoundError(ValueError):
    """API 키가 설정되지 않은 경우 발생하는 예외

    설정된 API 키 환경변수(기본 OPENAI_API_KEY)가 없거나 .env 파일에
    API 키가 없는 경우 발생합니다.
    """
    pass


class GatewayError(RuntimeError):
    """원격 호출이 재시도 불가 오류로 실패했거나 재시도를 모두 소진한 경우 발생하는 예외

    Attributes:
        status: HTTP 상태 코드 (연결 오류 등은 None)
        body: 응답 본문 일부
    """

    def __init__(self, message: str, status: Optional[int] = None, body: str = "") -> None:
        super().__init__(message)
        self.status = status
        self.body = body


# ============================================================================
# 설정 / 가격표
# ============================================================================

@dataclass
class GatewayConfig:
    """게이트웨이 설정

    Attributes:
        base_url: API 주소 (예: https://api.openai.com/v1)
        api_key_env: API 키를 읽을 환경변수 이름
        chat_model: 채팅 모델
        embedding_model: 임베딩 모델
        max_concurrency: 최대 동시 요청 수
        max_retries: 최대 재시도 횟수 (총 시도 = max_retries + 1)
        backoff_base: 지수 백오프 밑 (대기 = base ** attempt 초)
        timeout: 요청 타임아웃 (초)
        embedding_batch_size: 임베딩 요청 1회당 최대 텍스트 수
        cache_path: 응답 캐시 파일 경로 (None이면 메모리 캐시만)
    """

    base_url: str = OPENAI_BASE_URL
    api_key_env: str = API_KEY_ENV
    chat_model: str = DEFAULT_MODEL
    embedding_model: str = EMBEDDING_MODEL
    max_concurrency: int = MAX_CONCURRENT_REQUESTS
    max_retries: int = MAX_RETRIES
    backoff_base: float = BASE_BACKOFF_SECONDS
    timeout: float = REQUEST_TIMEOUT_SECONDS
    embedding_batch_size: int = EMBEDDING_BATCH_SIZE
    cache_path: Optional[str] = None

    def validate(self) -> "GatewayConfig":
        """
        Raises:
            ValueError: 동시성/타임아웃/배치 크기가 양수가 아니거나 재시도 횟수가 음수인 경우
        """
        if self.max_concurrency < 1:
            raise ValueError(f"max_concurrency는 1 이상이어야 합니다: {self.max_concurrency}")
        if self.timeout <= 0:
            raise ValueError(f"timeout은 양수여야 합니다: {self.timeout}")
        if self.max_retries < 0:
            raise ValueError(f"max_retries는 0 이상이어야 합니다: {self.max_retries}")
        if self.embedding_batch_size < 1:
            raise ValueError(f"embedding_batch_size는 1 이상이어야 합니다: {self.embedding_batch_size}")
        return self

    @classmethod
    def from_file(cls, path: str) -> "GatewayConfig":
        """JSON 파일의 필드로 기본값을 덮어씁니다.

        Raises:
            ValueError: 알 수 없는 필드가 있는 경우
        """
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"알 수 없는 게이트웨이 설정 필드: {sorted(unknown)}")
        return cls(**data).validate()

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class PriceTable:
    """1K 토큰당 가격표 (통화 단위는 사용자 정의)"""

    chat_input_per_1k: float = PRICE_CHAT_INPUT_PER_1K
    chat_output_per_1k: float = PRICE_CHAT_OUTPUT_PER_1K
    embedding_per_1k: float = PRICE_EMBEDDING_PER_1K

    def validate(self) -> "PriceTable":
        for name in ("chat_input_per_1k", "chat_output_per_1k", "embedding_per_1k"):
            if getattr(self, name) < 0:
                raise ValueError(f"가격은 음수일 수 없습니다: {name}={getattr(self, name)}")
        return self


# ============================================================================
# 사용량 계측
# ============================================================================

@dataclass
class StageUsage:
    """단계별 누적 사용량"""

    requests: int = 0
    attempts: int = 0
    cache_hits: int = 0
    input_tokens: int = 0
    output_tokens: int = 0


class UsageMeter:
    """단계별 토큰/요청 수 계측기 (스레드 안전, 단조 증가)"""

    def __init__(self) -> None:
        self._usage: Dict[str, StageUsage] = {stage: StageUsage() for stage in STAGES}
        self._lock = threading.Lock()

    def _stage(self, stage: str) -> StageUsage:
        if stage not in self._usage:
            self._usage[stage] = StageUsage()
        return self._usage[stage]

    def record(self, stage: str, input_tokens: int = 0, output_tokens: int = 0) -> None:
        with self._lock:
            usage = self._stage(stage)
            usage.requests += 1
            usage.input_tokens += max(0, int(input_tokens))
            usage.output_tokens += max(0, int(output_tokens))

    def record_attempt(self, stage: str) -> None:
        with self._lock:
            self._stage(stage).attempts += 1

    def record_cache_hit(self, stage: str) -> None:
        with self._lock:
            self._stage(stage).cache_hits += 1

    def get(self, stage: str) -> StageUsage:
        with self._lock:
            return StageUsage(**asdict(self._stage(stage)))

    def snapshot(self) -> Dict[str, Dict[str, int]]:
        with self._lock:
            return {stage: asdict(usage) for stage, usage in self._usage.items()}

    def total_tokens(self) -> Tuple[int, int]:
        """(입력 토큰 합, 출력 토큰 합)"""
        with self._lock:
            return (
                sum(u.input_tokens for u in self._usage.values()),
                sum(u.output_tokens for u in self._usage.values()),
            )


def meter_report(meter: UsageMeter, prices: Optional[PriceTable] = None) -> Dict[str, float]:
    """단계별 비용 (토큰 × 1K당 가격)

    embedding 단계는 임베딩 가격, 나머지 단계는 채팅 입력/출력 가격을 적용합니다.

    Returns:
        {"extraction": ..., "embedding": ..., "generation": ..., "total": ...}
    """
    prices = (prices or PriceTable()).validate()
    report: Dict[str, float] = {}
    for stage, usage in meter.snapshot().items():
        if stage == "embedding":
            cost = usage["input_tokens"] / 1000.0 * prices.embedding_per_1k
        else:
            cost = (
                usage["input_tokens"] / 1000.0 * prices.chat_input_per_1k
                + usage["output_tokens"] / 1000.0 * prices.chat_output_per_1k
            )
        report[stage] = cost
    report["total"] = sum(report.values())
    return report


# ============================================================================
# 응답 캐시
# ============================================================================

class ResponseCache:
    """(endpoint, model, 정규화 요청 본문) SHA-256 키 → 응답 캐시

    path가 주어지면 JSON lines 파일에서 읽고 새 항목을 덧붙여 저장합니다.
    """

    def __init__(self, path: Optional[str] = None) -> None:
        self.path = path
        self._entries: Dict[str, Any] = {}
        self._lock = threading.Lock()
        if path and os.path.exists(path):
            with open(path, "r", encoding="utf-8") as f:
                for line in f:
                    if line.strip():
                        record = json.loads(line)
                        self._entries[record["key"]] = record["response"]
            logger.info(f"응답 캐시 로드: {len(self._entries)}개 ({path})")

    @staticmethod
    def key(endpoint: str, model: str, body: Dict[str, Any]) -> str:
        canonical = json.dumps(
            {"endpoint": endpoint, "model": model, "body": body},
            sort_keys=True, ensure_ascii=False, separators=(",", ":"),
        )
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def get(self, key: str) -> Optional[Any]:
        with self._lock:
            return self._entries.get(key)

    def put(self, key: str, response: Any) -> None:
        with self._lock:
            self._entries[key] = response
            if self.path:
                os.makedirs(os.path.dirname(os.path.abspath(self.path)), exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as f:
                    f.write(json.dumps({"key": key, "response": response}, ensure_ascii=False) + "\n")

    def __len__(self) -> int:
        return len(self._entries)


# ============================================================================
# 게이트웨이
# ============================================================================

class LLMGateway:
    """OpenAI 호환 API 게이트웨이

    Attributes:
        config: GatewayConfig
        meter: 사용량 계측기
        cache: 응답 캐시
        peak_in_flight: 관측된 최대 동시 요청 수
    """

    def __init__(
        self,
        config: Optional[GatewayConfig] = None,
        api_key: Optional[str] = None,
        http_client: Optional[httpx.Client] = None,
        cache: Optional[ResponseCache] = None,
        meter: Optional[UsageMeter] = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        """
        Raises:
            APIKeyNotFoundError: api_key 인자도 환경변수도 없는 경우
        """
        self.config = (config or GatewayConfig()).validate()
        api_key = api_key or os.getenv(self.config.api_key_env)
        if not api_key:
            error_msg = (
                f"{self.config.api_key_env} 환경변수가 설정되지 않았습니다.\n"
                "다음 방법 중 하나로 API 키를 설정해주세요:\n"
                f"1. .env 파일에 {self.config.api_key_env}=your_api_key 추가\n"
                "2. 환경변수로 직접 설정"
            )
            logger.error("API 키를 찾을 수 없습니다. .env 파일 또는 환경변수를 확인해주세요.")
            raise APIKeyNotFoundError(error_msg)

        self.client = OpenAI(
            api_key=api_key,
            base_url=self.config.base_url,
            timeout=self.config.timeout,
            max_retries=0,
            http_client=http_client,
        )
        self.cache = cache if cache is not None else ResponseCache(self.config.cache_path)
        self.meter = meter or UsageMeter()
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(self.config.max_concurrency)
        self._flight_lock = threading.Lock()
        self._in_flight = 0
        self.peak_in_flight = 0
        self.backoff_log: List[float] = []

        logger.info(
            f"LLMGateway 초기화 완료 (모델: {self.config.chat_model}, "
            f"임베딩: {self.config.embedding_model}, 동시성: {self.config.max_concurrency})"
        )

    # ------------------------------------------------------------------
    # 재시도 / 동시성
    # ------------------------------------------------------------------

    def _call_with_retry(self, stage: str, call: Callable[[], T]) -> T:
        """동시성 슬롯을 잡고 재시도 정책에 따라 호출합니다.

        Raises:
            GatewayError: 재시도 불가 4xx 또는 재시도 소진
        """
        max_retries = self.config.max_retries
        last_exception: Optional[Exception] = None

        for attempt in range(max_retries + 1):
            self.meter.record_attempt(stage)
            try:
                with self._slots:
                    with self._flight_lock:
                        self._in_flight += 1
                        self.peak_in_flight = max(self.peak_in_flight, self._in_flight)
                    try:
                        return call()
                    finally:
                        with self._flight_lock:
                            self._in_flight -= 1
            except _RETRYABLE as e:
                last_exception = e
                if attempt < max_retries:
                    wait_time = float(self.config.backoff_base ** attempt)
                    logger.warning(
                        f"API 호출 실패 (시도 {attempt + 1}/{max_retries + 1}, "
                        f"예외 타입: {type(e).__name__}): {e}. {wait_time}초 후 재시도..."
                    )
                    self.backoff_log.append(wait_time)
                    self._sleep(wait_time)
            except APIStatusError as e:
                body = (e.response.text if e.response is not None else "")[:500]
                logger.error(f"API 호출 실패 (HTTP {e.status_code}): {body}")
                raise GatewayError(f"HTTP {e.status_code} 오류: {body}", status=e.status_code, body=body) from e

        status = getattr(last_exception, "status_code", None)
        error_msg = f"{max_retries}번 재시도했지만 실패했습니다: {last_exception}"
        logger.error(f"API 호출 최종 실패 ({type(last_exception).__name__})", exc_info=last_exception)
        raise GatewayError(error_msg, status=status) from last_exception

    def map_concurrent(self, fn: Callable[[T], R], items: Sequence[T]) -> List[R]:
        """항목들을 최대 동시성만큼 병렬 처리하고 입력 순서대로 결과를 반환합니다."""
        if not items:
            return []
        workers = min(self.config.max_concurrency, len(items))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))

    # ------------------------------------------------------------------
    # 엔드포인트
    # ------------------------------------------------------------------

    def chat_complete(
        self,
        system_prompt: str,
        user_prompt: str,
        max_tokens: Optional[int] = None,
        stage: str = "generation",
        temperature: float = 0.0,
        use_cache: bool = True,
    ) -> Tuple[str, Dict[str, int]]:
        """채팅 완성 요청

        캐시에 같은 (모델, 프롬프트) 키가 있으면 네트워크 호출 없이 그대로 재생합니다.
        use_cache=False 면 캐시를 읽지 않고 요청하며, 새 응답이 기존 항목을 덮어씁니다.

        Returns:
            (모델 응답 텍스트, {"input_tokens", "output_tokens"})

        Raises:
            ValueError: 사용자 프롬프트가 비어 있는 경우
            GatewayError: 호출 실패
        """
        if not user_prompt or not user_prompt.strip():
            raise ValueError("user_prompt가 비어있습니다.")
        model = self.config.chat_model
        messages = []
        if system_prompt:
            messages.append({"role": "system", "content": system_prompt})
        messages.append({"role": "user", "content": user_prompt})
        body: Dict[str, Any] = {"messages": messages, "temperature": temperature}
        if max_tokens is not None:
            body["max_tokens"] = max_tokens

        key = ResponseCache.key("/chat/completions", model, body)
        cached = self.cache.get(key) if use_cache else None
        if cached is not None:
            self.meter.record_cache_hit(stage)
            return cached["text"], dict(cached["usage"])

        response = self._call_with_retry(
            stage, lambda: self.client.chat.completions.create(model=model, **body)
        )
        if not response.choices:
            raise GatewayError("API 응답에 선택지가 없습니다.")
        text = response.choices[0].message.content or ""
        usage = {
            "input_tokens": getattr(response.usage, "prompt_tokens", 0) or 0,
            "output_tokens": getattr(response.usage, "completion_tokens", 0) or 0,
        }
        self.meter.record(stage, usage["input_tokens"], usage["output_tokens"])
        self.cache.put(key, {"text": text, "usage": usage})
        return text, usage

    def embed(self, texts: Sequence[str], stage: str = "embedding") -> List[List[float]]:
        """임베딩 요청 (embedding_batch_size 개씩 나누어 요청, 입력 순서 유지)

        Raises:
            GatewayError: 호출 실패
        """
        if not texts:
            return []
        model = self.config.embedding_model
        size = self.config.embedding_batch_size
        vectors: List[List[float]] = []

        for start in range(0, len(texts), size):
            batch = list(texts[start:start + size])
            body = {"input": batch}
            key = ResponseCache.key("/embeddings", model, body)
            cached = self.cache.get(key)
            if cached is not None:
                self.meter.record_cache_hit(stage)
                vectors.extend(cached["vectors"])
                continue

            response = self._call_with_retry(
                stage, lambda: self.client.embeddings.create(model=model, input=batch)
            )
            ordered = sorted(response.data, key=lambda d: d.index)
            if len(ordered) != len(batch):
                raise GatewayError(f"임베딩 개수 불일치: 요청 {len(batch)}개, 응답 {len(ordered)}개")
            batch_vectors = [list(d.embedding) for d in ordered]
            input_tokens = getattr(response.usage, "prompt_tokens", 0) or 0
            self.meter.record(stage, input_tokens, 0)
            self.cache.put(key, {"vectors": batch_vectors, "usage": {"input_tokens": input_tokens}})
            vectors.extend(batch_vectors)

        logger.debug(f"임베딩 {len(texts)}개 완료 (배치 크기 {size})")
        return vectors
