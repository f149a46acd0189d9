"""
LLM 게이트웨이 테스트

httpx.MockTransport 로 네트워크 없이 재시도, 캐시, 배치, 동시성, 계측을 테스트합니다.
"""

import json
import os
import time
from unittest.mock import patch

import httpx
import pytest

from src.gateway import (
    APIKeyNotFoundError,
    GatewayConfig,
    GatewayError,
    LLMGateway,
    PriceTable,
    ResponseCache,
    UsageMeter,
    meter_report,
)


def _chat_body(content="hello", prompt_tokens=12, completion_tokens=3):
    return {
        "id": "chatcmpl-test",
        "object": "chat.completion",
        "created": 0,
        "model": "gpt-4o-mini",
        "choices": [
            {"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}
        ],
        "usage": {
            "prompt_tokens": prompt_tokens,
            "completion_tokens": completion_tokens,
            "total_tokens": prompt_tokens + completion_tokens,
        },
    }


def _embedding_body(inputs):
    return {
        "object": "list",
        "model": "text-embedding-3-small",
        # 순서를 뒤집어 보내도 index 로 정렬되는지 확인
        "data": [
            {"object": "embedding", "index": i, "embedding": [float(len(text)), float(i)]}
            for i, text in reversed(list(enumerate(inputs)))
        ],
        "usage": {"prompt_tokens": len(inputs), "total_tokens": len(inputs)},
    }


class ScriptedTransport:
    """요청을 기록하고 정해진 응답을 순서대로 돌려주는 MockTransport 핸들러"""

    def __init__(self, responses=None, default=None):
        self.responses = list(responses or [])
        self.default = default
        self.requests = []

    def __call__(self, request: httpx.Request) -> httpx.Response:
        self.requests.append(request)
        if self.responses:
            item = self.responses.pop(0)
        else:
            item = self.default(request)
        if isinstance(item, Exception):
            raise item
        status, body = item
        return httpx.Response(status, json=body)


def _gateway(handler, sleeps=None, **config_overrides):
    config = GatewayConfig(**config_overrides)
    client = httpx.Client(transport=httpx.MockTransport(handler))
    sleep = sleeps.append if sleeps is not None else (lambda _: None)
    return LLMGateway(config, api_key="test-key", http_client=client, sleep=sleep)


# ----------------------------------------------------------------------
# 설정 / API 키
# ----------------------------------------------------------------------

class TestGatewayConfig:
    """게이트웨이 설정 테스트"""

    def test_missing_api_key(self):
        with patch.dict(os.environ, {}, clear=True):
            with pytest.raises(APIKeyNotFoundError):
                LLMGateway(GatewayConfig(api_key_env="KET_TEST_MISSING_KEY"))

    def test_api_key_from_environment(self):
        with patch.dict(os.environ, {"KET_TEST_KEY": "from-env"}):
            gateway = LLMGateway(GatewayConfig(api_key_env="KET_TEST_KEY"))
        assert gateway.client.api_key == "from-env"

    def test_from_file(self, tmp_path):
        path = tmp_path / "gateway.json"
        path.write_text(json.dumps({"chat_model": "local-model", "max_concurrency": 4}), encoding="utf-8")
        config = GatewayConfig.from_file(str(path))
        assert config.chat_model == "local-model"
        assert config.max_concurrency == 4
        assert config.max_retries == 3

    def test_from_file_rejects_unknown_fields(self, tmp_path):
        path = tmp_path / "gateway.json"
        path.write_text(json.dumps({"chat_modle": "typo"}), encoding="utf-8")
        with pytest.raises(ValueError):
            GatewayConfig.from_file(str(path))

    @pytest.mark.parametrize("field,value", [("max_concurrency", 0), ("timeout", 0), ("max_retries", -1)])
    def test_invalid_values(self, field, value):
        with pytest.raises(ValueError):
            GatewayConfig(**{field: value}).validate()


# ----------------------------------------------------------------------
# 재시도
# ----------------------------------------------------------------------

class TestRetry:
    """재시도 / 백오프 테스트"""

    def test_rate_limit_then_success(self):
        """429 두 번 후 200: 시도 3회, 대기 [1, 2]"""
        handler = ScriptedTransport([
            (429, {"error": {"message": "slow down"}}),
            (429, {"error": {"message": "slow down"}}),
            (200, _chat_body("done")),
        ])
        sleeps = []
        gateway = _gateway(handler, sleeps)

        text, usage = gateway.chat_complete("sys", "hi", stage="extraction")

        assert text == "done"
        assert usage == {"input_tokens": 12, "output_tokens": 3}
        assert len(handler.requests) == 3
        assert sleeps == [1.0, 2.0]
        assert gateway.backoff_log == [1.0, 2.0]
        stage = gateway.meter.get("extraction")
        assert stage.attempts == 3
        assert stage.requests == 1

    def test_server_error_is_retried(self):
        handler = ScriptedTransport([(503, {"error": {"message": "busy"}}), (200, _chat_body())])
        gateway = _gateway(handler)
        assert gateway.chat_complete("", "hi")[0] == "hello"
        assert len(handler.requests) == 2

    def test_connection_error_is_retried(self):
        handler = ScriptedTransport([httpx.ConnectError("refused"), (200, _chat_body())])
        gateway = _gateway(handler)
        assert gateway.chat_complete("", "hi")[0] == "hello"

    def test_client_error_not_retried(self):
        handler = ScriptedTransport([(400, {"error": {"message": "bad request"}})])
        gateway = _gateway(handler)
        with pytest.raises(GatewayError) as exc_info:
            gateway.chat_complete("", "hi")
        assert exc_info.value.status == 400
        assert "bad request" in exc_info.value.body
        assert len(handler.requests) == 1

    def test_retries_exhausted(self):
        handler = ScriptedTransport(default=lambda _: (429, {"error": {"message": "no"}}))
        sleeps = []
        gateway = _gateway(handler, sleeps, max_retries=2)
        with pytest.raises(GatewayError) as exc_info:
            gateway.chat_complete("", "hi")
        assert exc_info.value.status == 429
        assert len(handler.requests) == 3
        assert sleeps == [1.0, 2.0]

    def test_empty_prompt_rejected(self):
        gateway = _gateway(ScriptedTransport())
        with pytest.raises(ValueError):
            gateway.chat_complete("sys", "   ")


# ----------------------------------------------------------------------
# 캐시
# ----------------------------------------------------------------------

class TestResponseCache:
    """응답 캐시 테스트"""

    def test_repeated_request_hits_cache(self):
        handler = ScriptedTransport(default=lambda _: (200, _chat_body()))
        gateway = _gateway(handler)

        first = gateway.chat_complete("sys", "hi", max_tokens=10)
        second = gateway.chat_complete("sys", "hi", max_tokens=10)

        assert first == second
        assert len(handler.requests) == 1
        assert gateway.meter.get("generation").cache_hits == 1

    def test_bypass_refetches_and_overwrites(self, tmp_path):
        """use_cache=False: 캐시를 읽지 않고 요청, 새 응답이 이후 재생됨"""
        cache_path = str(tmp_path / "responses.jsonl")
        handler = ScriptedTransport([(200, _chat_body("bad")), (200, _chat_body("good"))])
        gateway = _gateway(handler, cache_path=cache_path)

        assert gateway.chat_complete("sys", "q")[0] == "bad"
        assert gateway.chat_complete("sys", "q", use_cache=False)[0] == "good"
        assert gateway.chat_complete("sys", "q")[0] == "good"
        assert len(handler.requests) == 2

        offline = ScriptedTransport(default=lambda _: httpx.ConnectError("offline"))
        assert _gateway(offline, cache_path=cache_path).chat_complete("sys", "q")[0] == "good"
        assert offline.requests == []

    def test_cache_file_replays_without_network(self, tmp_path):
        cache_path = str(tmp_path / "responses.jsonl")
        online = ScriptedTransport(default=lambda _: (200, _chat_body("cached answer")))
        _gateway(online, cache_path=cache_path).chat_complete("sys", "question")

        offline = ScriptedTransport(default=lambda _: httpx.ConnectError("offline"))
        gateway = _gateway(offline, cache_path=cache_path)
        assert gateway.chat_complete("sys", "question")[0] == "cached answer"
        assert offline.requests == []

    def test_key_depends_on_body(self):
        a = ResponseCache.key("/chat/completions", "m", {"messages": [1], "temperature": 0.0})
        b = ResponseCache.key("/chat/completions", "m", {"temperature": 0.0, "messages": [1]})
        c = ResponseCache.key("/chat/completions", "m2", {"messages": [1], "temperature": 0.0})
        assert a == b
        assert a != c


# ----------------------------------------------------------------------
# 임베딩 / 동시성
# ----------------------------------------------------------------------

class TestEmbeddings:
    """임베딩 배치 테스트"""

    def test_batches_and_order(self):
        def respond(request):
            return 200, _embedding_body(json.loads(request.content)["input"])

        handler = ScriptedTransport(default=respond)
        gateway = _gateway(handler, embedding_batch_size=2)
        texts = ["a", "bb", "ccc", "dddd", "eeeee"]

        vectors = gateway.embed(texts)

        assert len(handler.requests) == 3
        assert [v[0] for v in vectors] == [1.0, 2.0, 3.0, 4.0, 5.0]
        assert gateway.meter.get("embedding").input_tokens == 5

    def test_empty_input(self):
        handler = ScriptedTransport()
        assert _gateway(handler).embed([]) == []
        assert handler.requests == []


class TestConcurrency:
    """제한 동시 실행 테스트"""

    def test_map_concurrent_preserves_order(self):
        gateway = _gateway(ScriptedTransport(), max_concurrency=3)
        assert gateway.map_concurrent(lambda x: x * 2, [3, 1, 2, 5]) == [6, 2, 4, 10]
        assert gateway.map_concurrent(lambda x: x, []) == []

    def test_in_flight_requests_capped(self):
        def slow(request):
            time.sleep(0.02)
            return 200, _chat_body()

        gateway = _gateway(ScriptedTransport(default=slow), max_concurrency=2)
        prompts = [f"prompt {i}" for i in range(6)]
        gateway_results = gateway.map_concurrent(lambda p: gateway.chat_complete("", p)[0], prompts)

        assert gateway_results == ["hello"] * 6
        assert 1 <= gateway.peak_in_flight <= 2


# ----------------------------------------------------------------------
# 계측
# ----------------------------------------------------------------------

class TestMeter:
    """사용량 계측 / 비용 보고 테스트"""

    def test_report_prices_per_thousand_tokens(self):
        meter = UsageMeter()
        meter.record("extraction", 1000, 500)
        meter.record("embedding", 2000)
        report = meter_report(meter, PriceTable(chat_input_per_1k=1.0, chat_output_per_1k=2.0, embedding_per_1k=0.5))

        assert report["extraction"] == pytest.approx(2.0)
        assert report["embedding"] == pytest.approx(1.0)
        assert report["generation"] == 0.0
        assert report["total"] == pytest.approx(3.0)

    def test_counters_are_monotone(self):
        meter = UsageMeter()
        meter.record("generation", -5, 3)
        assert meter.total_tokens() == (0, 3)

    def test_negative_price_rejected(self):
        with pytest.raises(ValueError):
            meter_report(UsageMeter(), PriceTable(chat_input_per_1k=-1.0))
