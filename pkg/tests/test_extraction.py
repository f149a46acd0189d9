"""
지식 그래프 추출 테스트

mock 추출기 규칙, 레코드 파싱, 재시도/캐시, 병합, LLM 2단계 추출을 테스트합니다.
"""

import itertools
from unittest.mock import MagicMock

import httpx
import pytest

from src.corpus import Chunk
from src.embedding import EmbeddingStore
from src.extraction import (
    ChunkExtraction,
    ExtractedEntity,
    ExtractedRelation,
    ExtractionCache,
    ExtractionParseError,
    LLMTripletExtractor,
    MeteredExtractor,
    MockTripletExtractor,
    TripletExtractor,
    extract_chunk,
    format_entity_record,
    format_relation_record,
    kg_index,
    merge_extractions,
    parse_records,
    template_token_counts,
)
from src.gateway import GatewayConfig, LLMGateway
from src.tokenizer import WordTokenizer
from src.utils.records import IssueLog


class ScriptedExtractor(TripletExtractor):
    """정해진 출력을 순서대로 내는 테스트용 추출기"""

    name = "scripted"

    def __init__(self, outputs):
        self.outputs = list(outputs)
        self.calls = 0
        self.refreshes = []

    def run(self, text, refresh=False):
        self.calls += 1
        self.refreshes.append(refresh)
        output = self.outputs.pop(0)
        if isinstance(output, Exception):
            raise output
        return output


GOOD_RAW = '("entity"|Acme|ORG|A rocket company)\n("entity"|Paris|GEO|A city)\n("relationship"|Acme|Paris|Acme is in Paris)'


def _chunk(text, chunk_id=0):
    return Chunk(chunk_id=chunk_id, doc_id="d", text=text, token_count=WordTokenizer().count(text))


# ----------------------------------------------------------------------
# mock 추출기
# ----------------------------------------------------------------------

class TestMockTripletExtractor:
    """대문자 n-gram 규칙 테스트"""

    def test_capitalized_runs_become_entities(self, stopwords):
        extractor = MockTripletExtractor(stopwords)
        entities, relations = extractor.parse(extractor.run("Alice Smith founded Acme Corp in Paris."))

        assert [e.name for e in entities] == ["ALICE SMITH", "ACME CORP", "PARIS"]
        assert all(e.type_label == "MOCK" for e in entities)
        assert all(e.description == "Alice Smith founded Acme Corp in Paris." for e in entities)
        assert [(r.source, r.target) for r in relations] == [
            ("ALICE SMITH", "ACME CORP"),
            ("ALICE SMITH", "PARIS"),
            ("ACME CORP", "PARIS"),
        ]

    def test_leading_stopword_is_dropped(self, stopwords):
        extractor = MockTripletExtractor(stopwords)
        entities, _ = extractor.parse(extractor.run("The Zenith Labs team met."))
        assert [e.name for e in entities] == ["ZENITH LABS"]

    def test_lowercase_text_yields_nothing(self, stopwords):
        """대문자 단어가 불용어뿐이면 빈 출력"""
        extractor = MockTripletExtractor(stopwords)
        raw = extractor.run("The river flows through the valley.")
        assert raw == ""
        assert extractor.parse(raw) == ([], [])

    def test_deterministic(self, stopwords):
        text = "Carol White leads Zenith Labs in Berlin."
        assert MockTripletExtractor(stopwords).run(text) == MockTripletExtractor(stopwords).run(text)


# ----------------------------------------------------------------------
# 레코드 파싱
# ----------------------------------------------------------------------

class TestParseRecords:
    """구분자 레코드 파싱 테스트"""

    def test_parses_entities_and_relations(self):
        entities, relations = parse_records(GOOD_RAW)
        assert entities == [
            ExtractedEntity("ACME", "ORG", "A rocket company"),
            ExtractedEntity("PARIS", "GEO", "A city"),
        ]
        assert relations == [ExtractedRelation("ACME", "PARIS", "Acme is in Paris")]

    def test_noise_lines_ignored_when_records_exist(self):
        entities, _ = parse_records("Sure, here you go:\n" + GOOD_RAW + "\nDone.")
        assert len(entities) == 2

    def test_output_without_records_raises(self):
        with pytest.raises(ExtractionParseError):
            parse_records("I could not find anything useful.")

    def test_empty_output_is_empty_result(self):
        assert parse_records("  \n") == ([], [])

    def test_delimiter_in_name_is_neutralized(self):
        raw = format_entity_record("A|B", "ORG", "desc") + "\n" + format_relation_record("A|B", "C", "x")
        entities, relations = parse_records(raw)
        assert entities[0].name == "A B"
        assert relations[0].source == "A B"


# ----------------------------------------------------------------------
# 재시도 / 캐시
# ----------------------------------------------------------------------

class TestExtractChunk:
    """청크 추출 재시도 및 캐시 테스트"""

    def test_retry_after_parse_failure(self):
        extractor = ScriptedExtractor(["garbage", GOOD_RAW])
        result = extract_chunk(extractor, _chunk("Acme is in Paris."))

        assert extractor.calls == 2
        assert not result.failed
        assert len(result.entities) == 2
        assert extractor.refreshes == [False, True]

    def test_two_failures_recorded_as_error(self):
        issues = IssueLog()
        extractor = ScriptedExtractor([RuntimeError("timeout"), "garbage"])
        result = extract_chunk(extractor, _chunk("Acme is in Paris.", chunk_id=4), issues=issues)

        assert result.failed
        assert result.entities == []
        errors = issues.for_stage("extract")
        assert len(errors) == 1
        assert errors[0].level == "error"
        assert errors[0].item == "4"

    def test_cache_hit_skips_extractor(self):
        cache = ExtractionCache()
        chunk = _chunk("Acme is in Paris.")
        extract_chunk(ScriptedExtractor([GOOD_RAW]), chunk, cache)

        second = ScriptedExtractor([])
        result = extract_chunk(second, chunk, cache)
        assert second.calls == 0
        assert cache.hits == 1
        assert len(result.relations) == 1

    def test_bad_cache_entry_bypassed_on_retry(self):
        cache = ExtractionCache()
        chunk = _chunk("Acme is in Paris.")
        cache.put("scripted", chunk.text, "garbage")

        extractor = ScriptedExtractor([GOOD_RAW])
        result = extract_chunk(extractor, chunk, cache)
        assert extractor.calls == 1
        assert not result.failed
        assert cache.get("scripted", chunk.text) == GOOD_RAW

    def test_empty_chunk_rejected(self):
        with pytest.raises(ValueError):
            extract_chunk(ScriptedExtractor([]), _chunk("   "))

    def test_cache_file_persists(self, tmp_path):
        path = str(tmp_path / "cache" / "extraction.jsonl")
        ExtractionCache(path).put("mock", "text", GOOD_RAW)
        assert ExtractionCache(path).get("mock", "text") == GOOD_RAW


# ----------------------------------------------------------------------
# 토큰 계량
# ----------------------------------------------------------------------

class TestMeteredExtractor:
    """추출 입력 토큰 계량 테스트"""

    def test_cost_per_call(self, stopwords):
        metered = MeteredExtractor(MockTripletExtractor(stopwords), WordTokenizer(), prompt_tokens=(10, 20))
        metered.run("a b c")
        metered.run("d e")
        assert metered.calls == 2
        assert metered.input_tokens == (10 + 20 + 2 * 3) + (10 + 20 + 2 * 2)
        assert metered.name == "mock"

    def test_skipped_relation_pass_still_charged(self):
        """관계 패스를 건너뛰어도 2단계 프로토콜 전체를 계량 (상한)"""
        gateway = MagicMock()
        gateway.config.chat_model = "gpt-4o-mini"
        gateway.chat_complete.return_value = ("", {})
        metered = MeteredExtractor(LLMTripletExtractor(gateway), WordTokenizer(), prompt_tokens=(10, 20))

        metered.run("a b c")

        assert gateway.chat_complete.call_count == 1
        assert metered.input_tokens == 10 + 20 + 2 * 3

    def test_refresh_passed_to_inner(self):
        inner = ScriptedExtractor(["", ""])
        metered = MeteredExtractor(inner, WordTokenizer(), prompt_tokens=(1, 1))
        metered.run("a", refresh=True)
        metered.run("a")
        assert inner.refreshes == [True, False]

    def test_template_token_counts_positive(self):
        lambda_e, lambda_r = template_token_counts(WordTokenizer())
        assert lambda_e > 0
        assert lambda_r > 0


# ----------------------------------------------------------------------
# 병합 / KG-Index
# ----------------------------------------------------------------------

class TestMerge:
    """청크별 결과 병합 테스트"""

    def test_entities_deduplicated_across_chunks(self, tokenizer):
        first = ChunkExtraction(0, [ExtractedEntity("ACME", "ORG", "first")], [])
        second = ChunkExtraction(1, [ExtractedEntity("ACME", "ORG", "second")], [])
        skeleton = merge_extractions([second, first], tokenizer)

        assert len(skeleton.entities) == 1
        entity = skeleton.entities[0]
        assert entity.links == [0, 1]
        assert entity.description == "first\nsecond"
        assert entity.description_tokens == tokenizer.count("first\nsecond")

    def test_identical_descriptions_concatenated(self, tokenizer):
        chunks = [ChunkExtraction(i, [ExtractedEntity("ACME", "ORG", "same")], []) for i in range(2)]
        entity = merge_extractions(chunks, tokenizer).entities[0]
        assert entity.description == "same\nsame"

    def test_same_name_different_type_kept_apart(self, tokenizer):
        extraction = ChunkExtraction(
            0, [ExtractedEntity("APPLE", "ORG", "x"), ExtractedEntity("APPLE", "FOOD", "y")], []
        )
        assert len(merge_extractions([extraction], tokenizer).entities) == 2

    def test_relation_with_unknown_endpoint_dropped(self, tokenizer):
        issues = IssueLog()
        extraction = ChunkExtraction(
            0,
            [ExtractedEntity("ACME", "ORG", "x")],
            [ExtractedRelation("ACME", "NOWHERE", "lost")],
        )
        skeleton = merge_extractions([extraction], tokenizer, issues)
        assert skeleton.relations == []
        assert len(issues.for_stage("extract")) == 1

    def test_relations_deduplicated_by_endpoints(self, tokenizer):
        entities = [ExtractedEntity("A", "T", "a"), ExtractedEntity("B", "T", "b")]
        skeleton = merge_extractions(
            [
                ChunkExtraction(0, entities, [ExtractedRelation("A", "B", "one")]),
                ChunkExtraction(2, entities, [ExtractedRelation("A", "B", "two")]),
            ],
            tokenizer,
        )
        assert len(skeleton.relations) == 1
        assert skeleton.relations[0].links == [0, 2]
        assert skeleton.linked_units() == [0, 2]


class TestKgIndex:
    """KG-Index 전체 흐름 테스트"""

    def test_embeds_entities_and_relations(self, stopwords, hash_provider):
        chunks = [
            _chunk("Alice Smith founded Acme Corp in Paris.", 0),
            _chunk("Bob Jones joined Acme Corp.", 1),
        ]
        store = EmbeddingStore()
        used = []

        def mapper(fn, items):
            used.append(len(items))
            return [fn(item) for item in items]

        skeleton = kg_index(chunks, MockTripletExtractor(stopwords), hash_provider, store, map_fn=mapper)

        assert used == [2]
        names = [e.name for e in skeleton.entities]
        assert names.count("ACME CORP") == 1
        acme = skeleton.entities[names.index("ACME CORP")]
        assert acme.links == [0, 1]
        assert all(e.embedding_key in store for e in skeleton.entities)
        assert all(r.embedding_key in store for r in skeleton.relations)

    def test_no_chunks_gives_empty_skeleton(self, stopwords, hash_provider):
        skeleton = kg_index([], MockTripletExtractor(stopwords), hash_provider, EmbeddingStore())
        assert skeleton.is_empty()

    @pytest.mark.parametrize("size", [1, 2, 3])
    def test_chunk_subset_gives_sub_skeleton(self, stopwords, hash_provider, size):
        """청크 부분집합의 스켈레톤은 전체 스켈레톤에 포함됨 (엔티티, 관계, 링크)"""
        chunks = [
            _chunk("Alice Smith founded Acme Corp in Paris.", 0),
            _chunk("Bob Jones joined Acme Corp after Alice Smith.", 1),
            _chunk("Zenith Labs signed a contract with Acme Corp.", 2),
            _chunk("Carol White leads Zenith Labs in Berlin.", 3),
        ]

        def summary(skeleton):
            entities = {(e.name, e.type_label): set(e.links) for e in skeleton.entities}
            names = {e.entity_id: (e.name, e.type_label) for e in skeleton.entities}
            relations = {(names[r.source], names[r.target]): set(r.links) for r in skeleton.relations}
            return entities, relations

        full_entities, full_relations = summary(
            kg_index(chunks, MockTripletExtractor(stopwords), hash_provider, EmbeddingStore())
        )
        for subset in itertools.combinations(chunks, size):
            entities, relations = summary(
                kg_index(list(subset), MockTripletExtractor(stopwords), hash_provider, EmbeddingStore())
            )
            assert entities.keys() <= full_entities.keys()
            assert relations.keys() <= full_relations.keys()
            for key, links in entities.items():
                assert links <= full_entities[key]
            for key, links in relations.items():
                assert links <= full_relations[key]


# ----------------------------------------------------------------------
# LLM 추출기
# ----------------------------------------------------------------------

class TestLLMTripletExtractor:
    """엔티티 → 관계 2단계 호출 테스트"""

    def _gateway(self):
        gateway = MagicMock()
        gateway.config.chat_model = "gpt-4o-mini"
        return gateway

    def test_two_pass_calls(self):
        gateway = self._gateway()
        gateway.chat_complete.side_effect = [
            ('("entity"|Acme|ORG|company)\n("entity"|Paris|GEO|city)', {}),
            ('("relationship"|Acme|Paris|based in)', {}),
        ]
        extractor = LLMTripletExtractor(gateway)
        entities, relations = extractor.parse(extractor.run("Acme is based in Paris."))

        assert gateway.chat_complete.call_count == 2
        relation_prompt = gateway.chat_complete.call_args_list[1].args[1]
        assert "ACME, PARIS" in relation_prompt
        assert "Acme is based in Paris." in relation_prompt
        assert len(entities) == 2
        assert relations == [ExtractedRelation("ACME", "PARIS", "based in")]
        assert extractor.name == "llm:gpt-4o-mini"

    def test_no_entities_skips_relation_pass(self):
        gateway = self._gateway()
        gateway.chat_complete.return_value = ("", {})
        LLMTripletExtractor(gateway).run("nothing here")
        assert gateway.chat_complete.call_count == 1


# ----------------------------------------------------------------------
# 게이트웨이를 거친 재시도
# ----------------------------------------------------------------------

ENTITY_REPLY = '("entity"|Acme|ORG|company)\n("entity"|Paris|GEO|city)'
RELATION_REPLY = '("relationship"|Acme|Paris|based in)'


def _chat_response(content):
    return httpx.Response(200, json={
        "id": "chatcmpl-test",
        "object": "chat.completion",
        "created": 0,
        "model": "gpt-4o-mini",
        "choices": [
            {"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}
        ],
        "usage": {"prompt_tokens": 5, "completion_tokens": 5, "total_tokens": 10},
    })


def _http_gateway(replies, requests, cache_path=None):
    def handler(request):
        requests.append(request)
        return _chat_response(replies.pop(0))

    client = httpx.Client(transport=httpx.MockTransport(handler))
    return LLMGateway(
        GatewayConfig(cache_path=cache_path, max_retries=0),
        api_key="test-key",
        http_client=client,
        sleep=lambda _: None,
    )


class TestLLMExtractionRetry:
    """해석 불가 응답 후 재시도가 실제로 모델에 다시 요청하는지 테스트"""

    def test_garbage_then_valid_reaches_model(self):
        requests = []
        gateway = _http_gateway(["garbage output", ENTITY_REPLY, RELATION_REPLY], requests)

        result = extract_chunk(LLMTripletExtractor(gateway), _chunk("Acme is based in Paris."))

        assert len(requests) == 3
        assert not result.failed
        assert [e.name for e in result.entities] == ["ACME", "PARIS"]
        assert result.relations == [ExtractedRelation("ACME", "PARIS", "based in")]

    def test_bad_reply_not_replayed_from_cache_file(self, tmp_path):
        cache_path = str(tmp_path / "responses.jsonl")
        chunk = _chunk("Acme is based in Paris.")
        extract_chunk(
            LLMTripletExtractor(_http_gateway(["garbage output", ENTITY_REPLY, RELATION_REPLY], [], cache_path)),
            chunk,
        )

        offline_requests = []
        gateway = _http_gateway([], offline_requests, cache_path)
        result = extract_chunk(LLMTripletExtractor(gateway), chunk)

        assert offline_requests == []
        assert not result.failed
        assert len(result.entities) == 2

    def test_two_bad_replies_fail_after_two_requests(self):
        requests = []
        issues = IssueLog()
        gateway = _http_gateway(["garbage output", "still garbage"], requests)

        result = extract_chunk(LLMTripletExtractor(gateway), _chunk("Acme is based in Paris."), issues=issues)

        assert len(requests) == 2
        assert result.failed
        assert len(issues.for_stage("extract")) == 1
