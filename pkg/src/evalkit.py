"""
평가 모듈

QA 데이터셋을 읽고 검색(+생성)을 일괄 실행하여 Coverage / EM / F1 을 계산합니다.

- Coverage: 정규화된 정답이 정규화된 컨텍스트 안에 단어 경계로 나타나면 1
- EM: 정규화된 예측이 정규화된 정답 중 하나와 같으면 1
- F1: 정규화된 단어 가방 사이의 최대 F1

정규화는 추출형 QA 관례(소문자화, 구두점 제거, 관사 a/an/the 제거, 공백 정리)를 따릅니다.
"""

import hashlib
import json
import logging
import os
import re
import string
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Any, Callable, Dict, List, Literal, Optional, Sequence, Tuple

from src.corpus import DatasetFormatError
from src.embedding import EmbeddingProvider
from src.indexer import KetIndex
from src.retrieval import RetrievalConfig, RetrievalMode, embed_query, generate_answer, retrieve

if TYPE_CHECKING:
    from src.gateway import LLMGateway

logger = logging.getLogger(__name__)

DatasetFormat = Literal["jsonl", "musique", "hotpotqa"]

_ARTICLES_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


# ============================================================================
# 데이터 타입
# ============================================================================

@dataclass(frozen=True)
class QaInstance:
    """QA 인스턴스

    Raises:
        DatasetFormatError: 정답이 없거나 빈 문자열이 있는 경우
    """

    instance_id: str
    question: str
    gold_answers: Tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.gold_answers or any(not str(a).strip() for a in self.gold_answers):
            raise DatasetFormatError(f"인스턴스 {self.instance_id}: 정답은 비어 있지 않은 문자열이어야 합니다.")
        if not self.question.strip():
            raise DatasetFormatError(f"인스턴스 {self.instance_id}: 질문이 비어 있습니다.")


@dataclass
class InstanceResult:
    """인스턴스별 평가 결과 (실패 시 error 에 메시지)"""

    instance_id: str
    coverage: Optional[int] = None
    em: Optional[int] = None
    f1: Optional[float] = None
    context_tokens: int = 0
    latency: float = 0.0
    answer: Optional[str] = None
    error: Optional[str] = None


@dataclass
class EvalReport:
    """평가 리포트

    Attributes:
        config: 설정 요약과 그 지문(fingerprint)
        per_instance: 인스턴스별 결과
        aggregates: coverage / em / f1 평균 (값이 없으면 None)
    """

    config: Dict[str, Any]
    per_instance: List[InstanceResult] = field(default_factory=list)
    aggregates: Dict[str, Optional[float]] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config": self.config,
            "per_instance": [asdict(r) for r in self.per_instance],
            "aggregates": dict(self.aggregates),
        }


# ============================================================================
# 지표
# ============================================================================

def normalize_answer(text: str) -> str:
    """소문자화 → 구두점 제거 → 관사 제거 → 공백 정리 (멱등)"""
    text = text.lower().translate(_PUNCT_TABLE)
    text = _ARTICLES_RE.sub(" ", text)
    return " ".join(text.split())


def coverage(context_text: str, gold_answers: Sequence[str]) -> int:
    """정규화된 정답 중 하나가 정규화된 컨텍스트에 단어 경계로 포함되면 1"""
    haystack = f" {normalize_answer(context_text)} "
    for gold in gold_answers:
        needle = normalize_answer(gold)
        if needle and f" {needle} " in haystack:
            return 1
    return 0


def exact_match(prediction: str, gold_answers: Sequence[str]) -> int:
    pred = normalize_answer(prediction)
    return int(any(pred == normalize_answer(g) for g in gold_answers))


def _f1_single(prediction: str, gold: str) -> float:
    pred_tokens = normalize_answer(prediction).split()
    gold_tokens = normalize_answer(gold).split()
    if not pred_tokens or not gold_tokens:
        return float(pred_tokens == gold_tokens)
    common = Counter(pred_tokens) & Counter(gold_tokens)
    overlap = sum(common.values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def f1(prediction: str, gold_answers: Sequence[str]) -> float:
    """정답들에 대한 단어 단위 F1 의 최댓값"""
    return max((_f1_single(prediction, g) for g in gold_answers), default=0.0)


# ============================================================================
# 데이터셋 로더
# ============================================================================

def _read_json_lines(path: str) -> List[Dict[str, Any]]:
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise DatasetFormatError(f"{path}:{line_no} 줄 JSON 오류: {e}") from e
    return rows


class _DocumentPool:
    """(doc_id, text) 수집기. 같은 본문은 한 번만, 같은 제목의 다른 본문은 #n 접미사"""

    def __init__(self) -> None:
        self.documents: List[Tuple[str, str]] = []
        self._texts: set = set()
        self._titles: Dict[str, int] = {}

    def add(self, title: str, text: str) -> None:
        text = text.strip()
        if not text or text in self._texts:
            return
        self._texts.add(text)
        count = self._titles.get(title, 0)
        self._titles[title] = count + 1
        doc_id = title if count == 0 else f"{title}#{count}"
        self.documents.append((doc_id, text))


def _load_internal(path: str, pool: _DocumentPool) -> List[QaInstance]:
    instances = []
    for idx, row in enumerate(_read_json_lines(path)):
        try:
            instances.append(QaInstance(str(row["id"]), str(row["question"]), tuple(str(a) for a in row["answers"])))
        except (KeyError, TypeError) as e:
            raise DatasetFormatError(f"{path}: {idx}번째 레코드에 필드가 없습니다: {e}") from e
        for para in row.get("paragraphs", []) or []:
            pool.add(str(para.get("title", row["id"])), str(para.get("text", "")))
    return instances


def _load_musique(path: str, pool: _DocumentPool) -> List[QaInstance]:
    instances = []
    for idx, row in enumerate(_read_json_lines(path)):
        try:
            answers = [str(row["answer"])] + [str(a) for a in row.get("answer_aliases", []) or []]
            instances.append(QaInstance(str(row["id"]), str(row["question"]), tuple(answers)))
            for para in row.get("paragraphs", []) or []:
                pool.add(str(para.get("title", "")), str(para["paragraph_text"]))
        except (KeyError, TypeError) as e:
            raise DatasetFormatError(f"{path}: MuSiQue {idx}번째 레코드 형식 오류: {e}") from e
    return instances


def _load_hotpotqa(path: str, pool: _DocumentPool) -> List[QaInstance]:
    with open(path, "r", encoding="utf-8") as f:
        try:
            rows = json.load(f)
        except json.JSONDecodeError as e:
            raise DatasetFormatError(f"{path}: HotpotQA JSON 오류: {e}") from e
    if not isinstance(rows, list):
        raise DatasetFormatError(f"{path}: HotpotQA 파일은 JSON 배열이어야 합니다.")
    instances = []
    for idx, row in enumerate(rows):
        try:
            instances.append(QaInstance(str(row["_id"]), str(row["question"]), (str(row["answer"]),)))
            for title, sentences in row.get("context", []) or []:
                pool.add(str(title), "".join(str(s) for s in sentences))
        except (KeyError, TypeError, ValueError) as e:
            raise DatasetFormatError(f"{path}: HotpotQA {idx}번째 레코드 형식 오류: {e}") from e
    return instances


_LOADERS: Dict[str, Callable[[str, _DocumentPool], List[QaInstance]]] = {
    "jsonl": _load_internal,
    "musique": _load_musique,
    "hotpotqa": _load_hotpotqa,
}


def load_dataset(path: str, fmt: DatasetFormat = "jsonl") -> Tuple[List[QaInstance], List[Tuple[str, str]]]:
    """QA 데이터셋과 단락 코퍼스를 읽습니다.

    Args:
        path: 데이터셋 파일
        fmt: "jsonl" ({"id", "question", "answers", "paragraphs"?}), "musique", "hotpotqa"

    Returns:
        (QA 인스턴스 리스트, (doc_id, text) 코퍼스)

    Raises:
        FileNotFoundError: 파일이 없는 경우
        DatasetFormatError: 형식 오류 또는 알 수 없는 형식
    """
    if fmt not in _LOADERS:
        raise DatasetFormatError(f"알 수 없는 데이터셋 형식: {fmt}")
    if not os.path.exists(path):
        raise FileNotFoundError(f"데이터셋 파일이 없습니다: {path}")
    pool = _DocumentPool()
    instances = _LOADERS[fmt](path, pool)
    logger.info(f"데이터셋 로드: {len(instances)}개 질문, {len(pool.documents)}개 단락 ({fmt})")
    return instances, pool.documents


# ============================================================================
# 일괄 평가
# ============================================================================

def config_fingerprint(config: Dict[str, Any]) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _mean(values: Sequence[Optional[float]]) -> Optional[float]:
    present = [float(v) for v in values if v is not None]
    return sum(present) / len(present) if present else None


def aggregate(results: Sequence[InstanceResult]) -> Dict[str, Optional[float]]:
    return {
        "coverage": _mean([r.coverage for r in results]),
        "em": _mean([r.em for r in results]),
        "f1": _mean([r.f1 for r in results]),
    }


def _sequential_map(fn: Callable[[QaInstance], InstanceResult], items: Sequence[QaInstance]) -> List[InstanceResult]:
    return [fn(item) for item in items]


def run_eval(
    index: KetIndex,
    dataset: Sequence[QaInstance],
    cfg: RetrievalConfig,
    provider: EmbeddingProvider,
    generate: bool = False,
    gateway: Optional["LLMGateway"] = None,
    mode: RetrievalMode = "ket",
    limit: Optional[int] = None,
) -> EvalReport:
    """데이터셋 전체에 검색(+생성)을 실행합니다.

    인스턴스별 실패는 결과의 error 필드에 기록되고 배치를 멈추지 않습니다.
    생성 모드에서는 게이트웨이의 동시성 한도 안에서 병렬로 실행되며, 결과 순서는 입력 순서입니다.

    Raises:
        ValueError: 생성 모드인데 게이트웨이가 없는 경우
        RetrievalConfigError: 검색 설정 오류
    """
    cfg.validate()
    if generate and gateway is None:
        raise ValueError("생성 모드에는 게이트웨이가 필요합니다.")
    instances = list(dataset)[:limit] if limit is not None else list(dataset)

    def evaluate(instance: QaInstance) -> InstanceResult:
        result = InstanceResult(instance_id=instance.instance_id)
        started = time.perf_counter()
        try:
            context = retrieve(index, embed_query(provider, instance.question), cfg, mode)
            result.context_tokens = context.total_tokens
            result.coverage = coverage(context.text(), instance.gold_answers)
            if generate:
                answer, _ = generate_answer(gateway, context, instance.question)  # type: ignore[arg-type]
                result.answer = answer
                result.em = exact_match(answer, instance.gold_answers)
                result.f1 = f1(answer, instance.gold_answers)
        except Exception as e:
            logger.error(f"인스턴스 {instance.instance_id} 평가 실패: {e}", exc_info=True)
            result.error = f"{type(e).__name__}: {e}"
        result.latency = time.perf_counter() - started
        return result

    map_fn = gateway.map_concurrent if (generate and gateway is not None) else _sequential_map
    results = map_fn(evaluate, instances)

    config = {
        "mode": mode,
        "generate": generate,
        "retrieval": asdict(cfg),
        "index": dict(index.config),
        "embedding_provider": dict(index.embedding_provider),
        "instances": len(instances),
    }
    config["fingerprint"] = config_fingerprint(config)
    report = EvalReport(config=config, per_instance=list(results), aggregates=aggregate(results))

    failed = sum(1 for r in results if r.error)
    if failed:
        logger.warning(f"평가 중 {failed}개 인스턴스 실패")
    logger.info(f"평가 완료: {len(results)}개, 지표 {report.aggregates}")
    return report


def save_report(report: EvalReport, path: str) -> str:
    """리포트를 JSON 으로 저장하고 경로를 반환합니다."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")
    logger.info(f"평가 리포트 저장: {path}")
    return path
