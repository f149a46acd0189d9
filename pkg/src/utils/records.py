"""
빌드 이슈 기록 모듈

인덱스 빌드 중 발생하는 "계속 진행 가능한" 문제들(빈 문서, 추출 실패 등)을
로그로 남기는 동시에 레코드로 보관하여 manifest에 기록할 수 있게 합니다.
"""

import logging
import threading
from dataclasses import dataclass, asdict
from typing import Any, Dict, List, Literal, Optional

logger = logging.getLogger(__name__)

IssueLevel = Literal["warning", "error"]


@dataclass(frozen=True)
class BuildIssue:
    """빌드 중 기록된 단일 이슈

    Attributes:
        stage: 이슈가 발생한 단계 (예: "chunk", "split", "extract")
        item: 관련 항목 식별자 (문서 ID, 청크 ID 등)
        message: 사람이 읽을 수 있는 설명
        level: "warning" 또는 "error"
    """

    stage: str
    item: str
    message: str
    level: IssueLevel = "warning"

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class IssueLog:
    """BuildIssue 수집기 (스레드 안전)"""

    def __init__(self) -> None:
        self._issues: List[BuildIssue] = []
        self._lock = threading.Lock()

    def warn(self, stage: str, item: Any, message: str) -> BuildIssue:
        """경고 레코드를 추가하고 로깅합니다."""
        return self._add(BuildIssue(stage, str(item), message, "warning"))

    def error(self, stage: str, item: Any, message: str) -> BuildIssue:
        """에러 레코드를 추가하고 로깅합니다."""
        return self._add(BuildIssue(stage, str(item), message, "error"))

    def _add(self, issue: BuildIssue) -> BuildIssue:
        if issue.level == "error":
            logger.error(f"[{issue.stage}] {issue.item}: {issue.message}")
        else:
            logger.warning(f"[{issue.stage}] {issue.item}: {issue.message}")
        with self._lock:
            self._issues.append(issue)
        return issue

    def extend(self, other: Optional["IssueLog"]) -> None:
        if other is None:
            return
        with self._lock:
            self._issues.extend(other.issues)

    @property
    def issues(self) -> List[BuildIssue]:
        with self._lock:
            return list(self._issues)

    def for_stage(self, stage: str) -> List[BuildIssue]:
        return [i for i in self.issues if i.stage == stage]

    def to_list(self) -> List[Dict[str, Any]]:
        return [i.to_dict() for i in self.issues]

    def __len__(self) -> int:
        return len(self.issues)
