"""
프롬프트 템플릿 설정 모듈

이 모듈은 LLM 호출에 사용되는 시스템 메시지와 프롬프트 템플릿을 정의합니다.

- 엔티티/관계 추출 템플릿은 data/prompts/ 아래 텍스트 파일로 관리되며
  `{input_text}` (관계 템플릿은 `{entity_list}` 도 포함) 자리표시자를 가집니다.
- 답변 생성 템플릿은 `{context}` 와 `{question}` 자리표시자를 가집니다.
"""

import os
from typing import Dict, Literal

try:
    from config.settings import PROMPTS_DIR
except ImportError:
    PROMPTS_DIR: str = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data", "prompts")

# ============================================================================
# 추출 프롬프트
# ============================================================================

ExtractionPass = Literal["entity", "relation"]

EXTRACTION_TEMPLATE_FILES: Dict[str, str] = {
    "entity": "entity_extraction.txt",
    "relation": "relation_extraction.txt",
}

EXTRACTION_SYSTEM_MESSAGE: str = (
    "You are an information extraction system that builds a knowledge graph from text. "
    "Follow the output format exactly and use only information stated in the text."
)

# 레코드 구분자 (템플릿 출력 형식과 일치해야 함)
RECORD_DELIMITER: str = "|"


def load_extraction_template(kind: ExtractionPass, prompts_dir: str = PROMPTS_DIR) -> str:
    """추출 템플릿 파일을 읽습니다.

    Args:
        kind: "entity" 또는 "relation"
        prompts_dir: 템플릿 디렉토리

    Raises:
        FileNotFoundError: 템플릿 파일이 없는 경우
        ValueError: `{input_text}` 자리표시자가 없는 경우
    """
    path = os.path.join(prompts_dir, EXTRACTION_TEMPLATE_FILES[kind])
    with open(path, "r", encoding="utf-8") as f:
        template = f.read()
    if "{input_text}" not in template:
        raise ValueError(f"템플릿에 {{input_text}} 자리표시자가 없습니다: {path}")
    return template


def render_template(template: str, **slots: str) -> str:
    """`{name}` 자리표시자를 치환합니다.

    str.format 과 달리 템플릿 안의 다른 중괄호는 건드리지 않습니다.
    """
    rendered = template
    for name, value in slots.items():
        rendered = rendered.replace("{" + name + "}", value)
    return rendered


# ============================================================================
# 답변 생성 프롬프트
# ============================================================================

ANSWER_SYSTEM_MESSAGE: str = (
    "You answer questions using only the provided context. "
    "If the context does not contain the answer, say that you don't know."
)

ANSWER_PROMPT_TEMPLATE: str = """---Context---
{context}

---Question---
{question}

Answer the question as briefly as possible (a short phrase, not a sentence), based solely on the context above.
Answer:"""

# 컨텍스트 채널별 섹션 제목 (직렬화 순서와 무관하게 라벨만 제공)
CONTEXT_SECTION_TITLES: Dict[str, str] = {
    "entity": "Entities",
    "relation": "Relationships",
    "chunk": "Sources",
    "keyword-chunk": "Keyword Sources",
}
