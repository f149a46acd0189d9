"""
인덱싱 비용 추정 모듈

인덱스 빌드 전에 LLM 입력 토큰 비용(ITC)을 닫힌 형태로 계산합니다.

    ITC_kg  = (2 + (λ_e + λ_r)/ℓ)·ℓ·|𝒱_t|·c_i + (ℓ·|𝒱_t| + Σℓ_x)·c_e
    ITC_ket = β·ITC_kg + 3·ℓ·|𝒯|·c_e

Σℓ_x 는 추출 전에는 알 수 없으므로 (청크당 항목 수) × (설명당 토큰 수) × |𝒱_t| 로 추정합니다.
출력 토큰은 ITC에 포함하지 않고 별도로 보고하며, ket 변형은 β 배가 됩니다.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, Literal

try:
    from config.settings import (
        CHUNK_TOKENS,
        CORE_BETA,
        PRIOR_ITEMS_PER_CHUNK,
        PRIOR_OUTPUT_TOKENS_PER_CHUNK,
        PRIOR_TOKENS_PER_DESCRIPTION,
    )
except ImportError:
    CHUNK_TOKENS: int = 1200
    CORE_BETA: float = 0.8
    PRIOR_ITEMS_PER_CHUNK: int = 15
    PRIOR_OUTPUT_TOKENS_PER_CHUNK: int = 600
    PRIOR_TOKENS_PER_DESCRIPTION: int = 30

logger = logging.getLogger(__name__)

Variant = Literal["kg", "ket"]


@dataclass(frozen=True)
class CorpusStats:
    """비용 추정에 필요한 코퍼스 통계

    Attributes:
        num_chunks: |𝒯| (kg 변형에서는 |𝒱_t| 와 같음)
        chunk_tokens: ℓ
    """

    num_chunks: int
    chunk_tokens: int = CHUNK_TOKENS


@dataclass(frozen=True)
class CostModel:
    """비용 모델 파라미터 (가격은 토큰당)

    Attributes:
        lambda_e: 엔티티 추출 템플릿 토큰 수 λ_e
        lambda_r: 관계 추출 템플릿 토큰 수 λ_r
        price_input: LLM 입력 토큰당 가격 c_i
        price_embed: 임베딩 토큰당 가격 c_e
        price_output: LLM 출력 토큰당 가격
        items_per_chunk: 청크당 추출 항목 수 사전값
        tokens_per_description: 설명당 토큰 수 사전값
        output_tokens_per_chunk: 청크당 추출 출력 토큰 사전값
        beta: 코어 청크 비율 β
    """

    lambda_e: float = 0.0
    lambda_r: float = 0.0
    price_input: float = 0.0
    price_embed: float = 0.0
    price_output: float = 0.0
    items_per_chunk: float = PRIOR_ITEMS_PER_CHUNK
    tokens_per_description: float = PRIOR_TOKENS_PER_DESCRIPTION
    output_tokens_per_chunk: float = PRIOR_OUTPUT_TOKENS_PER_CHUNK
    beta: float = CORE_BETA

    def validate(self) -> "CostModel":
        """
        Raises:
            ValueError: 음수 파라미터가 있거나 β가 [0, 1] 밖인 경우
        """
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"비용 모델 파라미터는 음수일 수 없습니다: {name}={value}")
        if self.beta > 1:
            raise ValueError(f"β는 [0, 1] 범위여야 합니다: {self.beta}")
        return self


@dataclass(frozen=True)
class CostEstimate:
    """비용 추정 결과

    Attributes:
        variant: "kg" 또는 "ket"
        llm_tokens: LLM 입력 토큰
        embed_tokens: 임베딩 토큰
        output_tokens: LLM 출력 토큰 (사전값 기반)
        currency: ITC (입력 + 임베딩 비용)
        output_currency: 출력 토큰 비용
    """

    variant: str
    llm_tokens: float
    embed_tokens: float
    output_tokens: float
    currency: float
    output_currency: float

    @property
    def total_currency(self) -> float:
        return self.currency + self.output_currency

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["total_currency"] = self.total_currency
        return data


def estimate_cost(stats: CorpusStats, model: CostModel, variant: Variant = "ket") -> CostEstimate:
    """닫힌 형태의 인덱싱 비용을 계산합니다.

    Args:
        stats: |𝒯| 와 ℓ
        model: 비용 모델
        variant: "kg" (전체 추출) 또는 "ket" (β 비율 추출 + 다중 입도 텍스트 임베딩)

    Raises:
        ValueError: 음수 입력 또는 알 수 없는 변형
    """
    model.validate()
    if stats.num_chunks < 0 or stats.chunk_tokens < 0:
        raise ValueError(f"코퍼스 통계는 음수일 수 없습니다: {stats}")
    if variant not in ("kg", "ket"):
        raise ValueError(f"알 수 없는 변형: {variant}")

    ell = float(stats.chunk_tokens)
    n = float(stats.num_chunks)

    kg_llm = 2.0 * ell * n + (model.lambda_e + model.lambda_r) * n
    sum_lx = model.items_per_chunk * model.tokens_per_description * n
    kg_embed = ell * n + sum_lx
    kg_output = model.output_tokens_per_chunk * n

    if variant == "kg":
        llm, embed, output = kg_llm, kg_embed, kg_output
        currency = kg_llm * model.price_input + kg_embed * model.price_embed
    else:
        text_embed = 3.0 * ell * n
        llm = model.beta * kg_llm
        embed = model.beta * kg_embed + text_embed
        output = model.beta * kg_output
        currency = model.beta * (kg_llm * model.price_input + kg_embed * model.price_embed) + text_embed * model.price_embed

    estimate = CostEstimate(
        variant=variant,
        llm_tokens=llm,
        embed_tokens=embed,
        output_tokens=output,
        currency=currency,
        output_currency=output * model.price_output,
    )
    logger.debug(f"비용 추정 ({variant}): {estimate}")
    return estimate


def compare_variants(stats: CorpusStats, model: CostModel) -> Dict[str, Any]:
    """kg / ket 추정치와 그 비율"""
    kg = estimate_cost(stats, model, "kg")
    ket = estimate_cost(stats, model, "ket")

    def ratio(a: float, b: float) -> Any:
        return a / b if b else None

    return {
        "kg": kg.to_dict(),
        "ket": ket.to_dict(),
        "ratio": {
            "llm_tokens": ratio(ket.llm_tokens, kg.llm_tokens),
            "currency": ratio(ket.currency, kg.currency),
        },
    }
