"""
KET Graph-RAG 인덱스 프로젝트

이 패키지는 KET 인덱스 빌드(청킹, KNN 그래프, 코어 청크 선택, 지식 그래프 스켈레톤,
키워드 이분 그래프), 검색, 평가, 비용 추정 모듈을 포함합니다.
"""

from src.gateway import APIKeyNotFoundError, GatewayError
from src.index_store import IndexCorruptedError, load_index, save_index
from src.indexer import IndexBuildError, IndexConfig, KetIndex, ket_index
from src.retrieval import Context, RetrievalConfig, ket_retrieve

__all__ = [
    "APIKeyNotFoundError",
    "GatewayError",
    "IndexBuildError",
    "IndexConfig",
    "IndexCorruptedError",
    "KetIndex",
    "Context",
    "RetrievalConfig",
    "ket_index",
    "ket_retrieve",
    "load_index",
    "save_index",
]
