"""
공용 pytest 픽스처

작은 코퍼스, 해시 임베딩 제공자, 그리고 mock 추출기로 빌드한 인덱스를 제공합니다.
모든 픽스처는 네트워크를 사용하지 않습니다.
"""

import os
import sys

import pytest

# 프로젝트 루트를 sys.path에 추가
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if project_root not in sys.path:
    sys.path.insert(0, project_root)

from src.corpus import ChunkingConfig, load_stopwords
from src.embedding import HashEmbeddingProvider
from src.extraction import MockTripletExtractor
from src.graph import KnnConfig
from src.indexer import IndexConfig, ket_index
from src.tokenizer import WordTokenizer


SAMPLE_DOCUMENTS = [
    (
        "acme.txt",
        "Alice Smith founded Acme Corp in Paris. Acme Corp builds rockets for Mars missions. "
        "Bob Jones joined Acme Corp after the launch. The rockets use liquid fuel.",
    ),
    (
        "zenith.txt",
        "Zenith Labs studies quantum computing. Carol White leads Zenith Labs in Berlin. "
        "Zenith Labs signed a contract with Acme Corp. Quantum computing needs cold rooms.",
    ),
    (
        "river.txt",
        "The river flows through the valley. Farmers grow wheat near the river. "
        "The valley stays quiet during winter. Wheat prices rose last year.",
    ),
]


@pytest.fixture
def stopwords():
    return load_stopwords()


@pytest.fixture
def tokenizer():
    return WordTokenizer()


@pytest.fixture
def hash_provider():
    """단어 단위 해시 임베딩 (어휘 신호가 있는 결정적 제공자)"""
    return HashEmbeddingProvider(dim=32, seed=7, granularity="words")


@pytest.fixture
def sample_documents():
    return list(SAMPLE_DOCUMENTS)


@pytest.fixture
def small_index_config(stopwords):
    return IndexConfig(
        chunking=ChunkingConfig(chunk_tokens=24, splits=1, stopwords=stopwords),
        knn=KnnConfig(k=2),
        beta=1.0,
        seed=3,
    )


@pytest.fixture
def built_index(sample_documents, small_index_config, hash_provider, stopwords):
    """β=1 로 모든 청크를 추출한 작은 KET 인덱스"""
    return ket_index(
        sample_documents,
        small_index_config,
        hash_provider,
        MockTripletExtractor(stopwords),
        tokenizer=WordTokenizer(),
    )
