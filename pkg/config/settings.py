"""
애플리케이션 설정 모듈

이 모듈은 인덱싱·검색·게이트웨이 전반에서 사용되는 기본값들을 중앙에서 관리합니다.
CLI 플래그의 기본값도 모두 여기서 가져옵니다.
"""

import os

# ============================================================================
# 경로 설정
# ============================================================================

# 프로젝트 루트 (config/ 의 상위 디렉토리)
PROJECT_ROOT: str = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

# 데이터 디렉토리
DATA_DIR: str = os.path.join(PROJECT_ROOT, "data")

# 기본 불용어 파일 (한 줄에 한 단어)
STOPWORDS_PATH: str = os.path.join(DATA_DIR, "stopwords_en.txt")

# 추출 프롬프트 템플릿 디렉토리
PROMPTS_DIR: str = os.path.join(DATA_DIR, "prompts")

# ============================================================================
# 청킹 설정
# ============================================================================

# 입력 청크 길이 ℓ (토큰)
CHUNK_TOKENS: int = 1200

# 재귀 분할 횟수 τ (청크당 2^τ 개의 서브청크)
SPLIT_TIMES: int = 3

# 기본 토크나이저 ("word" 또는 "cl100k_base")
DEFAULT_TOKENIZER: str = "word"

# ============================================================================
# KNN 그래프 / PageRank 설정
# ============================================================================

# KNN 차수 K (K/2 어휘 + K/2 의미)
KNN_K: int = 2

# PageRank 텔레포트 확률 α
PAGERANK_ALPHA: float = 0.15

# PageRank 수렴 허용 오차 (L1)
PAGERANK_TOL: float = 1e-8

# PageRank 최대 반복 횟수
PAGERANK_MAX_ITER: int = 200

# 코어 청크 비율 β
CORE_BETA: float = 0.8

# 코어 청크 선택 방식 ("pagerank" 또는 "uniform")
CORE_MODE: str = "pagerank"

# 기본 랜덤 시드
DEFAULT_SEED: int = 42

# ============================================================================
# 검색 설정
# ============================================================================

# 컨텍스트 토큰 한도 λ
CONTEXT_TOKEN_LIMIT: int = 12000

# 스켈레톤 채널 비율 θ
RETRIEVAL_THETA: float = 0.4

# 시드 엔티티 수
SEED_ENTITY_COUNT: int = 10

# ============================================================================
# 임베딩 설정
# ============================================================================

# 해시 임베딩 차원 (오프라인 테스트용)
HASH_EMBEDDING_DIM: int = 64

# 해시 임베딩 시드
HASH_EMBEDDING_SEED: int = 0

# 원격 임베딩 요청 1회당 최대 텍스트 수
EMBEDDING_BATCH_SIZE: int = 64

# ============================================================================
# OpenAI 호환 게이트웨이 설정
# ============================================================================

# 기본 API 주소 (환경변수 OPENAI_BASE_URL 로 덮어쓸 수 있음)
OPENAI_BASE_URL: str = os.getenv("OPENAI_BASE_URL", "https://api.openai.com/v1")

# API 키를 읽을 환경변수 이름
API_KEY_ENV: str = "OPENAI_API_KEY"

# 기본 채팅 모델
DEFAULT_MODEL: str = "gpt-4o-mini"

# 기본 임베딩 모델
EMBEDDING_MODEL: str = "text-embedding-3-small"

# 최대 동시 요청 수
MAX_CONCURRENT_REQUESTS: int = 30

# 기본 재시도 횟수
MAX_RETRIES: int = 3

# 지수 백오프의 기본 대기 시간 (초)
BASE_BACKOFF_SECONDS: int = 2

# 요청 타임아웃 (초)
REQUEST_TIMEOUT_SECONDS: float = 60.0

# 추출 응답 최대 토큰
EXTRACTION_MAX_TOKENS: int = 2000

# 답변 생성 최대 토큰
ANSWER_MAX_TOKENS: int = 500

# ============================================================================
# 비용 추정 기본값
# ============================================================================

# 청크당 추출 항목 수 (엔티티 + 관계) 사전값
PRIOR_ITEMS_PER_CHUNK: int = 15

# 설명 1개당 토큰 수 사전값
PRIOR_TOKENS_PER_DESCRIPTION: int = 30

# 청크당 추출 출력 토큰 사전값
PRIOR_OUTPUT_TOKENS_PER_CHUNK: int = 600

# 가격표 (1K 토큰당, 통화 단위는 사용자 정의)
PRICE_CHAT_INPUT_PER_1K: float = 0.00015
PRICE_CHAT_OUTPUT_PER_1K: float = 0.0006
PRICE_EMBEDDING_PER_1K: float = 0.00002

# ============================================================================
# 인덱스 저장 형식
# ============================================================================

INDEX_FORMAT_VERSION: int = 1

MANIFEST_FILE: str = "manifest.json"
CHUNKS_FILE: str = "chunks.jsonl"
SUBCHUNKS_FILE: str = "subchunks.jsonl"
SKELETON_NODES_FILE: str = "skeleton_nodes.jsonl"
SKELETON_EDGES_FILE: str = "skeleton_edges.jsonl"
BIPARTITE_EDGES_FILE: str = "bipartite_edges.jsonl"
KEYWORDS_FILE: str = "keywords.jsonl"
KNN_EDGES_FILE: str = "knn_edges.jsonl"
EMBEDDINGS_FILE: str = "embeddings.bin"
EMBEDDINGS_SIDECAR_FILE: str = "embeddings.json"

# 추출 캐시 파일 이름 (인덱스 출력 디렉토리 옆에 생성)
EXTRACTION_CACHE_FILE: str = "extraction_cache.jsonl"

# 게이트웨이 응답 캐시 파일 이름
RESPONSE_CACHE_FILE: str = "response_cache.jsonl"
