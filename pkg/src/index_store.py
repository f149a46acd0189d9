"""
인덱스 저장/로드 모듈

인덱스 디렉토리 형식:
    manifest.json            설정, 토크나이저, 임베딩 제공자, 코어 청크, 이슈, 파일 해시
    chunks.jsonl             청크 테이블
    subchunks.jsonl          서브청크 테이블
    skeleton_nodes.jsonl     엔티티 (+ 서브청크 링크)
    skeleton_edges.jsonl     관계 (+ 서브청크 링크)
    bipartite_edges.jsonl    (keyword, sub_id) 엣지
    keywords.jsonl           키워드 노드 설명
    knn_edges.jsonl          KNN 제안 엣지
    embeddings.bin / embeddings.json   임베딩 (리틀엔디안 float32 + 사이드카)

저장은 임시 디렉토리에 모두 쓴 뒤 교체하므로 실패 시 부분 출력이 남지 않습니다.
manifest 에는 시각 정보를 넣지 않아 같은 입력이면 바이트 단위로 같은 디렉토리가 됩니다.
"""

import hashlib
import json
import logging
import os
import shutil
import tempfile
from typing import Any, Dict, Iterable, List, Optional

from src.bipartite import from_records as bipartite_from_records
from src.bipartite import keyword_records
from src.corpus import Chunk, SubChunk
from src.embedding import EmbeddingStore
from src.extraction import Entity, Relation, SkeletonGraph
from src.graph import KnnGraph
from src.indexer import REWIRING_RULE, KetIndex
from src.tokenizer import Tokenizer, TokenizerUnavailableError, get_tokenizer

try:
    from config.settings import (
        BIPARTITE_EDGES_FILE,
        CHUNKS_FILE,
        EMBEDDINGS_FILE,
        EMBEDDINGS_SIDECAR_FILE,
        INDEX_FORMAT_VERSION,
        KEYWORDS_FILE,
        KNN_EDGES_FILE,
        MANIFEST_FILE,
        SKELETON_EDGES_FILE,
        SKELETON_NODES_FILE,
        SUBCHUNKS_FILE,
    )
except ImportError:
    BIPARTITE_EDGES_FILE: str = "bipartite_edges.jsonl"
    CHUNKS_FILE: str = "chunks.jsonl"
    EMBEDDINGS_FILE: str = "embeddings.bin"
    EMBEDDINGS_SIDECAR_FILE: str = "embeddings.json"
    INDEX_FORMAT_VERSION: int = 1
    KEYWORDS_FILE: str = "keywords.jsonl"
    KNN_EDGES_FILE: str = "knn_edges.jsonl"
    MANIFEST_FILE: str = "manifest.json"
    SKELETON_EDGES_FILE: str = "skeleton_edges.jsonl"
    SKELETON_NODES_FILE: str = "skeleton_nodes.jsonl"
    SUBCHUNKS_FILE: str = "subchunks.jsonl"

logger = logging.getLogger(__name__)

PAYLOAD_FILES = (
    CHUNKS_FILE,
    SUBCHUNKS_FILE,
    SKELETON_NODES_FILE,
    SKELETON_EDGES_FILE,
    BIPARTITE_EDGES_FILE,
    KEYWORDS_FILE,
    KNN_EDGES_FILE,
    EMBEDDINGS_FILE,
    EMBEDDINGS_SIDECAR_FILE,
)


# ============================================================================
# 커스텀 예외 클래스
# ============================================================================

class IndexCorruptedError(IOError):
    """인덱스 파일이 없거나 잘렸거나 manifest 해시와 맞지 않는 경우 발생하는 예외"""
    pass


class UnsupportedIndexVersionError(IOError):
    """manifest 의 형식 버전을 이 코드가 지원하지 않는 경우 발생하는 예외"""
    pass


class TokenizerMismatchError(IOError):
    """인덱스가 빌드된 토크나이저를 사용할 수 없는 경우 발생하는 예외

    Attributes:
        required: 인덱스가 요구하는 토크나이저 이름
    """

    def __init__(self, message: str, required: str) -> None:
        super().__init__(message)
        self.required = required


# ============================================================================
# 헬퍼
# ============================================================================

def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def _write_jsonl(path: str, rows: Iterable[Dict[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def _read_jsonl(path: str) -> List[Dict[str, Any]]:
    rows: List[Dict[str, Any]] = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                rows.append(json.loads(line))
    return rows


# ============================================================================
# 저장
# ============================================================================

def _write_payload(index: KetIndex, directory: str) -> None:
    _write_jsonl(os.path.join(directory, CHUNKS_FILE), (
        {"chunk_id": c.chunk_id, "doc_id": c.doc_id, "text": c.text, "token_count": c.token_count}
        for c in index.chunks
    ))
    _write_jsonl(os.path.join(directory, SUBCHUNKS_FILE), (
        {
            "sub_id": s.sub_id, "parent": s.parent, "split_index": s.split_index,
            "text": s.text, "token_count": s.token_count,
        }
        for s in index.sub_chunks
    ))
    _write_jsonl(os.path.join(directory, SKELETON_NODES_FILE), (
        {
            "entity_id": e.entity_id, "name": e.name, "type": e.type_label,
            "description": e.description, "description_tokens": e.description_tokens, "links": e.links,
        }
        for e in index.skeleton.entities
    ))
    _write_jsonl(os.path.join(directory, SKELETON_EDGES_FILE), (
        {
            "relation_id": r.relation_id, "source": r.source, "target": r.target,
            "description": r.description, "description_tokens": r.description_tokens, "links": r.links,
        }
        for r in index.skeleton.relations
    ))
    _write_jsonl(os.path.join(directory, BIPARTITE_EDGES_FILE), (
        {"keyword": k, "sub_id": s} for k, s in index.bipartite.edges()
    ))
    _write_jsonl(os.path.join(directory, KEYWORDS_FILE), keyword_records(index.bipartite))
    _write_jsonl(os.path.join(directory, KNN_EDGES_FILE), index.knn_graph.to_records())
    index.store.save(directory)


def build_manifest(index: KetIndex, file_hashes: Dict[str, str]) -> Dict[str, Any]:
    """manifest.json 내용을 만듭니다."""
    return {
        "format_version": INDEX_FORMAT_VERSION,
        "config": index.config,
        "tokenizer": index.tokenizer_name,
        "embedding_provider": index.embedding_provider,
        "core_chunks": index.core_chunks,
        "pagerank": index.pagerank_info,
        "rewiring": REWIRING_RULE,
        "skeleton_link_level": index.skeleton.link_level,
        "counts": {
            "chunks": len(index.chunks),
            "sub_chunks": len(index.sub_chunks),
            "entities": len(index.skeleton.entities),
            "relations": len(index.skeleton.relations),
            "keywords": len(index.bipartite.keywords),
            "embeddings": len(index.store),
        },
        "metered": index.metered,
        "issues": index.issues,
        "files": file_hashes,
    }


def save_index(index: KetIndex, path: str) -> str:
    """인덱스를 디렉토리로 저장합니다.

    Args:
        index: 저장할 인덱스
        path: 출력 디렉토리 (있으면 교체됨)

    Returns:
        저장된 디렉토리 경로

    Raises:
        OSError: 쓰기 실패 (임시 디렉토리는 정리됨)
    """
    target = os.path.abspath(path)
    parent = os.path.dirname(target)
    os.makedirs(parent, exist_ok=True)
    staging = tempfile.mkdtemp(prefix=".ket-index-", dir=parent)

    try:
        _write_payload(index, staging)
        hashes = {name: _sha256(os.path.join(staging, name)) for name in PAYLOAD_FILES}
        manifest = build_manifest(index, hashes)
        with open(os.path.join(staging, MANIFEST_FILE), "w", encoding="utf-8", newline="\n") as f:
            json.dump(manifest, f, ensure_ascii=False, indent=2, sort_keys=True)
            f.write("\n")

        if os.path.exists(target):
            shutil.rmtree(target)
        os.replace(staging, target)
    except Exception:
        shutil.rmtree(staging, ignore_errors=True)
        logger.error(f"인덱스 저장 실패: {target}", exc_info=True)
        raise

    logger.info(f"인덱스 저장 완료: {target}")
    return target


# ============================================================================
# 로드
# ============================================================================

def read_manifest(path: str) -> Dict[str, Any]:
    """manifest.json 을 읽고 형식 버전을 확인합니다.

    Raises:
        IndexCorruptedError: manifest 가 없거나 JSON 이 아닌 경우
        UnsupportedIndexVersionError: 형식 버전이 다른 경우
    """
    manifest_path = os.path.join(path, MANIFEST_FILE)
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except FileNotFoundError as e:
        raise IndexCorruptedError(f"manifest 파일이 없습니다: {manifest_path}") from e
    except json.JSONDecodeError as e:
        raise IndexCorruptedError(f"manifest 형식 오류: {e}") from e

    version = manifest.get("format_version")
    if version != INDEX_FORMAT_VERSION:
        raise UnsupportedIndexVersionError(
            f"지원하지 않는 인덱스 형식 버전: {version} (지원: {INDEX_FORMAT_VERSION})"
        )
    return manifest


def _resolve_tokenizer(manifest: Dict[str, Any], tokenizer: Optional[Tokenizer]) -> Tokenizer:
    required = str(manifest.get("tokenizer", "word"))
    if tokenizer is not None:
        if tokenizer.name != required:
            raise TokenizerMismatchError(
                f"이 인덱스는 토크나이저 '{required}' 로 빌드되었습니다 (제공: '{tokenizer.name}')",
                required=required,
            )
        return tokenizer
    try:
        return get_tokenizer(required)
    except TokenizerUnavailableError as e:
        raise TokenizerMismatchError(
            f"이 인덱스에 필요한 토크나이저 '{required}' 를 사용할 수 없습니다: {e}", required=required
        ) from e


def load_index(path: str, tokenizer: Optional[Tokenizer] = None) -> KetIndex:
    """저장된 인덱스를 읽습니다.

    모든 파일의 해시를 manifest 와 대조한 뒤에만 내용을 해석하므로
    손상된 인덱스의 일부가 반환되는 일은 없습니다.

    Args:
        path: 인덱스 디렉토리
        tokenizer: 사용할 토크나이저 (None이면 manifest 의 이름으로 생성)

    Raises:
        IndexCorruptedError: 파일 누락, 해시 불일치, 해석 오류
        UnsupportedIndexVersionError: 형식 버전 불일치
        TokenizerMismatchError: 필요한 토크나이저를 쓸 수 없는 경우
    """
    if not os.path.isdir(path):
        raise IndexCorruptedError(f"인덱스 디렉토리가 없습니다: {path}")
    manifest = read_manifest(path)

    expected = manifest.get("files", {})
    for name in PAYLOAD_FILES:
        file_path = os.path.join(path, name)
        if not os.path.exists(file_path):
            raise IndexCorruptedError(f"인덱스 파일이 없습니다: {name}")
        if expected.get(name) != _sha256(file_path):
            raise IndexCorruptedError(f"해시 불일치: {name}")

    resolved = _resolve_tokenizer(manifest, tokenizer)

    try:
        chunks = [
            Chunk(int(r["chunk_id"]), str(r["doc_id"]), r["text"], int(r["token_count"]))
            for r in _read_jsonl(os.path.join(path, CHUNKS_FILE))
        ]
        subs = [
            SubChunk(int(r["sub_id"]), int(r["parent"]), int(r["split_index"]), r["text"], int(r["token_count"]))
            for r in _read_jsonl(os.path.join(path, SUBCHUNKS_FILE))
        ]
        skeleton = SkeletonGraph(
            entities=[
                Entity(
                    int(r["entity_id"]), r["name"], r["type"], r["description"],
                    int(r["description_tokens"]), [int(x) for x in r["links"]],
                )
                for r in _read_jsonl(os.path.join(path, SKELETON_NODES_FILE))
            ],
            relations=[
                Relation(
                    int(r["relation_id"]), int(r["source"]), int(r["target"]), r["description"],
                    int(r["description_tokens"]), [int(x) for x in r["links"]],
                )
                for r in _read_jsonl(os.path.join(path, SKELETON_EDGES_FILE))
            ],
            link_level=str(manifest.get("skeleton_link_level", "sub")),
        )
        bipartite = bipartite_from_records(
            (s.sub_id for s in subs),
            _read_jsonl(os.path.join(path, KEYWORDS_FILE)),
            _read_jsonl(os.path.join(path, BIPARTITE_EDGES_FILE)),
        )
        knn_graph = KnnGraph.from_records(
            (c.chunk_id for c in chunks), _read_jsonl(os.path.join(path, KNN_EDGES_FILE))
        )
        store = EmbeddingStore.load(path)
    except (KeyError, TypeError, ValueError) as e:
        raise IndexCorruptedError(f"인덱스 내용을 해석할 수 없습니다: {e}") from e

    index = KetIndex(
        config=manifest.get("config", {}),
        chunks=chunks,
        sub_chunks=subs,
        skeleton=skeleton,
        bipartite=bipartite,
        knn_graph=knn_graph,
        core_chunks=[int(c) for c in manifest.get("core_chunks", [])],
        store=store,
        embedding_provider=manifest.get("embedding_provider", {}),
        pagerank_info=manifest.get("pagerank", {}),
        metered=manifest.get("metered", {}),
        issues=manifest.get("issues", []),
        tokenizer=resolved,
    )
    logger.info(f"인덱스 로드 완료: {path} (서브청크 {len(subs)}개, 엔티티 {len(skeleton.entities)}개)")
    return index
