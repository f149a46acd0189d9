"""
KET 인덱스 커맨드라인 인터페이스

서브커맨드:
    index        코퍼스로 KET 인덱스를 만들어 저장
    query        저장된 인덱스로 질문에 대한 컨텍스트(+답변) 생성
    eval         QA 데이터셋으로 Coverage / EM / F1 평가
    estimate     빌드 전 인덱싱 비용(kg vs ket) 추정
    graph-stats  KNN 그래프 차수 분포 출력

실행 예시:
    $ python main.py index data/corpus out/index --beta 0.8 --k 2
    $ python main.py index data/musique_dev.jsonl out/musique --dataset-format musique
    $ python main.py query out/index "Who founded the company?" --theta 0.4 --emit-context
    $ python main.py eval out/index data/qa.jsonl --limit 10 --report out/report.json
    $ python main.py estimate --num-chunks 1000 --beta 0.8

종료 코드: 0 성공, 1 실행 실패, 2 설정/인자 오류
기계가 읽을 출력은 stdout (--json), 로그는 stderr 로 나갑니다.
"""

import argparse
import json
import logging
import os
import sys
from typing import Any, Callable, Dict, List, Optional, Tuple

from src.corpus import ChunkingConfig, ChunkingConfigError, load_corpus, load_stopwords
from src.cost_model import CorpusStats, CostModel, compare_variants
from src.embedding import EmbeddingProvider, HashEmbeddingProvider, RemoteEmbeddingProvider, provider_from_description
from src.evalkit import load_dataset, run_eval, save_report
from src.extraction import (
    ExtractionCache,
    LLMTripletExtractor,
    MockTripletExtractor,
    TripletExtractor,
    template_token_counts,
)
from src.gateway import APIKeyNotFoundError, GatewayConfig, LLMGateway, PriceTable, ResponseCache, meter_report
from src.graph import KnnConfig, degree_histogram, degree_histogram_csv
from src.index_store import load_index, save_index
from src.indexer import IndexConfig, index_summary, ket_index
from src.retrieval import RetrievalConfig, RetrievalConfigError, embed_query, generate_answer, retrieve
from src.tokenizer import get_tokenizer

try:
    from config.settings import (
        CHUNK_TOKENS,
        CONTEXT_TOKEN_LIMIT,
        CORE_BETA,
        CORE_MODE,
        DEFAULT_SEED,
        DEFAULT_TOKENIZER,
        EXTRACTION_CACHE_FILE,
        HASH_EMBEDDING_DIM,
        KNN_K,
        PRICE_CHAT_INPUT_PER_1K,
        PRICE_CHAT_OUTPUT_PER_1K,
        PRICE_EMBEDDING_PER_1K,
        PRIOR_ITEMS_PER_CHUNK,
        PRIOR_OUTPUT_TOKENS_PER_CHUNK,
        PRIOR_TOKENS_PER_DESCRIPTION,
        RESPONSE_CACHE_FILE,
        RETRIEVAL_THETA,
        SEED_ENTITY_COUNT,
        SPLIT_TIMES,
    )
except ImportError:
    CHUNK_TOKENS: int = 1200
    CONTEXT_TOKEN_LIMIT: int = 12000
    CORE_BETA: float = 0.8
    CORE_MODE: str = "pagerank"
    DEFAULT_SEED: int = 42
    DEFAULT_TOKENIZER: str = "word"
    EXTRACTION_CACHE_FILE: str = "extraction_cache.jsonl"
    HASH_EMBEDDING_DIM: int = 64
    KNN_K: int = 2
    PRICE_CHAT_INPUT_PER_1K: float = 0.00015
    PRICE_CHAT_OUTPUT_PER_1K: float = 0.0006
    PRICE_EMBEDDING_PER_1K: float = 0.00002
    PRIOR_ITEMS_PER_CHUNK: int = 15
    PRIOR_OUTPUT_TOKENS_PER_CHUNK: int = 600
    PRIOR_TOKENS_PER_DESCRIPTION: int = 30
    RESPONSE_CACHE_FILE: str = "response_cache.jsonl"
    RETRIEVAL_THETA: float = 0.4
    SEED_ENTITY_COUNT: int = 10
    SPLIT_TIMES: int = 3

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2

HASH_EMBEDDER_NAMES = {"text": "hash", "words": "hash-words"}


# ============================================================================
# 커스텀 예외 클래스
# ============================================================================

class CliConfigError(ValueError):
    """인자 조합이나 설정값이 유효하지 않아 부수효과 전에 거부되는 경우 발생하는 예외"""
    pass


# ============================================================================
# 로깅 / 출력
# ============================================================================

def configure_logging(verbose: bool = False, log_file: Optional[str] = None) -> None:
    """stderr 핸들러(+선택적 파일 핸들러)로 로깅을 설정합니다."""
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )


def _emit_json(payload: Any) -> None:
    print(json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True))


def _print_error(message: str) -> None:
    print(f"✗ {message}", file=sys.stderr)


def _print_block(title: str, rows: Dict[str, Any]) -> None:
    print("=" * 60)
    print(title)
    print("=" * 60)
    for key, value in rows.items():
        print(f"  • {key}: {value}")
    print("=" * 60)


# ============================================================================
# 공통 구성 요소
# ============================================================================

def _make_gateway(args: argparse.Namespace, cache_dir: Optional[str] = None) -> LLMGateway:
    """--gateway-config 와 환경변수로 게이트웨이를 만듭니다.

    Raises:
        CliConfigError: 설정 파일 오류
        APIKeyNotFoundError: API 키 없음
    """
    try:
        config = GatewayConfig.from_file(args.gateway_config) if args.gateway_config else GatewayConfig()
    except (OSError, ValueError) as e:
        raise CliConfigError(f"게이트웨이 설정을 읽을 수 없습니다: {e}") from e
    if config.cache_path is None and cache_dir:
        config.cache_path = os.path.join(cache_dir, RESPONSE_CACHE_FILE)
    return LLMGateway(config, cache=ResponseCache(config.cache_path))


def _index_config(args: argparse.Namespace) -> IndexConfig:
    try:
        chunking = ChunkingConfig(
            chunk_tokens=args.chunk_size,
            splits=args.tau,
            stopwords=load_stopwords(args.stopwords),
        )
        cfg = IndexConfig(
            chunking=chunking,
            knn=KnnConfig(k=args.k),
            beta=args.beta,
            core_mode=args.core_mode,
            extractor=args.extractor,
            embedder="remote" if args.embedder == "remote" else HASH_EMBEDDER_NAMES[args.hash_granularity],
            tokenizer=args.tokenizer,
            seed=args.seed,
        )
        return cfg.validate()
    except (ChunkingConfigError, ValueError, FileNotFoundError) as e:
        raise CliConfigError(str(e)) from e


def _retrieval_config(args: argparse.Namespace) -> RetrievalConfig:
    try:
        return RetrievalConfig(limit=args.limit_tokens, theta=args.theta, k_seed=args.k_seed).validate()
    except RetrievalConfigError as e:
        raise CliConfigError(str(e)) from e


def _require_index_dir(path: str) -> None:
    if not os.path.isdir(path):
        raise CliConfigError(f"인덱스 디렉토리가 없습니다: {path}")


def _load_documents(args: argparse.Namespace) -> List[Tuple[str, str]]:
    """index 입력: 코퍼스 경로, 또는 --dataset-format 이면 QA 데이터셋의 단락

    Raises:
        CliConfigError: 입력 경로가 없는 경우
    """
    if not os.path.exists(args.corpus):
        raise CliConfigError(f"코퍼스 경로가 없습니다: {args.corpus}")
    if args.dataset_format:
        _, documents = load_dataset(args.corpus, args.dataset_format)
        return documents
    return load_corpus(args.corpus)


# ============================================================================
# 서브커맨드
# ============================================================================

def cmd_index(args: argparse.Namespace) -> int:
    """코퍼스 → KET 인덱스 → 디스크"""
    cfg = _index_config(args)
    documents = _load_documents(args)
    needs_llm = args.extractor == "llm" and cfg.beta > 0
    out_parent = os.path.dirname(os.path.abspath(args.out))

    gateway = _make_gateway(args, out_parent) if (needs_llm or args.embedder == "remote") else None
    provider: EmbeddingProvider
    if args.embedder == "remote":
        provider = RemoteEmbeddingProvider(gateway)  # type: ignore[arg-type]
    else:
        provider = HashEmbeddingProvider(dim=args.embedding_dim, seed=args.seed, granularity=args.hash_granularity)

    extractor: TripletExtractor
    cache: Optional[ExtractionCache] = None
    map_fn: Optional[Callable[..., List[Any]]] = None
    if needs_llm:
        extractor = LLMTripletExtractor(gateway)  # type: ignore[arg-type]
        cache = ExtractionCache(args.extraction_cache or os.path.join(out_parent, EXTRACTION_CACHE_FILE))
        map_fn = gateway.map_concurrent  # type: ignore[union-attr]
    else:
        if args.extractor == "llm":
            logger.info("β=0: 코어 청크가 없어 LLM 추출을 건너뜁니다.")
        extractor = MockTripletExtractor(cfg.chunking.stopwords)

    index = ket_index(
        documents,
        cfg,
        provider,
        extractor,
        tokenizer=get_tokenizer(args.tokenizer),
        cache=cache,
        map_fn=map_fn,
    )
    save_index(index, args.out)

    summary = index_summary(index)
    summary["out"] = args.out
    if gateway is not None:
        summary["usage"] = gateway.meter.snapshot()
        summary["cost"] = meter_report(gateway.meter)

    if args.json:
        _emit_json(summary)
    else:
        _print_block("✓ KET 인덱스 빌드 완료", {
            "출력": args.out,
            "청크": summary["chunks"],
            "코어 청크": summary["core_chunks"],
            "서브청크": summary["sub_chunks"],
            "엔티티": summary["entities"],
            "관계": summary["relations"],
            "키워드": summary["keywords"],
            "추출 입력 토큰(계측)": summary["metered"]["extraction_input_tokens"],
            "이슈": summary["issues"],
        })
    return EXIT_OK


def cmd_query(args: argparse.Namespace) -> int:
    """인덱스 + 질문 → 컨텍스트 JSON / 답변"""
    _require_index_dir(args.index)
    cfg = _retrieval_config(args)
    index = load_index(args.index)

    remote = str(index.embedding_provider.get("name", "")).startswith("remote:")
    gateway = _make_gateway(args) if (remote or args.generate) else None
    provider = provider_from_description(index.embedding_provider, gateway)

    context = retrieve(index, embed_query(provider, args.question), cfg, args.mode)
    accounting = {
        "total_tokens": context.total_tokens,
        "limit": cfg.limit,
        "entity_relation_tokens": context.tokens_for("entity", "relation"),
        "chunk_tokens": context.tokens_for("chunk"),
        "keyword_chunk_tokens": context.tokens_for("keyword-chunk"),
    }

    result: Dict[str, Any] = {"question": args.question, "mode": args.mode, "tokens": accounting}
    if args.emit_context or args.json:
        result["context"] = context.to_dict()
    if args.generate:
        answer, usage = generate_answer(gateway, context, args.question)  # type: ignore[arg-type]
        result["answer"] = answer
        result["usage"] = usage

    if args.json:
        _emit_json(result)
        return EXIT_OK

    if args.emit_context:
        print(context.to_json())
    else:
        for segment in context.segments:
            print(f"[{segment.channel}] {segment.source_id} ({segment.tokens} tokens)")
    if args.generate:
        print("-" * 60)
        print(f"AI: {result['answer']}")
        print("-" * 60)
    print(
        f"토큰: {accounting['total_tokens']} / {cfg.limit} "
        f"(엔티티+관계 {accounting['entity_relation_tokens']}, "
        f"청크 {accounting['chunk_tokens']}, 키워드 청크 {accounting['keyword_chunk_tokens']})",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    """인덱스 + QA 데이터셋 → 평가 리포트"""
    _require_index_dir(args.index)
    cfg = _retrieval_config(args)
    if args.limit is not None and args.limit < 0:
        raise CliConfigError(f"--limit 는 0 이상이어야 합니다: {args.limit}")

    instances, _ = load_dataset(args.dataset, args.format)
    index = load_index(args.index)
    remote = str(index.embedding_provider.get("name", "")).startswith("remote:")
    gateway = _make_gateway(args) if (remote or args.generate) else None
    provider = provider_from_description(index.embedding_provider, gateway)

    report = run_eval(
        index,
        instances,
        cfg,
        provider,
        generate=args.generate,
        gateway=gateway,
        mode=args.mode,
        limit=args.limit,
    )
    if args.report:
        save_report(report, args.report)

    if args.json:
        _emit_json(report.to_dict())
    else:
        failed = sum(1 for r in report.per_instance if r.error)
        _print_block("📊 평가 결과", {
            "인스턴스": len(report.per_instance),
            "실패": failed,
            **{name: ("N/A" if value is None else f"{value:.4f}") for name, value in report.aggregates.items()},
            "리포트": args.report or "(저장 안 함)",
        })
    return EXIT_OK


def cmd_estimate(args: argparse.Namespace) -> int:
    """닫힌 형태의 kg / ket 인덱싱 비용 비교"""
    if args.prompt_tokens:
        lambda_e, lambda_r = args.prompt_tokens
    else:
        lambda_e, lambda_r = template_token_counts(get_tokenizer(args.tokenizer))

    try:
        model = CostModel(
            lambda_e=lambda_e,
            lambda_r=lambda_r,
            price_input=args.price_in / 1000.0,
            price_embed=args.price_embed / 1000.0,
            price_output=args.price_out / 1000.0,
            items_per_chunk=args.items_per_chunk,
            tokens_per_description=args.tokens_per_description,
            output_tokens_per_chunk=args.output_tokens_per_chunk,
            beta=args.beta,
        ).validate()
        if args.num_chunks < 0 or args.chunk_size < 0:
            raise ValueError(f"청크 수와 청크 길이는 음수일 수 없습니다: {args.num_chunks}, {args.chunk_size}")
    except ValueError as e:
        raise CliConfigError(str(e)) from e

    comparison = compare_variants(CorpusStats(num_chunks=args.num_chunks, chunk_tokens=args.chunk_size), model)
    comparison["lambda"] = {"entity": lambda_e, "relation": lambda_r}

    if args.json:
        _emit_json(comparison)
        return EXIT_OK

    for variant in ("kg", "ket"):
        est = comparison[variant]
        _print_block(f"💰 {variant} 비용 추정", {
            "LLM 입력 토큰": f"{est['llm_tokens']:,.0f}",
            "임베딩 토큰": f"{est['embed_tokens']:,.0f}",
            "출력 토큰": f"{est['output_tokens']:,.0f}",
            "ITC": f"{est['currency']:.6f}",
            "출력 비용": f"{est['output_currency']:.6f}",
        })
    ratio = comparison["ratio"]
    print(f"ket/kg LLM 토큰 비율: {ratio['llm_tokens']}, 비용 비율: {ratio['currency']}")
    return EXIT_OK


def cmd_graph_stats(args: argparse.Namespace) -> int:
    """KNN 그래프 차수 히스토그램 (CSV 또는 JSON)"""
    _require_index_dir(args.index)
    index = load_index(args.index)
    histogram = degree_histogram(index.knn_graph)
    if args.json:
        _emit_json({
            "degree_histogram": {str(d): c for d, c in histogram.items()},
            "nodes": len(index.knn_graph.nodes),
            "edges": index.knn_graph.edge_count(),
            "pagerank": index.pagerank_info,
        })
        return EXIT_OK

    csv_text = degree_histogram_csv(histogram)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(csv_text)
        logger.info(f"차수 분포 저장: {args.out}")
    else:
        sys.stdout.write(csv_text)
    return EXIT_OK


# ============================================================================
# 인자 파서
# ============================================================================

def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="stdout 으로 JSON 출력")
    common.add_argument("--verbose", action="store_true", help="DEBUG 로그")
    common.add_argument("--log-file", default=None, help="로그 파일 경로")
    common.add_argument("--gateway-config", default=None, help="GatewayConfig JSON 파일")
    return common


def _retrieval_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--lambda", dest="limit_tokens", type=float, default=CONTEXT_TOKEN_LIMIT, help="컨텍스트 토큰 한도 λ")
    parser.add_argument("--theta", type=float, default=RETRIEVAL_THETA, help="스켈레톤 채널 비율 θ")
    parser.add_argument("--k-seed", type=int, default=SEED_ENTITY_COUNT, help="시드 엔티티 수")
    parser.add_argument("--mode", choices=["ket", "text", "knn"], default="ket", help="검색 방식")


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(prog="ket-rag", description="KET Graph-RAG 인덱스 빌드 / 검색 / 평가")
    sub = parser.add_subparsers(dest="command", required=True)

    p_index = sub.add_parser("index", parents=[common], help="KET 인덱스 빌드")
    p_index.add_argument("corpus", help=".txt 디렉토리 또는 {id, text} JSON lines 파일")
    p_index.add_argument("out", help="인덱스 출력 디렉토리")
    p_index.add_argument(
        "--dataset-format", choices=["jsonl", "musique", "hotpotqa"], default=None,
        help="corpus 를 QA 데이터셋으로 보고 그 단락들을 인덱싱",
    )
    p_index.add_argument("--chunk-size", type=int, default=CHUNK_TOKENS, help="청크 길이 ℓ")
    p_index.add_argument("--tau", type=int, default=SPLIT_TIMES, help="재귀 분할 횟수 τ")
    p_index.add_argument("--k", type=int, default=KNN_K, help="KNN 차수 K")
    p_index.add_argument("--beta", type=float, default=CORE_BETA, help="코어 청크 비율 β")
    p_index.add_argument("--core-mode", choices=["pagerank", "uniform"], default=CORE_MODE)
    p_index.add_argument("--extractor", choices=["mock", "llm"], default="mock")
    p_index.add_argument("--embedder", choices=["hash", "remote"], default="hash")
    p_index.add_argument("--hash-granularity", choices=["text", "words"], default="text")
    p_index.add_argument("--embedding-dim", type=int, default=HASH_EMBEDDING_DIM)
    p_index.add_argument("--tokenizer", default=DEFAULT_TOKENIZER, help='"word" 또는 "cl100k_base"')
    p_index.add_argument("--stopwords", default=None, help="불용어 파일 (기본: data/stopwords_en.txt)")
    p_index.add_argument("--extraction-cache", default=None, help="추출 캐시 JSON lines 경로")
    p_index.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p_index.set_defaults(handler=cmd_index)

    p_query = sub.add_parser("query", parents=[common], help="질문에 대한 컨텍스트 검색")
    p_query.add_argument("index", help="인덱스 디렉토리")
    p_query.add_argument("question", help="질문")
    _retrieval_flags(p_query)
    p_query.add_argument("--emit-context", action="store_true", help="컨텍스트 JSON 출력")
    p_query.add_argument("--generate", action="store_true", help="LLM 답변 생성")
    p_query.set_defaults(handler=cmd_query)

    p_eval = sub.add_parser("eval", parents=[common], help="QA 데이터셋 평가")
    p_eval.add_argument("index", help="인덱스 디렉토리")
    p_eval.add_argument("dataset", help="QA 데이터셋 파일")
    p_eval.add_argument("--format", choices=["jsonl", "musique", "hotpotqa"], default="jsonl")
    _retrieval_flags(p_eval)
    generation = p_eval.add_mutually_exclusive_group()
    generation.add_argument("--retrieval-only", dest="generate", action="store_false", help="Coverage 만 (기본)")
    generation.add_argument("--generate", dest="generate", action="store_true", help="답변 생성 + EM/F1")
    p_eval.set_defaults(generate=False)
    p_eval.add_argument("--limit", type=int, default=None, help="앞에서부터 N개만 평가")
    p_eval.add_argument("--report", default=None, help="리포트 JSON 저장 경로")
    p_eval.set_defaults(handler=cmd_eval)

    p_est = sub.add_parser("estimate", parents=[common], help="인덱싱 비용 추정")
    p_est.add_argument("--num-chunks", type=int, required=True, help="|𝒯|")
    p_est.add_argument("--chunk-size", type=int, default=CHUNK_TOKENS, help="ℓ")
    p_est.add_argument("--prompt-tokens", type=float, nargs=2, metavar=("LAMBDA_E", "LAMBDA_R"), default=None,
                       help="추출 템플릿 토큰 수 (기본: 내장 템플릿에서 계산)")
    p_est.add_argument("--price-in", type=float, default=PRICE_CHAT_INPUT_PER_1K, help="LLM 입력 1K 토큰당 가격 c_i")
    p_est.add_argument("--price-embed", type=float, default=PRICE_EMBEDDING_PER_1K, help="임베딩 1K 토큰당 가격 c_e")
    p_est.add_argument("--price-out", type=float, default=PRICE_CHAT_OUTPUT_PER_1K, help="LLM 출력 1K 토큰당 가격")
    p_est.add_argument("--beta", type=float, default=CORE_BETA)
    p_est.add_argument("--items-per-chunk", type=float, default=PRIOR_ITEMS_PER_CHUNK)
    p_est.add_argument("--tokens-per-description", type=float, default=PRIOR_TOKENS_PER_DESCRIPTION)
    p_est.add_argument("--output-tokens-per-chunk", type=float, default=PRIOR_OUTPUT_TOKENS_PER_CHUNK)
    p_est.add_argument("--tokenizer", default=DEFAULT_TOKENIZER)
    p_est.set_defaults(handler=cmd_estimate)

    p_stats = sub.add_parser("graph-stats", parents=[common], help="KNN 그래프 차수 분포")
    p_stats.add_argument("index", help="인덱스 디렉토리")
    p_stats.add_argument("--out", default=None, help="CSV 저장 경로 (기본: stdout)")
    p_stats.set_defaults(handler=cmd_graph_stats)

    return parser


# ============================================================================
# 진입점
# ============================================================================

def main(argv: Optional[List[str]] = None) -> int:
    """CLI 진입점

    Returns:
        종료 코드 (0 성공, 1 실패, 2 설정 오류)
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_CONFIG

    configure_logging(args.verbose, args.log_file)
    try:
        return args.handler(args)
    except (CliConfigError, APIKeyNotFoundError) as e:
        logger.error(f"설정 오류: {e}")
        _print_error(f"설정 오류: {e}")
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        logger.info("사용자가 Ctrl+C를 눌렀습니다.")
        return EXIT_FAILURE
    except Exception as e:
        logger.error(f"{args.command} 실패: {e}", exc_info=True)
        _print_error(f"{args.command} 실패: {e}")
        return EXIT_FAILURE


__all__ = ["CliConfigError", "build_parser", "configure_logging", "main"]
