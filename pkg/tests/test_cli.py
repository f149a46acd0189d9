"""
CLI 테스트

main(argv) 를 직접 호출하여 서브커맨드 출력과 종료 코드(0/1/2)를 확인합니다.
네트워크는 사용하지 않습니다 (mock 추출기 + 해시 임베딩).
"""

import json
import logging
import os
from unittest.mock import patch

import pytest

from src.cli import EXIT_CONFIG, EXIT_FAILURE, EXIT_OK, main
from tests.conftest import SAMPLE_DOCUMENTS

INDEX_FLAGS = ["--chunk-size", "24", "--tau", "1", "--hash-granularity", "words", "--embedding-dim", "32"]


@pytest.fixture(autouse=True)
def restore_logging():
    """main() 이 바꾼 루트 로거 핸들러를 테스트 후 되돌림"""
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    for handler in root.handlers[:]:
        if handler not in handlers:
            root.removeHandler(handler)
            handler.close()
    for handler in handlers:
        if handler not in root.handlers:
            root.addHandler(handler)
    root.setLevel(level)


@pytest.fixture
def corpus_dir(tmp_path):
    directory = tmp_path / "corpus"
    directory.mkdir()
    for name, text in SAMPLE_DOCUMENTS:
        (directory / name).write_text(text, encoding="utf-8")
    return str(directory)


@pytest.fixture
def index_dir(corpus_dir, tmp_path, capsys):
    out = str(tmp_path / "index")
    assert main(["index", corpus_dir, out, "--beta", "1.0", *INDEX_FLAGS]) == EXIT_OK
    capsys.readouterr()
    return out


# ----------------------------------------------------------------------
# index
# ----------------------------------------------------------------------

class TestIndexCommand:
    """index 서브커맨드 테스트"""

    def test_json_summary(self, corpus_dir, tmp_path, capsys):
        out = str(tmp_path / "index")
        code = main(["index", corpus_dir, out, "--beta", "0.5", "--json", *INDEX_FLAGS])

        assert code == EXIT_OK
        summary = json.loads(capsys.readouterr().out)
        assert summary["out"] == out
        assert summary["chunks"] > 0
        assert summary["core_chunks"] == -(-summary["chunks"] // 2)
        assert os.path.exists(os.path.join(out, "manifest.json"))

    def test_human_summary(self, corpus_dir, tmp_path, capsys):
        code = main(["index", corpus_dir, str(tmp_path / "index"), *INDEX_FLAGS])
        assert code == EXIT_OK
        assert "✓ KET 인덱스 빌드 완료" in capsys.readouterr().out

    def test_llm_extractor_with_zero_beta_needs_no_key(self, corpus_dir, tmp_path):
        with patch.dict(os.environ, {"OPENAI_API_KEY": ""}):
            code = main(["index", corpus_dir, str(tmp_path / "index"), "--extractor", "llm", "--beta", "0", *INDEX_FLAGS])
        assert code == EXIT_OK

    def test_llm_extractor_without_key_is_config_error(self, corpus_dir, tmp_path, capsys):
        with patch.dict(os.environ, {"OPENAI_API_KEY": ""}):
            code = main(["index", corpus_dir, str(tmp_path / "index"), "--extractor", "llm", "--beta", "0.5", *INDEX_FLAGS])
        assert code == EXIT_CONFIG
        assert "✗" in capsys.readouterr().err
        assert not os.path.exists(tmp_path / "index")

    def test_invalid_chunking_is_config_error(self, corpus_dir, tmp_path):
        code = main(["index", corpus_dir, str(tmp_path / "index"), "--chunk-size", "4", "--tau", "3"])
        assert code == EXIT_CONFIG

    def test_missing_corpus_is_config_error(self, tmp_path, capsys):
        code = main(["index", str(tmp_path / "missing"), str(tmp_path / "index"), *INDEX_FLAGS])
        assert code == EXIT_CONFIG
        assert "missing" in capsys.readouterr().err
        assert not os.path.exists(tmp_path / "index")

    def test_musique_paragraphs_indexed_then_evaluated(self, tmp_path, capsys):
        """--dataset-format musique: 데이터셋 단락으로 인덱스를 만들고 같은 파일로 평가"""
        rows = [
            {
                "id": "2hop_1", "question": "Who founded Acme Corp?", "answer": "Alice Smith",
                "paragraphs": [
                    {"idx": i, "title": name, "paragraph_text": text, "is_supporting": i == 0}
                    for i, (name, text) in enumerate(SAMPLE_DOCUMENTS)
                ],
            },
            {
                "id": "2hop_2", "question": "Where do farmers grow wheat?", "answer": "near the river",
                "paragraphs": [{"idx": 0, "title": "river.txt", "paragraph_text": SAMPLE_DOCUMENTS[2][1]}],
            },
        ]
        dataset = tmp_path / "musique.jsonl"
        dataset.write_text("".join(json.dumps(row) + "\n" for row in rows), encoding="utf-8")
        out = str(tmp_path / "index")

        code = main(["index", str(dataset), out, "--dataset-format", "musique", "--beta", "1.0", "--json", *INDEX_FLAGS])

        assert code == EXIT_OK
        summary = json.loads(capsys.readouterr().out)
        assert summary["chunks"] > 0
        assert summary["entities"] > 0

        code = main(["eval", out, str(dataset), "--format", "musique", "--lambda", "300", "--json"])

        assert code == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert len(report["per_instance"]) == 2

    def test_qa_file_without_dataset_format_is_failure(self, tmp_path):
        """--dataset-format 없이 QA 파일을 주면 {id, text} 코퍼스로 읽다가 실패"""
        dataset = tmp_path / "musique.jsonl"
        dataset.write_text(json.dumps({"id": "q", "question": "Q?", "answer": "A"}) + "\n", encoding="utf-8")
        assert main(["index", str(dataset), str(tmp_path / "index"), *INDEX_FLAGS]) == EXIT_FAILURE


# ----------------------------------------------------------------------
# query
# ----------------------------------------------------------------------

class TestQueryCommand:
    """query 서브커맨드 테스트"""

    def test_json_context_within_budget(self, index_dir, capsys):
        code = main(["query", index_dir, "Who founded Acme Corp?", "--lambda", "120", "--json"])

        assert code == EXIT_OK
        result = json.loads(capsys.readouterr().out)
        assert result["tokens"]["total_tokens"] <= 120
        assert result["tokens"]["total_tokens"] == result["context"]["total_tokens"]
        assert result["mode"] == "ket"

    def test_emit_context_and_accounting_on_stderr(self, index_dir, capsys):
        code = main(["query", index_dir, "Where do farmers grow wheat?", "--lambda", "80", "--emit-context"])

        assert code == EXIT_OK
        captured = capsys.readouterr()
        assert "segments" in json.loads(captured.out)
        assert "토큰:" in captured.err

    @pytest.mark.parametrize("mode", ["text", "knn"])
    def test_baseline_modes(self, index_dir, capsys, mode):
        code = main(["query", index_dir, "Zenith Labs", "--mode", mode, "--lambda", "60", "--json"])
        assert code == EXIT_OK
        segments = json.loads(capsys.readouterr().out)["context"]["segments"]
        assert all(s["source_id"].startswith("chunk:") for s in segments)

    def test_missing_index_is_config_error(self, tmp_path, capsys):
        code = main(["query", str(tmp_path / "nope"), "question"])
        assert code == EXIT_CONFIG
        assert "✗" in capsys.readouterr().err

    def test_invalid_theta_is_config_error(self, index_dir):
        assert main(["query", index_dir, "question", "--theta", "1.5"]) == EXIT_CONFIG

    def test_corrupted_index_is_failure(self, index_dir):
        with open(os.path.join(index_dir, "chunks.jsonl"), "a", encoding="utf-8") as f:
            f.write("\n{}\n")
        assert main(["query", index_dir, "question"]) == EXIT_FAILURE


# ----------------------------------------------------------------------
# eval / estimate / graph-stats
# ----------------------------------------------------------------------

class TestEvalCommand:
    """eval 서브커맨드 테스트"""

    def test_retrieval_only_report(self, index_dir, tmp_path, capsys):
        dataset = tmp_path / "qa.jsonl"
        dataset.write_text(
            json.dumps({"id": "q1", "question": "Who founded Acme Corp?", "answers": ["Alice Smith"]}) + "\n"
            + json.dumps({"id": "q2", "question": "Which lab is in Berlin?", "answers": ["Zenith Labs"]}) + "\n",
            encoding="utf-8",
        )
        report_path = str(tmp_path / "report.json")

        code = main(["eval", index_dir, str(dataset), "--lambda", "300", "--report", report_path, "--json"])

        assert code == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert len(report["per_instance"]) == 2
        assert report["aggregates"]["em"] is None
        assert os.path.exists(report_path)

    def test_generate_and_retrieval_only_are_exclusive(self, index_dir, tmp_path):
        code = main(["eval", index_dir, str(tmp_path / "qa.jsonl"), "--generate", "--retrieval-only"])
        assert code == EXIT_CONFIG

    def test_negative_limit(self, index_dir, tmp_path):
        assert main(["eval", index_dir, str(tmp_path / "qa.jsonl"), "--limit", "-1"]) == EXIT_CONFIG


class TestEstimateCommand:
    """estimate 서브커맨드 테스트"""

    def test_json_comparison(self, capsys):
        code = main(["estimate", "--num-chunks", "100", "--prompt-tokens", "300", "400", "--beta", "0.8", "--json"])

        assert code == EXIT_OK
        result = json.loads(capsys.readouterr().out)
        assert result["kg"]["llm_tokens"] == pytest.approx((2 * 1200 + 700) * 100)
        assert result["ratio"]["llm_tokens"] == pytest.approx(0.8)
        assert result["lambda"] == {"entity": 300, "relation": 400}

    def test_default_prompt_tokens_from_templates(self, capsys):
        assert main(["estimate", "--num-chunks", "10", "--json"]) == EXIT_OK
        result = json.loads(capsys.readouterr().out)
        assert result["lambda"]["entity"] > 0

    def test_negative_chunks_is_config_error(self):
        assert main(["estimate", "--num-chunks", "-1"]) == EXIT_CONFIG

    def test_missing_required_flag(self):
        assert main(["estimate"]) == EXIT_CONFIG


class TestGraphStatsCommand:
    """graph-stats 서브커맨드 테스트"""

    def test_csv_to_stdout(self, index_dir, capsys):
        assert main(["graph-stats", index_dir]) == EXIT_OK
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "degree,count"
        assert all(len(line.split(",")) == 2 for line in lines[1:])

    def test_csv_to_file(self, index_dir, tmp_path):
        out = tmp_path / "degrees.csv"
        assert main(["graph-stats", index_dir, "--out", str(out)]) == EXIT_OK
        assert out.read_text(encoding="utf-8").startswith("degree,count\n")

    def test_json(self, index_dir, capsys):
        assert main(["graph-stats", index_dir, "--json"]) == EXIT_OK
        result = json.loads(capsys.readouterr().out)
        assert sum(result["degree_histogram"].values()) == result["nodes"]


class TestParser:
    """인자 파싱 테스트"""

    def test_unknown_command(self):
        assert main(["frobnicate"]) == EXIT_CONFIG

    def test_help_exits_cleanly(self, capsys):
        assert main(["--help"]) == EXIT_OK
        assert "index" in capsys.readouterr().out
