import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer
from pathlib import Path

import pytest

from sotkit.cli import (
    EXIT_CONFIG,
    EXIT_ENDPOINT,
    EXIT_INPUT,
    EXIT_OK,
    main,
)

DATA = Path(__file__).parent / "data"
SCENES = str(DATA / "scene_graphs.json")
QUESTIONS = str(DATA / "questions.json")
MINI_SCENES = str(DATA / "mini_scene_graphs.json")
MINI_QUESTIONS = str(DATA / "mini_questions.json")


def run_pipeline(out, scenes=MINI_SCENES, questions=MINI_QUESTIONS, seed="0"):
    base = ["--scene-graphs", scenes, "--questions", questions, "--out", str(out)]
    assert main(["ingest"] + base) == EXIT_OK
    assert main(["gen-sot", "--mode", "offline", "--seed", seed] + base) == EXIT_OK
    assert main(["filter"] + base) == EXIT_OK
    assert main(["stats"] + base) == EXIT_OK
    assert main(["eval"] + base) == EXIT_OK


class TestPipeline:
    def test_end_to_end_offline(self, tmp_path, capsys):
        out = tmp_path / "run"
        run_pipeline(out)
        corpus = (out / "sot_corpus.txt").read_text().splitlines()
        meta = [json.loads(l) for l in (out / "sot_meta.jsonl").read_text().splitlines()]
        assert len(corpus) == 50 and len(meta) == 50

        accepted = (out / "accepted.txt").read_text().splitlines()
        rejected = (out / "rejections.jsonl").read_text().splitlines()
        assert len(accepted) == 50 and rejected == []

        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["answer_accuracy"] == 1.0
        assert metrics["n_records"] == 50

        stats = json.loads((out / "stats.json").read_text())
        assert stats["total"]["qa_pairs"] == 50
        assert stats["total"]["sots"] == 50
        per_type = {row["question_type"]: row for row in stats["per_type"]}
        assert per_type["verifyAttr"]["qa_pairs"] == 8
        assert per_type["exist"]["qa_pairs"] == 3
        assert per_type["sameColor"]["sots"] == 5

    def test_two_runs_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run_pipeline(a)
        run_pipeline(b)
        for name in (
            "ingest_report.txt",
            "sot_corpus.txt",
            "sot_meta.jsonl",
            "accepted.txt",
            "accepted_meta.jsonl",
            "rejections.jsonl",
            "stats.json",
            "metrics.json",
        ):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_workers_do_not_change_output(self, tmp_path):
        base = ["--scene-graphs", MINI_SCENES, "--questions", MINI_QUESTIONS]
        a, b = tmp_path / "w1", tmp_path / "w4"
        assert main(["gen-sot", "--out", str(a), "--workers", "1"] + base) == EXIT_OK
        assert main(["gen-sot", "--out", str(b), "--workers", "4"] + base) == EXIT_OK
        assert (a / "sot_corpus.txt").read_bytes() == (b / "sot_corpus.txt").read_bytes()

    def test_quota_sampling(self, tmp_path):
        out = tmp_path / "q"
        args = [
            "gen-sot", "--scene-graphs", MINI_SCENES, "--questions", MINI_QUESTIONS,
            "--out", str(out), "--quota", "1", "--seed", "3",
        ]
        assert main(args) == EXIT_OK
        meta = [json.loads(l) for l in (out / "sot_meta.jsonl").read_text().splitlines()]
        types = json.loads(Path(MINI_QUESTIONS).read_text())
        per_type = {}
        for rec in meta:
            t = types[rec["question_id"]]["types"]["detailed"]
            per_type[t] = per_type.get(t, 0) + 1
        assert all(count == 1 for count in per_type.values())

    def test_filter_reports_every_rejection(self, tmp_path):
        out = tmp_path / "rej"
        base = ["--scene-graphs", MINI_SCENES, "--questions", MINI_QUESTIONS, "--out", str(out)]
        assert main(["gen-sot"] + base) == EXIT_OK
        # corrupt the first document's final answer
        lines = (out / "sot_corpus.txt").read_text().splitlines()
        head, _ = lines[0].rsplit("<answer>", 1)
        lines[0] = head + "<answer>garbage"
        (out / "sot_corpus.txt").write_text("".join(l + "\n" for l in lines))
        assert main(["filter"] + base) == EXIT_OK

        accepted = (out / "accepted.txt").read_text().splitlines()
        rejections = [json.loads(l) for l in (out / "rejections.jsonl").read_text().splitlines()]
        assert len(accepted) + len(rejections) == 50
        assert rejections[0]["reason"] == "answer_mismatch"
        assert rejections[0]["question_id"] == "m01"

    def test_demo_prints_document(self, tmp_path, capsys):
        args = [
            "demo", "70310001",
            "--scene-graphs", SCENES, "--questions", QUESTIONS, "--out", str(tmp_path),
        ]
        assert main(args) == EXIT_OK
        printed = capsys.readouterr().out
        assert "<subtask>select(garland)" in printed
        assert "[1]" in printed and "[4]" in printed
        assert "final answer: couch" in printed


class TestConfigAndErrors:
    def test_config_file_with_flag_override(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            json.dumps(
                {
                    "scene_graphs": MINI_SCENES,
                    "questions": MINI_QUESTIONS,
                    "out": str(tmp_path / "from_config"),
                }
            )
        )
        override = tmp_path / "from_flag"
        assert main(["gen-sot", "--config", str(cfg), "--out", str(override)]) == EXIT_OK
        assert (override / "sot_corpus.txt").exists()
        assert not (tmp_path / "from_config").exists()

    def test_bad_config_json(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{broken")
        assert main(["ingest", "--config", str(cfg)]) == EXIT_CONFIG

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"zelazny": 9}))
        assert main(["ingest", "--config", str(cfg)]) == EXIT_CONFIG

    def test_missing_inputs_is_config_error(self, tmp_path):
        assert main(["ingest", "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_missing_scene_file_is_input_error(self, tmp_path):
        args = [
            "ingest", "--scene-graphs", str(tmp_path / "nope.json"),
            "--questions", QUESTIONS, "--out", str(tmp_path),
        ]
        assert main(args) == EXIT_INPUT

    def test_unknown_question_is_input_error(self, tmp_path):
        args = [
            "demo", "zzz", "--scene-graphs", SCENES, "--questions", QUESTIONS,
            "--out", str(tmp_path),
        ]
        assert main(args) == EXIT_INPUT

    def test_llm_mode_without_endpoint(self, tmp_path):
        args = [
            "gen-sot", "--mode", "llm", "--scene-graphs", SCENES,
            "--questions", QUESTIONS, "--out", str(tmp_path),
        ]
        assert main(args) == EXIT_CONFIG

    def test_bad_threshold_rejected(self, tmp_path):
        args = [
            "eval", "--scene-graphs", SCENES, "--questions", QUESTIONS,
            "--out", str(tmp_path), "--thresholds", "1.5",
        ]
        assert main(args) == EXIT_CONFIG

    def test_filter_without_corpus_is_input_error(self, tmp_path):
        args = [
            "filter", "--scene-graphs", SCENES, "--questions", QUESTIONS,
            "--out", str(tmp_path),
        ]
        assert main(args) == EXIT_INPUT


@pytest.fixture
def echo_endpoint(graphs, questions):
    """Local chat-completion server answering with the oracle's result blocks."""
    from sotkit.llm_gen import generate_offline, render_result_block

    by_text = {}
    for q in questions:
        sg = graphs[q.image_id]
        block = render_result_block(generate_offline(q, sg), sg)
        by_text[q.text] = json.dumps(block)

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            body = self.rfile.read(int(self.headers["Content-Length"]))
            content = json.loads(body)["messages"][0]["content"]
            text = max(by_text, key=content.rfind)
            payload = {"choices": [{"message": {"content": by_text[text]}}]}
            data = json.dumps(payload).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, *args):
            pass

    server = HTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
    server.shutdown()


class TestLlmMode:
    def test_llm_accepted_corpus_equals_offline(self, tmp_path, echo_endpoint):
        base = ["--scene-graphs", SCENES, "--questions", QUESTIONS]
        offline_out, llm_out = tmp_path / "offline", tmp_path / "llm"
        assert main(["gen-sot", "--mode", "offline", "--out", str(offline_out)] + base) == EXIT_OK
        args = [
            "gen-sot", "--mode", "llm", "--out", str(llm_out),
            "--endpoint", echo_endpoint, "--model", "oracle-echo",
        ]
        assert main(args + base) == EXIT_OK
        assert (
            (llm_out / "sot_corpus.txt").read_bytes()
            == (offline_out / "sot_corpus.txt").read_bytes()
        )
        audit = [json.loads(l) for l in (llm_out / "gen_audit.jsonl").read_text().splitlines()]
        assert len(audit) == 3 and all(rec["status"] == "ok" for rec in audit)
        # parity extends through filtration: identical accepted corpora
        for out in (offline_out, llm_out):
            assert main(["filter", "--out", str(out)] + base) == EXIT_OK
        assert (
            (llm_out / "accepted.txt").read_bytes()
            == (offline_out / "accepted.txt").read_bytes()
        )
        assert (llm_out / "rejections.jsonl").read_text() == ""

    def test_unreachable_endpoint_exit_code(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"max_retries": 0, "timeout": 2.0}))
        args = [
            "gen-sot", "--mode", "llm", "--config", str(cfg),
            "--scene-graphs", SCENES, "--questions", QUESTIONS,
            "--out", str(tmp_path / "out"), "--endpoint", "http://127.0.0.1:9",
        ]
        assert main(args) == EXIT_ENDPOINT


class TestGenFailures:
    def test_missing_scene_recorded(self, tmp_path):
        questions = {
            "q1": {
                "imageId": "nonexistent",
                "question": "?",
                "answer": "yes",
                "semantic": [
                    {"operation": "select", "dependencies": [], "argument": "dog"},
                    {"operation": "exist", "dependencies": [0], "argument": "?"},
                ],
            }
        }
        qpath = tmp_path / "q.json"
        qpath.write_text(json.dumps(questions))
        out = tmp_path / "out"
        args = [
            "gen-sot", "--scene-graphs", MINI_SCENES, "--questions", str(qpath),
            "--out", str(out),
        ]
        assert main(args) == EXIT_OK
        failures = [json.loads(l) for l in (out / "gen_failures.jsonl").read_text().splitlines()]
        assert failures[0]["question_id"] == "q1"
        assert failures[0]["reason"] == "missing_scene"
        assert (out / "sot_corpus.txt").read_text() == ""
