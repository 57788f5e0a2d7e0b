"""Batch pipeline front end: ingest, gen-sot, filter, stats, eval, demo.

Configuration comes from an optional JSON file plus flag overrides (flags
win). Outputs are written atomically and contain no timestamps, so two runs
with the same seed produce byte-identical files. Exit codes: 0 ok,
1 config, 2 input, 3 endpoint, 4 internal.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .interpreter import ExecConfig, ExecutionError, PositionRule, render_answer
from .lexicon import load_lexicon
from .llm_gen import (
    ClientError,
    FormatError,
    GenClient,
    GenClientConfig,
    TemplateError,
    build_prompt,
    generate_candidate,
    generate_offline,
    load_template,
)
from .metrics import EvalRecord, evaluate, extract_grounding
from .program import ProgramError
from .scene_graph import (
    IngestWarning,
    QuestionRecord,
    SceneGraph,
    load_questions,
    load_scene_graphs,
    sample_balanced,
)
from .sot import FilterConfig, ParseError, filter_document, parse, serialize

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INPUT = 2
EXIT_ENDPOINT = 3
EXIT_INTERNAL = 4


class ConfigError(Exception):
    pass


class InputError(Exception):
    pass


@dataclass
class PipelineConfig:
    scene_graphs: str = ""
    questions: str = ""
    out: str = "out"
    lexicon: Optional[str] = None
    template: Optional[str] = None
    seed: int = 0
    workers: int = 1
    quota: Optional[int] = None
    precision: int = 2
    strict: bool = False
    max_steps: int = 12
    max_chars: int = 2000
    h_mid: float = 0.5
    v_mid: float = 0.5
    thresholds: List[float] = field(default_factory=lambda: [0.5, 0.75, 0.95])
    endpoint: str = ""
    model: str = ""
    temperature: float = 0.0
    requests_per_minute: int = 60
    max_retries: int = 2
    timeout: float = 60.0
    api_key_env: str = "SOTKIT_API_KEY"

    def validate(self) -> None:
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if any(not 0 < t < 1 for t in self.thresholds):
            raise ConfigError("thresholds must lie in (0, 1)")
        if not 0 < self.h_mid < 1 or not 0 < self.v_mid < 1:
            raise ConfigError("position midlines must lie in (0, 1)")
        if self.max_steps < 1 or self.max_chars < 1:
            raise ConfigError("max_steps and max_chars must be >= 1")

    def exec_config(self) -> ExecConfig:
        return ExecConfig(
            attribute_lexicon=load_lexicon(self.lexicon),
            position_rule=PositionRule(self.h_mid, self.v_mid),
            precision=self.precision,
            strict_mode=self.strict,
        )

    def filter_config(self) -> FilterConfig:
        return FilterConfig(max_steps=self.max_steps, max_chars=self.max_chars)

    def client_config(self) -> GenClientConfig:
        return GenClientConfig(
            endpoint=self.endpoint,
            model=self.model,
            temperature=self.temperature,
            max_retries=self.max_retries,
            timeout=self.timeout,
            requests_per_minute=self.requests_per_minute,
            api_key_env=self.api_key_env,
        )


def load_config(path: Optional[str], overrides: Dict[str, object]) -> PipelineConfig:
    values: Dict[str, object] = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        known = {f.name for f in dataclasses.fields(PipelineConfig)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        values.update(raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        cfg = PipelineConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_inputs(cfg: PipelineConfig) -> Tuple[Dict[str, SceneGraph], List[QuestionRecord], List[IngestWarning]]:
    if not cfg.scene_graphs or not cfg.questions:
        raise ConfigError("scene_graphs and questions paths are required")
    warnings: List[IngestWarning] = []
    try:
        graphs = load_scene_graphs(cfg.scene_graphs, warnings)
        questions = load_questions(cfg.questions, warnings)
    except (FileNotFoundError, ValueError) as exc:
        raise InputError(str(exc)) from exc
    return graphs, questions, warnings


# --- commands -------------------------------------------------------------------

def cmd_ingest(cfg: PipelineConfig) -> int:
    graphs, questions, warnings = _load_inputs(cfg)
    out = Path(cfg.out)
    report = "".join(w.render() + "\n" for w in warnings)
    write_atomic(out / "ingest_report.txt", report)
    print(
        f"ingested {len(graphs)} scene graphs, {len(questions)} questions, "
        f"{len(warnings)} warnings -> {out / 'ingest_report.txt'}"
    )
    return EXIT_OK


def _generate_one(
    q: QuestionRecord,
    graphs: Dict[str, SceneGraph],
    cfg: PipelineConfig,
    client: Optional[GenClient],
    template,
    exec_cfg: ExecConfig,
) -> Tuple[QuestionRecord, Optional[str], Optional[str]]:
    """Returns (question, document, failure_reason)."""
    sg = graphs.get(q.image_id)
    if sg is None:
        return q, None, "missing_scene"
    try:
        if client is None:
            trace = generate_offline(q, sg, exec_cfg)
        else:
            prompt = build_prompt(q, sg, template)
            trace = generate_candidate(prompt, client, sg, cfg.precision, q.question_id)
        return q, serialize(trace), None
    except (ProgramError, ExecutionError) as exc:
        return q, None, f"execution_error: {exc}"
    except FormatError as exc:
        return q, None, f"format_error: {exc}"


def cmd_gen(cfg: PipelineConfig, mode: str) -> int:
    if mode not in ("offline", "llm"):
        raise ConfigError(f"unknown mode {mode!r}")
    graphs, questions, _ = _load_inputs(cfg)
    if cfg.quota is not None:
        questions = sample_balanced(questions, cfg.quota, cfg.seed)
    exec_cfg = cfg.exec_config()

    client: Optional[GenClient] = None
    template = None
    if mode == "llm":
        if not cfg.endpoint:
            raise ConfigError("llm mode requires an endpoint")
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        client = GenClient(cfg.client_config(), audit_path=out / "gen_audit.jsonl")
        try:
            template = load_template(cfg.template)
        except (FileNotFoundError, TemplateError) as exc:
            raise InputError(f"prompt template: {exc}") from exc

    def work(q: QuestionRecord):
        return _generate_one(q, graphs, cfg, client, template, exec_cfg)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(work, questions))
    else:
        results = [work(q) for q in questions]

    corpus_lines: List[str] = []
    meta_lines: List[str] = []
    failures: List[str] = []
    for q, doc, failure in results:
        if doc is None:
            failures.append(
                json.dumps({"question_id": q.question_id, "reason": failure})
            )
            continue
        meta = {
            "line": len(corpus_lines),
            "question_id": q.question_id,
            "image_id": q.image_id,
            "ground_truth": q.answer,
            "verdict": None,
        }
        corpus_lines.append(doc)
        meta_lines.append(json.dumps(meta))

    out = Path(cfg.out)
    write_atomic(out / "sot_corpus.txt", "".join(line + "\n" for line in corpus_lines))
    write_atomic(out / "sot_meta.jsonl", "".join(line + "\n" for line in meta_lines))
    if failures:
        write_atomic(out / "gen_failures.jsonl", "".join(line + "\n" for line in failures))
    print(f"generated {len(corpus_lines)} traces ({len(failures)} failures) -> {out}")
    return EXIT_OK


def _read_corpus(corpus_path: Path, meta_path: Path) -> List[Tuple[dict, str]]:
    if not corpus_path.exists() or not meta_path.exists():
        raise InputError(f"corpus files missing under {corpus_path.parent}")
    docs = corpus_path.read_text(encoding="utf-8").splitlines()
    metas = [json.loads(line) for line in meta_path.read_text(encoding="utf-8").splitlines()]
    if len(docs) != len(metas):
        raise InputError(
            f"corpus/meta mismatch: {len(docs)} documents vs {len(metas)} records"
        )
    return list(zip(metas, docs))


def cmd_filter(cfg: PipelineConfig) -> int:
    out = Path(cfg.out)
    pairs = _read_corpus(out / "sot_corpus.txt", out / "sot_meta.jsonl")
    fcfg = cfg.filter_config()

    accepted_docs: List[str] = []
    accepted_meta: List[str] = []
    rejections: List[str] = []
    for meta, doc in pairs:
        verdict = filter_document(doc, str(meta.get("ground_truth", "")), fcfg)
        if verdict.accepted:
            meta = dict(meta, line=len(accepted_docs), verdict=verdict.to_dict())
            accepted_docs.append(doc)
            accepted_meta.append(json.dumps(meta))
        else:
            rejections.append(
                json.dumps(
                    {
                        "question_id": meta.get("question_id"),
                        "reason": verdict.reason,
                        "detail": verdict.detail,
                    }
                )
            )
    write_atomic(out / "accepted.txt", "".join(d + "\n" for d in accepted_docs))
    write_atomic(out / "accepted_meta.jsonl", "".join(m + "\n" for m in accepted_meta))
    write_atomic(out / "rejections.jsonl", "".join(r + "\n" for r in rejections))
    total = len(pairs)
    print(
        f"filtered {total} documents: {len(accepted_docs)} accepted, "
        f"{len(rejections)} rejected -> {out}"
    )
    return EXIT_OK


def cmd_stats(cfg: PipelineConfig) -> int:
    _, questions, _ = _load_inputs(cfg)
    out = Path(cfg.out)
    per_type: Dict[str, Dict[str, set | int]] = {}
    for q in questions:
        slot = per_type.setdefault(q.question_type, {"questions": 0, "images": set()})
        slot["questions"] += 1
        slot["images"].add(q.image_id)

    sot_counts: Dict[str, int] = {}
    meta_path = out / "sot_meta.jsonl"
    if meta_path.exists():
        qtype = {q.question_id: q.question_type for q in questions}
        for line in meta_path.read_text(encoding="utf-8").splitlines():
            rec = json.loads(line)
            t = qtype.get(str(rec.get("question_id")), "unknown")
            sot_counts[t] = sot_counts.get(t, 0) + 1

    rows = []
    for qtype in sorted(per_type):
        slot = per_type[qtype]
        rows.append(
            {
                "question_type": qtype,
                "images": len(slot["images"]),
                "qa_pairs": slot["questions"],
                "sots": sot_counts.get(qtype, 0),
            }
        )
    totals = {
        "question_type": "total",
        "images": len({q.image_id for q in questions}),
        "qa_pairs": len(questions),
        "sots": sum(sot_counts.values()),
    }
    stats = {"per_type": rows, "total": totals}
    write_atomic(out / "stats.json", json.dumps(stats, indent=2) + "\n")

    header = f"{'type':<24}{'images':>8}{'qa_pairs':>10}{'sots':>8}"
    print(header)
    for row in rows + [totals]:
        print(
            f"{row['question_type']:<24}{row['images']:>8}{row['qa_pairs']:>10}{row['sots']:>8}"
        )
    return EXIT_OK


def _trace_from_doc(doc: str):
    try:
        return parse(doc)
    except ParseError:
        return None


def cmd_eval(cfg: PipelineConfig, pred_corpus: Optional[str], pred_meta: Optional[str]) -> int:
    graphs, questions, _ = _load_inputs(cfg)
    out = Path(cfg.out)
    corpus_path = Path(pred_corpus) if pred_corpus else out / "accepted.txt"
    meta_path = Path(pred_meta) if pred_meta else out / "accepted_meta.jsonl"
    pairs = _read_corpus(corpus_path, meta_path)
    exec_cfg = cfg.exec_config()
    by_id = {q.question_id: q for q in questions}

    records: List[EvalRecord] = []
    skipped = 0
    for meta, doc in pairs:
        qid = str(meta.get("question_id"))
        q = by_id.get(qid)
        sg = graphs.get(q.image_id) if q else None
        pred_trace = _trace_from_doc(doc)
        if q is None or sg is None or pred_trace is None:
            skipped += 1
            continue
        try:
            gold_trace = generate_offline(q, sg, exec_cfg)
        except (ProgramError, ExecutionError):
            skipped += 1
            continue
        pred_answer, pred_box = extract_grounding(pred_trace)
        _, gold_box = extract_grounding(gold_trace)
        records.append(
            EvalRecord(
                question_id=qid,
                predicted_answer=pred_answer,
                gold_answer=q.answer,
                predicted_bbox=pred_box,
                gold_bbox=gold_box,
                predicted_trace=pred_trace,
                gold_trace=gold_trace,
            )
        )

    report = evaluate(records, tuple(cfg.thresholds))
    write_atomic(out / "metrics.json", json.dumps(report.to_dict(), indent=2) + "\n")
    print(report.render_table())
    if skipped:
        print(f"skipped {skipped} records (unknown question, missing scene, or unparseable)")
    return EXIT_OK


def cmd_demo(cfg: PipelineConfig, question_id: str) -> int:
    graphs, questions, _ = _load_inputs(cfg)
    match = [q for q in questions if q.question_id == question_id]
    if not match:
        raise InputError(f"question {question_id!r} not found")
    q = match[0]
    sg = graphs.get(q.image_id)
    if sg is None:
        raise InputError(f"scene graph {q.image_id!r} not found")
    trace = generate_offline(q, sg, cfg.exec_config())
    print(f"question: {q.text}")
    for k, step in enumerate(trace.steps, start=1):
        print(f"[{k}] <subtask>{step.rendered_op}")
        print(f"    <answer>{render_answer(step.value)}")
    print(f"final answer: {trace.final_answer} (ground truth: {q.answer})")
    print(f"document: {serialize(trace)}")
    return EXIT_OK


# --- argument parsing ----------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--scene-graphs", dest="scene_graphs", help="scene-graph annotation JSON")
    p.add_argument("--questions", help="question annotation JSON")
    p.add_argument("--out", help="output directory")
    p.add_argument("--lexicon", help="attribute lexicon file (value<TAB>category)")
    p.add_argument("--template", help="prompt template file")
    p.add_argument("--seed", type=int, help="sampling seed")
    p.add_argument("--workers", type=int, help="worker count")
    p.add_argument("--quota", type=int, help="balanced-sampling quota per question type")
    p.add_argument("--precision", type=int, help="box rounding decimals")
    p.add_argument("--strict", action="store_const", const=True, help="strict execution mode")
    p.add_argument("--max-steps", dest="max_steps", type=int, help="filtration step limit")
    p.add_argument("--max-chars", dest="max_chars", type=int, help="filtration length limit")
    p.add_argument(
        "--thresholds", type=float, nargs="+", help="IoU thresholds for eval"
    )
    p.add_argument("--endpoint", help="generation service URL")
    p.add_argument("--model", help="generation model identifier")
    p.add_argument("--temperature", type=float, help="sampling temperature")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sotkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("ingest", "filter", "stats"):
        _add_common(sub.add_parser(name))

    gen = sub.add_parser("gen-sot")
    _add_common(gen)
    gen.add_argument("--mode", choices=("offline", "llm"), default="offline")

    ev = sub.add_parser("eval")
    _add_common(ev)
    ev.add_argument("--pred-corpus", dest="pred_corpus", help="predicted corpus file")
    ev.add_argument("--pred-meta", dest="pred_meta", help="predicted sidecar metadata file")

    demo = sub.add_parser("demo")
    _add_common(demo)
    demo.add_argument("question_id")

    return parser


_CONFIG_KEYS = (
    "scene_graphs", "questions", "out", "lexicon", "template", "seed", "workers",
    "quota", "precision", "strict", "max_steps", "max_chars", "thresholds",
    "endpoint", "model", "temperature",
)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = {k: getattr(args, k, None) for k in _CONFIG_KEYS}
        cfg = load_config(args.config, overrides)
        if args.command == "ingest":
            return cmd_ingest(cfg)
        if args.command == "gen-sot":
            return cmd_gen(cfg, args.mode)
        if args.command == "filter":
            return cmd_filter(cfg)
        if args.command == "stats":
            return cmd_stats(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.pred_corpus, args.pred_meta)
        if args.command == "demo":
            return cmd_demo(cfg, args.question_id)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ClientError as exc:
        print(f"endpoint error: {exc}", file=sys.stderr)
        return EXIT_ENDPOINT
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    raise SystemExit(main())
