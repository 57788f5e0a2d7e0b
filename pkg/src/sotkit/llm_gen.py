"""Prompt assembly and candidate-trace generation.

Two generators share one output type: an HTTP client that drives a
chat-completion endpoint and parses its JSON result blocks, and an offline
generator that runs the deterministic interpreter. Offline output is
indistinguishable in type and format from a perfectly-answering service.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
from collections import deque
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import requests

from .interpreter import (
    AttributeV,
    BooleanV,
    ChoiceV,
    ExecConfig,
    Lit,
    NONE,
    NoneV,
    ObjectEntry,
    ObjectList,
    SceneRefV,
    SoTTrace,
    Step,
    Value,
    answer_text,
    execute,
)
from .program import parse_program
from .scene_graph import BBox, QuestionRecord, SceneGraph, normalize_bbox


class TemplateError(Exception):
    pass


class ClientError(Exception):
    pass


class FormatError(Exception):
    def __init__(self, reason: str, response: str = ""):
        super().__init__(reason)
        self.response = response


@dataclass(frozen=True)
class PromptTemplate:
    """Catalog block, in-context examples, notes, and the instance format."""

    operations_catalog: str
    in_context_examples: Tuple[str, ...]
    notes: str
    instance_format: str

    REQUIRED_SLOTS = ("{question}", "{operations}", "{scene}", "{answer}")

    def validate(self) -> None:
        if not self.operations_catalog.strip():
            raise TemplateError("template lacks an operations catalog")
        if not self.in_context_examples:
            raise TemplateError("template needs at least one example")
        if not self.notes.strip():
            raise TemplateError("template lacks a notes block")
        missing = [s for s in self.REQUIRED_SLOTS if s not in self.instance_format]
        if missing:
            raise TemplateError(f"instance block missing slots: {', '.join(missing)}")


_SECTION = re.compile(r"^=== (CATALOG|EXAMPLE|NOTES|INSTANCE) ===$", re.MULTILINE)


def parse_template(text: str) -> PromptTemplate:
    """Parse the sectioned plain-text template format."""
    pieces = _SECTION.split(text)
    catalog_text, examples, notes, instance = "", [], "", ""
    for marker, body in zip(pieces[1::2], pieces[2::2]):
        body = body.strip("\n")
        if marker == "CATALOG":
            catalog_text = body
        elif marker == "EXAMPLE":
            examples.append(body)
        elif marker == "NOTES":
            notes = body
        elif marker == "INSTANCE":
            instance = body
    tmpl = PromptTemplate(catalog_text, tuple(examples), notes, instance)
    tmpl.validate()
    return tmpl


def load_template(path: Optional[str | Path] = None) -> PromptTemplate:
    if path is None:
        text = resources.files("sotkit.data").joinpath("prompt_template.txt").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_template(text)


def _fmt_coord(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else str(value)


def _coord(value: float):
    return int(value) if float(value).is_integer() else value


def render_scene_description(sg: SceneGraph, relevant_ids: Optional[set] = None) -> str:
    """Numbered '#k' object entries with id, name, attributes, location, relations.

    When ``relevant_ids`` is given, the description is restricted to those
    objects plus the transitive closure of their outgoing relations.
    """
    order = sg.object_order()
    include = set(order)
    if relevant_ids is not None:
        include = set()
        frontier = [oid for oid in order if oid in relevant_ids]
        while frontier:
            oid = frontier.pop()
            if oid in include or oid not in sg.objects:
                continue
            include.add(oid)
            frontier.extend(t for _, t in sg.objects[oid].relations)

    label = {oid: f"#{k + 1}" for k, oid in enumerate(order)}
    out: Dict[str, dict] = {}
    for oid in order:
        if oid not in include:
            continue
        obj = sg.objects[oid]
        b = obj.bbox
        out[label[oid]] = {
            "id": obj.object_id,
            "name": obj.name,
            "attributes": list(obj.attributes),
            "location": [_coord(b.x_left), _coord(b.y_top), _coord(b.x_right), _coord(b.y_bottom)],
            "relations": [f"{rel} {label[target]}" for rel, target in obj.relations],
        }
    return json.dumps(out, indent=4)


def render_operations(q: QuestionRecord) -> str:
    ops = [
        {"operation": op.name, "dependencies": list(op.dependencies), "argument": op.argument}
        for op in q.raw_ops
    ]
    return json.dumps(ops, indent=4)


def build_prompt(q: QuestionRecord, sg: SceneGraph, tmpl: PromptTemplate) -> str:
    """Assemble the full generation prompt; byte-identical for equal inputs."""
    tmpl.validate()
    if q.image_id != sg.image_id:
        raise ValueError(f"question {q.question_id} is about image {q.image_id}, not {sg.image_id}")
    instance = tmpl.instance_format.format(
        question=q.text,
        operations=render_operations(q),
        scene=render_scene_description(sg),
        answer=q.answer,
    )
    blocks = [tmpl.operations_catalog, "Examples:"]
    blocks.extend(tmpl.in_context_examples)
    blocks.append(tmpl.notes)
    blocks.append(instance)
    return "\n".join(blocks)


# --- result blocks -------------------------------------------------------------

def _block_inline(value: Value, sg: SceneGraph) -> str:
    if isinstance(value, ObjectList):
        return "[" + ", ".join(sg.label_of(e.object_id) for e in value.entries) + "]"
    if isinstance(value, BooleanV):
        return "Yes" if value.flag else "No"
    if isinstance(value, NoneV):
        return "[None]"
    if isinstance(value, SceneRefV):
        return "[" + ", ".join(value.labels) + "]"
    return value.text


def _block_answer(value: Value, sg: SceneGraph) -> str:
    if isinstance(value, ObjectList):
        parts = []
        for e in value.entries:
            b = sg.objects[e.object_id].bbox
            coords = ", ".join(
                _fmt_coord(c) for c in (b.x_left, b.y_top, b.x_right, b.y_bottom)
            )
            parts.append(f"{sg.label_of(e.object_id)} ({coords})")
        return "[" + ", ".join(parts) + "]"
    if isinstance(value, SceneRefV):
        return "there are [" + ", ".join(value.labels) + "]"
    if isinstance(value, (AttributeV, ChoiceV)):
        return f"[{value.text}]"
    return f"[{_block_inline(value, sg)}]"


def render_result_block(trace: SoTTrace, sg: SceneGraph) -> List[Dict[str, str]]:
    """Trace as the JSON result-block shape used in prompts and responses.

    Object references render as scene '#k' labels with absolute boxes, so
    the trace must carry execution metadata (interpreter-produced).
    """
    values = [s.value for s in trace.steps]
    block = []
    for step in trace.steps:
        if step.meta is None:
            raise ValueError("trace lacks execution metadata; cannot render a result block")
        parts = []
        for tok in step.meta.tokens:
            if isinstance(tok, Lit):
                parts.append(tok.text)
            else:
                parts.append(_block_inline(values[tok.step], sg))
        block.append(
            {
                "Operation": f"{step.meta.display}({', '.join(parts)})",
                "Answer": _block_answer(step.value, sg),
            }
        )
    return block


_LABEL_REF = re.compile(r"#(\d+)")
_LABEL_ENTRY = re.compile(r"^#(\d+)(?:\s*\(([^)]*)\))?$")
_BOOL_WORD = re.compile(r"\b(Yes|No)\b")


def _scene_entry(label_num: str, sg: SceneGraph, precision: int) -> ObjectEntry:
    order = sg.object_order()
    k = int(label_num)
    if not 1 <= k <= len(order):
        raise FormatError(f"object reference #{k} outside the scene")
    obj = sg.objects[order[k - 1]]
    box = normalize_bbox(obj.bbox, sg.width, sg.height, precision)
    return ObjectEntry(obj.name, box, obj.object_id)


def _wire_op(op_str: str, sg: SceneGraph, precision: int) -> str:
    def repl(m: re.Match) -> str:
        e = _scene_entry(m.group(1), sg, precision)
        return f"{e.display_name} <bbox>{e.box.render()}"

    out = _LABEL_REF.sub(repl, op_str)
    return _BOOL_WORD.sub(lambda m: m.group(1).lower(), out)


def _parse_block_answer(op_str: str, answer: str, sg: SceneGraph, precision: int) -> Value:
    text = answer.strip()
    scene_ref = re.match(r"^there are \[([^\]]*)\]$", text)
    if scene_ref is not None:
        labels = tuple(s.strip() for s in scene_ref.group(1).split(",") if s.strip())
        ids = []
        for lab in labels:
            m = _LABEL_ENTRY.match(lab)
            if m is None:
                raise FormatError(f"bad scene label {lab!r}")
            ids.append(_scene_entry(m.group(1), sg, precision).object_id)
        return SceneRefV(labels, tuple(ids))
    if text.startswith("[") and text.endswith("]"):
        text = text[1:-1].strip()
    if not text:
        raise FormatError("empty answer in result block")
    if text == "None":
        return NONE
    if text.lower() in ("yes", "no"):
        return BooleanV(text.lower() == "yes")
    if text.startswith("#"):
        entries = []
        for chunk in re.split(r",\s*(?=#)", text):
            m = _LABEL_ENTRY.match(chunk.strip())
            if m is None:
                raise FormatError(f"bad object entry {chunk!r}")
            entry = _scene_entry(m.group(1), sg, precision)
            if m.group(2):
                # keep the response's own coordinates; filtration judges them
                try:
                    coords = [float(x) for x in m.group(2).split(",")]
                    if len(coords) != 4:
                        raise ValueError(f"{len(coords)} components")
                    box = normalize_bbox(BBox(*coords), sg.width, sg.height, precision)
                except ValueError as exc:
                    raise FormatError(f"bad box in {chunk!r}: {exc}") from None
                entry = ObjectEntry(entry.display_name, box, entry.object_id)
            entries.append(entry)
        return ObjectList(tuple(entries))
    name = op_str.split("(", 1)[0].strip()
    return ChoiceV(text) if name.startswith("choose") else AttributeV(text)


def parse_result_block(
    block: Sequence[dict], sg: SceneGraph, precision: int = 2
) -> SoTTrace:
    """Convert a result block into a wire trace: labels dereferenced against
    the scene graph, boxes normalized."""
    if not isinstance(block, (list, tuple)) or not block:
        raise FormatError("result block must be a non-empty array")
    steps: List[Step] = []
    for item in block:
        if not isinstance(item, dict) or "Operation" not in item or "Answer" not in item:
            raise FormatError("result items need Operation and Answer fields")
        op_str = str(item["Operation"])
        value = _parse_block_answer(op_str, str(item["Answer"]), sg, precision)
        steps.append(Step(_wire_op(op_str, sg, precision), value))
    return SoTTrace(tuple(steps), answer_text(steps[-1].value))


def extract_json_array(text: str) -> list:
    """First balanced JSON array in free text; models often add prose."""
    start = text.find("[")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
                continue
            if ch == '"':
                in_string = True
            elif ch == "[":
                depth += 1
            elif ch == "]":
                depth -= 1
                if depth == 0:
                    candidate = text[start : i + 1]
                    try:
                        return json.loads(candidate)
                    except json.JSONDecodeError:
                        break
        start = text.find("[", start + 1)
    raise FormatError("no balanced JSON array in response", response=text)


# --- generation client ----------------------------------------------------------

@dataclass(frozen=True)
class GenClientConfig:
    endpoint: str = ""
    model: str = ""
    temperature: float = 0.0
    max_retries: int = 2
    timeout: float = 60.0
    requests_per_minute: int = 60
    max_tokens: int = 1024
    api_key_env: str = "SOTKIT_API_KEY"

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_retries < 0 or self.requests_per_minute < 1:
            raise ValueError("retries >= 0 and requests_per_minute >= 1 required")


class RateLimiter:
    """Sliding-window limiter: at most ``per_minute`` acquisitions per 60s."""

    def __init__(self, per_minute: int, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.per_minute = per_minute
        self.clock = clock
        self.sleep = sleep
        self._stamps: deque = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self.clock()
                while self._stamps and now - self._stamps[0] >= 60.0:
                    self._stamps.popleft()
                if len(self._stamps) < self.per_minute:
                    self._stamps.append(now)
                    return
                wait = max(60.0 - (now - self._stamps[0]), 1e-3)
            # floor keeps progress even when float error leaves the window full
            self.sleep(wait)


def _http_transport(url: str, payload: dict, headers: dict, timeout: float) -> str:
    resp = requests.post(url, json=payload, headers=headers, timeout=timeout)
    resp.raise_for_status()
    data = resp.json()
    try:
        return data["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise ClientError(f"unexpected completion payload: {exc}") from exc


class GenClient:
    """Minimal chat-completion client with retries, rate cap, and audit log.

    ``transport`` is injectable for tests; every response (or failure) is
    appended verbatim to the audit log so nothing is silently dropped.
    """

    def __init__(
        self,
        cfg: GenClientConfig,
        transport: Optional[Callable[[str, dict, dict, float], str]] = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
        audit_path: Optional[str | Path] = None,
    ):
        self.cfg = cfg
        self.transport = transport or _http_transport
        self.sleep = sleep
        self.limiter = RateLimiter(cfg.requests_per_minute, clock, sleep)
        self.audit_path = Path(audit_path) if audit_path else None
        self._audit_lock = threading.Lock()

    def audit(self, record: dict) -> None:
        if self.audit_path is None:
            return
        with self._audit_lock:
            with self.audit_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record) + "\n")

    def complete(self, prompt: str) -> str:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.cfg.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = {
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
        }
        last_error: Optional[Exception] = None
        for attempt in range(self.cfg.max_retries + 1):
            self.limiter.acquire()
            try:
                return self.transport(self.cfg.endpoint, payload, headers, self.cfg.timeout)
            except (requests.RequestException, ClientError) as exc:
                last_error = exc
                if attempt < self.cfg.max_retries:
                    self.sleep(2.0**attempt)
        raise ClientError(f"endpoint failed after {self.cfg.max_retries + 1} attempts: {last_error}")


def generate_candidate(
    prompt: str,
    client: GenClient,
    sg: SceneGraph,
    precision: int = 2,
    question_id: str = "",
) -> SoTTrace:
    """One service call -> one candidate trace, ready for filtration."""
    response = client.complete(prompt)
    try:
        block = extract_json_array(response)
        trace = parse_result_block(block, sg, precision)
    except FormatError as exc:
        client.audit(
            {"question_id": question_id, "status": "format_error",
             "reason": str(exc), "response": response}
        )
        raise FormatError(str(exc), response=response) from None
    client.audit({"question_id": question_id, "status": "ok", "response": response})
    return trace


def generate_offline(
    q: QuestionRecord, sg: SceneGraph, cfg: Optional[ExecConfig] = None
) -> SoTTrace:
    """Deterministic generation: parse the question's program and execute it."""
    program = parse_program(q.raw_ops)
    return execute(program, sg, cfg or ExecConfig())
