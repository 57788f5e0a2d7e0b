"""Codec and filtration for the tagged trace wire format.

A document is a single line of alternating segments::

    <subtask>select(garland)<answer>garland <bbox>(0.51, 0.0, 0.54, 0.09)...

serialize/parse round-trip exactly; filtration rejects documents whose final
answer disagrees with ground truth, whose operations break the grammar, or
which are overlong.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import List, Optional

from .interpreter import (
    AttributeV,
    BooleanV,
    ChoiceV,
    NONE,
    ObjectEntry,
    ObjectList,
    SceneRefV,
    SoTTrace,
    Step,
    Value,
    answer_text,
    render_answer,
)
from .program import catalog
from .scene_graph import NormBBox

SUBTASK_TAG = "<subtask>"
ANSWER_TAG = "<answer>"
BBOX_TAG = "<bbox>"


class ParseError(Exception):
    def __init__(self, position: int, reason: str):
        super().__init__(f"offset {position}: {reason}")
        self.position = position
        self.reason = reason


def serialize(trace: SoTTrace) -> str:
    """Render a trace as one tagged document line."""
    return "".join(
        f"{SUBTASK_TAG}{step.rendered_op}{ANSWER_TAG}{render_answer(step.value)}"
        for step in trace.steps
    )


_ENTRY = re.compile(r"^(?P<name>.+?) <bbox>\((?P<nums>[^()]*)\)$")
_SCENE_REF = re.compile(r"^there are \[(?P<labels>[^\]]*)\]$")


def _parse_value(op: str, answer: str, position: int) -> Value:
    text = answer.strip()
    if not text:
        raise ParseError(position, "empty answer segment")
    if text == "None":
        return NONE
    if text in ("yes", "no"):
        return BooleanV(text == "yes")
    scene = _SCENE_REF.match(text)
    if scene is not None:
        labels = tuple(s.strip() for s in scene.group("labels").split(",") if s.strip())
        return SceneRefV(labels)
    if BBOX_TAG in text:
        return _parse_object_list(text, position)
    op_name = op.split("(", 1)[0].strip()
    if op_name.startswith("choose"):
        return ChoiceV(text)
    return AttributeV(text)


def _parse_object_list(text: str, position: int) -> ObjectList:
    chunks = text.split("), ")
    entries: List[ObjectEntry] = []
    for k, chunk in enumerate(chunks):
        if k < len(chunks) - 1:
            chunk = chunk + ")"
        m = _ENTRY.match(chunk.strip())
        if m is None:
            raise ParseError(position, f"malformed object entry {chunk!r}")
        nums = [s.strip() for s in m.group("nums").split(",")]
        if len(nums) != 4:
            raise ParseError(position, f"bbox tuple has {len(nums)} components")
        try:
            coords = [float(n) for n in nums]
        except ValueError:
            raise ParseError(position, f"non-numeric bbox component in {nums}") from None
        try:
            box = NormBBox(*coords)
        except ValueError as exc:
            raise ParseError(position, f"invalid box: {exc}") from None
        entries.append(ObjectEntry(m.group("name").strip(), box))
    return ObjectList(tuple(entries))


def parse(doc: str) -> SoTTrace:
    """Parse a tagged document back into a trace.

    Steps come back with rendered operations verbatim and reconstructed
    values; provenance object ids are not part of the wire format.
    """
    if not doc.strip():
        raise ParseError(0, "empty document")
    if not doc.startswith(SUBTASK_TAG):
        raise ParseError(0, f"document must start with {SUBTASK_TAG}")
    steps: List[Step] = []
    offset = len(SUBTASK_TAG)
    for segment in doc[len(SUBTASK_TAG) :].split(SUBTASK_TAG):
        if segment.count(ANSWER_TAG) != 1:
            raise ParseError(offset, f"segment needs exactly one {ANSWER_TAG}")
        op, answer = segment.split(ANSWER_TAG)
        if not op.strip():
            raise ParseError(offset, "empty operation segment")
        value = _parse_value(op, answer, offset)
        steps.append(Step(op, value))
        offset += len(segment) + len(SUBTASK_TAG)
    return SoTTrace(tuple(steps), answer_text(steps[-1].value))


# --- filtration ---------------------------------------------------------------

@dataclass(frozen=True)
class FilterConfig:
    max_steps: int = 12
    max_chars: int = 2000
    lowercase: bool = True
    trim: bool = True
    strip_boxes: bool = True

    def __post_init__(self) -> None:
        if self.max_steps < 1 or self.max_chars < 1:
            raise ValueError("max_steps and max_chars must be >= 1")


@dataclass(frozen=True)
class FilterVerdict:
    accepted: bool
    reason: str  # ok | answer_mismatch | malformed_argument | over_length
    detail: str = ""

    def to_dict(self) -> dict:
        return {"accepted": self.accepted, "reason": self.reason, "detail": self.detail}


_OK = FilterVerdict(True, "ok")
_BBOX_IN_ANSWER = re.compile(r"\s*<bbox>\([^)]*\)")


def normalize_answer(text: str, cfg: Optional[FilterConfig] = None) -> str:
    """Answer comparison key: boxes stripped, whitespace collapsed, lowercased."""
    cfg = cfg or FilterConfig()
    if cfg.strip_boxes:
        text = _BBOX_IN_ANSWER.sub("", text)
    if cfg.lowercase:
        text = text.lower()
    text = " ".join(text.split()) if cfg.trim else text
    return text


# Argument-count ranges per operation kind, over top-level comma groups.
_ARITY = {
    "select": (1, 1),
    "relate": (3, 3),
    "filter": (2, 2),
    "verify": (2, 2),
    "verify_rel": (3, 3),
    "exist": (1, 1),
    "and": (2, 2),
    "or": (2, 2),
    "choose": (2, 3),
    "choose_rel": (3, 3),
    "same_pair": (1, 2),
    "different_pair": (1, 2),
    "same": (2, 2),
    "different": (2, 2),
    "common": (2, 2),
    "query": (2, 2),
    "compare": (2, 3),
}

_CATALOG = catalog()


def _split_top_level(args: str) -> List[str]:
    parts: List[str] = []
    depth = 0
    current: List[str] = []
    for ch in args:
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(current).strip())
            current = []
        else:
            current.append(ch)
    tail = "".join(current).strip()
    if tail or parts:
        parts.append(tail)
    return parts


def check_op_grammar(rendered_op: str) -> Optional[str]:
    """None when the operation string is well-formed, else a failure detail."""
    if not rendered_op.endswith(")") or "(" not in rendered_op:
        return f"not of the form name(args): {rendered_op!r}"
    name, args = rendered_op.split("(", 1)
    name = " ".join(name.split())
    args = args[:-1]
    if name not in _CATALOG:
        return f"unknown operation name {name!r}"
    kind, _ = _CATALOG[name]
    parts = _split_top_level(args)
    lo, hi = _ARITY[kind]
    if not lo <= len(parts) <= hi:
        return f"{name} takes {lo}-{hi} arguments, got {len(parts)}"
    if any(not p for p in parts):
        return f"empty argument slot in {rendered_op!r}"
    if kind in ("choose", "choose_rel") and sum("|" in p for p in parts) != 1:
        return f"{name} needs exactly one choice pair"
    return None


def filter_trace(trace: SoTTrace, ground_truth: str, cfg: Optional[FilterConfig] = None) -> FilterVerdict:
    """Apply the three rejection rules to an in-memory trace, in order."""
    cfg = cfg or FilterConfig()
    got = normalize_answer(trace.final_answer, cfg)
    want = normalize_answer(ground_truth, cfg)
    if got != want:
        return FilterVerdict(False, "answer_mismatch", f"final {got!r} != truth {want!r}")
    for k, step in enumerate(trace.steps):
        problem = check_op_grammar(step.rendered_op)
        if problem is not None:
            return FilterVerdict(False, "malformed_argument", f"step {k}: {problem}")
    doc_len = len(serialize(trace))
    if len(trace.steps) > cfg.max_steps:
        return FilterVerdict(
            False, "over_length", f"{len(trace.steps)} steps > max {cfg.max_steps}"
        )
    if doc_len > cfg.max_chars:
        return FilterVerdict(False, "over_length", f"{doc_len} chars > max {cfg.max_chars}")
    return _OK


def filter_document(doc: str, ground_truth: str, cfg: Optional[FilterConfig] = None) -> FilterVerdict:
    """Filter a raw document line; unparseable text is a format rejection."""
    try:
        trace = parse(doc)
    except ParseError as exc:
        return FilterVerdict(False, "malformed_argument", str(exc))
    return filter_trace(trace, ground_truth, cfg or FilterConfig())
