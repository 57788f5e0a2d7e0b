"""Typed programs from raw GQA operation records.

Raw operations carry a free-form name ("verify color", "choose rel"), integer
dependency indices, and an argument string in a small micro-grammar: object
names with optional annotation ids, relation triples with a subject/object
role marker, choice pairs joined by '|', and bare attribute values. This
module turns them into a typed dependency DAG with a checked operation
catalog.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .scene_graph import RawOp

PLACEHOLDER = "_"


class ProgramError(Exception):
    """Base class for program and argument parsing failures."""


class UnknownOperation(ProgramError):
    def __init__(self, name: str, index: int):
        super().__init__(f"op {index}: unknown operation {name!r}")
        self.name = name
        self.index = index


class MalformedProgram(ProgramError):
    pass


class ArgumentError(ProgramError):
    """Base for argument-grammar failures; ``index`` set when known."""

    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message if index is None else f"op {index}: {message}")
        self.index = index


class MissingArgument(ArgumentError):
    pass


class MalformedChoice(ArgumentError):
    pass


class MalformedArgument(ArgumentError):
    pass


@dataclass(frozen=True)
class ObjectRef:
    name: str
    annotation_id: Optional[str] = None


@dataclass(frozen=True)
class RelationSpec:
    """A named entity, a relation, and which side of it the entity sits on.

    role "s": the entity is the subject, the dependency result fills the
    object slot. role "o": the entity is the object, the dependency fills
    the subject slot. The entity may be the placeholder "_".
    """

    new_entity: str
    relation: str
    role: Optional[str] = None
    annotation_id: Optional[str] = None


@dataclass(frozen=True)
class ChoicePair:
    left: str
    right: str
    context: Optional[RelationSpec] = None
    annotation_id: Optional[str] = None


@dataclass(frozen=True)
class AttributeValue:
    value: str


@dataclass(frozen=True)
class Empty:
    pass


EMPTY = Empty()

ParsedArg = Union[ObjectRef, RelationSpec, ChoicePair, AttributeValue, Empty]


# --- operation catalog -----------------------------------------------------

FILTER_CATEGORIES = (
    "realism", "brightness", "texture", "depth", "weight", "orientation",
    "event", "liquid", "company", "race", "hardness", "room", "pattern",
    "length", "material", "hposition", "vposition", "position", "size",
    "pose", "activity", "shape", "height", "age", "sportActivity",
    "face expression", "cleanliness", "sport", "weather", "state",
    "thickness", "opaqness", "flavor", "fatness", "width", "tone", "gender",
    "color",
)

VERIFY_CATEGORIES = (
    "state", "pose", "height", "location", "position", "size", "material",
    "length", "weather", "shape", "place", "pattern", "cleanliness",
    "thickness", "activity", "tone", "hardness", "face expression", "age",
    "sportActivity", "width", "fatness", "opaqness", "weight", "depth",
    "gender", "company", "realism", "type", "flavor", "brightness",
    "texture", "color", "race", "room",
)

CHOOSE_CATEGORIES = (
    "weather", "hposition", "vposition", "color", "name", "material",
    "location", "size", "place", "younger", "older", "length", "pose",
    "activity", "height", "less healthy", "sportActivity", "shape",
    "healthier", "cleanliness", "state", "thickness", "pattern", "fatness",
    "shorter", "higher", "company", "taller", "realism", "larger",
    "hardness", "smaller", "brightness", "lower", "age", "weight", "depth",
    "flavor", "race", "opaqness", "gender", "face expression", "tone",
    "width",
)

PAIR_CATEGORIES = ("color", "shape", "material", "attr")

_SINGLE_OPS: Dict[str, Tuple[str, Optional[str]]] = {
    "select": ("select", None),
    "relate": ("relate", None),
    "exist": ("exist", None),
    "and": ("and", None),
    "or": ("or", None),
    "common": ("common", None),
    "query": ("query", None),
    "compare": ("compare", None),
    "verify rel": ("verify_rel", None),
    "choose rel": ("choose_rel", None),
    "filter": ("filter", None),
    "verify": ("verify", None),
    "choose": ("choose", None),
    "same": ("same", None),
    "different": ("different", None),
}


def catalog() -> Dict[str, Tuple[str, Optional[str]]]:
    """Full operation-name table: display name -> (kind, category)."""
    table = dict(_SINGLE_OPS)
    for cat in FILTER_CATEGORIES:
        table[f"filter {cat}"] = ("filter", cat)
    for cat in VERIFY_CATEGORIES:
        table[f"verify {cat}"] = ("verify", cat)
    for cat in CHOOSE_CATEGORIES:
        table[f"choose {cat}"] = ("choose", cat)
    for cat in PAIR_CATEGORIES:
        table[f"same {cat}"] = ("same_pair", cat)
        table[f"different {cat}"] = ("different_pair", cat)
    return table


_CATALOG = catalog()

# Kinds whose argument slot must be non-empty.
_REQUIRES_ARGUMENT = {
    "select", "relate", "verify", "verify_rel", "filter", "choose",
    "choose_rel", "query", "compare", "same", "different",
}

_ID_SUFFIX = re.compile(r"\s*\(([^()]*)\)\s*$")


@dataclass(frozen=True)
class ParsedOp:
    kind: str
    category: Optional[str]
    display: str
    parsed: ParsedArg
    dependencies: Tuple[int, ...]


@dataclass(frozen=True)
class Program:
    ops: Tuple[ParsedOp, ...]

    @property
    def terminal(self) -> ParsedOp:
        return self.ops[-1]

    def annotation_ids_after(self, index: int) -> List[str]:
        """Annotation ids referenced by ops strictly after ``index``."""
        ids: List[str] = []
        for op in self.ops[index + 1 :]:
            arg = op.parsed
            aid = getattr(arg, "annotation_id", None)
            if aid is None and isinstance(arg, ChoicePair) and arg.context is not None:
                aid = arg.context.annotation_id
            if aid is not None and aid not in ids:
                ids.append(aid)
        return ids


def split_name(name: str) -> Tuple[str, Optional[str], str]:
    """Resolve an operation name into (kind, category, display)."""
    display = " ".join(name.split())
    if display not in _CATALOG:
        raise KeyError(display)
    kind, category = _CATALOG[display]
    return kind, category, display


def _strip_annotation(text: str) -> Tuple[str, Optional[str]]:
    m = _ID_SUFFIX.search(text)
    if not m:
        return text.strip(), None
    token = m.group(1).strip()
    body = text[: m.start()].strip()
    return body, (token if token and token != "-" else None)


def _split_role(parts: List[str]) -> Tuple[List[str], Optional[str]]:
    """Pull a trailing role marker off comma-split parts.

    Accepts both the comma-attached form (",s") and the space-attached form
    ("to the left of s").
    """
    if parts and parts[-1] in ("s", "o"):
        return parts[:-1], parts[-1]
    if parts and (parts[-1].endswith(" s") or parts[-1].endswith(" o")):
        role = parts[-1][-1]
        return parts[:-1] + [parts[-1][:-2].strip()], role
    return parts, None


def parse_argument(kind: str, category: Optional[str], argument: str) -> ParsedArg:
    """Parse one verbatim argument string for an op of the given kind."""
    text = argument.strip()
    if kind in ("and", "or", "exist", "same_pair", "different_pair", "common"):
        return EMPTY
    if not text or text == "?":
        if kind in _REQUIRES_ARGUMENT:
            raise MissingArgument(f"{kind} requires an argument")
        return EMPTY

    body, annotation_id = _strip_annotation(text)
    if not body:
        raise MissingArgument(f"{kind} requires an argument")

    if "|" in body:
        return _parse_choice(kind, body, annotation_id)
    if kind in ("choose", "choose_rel"):
        raise MalformedChoice(f"expected 'a|b' choices in {argument!r}")

    if "," in body:
        return _parse_relation(kind, body, annotation_id, argument)

    if kind in ("relate", "verify_rel"):
        raise MalformedArgument(f"expected 'entity,relation[,role]' in {argument!r}")
    if kind == "select":
        return ObjectRef(body, annotation_id)
    return AttributeValue(body)


def _parse_choice(kind: str, body: str, annotation_id: Optional[str]) -> ChoicePair:
    if body.count("|") != 1:
        raise MalformedChoice(f"expected exactly one '|' in {body!r}")
    if "," not in body:
        left, right = (s.strip() for s in body.split("|"))
        if not left or not right:
            raise MalformedChoice(f"empty choice in {body!r}")
        return ChoicePair(left, right, annotation_id=annotation_id)

    parts, role = _split_role([p.strip() for p in body.split(",")])
    choice_idx = [i for i, p in enumerate(parts) if "|" in p]
    if len(choice_idx) != 1:
        raise MalformedChoice(f"cannot locate the choice pair in {body!r}")
    left, right = (s.strip() for s in parts[choice_idx[0]].split("|"))
    if not left or not right:
        raise MalformedChoice(f"empty choice in {body!r}")
    others = [p for i, p in enumerate(parts) if i != choice_idx[0] and p]
    entity = others[0] if others else PLACEHOLDER
    context = RelationSpec(entity, "", role, annotation_id)
    return ChoicePair(left, right, context=context, annotation_id=annotation_id)


def _parse_relation(
    kind: str, body: str, annotation_id: Optional[str], verbatim: str
) -> RelationSpec:
    parts, role = _split_role([p.strip() for p in body.split(",")])
    if len(parts) < 2 or not parts[0] or not all(parts[1:]):
        raise MalformedArgument(f"unrecognized argument shape {verbatim!r}")
    relation = ", ".join(parts[1:])
    return RelationSpec(parts[0], relation, role, annotation_id)


def render_argument(parsed: ParsedArg) -> str:
    """Canonical argument string that reparses to an equal ParsedArg."""
    suffix = ""
    aid = getattr(parsed, "annotation_id", None)
    if aid is not None:
        suffix = f" ({aid})"
    if isinstance(parsed, Empty):
        return ""
    if isinstance(parsed, ObjectRef):
        return f"{parsed.name}{suffix}"
    if isinstance(parsed, AttributeValue):
        return parsed.value
    if isinstance(parsed, RelationSpec):
        role = f",{parsed.role}" if parsed.role else ""
        return f"{parsed.new_entity},{parsed.relation}{role}{suffix}"
    if isinstance(parsed, ChoicePair):
        choices = f"{parsed.left}|{parsed.right}"
        if parsed.context is None:
            return f"{choices}{suffix}"
        role = f",{parsed.context.role}" if parsed.context.role else ""
        return f"{parsed.context.new_entity},{choices}{role}{suffix}"
    raise TypeError(f"not a ParsedArg: {parsed!r}")


def parse_program(raw: Sequence[RawOp]) -> Program:
    """Parse raw operations into a typed program and check its DAG shape.

    Every op name must be in the catalog, dependencies must reference
    strictly earlier ops, and every non-terminal op must feed a later one.
    """
    if not raw:
        raise MalformedProgram("empty program")

    ops: List[ParsedOp] = []
    for i, op in enumerate(raw):
        try:
            kind, category, display = split_name(op.name)
        except KeyError:
            raise UnknownOperation(op.name, i) from None
        deps = tuple(op.dependencies)
        if any(d < 0 or d >= i for d in deps) or list(deps) != sorted(set(deps)):
            raise MalformedProgram(f"op {i}: bad dependencies {deps}")
        try:
            parsed = parse_argument(kind, category, op.argument)
        except ArgumentError as exc:
            raise type(exc)(str(exc), index=i) from None
        ops.append(ParsedOp(kind, category, display, parsed, deps))

    used = {d for op in ops for d in op.dependencies}
    unused = [i for i in range(len(ops) - 1) if i not in used]
    if unused:
        raise MalformedProgram(f"non-terminal ops {unused} feed nothing")
    return Program(tuple(ops))
