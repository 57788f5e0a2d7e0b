"""Deterministic executor of operation programs over a scene graph.

Executing a program yields a trace: one step per operation, each carrying
the operation string with dependency results inlined plus the step's own
result value (grounded object lists, attribute text, or booleans). The
executor is referentially transparent, so it doubles as the offline
ground-truth generator for the corpus pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Mapping, Optional, Sequence, Tuple, Union

from .lexicon import load_lexicon
from .program import (
    AttributeValue,
    ChoicePair,
    ObjectRef,
    PLACEHOLDER,
    ParsedOp,
    Program,
    RelationSpec,
)
from .scene_graph import NormBBox, SceneGraph, SGObject, name_key, normalize_bbox


# --- values -----------------------------------------------------------------

@dataclass(frozen=True)
class ObjectEntry:
    """One grounded object in a result: display name plus normalized box.

    The source object id is provenance, not wire content, so it is excluded
    from equality; parsed documents reconstruct entries without ids.
    """

    display_name: str
    box: NormBBox
    object_id: str = field(default="", compare=False)


@dataclass(frozen=True)
class ObjectList:
    entries: Tuple[ObjectEntry, ...]


@dataclass(frozen=True)
class AttributeV:
    text: str


@dataclass(frozen=True)
class BooleanV:
    flag: bool


@dataclass(frozen=True)
class NoneV:
    pass


@dataclass(frozen=True)
class ChoiceV:
    text: str


@dataclass(frozen=True)
class SceneRefV:
    """Key-object reference produced only by select(scene): '#k' labels."""

    labels: Tuple[str, ...]
    object_ids: Tuple[str, ...] = field(default=(), compare=False)


NONE = NoneV()
Value = Union[ObjectList, AttributeV, BooleanV, NoneV, ChoiceV, SceneRefV]


# --- steps and traces ---------------------------------------------------------

@dataclass(frozen=True)
class Lit:
    text: str


@dataclass(frozen=True)
class DepToken:
    step: int


Token = Union[Lit, DepToken]


@dataclass(frozen=True)
class StepMeta:
    """Structured origin of a step, kept for alternate renderings."""

    display: str
    tokens: Tuple[Token, ...]


@dataclass(frozen=True)
class Step:
    rendered_op: str
    value: Value
    meta: Optional[StepMeta] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class SoTTrace:
    steps: Tuple[Step, ...]
    final_answer: str


# --- configuration ------------------------------------------------------------

@dataclass(frozen=True)
class PositionRule:
    """Geometric thresholds: box centers compared against image midlines."""

    h_mid: float = 0.5
    v_mid: float = 0.5


@dataclass(frozen=True)
class ExecConfig:
    attribute_lexicon: Mapping[str, str] = field(default_factory=load_lexicon)
    position_rule: PositionRule = PositionRule()
    precision: int = 2
    strict_mode: bool = False
    scene_key_cap: int = 10


class ExecutionError(Exception):
    def __init__(self, step: int, reason: str):
        super().__init__(f"step {step}: {reason}")
        self.step = step
        self.reason = reason


class ChooseAmbiguous(ExecutionError):
    def __init__(self, step: int, choices: Tuple[str, str], reason: str):
        super().__init__(step, reason)
        self.choices = choices


# --- rendering ---------------------------------------------------------------

def render_answer(value: Value) -> str:
    """Wire-format answer segment for a value."""
    if isinstance(value, ObjectList):
        return ", ".join(f"{e.display_name} <bbox>{e.box.render()}" for e in value.entries)
    if isinstance(value, BooleanV):
        return "yes" if value.flag else "no"
    if isinstance(value, NoneV):
        return "None"
    if isinstance(value, (AttributeV, ChoiceV)):
        return value.text
    if isinstance(value, SceneRefV):
        return "there are [" + ", ".join(value.labels) + "]"
    raise TypeError(f"not a Value: {value!r}")


def render_inline(value: Value) -> str:
    """Rendering of a dependency value inlined into an operation string."""
    if isinstance(value, ObjectList):
        return "[" + render_answer(value) + "]"
    if isinstance(value, NoneV):
        return "[None]"
    if isinstance(value, SceneRefV):
        return "[" + ", ".join(value.labels) + "]"
    return render_answer(value)


def answer_text(value: Value) -> str:
    """Box-free textual rendering; this is what final_answer holds."""
    if isinstance(value, ObjectList):
        return ", ".join(e.display_name for e in value.entries)
    return render_answer(value)


def render_op(display: str, tokens: Sequence[Token], values: Sequence[Value]) -> str:
    parts = []
    for tok in tokens:
        if isinstance(tok, Lit):
            parts.append(tok.text)
        else:
            parts.append(render_inline(values[tok.step]))
    return f"{display}({', '.join(parts)})"


# Short directional forms used when a relation choice is the final answer.
_SHORT_RELATION = {
    "to the left of": "left",
    "to the right of": "right",
    "in front of": "front",
    "behind": "behind",
    "above": "above",
    "below": "below",
}

_POSITION_CATEGORIES = ("hposition", "vposition", "position")

_GEOMETRIC_COMPARATIVES = ("taller", "shorter", "higher", "lower", "larger", "smaller")

_AGE_RANK = {"young": 0, "new": 0, "old": 1}

_NEEDS_DEP = frozenset(
    {
        "relate", "filter", "verify", "verify_rel", "exist", "choose",
        "choose_rel", "query", "same", "different", "same_pair",
        "different_pair", "common", "compare",
    }
)


# --- executor ----------------------------------------------------------------

class _Executor:
    def __init__(self, program: Program, sg: SceneGraph, cfg: ExecConfig):
        self.program = program
        self.sg = sg
        self.cfg = cfg
        self.values: List[Value] = []

    # - helpers -

    def _norm(self, obj: SGObject) -> ObjectEntry:
        box = normalize_bbox(obj.bbox, self.sg.width, self.sg.height, self.cfg.precision)
        return ObjectEntry(obj.name, box, obj.object_id)

    def _object_list(self, objects: Sequence[SGObject]) -> Value:
        if not objects:
            return NONE
        return ObjectList(tuple(self._norm(o) for o in objects))

    def _entries(self, value: Value) -> Optional[Tuple[ObjectEntry, ...]]:
        if isinstance(value, ObjectList):
            return value.entries
        if isinstance(value, SceneRefV):
            objs = [self.sg.objects[i] for i in value.object_ids if i in self.sg.objects]
            return tuple(self._norm(o) for o in objs)
        return None

    def _objects_of(self, entries: Sequence[ObjectEntry]) -> List[SGObject]:
        return [self.sg.objects[e.object_id] for e in entries if e.object_id in self.sg.objects]

    def _name_matches(self, obj: SGObject, name: str) -> bool:
        return name == PLACEHOLDER or name_key(obj.name) == name_key(name)

    def _scene_order(self, objects: Sequence[SGObject]) -> List[SGObject]:
        order = {oid: k for k, oid in enumerate(self.sg.objects)}
        return sorted(objects, key=lambda o: order[o.object_id])

    def _check_annotation(self, step: int, parsed: object) -> None:
        if not self.cfg.strict_mode:
            return
        aid = getattr(parsed, "annotation_id", None)
        if aid is None and isinstance(parsed, ChoicePair) and parsed.context is not None:
            aid = parsed.context.annotation_id
        if aid is not None and aid not in self.sg.objects:
            raise ExecutionError(step, f"annotation id {aid} not in scene")

    def _require_entries(self, step: int, value: Value, what: str) -> Optional[Tuple[ObjectEntry, ...]]:
        entries = self._entries(value)
        if entries is None and self.cfg.strict_mode:
            raise ExecutionError(step, f"empty selection feeding {what}")
        return entries

    # - attribute and geometry tests -

    def _position_labels(self, obj: SGObject, category: str) -> List[str]:
        rule = self.cfg.position_rule
        cx = (obj.bbox.x_left + obj.bbox.x_right) / 2
        cy = (obj.bbox.y_top + obj.bbox.y_bottom) / 2
        labels: List[str] = []
        if category in ("hposition", "position"):
            if cx < self.sg.width * rule.h_mid:
                labels.append("left")
            elif cx > self.sg.width * rule.h_mid:
                labels.append("right")
        if category in ("vposition", "position"):
            if cy < self.sg.height * rule.v_mid:
                labels.append("top")
            elif cy > self.sg.height * rule.v_mid:
                labels.append("bottom")
        return labels

    def _attr_test(self, obj: SGObject, category: Optional[str], value: str) -> bool:
        v = value.strip().lower()
        if category in _POSITION_CATEGORIES:
            return v in self._position_labels(obj, category)
        return v in (a.strip().lower() for a in obj.attributes)

    def _category_value(self, obj: SGObject, category: str) -> Optional[str]:
        if category == "name":
            return obj.name
        if category in _POSITION_CATEGORIES:
            labels = self._position_labels(obj, category)
            return labels[0] if len(labels) == 1 else None
        lex = self.cfg.attribute_lexicon
        for attr in obj.attributes:
            if lex.get(attr.strip().lower()) == category:
                return attr.strip().lower()
        return None

    # - relation machinery -

    def _edge_holds(self, subject: SGObject, relation: str, target_id: str) -> bool:
        rel = relation.strip().lower()
        return any(r.strip().lower() == rel and t == target_id for r, t in subject.relations)

    def _relate_candidates(
        self, spec_name: str, relation: str, role: Optional[str], dep_objs: List[SGObject]
    ) -> List[SGObject]:
        dep_ids = {o.object_id for o in dep_objs}
        found: List[SGObject] = []
        for obj in self.sg.objects.values():
            if not self._name_matches(obj, spec_name) or obj.object_id in dep_ids:
                continue
            if role == "o":
                # named entity is the object: dependency objects act as subjects
                if any(self._edge_holds(d, relation, obj.object_id) for d in dep_objs):
                    found.append(obj)
            else:
                if any(self._edge_holds(obj, relation, d.object_id) for d in dep_objs):
                    found.append(obj)
        if found:
            return found
        return self._relate_same_attribute(spec_name, relation, dep_objs)

    def _relate_same_attribute(
        self, spec_name: str, relation: str, dep_objs: List[SGObject]
    ) -> List[SGObject]:
        """Attribute fallback for 'same color/material/shape' relation phrases."""
        rel = relation.strip().lower()
        if rel not in ("same color", "same material", "same shape"):
            return []
        category = rel.split()[1]
        dep_ids = {o.object_id for o in dep_objs}
        targets = {
            v for o in dep_objs if (v := self._category_value(o, category)) is not None
        }
        if not targets:
            return []
        return [
            obj
            for obj in self.sg.objects.values()
            if obj.object_id not in dep_ids
            and self._name_matches(obj, spec_name)
            and self._category_value(obj, category) in targets
        ]

    # - comparison engine -

    def _measure(self, obj: SGObject, comparative: str) -> Optional[float]:
        b = obj.bbox
        if comparative in ("taller", "shorter"):
            return b.y_bottom - b.y_top
        if comparative in ("larger", "smaller"):
            return b.area
        if comparative in ("higher", "lower"):
            return -(b.y_top + b.y_bottom) / 2  # higher means smaller y
        if comparative in ("older", "younger"):
            ranks = [_AGE_RANK[a.strip().lower()] for a in obj.attributes if a.strip().lower() in _AGE_RANK]
            return float(ranks[0]) if ranks else None
        return None

    def _compare_objects(
        self, a: SGObject, b: SGObject, comparative: str
    ) -> Optional[SGObject]:
        ma, mb = self._measure(a, comparative), self._measure(b, comparative)
        if ma is None or mb is None or ma == mb:
            return None
        bigger_wins = comparative in ("taller", "larger", "higher", "older")
        if comparative in ("shorter", "smaller", "lower", "younger"):
            bigger_wins = False
        return a if (ma > mb) == bigger_wins else b

    # - op handlers -

    def exec_op(self, i: int, op: ParsedOp, is_terminal: bool) -> Tuple[Value, Tuple[Token, ...]]:
        deps = list(op.dependencies)
        if op.kind in _NEEDS_DEP and not deps:
            raise ExecutionError(i, f"{op.display} requires a dependency")
        self._check_annotation(i, op.parsed)
        handler = getattr(self, f"_op_{op.kind}", None)
        if handler is None:
            raise ExecutionError(i, f"no handler for kind {op.kind}")
        return handler(i, op, deps, is_terminal)

    def _op_select(self, i, op, deps, is_terminal):
        ref = op.parsed
        assert isinstance(ref, ObjectRef)
        if ref.name.strip().lower() == "scene":
            ids = [
                aid
                for aid in self.program.annotation_ids_after(i)
                if aid in self.sg.objects
            ]
            ids = [o.object_id for o in self._scene_order([self.sg.objects[a] for a in ids])]
            if not ids:
                ids = list(self.sg.objects)[: self.cfg.scene_key_cap]
            labels = tuple(self.sg.label_of(oid) for oid in ids)
            return SceneRefV(labels, tuple(ids)), (Lit("scene"),)
        matches = [o for o in self.sg.objects.values() if self._name_matches(o, ref.name)]
        return self._object_list(matches), (Lit(ref.name),)

    def _op_relate(self, i, op, deps, is_terminal):
        spec = op.parsed
        assert isinstance(spec, RelationSpec)
        dep_value = self.values[deps[0]] if deps else NONE
        tokens: Tuple[Token, ...]
        if spec.role == "o":
            tokens = (DepToken(deps[0]), Lit(spec.relation), Lit(spec.new_entity))
        else:
            tokens = (Lit(spec.new_entity), Lit(spec.relation), DepToken(deps[0]))
        entries = self._require_entries(i, dep_value, "relate")
        if entries is None:
            return NONE, tokens
        dep_objs = self._objects_of(entries)
        found = self._relate_candidates(spec.new_entity, spec.relation, spec.role, dep_objs)
        return self._object_list(self._scene_order(found)), tokens

    def _op_filter(self, i, op, deps, is_terminal):
        val = op.parsed
        assert isinstance(val, AttributeValue)
        tokens = (DepToken(deps[0]), Lit(val.value))
        entries = self._require_entries(i, self.values[deps[0]], "filter")
        if entries is None:
            return NONE, tokens
        kept = [
            o for o in self._objects_of(entries) if self._attr_test(o, op.category, val.value)
        ]
        return self._object_list(kept), tokens

    def _op_verify(self, i, op, deps, is_terminal):
        val = op.parsed
        assert isinstance(val, AttributeValue)
        tokens = (DepToken(deps[0]), Lit(val.value))
        entries = self._entries(self.values[deps[0]])
        if not entries:
            return BooleanV(False), tokens
        objs = self._objects_of(entries)
        ok = bool(objs) and all(self._attr_test(o, op.category, val.value) for o in objs)
        return BooleanV(ok), tokens

    def _op_verify_rel(self, i, op, deps, is_terminal):
        spec = op.parsed
        assert isinstance(spec, RelationSpec)
        if spec.role == "o":
            tokens = (DepToken(deps[0]), Lit(spec.relation), Lit(spec.new_entity))
        else:
            tokens = (Lit(spec.new_entity), Lit(spec.relation), DepToken(deps[0]))
        entries = self._entries(self.values[deps[0]])
        if not entries:
            return BooleanV(False), tokens
        dep_objs = self._objects_of(entries)
        named = [o for o in self.sg.objects.values() if self._name_matches(o, spec.new_entity)]
        if spec.role == "o":
            ok = all(
                any(self._edge_holds(d, spec.relation, n.object_id) for n in named)
                for d in dep_objs
            )
        else:
            ok = all(
                any(self._edge_holds(n, spec.relation, d.object_id) for n in named)
                for d in dep_objs
            )
        return BooleanV(ok and bool(dep_objs)), tokens

    def _op_exist(self, i, op, deps, is_terminal):
        value = self.values[deps[0]]
        entries = self._entries(value)
        return BooleanV(bool(entries)), (DepToken(deps[0]),)

    def _truthy(self, value: Value) -> bool:
        return isinstance(value, BooleanV) and value.flag

    def _op_and(self, i, op, deps, is_terminal):
        if len(deps) != 2:
            raise ExecutionError(i, "and requires two dependencies")
        flags = [self._truthy(self.values[d]) for d in deps]
        return BooleanV(all(flags)), (DepToken(deps[0]), DepToken(deps[1]))

    def _op_or(self, i, op, deps, is_terminal):
        if len(deps) != 2:
            raise ExecutionError(i, "or requires two dependencies")
        flags = [self._truthy(self.values[d]) for d in deps]
        return BooleanV(any(flags)), (DepToken(deps[0]), DepToken(deps[1]))

    def _op_choose(self, i, op, deps, is_terminal):
        pair = op.parsed
        assert isinstance(pair, ChoicePair)
        tokens = tuple(DepToken(d) for d in deps) + (Lit(f"{pair.left}|{pair.right}"),)
        groups = [self._require_entries(i, self.values[d], "choose") for d in deps]
        entries = tuple(e for g in groups if g for e in g)
        if not entries:
            return NONE, tokens
        objs = self._objects_of(entries)
        if op.category in _GEOMETRIC_COMPARATIVES + ("older", "younger"):
            return self._choose_comparative(i, op, pair, objs), tokens
        if op.category in ("healthier", "less healthy"):
            return self._ambiguous(i, pair, "no rule for this comparative"), tokens

        def test(choice: str) -> bool:
            if op.category == "name":
                return all(name_key(o.name) == name_key(choice) for o in objs)
            return all(self._attr_test(o, op.category, choice) for o in objs)

        return self._pick(i, pair, test(pair.left), test(pair.right)), tokens

    def _choose_comparative(self, i, op, pair, objs):
        def resolve(choice: str) -> Optional[SGObject]:
            for o in objs:
                if self._name_matches(o, choice):
                    return o
            for o in self.sg.objects.values():
                if self._name_matches(o, choice):
                    return o
            return None

        a, b = resolve(pair.left), resolve(pair.right)
        if a is None or b is None:
            return self._ambiguous(i, pair, "choice names unresolved")
        winner = self._compare_objects(a, b, op.category)
        if winner is None:
            return self._ambiguous(i, pair, "comparison unresolved")
        return ChoiceV(pair.left if winner is a else pair.right)

    def _op_choose_rel(self, i, op, deps, is_terminal):
        pair = op.parsed
        assert isinstance(pair, ChoicePair)
        ctx = pair.context or RelationSpec(PLACEHOLDER, "")
        if ctx.role == "o":
            tokens = (DepToken(deps[0]), Lit(f"{pair.left}|{pair.right}"), Lit(ctx.new_entity))
        else:
            tokens = (Lit(ctx.new_entity), Lit(f"{pair.left}|{pair.right}"), DepToken(deps[0]))
        entries = self._require_entries(i, self.values[deps[0]], "choose rel")
        if entries is None:
            return NONE, tokens
        dep_objs = self._objects_of(entries)
        named = [o for o in self.sg.objects.values() if self._name_matches(o, ctx.new_entity)]

        def holds(relation: str) -> bool:
            if ctx.role == "o":
                return any(
                    self._edge_holds(d, relation, n.object_id) for d in dep_objs for n in named
                )
            return any(
                self._edge_holds(n, relation, d.object_id) for n in named for d in dep_objs
            )

        value = self._pick(i, pair, holds(pair.left), holds(pair.right))
        if is_terminal and isinstance(value, ChoiceV):
            value = ChoiceV(_SHORT_RELATION.get(value.text.strip().lower(), value.text))
        return value, tokens

    def _pick(self, i: int, pair: ChoicePair, left_ok: bool, right_ok: bool) -> Value:
        if left_ok == right_ok:
            return self._ambiguous(
                i, pair, "both choices hold" if left_ok else "neither choice holds"
            )
        return ChoiceV(pair.left if left_ok else pair.right)

    def _ambiguous(self, i: int, pair: ChoicePair, reason: str) -> Value:
        if self.cfg.strict_mode:
            raise ChooseAmbiguous(i, (pair.left, pair.right), reason)
        return NONE

    def _side_values(self, i, deps, category: str) -> Optional[Tuple[str, str]]:
        """Category values for the two comparands of pairwise same/different."""
        groups = [self._require_entries(i, self.values[d], "same/different") for d in deps]
        if len(deps) == 1 and groups[0] and len(groups[0]) >= 2:
            groups = [groups[0][:1], groups[0][1:2]]
        if len(groups) != 2 or not groups[0] or not groups[1]:
            return None
        a = self._objects_of(groups[0])
        b = self._objects_of(groups[1])
        if not a or not b:
            return None
        va = self._category_value(a[0], category)
        vb = self._category_value(b[0], category)
        if va is None or vb is None:
            return None
        return va, vb

    def _op_same_pair(self, i, op, deps, is_terminal):
        tokens = tuple(DepToken(d) for d in deps)
        if op.category == "attr":
            shared = self._shared_values(i, deps)
            return (BooleanV(bool(shared)) if shared is not None else BooleanV(False)), tokens
        sides = self._side_values(i, deps, op.category)
        if sides is None:
            return BooleanV(False), tokens
        return BooleanV(sides[0] == sides[1]), tokens

    def _op_different_pair(self, i, op, deps, is_terminal):
        value, tokens = self._op_same_pair(i, op, deps, is_terminal)
        if isinstance(value, BooleanV):
            value = BooleanV(not value.flag)
        return value, tokens

    def _list_values(self, i, op, deps) -> Optional[List[str]]:
        val = op.parsed
        assert isinstance(val, AttributeValue)
        entries = self._require_entries(i, self.values[deps[0]], op.kind) if deps else None
        if not entries:
            return None
        objs = self._objects_of(entries)
        resolved = [self._category_value(o, val.value.strip().lower()) for o in objs]
        if any(v is None for v in resolved) or not resolved:
            return None
        return resolved  # type: ignore[return-value]

    def _op_same(self, i, op, deps, is_terminal):
        tokens = (DepToken(deps[0]), Lit(op.parsed.value)) if deps else (Lit(op.parsed.value),)
        values = self._list_values(i, op, deps)
        if values is None:
            return BooleanV(False), tokens
        return BooleanV(len(set(values)) == 1), tokens

    def _op_different(self, i, op, deps, is_terminal):
        tokens = (DepToken(deps[0]), Lit(op.parsed.value)) if deps else (Lit(op.parsed.value),)
        values = self._list_values(i, op, deps)
        if values is None:
            return BooleanV(False), tokens
        return BooleanV(len(set(values)) == len(values)), tokens

    def _shared_values(self, i, deps) -> Optional[List[str]]:
        groups = [self._require_entries(i, self.values[d], "common") for d in deps]
        if len(groups) != 2 or not groups[0] or not groups[1]:
            return None
        a = self._objects_of(groups[0])
        b = self._objects_of(groups[1])
        if not a or not b:
            return None
        attrs_a = {x.strip().lower() for o in a for x in o.attributes}
        attrs_b = {x.strip().lower() for o in b for x in o.attributes}
        return sorted(attrs_a & attrs_b)

    def _op_common(self, i, op, deps, is_terminal):
        tokens = tuple(DepToken(d) for d in deps)
        shared = self._shared_values(i, deps)
        if not shared:
            if self.cfg.strict_mode and shared is not None:
                raise ExecutionError(i, "no common attribute")
            return NONE, tokens
        rank = {"color": 0, "material": 1, "shape": 2}
        lex = self.cfg.attribute_lexicon

        def key(v: str):
            cat = lex.get(v)
            return (rank.get(cat, 3), cat or "~", v)

        winner = min(shared, key=key)
        category = lex.get(winner)
        return AttributeV(category if category else winner), tokens

    def _op_query(self, i, op, deps, is_terminal):
        val = op.parsed
        assert isinstance(val, AttributeValue)
        category = val.value.strip().lower()
        tokens = (DepToken(deps[0]), Lit(val.value))
        entries = self._require_entries(i, self.values[deps[0]], "query")
        if not entries:
            return NONE, tokens
        objs = self._objects_of(entries)
        for obj in objs:
            resolved = self._category_value(obj, category)
            if resolved is not None:
                return AttributeV(resolved), tokens
        if self.cfg.strict_mode:
            raise ExecutionError(i, f"cannot resolve category {category!r}")
        return NONE, tokens

    def _op_compare(self, i, op, deps, is_terminal):
        val = op.parsed
        assert isinstance(val, AttributeValue)
        word = val.value.strip().lower()
        tokens = tuple(DepToken(d) for d in deps) + (Lit(val.value),)
        groups = [self._require_entries(i, self.values[d], "compare") for d in deps]
        objs = [o for g in groups if g for o in self._objects_of(g)]
        if len(objs) < 2:
            return NONE, tokens
        winner = self._compare_objects(objs[0], objs[1], word)
        if winner is None:
            if self.cfg.strict_mode:
                raise ExecutionError(i, f"cannot resolve comparative {word!r}")
            return NONE, tokens
        return AttributeV(winner.name), tokens


def execute(program: Program, sg: SceneGraph, cfg: Optional[ExecConfig] = None) -> SoTTrace:
    """Run a program over a scene graph and return its trace.

    Identical inputs produce identical traces. In strict mode unresolvable
    steps raise ExecutionError; otherwise NoneV propagates and boolean ops
    treat it as "no".
    """
    cfg = cfg or ExecConfig()
    ex = _Executor(program, sg, cfg)
    steps: List[Step] = []
    last = len(program.ops) - 1
    for i, op in enumerate(program.ops):
        value, tokens = ex.exec_op(i, op, is_terminal=(i == last))
        rendered = render_op(op.display, tokens, ex.values)
        ex.values.append(value)
        steps.append(Step(rendered, value, StepMeta(op.display, tokens)))
    return SoTTrace(tuple(steps), answer_text(steps[-1].value))
