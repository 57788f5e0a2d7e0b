"""Scene-graph and question data model plus GQA-format ingestion.

Scene graphs arrive as GQA annotation JSON (objects keyed by id, boxes in
x/y/w/h form, relations as subject-side edge lists). Boxes are converted to
corner form at load time; everything downstream is corner-based.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple


@dataclass(frozen=True)
class BBox:
    """Absolute-pixel box: top-left and bottom-right corners."""

    x_left: float
    y_top: float
    x_right: float
    y_bottom: float

    def __post_init__(self) -> None:
        if min(self.x_left, self.y_top, self.x_right, self.y_bottom) < 0:
            raise ValueError(f"negative coordinate in {self}")
        if self.x_left > self.x_right or self.y_top > self.y_bottom:
            raise ValueError(f"inverted corners in {self}")

    @property
    def area(self) -> float:
        return (self.x_right - self.x_left) * (self.y_bottom - self.y_top)


@dataclass(frozen=True)
class NormBBox:
    """Box with every coordinate divided by the larger image dimension.

    Components live in [0, 1] and are pre-rounded to the precision used at
    construction, so rendering them is just the shortest float repr.
    """

    x_l: float
    y_l: float
    x_r: float
    y_r: float

    def __post_init__(self) -> None:
        for c in (self.x_l, self.y_l, self.x_r, self.y_r):
            if not 0.0 <= c <= 1.0:
                raise ValueError(f"component {c} outside [0, 1]")
        if self.x_l > self.x_r or self.y_l > self.y_r:
            raise ValueError(f"inverted corners in {self}")

    def render(self) -> str:
        return f"({self.x_l}, {self.y_l}, {self.x_r}, {self.y_r})"


@dataclass(frozen=True)
class SGObject:
    """One annotated object: name, attribute strings, box, outgoing relations.

    ``relations`` holds (relation_name, target_object_id) pairs in file order,
    with this object as the subject of every pair.
    """

    object_id: str
    name: str
    attributes: Tuple[str, ...]
    bbox: BBox
    relations: Tuple[Tuple[str, str], ...] = ()


@dataclass(frozen=True)
class SceneGraph:
    image_id: str
    width: int
    height: int
    objects: Dict[str, SGObject]

    def object_order(self) -> List[str]:
        """Object ids in scene (file) order."""
        return list(self.objects)

    def label_of(self, object_id: str) -> str:
        """'#k' label of an object, 1-based in scene order."""
        return f"#{self.object_order().index(object_id) + 1}"


@dataclass(frozen=True)
class RawOp:
    """One verbatim operation record: name, dependency indices, argument."""

    name: str
    dependencies: Tuple[int, ...]
    argument: str


@dataclass(frozen=True)
class QuestionRecord:
    question_id: str
    image_id: str
    text: str
    answer: str
    question_type: str
    raw_ops: Tuple[RawOp, ...]


@dataclass(frozen=True)
class IngestWarning:
    """One non-fatal ingestion finding, rendered as a single report line."""

    source_id: str
    code: str
    detail: str

    def render(self) -> str:
        return f"{self.source_id}\t{self.code}\t{self.detail}"


def round_half_away(value: float, precision: int) -> float:
    """Round half away from zero at ``precision`` decimals (not banker's)."""
    q = Decimal(1).scaleb(-precision)
    return float(Decimal(str(value)).quantize(q, rounding=ROUND_HALF_UP))


def normalize_bbox(b: BBox, width: int, height: int, precision: int = 2) -> NormBBox:
    """Divide every coordinate by the larger image dimension and round.

    Coordinates that overshoot the image clamp to 1.0 rather than fail;
    real annotations contain slight overshoots.
    """
    denom = Decimal(max(width, height))
    q = Decimal(1).scaleb(-precision)

    def norm(c: float) -> float:
        d = (Decimal(str(c)) / denom).quantize(q, rounding=ROUND_HALF_UP)
        return min(float(d), 1.0)

    return NormBBox(norm(b.x_left), norm(b.y_top), norm(b.x_right), norm(b.y_bottom))


def name_key(name: str) -> str:
    """Plural-insensitive comparison key: lowercase, one trailing 's' stripped.

    Irregular plurals ("people"/"person") are a known miss of this rule.
    """
    key = name.strip().lower()
    if key.endswith("s") and len(key) > 1:
        key = key[:-1]
    return key


def objects_by_name(sg: SceneGraph, name: str) -> List[SGObject]:
    """All objects whose name matches under plural-insensitive normalization."""
    key = name_key(name)
    return [obj for obj in sg.objects.values() if name_key(obj.name) == key]


def load_scene_graphs(
    path: str | Path, warnings: Optional[List[IngestWarning]] = None
) -> Dict[str, SceneGraph]:
    """Load a GQA scene-graph annotation file into corner-form scene graphs.

    Dangling relation targets are dropped per edge with a warning; the object
    itself is kept. Out-of-bounds and zero-area boxes are flagged, not fatal.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed scene-graph document {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValueError(f"malformed scene-graph document {path}: expected object map")

    sink = warnings if warnings is not None else []
    graphs: Dict[str, SceneGraph] = {}
    for image_id, entry in raw.items():
        graphs[str(image_id)] = _load_one_scene(str(image_id), entry, sink)
    return graphs


def _load_one_scene(image_id: str, entry: object, sink: List[IngestWarning]) -> SceneGraph:
    if not isinstance(entry, dict):
        raise ValueError(f"scene {image_id}: expected object, got {type(entry).__name__}")
    try:
        width = int(entry["width"])
        height = int(entry["height"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"scene {image_id}: missing or bad width/height") from exc
    if width <= 0 or height <= 0:
        raise ValueError(f"scene {image_id}: non-positive dimensions {width}x{height}")

    raw_objects = entry.get("objects", {})
    if not isinstance(raw_objects, dict):
        raise ValueError(f"scene {image_id}: objects must be an id map")

    objects: Dict[str, SGObject] = {}
    pending: Dict[str, List[Tuple[str, str]]] = {}
    for oid, obj in raw_objects.items():
        oid = str(oid)
        if not isinstance(obj, dict) or "name" not in obj:
            raise ValueError(f"scene {image_id}: object {oid} malformed")
        try:
            x, y = float(obj["x"]), float(obj["y"])
            w, h = float(obj["w"]), float(obj["h"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"scene {image_id}: object {oid} missing x/y/w/h") from exc
        bbox = BBox(x, y, x + w, y + h)
        if bbox.area == 0:
            sink.append(IngestWarning(image_id, "zero_area", f"object {oid} has a zero-area box"))
        if bbox.x_right > width or bbox.y_bottom > height:
            sink.append(
                IngestWarning(
                    image_id,
                    "out_of_bounds",
                    f"object {oid} box exceeds image {width}x{height}",
                )
            )
        attributes = tuple(str(a) for a in obj.get("attributes") or ())
        rels: List[Tuple[str, str]] = []
        for rel in obj.get("relations") or ():
            if not isinstance(rel, dict) or "name" not in rel or "object" not in rel:
                sink.append(
                    IngestWarning(image_id, "bad_relation", f"object {oid} has a malformed relation")
                )
                continue
            rels.append((str(rel["name"]), str(rel["object"])))
        pending[oid] = rels
        objects[oid] = SGObject(oid, str(obj["name"]), attributes, bbox, ())

    # Resolve relation targets now that every object id is known.
    for oid, rels in pending.items():
        kept = []
        for rel_name, target in rels:
            if target not in objects:
                sink.append(
                    IngestWarning(
                        image_id,
                        "dangling_relation",
                        f"object {oid} relation '{rel_name}' targets absent id {target}",
                    )
                )
                continue
            kept.append((rel_name, target))
        objects[oid] = SGObject(
            oid, objects[oid].name, objects[oid].attributes, objects[oid].bbox, tuple(kept)
        )

    return SceneGraph(image_id, width, height, objects)


def load_questions(
    path: str | Path, warnings: Optional[List[IngestWarning]] = None
) -> List[QuestionRecord]:
    """Load a GQA question file; records come back in file order.

    Raw operations are kept verbatim (no argument parsing here). Records
    missing mandatory fields, with empty operation lists, or with invalid
    dependency indices are skipped with a counted warning.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed question document {path}: {exc}") from exc

    if isinstance(raw, dict):
        items: Iterable[Tuple[str, object]] = raw.items()
    elif isinstance(raw, list):
        items = ((str(rec.get("questionId", i)), rec) for i, rec in enumerate(raw))
    else:
        raise ValueError(f"malformed question document {path}: expected map or list")

    sink = warnings if warnings is not None else []
    records: List[QuestionRecord] = []
    for qid, rec in items:
        parsed = _load_one_question(str(qid), rec, sink)
        if parsed is not None:
            records.append(parsed)
    return records


def _load_one_question(
    qid: str, rec: object, sink: List[IngestWarning]
) -> Optional[QuestionRecord]:
    if not isinstance(rec, dict):
        sink.append(IngestWarning(qid, "malformed_record", "record is not an object"))
        return None
    missing = [k for k in ("imageId", "question", "answer") if k not in rec]
    if missing:
        sink.append(IngestWarning(qid, "missing_field", f"record lacks {', '.join(missing)}"))
        return None
    ops_raw = rec.get("semantic") or []
    if not isinstance(ops_raw, list) or not ops_raw:
        sink.append(IngestWarning(qid, "empty_program", "record has no operations"))
        return None

    ops: List[RawOp] = []
    for i, op in enumerate(ops_raw):
        if not isinstance(op, dict) or "operation" not in op:
            sink.append(IngestWarning(qid, "malformed_record", f"operation {i} malformed"))
            return None
        deps = tuple(int(d) for d in op.get("dependencies") or ())
        if any(d < 0 or d >= i for d in deps) or list(deps) != sorted(set(deps)):
            sink.append(
                IngestWarning(qid, "bad_dependencies", f"operation {i} dependencies {deps}")
            )
            return None
        ops.append(RawOp(str(op["operation"]), deps, str(op.get("argument", ""))))

    types = rec.get("types") or {}
    qtype = "unknown"
    if isinstance(types, dict):
        qtype = str(types.get("detailed") or types.get("structural") or "unknown")
    elif rec.get("type"):
        qtype = str(rec["type"])

    return QuestionRecord(
        question_id=qid,
        image_id=str(rec["imageId"]),
        text=str(rec["question"]),
        answer=str(rec["answer"]),
        question_type=qtype,
        raw_ops=tuple(ops),
    )


def sample_balanced(
    records: Sequence[QuestionRecord], quota_per_type: int, seed: int
) -> List[QuestionRecord]:
    """Pick up to ``quota_per_type`` records per question type, seeded.

    Types are processed in sorted order and each group is sampled with one
    seeded shuffle, so identical inputs and seed give identical output.
    """
    if quota_per_type < 1:
        raise ValueError("quota_per_type must be >= 1")
    by_type: Dict[str, List[QuestionRecord]] = {}
    for rec in records:
        by_type.setdefault(rec.question_type, []).append(rec)

    rng = random.Random(seed)
    chosen: List[QuestionRecord] = []
    for qtype in sorted(by_type):
        group = list(by_type[qtype])
        rng.shuffle(group)
        chosen.extend(group[:quota_per_type])
    return chosen
