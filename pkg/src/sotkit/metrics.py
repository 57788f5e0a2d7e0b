"""Grounding-adapted answer, box, and trace metrics.

True positives require both a correct answer and an above-threshold box
overlap; every classifiable record is either TP or FP, and recall divides by
all evaluated records. Records missing either box are excluded from box
metrics and surfaced as coverage counts.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .interpreter import SoTTrace
from .scene_graph import NormBBox
from .sot import normalize_answer


@dataclass(frozen=True)
class EvalRecord:
    question_id: str
    predicted_answer: str
    gold_answer: str
    predicted_bbox: Optional[NormBBox] = None
    gold_bbox: Optional[NormBBox] = None
    predicted_trace: Optional[SoTTrace] = None
    gold_trace: Optional[SoTTrace] = None

    @property
    def answer_correct(self) -> bool:
        return normalize_answer(self.predicted_answer) == normalize_answer(self.gold_answer)

    @property
    def has_boxes(self) -> bool:
        return self.predicted_bbox is not None and self.gold_bbox is not None


def iou(a: NormBBox, b: NormBBox) -> float:
    """Intersection over union; zero-area union is 0 by convention."""
    ix = max(0.0, min(a.x_r, b.x_r) - max(a.x_l, b.x_l))
    iy = max(0.0, min(a.y_r, b.y_r) - max(a.y_l, b.y_l))
    inter = ix * iy
    area_a = (a.x_r - a.x_l) * (a.y_r - a.y_l)
    area_b = (b.x_r - b.x_l) * (b.y_r - b.y_l)
    union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def answer_accuracy(records: Sequence[EvalRecord]) -> float:
    if not records:
        return 0.0
    return sum(r.answer_correct for r in records) / len(records)


def mean_iou_correct(records: Sequence[EvalRecord]) -> float:
    """Mean IoU over answer-correct records carrying both boxes; empty -> 0."""
    value, _ = _mean_iou_correct(records)
    return value


def _mean_iou_correct(records: Sequence[EvalRecord]) -> Tuple[float, bool]:
    scores = [
        iou(r.predicted_bbox, r.gold_bbox)
        for r in records
        if r.answer_correct and r.has_boxes
    ]
    if not scores:
        return 0.0, True
    return sum(scores) / len(scores), False


def classify(record: EvalRecord, threshold: float, strict_greater: bool = True) -> str:
    """"TP" or "FP" for one record; both boxes must be present."""
    if not record.has_boxes:
        raise ValueError(f"record {record.question_id} is missing a box")
    score = iou(record.predicted_bbox, record.gold_bbox)
    above = score > threshold if strict_greater else score >= threshold
    return "TP" if (record.answer_correct and above) else "FP"


def precision_recall(
    records: Sequence[EvalRecord], threshold: float, strict_greater: bool = True
) -> Tuple[float, float]:
    """Precision TP/(TP+FP) and recall TP/|evaluated| at one threshold."""
    boxed = [r for r in records if r.has_boxes]
    tp = sum(classify(r, threshold, strict_greater) == "TP" for r in boxed)
    fp = len(boxed) - tp
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / len(boxed) if boxed else 0.0
    return precision, recall


def _op_names(trace: SoTTrace) -> List[str]:
    return [" ".join(s.rendered_op.split("(", 1)[0].split()) for s in trace.steps]


def op_accuracy(pred: SoTTrace, gold: SoTTrace) -> float:
    """Positional agreement of operation names, arguments ignored.

    Unmatched tail positions count as wrong: the denominator is the longer
    trace, penalizing omissions and hallucinated steps alike.
    """
    pred_ops, gold_ops = _op_names(pred), _op_names(gold)
    denom = max(len(pred_ops), len(gold_ops))
    if denom == 0:
        return 0.0
    hits = sum(p == g for p, g in zip(pred_ops, gold_ops))
    return hits / denom


def _ws(text: str) -> str:
    return " ".join(text.split())


def consistency_bucket(pred: SoTTrace, gold: SoTTrace) -> str:
    """TT/TF/FT/FF: sub-task sequence (ops with arguments) vs step values."""
    same_len = len(pred.steps) == len(gold.steps)
    ops_ok = same_len and all(
        _ws(p.rendered_op) == _ws(g.rendered_op) for p, g in zip(pred.steps, gold.steps)
    )
    values_ok = same_len and all(
        p.value == g.value for p, g in zip(pred.steps, gold.steps)
    )
    return ("T" if ops_ok else "F") + ("T" if values_ok else "F")


def consistency_buckets(records: Sequence[EvalRecord]) -> Dict[str, Dict[str, int]]:
    """Two 4-bucket tables, split by final-answer correctness."""
    tables = {
        "correct_answer": Counter({"TT": 0, "TF": 0, "FT": 0, "FF": 0}),
        "incorrect_answer": Counter({"TT": 0, "TF": 0, "FT": 0, "FF": 0}),
    }
    for rec in records:
        if rec.predicted_trace is None or rec.gold_trace is None:
            continue
        table = tables["correct_answer" if rec.answer_correct else "incorrect_answer"]
        table[consistency_bucket(rec.predicted_trace, rec.gold_trace)] += 1
    return {k: dict(v) for k, v in tables.items()}


@dataclass(frozen=True)
class MetricsReport:
    n_records: int
    n_box_scored: int
    n_missing_box: int
    n_trace_scored: int
    answer_accuracy: float
    mean_iou_correct: float
    thresholds: Dict[float, Dict[str, float]]
    op_accuracy: float
    consistency: Dict[str, Dict[str, int]]
    warnings: Tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "n_records": self.n_records,
            "n_box_scored": self.n_box_scored,
            "n_missing_box": self.n_missing_box,
            "n_trace_scored": self.n_trace_scored,
            "answer_accuracy": self.answer_accuracy,
            "mean_iou_correct": self.mean_iou_correct,
            "thresholds": {str(t): dict(v) for t, v in self.thresholds.items()},
            "op_accuracy": self.op_accuracy,
            "consistency": self.consistency,
            "warnings": list(self.warnings),
        }

    def render_table(self) -> str:
        lines = [
            f"records evaluated      {self.n_records}",
            f"box coverage           {self.n_box_scored} scored, {self.n_missing_box} missing a box",
            f"answer accuracy        {self.answer_accuracy:.4f}",
            f"mean IoU (correct)     {self.mean_iou_correct:.4f}",
        ]
        for t in sorted(self.thresholds):
            m = self.thresholds[t]
            lines.append(
                f"IoU>{t:<5g} precision {m['precision']:.4f}  recall {m['recall']:.4f}"
                f"  (TP {int(m['tp'])} / FP {int(m['fp'])})"
            )
        lines.append(f"op accuracy            {self.op_accuracy:.4f}")
        for split, counts in self.consistency.items():
            buckets = "  ".join(f"{k} {counts.get(k, 0)}" for k in ("TT", "TF", "FT", "FF"))
            lines.append(f"consistency [{split}] {buckets}")
        for w in self.warnings:
            lines.append(f"warning: {w}")
        return "\n".join(lines)


def evaluate(
    records: Sequence[EvalRecord],
    thresholds: Sequence[float] = (0.5, 0.75, 0.95),
    strict_greater: bool = True,
) -> MetricsReport:
    """Score a record set into one report."""
    warnings: List[str] = []
    boxed = [r for r in records if r.has_boxes]
    missing = len(records) - len(boxed)
    mean_iou, empty = _mean_iou_correct(records)
    if empty:
        warnings.append("mean_iou_correct has an empty denominator (no correct boxed records)")

    per_threshold: Dict[float, Dict[str, float]] = {}
    for t in thresholds:
        tp = sum(classify(r, t, strict_greater) == "TP" for r in boxed)
        fp = len(boxed) - tp
        if tp + fp == 0:
            warnings.append(f"no classifiable records at threshold {t}")
        per_threshold[t] = {
            "precision": tp / (tp + fp) if tp + fp else 0.0,
            "recall": tp / len(boxed) if boxed else 0.0,
            "tp": float(tp),
            "fp": float(fp),
        }

    traced = [r for r in records if r.predicted_trace is not None and r.gold_trace is not None]
    op_acc = (
        sum(op_accuracy(r.predicted_trace, r.gold_trace) for r in traced) / len(traced)
        if traced
        else 0.0
    )

    return MetricsReport(
        n_records=len(records),
        n_box_scored=len(boxed),
        n_missing_box=missing,
        n_trace_scored=len(traced),
        answer_accuracy=answer_accuracy(records),
        mean_iou_correct=mean_iou,
        thresholds=per_threshold,
        op_accuracy=op_acc,
        consistency=consistency_buckets(records),
        warnings=tuple(warnings),
    )


_BBOX_VALUES = re.compile(r"<bbox>\(([^)]*)\)")


def extract_grounding(trace: SoTTrace) -> Tuple[str, Optional[NormBBox]]:
    """Final answer plus the box it is grounded to, when extractable.

    The box comes from the terminal query-by-name step's inlined object
    argument; traces ending in any other operation have no grounded box.
    """
    final = trace.steps[-1]
    name = final.rendered_op.split("(", 1)[0].strip()
    if name != "query":
        return trace.final_answer, None
    m = _BBOX_VALUES.search(final.rendered_op)
    if m is None:
        return trace.final_answer, None
    parts = [p.strip() for p in m.group(1).split(",")]
    if len(parts) != 4:
        return trace.final_answer, None
    try:
        box = NormBBox(*(float(p) for p in parts))
    except ValueError:
        return trace.final_answer, None
    return trace.final_answer, box
