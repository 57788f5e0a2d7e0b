import random

import pytest
from hypothesis import given, strategies as st

from sotkit.interpreter import SoTTrace, Step, AttributeV, BooleanV
from sotkit.llm_gen import generate_offline
from sotkit.metrics import (
    EvalRecord,
    answer_accuracy,
    classify,
    consistency_bucket,
    consistency_buckets,
    evaluate,
    extract_grounding,
    iou,
    mean_iou_correct,
    op_accuracy,
    precision_recall,
)
from sotkit.scene_graph import NormBBox
from sotkit.sot import parse, serialize


def grid_iou(a, b, grid=64):
    """Pixel-counting oracle over integer-scaled boxes on a small grid."""

    def cells(box):
        return {
            (x, y)
            for x in range(round(box.x_l * grid), round(box.x_r * grid))
            for y in range(round(box.y_l * grid), round(box.y_r * grid))
        }

    ca, cb = cells(a), cells(b)
    union = len(ca | cb)
    if union == 0:
        return 0.0
    return len(ca & cb) / union


def int_box(rng, grid=64):
    xs = sorted(rng.randint(0, grid) for _ in range(2))
    ys = sorted(rng.randint(0, grid) for _ in range(2))
    return NormBBox(xs[0] / grid, ys[0] / grid, xs[1] / grid, ys[1] / grid)


unit = st.integers(0, 100).map(lambda v: v / 100)


def _norm_box(x1, y1, x2, y2):
    return NormBBox(min(x1, x2), min(y1, y2), max(x1, x2), max(y1, y2))


boxes = st.builds(_norm_box, unit, unit, unit, unit)


class TestIoU:
    def test_identical(self):
        b = NormBBox(0.1, 0.1, 0.5, 0.5)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(NormBBox(0, 0, 0.2, 0.2), NormBBox(0.5, 0.5, 0.9, 0.9)) == 0.0

    def test_one_seventh(self):
        # same overlap geometry as (0,0,2,2) vs (1,1,3,3), scaled into the unit square
        a = NormBBox(0.0, 0.0, 0.2, 0.2)
        b = NormBBox(0.1, 0.1, 0.3, 0.3)
        assert iou(a, b) == pytest.approx(1 / 7, abs=1e-12)
        assert grid_iou(NormBBox(0, 0, 2 / 64, 2 / 64), NormBBox(1 / 64, 1 / 64, 3 / 64, 3 / 64)) == pytest.approx(1 / 7)

    def test_zero_area_union(self):
        z = NormBBox(0.3, 0.3, 0.3, 0.3)
        assert iou(z, z) == 0.0

    @given(boxes, boxes)
    def test_symmetry_and_bounds(self, a, b):
        assert iou(a, b) == iou(b, a)
        assert 0.0 <= iou(a, b) <= 1.0

    def test_matches_grid_oracle(self):
        rng = random.Random(424242)
        for _ in range(500):
            a, b = int_box(rng), int_box(rng)
            assert abs(iou(a, b) - grid_iou(a, b)) < 1e-6


def _rec(qid, correct, score_box=None, gold_box=NormBBox(0, 0, 0.5, 0.2)):
    return EvalRecord(
        question_id=qid,
        predicted_answer="couch" if correct else "sofa",
        gold_answer="couch",
        predicted_bbox=score_box,
        gold_bbox=gold_box if score_box is not None else None,
    )


# predicted boxes engineered against gold (0, 0, 0.5, 0.2): IoU 0.8, 0.6, 0.9
BOX_08 = NormBBox(0.1, 0.0, 0.5, 0.2)
BOX_06 = NormBBox(0.2, 0.0, 0.5, 0.2)
GOLD_W = NormBBox(0.0, 0.0, 1.0, 0.5)
BOX_09 = NormBBox(0.1, 0.0, 1.0, 0.5)


class TestMeanIoU:
    def test_worked_example(self):
        records = [
            _rec("a", True, BOX_08),
            _rec("b", True, BOX_06),
            _rec("c", False, BOX_09, gold_box=GOLD_W),
        ]
        assert iou(BOX_08, records[0].gold_bbox) == pytest.approx(0.8)
        assert iou(BOX_06, records[1].gold_bbox) == pytest.approx(0.6)
        assert iou(BOX_09, records[2].gold_bbox) == pytest.approx(0.9)
        assert mean_iou_correct(records) == pytest.approx(0.7)

    def test_all_incorrect_warns(self):
        records = [_rec("a", False, BOX_08)]
        assert mean_iou_correct(records) == 0.0
        report = evaluate(records)
        assert any("empty denominator" in w for w in report.warnings)

    def test_singleton(self):
        gold = NormBBox(0, 0, 0.5, 0.2)
        assert mean_iou_correct([_rec("a", True, gold)]) == 1.0


class TestClassify:
    def test_tp(self):
        assert classify(_rec("a", True, BOX_08), 0.5) == "TP"

    def test_fp_correct_below(self):
        assert classify(_rec("a", True, BOX_06), 0.7) == "FP"

    def test_fp_incorrect_above(self):
        assert classify(_rec("a", False, BOX_09, gold_box=GOLD_W), 0.5) == "FP"

    def test_strictly_exceeds(self):
        rec = _rec("a", True, BOX_06)
        assert classify(rec, 0.6) == "FP"  # equal is not "exceeds"
        assert classify(rec, 0.6, strict_greater=False) == "TP"

    def test_missing_box_raises(self):
        with pytest.raises(ValueError):
            classify(_rec("a", True, None), 0.5)


class TestPrecisionRecall:
    def test_worked_example_thirds(self):
        records = [
            _rec("a", True, BOX_06),
            _rec("b", True, NormBBox(0.35, 0.0, 0.5, 0.2)),  # IoU 0.3
            _rec("c", False, BOX_09, gold_box=GOLD_W),
        ]
        precision, recall = precision_recall(records, 0.5)
        assert precision == 1 / 3
        assert recall == 1 / 3

    def test_all_tp(self):
        gold = NormBBox(0, 0, 0.5, 0.2)
        records = [_rec(str(i), True, gold) for i in range(4)]
        assert precision_recall(records, 0.5) == (1.0, 1.0)

    def test_nothing_above(self):
        records = [_rec("a", False, NormBBox(0.45, 0.15, 0.5, 0.2))]
        assert precision_recall(records, 0.95) == (0.0, 0.0)

    def test_threshold_monotonicity(self):
        rng = random.Random(7)
        records = [
            _rec(str(i), rng.random() < 0.5, int_box(rng), gold_box=int_box(rng))
            for i in range(200)
        ]
        thresholds = (0.5, 0.75, 0.95)
        report = evaluate(records, thresholds)
        tps = [report.thresholds[t]["tp"] for t in thresholds]
        recalls = [report.thresholds[t]["recall"] for t in thresholds]
        assert tps == sorted(tps, reverse=True)
        assert recalls == sorted(recalls, reverse=True)
        # precision and recall share the TP numerator at each threshold
        for t in thresholds:
            m = report.thresholds[t]
            if m["tp"] + m["fp"]:
                assert m["precision"] * (m["tp"] + m["fp"]) == pytest.approx(m["tp"])


class TestAnswerAccuracy:
    def test_normalization(self):
        records = [
            EvalRecord("a", "Couch ", "couch"),
            EvalRecord("b", "sofa", "couch"),
            EvalRecord("c", "", "couch"),
        ]
        assert answer_accuracy(records) == pytest.approx(1 / 3)


def _trace(op_names):
    steps = tuple(Step(f"{name}(x)", AttributeV("v")) for name in op_names)
    return SoTTrace(steps, "v")


class TestOpAccuracy:
    def test_identical(self):
        t = _trace(["select", "relate", "query"])
        assert op_accuracy(t, t) == 1.0

    def test_arguments_ignored(self):
        a = SoTTrace((Step("select(dog)", AttributeV("x")),), "x")
        b = SoTTrace((Step("select(cat)", AttributeV("y")),), "y")
        assert op_accuracy(a, b) == 1.0

    def test_length_mismatch_penalized(self):
        gold = _trace(["select", "relate", "query"])
        pred = _trace(["select", "query"])
        assert op_accuracy(pred, gold) == pytest.approx(1 / 3)


class TestConsistency:
    def test_buckets(self, mini_graphs, mini_questions):
        q = mini_questions[0]
        sg = mini_graphs[q.image_id]
        gold = generate_offline(q, sg)
        assert consistency_bucket(gold, gold) == "TT"

        flipped_value = SoTTrace(
            gold.steps[:-1] + (Step(gold.steps[-1].rendered_op, BooleanV(False)),),
            "no",
        )
        assert consistency_bucket(flipped_value, gold) == "TF"

        renamed_op = SoTTrace(
            (Step("filter color(x, red)", gold.steps[0].value),) + gold.steps[1:],
            gold.final_answer,
        )
        assert consistency_bucket(renamed_op, gold) == "FT"

    def test_counts_sum_to_scored_records(self):
        t = _trace(["select"])
        records = [
            EvalRecord("a", "v", "v", predicted_trace=t, gold_trace=t),
            EvalRecord("b", "x", "v", predicted_trace=t, gold_trace=t),
            EvalRecord("c", "v", "v"),  # no traces: not scored
        ]
        tables = consistency_buckets(records)
        assert sum(tables["correct_answer"].values()) == 1
        assert sum(tables["incorrect_answer"].values()) == 1


class TestExtractGrounding:
    def test_terminal_query_box(self, garland_scene, by_id):
        trace = generate_offline(by_id["70310001"], garland_scene)
        answer, box = extract_grounding(trace)
        assert answer == "couch"
        assert box == NormBBox(0.12, 0.48, 0.71, 0.97)

    def test_non_query_terminal_has_no_box(self, picnic, by_id):
        trace = generate_offline(by_id["20167139"], picnic)
        answer, box = extract_grounding(trace)
        assert answer == "no"
        assert box is None

    def test_round_trips_through_codec(self, garland_scene, by_id):
        trace = generate_offline(by_id["70310001"], garland_scene)
        reparsed = parse(serialize(trace))
        assert extract_grounding(reparsed) == extract_grounding(trace)


class TestEvaluate:
    def test_report_shape_and_coverage(self):
        records = [
            _rec("a", True, BOX_08),
            _rec("b", True, None),
        ]
        report = evaluate(records)
        assert report.n_records == 2
        assert report.n_box_scored == 1
        assert report.n_missing_box == 1
        assert 0.0 <= report.answer_accuracy <= 1.0
        data = report.to_dict()
        assert set(data["thresholds"]) == {"0.5", "0.75", "0.95"}
        assert "records evaluated" in report.render_table()
