import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tadkd.metrics import (
    EvalConfig,
    average_precision,
    mean_average_precision,
    oracle_ap,
    tiou,
)
from tadkd.types import ActionInstance, AnnotationSet, Prediction


def pred(start, end, score, n_classes=1, label=0):
    scores = tuple(score if c == label else 0.0 for c in range(n_classes))
    return Prediction(start, end, scores, 0)


intervals = st.tuples(
    st.floats(0, 50, allow_nan=False), st.floats(0.1, 30, allow_nan=False)
).map(lambda p: (p[0], p[0] + p[1]))


class TestTiou:
    def test_partial_overlap(self):
        assert tiou((0, 2), (1, 3)) == pytest.approx(1 / 3, abs=1e-12)

    def test_identical(self):
        assert tiou((1.5, 4.0), (1.5, 4.0)) == 1.0

    def test_disjoint(self):
        assert tiou((0, 1), (2, 3)) == 0.0

    def test_invalid_interval_rejected(self):
        with pytest.raises(ValueError):
            tiou((2, 2), (0, 1))

    @given(intervals, intervals)
    def test_symmetry(self, a, b):
        assert tiou(a, b) == tiou(b, a)

    @given(intervals)
    def test_identity(self, a):
        assert tiou(a, a) == 1.0

    @given(intervals, intervals)
    def test_range(self, a, b):
        assert 0.0 <= tiou(a, b) <= 1.0

    def test_monotone_under_shrinking_gap(self):
        base = (0.0, 2.0)
        prev = -1.0
        for gap in (3.0, 2.0, 1.0, 0.5, 0.0):
            v = tiou(base, (2.0 + gap - 2.0, 4.0 + gap - 2.0))
            assert v >= prev
            prev = v


class TestAveragePrecision:
    def test_single_perfect_match(self):
        gts = [ActionInstance(0, 10, 0)]
        assert average_precision([pred(0.5, 10, 0.9)], gts, 0.5) == 1.0

    def test_high_scored_miss_then_hit(self):
        gts = [ActionInstance(0, 10, 0)]
        preds = [pred(20, 30, 0.9), pred(0, 10, 0.5)]
        assert average_precision(preds, gts, 0.5) == pytest.approx(0.5)

    def test_no_predictions(self):
        assert average_precision([], [ActionInstance(0, 1, 0)], 0.5) == 0.0

    def test_no_gts_with_predictions(self):
        assert average_precision([pred(0, 1, 0.9)], [], 0.5) == 0.0

    def test_both_empty(self):
        assert average_precision([], [], 0.5) == 1.0

    def test_each_gt_matched_once(self):
        gts = [ActionInstance(0, 10, 0)]
        preds = [pred(0, 10, 0.9), pred(0, 10, 0.8)]  # duplicate: second is FP
        ap = average_precision(preds, gts, 0.5)
        assert ap == 1.0  # envelope: recall 1 reached at precision 1

    def test_duplicate_never_increases_ap(self):
        gts = [ActionInstance(0, 10, 0), ActionInstance(20, 30, 0)]
        preds = [pred(0, 10, 0.9)]
        base = average_precision(preds, gts, 0.5)
        with_dup = average_precision(preds + [pred(0, 10, 0.85)], gts, 0.5)
        assert with_dup <= base

    @given(st.data())
    @settings(max_examples=30)
    def test_score_monotone_transform_invariance(self, data):
        n = data.draw(st.integers(1, 6))
        preds = [
            pred(s, e, data.draw(st.floats(0.01, 0.99)))
            for s, e in (data.draw(intervals) for _ in range(n))
        ]
        gts = [ActionInstance(s, e, 0) for s, e in (data.draw(intervals) for _ in range(3))]
        ap1 = average_precision(preds, gts, 0.5)
        squashed = [Prediction(p.start, p.end, (p.scores[0] ** 3,), 0) for p in preds]
        ap2 = average_precision(squashed, gts, 0.5)
        assert ap1 == pytest.approx(ap2, abs=1e-12)


class TestOracleAgreement:
    def test_oracle_both_empty(self):
        assert oracle_ap([], [], 0.5) == 1.0

    def test_oracle_unmatched_pred(self):
        assert oracle_ap([pred(20, 21, 0.9)], [ActionInstance(0, 1, 0)], 0.5) == 0.0

    def test_oracle_size_cap(self):
        preds = [pred(i, i + 1, 0.5) for i in range(9)]
        with pytest.raises(ValueError, match="oracle limited"):
            oracle_ap(preds, [], 0.5)

    @pytest.mark.parametrize("thresh", [0.3, 0.5, 0.7])
    def test_matches_production_ap_on_random_instances(self, thresh):
        import random

        rng = random.Random(1234 + int(thresh * 10))
        for _ in range(50):
            n_p = rng.randint(0, 8)
            n_g = rng.randint(0, 5)
            preds = []
            for _ in range(n_p):
                s = rng.uniform(0, 20)
                preds.append(pred(s, s + rng.uniform(0.5, 8), rng.random()))
            gts = []
            for _ in range(n_g):
                s = rng.uniform(0, 20)
                gts.append(ActionInstance(s, s + rng.uniform(0.5, 8), 0))
            assert average_precision(preds, gts, thresh) == oracle_ap(preds, gts, thresh)


class TestMeanAveragePrecision:
    def test_perfect_single_class(self):
        ann = AnnotationSet("v", 20.0, (ActionInstance(2, 8, 0),))
        preds = {"v": [pred(2, 8, 0.9, n_classes=2)]}
        out = mean_average_precision(preds, {"v": ann}, 2, EvalConfig((0.3, 0.5, 0.7)))
        assert out["avg"] == 1.0
        assert all(v == 1.0 for v in out["map_at_tiou"].values())

    def test_mixed_classes(self):
        ann = AnnotationSet("v", 40.0, (ActionInstance(2, 8, 0), ActionInstance(20, 28, 1)))
        preds = {"v": [pred(2, 8, 0.9, n_classes=2, label=0)]}  # class 1 undetected
        out = mean_average_precision(preds, {"v": ann}, 2, EvalConfig((0.5,)))
        assert out["map_at_tiou"]["0.5"] == pytest.approx(0.5)

    def test_absent_class_excluded(self):
        ann = AnnotationSet("v", 20.0, (ActionInstance(2, 8, 0),))
        preds = {"v": [pred(2, 8, 0.9, n_classes=3)]}
        out = mean_average_precision(preds, {"v": ann}, 3, EvalConfig((0.5,)))
        assert out["map_at_tiou"]["0.5"] == 1.0  # classes 1,2 have no gt anywhere

    def test_constant_map_averages_to_itself(self):
        ann = AnnotationSet("v", 20.0, (ActionInstance(2, 8, 0),))
        preds = {"v": [pred(2, 8, 0.9)]}
        out = mean_average_precision(preds, {"v": ann}, 1, EvalConfig((0.3, 0.4, 0.5, 0.6, 0.7)))
        assert out["avg"] == pytest.approx(1.0)

    def test_matching_is_per_video(self):
        # an exact-interval prediction in the wrong video must not match
        ann_a = AnnotationSet("a", 20.0, (ActionInstance(2, 8, 0),))
        ann_b = AnnotationSet("b", 20.0, ())
        preds = {"a": [], "b": [pred(2, 8, 0.9)]}
        out = mean_average_precision(preds, {"a": ann_a, "b": ann_b}, 1, EvalConfig((0.5,)))
        assert out["map_at_tiou"]["0.5"] == 0.0

    def test_map_within_unit_interval(self):
        ann = AnnotationSet("v", 20.0, (ActionInstance(2, 8, 0),))
        preds = {"v": [pred(1, 9, 0.9), pred(11, 19, 0.8)]}
        out = mean_average_precision(preds, {"v": ann}, 1, EvalConfig((0.3, 0.7)))
        assert 0.0 <= out["avg"] <= 1.0


class TestEvalConfig:
    def test_presets_accepted(self):
        EvalConfig((0.3, 0.4, 0.5, 0.6, 0.7))
        EvalConfig(tuple(round(0.5 + 0.05 * i, 2) for i in range(10)))

    def test_non_increasing_rejected(self):
        with pytest.raises(ValueError):
            EvalConfig((0.5, 0.5))

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            EvalConfig((0.0, 0.5))
