from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentgraph.metrics import average_precision, macro_f1, map_over_criteria, video_macro_f1


def ap_sweep(scores, labels):
    """Step-wise precision/recall sweep: sum of precision times recall increment over the ranked list."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    n_pos = sum(labels)
    tp = 0
    ap = 0.0
    for rank, i in enumerate(order, start=1):
        if labels[i]:
            tp += 1
            ap += (tp / rank) * (1 / n_pos)
    return ap


class TestAveragePrecision:
    def test_worked_example(self):
        # positives at ranks 1 and 3: (1/1 + 2/3) / 2 = 5/6
        assert average_precision([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx(float(Fraction(5, 6)), abs=1e-15)

    def test_perfect_and_no_positives(self):
        assert average_precision([3, 2, 1], [1, 1, 0]) == 1.0
        assert average_precision([0.1, 0.9, 0.3], [1, 1, 1]) == 1.0
        assert np.isnan(average_precision([3, 2, 1], [0, 0, 0]))

    def test_stable_ties(self):
        # equal scores keep input order, so the positive listed first ranks first
        assert average_precision([0.5, 0.5], [1, 0]) == 1.0
        assert average_precision([0.5, 0.5], [0, 1]) == 0.5

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            average_precision([1, 2], [1])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.floats(-5, 5, allow_nan=False), st.booleans()), min_size=1, max_size=40))
    def test_matches_sweep(self, pairs):
        scores = [p[0] for p in pairs]
        labels = [int(p[1]) for p in pairs]
        if not any(labels):
            return
        assert abs(average_precision(scores, labels) - ap_sweep(scores, labels)) < 1e-9


class TestMap:
    def test_mean_of_columns(self):
        scores = np.array([[0.9, 0.9, 0.9], [0.8, 0.8, 0.8], [0.7, 0.7, 0.7]])
        labels = np.array([[1, 0, 1], [0, 0, 0], [0, 1, 1]])
        rep = map_over_criteria(scores, labels)
        assert rep.per_criterion == [1.0, pytest.approx(1 / 3), pytest.approx(5 / 6)]
        assert map_over_criteria(scores[:, :1], labels[:, :1]).mean == 1.0

    def test_columns_match_sweep(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n, k = int(rng.integers(2, 30)), 3
            scores = rng.normal(size=(n, k))
            labels = (rng.random((n, k)) < 0.4).astype(int)
            labels[0] = 1
            rep = map_over_criteria(scores, labels)
            for j in range(k):
                assert abs(rep.per_criterion[j] - ap_sweep(scores[:, j].tolist(), labels[:, j].tolist())) < 1e-9
            assert rep.mean == pytest.approx(np.mean(rep.per_criterion), abs=1e-12)

    def test_skips_empty_column(self, caplog):
        scores = np.array([[0.9, 0.1], [0.2, 0.3]])
        labels = np.array([[1, 0], [0, 0]])
        rep = map_over_criteria(scores, labels)
        assert rep.mean == 1.0 and np.isnan(rep.per_criterion[1])
        assert "no positive" in caplog.text

    def test_all_empty(self):
        with pytest.raises(ValueError):
            map_over_criteria(np.zeros((2, 2)), np.zeros((2, 2)))


class TestMacroF1:
    def test_worked_example(self):
        # always class 0 on a half/half video: F1_0 = 2/3, F1_1 = 0
        assert macro_f1([0, 0, 0, 0], [0, 0, 1, 1]) == float(Fraction(1, 3))

    def test_mixed_errors(self):
        # class 0: P=1/2 R=1 F=2/3; class 1: F=0; class 2: P=1 R=1 F=1
        assert macro_f1([0, 0, 2], [0, 1, 2]) == pytest.approx((2 / 3 + 0 + 1) / 3)

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(3)
        pred, true = rng.integers(0, 4, 50), rng.integers(0, 4, 50)
        perm = np.array([2, 0, 3, 1])
        assert macro_f1(perm[pred], perm[true]) == pytest.approx(macro_f1(pred, true), abs=1e-12)

    def test_only_present_classes(self):
        # class 5 is predicted but absent from the truth: it does not enter the average
        assert macro_f1([0, 0, 5], [0, 0, 0]) == pytest.approx(0.8)

    def test_perfect(self):
        assert macro_f1([1, 2, 3], [1, 2, 3]) == 1.0

    def test_video_average(self):
        # second video: F1_1 = 2 * (1 * 1/2) / (3/2) = 2/3
        rep = video_macro_f1([[0, 0], [1, 0]], [[0, 0], [1, 1]])
        assert rep.per_video == [1.0, pytest.approx(2 / 3)]
        assert rep.mean == pytest.approx(5 / 6)
        assert rep.per_class == {0: 1.0, 1: pytest.approx(2 / 3)}

    def test_video_length_mismatch(self):
        with pytest.raises(ValueError):
            video_macro_f1([[0]], [[0], [1]])
