import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn import metrics as skm

import oracles
from sclc import metrics as M


def labels(k, n):
    return st.lists(st.integers(0, k - 1), min_size=n, max_size=n)


class TestConfusion:
    def test_perfect(self):
        np.testing.assert_array_equal(M.confusion_matrix([0, 1, 2, 2], [0, 1, 2, 2], 3), np.diag([1, 1, 2]))

    def test_single_column(self):
        cm = M.confusion_matrix([0, 1, 2, 1], [0, 0, 0, 0], 3)
        assert cm[:, 1:].sum() == 0
        np.testing.assert_array_equal(cm[:, 0], [1, 2, 1])

    def test_out_of_range(self):
        with pytest.raises(ValueError, match="outside"):
            M.confusion_matrix([0, 3], [0, 0], 3)
        with pytest.raises(ValueError, match="predicted"):
            M.confusion_matrix([0, 1], [0, -1], 3)

    @settings(max_examples=50)
    @given(st.data())
    def test_against_sklearn(self, data):
        k = data.draw(st.integers(1, 6))
        n = data.draw(st.integers(1, 40))
        t, p = data.draw(labels(k, n)), data.draw(labels(k, n))
        np.testing.assert_array_equal(M.confusion_matrix(t, p, k), skm.confusion_matrix(t, p, labels=range(k)))


class TestReport:
    @settings(max_examples=60)
    @given(st.data())
    def test_against_bruteforce(self, data):
        k = data.draw(st.integers(2, 6))
        n = data.draw(st.integers(1, 40))
        t, p = data.draw(labels(k, n)), data.draw(labels(k, n))
        r = M.report(M.confusion_matrix(t, p, k))
        ref = np.array(oracles.report_bruteforce(t, p, k))
        np.testing.assert_allclose(np.stack([r.precision, r.recall, r.f1, r.support], 1), ref, atol=1e-15)
        np.testing.assert_allclose(r.macro(), ref[:, :3].mean(axis=0), atol=1e-15)
        w = ref[:, 3] / ref[:, 3].sum()
        np.testing.assert_allclose(r.weighted(), (ref[:, :3] * w[:, None]).sum(axis=0), atol=1e-15)
        assert r.accuracy == pytest.approx(np.mean(np.array(t) == np.array(p)))

    @settings(max_examples=40)
    @given(st.data())
    def test_against_sklearn(self, data):
        k = data.draw(st.integers(2, 5))
        n = data.draw(st.integers(1, 30))
        t, p = data.draw(labels(k, n)), data.draw(labels(k, n))
        r = M.report(M.confusion_matrix(t, p, k))
        prf = skm.precision_recall_fscore_support(t, p, labels=range(k), zero_division=0)
        for mine, ref in zip((r.precision, r.recall, r.f1, r.support), prf):
            np.testing.assert_allclose(mine, ref, atol=1e-12)
        for avg, mine in (("macro", r.macro()), ("weighted", r.weighted())):
            ref = skm.precision_recall_fscore_support(t, p, labels=range(k), average=avg, zero_division=0)
            np.testing.assert_allclose(mine, ref[:3], atol=1e-12)

    def test_zero_division_row(self):
        # class 2 never appears and is never predicted
        r = M.report(M.confusion_matrix([0, 1, 1], [0, 1, 0], 3), ["a", "b", "ileum"])
        assert (r.precision[2], r.recall[2], r.f1[2], r.support[2]) == (0, 0, 0, 0)

    def test_ileum_line_format(self):
        r = M.report(M.confusion_matrix([0, 1, 1], [0, 1, 0], 3), ["a", "b", "ileum"])
        line = [x for x in r.to_text().splitlines() if x.startswith("ileum")][0]
        assert line.split() == ["ileum", "0.00", "0.00", "0.00", "0"]

    def test_table_spot_check(self):
        assert f"{M.f1_score(0.99, 1.00):.2f}" == "0.99"
        assert f"{M.f1_score(0.0, 0.0):.2f}" == "0.00"
        assert M.f1_score(0.5, 0.5) == 0.5

    def test_p99_r100_through_report(self):
        # 99 of 100 predictions for class 0 are right; every class-0 sample found
        t = [0] * 99 + [1] * 101
        p = [0] * 99 + [0] + [1] * 100
        r = M.report(M.confusion_matrix(t, p, 2))
        assert (round(r.precision[0], 2), round(r.recall[0], 2), round(r.f1[0], 2)) == (0.99, 1.0, 0.99)

    def test_duplicate_samples_invariant(self):
        t, p = [0, 1, 2, 2, 1], [0, 2, 2, 1, 1]
        a = M.report(M.confusion_matrix(t, p, 3))
        b = M.report(M.confusion_matrix(t * 2, p * 2, 3))
        for x, y in ((a.precision, b.precision), (a.recall, b.recall), (a.f1, b.f1)):
            np.testing.assert_array_equal(x, y)
        np.testing.assert_array_equal(b.support, 2 * a.support)

    def test_csv_and_rows(self):
        r = M.report(np.array([[3, 1], [0, 4]]), ["x", "y"])
        rows = list(r.rows())
        assert [row[0] for row in rows] == ["x", "y", "macro avg", "weighted avg"]
        csv = r.to_csv().splitlines()
        assert csv[0] == "class,precision,recall,f1,support"
        assert csv[1] == "x,1.000000,0.750000,0.857143,4"
        assert csv[-1].startswith("accuracy,,,0.875000,8")

    def test_side_by_side(self):
        a = M.report(np.array([[3, 1], [0, 4]]), ["x", "y"])
        b = M.report(np.array([[4, 0], [0, 4]]), ["x", "y"])
        text = M.side_by_side(a, b)
        assert "without cost-sensitive" in text and "with cost-sensitive" in text
        x = [line for line in text.splitlines() if line.startswith("x ")][0].split()
        assert x == ["x", "1.00", "0.75", "0.86", "1.00", "1.00", "1.00"]

    def test_non_square(self):
        with pytest.raises(ValueError):
            M.report(np.zeros((2, 3)))
