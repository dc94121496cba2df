import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairmatch import metrics
from fairmatch.metrics import ConfusionMatrix, MetricVector
from oracles import naive_group_fairness


def test_confusion_examples():
    assert metrics.confusion([1, 0], [1, 0]) == ConfusionMatrix(tp=1, fp=0, tn=1, fn=0)
    assert metrics.confusion([1, 0], [0, 1]) == ConfusionMatrix(tp=0, fp=1, tn=0, fn=1)
    assert metrics.confusion([1, 1, 0, 0], [1, 0, 1, 0]) == ConfusionMatrix(tp=1, fp=1, tn=1, fn=1)
    with pytest.raises(ValueError):
        metrics.confusion([1, 0], [1])


def test_performance_examples():
    assert metrics.performance_metrics(ConfusionMatrix(2, 0, 2, 0)) == (100.0, 100.0, 100.0, 100.0)
    assert metrics.performance_metrics(ConfusionMatrix(1, 1, 1, 1)) == (50.0, 50.0, 50.0, 50.0)
    acc, prec, rec, f1 = metrics.performance_metrics(ConfusionMatrix(tp=3, fp=1, tn=5, fn=1))
    assert (acc, prec, rec) == (80.0, 75.0, 75.0)
    assert f1 == pytest.approx(75.0)


def test_undefined_precision_and_recall():
    acc, prec, rec, f1 = metrics.performance_metrics(ConfusionMatrix(tp=0, fp=0, tn=3, fn=1))
    assert prec is None and f1 is None and rec == 0.0
    _, prec, rec, f1 = metrics.performance_metrics(ConfusionMatrix(tp=0, fp=2, tn=0, fn=0))
    assert rec is None and f1 is None and prec == 0.0


def test_group_fairness_examples():
    y = [1, 0, 1, 0, 1, 0, 1, 0]
    pa = [1, 1, 0, 0, 1, 1, 0, 0]
    (aod, eod, spd, di), _ = metrics.group_fairness(y, y, pa)
    assert (aod, eod, spd, di) == (0.0, 0.0, 0.0, 0.0)

    # fav_rate_u = 0.4, fav_rate_p = 0.5
    pa = [0] * 5 + [1] * 4
    yhat = [1, 1, 0, 0, 0] + [1, 1, 0, 0]
    (_, _, spd, di), rates = metrics.group_fairness([1] * 9, yhat, pa)
    assert (rates.fav_rate_u, rates.fav_rate_p) == (0.4, 0.5)
    assert spd == pytest.approx(10.0) and di == pytest.approx(20.0)

    # 8 rows: TPR_U = 1, TPR_P = 0.5, FPR_U = FPR_P = 0
    y = [1, 1, 0, 0, 1, 1, 0, 0]
    yhat = [1, 1, 0, 0, 1, 0, 0, 0]
    pa = [0, 0, 0, 0, 1, 1, 1, 1]
    (aod, eod, _, _), r = metrics.group_fairness(y, yhat, pa)
    assert (r.tpr_u, r.tpr_p, r.fpr_u, r.fpr_p) == (1.0, 0.5, 0.0, 0.0)
    assert eod == pytest.approx(50.0) and aod == pytest.approx(25.0)


def test_empty_group_raises():
    with pytest.raises(metrics.DegenerateGroupError):
        metrics.group_fairness([1, 0], [1, 0], [1, 1])


def test_di_undefined_when_privileged_never_favoured():
    (_, _, spd, di), _ = metrics.group_fairness([1, 0, 1, 0], [1, 0, 0, 0], [0, 0, 1, 1])
    assert di is None and spd == 50.0


def _close(a, b):
    return (a is None and b is None) or (a is not None and b is not None and abs(a - b) < 1e-9)


def test_fairness_matches_naive_exhaustively():
    # every (y, yhat, pa) assignment on up to 5 rows, plus random instances up to 12 rows below
    for n in range(2, 6):
        for y in itertools.product((0, 1), repeat=n):
            for pa in itertools.product((0, 1), repeat=n):
                if len(set(pa)) < 2:
                    continue
                for yhat in itertools.product((0, 1), repeat=n):
                    got, _ = metrics.group_fairness(y, yhat, pa)
                    want = naive_group_fairness(y, yhat, pa)
                    assert all(_close(g, w) for g, w in zip(got, want)), (y, yhat, pa)


@settings(max_examples=300, deadline=None)
@given(st.integers(2, 12).flatmap(lambda n: st.tuples(*[st.tuples(st.integers(0, 1), st.integers(0, 1), st.integers(0, 1))] * n)))
def test_fairness_matches_naive_random(rows):
    y, yhat, pa = (list(c) for c in zip(*rows))
    if len(set(pa)) < 2:
        return
    got, _ = metrics.group_fairness(y, yhat, pa)
    assert all(_close(g, w) for g, w in zip(got, naive_group_fairness(y, yhat, pa)))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1), st.integers(0, 1)), min_size=2, max_size=30))
def test_swapping_groups_keeps_absolute_gaps(rows):
    y, yhat, pa = (np.array(c) for c in zip(*rows))
    if len(set(pa.tolist())) < 2:
        return
    (aod, eod, spd, _), _ = metrics.group_fairness(y, yhat, pa)
    (aod2, eod2, spd2, _), _ = metrics.group_fairness(y, yhat, 1 - pa)
    assert _close(aod, aod2) and _close(eod, eod2) and _close(spd, spd2)
    cm = metrics.confusion(y, yhat)
    assert cm.tp + cm.fn == int(y.sum())


def test_gd_examples():
    assert metrics.generational_distance(MetricVector([100, 0], [100, 0])) == 0.0
    assert metrics.generational_distance(MetricVector([90], [100])) == 10.0
    assert metrics.generational_distance(MetricVector([80, 20], [100, 0])) == 20.0
    with pytest.raises(ValueError):
        metrics.generational_distance(MetricVector([1, 2], [1]))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=8), st.randoms())
def test_gd_properties(values, rnd):
    optimal = [100.0 if i % 2 else 0.0 for i in range(len(values))]
    gd = metrics.generational_distance(MetricVector(values, optimal))
    assert gd >= 0
    assert metrics.generational_distance(MetricVector(values, values)) == 0.0
    order = list(range(len(values)))
    rnd.shuffle(order)
    permuted = metrics.generational_distance(MetricVector([values[i] for i in order], [optimal[i] for i in order]))
    assert permuted == pytest.approx(gd, abs=1e-9)


def test_report_gd_skips_undefined_and_rounds():
    rep = metrics.MetricReport(80, None, 60, None, 10, 20, 30, None, n=5)
    assert rep.undefined == ("precision", "f1", "di")
    assert rep.gd() == pytest.approx((20 + 40 + 10 + 20 + 30) / 5)
    assert metrics.round_half_away(2.5) == 3 and metrics.round_half_away(-2.5) == -3
    assert metrics.round_half_away(0.49) == 0
    assert rep.csv_row()[1] == ""
    assert metrics.MetricReport.from_dict(rep.to_dict()) == rep
