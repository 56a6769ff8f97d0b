import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oocgraph.detect import OocRecord
from oocgraph.errors import DegenerateInputError, ShapeError
from oocgraph.metrics import accuracy_report, auc, rank_auc, roc_area, roc_curve


def recs(scores, truth):
    return [OocRecord("s", i, float(s), bool(t)) for i, (s, t) in enumerate(zip(scores, truth))]


def brute_force_auc(records):
    pos = [r.score for r in records if r.truth]
    neg = [r.score for r in records if not r.truth]
    wins = 0.0
    for p in pos:
        for n in neg:
            wins += 1.0 if p > n else 0.5 if p == n else 0.0
    return wins / (len(pos) * len(neg))


def test_perfect_separation():
    r = recs([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0])
    assert auc(r) == 1.0
    pts = roc_curve(r)
    assert any(p.false_positive_rate == 0.0 and p.true_positive_rate == 1.0 for p in pts)


def test_all_ties():
    r = recs([0.5] * 6, [1, 0, 1, 0, 0, 1])
    assert auc(r) == 0.5
    pts = roc_curve(r)
    assert [(p.false_positive_rate, p.true_positive_rate) for p in pts] == [(0.0, 0.0), (1.0, 1.0)]


def test_degenerate_input():
    with pytest.raises(DegenerateInputError):
        auc(recs([0.1, 0.2], [1, 1]))
    with pytest.raises(DegenerateInputError):
        roc_curve(recs([0.1, 0.2], [0, 0]))


def test_random_records_match_pairwise_enumeration():
    rng = np.random.default_rng(7)
    scores = rng.random(20)
    truth = np.array([1] * 8 + [0] * 12)
    r = recs(scores, truth)
    assert auc(r) == brute_force_auc(r)
    assert abs(roc_area(roc_curve(r)) - auc(r)) < 1e-12


def test_roc_points_monotone():
    rng = np.random.default_rng(8)
    r = recs(rng.integers(0, 5, 40), rng.integers(0, 2, 40))
    pts = roc_curve(r)
    assert (pts[0].false_positive_rate, pts[0].true_positive_rate) == (0.0, 0.0)
    assert (pts[-1].false_positive_rate, pts[-1].true_positive_rate) == (1.0, 1.0)
    for a, b in zip(pts, pts[1:]):
        assert b.threshold < a.threshold
        assert b.false_positive_rate >= a.false_positive_rate and b.true_positive_rate >= a.true_positive_rate
    assert len(pts) == len(set(x.score for x in r)) + 1


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(-80, 80), st.booleans()), min_size=2, max_size=40).filter(
    lambda v: 0 < sum(t for _, t in v) < len(v)))
def test_monotone_transform_invariance(pairs):
    # Grid spacing 1/16 keeps exp injective in float64, so order is preserved exactly.
    s = np.array([p[0] / 16 for p in pairs])
    t = np.array([p[1] for p in pairs])
    base = rank_auc(s, t)
    assert rank_auc(np.exp(s), t) == base
    assert rank_auc(s * 2 + 1, t) == base


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1, allow_nan=False), min_size=2, max_size=40, unique=True), st.data())
def test_flipping_truth_complements_auc(scores, data):
    n = len(scores)
    truth = data.draw(st.lists(st.booleans(), min_size=n, max_size=n).filter(lambda v: 0 < sum(v) < n))
    a = auc(recs(scores, truth))
    b = auc(recs(scores, [not t for t in truth]))
    assert a + b == pytest.approx(1.0, abs=1e-15)


def test_accuracy_examples():
    rep = accuracy_report([1, 2, 3], [1, 2, 3], [False] * 3)
    assert rep.ooc_accuracy is None and rep.non_ooc_accuracy == 1.0 and rep.overall_accuracy == 1.0
    rep = accuracy_report([0, 0, 0], [1, 2, 3], [True, False, False])
    assert (rep.ooc_accuracy, rep.non_ooc_accuracy, rep.overall_accuracy) == (0.0, 0.0, 0.0)
    with pytest.raises(ShapeError):
        accuracy_report([1, 2], [1], [True, False])


def test_accuracy_hand_count():
    # 4 OOC nodes (1 correct), 6 in-context nodes (5 correct)
    pred = [0, 1, 2, 3, 4, 5, 6, 7, 8, 0]
    true = [0, 9, 9, 9, 4, 5, 6, 7, 8, 9]
    flags = [True] * 4 + [False] * 6
    rep = accuracy_report(pred, true, flags)
    assert rep.ooc_accuracy == 1 / 4
    assert rep.non_ooc_accuracy == 5 / 6
    assert rep.overall_accuracy == 6 / 10
    assert (rep.ooc_count, rep.non_ooc_count) == (4, 6)
