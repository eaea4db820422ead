import itertools
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lungkit.errors import Degenerate, IncompleteRuns, ShapeMismatch
from lungkit.evaluation import (
    ConfusionCounts,
    EventCounts,
    ModelMetrics,
    aggregate_report,
    event_f1,
    jaccard,
    match_events,
    segment_confusion,
    segment_f1,
)


def brute_confusion(pred, truth):
    tp = fp = tn = fn = 0
    for p, t in zip(pred, truth):
        if p and t:
            tp += 1
        elif p:
            fp += 1
        elif t:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp, fp, tn, fn)


def random_events(rng, n_max=6, span=40):
    """Sorted, disjoint integer-endpoint events; touching neighbours allowed."""
    cuts = np.sort(rng.choice(np.arange(span + 1), size=2 * rng.integers(0, n_max + 1), replace=False))
    out = []
    for s, e in cuts.reshape(-1, 2):
        out.append((float(s), float(e)))
    # sometimes make neighbours touch
    if len(out) > 1 and rng.random() < 0.5:
        k = rng.integers(0, len(out) - 1)
        out[k + 1] = (out[k][1], max(out[k + 1][1], out[k][1] + 1))
    return out


def brute_match(truth, pred):
    def ji(a, b):
        inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
        return inter / ((a[1] - a[0]) + (b[1] - b[0]) - inter)

    ok = {(i, j) for i, t in enumerate(truth) for j, p in enumerate(pred) if ji(t, p) >= 0.5}
    fn = sum(1 for i in range(len(truth)) if not any((i, j) in ok for j in range(len(pred))))
    fp = sum(1 for j in range(len(pred)) if not any((i, j) in ok for i in range(len(truth))))
    # largest set of mutually matched pairs with no event used twice
    best = 0
    edges = sorted(ok)
    for r in range(len(edges), 0, -1):
        for combo in itertools.combinations(edges, r):
            if len({i for i, _ in combo}) == r and len({j for _, j in combo}) == r:
                best = r
                break
        if best:
            break
    return best, fp, fn


def test_segment_confusion_examples():
    t = np.array([1, 1, 1, 1, 0, 0, 0, 0, 0, 0], bool)
    p = np.array([1, 1, 0, 0, 1, 1, 0, 0, 0, 0], bool)
    assert segment_confusion(p, t) == ConfusionCounts(tp=2, fp=2, tn=4, fn=2)
    c = segment_confusion(t, t)
    assert c.fp == c.fn == 0
    c = segment_confusion(~t, t)
    assert c.tp == c.tn == 0
    with pytest.raises(ShapeMismatch):
        segment_confusion(t[:5], t)


def test_segment_confusion_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(0, 120))
        density = rng.random()
        pred = rng.random(n) < density
        truth = rng.random(n) < rng.random()
        assert segment_confusion(pred, truth) == brute_confusion(pred, truth)


def test_jaccard_examples():
    assert jaccard((0, 1), (0, 1)) == 1.0
    assert jaccard((0, 1), (2, 3)) == 0.0
    assert jaccard((1, 2), (1.5, 3)) == 0.25
    with pytest.raises(Degenerate):
        jaccard((1, 1), (0, 2))


interval = st.tuples(st.integers(0, 50), st.integers(1, 20)).map(lambda t: (float(t[0]), float(t[0] + t[1])))


@given(interval, interval)
def test_jaccard_properties(a, b):
    j = jaccard(a, b)
    assert j == jaccard(b, a)
    assert (j == 1.0) == (a == b)
    assert (j == 0.0) == (min(a[1], b[1]) <= max(a[0], b[0]))


def test_worked_match_example():
    m = match_events([(0, 1), (2, 3)], [(0.1, 1), (5, 6)])
    assert [(tuple(t), tuple(p)) for t, p in m.tp_pairs] == [((0, 1), (0.1, 1))]
    assert m.fn_events == [(2, 3)] and m.fp_events == [(5, 6)]
    assert event_f1(m).f1 == 0.5
    assert jaccard((0, 1), (0.1, 1)) == pytest.approx(0.9)


def test_match_empty_and_identical():
    truth = [(0, 1), (2, 3)]
    m = match_events(truth, [])
    assert m.counts == EventCounts(tp=0, fp=0, fn=2, truth_matched=0, pred_matched=0)
    m = match_events(truth, truth)
    assert m.counts == EventCounts(tp=2, fp=0, fn=0, truth_matched=2, pred_matched=2)
    assert event_f1(EventCounts()).f1 == 0.0


def test_adjacent_truths_one_prediction():
    # the prediction covers two touching truth events, each at JI exactly 0.5
    m = match_events([(0, 1), (1, 2)], [(0, 2)])
    assert m.counts.truth_matched == 2 and m.counts.pred_matched == 1
    assert m.counts.tp == 1 and m.counts.fn == 0 and m.counts.fp == 0
    strict = match_events([(0, 1), (1, 2)], [(0, 2)], one_to_one=True)
    assert strict.counts.tp == 1 and strict.counts.fn == 1


def test_match_events_matches_exhaustive_enumeration():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        truth, pred = random_events(rng), random_events(rng)
        m = match_events(truth, pred)
        assert (m.counts.tp, m.counts.fp, m.counts.fn) == brute_match(truth, pred)
        assert m.counts.tp <= min(len(truth), len(pred))
        assert 0.0 <= event_f1(m).f1 <= 1.0


def test_translation_invariance():
    rng = np.random.default_rng(2)
    for _ in range(200):
        truth, pred = random_events(rng), random_events(rng)
        off = float(rng.integers(1, 30)) * 0.25
        a = match_events(truth, pred).counts
        b = match_events([(s + off, e + off) for s, e in truth], [(s + off, e + off) for s, e in pred]).counts
        assert a == b


def test_frame_multiple_boundaries_tolerant():
    hop = 0.016
    # JI exactly 1/2 in exact arithmetic, computed from float frame times
    t = (3 * hop, 7 * hop)
    p = (5 * hop, 7 * hop)
    assert match_events([t], [p]).counts.tp == 1


def test_segment_f1():
    assert segment_f1(ConfusionCounts(tp=8, fp=2, fn=2)) == 0.8
    assert ConfusionCounts().f1 == 0.0


def _metrics(f1_tp, n=15):
    return [ModelMetrics("I", r, f, ConfusionCounts(tp=f1_tp, fp=0, fn=0), EventCounts(tp=1)) for r in range(3) for f in range(5)][:n]


def test_aggregate_identical():
    rep = aggregate_report(_metrics(5))
    assert rep.mean["segment"]["f1"] == 1.0
    assert len(rep.per_model) == 15


def test_aggregate_mean_arithmetic():
    ms = []
    for k in range(15):
        if k < 14:
            seg = ConfusionCounts(tp=4, fp=1, fn=1)  # F1 0.8
        else:
            seg = ConfusionCounts(tp=1, fp=1, fn=1)  # F1 0.5
        ms.append(ModelMetrics("I", k // 5, k % 5, seg, EventCounts()))
    assert aggregate_report(ms).mean["segment"]["f1"] == pytest.approx(0.78, abs=1e-12)


def test_aggregate_incomplete():
    with pytest.raises(IncompleteRuns):
        aggregate_report(_metrics(3, n=14))


def test_report_serialization_stable():
    rep = aggregate_report(_metrics(3), settings={"threshold": 0.5})
    a = rep.to_json()
    assert a == aggregate_report(_metrics(3), settings={"threshold": 0.5}).to_json()
    data = json.loads(a)
    assert data["settings"]["threshold"] == 0.5
    assert data["models"][0]["event_counts"]["truth_matched"] == 0
    lines = rep.to_csv().splitlines()
    assert lines[0] == "task,scope,metric,fold,repeat,value"
    assert len(lines) == 1 + 15 * 6 + 6
